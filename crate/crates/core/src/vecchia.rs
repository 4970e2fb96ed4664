//! Vecchia factors and the Gaussian, latent and latent-free censored
//! log-likelihoods built from them.
//!
//! Position `i` of a factor holds the regression weights `b_i` of its
//! value on the values at `sets[i]` and the conditional variance `F_ii`,
//! so that `Q = Bᵀ F⁻¹ B = U Uᵀ` with `U` upper triangular.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::covariance::SvcKernel;
use crate::domain::{distance, Dataset, Site, SvcParams};
use crate::error::{Error, Result};
use crate::linalg;
use crate::normal;
use crate::ordering::NeighborSets;
use crate::par::{self, Exec};

/// Conditional variances of noise-free targets are floored at this
/// fraction of the marginal variance (coincident sites).
pub(crate) const LATENT_VAR_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct VecchiaFactor {
    sets: Arc<NeighborSets>,
    weights: Vec<Vec<f64>>,
    cond_var: Vec<f64>,
    max_solve: usize,
}

impl VecchiaFactor {
    pub fn n(&self) -> usize {
        self.cond_var.len()
    }

    pub fn neighbor_sets(&self) -> &NeighborSets {
        &self.sets
    }

    pub fn shared_sets(&self) -> Arc<NeighborSets> {
        Arc::clone(&self.sets)
    }

    /// Weights `b_i`, aligned with `neighbor_sets().sets[i]`.
    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[i]
    }

    /// Conditional variances `F_ii` in position order.
    pub fn cond_var(&self) -> &[f64] {
        &self.cond_var
    }

    /// Size of the largest linear system solved while building.
    pub fn max_solve(&self) -> usize {
        self.max_solve
    }

    /// Conditional mean at position `i` given `values` (by original index)
    /// and the prior `mean` (by original index).
    #[inline]
    pub fn conditional_mean(&self, i: usize, values: &[f64], mean: &[f64]) -> f64 {
        let perm = &self.sets.perm;
        let o = perm[i];
        let mut mu = mean[o];
        for (&j, &b) in self.sets.sets[i].iter().zip(&self.weights[i]) {
            let oj = perm[j];
            mu += b * (values[oj] - mean[oj]);
        }
        mu
    }
}

/// Scratch space for one local solve.
#[derive(Default)]
pub(crate) struct LocalSolver {
    mat: Vec<f64>,
    rhs: Vec<f64>,
}

impl LocalSolver {
    /// Solves for the conditional weights and variance of a target given
    /// `m` conditioning values. Returns `Err(())` when the neighbour
    /// covariance is singular.
    pub(crate) fn solve(
        &mut self,
        m: usize,
        cov_nn: impl Fn(usize, usize) -> f64,
        cov_nt: impl Fn(usize) -> f64,
        var_t: f64,
    ) -> std::result::Result<(Vec<f64>, f64), ()> {
        if m == 0 {
            return Ok((Vec::new(), var_t));
        }
        self.mat.clear();
        self.mat.resize(m * m, 0.0);
        for a in 0..m {
            for b in 0..=a {
                self.mat[a * m + b] = cov_nn(a, b);
            }
        }
        self.rhs.clear();
        self.rhs.extend((0..m).map(&cov_nt));
        linalg::cholesky_in_place(&mut self.mat, m).map_err(|_| ())?;
        linalg::solve_lower(&self.mat, m, &mut self.rhs);
        let explained: f64 = self.rhs.iter().map(|v| v * v).sum();
        let f = var_t - explained;
        let mut b = self.rhs.clone();
        linalg::solve_lower_transpose(&self.mat, m, &mut b);
        Ok((b, f))
    }
}

/// Builds the Vecchia factor of the SVC covariance (with the nugget on the
/// diagonal when `include_nugget`).
pub fn build_factor(
    sites: &[Site],
    design: &[f64],
    params: &SvcParams,
    sets: Arc<NeighborSets>,
    include_nugget: bool,
) -> Result<VecchiaFactor> {
    build_factor_with(Exec::Sequential, sites, design, params, sets, include_nugget)
}

pub fn build_factor_with(
    exec: Exec,
    sites: &[Site],
    design: &[f64],
    params: &SvcParams,
    sets: Arc<NeighborSets>,
    include_nugget: bool,
) -> Result<VecchiaFactor> {
    let n = sites.len();
    let p = params.p();
    if sets.n() != n || design.len() != n * p {
        return Err(Error::Dimension(format!(
            "factor over {} sites with {} neighbor positions and {} design entries (p = {p})",
            n,
            sets.n(),
            design.len()
        )));
    }
    let kern = SvcKernel::new(params);
    let nug = if include_nugget { params.tau2 } else { 0.0 };
    let row = |o: usize| &design[o * p..(o + 1) * p];
    let solve_at = |solver: &mut LocalSolver, i: usize| -> Result<(Vec<f64>, f64)> {
        let o = sets.perm[i];
        let nb: Vec<usize> = sets.sets[i].iter().map(|&j| sets.perm[j]).collect();
        let var_t = kern.variance(row(o)) + nug;
        let (b, f) = solver
            .solve(
                nb.len(),
                |a, c| kern.cov(&sites[nb[a]], row(nb[a]), &sites[nb[c]], row(nb[c])) + if a == c { nug } else { 0.0 },
                |a| kern.cov(&sites[nb[a]], row(nb[a]), &sites[o], row(o)),
                var_t,
            )
            .map_err(|_| {
                Error::NotPositiveDefinite(format!(
                    "neighbor covariance of position {i} (site {o}) is singular"
                ))
            })?;
        finish_cond_var(f, var_t, include_nugget, i).map(|f| (b, f))
    };
    let parts = par::try_map_range(exec, n, |i| {
        thread_local! {
            static SOLVER: std::cell::RefCell<LocalSolver> = std::cell::RefCell::new(LocalSolver::default());
        }
        SOLVER.with(|s| solve_at(&mut s.borrow_mut(), i))
    })?;
    let (weights, cond_var): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    Ok(VecchiaFactor {
        max_solve: sets.max_set_len(),
        sets,
        weights,
        cond_var,
    })
}

pub(crate) fn finish_cond_var(f: f64, var_t: f64, noisy: bool, i: usize) -> Result<f64> {
    if !f.is_finite() {
        return Err(Error::Numerical(format!("non-finite conditional variance at position {i}")));
    }
    if noisy {
        if f > 0.0 {
            Ok(f)
        } else {
            Err(Error::NotPositiveDefinite(format!(
                "conditional variance {f} at position {i} is not positive"
            )))
        }
    } else {
        Ok(f.max(LATENT_VAR_FLOOR * var_t))
    }
}

/// Σ_i log N(z_i | mean_i + b_iᵀ(z_{v(i)} - mean_{v(i)}), F_ii), summed in position order.
pub fn gaussian_vecchia_loglik(factor: &VecchiaFactor, z: &[f64], mean: &[f64]) -> Result<f64> {
    let n = factor.n();
    if z.len() != n || mean.len() != n {
        return Err(Error::Dimension(format!(
            "vectors of length {} and {} for a factor over {n} positions",
            z.len(),
            mean.len()
        )));
    }
    if z.iter().chain(mean).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite input to the Vecchia likelihood".into()));
    }
    let perm = &factor.sets.perm;
    let v = par::kahan_sum((0..n).map(|i| {
        let mu = factor.conditional_mean(i, z, mean);
        normal::log_density(z[perm[i]], mu, factor.cond_var[i])
    }));
    finite(v)
}

/// Vecchia log-density of a latent vector `w` under `N(Xα, WΣ_ηWᵀ)`.
/// `factor_latent` must be built without the nugget.
pub fn latent_vecchia_logdensity(w: &[f64], mean: &[f64], factor_latent: &VecchiaFactor) -> Result<f64> {
    gaussian_vecchia_loglik(factor_latent, w, mean)
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("log-likelihood evaluated to {v}")))
    }
}

/// Checks that no position conditions on a censored observation.
pub fn check_latent_free_sets(dataset: &Dataset, sets: &NeighborSets) -> Result<()> {
    if sets.n() != dataset.n() {
        return Err(Error::Dimension("neighbor sets do not match the dataset".into()));
    }
    let cens = dataset.censored();
    for i in 0..sets.n() {
        if let Some(o) = sets.neighbor_indices(i).find(|&o| cens[o]) {
            return Err(Error::Contract(format!(
                "position {i} conditions on censored observation {o}"
            )));
        }
    }
    Ok(())
}

/// Latent-free censored log-likelihood: Gaussian conditionals at observed
/// positions, log Φ((L - conditional mean)/√F_ii) at censored ones.
pub fn censored_vecchia_loglik(dataset: &Dataset, params: &SvcParams, sets: &Arc<NeighborSets>) -> Result<f64> {
    censored_vecchia_loglik_with(Exec::Sequential, dataset, params, sets)
}

pub fn censored_vecchia_loglik_with(
    exec: Exec,
    dataset: &Dataset,
    params: &SvcParams,
    sets: &Arc<NeighborSets>,
) -> Result<f64> {
    params.validate(dataset.p())?;
    check_latent_free_sets(dataset, sets)?;
    let factor = build_factor_with(exec, dataset.sites(), dataset.design(), params, Arc::clone(sets), true)?;
    let mean = dataset.mean(&params.alpha);
    censored_loglik_from_factor(&factor, dataset, &mean)
}

/// Latent-free likelihood from a prebuilt response factor. The factor's
/// sets must already satisfy [`check_latent_free_sets`].
pub fn censored_loglik_from_factor(factor: &VecchiaFactor, dataset: &Dataset, mean: &[f64]) -> Result<f64> {
    let z = dataset.z();
    let cens = dataset.censored();
    let limit = dataset.limit();
    let perm = &factor.sets.perm;
    let v = par::kahan_sum((0..factor.n()).map(|i| {
        let o = perm[i];
        let mu = factor.conditional_mean(i, z, mean);
        let f = factor.cond_var[i];
        if cens[o] {
            normal::log_cdf((limit - mu) / f.sqrt())
        } else {
            normal::log_density(z[o], mu, f)
        }
    }));
    finite(v)
}

/// Sparse upper-triangular factor in position space, stored by column.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseUpper {
    n: usize,
    /// Column `i`: `(row, value)` pairs; the diagonal entry comes last.
    cols: Vec<Vec<(usize, f64)>>,
}

impl SparseUpper {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn column(&self, i: usize) -> &[(usize, f64)] {
        &self.cols[i]
    }

    pub fn nnz(&self) -> usize {
        self.cols.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut u = DMatrix::zeros(self.n, self.n);
        for (c, col) in self.cols.iter().enumerate() {
            for &(r, v) in col {
                u[(r, c)] = v;
            }
        }
        u
    }

    /// `U Uᵀ`, the implied precision in position order.
    pub fn precision(&self) -> DMatrix<f64> {
        let u = self.to_dense();
        &u * u.transpose()
    }
}

/// `U` with column `i` holding `1/√F_ii` on the diagonal and
/// `-b_i[k]/√F_ii` in rows `sets[i]`.
#[allow(non_snake_case)]
pub fn sparse_U(factor: &VecchiaFactor) -> SparseUpper {
    let cols = (0..factor.n())
        .map(|i| {
            let s = 1.0 / factor.cond_var[i].sqrt();
            let mut col: Vec<(usize, f64)> = factor.sets.sets[i]
                .iter()
                .zip(&factor.weights[i])
                .map(|(&j, &b)| (j, -b * s))
                .collect();
            col.push((i, s));
            col
        })
        .collect();
    SparseUpper { n: factor.n(), cols }
}

/// Correlation table `exp(-φ d)` for one component, tagged with its φ.
#[derive(Clone, Debug)]
struct CorrSlot {
    phi: f64,
    vals: Vec<f64>,
    last_used: u64,
}

/// Factor builder for repeated evaluation at changing parameters over a
/// fixed set of sites and neighbour sets.
///
/// Site pairs shared by several local systems are stored once: the
/// covariance is evaluated per distinct pair and gathered into each local
/// matrix. Correlation tables are recomputed only for components whose
/// decay changed, and the previous table is kept for reuse after a
/// rejected proposal.
#[derive(Clone, Debug)]
pub struct VecchiaCache {
    sets: Arc<NeighborSets>,
    include_nugget: bool,
    p: usize,
    /// Per position, offset into `pair_of`.
    tri_off: Vec<usize>,
    /// Packed lower triangle of every local system, as distinct-pair ids.
    pair_of: Vec<u32>,
    /// Distinct pairs as original indices, with their distances.
    pairs: Vec<(u32, u32)>,
    dist: Vec<f64>,
    design: Vec<f64>,
    slots: Vec<[CorrSlot; 2]>,
    tick: u64,
    cov: Vec<f64>,
}

#[inline]
fn tri(a: usize) -> usize {
    a * (a + 1) / 2
}

impl VecchiaCache {
    pub fn new(sites: &[Site], design: &[f64], p: usize, sets: Arc<NeighborSets>, include_nugget: bool) -> Result<Self> {
        let n = sites.len();
        if sets.n() != n || design.len() != n * p {
            return Err(Error::Dimension("cache sites, design and neighbor sets disagree".into()));
        }
        let mut tri_off = Vec::with_capacity(n + 1);
        let mut pair_of = Vec::new();
        let mut ids: std::collections::HashMap<(u32, u32), u32> = std::collections::HashMap::new();
        let mut pairs = Vec::new();
        for i in 0..n {
            tri_off.push(pair_of.len());
            let locals: Vec<u32> = sets
                .neighbor_indices(i)
                .chain(std::iter::once(sets.perm[i]))
                .map(|o| o as u32)
                .collect();
            for a in 0..locals.len() {
                for b in 0..=a {
                    let key = (locals[a].min(locals[b]), locals[a].max(locals[b]));
                    let id = *ids.entry(key).or_insert_with(|| {
                        pairs.push(key);
                        (pairs.len() - 1) as u32
                    });
                    pair_of.push(id);
                }
            }
        }
        tri_off.push(pair_of.len());
        let dist = pairs
            .iter()
            .map(|&(a, b)| distance(&sites[a as usize], &sites[b as usize]))
            .collect();
        let empty = CorrSlot {
            phi: f64::NAN,
            vals: Vec::new(),
            last_used: 0,
        };
        Ok(VecchiaCache {
            sets,
            include_nugget,
            p,
            tri_off,
            pair_of,
            pairs,
            dist,
            design: design.to_vec(),
            slots: vec![[empty.clone(), empty]; p],
            tick: 0,
            cov: Vec::new(),
        })
    }

    pub fn shared_sets(&self) -> Arc<NeighborSets> {
        Arc::clone(&self.sets)
    }

    /// Number of distinct site pairs across all local systems.
    pub fn distinct_pairs(&self) -> usize {
        self.pairs.len()
    }

    fn slot_for(&mut self, j: usize, phi: f64) -> usize {
        self.tick += 1;
        let tick = self.tick;
        let pair = &mut self.slots[j];
        let k = if pair[0].phi == phi {
            0
        } else if pair[1].phi == phi {
            1
        } else {
            let k = usize::from(pair[1].last_used < pair[0].last_used);
            let slot = &mut pair[k];
            slot.phi = phi;
            slot.vals.clear();
            slot.vals.extend(self.dist.iter().map(|d| (-phi * d).exp()));
            k
        };
        pair[k].last_used = tick;
        k
    }

    /// Builds the factor at `params`.
    pub fn factor(&mut self, exec: Exec, params: &SvcParams) -> Result<VecchiaFactor> {
        if params.p() != self.p {
            return Err(Error::Dimension(format!("parameters for p = {} on a p = {} cache", params.p(), self.p)));
        }
        let p = self.p;
        let chosen: Vec<usize> = (0..p).map(|j| self.slot_for(j, params.phi[j])).collect();
        let mut cov = std::mem::take(&mut self.cov);
        cov.clear();
        cov.resize(self.pairs.len(), 0.0);
        for (j, &k) in chosen.iter().enumerate() {
            let e = &self.slots[j][k].vals;
            let s = params.sigma2[j];
            for (u, &(a, b)) in self.pairs.iter().enumerate() {
                let xa = self.design[a as usize * p + j];
                let xb = self.design[b as usize * p + j];
                cov[u] += s * xa * xb * e[u];
            }
        }
        let nug = if self.include_nugget { params.tau2 } else { 0.0 };
        let this = &*self;
        let covr = &cov;
        let parts = par::try_map_range(exec, this.sets.n(), |i| {
            thread_local! {
                static SOLVER: std::cell::RefCell<LocalSolver> = std::cell::RefCell::new(LocalSolver::default());
            }
            SOLVER.with(|cell| {
                let solver = &mut *cell.borrow_mut();
                let ids = &this.pair_of[this.tri_off[i]..this.tri_off[i + 1]];
                let m = this.sets.sets[i].len();
                let var_t = covr[ids[tri(m) + m] as usize] + nug;
                let (b, f) = solver
                    .solve(
                        m,
                        |a, c| covr[ids[tri(a) + c] as usize] + if a == c { nug } else { 0.0 },
                        |a| covr[ids[tri(m) + a] as usize],
                        var_t,
                    )
                    .map_err(|_| Error::NotPositiveDefinite(format!("neighbor covariance of position {i} is singular")))?;
                finish_cond_var(f, var_t, this.include_nugget, i).map(|f| (b, f))
            })
        });
        self.cov = cov;
        let (weights, cond_var): (Vec<_>, Vec<_>) = parts?.into_iter().unzip();
        Ok(VecchiaFactor {
            max_solve: self.sets.max_set_len(),
            sets: Arc::clone(&self.sets),
            weights,
            cond_var,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::dense_cov_matrix;
    use crate::ordering::{censored_aware_order, conditioning_sets, maxmin_order};
    use nalgebra::DVector;
    use rand::Rng;
    use rand_distr::StandardNormal;

    pub(crate) fn instance(n: usize, p: usize, seed: u64) -> (Dataset, SvcParams) {
        let mut rng = crate::rng::stream(seed, &[]);
        let sites: Vec<Site> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let mut design = Vec::new();
        for _ in 0..n {
            design.push(1.0);
            for _ in 1..p {
                design.push(rng.sample::<f64, _>(StandardNormal));
            }
        }
        let z: Vec<f64> = (0..n).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let params = SvcParams {
            alpha: (0..p).map(|j| j as f64 - 0.5).collect(),
            sigma2: (0..p).map(|_| 0.5 + rng.random::<f64>()).collect(),
            phi: (0..p).map(|_| 2.0 + 10.0 * rng.random::<f64>()).collect(),
            tau2: 0.2,
        };
        (Dataset::uncensored(sites, design, p, z).unwrap(), params)
    }

    fn dense_logpdf(k: &DMatrix<f64>, r: &[f64]) -> f64 {
        let n = r.len();
        let chol = k.clone().cholesky().unwrap();
        let rv = DVector::from_column_slice(r);
        let sol = chol.solve(&rv);
        let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        -0.5 * rv.dot(&sol) - 0.5 * logdet - n as f64 * normal::LN_SQRT_2PI
    }

    fn full_sets(d: &Dataset) -> Arc<NeighborSets> {
        let perm = maxmin_order(d.sites()).unwrap();
        Arc::new(conditioning_sets(d.sites(), &perm, d.n().max(2) - 1, None).unwrap())
    }

    #[test]
    fn empty_set_gives_marginal_variance() {
        let (d, params) = instance(5, 2, 1);
        let sets = full_sets(&d);
        let f = build_factor(d.sites(), d.design(), &params, sets.clone(), true).unwrap();
        let o = sets.perm[0];
        assert!(f.weights(0).is_empty());
        let x = d.x_row(o);
        let var = params.sigma2[0] * x[0] * x[0] + params.sigma2[1] * x[1] * x[1] + params.tau2;
        assert!((f.cond_var()[0] - var).abs() < 1e-14);
    }

    #[test]
    fn full_conditioning_matches_dense_conditionals() {
        let (d, params) = instance(25, 2, 3);
        let sets = full_sets(&d);
        let f = build_factor(d.sites(), d.design(), &params, sets.clone(), true).unwrap();
        let k = dense_cov_matrix(d.sites(), d.design(), &params, true).unwrap();
        for i in 1..25 {
            let o = sets.perm[i];
            let nb: Vec<usize> = sets.neighbor_indices(i).collect();
            let kvv = DMatrix::from_fn(nb.len(), nb.len(), |a, b| k[(nb[a], nb[b])]);
            let kvt = DVector::from_fn(nb.len(), |a, _| k[(nb[a], o)]);
            let b = kvv.clone().cholesky().unwrap().solve(&kvt);
            let var = k[(o, o)] - kvt.dot(&b);
            assert!((f.cond_var()[i] - var).abs() < 1e-8 * var);
            for (a, &w) in f.weights(i).iter().enumerate() {
                assert!((w - b[a]).abs() < 1e-8 * (1.0 + b[a].abs()));
            }
        }
        assert!(f.max_solve() <= 24);
    }

    #[test]
    fn duplicated_site_with_nugget_is_finite() {
        let (mut d, params) = instance(10, 1, 4);
        let mut sites = d.sites().to_vec();
        sites[3] = sites[7];
        d = Dataset::uncensored(sites, d.design().to_vec(), 1, d.z().to_vec()).unwrap();
        let sets = full_sets(&d);
        let f = build_factor(d.sites(), d.design(), &params, sets, true).unwrap();
        for &v in f.cond_var() {
            assert!(v.is_finite() && v >= params.tau2 * (1.0 - 1e-8));
        }
    }

    #[test]
    fn single_observation_loglik() {
        let (d, params) = instance(1, 2, 5);
        let sets = full_sets(&d);
        let f = build_factor(d.sites(), d.design(), &params, sets, true).unwrap();
        let mean = d.mean(&params.alpha);
        let ll = gaussian_vecchia_loglik(&f, d.z(), &mean).unwrap();
        let var = f.cond_var()[0];
        assert!((ll - normal::log_density(d.z()[0], mean[0], var)).abs() < 1e-14);
    }

    #[test]
    fn exact_at_full_conditioning() {
        for (seed, n, p) in [(1, 20, 1), (2, 30, 2), (3, 40, 3)] {
            let (d, params) = instance(n, p, seed);
            let sets = full_sets(&d);
            let f = build_factor(d.sites(), d.design(), &params, sets, true).unwrap();
            let mean = d.mean(&params.alpha);
            let ll = gaussian_vecchia_loglik(&f, d.z(), &mean).unwrap();
            let k = dense_cov_matrix(d.sites(), d.design(), &params, true).unwrap();
            let r: Vec<f64> = d.z().iter().zip(&mean).map(|(z, m)| z - m).collect();
            let dense = dense_logpdf(&k, &r);
            assert!(((ll - dense) / dense).abs() < 1e-8, "{ll} vs {dense}");
        }
    }

    #[test]
    fn translation_invariance() {
        let (d, params) = instance(30, 2, 6);
        let perm = maxmin_order(d.sites()).unwrap();
        let sets = Arc::new(conditioning_sets(d.sites(), &perm, 5, None).unwrap());
        let f = build_factor(d.sites(), d.design(), &params, sets, true).unwrap();
        let mean = d.mean(&params.alpha);
        let a = gaussian_vecchia_loglik(&f, d.z(), &mean).unwrap();
        let zc: Vec<f64> = d.z().iter().map(|v| v + 4.25).collect();
        let mc: Vec<f64> = mean.iter().map(|v| v + 4.25).collect();
        let b = gaussian_vecchia_loglik(&f, &zc, &mc).unwrap();
        assert!((a - b).abs() < 1e-10 * a.abs());
    }

    #[test]
    fn latent_density_at_mean_is_log_normaliser() {
        let (d, params) = instance(30, 2, 7);
        let perm = maxmin_order(d.sites()).unwrap();
        let sets = Arc::new(conditioning_sets(d.sites(), &perm, 6, None).unwrap());
        let f = build_factor(d.sites(), d.design(), &params, sets, false).unwrap();
        let mean = d.mean(&params.alpha);
        let v = latent_vecchia_logdensity(&mean, &mean, &f).unwrap();
        let expect: f64 = f.cond_var().iter().map(|fv| -0.5 * (2.0 * std::f64::consts::PI * fv).ln()).sum();
        assert!((v - expect).abs() < 1e-10 * expect.abs());
    }

    #[test]
    fn latent_density_exact_at_full_conditioning() {
        let (d, params) = instance(30, 2, 8);
        let sets = full_sets(&d);
        let f = build_factor(d.sites(), d.design(), &params, sets, false).unwrap();
        let mean = d.mean(&params.alpha);
        let k = dense_cov_matrix(d.sites(), d.design(), &params, false).unwrap();
        // draw w from the latent law so the quadratic form is moderate
        let l = k.clone().cholesky().unwrap().l();
        let mut rng = crate::rng::stream(8, &[1]);
        let e = DVector::from_fn(30, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w: Vec<f64> = (&l * e).iter().zip(&mean).map(|(a, m)| a + m).collect();
        let r: Vec<f64> = w.iter().zip(&mean).map(|(a, m)| a - m).collect();
        let v = latent_vecchia_logdensity(&w, &mean, &f).unwrap();
        let dense = dense_logpdf(&k, &r);
        assert!(((v - dense) / dense).abs() < 1e-8);
    }

    /// Independent plain-GP nearest-neighbour density for p = 1, X = 1.
    #[test]
    fn intercept_only_reduces_to_plain_nngp() {
        let (d, params) = instance(40, 1, 9);
        let perm = maxmin_order(d.sites()).unwrap();
        let sets = Arc::new(conditioning_sets(d.sites(), &perm, 4, None).unwrap());
        let f = build_factor(d.sites(), d.design(), &params, sets.clone(), false).unwrap();
        let (s2, phi) = (params.sigma2[0], params.phi[0]);
        let c = |a: usize, b: usize| s2 * (-phi * crate::domain::distance(&d.sites()[a], &d.sites()[b])).exp();
        let mu = params.alpha[0];
        let mut reference = 0.0;
        for i in 0..40 {
            let o = sets.perm[i];
            let nb: Vec<usize> = sets.neighbor_indices(i).collect();
            let (m, v) = if nb.is_empty() {
                (mu, s2)
            } else {
                let kvv = DMatrix::from_fn(nb.len(), nb.len(), |a, b| c(nb[a], nb[b]));
                let kvt = DVector::from_fn(nb.len(), |a, _| c(nb[a], o));
                let b = kvv.lu().solve(&kvt).unwrap();
                let r = DVector::from_fn(nb.len(), |a, _| d.z()[nb[a]] - mu);
                (mu + b.dot(&r), s2 - b.dot(&kvt))
            };
            reference += normal::log_density(d.z()[o], m, v);
        }
        let mean = vec![mu; 40];
        let v = latent_vecchia_logdensity(d.z(), &mean, &f).unwrap();
        assert!((v - reference).abs() < 1e-9 * reference.abs());
    }

    #[test]
    fn sparse_u_reproduces_covariance_at_full_conditioning() {
        let (d, params) = instance(20, 2, 10);
        let sets = full_sets(&d);
        let f = build_factor(d.sites(), d.design(), &params, sets.clone(), true).unwrap();
        let u = sparse_U(&f);
        assert!(u.nnz() <= 20 * (19 + 1));
        let q = u.precision();
        let cov_pos = q.try_inverse().unwrap();
        let k = dense_cov_matrix(d.sites(), d.design(), &params, true).unwrap();
        for a in 0..20 {
            for b in 0..20 {
                let kd = k[(sets.perm[a], sets.perm[b])];
                assert!((cov_pos[(a, b)] - kd).abs() < 1e-6 * k.max());
            }
        }
        let one = instance(1, 1, 2);
        let f1 = build_factor(one.0.sites(), one.0.design(), &one.1, full_sets(&one.0), true).unwrap();
        let u1 = sparse_U(&f1);
        assert_eq!(u1.column(0), &[(0, 1.0 / f1.cond_var()[0].sqrt())]);
    }

    #[test]
    fn nnz_bound_holds_for_small_m() {
        let (d, params) = instance(50, 2, 11);
        let perm = maxmin_order(d.sites()).unwrap();
        let sets = Arc::new(conditioning_sets(d.sites(), &perm, 7, None).unwrap());
        let f = build_factor(d.sites(), d.design(), &params, sets, true).unwrap();
        assert!(sparse_U(&f).nnz() <= 50 * 8);
        assert!(f.max_solve() <= 7);
    }

    fn censor(d: &Dataset, frac: f64) -> Dataset {
        let mut zs = d.z().to_vec();
        zs.sort_by(f64::total_cmp);
        let k = ((d.n() as f64 * frac) as usize).max(1);
        let limit = zs[k - 1];
        let cens: Vec<bool> = d.z().iter().map(|&v| v <= limit).collect();
        let z: Vec<f64> = d.z().iter().map(|&v| v.max(limit)).collect();
        d.with_responses(z, cens, limit).unwrap()
    }

    fn latent_free_sets(d: &Dataset, m: usize) -> Arc<NeighborSets> {
        let perm = censored_aware_order(d.sites(), d.censored()).unwrap();
        let elig: Vec<bool> = d.censored().iter().map(|c| !c).collect();
        Arc::new(conditioning_sets(d.sites(), &perm, m, Some(&elig)).unwrap())
    }

    #[test]
    fn no_censoring_equals_gaussian_vecchia() {
        let (d, params) = instance(40, 2, 12);
        let sets = latent_free_sets(&d, 8);
        let a = censored_vecchia_loglik(&d, &params, &sets).unwrap();
        let f = build_factor(d.sites(), d.design(), &params, sets, true).unwrap();
        let b = gaussian_vecchia_loglik(&f, d.z(), &d.mean(&params.alpha)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_censored_observation() {
        let site = vec![[0.3, 0.6]];
        let d = Dataset::new(site, vec![1.0, 0.5], 2, vec![1.0], vec![true], 1.0).ok();
        // a lone censored observation cannot be ordered (no observed sites)
        let d = d.unwrap();
        assert!(censored_aware_order(d.sites(), d.censored()).is_err());
        let params = crate::domain::reference_params();
        let sets = Arc::new(NeighborSets {
            perm: vec![0],
            sets: vec![vec![]],
            m: 1,
        });
        let v = censored_vecchia_loglik(&d, &params, &sets).unwrap();
        let mu = -5.0 + 10.0 * 0.5;
        let var = 15.0 + 30.0 * 0.25 + 0.1;
        assert!((v - normal::log_cdf((1.0 - mu) / f64::sqrt(var))).abs() < 1e-14);
    }

    #[test]
    fn censored_neighbor_is_a_contract_violation() {
        let (d, params) = instance(20, 1, 13);
        let d = censor(&d, 0.3);
        let perm = censored_aware_order(d.sites(), d.censored()).unwrap();
        let sets = Arc::new(conditioning_sets(d.sites(), &perm, 5, None).unwrap());
        assert!(matches!(
            censored_vecchia_loglik(&d, &params, &sets),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn continuous_in_the_limit() {
        let (d, params) = instance(40, 2, 14);
        let d = censor(&d, 0.3);
        let sets = latent_free_sets(&d, 10);
        let at = |limit: f64| {
            let z: Vec<f64> = d
                .z()
                .iter()
                .zip(d.censored())
                .map(|(&v, &c)| if c { limit } else { v })
                .collect();
            let dd = d.with_responses(z, d.censored().to_vec(), limit).unwrap();
            censored_vecchia_loglik(&dd, &params, &sets).unwrap()
        };
        let l0 = d.limit();
        let base = at(l0);
        let slope = (at(l0 + 1e-6) - at(l0 - 1e-6)) / 2e-6;
        for eps in [1e-3, 1e-5, 1e-7] {
            let delta = (at(l0 + eps) - base).abs();
            assert!(delta <= 2.0 * slope.abs() * eps + 1e-12, "eps={eps} delta={delta}");
        }
    }

    #[test]
    fn finite_differences_are_consistent() {
        let (d, params) = instance(30, 2, 15);
        let d = censor(&d, 0.25);
        let sets = latent_free_sets(&d, 8);
        let f = |theta: &[f64]| {
            let p = SvcParams {
                alpha: theta[0..2].to_vec(),
                sigma2: theta[2..4].iter().map(|v| v.exp()).collect(),
                phi: theta[4..6].iter().map(|v| v.exp()).collect(),
                tau2: theta[6].exp(),
            };
            censored_vecchia_loglik(&d, &p, &sets).unwrap()
        };
        let mut theta: Vec<f64> = params.alpha.clone();
        theta.extend(params.sigma2.iter().map(|v| v.ln()));
        theta.extend(params.phi.iter().map(|v| v.ln()));
        theta.push(params.tau2.ln());
        for k in 0..theta.len() {
            let fd = |h: f64| {
                let mut a = theta.clone();
                let mut b = theta.clone();
                a[k] += h;
                b[k] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            };
            let coarse = fd(1e-4);
            // Richardson-extrapolated reference
            let fine = (4.0 * fd(5e-4) - fd(1e-3)) / 3.0;
            let scale = fine.abs().max(1.0);
            assert!((coarse - fine).abs() / scale < 1e-4, "param {k}: {coarse} vs {fine}");
        }
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let (d, params) = instance(80, 2, 16);
        let d = censor(&d, 0.3);
        let sets = latent_free_sets(&d, 10);
        let a = censored_vecchia_loglik_with(Exec::Sequential, &d, &params, &sets).unwrap();
        let b = censored_vecchia_loglik_with(Exec::Parallel, &d, &params, &sets).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
    #[test]
    fn cache_matches_direct_build() {
        let (d, mut params) = instance(60, 3, 17);
        let perm = maxmin_order(d.sites()).unwrap();
        let sets = Arc::new(conditioning_sets(d.sites(), &perm, 9, None).unwrap());
        for nugget in [true, false] {
            let mut cache = VecchiaCache::new(d.sites(), d.design(), 3, sets.clone(), nugget).unwrap();
            for step in 0..4 {
                params.phi[step % 3] *= 1.3;
                params.sigma2[(step + 1) % 3] *= 0.8;
                let a = cache.factor(Exec::Sequential, &params).unwrap();
                let b = build_factor(d.sites(), d.design(), &params, sets.clone(), nugget).unwrap();
                for i in 0..60 {
                    assert!((a.cond_var()[i] - b.cond_var()[i]).abs() < 1e-10 * b.cond_var()[i]);
                    for (x, y) in a.weights(i).iter().zip(b.weights(i)) {
                        assert!((x - y).abs() < 1e-9 * (1.0 + y.abs()));
                    }
                }
                let c = cache.factor(Exec::Parallel, &params).unwrap();
                assert_eq!(a.cond_var(), c.cond_var());
            }
        }
    }

    #[test]
    fn cache_reuses_rejected_tables() {
        let (d, params) = instance(30, 2, 18);
        let perm = maxmin_order(d.sites()).unwrap();
        let sets = Arc::new(conditioning_sets(d.sites(), &perm, 5, None).unwrap());
        let mut cache = VecchiaCache::new(d.sites(), d.design(), 2, sets, true).unwrap();
        let base = cache.factor(Exec::Sequential, &params).unwrap();
        let mut other = params.clone();
        other.phi[0] *= 2.0;
        cache.factor(Exec::Sequential, &other).unwrap();
        let again = cache.factor(Exec::Sequential, &params).unwrap();
        assert_eq!(base.cond_var(), again.cond_var());
        assert_eq!(cache.slots[0][0].phi, params.phi[0]);
    }
}
