//! Conditional prediction of the latent surface at unsampled sites.
//!
//! Every predictor produces a [`ConditionalLaw`]: a Gaussian over the grid
//! with a mean and a way to draw from it. The dense law conditions through
//! the Schur complement of the joint covariance; the Vecchia law uses only
//! the prediction columns of `U`, so its covariance is `(U_pp U_ppᵀ)⁻¹`.

mod io;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::covariance::SvcKernel;
use crate::domain::{Dataset, ModelKind, Site, SvcParams};
use crate::error::{Error, Result};
use crate::mcmc::PosteriorSamples;
use crate::oracle::truncated_normal_mean;
use crate::ordering::{censored_aware_order, conditioning_sets, maxmin_order, NeighborSets};
use crate::par::{self, Exec};
use crate::rng;
use crate::vecchia::{finish_cond_var, LocalSolver};

pub use io::{load_grid, read_draw_matrix, save_grid, write_draw_matrix, write_summary_csv};

/// Largest joint size handled by the dense predictor.
pub const DENSE_PREDICT_LIMIT: usize = 2000;

/// Relative diagonal jitter for dense latent covariances.
const DENSE_JITTER: f64 = 1e-10;

/// Prediction sites with their covariate rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionGrid {
    sites: Vec<Site>,
    design: Vec<f64>,
    p: usize,
}

impl PredictionGrid {
    pub fn new(sites: Vec<Site>, design: Vec<f64>, p: usize) -> Result<Self> {
        if p == 0 || design.len() != sites.len() * p {
            return Err(Error::Dimension(format!(
                "grid of {} sites with {} design entries for p = {p}",
                sites.len(),
                design.len()
            )));
        }
        if sites.is_empty() {
            return Err(Error::InvalidDataset("prediction grid is empty".into()));
        }
        if sites.iter().flatten().chain(&design).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("prediction grid holds non-finite values".into()));
        }
        Ok(PredictionGrid { sites, design, p })
    }

    pub fn n(&self) -> usize {
        self.sites.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn design(&self) -> &[f64] {
        &self.design
    }

    pub fn x_row(&self, j: usize) -> &[f64] {
        &self.design[j * self.p..(j + 1) * self.p]
    }
}

fn linear_mean(design: &[f64], p: usize, alpha: &[f64]) -> Vec<f64> {
    design
        .chunks_exact(p)
        .map(|x| x.iter().zip(alpha).map(|(a, b)| a * b).sum())
        .collect()
}

/// Gaussian law of the latent surface on a grid.
#[derive(Clone, Debug)]
pub struct ConditionalLaw {
    mean: Vec<f64>,
    repr: Repr,
}

#[derive(Clone, Debug)]
enum Repr {
    /// Lower Cholesky factor of the conditional covariance.
    Dense(DMatrix<f64>),
    Vecchia(VecchiaBlock),
}

/// Prediction block of `U` in regression form: position `i` has weights on
/// earlier prediction positions and conditional SD `√F_ii`.
#[derive(Clone, Debug)]
struct VecchiaBlock {
    /// Grid index predicted at each prediction position.
    grid_index: Vec<usize>,
    pred_weights: Vec<Vec<(usize, f64)>>,
    sd: Vec<f64>,
}

impl VecchiaBlock {
    /// Solves `U_ppᵀ x = e` by forward substitution in prediction order.
    fn forward(&self, e: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; e.len()];
        for i in 0..e.len() {
            let mut v = self.sd[i] * e[i];
            for &(k, b) in &self.pred_weights[i] {
                v += b * x[k];
            }
            x[i] = v;
        }
        x
    }

    /// `U_pp` in prediction-position order.
    fn u_pp(&self) -> DMatrix<f64> {
        let n = self.sd.len();
        let mut u = DMatrix::zeros(n, n);
        for i in 0..n {
            let s = 1.0 / self.sd[i];
            u[(i, i)] = s;
            for &(k, b) in &self.pred_weights[i] {
                u[(k, i)] = -b * s;
            }
        }
        u
    }
}

impl ConditionalLaw {
    /// Number of grid sites.
    pub fn n(&self) -> usize {
        self.mean.len()
    }

    /// Conditional mean by grid index.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// One draw by grid index.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let e: Vec<f64> = (0..self.n()).map(|_| rng.sample(StandardNormal)).collect();
        self.transform(&e)
    }

    /// Maps standard normal innovations to a draw.
    pub fn transform(&self, e: &[f64]) -> Vec<f64> {
        match &self.repr {
            Repr::Dense(l) => {
                let v = l * DVector::from_column_slice(e);
                self.mean.iter().zip(v.iter()).map(|(m, d)| m + d).collect()
            }
            Repr::Vecchia(blk) => {
                let x = blk.forward(e);
                let mut out = self.mean.clone();
                for (i, &g) in blk.grid_index.iter().enumerate() {
                    out[g] += x[i];
                }
                out
            }
        }
    }

    /// Conditional covariance by grid index, formed densely.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        match &self.repr {
            Repr::Dense(l) => Ok(l * l.transpose()),
            Repr::Vecchia(blk) => {
                let u = blk.u_pp();
                let inv_u = u
                    .solve_upper_triangular(&DMatrix::identity(blk.sd.len(), blk.sd.len()))
                    .ok_or_else(|| Error::Numerical("U_pp is singular".into()))?;
                let cov_pos = inv_u.transpose() * &inv_u;
                let n = self.n();
                let mut cov = DMatrix::zeros(n, n);
                for (a, &ga) in blk.grid_index.iter().enumerate() {
                    for (b, &gb) in blk.grid_index.iter().enumerate() {
                        cov[(ga, gb)] = cov_pos[(a, b)];
                    }
                }
                Ok(cov)
            }
        }
    }
}

/// Dense conditional law of the latent surface on `grid` given `values` at
/// the observation sites, each observed with additional noise variance
/// `noise[i]` (zero for the latent field itself).
pub fn dense_law(
    obs_sites: &[Site],
    obs_design: &[f64],
    values: &[f64],
    noise: &[f64],
    params: &SvcParams,
    grid: &PredictionGrid,
) -> Result<ConditionalLaw> {
    let n_o = obs_sites.len();
    let n_p = grid.n();
    let p = params.p();
    if values.len() != n_o || noise.len() != n_o || obs_design.len() != n_o * p || grid.p() != p {
        return Err(Error::Dimension("observation values, noise, design and grid disagree".into()));
    }
    if n_o + n_p > DENSE_PREDICT_LIMIT {
        return Err(Error::Contract(format!(
            "dense prediction is limited to {DENSE_PREDICT_LIMIT} joint sites, got {}",
            n_o + n_p
        )));
    }
    let kern = SvcKernel::new(params);
    let orow = |i: usize| &obs_design[i * p..(i + 1) * p];
    let mut k_oo = DMatrix::from_fn(n_o, n_o, |a, b| kern.cov(&obs_sites[a], orow(a), &obs_sites[b], orow(b)));
    let jit = DENSE_JITTER * k_oo.diagonal().mean();
    for i in 0..n_o {
        k_oo[(i, i)] += noise[i] + jit;
    }
    let k_op = DMatrix::from_fn(n_o, n_p, |a, b| kern.cov(&obs_sites[a], orow(a), &grid.sites[b], grid.x_row(b)));
    let mut k_pp = DMatrix::from_fn(n_p, n_p, |a, b| kern.cov(&grid.sites[a], grid.x_row(a), &grid.sites[b], grid.x_row(b)));

    let chol = k_oo
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("observation covariance".into()))?;
    let l = chol.l();
    let a = l
        .solve_lower_triangular(&k_op)
        .ok_or_else(|| Error::Numerical("singular observation factor".into()))?;
    let mo = linear_mean(obs_design, p, &params.alpha);
    let r = DVector::from_iterator(n_o, values.iter().zip(&mo).map(|(v, m)| v - m));
    let y = l
        .solve_lower_triangular(&r)
        .ok_or_else(|| Error::Numerical("singular observation factor".into()))?;
    let shift = a.transpose() * y;
    let mean: Vec<f64> = linear_mean(&grid.design, p, &params.alpha)
        .into_iter()
        .zip(shift.iter())
        .map(|(m, s)| m + s)
        .collect();

    k_pp -= a.transpose() * &a;
    let jit_p = DENSE_JITTER * (0..n_p).map(|i| kern.variance(grid.x_row(i))).sum::<f64>() / n_p as f64;
    for i in 0..n_p {
        for j in 0..i {
            let s = 0.5 * (k_pp[(i, j)] + k_pp[(j, i)]);
            k_pp[(i, j)] = s;
            k_pp[(j, i)] = s;
        }
        k_pp[(i, i)] = k_pp[(i, i)].max(0.0) + jit_p;
    }
    let lp = k_pp
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("conditional covariance of the grid".into()))?
        .l();
    Ok(ConditionalLaw {
        mean,
        repr: Repr::Dense(lp),
    })
}

/// Full-latent prediction from one posterior draw of the latent field at the
/// data sites: the conditional mean and one conditional draw.
pub fn predict_full_latent(
    w_o: &[f64],
    params: &SvcParams,
    obs: &Dataset,
    grid: &PredictionGrid,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let law = dense_law(obs.sites(), obs.design(), w_o, &vec![0.0; obs.n()], params, grid)?;
    let draw = law.sample(rng);
    Ok((law.mean, draw))
}

/// Joint ordering of observation and grid sites with the conditioning sets
/// of every prediction position.
///
/// By default predictions condition on observations only. With `joint`,
/// the grid is max-min ordered after the observations and a prediction may
/// also condition on earlier predictions.
#[derive(Clone, Debug)]
pub struct PredictionPlan {
    n_o: usize,
    p: usize,
    sites: Vec<Site>,
    design: Vec<f64>,
    sets: Arc<NeighborSets>,
    /// Position of each joint index.
    pos: Vec<usize>,
}

impl PredictionPlan {
    pub fn new(obs_sites: &[Site], obs_design: &[f64], grid: &PredictionGrid, m: usize, joint: bool) -> Result<Self> {
        let n_o = obs_sites.len();
        let p = grid.p();
        if n_o == 0 {
            return Err(Error::InvalidDataset("no observations to condition on".into()));
        }
        if obs_design.len() != n_o * p {
            return Err(Error::Dimension("observation design does not match the grid covariates".into()));
        }
        let mut sites = obs_sites.to_vec();
        sites.extend_from_slice(grid.sites());
        let mut design = obs_design.to_vec();
        design.extend_from_slice(grid.design());
        let n = sites.len();
        let (perm, eligible) = if joint {
            let mut perm: Vec<usize> = (0..n_o).collect();
            perm.extend(maxmin_order(grid.sites())?.into_iter().map(|j| j + n_o));
            (perm, None)
        } else {
            ((0..n).collect(), Some((0..n).map(|j| j < n_o).collect::<Vec<_>>()))
        };
        let sets = conditioning_sets(&sites, &perm, m, eligible.as_deref())?;
        Ok(PredictionPlan {
            n_o,
            p,
            sites,
            design,
            pos: sets.positions(),
            sets: Arc::new(sets),
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n_o
    }

    pub fn n_pred(&self) -> usize {
        self.sites.len() - self.n_o
    }

    pub fn neighbor_sets(&self) -> &NeighborSets {
        &self.sets
    }

    /// Largest local system solved for a prediction position.
    pub fn max_solve(&self) -> usize {
        self.sets.sets[self.n_o..].iter().map(Vec::len).max().unwrap_or(0)
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.design[o * self.p..(o + 1) * self.p]
    }
}

/// Vecchia conditional law on the plan's grid given `values` (with noise
/// variances `noise`) at the observation sites. Only the prediction columns
/// of `U` are assembled; each needs one solve of at most `M × M`.
pub fn vecchia_law(plan: &PredictionPlan, values: &[f64], noise: &[f64], params: &SvcParams, exec: Exec) -> Result<ConditionalLaw> {
    let n_o = plan.n_o;
    let n_p = plan.n_pred();
    if values.len() != n_o || noise.len() != n_o || params.p() != plan.p {
        return Err(Error::Dimension("observation values, noise and parameters disagree with the plan".into()));
    }
    let kern = SvcKernel::new(params);
    let sets = &*plan.sets;
    let sites = &plan.sites;
    let noise_of = |o: usize| if o < n_o { noise[o] } else { 0.0 };
    let cols = par::try_map_range(exec, n_p, |k| {
        thread_local! {
            static SOLVER: std::cell::RefCell<LocalSolver> = std::cell::RefCell::new(LocalSolver::default());
        }
        let i = n_o + k;
        let t = sets.perm[i];
        let nb: Vec<usize> = sets.neighbor_indices(i).collect();
        let var_t = kern.variance(plan.row(t));
        let (b, f) = SOLVER.with(|cell| {
            cell.borrow_mut().solve(
                nb.len(),
                |a, c| {
                    let v = kern.cov(&sites[nb[a]], plan.row(nb[a]), &sites[nb[c]], plan.row(nb[c]));
                    if a == c {
                        v + noise_of(nb[a])
                    } else {
                        v
                    }
                },
                |a| kern.cov(&sites[nb[a]], plan.row(nb[a]), &sites[t], plan.row(t)),
                var_t,
            )
        })
        .map_err(|_| Error::NotPositiveDefinite(format!("neighbor covariance of prediction position {k} is singular")))?;
        let f = finish_cond_var(f, var_t, false, i)?;
        Ok::<_, Error>((nb, b, f))
    })?;

    let alpha = &params.alpha;
    let prior = |o: usize| -> f64 { plan.row(o).iter().zip(alpha).map(|(x, a)| x * a).sum() };
    let resid: Vec<f64> = (0..n_o).map(|o| values[o] - prior(o)).collect();
    let mut grid_index = Vec::with_capacity(n_p);
    let mut pred_weights = Vec::with_capacity(n_p);
    let mut sd = Vec::with_capacity(n_p);
    // Mean residuals of the grid in prediction-position order.
    let mut mu_res = vec![0.0; n_p];
    for (k, (nb, b, f)) in cols.into_iter().enumerate() {
        let mut shift = 0.0;
        let mut pw = Vec::new();
        for (&o, &w) in nb.iter().zip(&b) {
            if o < n_o {
                shift += w * resid[o];
            } else {
                let kk = plan.pos[o] - n_o;
                shift += w * mu_res[kk];
                pw.push((kk, w));
            }
        }
        mu_res[k] = shift;
        grid_index.push(sets.perm[n_o + k] - n_o);
        pred_weights.push(pw);
        sd.push(f.sqrt());
    }
    let mut mean = vec![0.0; n_p];
    for (k, &g) in grid_index.iter().enumerate() {
        mean[g] = prior(n_o + g) + mu_res[k];
    }
    Ok(ConditionalLaw {
        mean,
        repr: Repr::Vecchia(VecchiaBlock {
            grid_index,
            pred_weights,
            sd,
        }),
    })
}

/// Latent-Vecchia prediction from one posterior draw of the latent field.
pub fn predict_latent_vecchia(
    w_o: &[f64],
    params: &SvcParams,
    plan: &PredictionPlan,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let law = vecchia_law(plan, w_o, &vec![0.0; plan.n_obs()], params, Exec::Sequential)?;
    let draw = law.sample(rng);
    Ok((law.mean, draw))
}

/// Componentwise truncated-normal means `E[X | X ≤ L]`, `X ~ N(mu_c, var_c)`.
pub fn mills_adjust(mu_c: &[f64], var_c: &[f64], limit: f64) -> Result<Vec<f64>> {
    if mu_c.len() != var_c.len() {
        return Err(Error::Dimension("means and variances differ in length".into()));
    }
    mu_c.iter()
        .zip(var_c)
        .map(|(&m, &v)| {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!("variance {v} must be positive")));
            }
            // Far in the upper tail the mean rounds onto L itself.
            Ok(truncated_normal_mean(m, v.sqrt(), limit)?.min(limit.next_down()))
        })
        .collect()
}

/// Orderings for the two-stage latent-free predictor.
#[derive(Clone, Debug)]
pub struct LatentFreePlan {
    stage_one: NeighborSets,
    stage_two: PredictionPlan,
}

impl LatentFreePlan {
    pub fn new(dataset: &Dataset, grid: &PredictionGrid, m: usize, joint: bool) -> Result<Self> {
        let perm = censored_aware_order(dataset.sites(), dataset.censored())?;
        let eligible: Vec<bool> = dataset.censored().iter().map(|c| !c).collect();
        let stage_one = conditioning_sets(dataset.sites(), &perm, m, Some(&eligible))?;
        let stage_two = PredictionPlan::new(dataset.sites(), dataset.design(), grid, m, joint)?;
        Ok(LatentFreePlan { stage_one, stage_two })
    }

    pub fn stage_two(&self) -> &PredictionPlan {
        &self.stage_two
    }
}

/// Stage-one output: predictions of the response at the censored sites.
#[derive(Clone, Debug, PartialEq)]
pub struct StageOne {
    /// Original indices of the censored sites.
    pub censored: Vec<usize>,
    /// Conditional means given the non-censored responses.
    pub mean: Vec<f64>,
    /// Conditional variances `F_ii` of the response.
    pub var: Vec<f64>,
    /// Mills-ratio adjusted means, all below the limit.
    pub adjusted: Vec<f64>,
}

/// Kriges the response at each censored site from its nearest non-censored
/// predecessors and truncates at the detection limit.
pub fn stage_one(plan: &LatentFreePlan, dataset: &Dataset, params: &SvcParams) -> Result<StageOne> {
    let sets = &plan.stage_one;
    if sets.n() != dataset.n() {
        return Err(Error::Dimension("plan was built for a different dataset".into()));
    }
    let kern = SvcKernel::new(params);
    let s = dataset.sites();
    let tau2 = params.tau2;
    let mean = dataset.mean(&params.alpha);
    let z = dataset.z();
    let mut solver = LocalSolver::default();
    let mut out = StageOne {
        censored: Vec::new(),
        mean: Vec::new(),
        var: Vec::new(),
        adjusted: Vec::new(),
    };
    for i in 0..sets.n() {
        let t = sets.perm[i];
        if !dataset.censored()[t] {
            continue;
        }
        let nb: Vec<usize> = sets.neighbor_indices(i).collect();
        let x = |o: usize| dataset.x_row(o);
        let var_t = kern.variance(x(t)) + tau2;
        let (b, f) = solver
            .solve(
                nb.len(),
                |a, c| kern.cov(&s[nb[a]], x(nb[a]), &s[nb[c]], x(nb[c])) + if a == c { tau2 } else { 0.0 },
                |a| kern.cov(&s[nb[a]], x(nb[a]), &s[t], x(t)),
                var_t,
            )
            .map_err(|_| Error::NotPositiveDefinite(format!("stage-one neighbor covariance of site {t} is singular")))?;
        if !(f > 0.0) {
            return Err(Error::NotPositiveDefinite(format!("stage-one variance {f} at site {t}")));
        }
        let mu = mean[t] + nb.iter().zip(&b).map(|(&o, w)| w * (z[o] - mean[o])).sum::<f64>();
        out.censored.push(t);
        out.mean.push(mu);
        out.var.push(f);
    }
    out.adjusted = mills_adjust(&out.mean, &out.var, dataset.limit())?;
    Ok(out)
}

/// Options of the two-stage latent-free predictor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LatentFreeOptions {
    /// Adds the stage-one variance to the noise of each pseudo-observation.
    pub inflate_pseudo_noise: bool,
}

/// Stage-two law: the censored responses are replaced by their adjusted
/// means and the latent surface is predicted from the augmented responses,
/// which carry the nugget.
pub fn latent_free_law(
    plan: &LatentFreePlan,
    dataset: &Dataset,
    params: &SvcParams,
    opts: LatentFreeOptions,
    exec: Exec,
) -> Result<ConditionalLaw> {
    let one = stage_one(plan, dataset, params)?;
    let mut values = dataset.z().to_vec();
    let mut noise = vec![params.tau2; dataset.n()];
    for (k, &t) in one.censored.iter().enumerate() {
        values[t] = one.adjusted[k];
        if opts.inflate_pseudo_noise {
            noise[t] += one.var[k];
        }
    }
    vecchia_law(&plan.stage_two, &values, &noise, params, exec)
}

/// Latent-free prediction from one posterior parameter draw.
pub fn predict_latent_free(
    dataset: &Dataset,
    params: &SvcParams,
    plan: &LatentFreePlan,
    opts: LatentFreeOptions,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let law = latent_free_law(plan, dataset, params, opts, Exec::Sequential)?;
    let draw = law.sample(rng);
    Ok((law.mean, draw))
}

/// Options of [`posterior_predictive`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PredictOptions {
    /// Conditioning set size of the Vecchia predictors.
    pub m: usize,
    /// Let predictions condition on earlier predictions.
    pub joint: bool,
    pub latent_free: LatentFreeOptions,
    /// Use every `thin`-th retained posterior draw.
    pub thin: usize,
    pub exec: Exec,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            m: 30,
            joint: false,
            latent_free: LatentFreeOptions::default(),
            thin: 1,
            exec: Exec::Parallel,
        }
    }
}

/// Conditional simulations of the latent surface on a grid, one per used
/// posterior draw, with per-site summaries.
#[derive(Clone, Debug)]
pub struct PredictiveDraws {
    pub grid: PredictionGrid,
    /// Row-major `n_draws × n_sites`.
    draws: Vec<f64>,
    n_draws: usize,
    /// Per-site average of the draws.
    pub mean: Vec<f64>,
    /// Per-site sample standard deviation (zero for a single draw).
    pub sd: Vec<f64>,
}

impl PredictiveDraws {
    /// Builds the summaries from draws given row by row.
    pub fn from_rows(grid: PredictionGrid, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = grid.n();
        if rows.is_empty() || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension(format!("draw rows must be non-empty with {n} columns")));
        }
        let n_draws = rows.len();
        let draws: Vec<f64> = rows.into_iter().flatten().collect();
        let mut mean = vec![0.0; n];
        for row in draws.chunks_exact(n) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n_draws as f64;
        }
        let mut sd = vec![0.0; n];
        if n_draws > 1 {
            for row in draws.chunks_exact(n) {
                for ((s, v), m) in sd.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            for s in &mut sd {
                *s = (*s / (n_draws - 1) as f64).sqrt();
            }
        }
        Ok(PredictiveDraws {
            grid,
            draws,
            n_draws,
            mean,
            sd,
        })
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn n_sites(&self) -> usize {
        self.grid.n()
    }

    pub fn draw(&self, k: usize) -> &[f64] {
        let n = self.n_sites();
        &self.draws[k * n..(k + 1) * n]
    }

    /// All draws of grid site `j`.
    pub fn site_draws(&self, j: usize) -> Vec<f64> {
        (0..self.n_draws).map(|k| self.draws[k * self.n_sites() + j]).collect()
    }

    /// Row-major draw matrix.
    pub fn matrix(&self) -> &[f64] {
        &self.draws
    }
}

enum Predictor {
    Dense,
    Vecchia(PredictionPlan),
    LatentFree(LatentFreePlan),
}

/// One conditional simulation on `grid` for every used posterior draw.
/// Draw `k` (counting all retained draws, chain by chain) uses its own
/// random stream, so results do not depend on `thin` or the thread count.
pub fn posterior_predictive(
    samples: &PosteriorSamples,
    dataset: &Dataset,
    grid: &PredictionGrid,
    kind: ModelKind,
    opts: &PredictOptions,
    seed: u64,
) -> Result<PredictiveDraws> {
    if samples.kind != kind {
        return Err(Error::Contract(format!(
            "samples come from a {} fit, not {}",
            samples.kind.as_str(),
            kind.as_str()
        )));
    }
    if samples.p != dataset.p() || grid.p() != dataset.p() {
        return Err(Error::Dimension("samples, dataset and grid disagree on p".into()));
    }
    if samples.n_draws() == 0 {
        return Err(Error::Contract("no posterior draws".into()));
    }
    if opts.thin == 0 {
        return Err(Error::InvalidConfig("thin must be at least 1".into()));
    }
    let latent = if kind.has_latent() {
        let l = samples
            .latent_draws()
            .ok_or_else(|| Error::Contract(format!("{} samples carry no latent draws", kind.as_str())))?;
        if l.iter().any(|w| w.len() != dataset.n()) {
            return Err(Error::Dimension("latent draws do not match the dataset".into()));
        }
        Some(l)
    } else {
        None
    };
    let predictor = match kind {
        ModelKind::FullLatent => Predictor::Dense,
        ModelKind::LatentVecchia => {
            Predictor::Vecchia(PredictionPlan::new(dataset.sites(), dataset.design(), grid, opts.m, opts.joint)?)
        }
        ModelKind::LatentFree => Predictor::LatentFree(LatentFreePlan::new(dataset, grid, opts.m, opts.joint)?),
    };
    let draws: Vec<&Vec<f64>> = samples.draws().collect();
    let used: Vec<usize> = (0..draws.len()).step_by(opts.thin).collect();
    let zero = vec![0.0; dataset.n()];
    let rows = par::try_map_range(opts.exec, used.len(), |u| -> Result<Vec<f64>> {
        let k = used[u];
        let params = samples.params_at(draws[k]);
        let mut rng = rng::stream(seed, &[k as u64]);
        let law = match &predictor {
            Predictor::Dense => dense_law(
                dataset.sites(),
                dataset.design(),
                latent.as_ref().expect("latent draws")[k],
                &zero,
                &params,
                grid,
            )?,
            Predictor::Vecchia(plan) => vecchia_law(plan, latent.as_ref().expect("latent draws")[k], &zero, &params, Exec::Sequential)?,
            Predictor::LatentFree(plan) => latent_free_law(plan, dataset, &params, opts.latent_free, Exec::Sequential)?,
        };
        Ok(law.sample(&mut rng))
    })?;
    PredictiveDraws::from_rows(grid.clone(), rows)
}
