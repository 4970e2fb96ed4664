//! Likelihood engines for the three model kinds. Each engine evaluates a
//! proposal in which a single parameter block changed, reusing the
//! committed state for everything else, and keeps the result staged until
//! the sampler accepts it.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::adapt::SiteScales;
use crate::domain::{distance, Dataset, ModelKind, SvcParams};
use crate::error::{Error, Result};
use crate::normal;
use crate::ordering::{censored_aware_order, conditioning_sets, maxmin_order, NeighborSets};
use crate::par::{self, Exec};
use crate::rng::StreamRng;
use crate::vecchia::{censored_loglik_from_factor, gaussian_vecchia_loglik, VecchiaCache, VecchiaFactor};

/// Relative diagonal jitter of the dense latent covariance.
pub(crate) const DENSE_LATENT_JITTER: f64 = 1e-10;

/// Which part of the parameter vector a proposal changes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Block {
    All,
    Alpha,
    Pair(usize),
    Nugget,
}

pub(crate) trait Engine: Send {
    /// Log-likelihood at `params` (including the latent prior for latent
    /// kinds), where only `block` differs from the committed state.
    fn evaluate(&mut self, params: &SvcParams, block: Block) -> Result<f64>;
    /// Commits the most recent evaluation.
    fn accept(&mut self);
    fn latent(&self) -> Option<&[f64]> {
        None
    }
    /// One single-site Metropolis sweep over the latent field at the
    /// committed parameters. Returns the new log-likelihood.
    fn sweep(&mut self, _params: &SvcParams, _scales: &mut SiteScales, _adapting: bool, _rng: &mut StreamRng) -> Result<f64> {
        Err(Error::Contract("model has no latent field".into()))
    }
}

/// Neighbour structure fixed once per model kind and dataset.
#[derive(Clone, Debug)]
pub struct ModelSetup {
    pub kind: ModelKind,
    pub m: usize,
    /// Present for the Vecchia kinds.
    pub sets: Option<Arc<NeighborSets>>,
}

impl ModelSetup {
    pub fn new(kind: ModelKind, dataset: &Dataset, m: usize) -> Result<Self> {
        if m < 1 {
            return Err(Error::InvalidConfig("M must be at least 1".into()));
        }
        let sets = match kind {
            ModelKind::FullLatent => None,
            ModelKind::LatentVecchia => {
                let perm = maxmin_order(dataset.sites())?;
                Some(Arc::new(conditioning_sets(dataset.sites(), &perm, m, None)?))
            }
            ModelKind::LatentFree => {
                let perm = censored_aware_order(dataset.sites(), dataset.censored())?;
                let eligible: Vec<bool> = dataset.censored().iter().map(|c| !c).collect();
                Some(Arc::new(conditioning_sets(dataset.sites(), &perm, m, Some(&eligible))?))
            }
        };
        Ok(ModelSetup { kind, m, sets })
    }

    pub(crate) fn sets(&self) -> Result<&Arc<NeighborSets>> {
        self.sets
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("{} has no neighbor sets", self.kind)))
    }
}

/// Data term of the latent kinds at one site.
#[inline]
pub(crate) fn data_site(ds: &Dataset, i: usize, w: f64, tau2: f64) -> f64 {
    if ds.censored()[i] {
        normal::log_cdf((ds.limit() - w) / tau2.sqrt())
    } else {
        normal::log_density(ds.z()[i], w, tau2)
    }
}

pub(crate) fn data_term(ds: &Dataset, w: &[f64], tau2: f64) -> f64 {
    par::kahan_sum((0..ds.n()).map(|i| data_site(ds, i, w[i], tau2)))
}

pub(crate) fn new_engine<'a>(
    setup: &ModelSetup,
    ds: &'a Dataset,
    exec: Exec,
    w0: Option<Vec<f64>>,
) -> Result<Box<dyn Engine + 'a>> {
    Ok(match setup.kind {
        ModelKind::LatentFree => Box::new(LatentFreeEngine::new(ds, setup.sets()?.clone(), exec)?),
        ModelKind::LatentVecchia => {
            let w = w0.ok_or_else(|| Error::Contract("latent start values required".into()))?;
            Box::new(LatentVecchiaEngine::new(ds, setup.sets()?.clone(), exec, w)?)
        }
        ModelKind::FullLatent => {
            let w = w0.ok_or_else(|| Error::Contract("latent start values required".into()))?;
            Box::new(FullLatentEngine::new(ds, w)?)
        }
    })
}

fn nonfinite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("{what} evaluated to {v}")))
    }
}

// ---------------------------------------------------------------------------

pub(crate) struct LatentFreeEngine<'a> {
    ds: &'a Dataset,
    cache: VecchiaCache,
    exec: Exec,
    factor: Option<VecchiaFactor>,
    mean: Vec<f64>,
    staged: Option<(Option<VecchiaFactor>, Vec<f64>)>,
}

impl<'a> LatentFreeEngine<'a> {
    pub(crate) fn new(ds: &'a Dataset, sets: Arc<NeighborSets>, exec: Exec) -> Result<Self> {
        crate::vecchia::check_latent_free_sets(ds, &sets)?;
        Ok(LatentFreeEngine {
            ds,
            cache: VecchiaCache::new(ds.sites(), ds.design(), ds.p(), sets, true)?,
            exec,
            factor: None,
            mean: Vec::new(),
            staged: None,
        })
    }

    #[cfg(test)]
    pub(crate) fn committed_factor(&self) -> Option<&VecchiaFactor> {
        self.factor.as_ref()
    }
}

impl Engine for LatentFreeEngine<'_> {
    fn evaluate(&mut self, params: &SvcParams, block: Block) -> Result<f64> {
        let (factor, mean) = match (block, &self.factor) {
            (Block::Alpha, Some(_)) => (None, self.ds.mean(&params.alpha)),
            (Block::All, _) | (Block::Alpha, None) => (Some(self.cache.factor(self.exec, params)?), self.ds.mean(&params.alpha)),
            _ => (Some(self.cache.factor(self.exec, params)?), self.mean.clone()),
        };
        let f = factor.as_ref().or(self.factor.as_ref()).expect("factor present");
        let ll = censored_loglik_from_factor(f, self.ds, &mean)?;
        self.staged = Some((factor, mean));
        Ok(ll)
    }

    fn accept(&mut self) {
        if let Some((f, m)) = self.staged.take() {
            if f.is_some() {
                self.factor = f;
            }
            self.mean = m;
        }
    }
}

// ---------------------------------------------------------------------------

pub(crate) struct LatentVecchiaEngine<'a> {
    ds: &'a Dataset,
    cache: VecchiaCache,
    exec: Exec,
    factor: Option<VecchiaFactor>,
    mean: Vec<f64>,
    w: Vec<f64>,
    tau2: f64,
    prior_ll: f64,
    data_ll: f64,
    /// Positions whose conditional involves each original index.
    affected: Vec<Vec<usize>>,
    staged: Option<LvStage>,
}

struct LvStage {
    factor: Option<VecchiaFactor>,
    mean: Vec<f64>,
    tau2: f64,
    prior_ll: f64,
    data_ll: f64,
}

impl<'a> LatentVecchiaEngine<'a> {
    pub(crate) fn new(ds: &'a Dataset, sets: Arc<NeighborSets>, exec: Exec, w: Vec<f64>) -> Result<Self> {
        if w.len() != ds.n() {
            return Err(Error::Dimension("latent start vector has the wrong length".into()));
        }
        let children = sets.children();
        let affected = (0..ds.n())
            .map(|_| Vec::new())
            .collect::<Vec<Vec<usize>>>();
        let mut affected = affected;
        for (pos, &o) in sets.perm.iter().enumerate() {
            affected[o].push(pos);
            affected[o].extend(children[pos].iter().copied());
        }
        Ok(LatentVecchiaEngine {
            ds,
            cache: VecchiaCache::new(ds.sites(), ds.design(), ds.p(), sets, false)?,
            exec,
            factor: None,
            mean: Vec::new(),
            w,
            tau2: f64::NAN,
            prior_ll: 0.0,
            data_ll: 0.0,
            affected,
            staged: None,
        })
    }

    #[inline]
    fn term(&self, factor: &VecchiaFactor, pos: usize) -> f64 {
        let o = factor.neighbor_sets().perm[pos];
        let mu = factor.conditional_mean(pos, &self.w, &self.mean);
        normal::log_density(self.w[o], mu, factor.cond_var()[pos])
    }
}

impl Engine for LatentVecchiaEngine<'_> {
    fn evaluate(&mut self, params: &SvcParams, block: Block) -> Result<f64> {
        let mut st = LvStage {
            factor: None,
            mean: Vec::new(),
            tau2: self.tau2,
            prior_ll: self.prior_ll,
            data_ll: self.data_ll,
        };
        match block {
            Block::All => {
                st.factor = Some(self.cache.factor(self.exec, params)?);
                st.mean = self.ds.mean(&params.alpha);
                st.tau2 = params.tau2;
                st.prior_ll = gaussian_vecchia_loglik(st.factor.as_ref().unwrap(), &self.w, &st.mean)?;
                st.data_ll = data_term(self.ds, &self.w, params.tau2);
            }
            Block::Alpha => {
                st.mean = self.ds.mean(&params.alpha);
                st.prior_ll = gaussian_vecchia_loglik(self.factor.as_ref().expect("initialized"), &self.w, &st.mean)?;
            }
            Block::Pair(_) => {
                st.factor = Some(self.cache.factor(self.exec, params)?);
                st.prior_ll = gaussian_vecchia_loglik(st.factor.as_ref().unwrap(), &self.w, &self.mean)?;
            }
            Block::Nugget => {
                st.tau2 = params.tau2;
                st.data_ll = data_term(self.ds, &self.w, params.tau2);
            }
        }
        let total = nonfinite("latent Vecchia likelihood", st.prior_ll + st.data_ll)?;
        self.staged = Some(st);
        Ok(total)
    }

    fn accept(&mut self) {
        if let Some(st) = self.staged.take() {
            if st.factor.is_some() {
                self.factor = st.factor;
            }
            if !st.mean.is_empty() {
                self.mean = st.mean;
            }
            self.tau2 = st.tau2;
            self.prior_ll = st.prior_ll;
            self.data_ll = st.data_ll;
        }
    }

    fn latent(&self) -> Option<&[f64]> {
        Some(&self.w)
    }

    fn sweep(&mut self, _params: &SvcParams, scales: &mut SiteScales, adapting: bool, rng: &mut StreamRng) -> Result<f64> {
        let factor = self.factor.take().expect("initialized");
        let tau2 = self.tau2;
        for i in 0..self.ds.n() {
            let old_w = self.w[i];
            let old: f64 = self.affected[i].iter().map(|&q| self.term(&factor, q)).sum::<f64>()
                + data_site(self.ds, i, old_w, tau2);
            let step: f64 = rng.sample(StandardNormal);
            self.w[i] = old_w + scales.sd(i) * step;
            let new: f64 = self.affected[i].iter().map(|&q| self.term(&factor, q)).sum::<f64>()
                + data_site(self.ds, i, self.w[i], tau2);
            let ratio = new - old;
            let prob = if ratio.is_finite() { ratio.min(0.0).exp() } else { 0.0 };
            let accepted = ratio.is_finite() && rng.random::<f64>().ln() < ratio;
            if !accepted {
                self.w[i] = old_w;
            }
            scales.record(i, prob, accepted, adapting);
        }
        scales.end_sweep(adapting);
        self.prior_ll = gaussian_vecchia_loglik(&factor, &self.w, &self.mean)?;
        self.data_ll = data_term(self.ds, &self.w, tau2);
        self.factor = Some(factor);
        nonfinite("latent Vecchia likelihood", self.prior_ll + self.data_ll)
    }
}

// ---------------------------------------------------------------------------

#[derive(Clone)]
struct DenseSlot {
    phi: f64,
    /// Column-major n×n correlation matrix.
    vals: Vec<f64>,
    last_used: u64,
}

pub(crate) struct FullLatentEngine<'a> {
    ds: &'a Dataset,
    n: usize,
    dist: Vec<f64>,
    slots: Vec<[DenseSlot; 2]>,
    tick: u64,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    /// Inverse of the committed covariance, built lazily for the sweep.
    precision: Option<DMatrix<f64>>,
    mean: Vec<f64>,
    w: Vec<f64>,
    tau2: f64,
    prior_ll: f64,
    data_ll: f64,
    staged: Option<FlStage>,
}

struct FlStage {
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    mean: Vec<f64>,
    tau2: f64,
    prior_ll: f64,
    data_ll: f64,
}

/// Dense latent covariance with the relative jitter used by the full-latent model.
pub(crate) fn full_latent_cov(ds: &Dataset, params: &SvcParams) -> Result<DMatrix<f64>> {
    let mut k = crate::covariance::dense_cov_matrix(ds.sites(), ds.design(), params, false)?;
    add_jitter(&mut k);
    Ok(k)
}

fn add_jitter(k: &mut DMatrix<f64>) {
    let n = k.nrows();
    if n == 0 {
        return;
    }
    let j = DENSE_LATENT_JITTER * (0..n).map(|i| k[(i, i)]).sum::<f64>() / n as f64;
    for i in 0..n {
        k[(i, i)] += j;
    }
}

pub(crate) fn mvn_prior(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>, r: &[f64]) -> f64 {
    let mut y = DVector::from_column_slice(r);
    chol.l_dirty().solve_lower_triangular_mut(&mut y);
    let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    -0.5 * y.norm_squared() - logdet - r.len() as f64 * normal::LN_SQRT_2PI
}

impl<'a> FullLatentEngine<'a> {
    pub(crate) fn new(ds: &'a Dataset, w: Vec<f64>) -> Result<Self> {
        let n = ds.n();
        if w.len() != n {
            return Err(Error::Dimension("latent start vector has the wrong length".into()));
        }
        let s = ds.sites();
        let dist: Vec<f64> = (0..n * n).map(|t| distance(&s[t % n], &s[t / n])).collect();
        let empty = DenseSlot {
            phi: f64::NAN,
            vals: Vec::new(),
            last_used: 0,
        };
        Ok(FullLatentEngine {
            ds,
            n,
            dist,
            slots: vec![[empty.clone(), empty]; ds.p()],
            tick: 0,
            chol: None,
            precision: None,
            mean: Vec::new(),
            w,
            tau2: f64::NAN,
            prior_ll: 0.0,
            data_ll: 0.0,
            staged: None,
        })
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
            pair[k].phi = phi;
            pair[k].vals.clear();
            pair[k].vals.extend(self.dist.iter().map(|d| (-phi * d).exp()));
            k
        };
        pair[k].last_used = tick;
        k
    }

    fn factorize(&mut self, params: &SvcParams) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let n = self.n;
        let p = self.ds.p();
        let chosen: Vec<usize> = (0..p).map(|j| self.slot_for(j, params.phi[j])).collect();
        let mut k = DMatrix::<f64>::zeros(n, n);
        let x = self.ds.design();
        for (j, &slot) in chosen.iter().enumerate() {
            let e = &self.slots[j][slot].vals;
            let s = params.sigma2[j];
            let kk = k.as_mut_slice();
            for b in 0..n {
                let ub = s * x[b * p + j];
                if ub == 0.0 {
                    continue;
                }
                let col = &mut kk[b * n..(b + 1) * n];
                let ecol = &e[b * n..(b + 1) * n];
                for a in b..n {
                    col[a] += ub * x[a * p + j] * ecol[a];
                }
            }
        }
        add_jitter(&mut k);
        k.cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("dense latent covariance".into()))
    }

    fn residual(&self, mean: &[f64]) -> Vec<f64> {
        self.w.iter().zip(mean).map(|(w, m)| w - m).collect()
    }
}

impl Engine for FullLatentEngine<'_> {
    fn evaluate(&mut self, params: &SvcParams, block: Block) -> Result<f64> {
        let mut st = FlStage {
            chol: None,
            mean: Vec::new(),
            tau2: self.tau2,
            prior_ll: self.prior_ll,
            data_ll: self.data_ll,
        };
        match block {
            Block::All => {
                let chol = self.factorize(params)?;
                st.mean = self.ds.mean(&params.alpha);
                st.prior_ll = mvn_prior(&chol, &self.residual(&st.mean));
                st.chol = Some(chol);
                st.tau2 = params.tau2;
                st.data_ll = data_term(self.ds, &self.w, params.tau2);
            }
            Block::Alpha => {
                st.mean = self.ds.mean(&params.alpha);
                st.prior_ll = mvn_prior(self.chol.as_ref().expect("initialized"), &self.residual(&st.mean));
            }
            Block::Pair(_) => {
                let chol = self.factorize(params)?;
                st.prior_ll = mvn_prior(&chol, &self.residual(&self.mean));
                st.chol = Some(chol);
            }
            Block::Nugget => {
                st.tau2 = params.tau2;
                st.data_ll = data_term(self.ds, &self.w, params.tau2);
            }
        }
        let total = nonfinite("full-latent likelihood", st.prior_ll + st.data_ll)?;
        self.staged = Some(st);
        Ok(total)
    }

    fn accept(&mut self) {
        if let Some(st) = self.staged.take() {
            if st.chol.is_some() {
                self.chol = st.chol;
                self.precision = None;
            }
            if !st.mean.is_empty() {
                self.mean = st.mean;
            }
            self.tau2 = st.tau2;
            self.prior_ll = st.prior_ll;
            self.data_ll = st.data_ll;
        }
    }

    fn latent(&self) -> Option<&[f64]> {
        Some(&self.w)
    }

    fn sweep(&mut self, _params: &SvcParams, scales: &mut SiteScales, adapting: bool, rng: &mut StreamRng) -> Result<f64> {
        let chol = self.chol.as_ref().expect("initialized");
        let q = self.precision.get_or_insert_with(|| chol.inverse());
        let n = self.n;
        let r = DVector::from_vec(self.w.iter().zip(&self.mean).map(|(w, m)| w - m).collect());
        let mut qr = &*q * r;
        let tau2 = self.tau2;
        for i in 0..n {
            let step: f64 = rng.sample(StandardNormal);
            let delta = scales.sd(i) * step;
            let qii = q[(i, i)];
            let d_prior = -(delta * qr[i] + 0.5 * delta * delta * qii);
            let d_data = data_site(self.ds, i, self.w[i] + delta, tau2) - data_site(self.ds, i, self.w[i], tau2);
            let ratio = d_prior + d_data;
            let prob = if ratio.is_finite() { ratio.min(0.0).exp() } else { 0.0 };
            let accepted = ratio.is_finite() && rng.random::<f64>().ln() < ratio;
            if accepted {
                self.w[i] += delta;
                qr.axpy(delta, &q.column(i), 1.0);
            }
            scales.record(i, prob, accepted, adapting);
        }
        scales.end_sweep(adapting);
        self.prior_ll = mvn_prior(chol, &self.residual(&self.mean));
        self.data_ll = data_term(self.ds, &self.w, tau2);
        nonfinite("full-latent likelihood", self.prior_ll + self.data_ll)
    }
}
