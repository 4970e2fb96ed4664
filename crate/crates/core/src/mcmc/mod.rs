//! Posterior sampling for the three model kinds by blocked adaptive
//! random-walk Metropolis in the transformed space
//! `(α, log σ², log φ, log τ²)`.

mod adapt;
pub mod diagnostics;
mod engine;
pub mod output;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub use diagnostics::{ess, rhat};
pub use engine::ModelSetup;
pub use output::{diagnostics_json, read_draws_csv, write_diagnostics_json, write_draws_csv};

use adapt::{BlockAdapter, SiteScales};
use engine::{Block, Engine};

use crate::domain::{max_pairwise_distance, Dataset, ModelKind, PriorConfig, RunConfig, SvcParams};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::rng::{self, StreamRng};
use crate::vecchia;

/// Log-prior density of `params` plus the Jacobian of the log transforms.
pub fn log_prior(params: &SvcParams, priors: &PriorConfig) -> f64 {
    let mut lp = 0.0;
    for (a, pr) in params.alpha.iter().zip(&priors.alpha) {
        lp += pr.log_pdf(*a);
    }
    for (s, pr) in params.sigma2.iter().zip(&priors.sigma2) {
        lp += pr.log_pdf(*s) + s.ln();
    }
    for (f, pr) in params.phi.iter().zip(&priors.phi) {
        lp += pr.log_pdf(*f) + f.ln();
    }
    lp + priors.tau2.log_pdf(params.tau2) + params.tau2.ln()
}

/// Unnormalized log-posterior on the transformed scale, evaluated from
/// scratch. `w` is required for the latent kinds and ignored otherwise.
pub fn log_posterior(
    setup: &ModelSetup,
    dataset: &Dataset,
    params: &SvcParams,
    w: Option<&[f64]>,
    priors: &PriorConfig,
) -> Result<f64> {
    params.validate(dataset.p())?;
    let need_w = || {
        w.filter(|w| w.len() == dataset.n())
            .ok_or_else(|| Error::Contract(format!("{} needs a latent vector of length n", setup.kind)))
    };
    let ll = match setup.kind {
        ModelKind::LatentFree => vecchia::censored_vecchia_loglik(dataset, params, setup.sets()?)?,
        ModelKind::LatentVecchia => {
            let w = need_w()?;
            let f = vecchia::build_factor(dataset.sites(), dataset.design(), params, setup.sets()?.clone(), false)?;
            vecchia::latent_vecchia_logdensity(w, &dataset.mean(&params.alpha), &f)? + engine::data_term(dataset, w, params.tau2)
        }
        ModelKind::FullLatent => {
            let w = need_w()?;
            let k = engine::full_latent_cov(dataset, params)?;
            let chol = k
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite("dense latent covariance".into()))?;
            let mean = dataset.mean(&params.alpha);
            let r: Vec<f64> = w.iter().zip(&mean).map(|(a, b)| a - b).collect();
            engine::mvn_prior(&chol, &r) + engine::data_term(dataset, w, params.tau2)
        }
    };
    Ok(ll + log_prior(params, priors))
}

/// Execution knobs that do not change the sampled values.
#[derive(Clone, Copy, Debug, Default)]
pub struct SamplerOptions {
    pub exec: Exec,
    /// Keep post-burn-in latent draws (latent kinds only).
    pub record_latent: bool,
    /// Compare the cached log-posterior with a fresh evaluation every this
    /// many iterations (0 disables).
    pub verify_every: usize,
}

/// Parameter names in draw-column order.
pub fn param_names(p: usize) -> Vec<String> {
    let mut v: Vec<String> = (1..=p).map(|j| format!("alpha{j}")).collect();
    v.extend((1..=p).map(|j| format!("sigma2_{j}")));
    v.extend((1..=p).map(|j| format!("phi{j}")));
    v.push("tau2".into());
    v
}

/// Natural-scale parameter vector in draw-column order.
pub fn flatten_params(params: &SvcParams) -> Vec<f64> {
    let mut v = params.alpha.clone();
    v.extend(&params.sigma2);
    v.extend(&params.phi);
    v.push(params.tau2);
    v
}

pub fn unflatten_params(v: &[f64], p: usize) -> SvcParams {
    SvcParams {
        alpha: v[..p].to_vec(),
        sigma2: v[p..2 * p].to_vec(),
        phi: v[2 * p..3 * p].to_vec(),
        tau2: v[3 * p],
    }
}

/// Post-burn-in output of one chain.
#[derive(Clone, Debug)]
pub struct ChainSamples {
    pub chain: usize,
    /// One natural-scale parameter vector per kept iteration.
    pub draws: Vec<Vec<f64>>,
    pub latent: Option<Vec<Vec<f64>>>,
    pub log_posterior: Vec<f64>,
    /// Post-burn-in acceptance rate per block.
    pub acceptance: Vec<(String, f64)>,
    pub wall_time: f64,
    /// Proposals rejected because the target could not be evaluated.
    pub auto_rejected: u64,
}

/// Draws from all chains with convergence diagnostics.
#[derive(Clone, Debug)]
pub struct PosteriorSamples {
    pub kind: ModelKind,
    pub p: usize,
    pub names: Vec<String>,
    pub iterations: usize,
    pub burn_in: usize,
    pub chains: Vec<ChainSamples>,
    pub rhat: Vec<f64>,
    /// Summed over chains.
    pub ess: Vec<f64>,
}

impl PosteriorSamples {
    pub fn from_chains(kind: ModelKind, p: usize, iterations: usize, burn_in: usize, chains: Vec<ChainSamples>) -> Result<Self> {
        let names = param_names(p);
        let mut rh = Vec::with_capacity(names.len());
        let mut es = Vec::with_capacity(names.len());
        for k in 0..names.len() {
            let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.draws.iter().map(|d| d[k]).collect()).collect();
            let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            let enough = refs.iter().all(|c| c.len() >= 10);
            rh.push(if enough { rhat(&refs)? } else { f64::NAN });
            es.push(if enough {
                refs.iter().map(|c| ess(c)).sum::<Result<f64>>()?
            } else {
                f64::NAN
            });
        }
        Ok(PosteriorSamples {
            kind,
            p,
            names,
            iterations,
            burn_in,
            chains,
            rhat: rh,
            ess: es,
        })
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    /// All draws, chain by chain.
    pub fn draws(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.chains.iter().flat_map(|c| c.draws.iter())
    }

    /// Latent draws aligned with [`Self::draws`], when recorded.
    pub fn latent_draws(&self) -> Option<Vec<&Vec<f64>>> {
        let mut out = Vec::new();
        for c in &self.chains {
            out.extend(c.latent.as_ref()?.iter());
        }
        Some(out)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.draws().map(|d| d[k]).collect()
    }

    pub fn mean(&self, k: usize) -> f64 {
        let c = self.column(k);
        par::kahan_sum(c.iter().copied()) / c.len() as f64
    }

    /// Central credible interval at `level` from empirical quantiles.
    pub fn interval(&self, k: usize, level: f64) -> (f64, f64) {
        let mut c = self.column(k);
        c.sort_by(f64::total_cmp);
        let a = (1.0 - level) / 2.0;
        (
            crate::simulate::empirical_quantile(&c, a),
            crate::simulate::empirical_quantile(&c, 1.0 - a),
        )
    }

    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn params_at(&self, draw: &[f64]) -> SvcParams {
        unflatten_params(draw, self.p)
    }

    pub fn wall_time(&self) -> f64 {
        self.chains.iter().map(|c| c.wall_time).sum()
    }
}

/// Starting point: least squares on the observed rows, a geometry-based
/// decay, and the latent field at the data.
pub(crate) struct Start {
    params: SvcParams,
    w: Option<Vec<f64>>,
    alpha_sd: Vec<f64>,
}

pub(crate) fn initial_state(kind: ModelKind, ds: &Dataset, rng: &mut StreamRng) -> Result<Start> {
    let p = ds.p();
    let obs = ds.observed_indices();
    let rows = if obs.len() > p { obs } else { (0..ds.n()).collect() };
    let x = DMatrix::from_fn(rows.len(), p, |r, j| ds.x_row(rows[r])[j]);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| ds.z()[i]));
    let mut xtx = x.transpose() * &x;
    let ridge = 1e-8 * (0..p).map(|j| xtx[(j, j)]).fold(0.0, f64::max).max(1e-300);
    for j in 0..p {
        xtx[(j, j)] += ridge;
    }
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::Numerical("least-squares start: design is degenerate".into()))?;
    let alpha = chol.solve(&(x.transpose() * &y));
    let resid = &y - &x * &alpha;
    let dof = (rows.len() as f64 - p as f64).max(1.0);
    let resvar = (resid.norm_squared() / dof).max(1e-8);
    let inv = chol.inverse();
    let alpha_sd: Vec<f64> = (0..p).map(|j| (resvar * inv[(j, j)]).sqrt().max(1e-6)).collect();
    let dmax = max_pairwise_distance(ds.sites());
    let phi0 = if dmax > 0.0 { 10.0 / dmax } else { 10.0 };
    // chains start from perturbed copies of the same point
    let mut jit = |sd: f64| -> f64 { sd * rng.sample::<f64, _>(StandardNormal) };
    let params = SvcParams {
        alpha: (0..p).map(|j| alpha[j] + jit(alpha_sd[j])).collect(),
        sigma2: (0..p).map(|_| resvar / p as f64 * jit(0.2).exp()).collect(),
        phi: (0..p).map(|_| phi0 * jit(0.2).exp()).collect(),
        tau2: 0.1 * resvar * jit(0.2).exp(),
    };
    let w = kind.has_latent().then(|| {
        let tau = params.tau2.sqrt();
        (0..ds.n())
            .map(|i| if ds.censored()[i] { ds.limit() - tau } else { ds.z()[i] })
            .collect()
    });
    Ok(Start { params, w, alpha_sd })
}

/// Runs one chain of the sampler.
pub fn run_chain(
    setup: &ModelSetup,
    dataset: &Dataset,
    run: &RunConfig,
    priors: &PriorConfig,
    chain: usize,
    opts: &SamplerOptions,
) -> Result<ChainSamples> {
    run.validate()?;
    priors.validate(dataset.p())?;
    if setup.kind != run.model {
        return Err(Error::Contract(format!("setup for {} used with a {} run", setup.kind, run.model)));
    }
    let mut rng = rng::stream(run.seed, &[chain as u64]);
    let start = initial_state(setup.kind, dataset, &mut rng)?;
    let mut engine = engine::new_engine(setup, dataset, opts.exec, start.w.clone())?;
    let verify = |params: &SvcParams, w: Option<&[f64]>| log_posterior(setup, dataset, params, w, priors);
    run_engine(engine.as_mut(), start, priors, run.iterations, run.burn_in, chain, &mut rng, opts, &verify)
}

fn block_name(block: Block, p: usize) -> String {
    match block {
        Block::Alpha => "alpha".into(),
        Block::Pair(j) if p > 0 => format!("sigma2_phi_{}", j + 1),
        Block::Nugget => "tau2".into(),
        _ => "all".into(),
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn run_engine(
    engine: &mut dyn Engine,
    start: Start,
    priors: &PriorConfig,
    iterations: usize,
    burn_in: usize,
    chain: usize,
    rng: &mut StreamRng,
    opts: &SamplerOptions,
    verify: &dyn Fn(&SvcParams, Option<&[f64]>) -> Result<f64>,
) -> Result<ChainSamples> {
    let clock = Instant::now();
    let p = start.params.p();
    let mut params = start.params;
    let ll = engine.evaluate(&params, Block::All).map_err(|e| {
        Error::Numerical(format!("log-likelihood at the initial state cannot be evaluated: {e}"))
    })?;
    let lp = log_prior(&params, priors);
    if !ll.is_finite() {
        return Err(Error::Numerical(format!("log-likelihood at the initial state is {ll}")));
    }
    if !lp.is_finite() {
        return Err(Error::Numerical(format!("log-prior at the initial state is {lp}")));
    }
    engine.accept();
    let mut ll = ll;
    let mut lpost = ll + lp;

    let mut alpha_ad = BlockAdapter::new(&start.alpha_sd.iter().map(|s| 2.0 * s).collect::<Vec<_>>());
    let mut pair_ad: Vec<BlockAdapter> = (0..p).map(|_| BlockAdapter::new(&[0.3, 0.3])).collect();
    let mut tau_ad = BlockAdapter::new(&[0.3]);
    let mut sites = engine
        .latent()
        .map(|w| SiteScales::new(w.len(), params.tau2.sqrt().max(1e-3)));

    let kept = iterations - burn_in;
    let mut draws = Vec::with_capacity(kept);
    let mut latent = (opts.record_latent && sites.is_some()).then(|| Vec::with_capacity(kept));
    let mut trace = Vec::with_capacity(kept);
    let mut auto_rejected = 0u64;

    for t in 0..iterations {
        let adapting = t < burn_in;
        if t == burn_in {
            alpha_ad.reset_counts();
            pair_ad.iter_mut().for_each(BlockAdapter::reset_counts);
            tau_ad.reset_counts();
            if let Some(s) = sites.as_mut() {
                s.reset_counts();
            }
        }
        // block proposals: α, each (log σ²_j, log φ_j), log τ²
        for b in 0..p + 2 {
            let (block, ad) = match b {
                0 => (Block::Alpha, &mut alpha_ad),
                b if b <= p => (Block::Pair(b - 1), &mut pair_ad[b - 1]),
                _ => (Block::Nugget, &mut tau_ad),
            };
            let current: Vec<f64> = match block {
                Block::Alpha => params.alpha.clone(),
                Block::Pair(j) => vec![params.sigma2[j].ln(), params.phi[j].ln()],
                _ => vec![params.tau2.ln()],
            };
            let prop = ad.propose(&current, rng);
            let mut cand = params.clone();
            match block {
                Block::Alpha => cand.alpha = prop.clone(),
                Block::Pair(j) => {
                    cand.sigma2[j] = prop[0].exp();
                    cand.phi[j] = prop[1].exp();
                }
                _ => cand.tau2 = prop[0].exp(),
            }
            let valid = flatten_params(&cand).iter().all(|v| v.is_finite())
                && cand.sigma2.iter().chain(&cand.phi).all(|v| *v > 0.0)
                && cand.tau2 > 0.0;
            let outcome = if valid { engine.evaluate(&cand, block).ok() } else { None };
            let (accepted, prob) = match outcome {
                Some(new_ll) => {
                    let new_lpost = new_ll + log_prior(&cand, priors);
                    let ratio = new_lpost - lpost;
                    if ratio.is_finite() {
                        let acc = rng.random::<f64>().ln() < ratio;
                        if acc {
                            engine.accept();
                            params = cand;
                            ll = new_ll;
                            lpost = new_lpost;
                        }
                        (acc, ratio.min(0.0).exp())
                    } else {
                        auto_rejected += 1;
                        (false, 0.0)
                    }
                }
                None => {
                    auto_rejected += 1;
                    (false, 0.0)
                }
            };
            ad.record(accepted);
            if adapting {
                let now: Vec<f64> = if accepted { prop } else { current };
                ad.adapt(prob, &now);
            }
        }
        if let Some(s) = sites.as_mut() {
            ll = engine.sweep(&params, s, adapting, rng)?;
            lpost = ll + log_prior(&params, priors);
        }
        if opts.verify_every > 0 && (t + 1) % opts.verify_every == 0 {
            let fresh = verify(&params, engine.latent())?;
            if (fresh - lpost).abs() > 1e-7 * fresh.abs().max(1.0) {
                return Err(Error::Numerical(format!(
                    "cached log-posterior {lpost} differs from fresh value {fresh} at iteration {t}"
                )));
            }
        }
        if !adapting {
            draws.push(flatten_params(&params));
            trace.push(lpost);
            if let (Some(l), Some(w)) = (latent.as_mut(), engine.latent()) {
                l.push(w.to_vec());
            }
        }
    }
    let _ = ll;
    let mut acceptance = vec![(block_name(Block::Alpha, p), alpha_ad.rate())];
    for (j, a) in pair_ad.iter().enumerate() {
        acceptance.push((block_name(Block::Pair(j), p), a.rate()));
    }
    acceptance.push((block_name(Block::Nugget, p), tau_ad.rate()));
    if let Some(s) = &sites {
        acceptance.push(("w".into(), s.rate()));
    }
    Ok(ChainSamples {
        chain,
        draws,
        latent,
        log_posterior: trace,
        acceptance,
        wall_time: clock.elapsed().as_secs_f64(),
        auto_rejected,
    })
}

/// Runs `run.chains` chains, in parallel under `opts.exec`.
pub fn run_chains(
    setup: &ModelSetup,
    dataset: &Dataset,
    run: &RunConfig,
    priors: &PriorConfig,
    opts: &SamplerOptions,
) -> Result<PosteriorSamples> {
    run.validate()?;
    let chains = par::try_map_range(opts.exec, run.chains, |c| run_chain(setup, dataset, run, priors, c, opts))?;
    PosteriorSamples::from_chains(run.model, dataset.p(), run.iterations, run.burn_in, chains)
}

/// Builds the neighbour sets for `run.model` and samples.
pub fn fit(dataset: &Dataset, run: &RunConfig, priors: &PriorConfig, opts: &SamplerOptions) -> Result<(ModelSetup, PosteriorSamples)> {
    let setup = ModelSetup::new(run.model, dataset, run.m)?;
    let samples = run_chains(&setup, dataset, run, priors, opts)?;
    Ok((setup, samples))
}
