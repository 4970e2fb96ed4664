//! Fits the three samplers on shared simulated train/test splits and scores
//! their parameter posteriors, cost and held-out predictions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{mean_crps, rmse};
use super::provenance::{build_id, config_hash};
use crate::domain::{reference_params, ModelKind, PriorConfig, RunConfig, SvcParams};
use crate::error::{Error, Result};
use crate::mcmc::{fit, SamplerOptions};
use crate::par::Exec;
use crate::predict::{posterior_predictive, LatentFreeOptions, PredictOptions, PredictionGrid};
use crate::rng::derive_seed;
use crate::simulate::{apply_censoring, simulate_holdout, SimulationOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComparisonConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub replicates: usize,
    pub methods: Vec<ModelKind>,
    /// Conditioning-set sizes; the full-latent sampler ignores them and runs
    /// once per level, reported with `M = 0`.
    #[serde(rename = "M")]
    pub m_values: Vec<usize>,
    pub levels: Vec<f64>,
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    /// Upper bound on conditional simulations per fit; draws are thinned evenly.
    pub predictive_draws: usize,
    pub joint_predictions: bool,
    pub inflate_pseudo_noise: bool,
    /// Skip prediction and report only posterior summaries and cost.
    pub skip_prediction: bool,
    pub params: SvcParams,
    pub simulation: SimulationOptions,
    pub seed: u64,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig {
            n_train: 200,
            n_test: 400,
            replicates: 1,
            methods: ModelKind::ALL.to_vec(),
            m_values: vec![10, 30, 50],
            levels: vec![0.0, 0.25, 0.5],
            chains: 4,
            iterations: 2000,
            burn_in: 1000,
            predictive_draws: 500,
            joint_predictions: false,
            inflate_pseudo_noise: false,
            skip_prediction: false,
            params: reference_params(),
            simulation: SimulationOptions::default(),
            seed: 1,
        }
    }
}

impl ComparisonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train < 2 || self.replicates == 0 || self.methods.is_empty() || self.levels.is_empty() {
            return Err(Error::InvalidConfig("need n_train ≥ 2, replicates ≥ 1, methods and levels".into()));
        }
        if !self.skip_prediction && (self.n_test == 0 || self.predictive_draws == 0) {
            return Err(Error::InvalidConfig("prediction needs n_test ≥ 1 and predictive_draws ≥ 1".into()));
        }
        if self.methods.iter().any(|m| *m != ModelKind::FullLatent) && (self.m_values.is_empty() || self.m_values.contains(&0)) {
            return Err(Error::InvalidConfig("Vecchia methods need M values of at least 1".into()));
        }
        self.run_config(ModelKind::LatentFree, 1, 0.0, 0).validate()?;
        self.params.validate(self.params.p())
    }

    fn run_config(&self, model: ModelKind, m: usize, level: f64, seed: u64) -> RunConfig {
        RunConfig {
            model,
            m,
            chains: self.chains,
            iterations: self.iterations,
            burn_in: self.burn_in,
            seed,
            censoring: level,
            joint_predictions: self.joint_predictions,
            inflate_pseudo_noise: self.inflate_pseudo_noise,
            output_dir: None,
        }
    }
}

/// Posterior summary of one fixed effect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummary {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// One (replicate, method, M, level) fit.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub replicate: usize,
    pub method: ModelKind,
    pub m: usize,
    pub level: f64,
    /// 95% central credible intervals.
    pub alpha: Vec<AlphaSummary>,
    pub max_rhat: f64,
    pub min_ess: f64,
    pub wall_time_s: f64,
    /// Mean over chains of the per-chain time for 1000 iterations.
    pub sec_per_1000_iter: f64,
    pub ess_per_s: f64,
    pub rmse: f64,
    pub crps: f64,
    pub build_id: String,
    pub config_hash: String,
}

#[derive(Clone, Debug)]
pub struct ComparisonResults {
    pub p: usize,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonResults {
    /// Column schema of the results CSV. `wall_time_s`, `sec_per_1000_iter`
    /// and `ess_per_s` are measured and differ between runs.
    pub fn header(p: usize) -> Vec<String> {
        let mut h: Vec<String> = ["replicate", "method", "M", "level"].iter().map(|s| s.to_string()).collect();
        for j in 1..=p {
            h.extend([format!("alpha{j}_mean"), format!("alpha{j}_lo"), format!("alpha{j}_hi")]);
        }
        h.extend(
            [
                "max_rhat",
                "min_ess",
                "wall_time_s",
                "sec_per_1000_iter",
                "ess_per_s",
                "rmse",
                "crps",
                "build_id",
                "config_hash",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        h
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(Self::header(self.p)).map_err(|e| csv_err(path, e))?;
        for r in &self.rows {
            let mut rec = vec![r.replicate.to_string(), r.method.to_string(), r.m.to_string(), r.level.to_string()];
            for a in &r.alpha {
                rec.extend([a.mean.to_string(), a.lo.to_string(), a.hi.to_string()]);
            }
            rec.extend([
                r.max_rhat.to_string(),
                r.min_ess.to_string(),
                r.wall_time_s.to_string(),
                r.sec_per_1000_iter.to_string(),
                r.ess_per_s.to_string(),
                r.rmse.to_string(),
                r.crps.to_string(),
                r.build_id.clone(),
                r.config_hash.clone(),
            ]);
            w.write_record(rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Runs every (replicate, level, method, M) fit in a fixed order. Chains
/// and predictions inside each fit run under `exec`.
pub fn method_comparison_experiment(cfg: &ComparisonConfig, exec: Exec) -> Result<ComparisonResults> {
    cfg.validate()?;
    let hash = config_hash(cfg)?;
    let p = cfg.params.p();
    let mut rows = Vec::new();
    for r in 0..cfg.replicates {
        let split = simulate_holdout(
            cfg.n_train,
            cfg.n_test,
            &cfg.params,
            &cfg.simulation,
            derive_seed(cfg.seed, &[0, r as u64]),
        )?;
        let grid = (!cfg.skip_prediction)
            .then(|| PredictionGrid::new(split.test.sites().to_vec(), split.test.design().to_vec(), p))
            .transpose()?;
        for (li, &level) in cfg.levels.iter().enumerate() {
            let train = apply_censoring(&split.train, level)?;
            let priors = PriorConfig::default_for(train.sites(), p);
            for (mi, &method) in cfg.methods.iter().enumerate() {
                let ms: Vec<usize> = if method == ModelKind::FullLatent {
                    vec![0]
                } else {
                    cfg.m_values.clone()
                };
                for m in ms {
                    let cell = [1, r as u64, li as u64, mi as u64, m as u64];
                    let run = cfg.run_config(method, m.max(1), level, derive_seed(cfg.seed, &cell));
                    let opts = SamplerOptions {
                        exec,
                        record_latent: method.has_latent() && !cfg.skip_prediction,
                        verify_every: 0,
                    };
                    let (_, samples) = fit(&train, &run, &priors, &opts)?;
                    let alpha = (0..p)
                        .map(|j| {
                            let (lo, hi) = samples.interval(j, 0.95);
                            AlphaSummary {
                                mean: samples.mean(j),
                                lo,
                                hi,
                            }
                        })
                        .collect();
                    let wall = samples.wall_time();
                    let per_1000 = samples.chains.iter().map(|c| c.wall_time).sum::<f64>() / samples.chains.len() as f64
                        / cfg.iterations as f64
                        * 1000.0;
                    let min_ess = samples.ess.iter().copied().fold(f64::INFINITY, f64::min);
                    let (rm, cr) = match &grid {
                        None => (f64::NAN, f64::NAN),
                        Some(g) => {
                            let popts = PredictOptions {
                                m: m.max(1),
                                joint: cfg.joint_predictions,
                                latent_free: LatentFreeOptions {
                                    inflate_pseudo_noise: cfg.inflate_pseudo_noise,
                                },
                                thin: samples.n_draws().div_ceil(cfg.predictive_draws),
                                exec,
                            };
                            let seed = derive_seed(cfg.seed, &[2, r as u64, li as u64, mi as u64, m as u64]);
                            let pd = posterior_predictive(&samples, &train, g, method, &popts, seed)?;
                            let truth = &split.test_truth.signal;
                            (rmse(&pd.mean, truth)?, mean_crps(pd.n_sites(), |j| pd.site_draws(j), truth)?)
                        }
                    };
                    rows.push(ComparisonRow {
                        replicate: r,
                        method,
                        m,
                        level,
                        alpha,
                        max_rhat: samples.max_rhat(),
                        min_ess,
                        wall_time_s: wall,
                        sec_per_1000_iter: per_1000,
                        ess_per_s: min_ess / wall,
                        rmse: rm,
                        crps: cr,
                        build_id: build_id().to_string(),
                        config_hash: hash.clone(),
                    });
                }
            }
        }
    }
    Ok(ComparisonResults { p, rows })
}
