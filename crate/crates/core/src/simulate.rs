//! Synthetic SVC datasets and empirical-quantile censoring.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{distance, Dataset, Site, SvcParams};
use crate::error::{Error, Result};
use crate::rng;

/// Diagonal jitter added to correlation matrices before factorizing.
const SIM_JITTER: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateLaw {
    #[default]
    Normal,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationOptions {
    /// First design column is all ones.
    pub intercept: bool,
    pub covariate_law: CovariateLaw,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            intercept: true,
            covariate_law: CovariateLaw::Normal,
        }
    }
}

/// Coefficient fields and noise-free signal behind a simulated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct TrueFields {
    /// Row-major n×p values of β_j(s_i) = α_j + η_j(s_i).
    pub beta: Vec<f64>,
    /// Σ_j β_j(s_i) x_i(j).
    pub signal: Vec<f64>,
}

/// Draws `n` sites uniform on the unit square with their design rows.
pub fn simulate_sites(n: usize, p: usize, opts: &SimulationOptions, seed: u64) -> (Vec<Site>, Vec<f64>) {
    let mut srng = rng::stream(seed, &[0]);
    let sites: Vec<Site> = (0..n).map(|_| [srng.random::<f64>(), srng.random::<f64>()]).collect();
    let design = simulate_design(n, p, opts, rng::derive_seed(seed, &[1]));
    (sites, design)
}

/// Row-major n×p covariates following `opts`.
pub fn simulate_design(n: usize, p: usize, opts: &SimulationOptions, seed: u64) -> Vec<f64> {
    let mut xrng = rng::stream(seed, &[]);
    let mut design = Vec::with_capacity(n * p);
    for _ in 0..n {
        for j in 0..p {
            let v = if j == 0 && opts.intercept {
                1.0
            } else {
                match opts.covariate_law {
                    CovariateLaw::Normal => xrng.sample(StandardNormal),
                    CovariateLaw::Uniform => xrng.random::<f64>(),
                }
            };
            design.push(v);
        }
    }
    design
}

/// Simulates responses at given sites and covariates.
pub fn simulate_at(sites: &[Site], design: &[f64], params: &SvcParams, seed: u64) -> Result<(Dataset, TrueFields)> {
    let n = sites.len();
    let p = params.p();
    if n == 0 {
        return Err(Error::InvalidConfig("simulation needs n ≥ 1".into()));
    }
    params.validate(p)?;
    if design.len() != n * p {
        return Err(Error::Dimension(format!("design has {} entries for n={n}, p={p}", design.len())));
    }
    let mut beta = vec![0.0; n * p];
    for j in 0..p {
        let corr = DMatrix::from_fn(n, n, |a, b| {
            let c = (-params.phi[j] * distance(&sites[a], &sites[b])).exp();
            if a == b {
                c + SIM_JITTER
            } else {
                c
            }
        });
        let chol = corr.cholesky().ok_or_else(|| {
            Error::NotPositiveDefinite(format!("correlation matrix of coefficient {} is not positive definite", j + 1))
        })?;
        let mut erng = rng::stream(seed, &[2, j as u64]);
        let e = nalgebra::DVector::from_fn(n, |_, _| erng.sample::<f64, _>(StandardNormal));
        let eta = chol.l() * e;
        let sd = params.sigma2[j].sqrt();
        for i in 0..n {
            beta[i * p + j] = params.alpha[j] + sd * eta[i];
        }
    }
    let signal: Vec<f64> = (0..n)
        .map(|i| (0..p).map(|j| beta[i * p + j] * design[i * p + j]).sum())
        .collect();
    let mut nrng = rng::stream(seed, &[3]);
    let tau = params.tau2.sqrt();
    let z: Vec<f64> = signal
        .iter()
        .map(|s| s + tau * nrng.sample::<f64, _>(StandardNormal))
        .collect();
    let data = Dataset::uncensored(sites.to_vec(), design.to_vec(), p, z)?;
    Ok((data, TrueFields { beta, signal }))
}

/// Uncensored SVC dataset on the unit square with its true fields.
pub fn simulate_svc_dataset(
    n: usize,
    params: &SvcParams,
    opts: &SimulationOptions,
    seed: u64,
) -> Result<(Dataset, TrueFields)> {
    let (sites, design) = simulate_sites(n, params.p(), opts, seed);
    simulate_at(&sites, &design, params, seed)
}

/// A training set and a held-out set drawn jointly from one field.
#[derive(Clone, Debug)]
pub struct HoldoutSplit {
    pub train: Dataset,
    pub train_truth: TrueFields,
    pub test: Dataset,
    pub test_truth: TrueFields,
}

pub fn simulate_holdout(
    n_train: usize,
    n_test: usize,
    params: &SvcParams,
    opts: &SimulationOptions,
    seed: u64,
) -> Result<HoldoutSplit> {
    let (all, truth) = simulate_svc_dataset(n_train + n_test, params, opts, seed)?;
    let p = params.p();
    let split = |range: std::ops::Range<usize>| {
        let idx: Vec<usize> = range.collect();
        let t = TrueFields {
            beta: idx.iter().flat_map(|&i| truth.beta[i * p..(i + 1) * p].iter().copied()).collect(),
            signal: idx.iter().map(|&i| truth.signal[i]).collect(),
        };
        (all.subset(&idx), t)
    };
    let (train, train_truth) = split(0..n_train);
    let (test, test_truth) = split(n_train..n_train + n_test);
    Ok(HoldoutSplit {
        train,
        train_truth,
        test,
        test_truth,
    })
}

/// Inclusive linear-interpolation quantile of `sorted` at `level`.
pub fn empirical_quantile(sorted: &[f64], level: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Left-censors the responses at their empirical `level`-quantile.
///
/// A dataset that is already censored is returned unchanged when its
/// censored fraction is within 1/n of `level`.
pub fn apply_censoring(dataset: &Dataset, level: f64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::InvalidConfig(format!("censoring level {level} must lie in [0, 1)")));
    }
    let n = dataset.n();
    if dataset.n_censored() > 0 {
        let frac = dataset.n_censored() as f64 / n as f64;
        if (frac - level).abs() <= 1.0 / n as f64 {
            return Ok(dataset.clone());
        }
        return Err(Error::InvalidDataset(format!(
            "dataset is already censored at fraction {frac}; cannot re-censor at {level}"
        )));
    }
    if n == 0 || level == 0.0 {
        let z = dataset.z().to_vec();
        return dataset.with_responses(z.clone(), vec![false; n], min_minus_one(&z));
    }
    let mut sorted = dataset.z().to_vec();
    sorted.sort_by(f64::total_cmp);
    let limit = empirical_quantile(&sorted, level);
    let censored: Vec<bool> = dataset.z().iter().map(|&v| v <= limit).collect();
    let z = dataset.z().iter().map(|&v| v.max(limit)).collect();
    dataset.with_responses(z, censored, limit)
}

fn min_minus_one(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    if m.is_finite() {
        m
    } else {
        0.0
    }
}

/// Writes `x,y,signal,beta1..betap`.
pub fn save_true_fields(sites: &[Site], truth: &TrueFields, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n = sites.len();
    let p = if n == 0 { 0 } else { truth.beta.len() / n };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = String::from("x,y,signal");
    for j in 1..=p {
        header.push_str(&format!(",beta{j}"));
    }
    writeln!(w, "{header}").map_err(io)?;
    for i in 0..n {
        write!(w, "{},{},{}", sites[i][0], sites[i][1], truth.signal[i]).map_err(io)?;
        for v in &truth.beta[i * p..(i + 1) * p] {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}
