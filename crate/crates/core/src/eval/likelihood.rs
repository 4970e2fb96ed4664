//! Accuracy of the latent-free Vecchia likelihood against the exact
//! censored likelihood over replicated simulated datasets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::provenance::{build_id, config_hash};
use super::{median_and_quartiles, write_csv};
use crate::domain::{reference_params, Dataset, SvcParams};
use crate::error::{Error, Result};
use crate::oracle::{censored_exact_loglik, dense_gaussian_loglik, relative_likelihood_error, Estimate, McConfig};
use crate::ordering::{censored_aware_order, conditioning_sets};
use crate::par::{self, Exec};
use crate::rng::derive_seed;
use crate::simulate::{apply_censoring, simulate_svc_dataset, SimulationOptions};
use crate::vecchia::censored_vecchia_loglik;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LikelihoodExperimentConfig {
    pub n: usize,
    pub replicates: usize,
    #[serde(rename = "M")]
    pub m_values: Vec<usize>,
    pub levels: Vec<f64>,
    pub params: SvcParams,
    pub simulation: SimulationOptions,
    /// Oracle settings; the seed is replaced per cell.
    pub mc: McConfig,
    pub seed: u64,
}

impl Default for LikelihoodExperimentConfig {
    fn default() -> Self {
        LikelihoodExperimentConfig {
            n: 200,
            replicates: 50,
            m_values: vec![10, 30, 50],
            levels: vec![0.0, 0.05, 0.25, 0.5, 0.75],
            params: reference_params(),
            simulation: SimulationOptions::default(),
            mc: McConfig::default(),
            seed: 1,
        }
    }
}

impl LikelihoodExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.replicates == 0 || self.m_values.is_empty() || self.levels.is_empty() {
            return Err(Error::InvalidConfig("need n ≥ 2, replicates ≥ 1 and non-empty M and level lists".into()));
        }
        if self.m_values.contains(&0) {
            return Err(Error::InvalidConfig("M values must be at least 1".into()));
        }
        if let Some(l) = self.levels.iter().find(|l| !(0.0..1.0).contains(*l)) {
            return Err(Error::InvalidConfig(format!("censoring level {l} must lie in [0, 1)")));
        }
        self.params.validate(self.params.p())?;
        self.mc.validate()
    }
}

/// One (replicate, M, level) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodRow {
    pub replicate: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub level: f64,
    pub n_censored: usize,
    pub approx: f64,
    pub exact: f64,
    pub exact_se: f64,
    /// Relative error in percent.
    pub delta_rel: f64,
    /// Oracle standard error expressed on the `delta_rel` scale.
    pub delta_rel_se: f64,
    pub build_id: String,
    pub config_hash: String,
}

/// Distribution of `delta_rel` over replicates for one (M, level).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodCell {
    #[serde(rename = "M")]
    pub m: usize,
    pub level: f64,
    pub replicates: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub median_se: f64,
    pub build_id: String,
    pub config_hash: String,
}

#[derive(Clone, Debug)]
pub struct LikelihoodResults {
    pub rows: Vec<LikelihoodRow>,
    pub cells: Vec<LikelihoodCell>,
}

impl LikelihoodResults {
    pub fn cell(&self, m: usize, level: f64) -> Option<&LikelihoodCell> {
        self.cells.iter().find(|c| c.m == m && c.level == level)
    }

    pub fn write_rows(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(path.as_ref(), &self.rows)
    }

    pub fn write_cells(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(path.as_ref(), &self.cells)
    }
}

fn exact_loglik(ds: &Dataset, params: &SvcParams, mc: &McConfig) -> Result<Estimate> {
    if ds.n_censored() == 0 {
        Ok(Estimate {
            value: dense_gaussian_loglik(ds, params)?,
            std_error: 0.0,
        })
    } else {
        censored_exact_loglik(ds, params, mc)
    }
}

/// Runs every replicate at every level and M. Replicates run under `exec`;
/// the dataset of replicate `r` uses stream `(seed, 0, r)` and its oracle at
/// level index `l` uses `(seed, 1, l, r)`.
pub fn likelihood_error_experiment(cfg: &LikelihoodExperimentConfig, exec: Exec) -> Result<LikelihoodResults> {
    cfg.validate()?;
    let hash = config_hash(cfg)?;
    let per_rep = par::try_map_range(exec, cfg.replicates, |r| -> Result<Vec<LikelihoodRow>> {
        let (base, _) = simulate_svc_dataset(cfg.n, &cfg.params, &cfg.simulation, derive_seed(cfg.seed, &[0, r as u64]))?;
        let mut rows = Vec::new();
        for (li, &level) in cfg.levels.iter().enumerate() {
            let ds = apply_censoring(&base, level)?;
            let mc = McConfig {
                seed: derive_seed(cfg.seed, &[1, li as u64, r as u64]),
                ..cfg.mc
            };
            let exact = exact_loglik(&ds, &cfg.params, &mc)?;
            let perm = censored_aware_order(ds.sites(), ds.censored())?;
            let eligible: Vec<bool> = ds.censored().iter().map(|c| !c).collect();
            for &m in &cfg.m_values {
                let sets = std::sync::Arc::new(conditioning_sets(ds.sites(), &perm, m, Some(&eligible))?);
                let approx = censored_vecchia_loglik(&ds, &cfg.params, &sets)?;
                rows.push(LikelihoodRow {
                    replicate: r,
                    m,
                    level,
                    n_censored: ds.n_censored(),
                    approx,
                    exact: exact.value,
                    exact_se: exact.std_error,
                    delta_rel: relative_likelihood_error(approx, exact.value)?,
                    delta_rel_se: exact.std_error / exact.value.abs() * 100.0,
                    build_id: build_id().to_string(),
                    config_hash: hash.clone(),
                });
            }
        }
        Ok(rows)
    })?;
    let rows: Vec<LikelihoodRow> = per_rep.into_iter().flatten().collect();
    let mut cells = Vec::new();
    for &m in &cfg.m_values {
        for &level in &cfg.levels {
            let sel: Vec<&LikelihoodRow> = rows.iter().filter(|r| r.m == m && r.level == level).collect();
            let (median, q1, q3) = median_and_quartiles(sel.iter().map(|r| r.delta_rel).collect());
            let (median_se, _, _) = median_and_quartiles(sel.iter().map(|r| r.delta_rel_se).collect());
            cells.push(LikelihoodCell {
                m,
                level,
                replicates: sel.len(),
                median,
                q1,
                q3,
                median_se,
                build_id: build_id().to_string(),
                config_hash: hash.clone(),
            });
        }
    }
    Ok(LikelihoodResults { rows, cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> LikelihoodExperimentConfig {
        LikelihoodExperimentConfig {
            n: 40,
            replicates: 3,
            m_values: vec![5, 39],
            levels: vec![0.0, 0.25],
            mc: McConfig {
                samples: 500,
                randomizations: 8,
                seed: 0,
            },
            ..LikelihoodExperimentConfig::default()
        }
    }

    #[test]
    fn row_count_and_censor_free_cells() {
        let res = likelihood_error_experiment(&small(), Exec::Parallel).unwrap();
        assert_eq!(res.rows.len(), 3 * 2 * 2);
        assert_eq!(res.cells.len(), 4);
        for r in res.rows.iter().filter(|r| r.level == 0.0) {
            assert_eq!(r.n_censored, 0);
            assert_eq!(r.exact_se, 0.0);
        }
        // Full conditioning without censoring is exact.
        for r in res.rows.iter().filter(|r| r.level == 0.0 && r.m == 39) {
            assert!(r.delta_rel < 1e-6, "{}", r.delta_rel);
        }
        for r in res.rows.iter().filter(|r| r.level == 0.25) {
            assert_eq!(r.n_censored, 10);
            assert!(r.exact_se > 0.0);
        }
    }

    #[test]
    fn deterministic_across_execution_policies() {
        let a = likelihood_error_experiment(&small(), Exec::Parallel).unwrap();
        let b = likelihood_error_experiment(&small(), Exec::Sequential).unwrap();
        assert_eq!(a.rows, b.rows);
        let dir = tempfile::tempdir().unwrap();
        a.write_rows(dir.path().join("a.csv")).unwrap();
        b.write_rows(dir.path().join("b.csv")).unwrap();
        assert_eq!(
            std::fs::read(dir.path().join("a.csv")).unwrap(),
            std::fs::read(dir.path().join("b.csv")).unwrap()
        );
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = small();
        c.levels = vec![1.0];
        assert!(matches!(likelihood_error_experiment(&c, Exec::Sequential), Err(Error::InvalidConfig(_))));
    }
}
