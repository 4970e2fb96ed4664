//! Scores, provenance and the two simulation experiments.

mod comparison;
mod likelihood;
mod metrics;
mod provenance;

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::simulate::empirical_quantile;

pub use comparison::{method_comparison_experiment, AlphaSummary, ComparisonConfig, ComparisonResults, ComparisonRow};
pub use likelihood::{
    likelihood_error_experiment, LikelihoodCell, LikelihoodExperimentConfig, LikelihoodResults, LikelihoodRow,
};
pub use metrics::{crps_brute_force, crps_empirical, mean_crps, rmse};
pub use provenance::{build_id, config_hash, RunManifest};

/// Median and quartiles; NaN for an empty input.
pub fn median_and_quartiles(mut v: Vec<f64>) -> (f64, f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    v.sort_by(f64::total_cmp);
    (
        empirical_quantile(&v, 0.5),
        empirical_quantile(&v, 0.25),
        empirical_quantile(&v, 0.75),
    )
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let err = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
