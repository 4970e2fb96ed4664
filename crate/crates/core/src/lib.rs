//! Spatially varying coefficient Gaussian-process models with left-censored
//! responses, fitted through Vecchia approximations.

pub mod covariance;
pub mod domain;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod mcmc;
pub mod normal;
pub mod oracle;
pub mod ordering;
pub mod par;
pub mod predict;
pub mod rng;
pub mod simulate;
pub mod vecchia;

pub use domain::{Dataset, ModelKind, RunConfig, Site, SvcParams};
pub use error::{Error, Result};
pub use par::Exec;
