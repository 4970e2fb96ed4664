//! `vecsvc`: simulate, fit, predict and evaluate SVC models for
//! left-censored spatial data.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 convergence
//! warning (some R̂ > 1.05; outputs are still written), 4 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "vecsvc", version, about = "Vecchia-approximated SVC models for left-censored spatial data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Random seed; every output is a function of the flags, inputs and seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads (default: logical cores). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate an SVC dataset and write data.csv and truth.csv.
    Simulate(SimulateArgs),
    /// Run the MCMC sampler and write draws.csv and diagnostics.json.
    Fit(FitArgs),
    /// Posterior predictive simulation on a grid; writes pred.csv.
    Predict(PredictArgs),
    /// Relative error of the latent-free likelihood against the exact one.
    ValidateLikelihood(ValidateArgs),
    /// Fit and score the three methods on simulated train/test splits.
    CompareMethods(CompareArgs),
    /// RMSE and CRPS of predictions against a truth file.
    Score(ScoreArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Number of sites.
    #[arg(long)]
    pub n: usize,
    /// Number of covariates including the intercept.
    #[arg(long, default_value_t = 2)]
    pub p: usize,
    /// JSON configuration with `params` and `simulation` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fraction of responses censored at the empirical quantile, in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    pub censoring: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// full-latent, latent-vecchia or latent-free.
    #[arg(long)]
    pub model: String,
    /// Dataset CSV (`# L=<limit>` line, then x,y,z,censored,x1..xp).
    #[arg(long)]
    pub data: PathBuf,
    /// Conditioning-set size.
    #[arg(long = "M", default_value_t = 30)]
    pub m: usize,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    /// Iterations per chain, burn-in included.
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1000)]
    pub burnin: usize,
    /// JSON configuration; its `priors` section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Model that produced the draws.
    #[arg(long)]
    pub model: String,
    /// Dataset the model was fitted to.
    #[arg(long)]
    pub data: PathBuf,
    /// draws.csv written by `fit`.
    #[arg(long)]
    pub draws: PathBuf,
    /// Grid CSV with header x,y,x1..xp.
    #[arg(long)]
    pub grid: PathBuf,
    /// Conditioning-set size of the Vecchia predictors.
    #[arg(long = "M", default_value_t = 30)]
    pub m: usize,
    /// Let predictions condition on earlier predictions.
    #[arg(long)]
    pub joint: bool,
    /// Add the stage-one variance to the noise of imputed censored values.
    #[arg(long)]
    pub inflate_pseudo_noise: bool,
    /// Use every n-th posterior draw.
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    /// Also write the full draw matrix to draws.bin (+ draws.bin.json).
    #[arg(long)]
    pub save_draws: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long, default_value_t = 50)]
    pub replicates: usize,
    /// Comma-separated conditioning-set sizes.
    #[arg(long = "M", value_delimiter = ',', default_value = "10,30,50")]
    pub m: Vec<usize>,
    /// Comma-separated censoring levels.
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.25,0.5,0.75")]
    pub levels: Vec<f64>,
    /// Sites per replicate.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Lattice points per randomization of the exact-likelihood integrator.
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    /// Random shifts of the exact-likelihood integrator.
    #[arg(long, default_value_t = 10)]
    pub randomizations: usize,
    /// JSON configuration; its `params` and `simulation` sections are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// JSON experiment configuration (all fields optional); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Comma-separated model names.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Comma-separated conditioning-set sizes.
    #[arg(long = "M", value_delimiter = ',')]
    pub m: Option<Vec<usize>>,
    /// Comma-separated censoring levels.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    /// Upper bound on conditional simulations per fit.
    #[arg(long)]
    pub predictive_draws: Option<usize>,
    /// Report posterior summaries and cost only.
    #[arg(long)]
    pub skip_prediction: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Prediction CSV (x,y,mean,sd).
    #[arg(long)]
    pub pred: PathBuf,
    /// Truth CSV with x,y and a `signal`, `truth` or `mean` column.
    #[arg(long)]
    pub truth: PathBuf,
    /// Draw matrix from `predict --save-draws`; without it each site is
    /// scored as a single-draw forecast at its mean.
    #[arg(long)]
    pub draws: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Predict(a) => commands::predict(a),
        Command::ValidateLikelihood(a) => commands::validate_likelihood(a),
        Command::CompareMethods(a) => commands::compare_methods(a),
        Command::Score(a) => commands::score(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
