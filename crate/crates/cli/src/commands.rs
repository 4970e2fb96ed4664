use std::path::{Path, PathBuf};
use std::process::ExitCode;

use serde_json::{json, Value};
use vecsvc::domain::{load_dataset, save_dataset, ConfigDocument, PriorConfig, RunConfig, SvcParams};
use vecsvc::eval::{
    crps_empirical, likelihood_error_experiment, method_comparison_experiment, rmse, ComparisonConfig,
    LikelihoodExperimentConfig, RunManifest,
};
use vecsvc::mcmc::{fit as fit_model, read_draws_csv, write_diagnostics_json, write_draws_csv, SamplerOptions};
use vecsvc::oracle::McConfig;
use vecsvc::predict::{
    load_grid, posterior_predictive, read_draw_matrix, write_draw_matrix, write_summary_csv, LatentFreeOptions,
    PredictOptions,
};
use vecsvc::simulate::{apply_censoring, save_true_fields, simulate_svc_dataset};
use vecsvc::{domain, Error, Exec, ModelKind};

use crate::{CompareArgs, Common, FitArgs, PredictArgs, ScoreArgs, SimulateArgs, ValidateArgs};

/// R̂ above this triggers exit code 3.
const RHAT_LIMIT: f64 = 1.05;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: if e.is_numerical() { 4 } else { 2 },
            message: e.to_string(),
        }
    }
}

type CliResult = Result<ExitCode, CliError>;

fn usage(flag: &str, message: impl std::fmt::Display) -> CliError {
    CliError {
        code: 2,
        message: format!("{flag}: {message}"),
    }
}

fn flagged(flag: &str) -> impl Fn(Error) -> CliError + '_ {
    move |e| usage(flag, e)
}

/// Sizes the global pool and creates the output directory.
fn prepare(common: &Common) -> Result<usize, CliError> {
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(usage("--threads", "must be at least 1"));
        }
        // The pool can only be built once per process; later calls keep it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    std::fs::create_dir_all(&common.out).map_err(|e| usage("--out", format!("cannot create {}: {e}", common.out.display())))?;
    Ok(rayon::current_num_threads())
}

fn out_path(common: &Common, name: &str) -> PathBuf {
    common.out.join(name)
}

fn load_config(path: Option<&PathBuf>) -> Result<ConfigDocument, CliError> {
    match path {
        None => Ok(ConfigDocument::default()),
        Some(p) => ConfigDocument::load(p).map_err(flagged("--config")),
    }
}

fn parse_model(s: &str) -> Result<ModelKind, CliError> {
    s.parse().map_err(flagged("--model"))
}

/// Reference parameters, extended with unit-scale components beyond p = 2.
fn default_params(p: usize) -> SvcParams {
    let mut params = domain::reference_params();
    params.alpha.resize(p, 1.0);
    params.sigma2.resize(p, 1.0);
    params.phi.resize(p, 10.0);
    params
}

fn finish(manifest: &RunManifest, common: &Common, code: ExitCode) -> CliResult {
    manifest.write(out_path(common, "manifest.json"))?;
    Ok(code)
}

pub fn simulate(a: SimulateArgs) -> CliResult {
    if a.n == 0 {
        return Err(usage("--n", "must be at least 1"));
    }
    if a.p == 0 {
        return Err(usage("--p", "must be at least 1"));
    }
    if !(0.0..1.0).contains(&a.censoring) {
        return Err(usage("--censoring", format!("{} must lie in [0, 1)", a.censoring)));
    }
    let doc = load_config(a.config.as_ref())?;
    let params = doc.params.clone().unwrap_or_else(|| default_params(a.p));
    if params.p() != a.p {
        return Err(usage("--p", format!("{} does not match the {} covariates in the config", a.p, params.p())));
    }
    params.validate(a.p).map_err(flagged("--config"))?;
    let sim = doc.simulation.clone().unwrap_or_default();
    let threads = prepare(&a.common)?;
    let config = json!({
        "n": a.n, "p": a.p, "censoring": a.censoring, "params": params, "simulation": sim,
    });
    let mut manifest = RunManifest::new("simulate", &config, a.common.seed, threads)?;
    let (ds, truth) = simulate_svc_dataset(a.n, &params, &sim, a.common.seed)?;
    let ds = apply_censoring(&ds, a.censoring)?;
    let data = out_path(&a.common, "data.csv");
    let tpath = out_path(&a.common, "truth.csv");
    save_dataset(&ds, &data)?;
    save_true_fields(ds.sites(), &truth, &tpath)?;
    manifest.add_output(data);
    manifest.add_output(tpath);
    manifest.note("n_censored", json!(ds.n_censored()));
    manifest.note("limit", json!(ds.limit()));
    finish(&manifest, &a.common, ExitCode::SUCCESS)
}

pub fn fit(a: FitArgs) -> CliResult {
    let model = parse_model(&a.model)?;
    if a.m == 0 {
        return Err(usage("--M", "must be at least 1"));
    }
    if a.chains == 0 {
        return Err(usage("--chains", "must be at least 1"));
    }
    if a.burnin >= a.iters {
        return Err(usage("--burnin", format!("{} must be smaller than --iters ({})", a.burnin, a.iters)));
    }
    let ds = load_dataset(&a.data).map_err(flagged("--data"))?;
    let doc = load_config(a.config.as_ref())?;
    let priors = match &doc.priors {
        Some(spec) => spec.resolve(ds.sites(), ds.p()).map_err(flagged("--config"))?,
        None => PriorConfig::default_for(ds.sites(), ds.p()),
    };
    let run = RunConfig {
        model,
        m: a.m,
        chains: a.chains,
        iterations: a.iters,
        burn_in: a.burnin,
        seed: a.common.seed,
        ..RunConfig::default()
    };
    let threads = prepare(&a.common)?;
    let config = json!({ "run": run, "priors": priors, "data": a.data.display().to_string() });
    let mut manifest = RunManifest::new("fit", &config, a.common.seed, threads)?;
    let opts = SamplerOptions {
        exec: Exec::Parallel,
        record_latent: model.has_latent(),
        verify_every: 0,
    };
    let (_, samples) = fit_model(&ds, &run, &priors, &opts)?;
    let draws = out_path(&a.common, "draws.csv");
    let diag = out_path(&a.common, "diagnostics.json");
    write_draws_csv(&samples, &draws)?;
    write_diagnostics_json(&samples, &diag)?;
    manifest.add_output(draws);
    manifest.add_output(diag);
    let max_rhat = samples.max_rhat();
    manifest.note("max_rhat", if max_rhat.is_finite() { json!(max_rhat) } else { Value::Null });
    manifest.note("draws", json!(samples.n_draws()));
    println!("{}: {} draws, max rhat {:.4}", model, samples.n_draws(), max_rhat);
    let code = if max_rhat > RHAT_LIMIT {
        eprintln!("warning: max rhat {max_rhat:.4} exceeds {RHAT_LIMIT}; outputs were written");
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    };
    finish(&manifest, &a.common, code)
}

pub fn predict(a: PredictArgs) -> CliResult {
    let model = parse_model(&a.model)?;
    if a.m == 0 {
        return Err(usage("--M", "must be at least 1"));
    }
    if a.thin == 0 {
        return Err(usage("--thin", "must be at least 1"));
    }
    let ds = load_dataset(&a.data).map_err(flagged("--data"))?;
    let samples = read_draws_csv(&a.draws, model, ds.p()).map_err(flagged("--draws"))?;
    let grid = load_grid(&a.grid).map_err(flagged("--grid"))?;
    if grid.p() != ds.p() {
        return Err(usage("--grid", format!("has {} covariates, the data has {}", grid.p(), ds.p())));
    }
    let threads = prepare(&a.common)?;
    let opts = PredictOptions {
        m: a.m,
        joint: a.joint,
        latent_free: LatentFreeOptions {
            inflate_pseudo_noise: a.inflate_pseudo_noise,
        },
        thin: a.thin,
        exec: Exec::Parallel,
    };
    let config = json!({
        "model": model, "M": a.m, "joint": a.joint, "inflate_pseudo_noise": a.inflate_pseudo_noise,
        "thin": a.thin, "data": a.data.display().to_string(), "draws": a.draws.display().to_string(),
        "grid": a.grid.display().to_string(),
    });
    let mut manifest = RunManifest::new("predict", &config, a.common.seed, threads)?;
    let pd = posterior_predictive(&samples, &ds, &grid, model, &opts, a.common.seed)?;
    let pred = out_path(&a.common, "pred.csv");
    write_summary_csv(&pd, &pred)?;
    manifest.add_output(pred);
    if a.save_draws {
        let bin = out_path(&a.common, "draws.bin");
        write_draw_matrix(&pd, &bin)?;
        manifest.add_output(bin);
    }
    manifest.note("draws", json!(pd.n_draws()));
    manifest.note("sites", json!(pd.n_sites()));
    finish(&manifest, &a.common, ExitCode::SUCCESS)
}

pub fn validate_likelihood(a: ValidateArgs) -> CliResult {
    if let Some(l) = a.levels.iter().find(|l| !(0.0..1.0).contains(*l)) {
        return Err(usage("--levels", format!("{l} must lie in [0, 1)")));
    }
    if a.m.is_empty() || a.m.contains(&0) {
        return Err(usage("--M", "values must be at least 1"));
    }
    if a.replicates == 0 {
        return Err(usage("--replicates", "must be at least 1"));
    }
    let doc = load_config(a.config.as_ref())?;
    let cfg = LikelihoodExperimentConfig {
        n: a.n,
        replicates: a.replicates,
        m_values: a.m.clone(),
        levels: a.levels.clone(),
        params: doc.params.unwrap_or_else(domain::reference_params),
        simulation: doc.simulation.unwrap_or_default(),
        mc: McConfig {
            samples: a.samples,
            randomizations: a.randomizations,
            seed: 0,
        },
        seed: a.common.seed,
    };
    cfg.validate()?;
    let threads = prepare(&a.common)?;
    let mut manifest = RunManifest::new("validate-likelihood", &cfg, a.common.seed, threads)?;
    let res = likelihood_error_experiment(&cfg, Exec::Parallel)?;
    let rows = out_path(&a.common, "likelihood_rows.csv");
    let cells = out_path(&a.common, "likelihood_cells.csv");
    res.write_rows(&rows)?;
    res.write_cells(&cells)?;
    manifest.add_output(rows);
    manifest.add_output(cells);
    manifest.note("rows", json!(res.rows.len()));
    let med: Vec<Value> = res
        .cells
        .iter()
        .map(|c| json!({"M": c.m, "level": c.level, "median_delta_rel": c.median}))
        .collect();
    manifest.note("medians", Value::Array(med));
    finish(&manifest, &a.common, ExitCode::SUCCESS)
}

pub fn compare_methods(a: CompareArgs) -> CliResult {
    let mut cfg: ComparisonConfig = match &a.config {
        None => ComparisonConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage("--config", format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| usage("--config", e))?
        }
    };
    if let Some(v) = a.n_train {
        cfg.n_train = v;
    }
    if let Some(v) = a.n_test {
        cfg.n_test = v;
    }
    if let Some(v) = a.replicates {
        cfg.replicates = v;
    }
    if let Some(v) = &a.methods {
        cfg.methods = v.iter().map(|s| parse_model(s).map_err(|e| usage("--methods", e.message))).collect::<Result<_, _>>()?;
    }
    if let Some(v) = &a.m {
        cfg.m_values = v.clone();
    }
    if let Some(v) = &a.levels {
        cfg.levels = v.clone();
    }
    if let Some(v) = a.chains {
        cfg.chains = v;
    }
    if let Some(v) = a.iters {
        cfg.iterations = v;
    }
    if let Some(v) = a.burnin {
        cfg.burn_in = v;
    }
    if let Some(v) = a.predictive_draws {
        cfg.predictive_draws = v;
    }
    cfg.skip_prediction |= a.skip_prediction;
    cfg.seed = a.common.seed;
    cfg.validate()?;
    let threads = prepare(&a.common)?;
    let mut manifest = RunManifest::new("compare-methods", &cfg, a.common.seed, threads)?;
    let res = method_comparison_experiment(&cfg, Exec::Parallel)?;
    let path = out_path(&a.common, "comparison.csv");
    res.write(&path)?;
    manifest.add_output(path);
    manifest.note("rows", json!(res.rows.len()));
    finish(&manifest, &a.common, ExitCode::SUCCESS)
}

/// Header and numeric rows of a CSV file.
fn read_table(path: &Path, flag: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| usage(flag, format!("{}: {e}", path.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| usage(flag, format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| usage(flag, format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|_| usage(flag, format!("{} line {}: non-numeric value", path.display(), k + 2)))?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn column(header: &[String], names: &[&str], path: &Path, flag: &str) -> Result<usize, CliError> {
    names
        .iter()
        .find_map(|n| header.iter().position(|h| h == n))
        .ok_or_else(|| usage(flag, format!("{} has no {} column", path.display(), names.join("/"))))
}

pub fn score(a: ScoreArgs) -> CliResult {
    let (ph, prows) = read_table(&a.pred, "--pred")?;
    let (th, trows) = read_table(&a.truth, "--truth")?;
    let (px, py, pm) = (
        column(&ph, &["x"], &a.pred, "--pred")?,
        column(&ph, &["y"], &a.pred, "--pred")?,
        column(&ph, &["mean"], &a.pred, "--pred")?,
    );
    let (tx, ty, tv) = (
        column(&th, &["x"], &a.truth, "--truth")?,
        column(&th, &["y"], &a.truth, "--truth")?,
        column(&th, &["signal", "truth", "mean"], &a.truth, "--truth")?,
    );
    if prows.len() != trows.len() || prows.is_empty() {
        return Err(usage("--truth", format!("{} truth rows for {} predictions", trows.len(), prows.len())));
    }
    for (k, (p, t)) in prows.iter().zip(&trows).enumerate() {
        if (p[px] - t[tx]).abs() > 1e-9 || (p[py] - t[ty]).abs() > 1e-9 {
            return Err(usage("--truth", format!("row {}: site differs from the prediction file", k + 2)));
        }
    }
    let n = prows.len();
    let draws = match &a.draws {
        None => None,
        Some(path) => {
            let (r, c, v) = read_draw_matrix(path).map_err(flagged("--draws"))?;
            if c != n {
                return Err(usage("--draws", format!("matrix has {c} columns for {n} sites")));
            }
            Some((r, v))
        }
    };
    let threads = prepare(&a.common)?;
    let config = json!({
        "pred": a.pred.display().to_string(), "truth": a.truth.display().to_string(),
        "draws": a.draws.as_ref().map(|p| p.display().to_string()),
    });
    let mut manifest = RunManifest::new("score", &config, a.common.seed, threads)?;
    let mean: Vec<f64> = prows.iter().map(|r| r[pm]).collect();
    let truth: Vec<f64> = trows.iter().map(|r| r[tv]).collect();
    let crps = (0..n)
        .map(|j| match &draws {
            Some((r, v)) => crps_empirical(&(0..*r).map(|k| v[k * n + j]).collect::<Vec<_>>(), truth[j]),
            None => crps_empirical(&[mean[j]], truth[j]),
        })
        .collect::<Result<Vec<f64>, Error>>()?;
    let path = out_path(&a.common, "score.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| usage("--out", e))?;
    let werr = |e: csv::Error| usage("--out", e);
    w.write_record(["x", "y", "truth", "mean", "abs_error", "crps"]).map_err(werr)?;
    for j in 0..n {
        w.write_record([
            prows[j][px].to_string(),
            prows[j][py].to_string(),
            truth[j].to_string(),
            mean[j].to_string(),
            (mean[j] - truth[j]).abs().to_string(),
            crps[j].to_string(),
        ])
        .map_err(werr)?;
    }
    w.flush().map_err(|e| usage("--out", e))?;
    let r = rmse(&mean, &truth)?;
    let c = crps.iter().sum::<f64>() / n as f64;
    println!("{}", json!({"rmse": r, "crps": c, "sites": n}));
    manifest.add_output(path);
    manifest.note("rmse", json!(r));
    manifest.note("crps", json!(c));
    finish(&manifest, &a.common, ExitCode::SUCCESS)
}
