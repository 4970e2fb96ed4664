//! Acceptance criteria. Prints one PASS/FAIL line per criterion.
//!
//! Positional arguments select criteria by id (`1`..`10`, `analog`); flags
//! are ignored. The process exits 0 after reporting unless
//! `VECSVC_ACCEPTANCE_STRICT=1`, in which case any FAIL exits 1. A panic
//! inside a criterion is a harness error and always fails the run. With
//! `VECSVC_ACCEPTANCE_OUT=<dir>` the experiment tables are also written there.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use vecsvc::domain::{reference_params, save_dataset, PriorConfig};
use vecsvc::eval::{
    crps_brute_force, crps_empirical, likelihood_error_experiment, method_comparison_experiment, ComparisonConfig,
    LikelihoodExperimentConfig, LikelihoodRow,
};
use vecsvc::mcmc::{fit, write_diagnostics_json, write_draws_csv, PosteriorSamples, SamplerOptions};
use vecsvc::oracle::dense_gaussian_loglik;
use vecsvc::ordering::{conditioning_sets, maxmin_order};
use vecsvc::predict::{
    dense_law, latent_free_law, posterior_predictive, vecchia_law, write_summary_csv, ConditionalLaw, LatentFreeOptions,
    LatentFreePlan, PredictOptions, PredictionGrid, PredictionPlan,
};
use vecsvc::rng::{derive_seed, stream};
use vecsvc::simulate::{apply_censoring, simulate_sites, simulate_svc_dataset, SimulationOptions};
use vecsvc::vecchia::{build_factor, gaussian_vecchia_loglik};
use vecsvc::{Dataset, Exec, ModelKind, RunConfig, SvcParams};

const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn out_dir() -> Option<PathBuf> {
    let dir = PathBuf::from(std::env::var_os("VECSVC_ACCEPTANCE_OUT")?);
    std::fs::create_dir_all(&dir).ok()?;
    Some(dir)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Reference parameters extended to `p` components.
fn params_p(p: usize) -> SvcParams {
    let mut params = reference_params();
    params.alpha.resize(p, 1.0);
    params.sigma2.resize(p, 1.0);
    params.phi.resize(p, 10.0);
    params
}

fn run(model: ModelKind, m: usize, chains: usize, iterations: usize, burn_in: usize, seed: u64) -> RunConfig {
    RunConfig {
        model,
        m,
        chains,
        iterations,
        burn_in,
        seed,
        ..RunConfig::default()
    }
}

fn fit_samples(ds: &Dataset, cfg: &RunConfig, exec: Exec) -> PosteriorSamples {
    let priors = PriorConfig::default_for(ds.sites(), ds.p());
    let opts = SamplerOptions {
        exec,
        record_latent: false,
        verify_every: 0,
    };
    fit(ds, cfg, &priors, &opts).expect("fit").1
}

/// Largest entrywise deviation between two laws, relative to the variances.
fn law_gap(a: &ConditionalLaw, b: &ConditionalLaw) -> f64 {
    let (ca, cb) = (a.covariance().unwrap(), b.covariance().unwrap());
    let mut gap = 0.0f64;
    for i in 0..a.n() {
        let scale = cb[(i, i)].sqrt();
        gap = gap.max((a.mean()[i] - b.mean()[i]).abs() / b.mean()[i].abs().max(scale));
        for j in 0..a.n() {
            gap = gap.max((ca[(i, j)] - cb[(i, j)]).abs() / (cb[(i, i)] * cb[(j, j)]).sqrt());
        }
    }
    gap
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut worst_ll = 0.0f64;
    let mut worst_pred = 0.0f64;
    for i in 0..20u64 {
        let n = [20, 50][(i % 2) as usize];
        let p = 1 + ((i / 2) % 3) as usize;
        let mut r = stream(SEED, &[1, i]);
        let params = SvcParams {
            alpha: (0..p).map(|_| r.random_range(-5.0..5.0)).collect(),
            sigma2: (0..p).map(|_| r.random_range(0.5..5.0)).collect(),
            phi: (0..p).map(|_| r.random_range(2.0..20.0)).collect(),
            tau2: r.random_range(0.05..0.5),
        };
        let opts = SimulationOptions::default();
        let (ds, _) = simulate_svc_dataset(n, &params, &opts, derive_seed(SEED, &[1, i, 0])).unwrap();
        let perm = maxmin_order(ds.sites()).unwrap();
        let sets = Arc::new(conditioning_sets(ds.sites(), &perm, n - 1, None).unwrap());
        let factor = build_factor(ds.sites(), ds.design(), &params, sets, true).unwrap();
        let mean = ds.mean(&params.alpha);
        let approx = gaussian_vecchia_loglik(&factor, ds.z(), &mean).unwrap();
        let exact = dense_gaussian_loglik(&ds, &params).unwrap();
        worst_ll = worst_ll.max(rel(approx, exact));

        // Predictors: the response field at full conditioning.
        let (gs, gd) = simulate_sites(4, p, &opts, derive_seed(SEED, &[1, i, 1]));
        let grid = PredictionGrid::new(gs, gd, p).unwrap();
        let full = n + grid.n() - 1;
        let noise = vec![params.tau2; n];
        let dense = dense_law(ds.sites(), ds.design(), ds.z(), &noise, &params, &grid).unwrap();
        for joint in [false, true] {
            let plan = PredictionPlan::new(ds.sites(), ds.design(), &grid, full, joint).unwrap();
            let vl = vecchia_law(&plan, ds.z(), &noise, &params, Exec::Sequential).unwrap();
            let lp = LatentFreePlan::new(&ds, &grid, full, joint).unwrap();
            let lf = latent_free_law(&lp, &ds, &params, LatentFreeOptions::default(), Exec::Sequential).unwrap();
            let mut pairs = vec![law_gap(&vl, &dense), law_gap(&lf, &dense), law_gap(&lf, &vl)];
            if !joint {
                // Independent mode keeps only the marginal variances.
                let dc = dense.covariance().unwrap();
                let vc = vl.covariance().unwrap();
                let lc = lf.covariance().unwrap();
                pairs = (0..grid.n())
                    .flat_map(|j| {
                        [
                            rel(vl.mean()[j], dense.mean()[j]),
                            rel(lf.mean()[j], dense.mean()[j]),
                            rel(vc[(j, j)], dc[(j, j)]),
                            rel(lc[(j, j)], dc[(j, j)]),
                        ]
                    })
                    .collect();
            }
            worst_pred = pairs.into_iter().fold(worst_pred, f64::max);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst_ll < 1e-8 && worst_pred < 1e-6 && secs < 60.0,
        format!(
            "20 instances; max rel loglik error {worst_ll:.2e} (< 1e-8), max rel predictor gap {worst_pred:.2e} (< 1e-6), {secs:.1}s (< 60s)"
        ),
    )
}

fn likelihood_run() -> (Vec<LikelihoodRow>, f64) {
    let cfg = LikelihoodExperimentConfig {
        n: 200,
        replicates: 50,
        m_values: vec![10, 30, 50],
        levels: vec![0.0, 0.05, 0.25, 0.5, 0.75],
        seed: SEED,
        ..LikelihoodExperimentConfig::default()
    };
    let t = Instant::now();
    let res = likelihood_error_experiment(&cfg, Exec::Parallel).expect("likelihood experiment");
    let secs = t.elapsed().as_secs_f64();
    if let Some(dir) = out_dir() {
        res.write_rows(dir.join("likelihood_rows.csv")).unwrap();
        res.write_cells(dir.join("likelihood_cells.csv")).unwrap();
    }
    (res.rows, secs)
}

fn select(rows: &[LikelihoodRow], m: usize, level: f64) -> Vec<&LikelihoodRow> {
    rows.iter().filter(|r| r.m == m && r.level == level).collect()
}

/// Per-replicate oracle tolerance on the percentage scale.
fn tolerance(r: &LikelihoodRow) -> f64 {
    (3.0 * r.exact_se).max(1e-6 * r.exact.abs()) / r.exact.abs() * 100.0
}

fn criterion_2(rows: &[LikelihoodRow], secs: f64) -> Outcome {
    let mut pass = secs < 1800.0;
    let mut parts = Vec::new();
    for (m, level, bound) in [(30, 0.05, 2.0), (30, 0.25, 2.0), (30, 0.5, 2.0), (50, 0.75, 10.0)] {
        let sel = select(rows, m, level);
        let med = median(sel.iter().map(|r| r.delta_rel).collect());
        let tol = median(sel.iter().map(|r| tolerance(r)).collect());
        let ok = med - tol < bound;
        pass &= ok;
        parts.push(format!("M={m} level={level}: median {med:.4}% (tol {tol:.4}%, bound {bound}%)"));
    }
    outcome(pass, format!("{}; {secs:.0}s (< 1800s)", parts.join(", ")))
}

fn criterion_3(rows: &[LikelihoodRow]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for level in [0.0, 0.05, 0.25, 0.5] {
        let stat = |m| {
            let sel = select(rows, m, level);
            (median(sel.iter().map(|r| r.delta_rel).collect()), median(sel.iter().map(|r| r.delta_rel_se).collect()))
        };
        let ((d10, s10), (d30, s30), (d50, s50)) = (stat(10), stat(30), stat(50));
        let monotone = d30 <= d10 + 3.0 * (s10 + s30) && d50 <= d30 + 3.0 * (s30 + s50);
        let diminishing = (d30 - d50) <= (d10 - d30) + 3.0 * (s10 + 2.0 * s30 + s50);
        pass &= monotone && diminishing;
        parts.push(format!(
            "level {level}: {d10:.4}/{d30:.4}/{d50:.4}% (monotone {monotone}, diminishing {diminishing})"
        ));
    }
    outcome(pass, format!("medians at M=10/30/50, 3-SE slack; {}", parts.join(", ")))
}

fn censored_dataset(n: usize, level: f64, seed: u64) -> Dataset {
    let (base, _) = simulate_svc_dataset(n, &reference_params(), &SimulationOptions::default(), seed).unwrap();
    apply_censoring(&base, level).unwrap()
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let truth = reference_params().alpha;
    let mut converged = 0;
    let mut covered = 0;
    let mut worst_rhat = 0.0f64;
    for r in 0..10u64 {
        let ds = censored_dataset(200, 0.25, derive_seed(SEED, &[4, r, 0]));
        let cfg = run(ModelKind::LatentFree, 30, 4, 2000, 1000, derive_seed(SEED, &[4, r, 1]));
        let s = fit_samples(&ds, &cfg, Exec::Parallel);
        worst_rhat = worst_rhat.max(s.max_rhat());
        converged += usize::from(s.max_rhat() < 1.05);
        let cover = truth.iter().enumerate().all(|(j, &a)| {
            let (lo, hi) = s.interval(j, 0.95);
            lo <= a && a <= hi
        });
        covered += usize::from(cover);
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        converged == 10 && covered >= 8 && secs < 1200.0,
        format!(
            "converged {converged}/10 (max rhat {worst_rhat:.3}), alpha covered {covered}/10 (>= 8), {secs:.0}s (< 1200s)"
        ),
    )
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let ds = censored_dataset(200, 0.25, derive_seed(SEED, &[5, 0]));
    let mut intervals = Vec::new();
    for (k, model) in ModelKind::ALL.into_iter().enumerate() {
        let cfg = run(model, 30, 4, 2000, 1000, derive_seed(SEED, &[5, 1, k as u64]));
        let s = fit_samples(&ds, &cfg, Exec::Parallel);
        intervals.push((model, s.interval(0, 0.95), s.max_rhat()));
    }
    let lo = intervals.iter().map(|i| i.1 .0).fold(f64::NEG_INFINITY, f64::max);
    let hi = intervals.iter().map(|i| i.1 .1).fold(f64::INFINITY, f64::min);
    let secs = t.elapsed().as_secs_f64();
    let desc: Vec<String> =
        intervals.iter().map(|(m, (a, b), rh)| format!("{m} [{a:.3}, {b:.3}] (rhat {rh:.3})")).collect();
    outcome(lo <= hi && secs < 1800.0, format!("alpha1 intervals {}; {secs:.0}s (< 1800s)", desc.join(", ")))
}

fn sec_per_1000(ds: &Dataset, model: ModelKind, m: usize) -> f64 {
    let iters = 1000;
    let cfg = run(model, m, 1, iters, 200, derive_seed(SEED, &[6, m as u64]));
    let s = fit_samples(ds, &cfg, Exec::Sequential);
    s.chains[0].wall_time / iters as f64 * 1000.0
}

fn criterion_6() -> Outcome {
    let ds = censored_dataset(200, 0.25, derive_seed(SEED, &[6, 0]));
    let full = sec_per_1000(&ds, ModelKind::FullLatent, 30);
    let mut pass = true;
    let mut parts = Vec::new();
    for m in [10, 30, 50] {
        let lf = sec_per_1000(&ds, ModelKind::LatentFree, m);
        pass &= lf < full;
        parts.push(format!("M={m} {lf:.2}s"));
    }
    outcome(pass, format!("s/1000 iter at n=200: latent-free {} vs full-latent {full:.2}s", parts.join(", ")))
}

fn criterion_7() -> Outcome {
    let cfg = ComparisonConfig {
        n_train: 200,
        n_test: 400,
        replicates: 5,
        methods: vec![ModelKind::LatentFree],
        m_values: vec![50],
        levels: vec![0.0, 0.5],
        chains: 2,
        iterations: 1500,
        burn_in: 500,
        predictive_draws: 200,
        seed: derive_seed(SEED, &[7]),
        ..ComparisonConfig::default()
    };
    let t = Instant::now();
    let res = method_comparison_experiment(&cfg, Exec::Parallel).expect("comparison experiment");
    let secs = t.elapsed().as_secs_f64();
    if let Some(dir) = out_dir() {
        res.write(dir.join("comparison_prediction.csv")).unwrap();
    }
    let diff = |f: fn(&vecsvc::eval::ComparisonRow) -> f64| -> Vec<f64> {
        (0..cfg.replicates)
            .map(|r| {
                let at = |l: f64| res.rows.iter().find(|x| x.replicate == r && x.level == l).map(f).unwrap();
                at(0.5) - at(0.0)
            })
            .collect()
    };
    let (dr, sr) = mean_se(&diff(|x| x.rmse));
    let (dc, sc) = mean_se(&diff(|x| x.crps));
    let pass = dr > -3.0 * sr && dc > -3.0 * sc && secs < 1800.0;
    outcome(
        pass,
        format!(
            "mean increase 0.0 -> 0.5 over 5 replicates: RMSE {dr:+.4} (SE {sr:.4}), CRPS {dc:+.4} (SE {sc:.4}); {secs:.0}s (< 1800s)"
        ),
    )
}

fn criterion_8() -> Outcome {
    let analytic = vecsvc::predict::mills_adjust(&[0.0], &[1.0], 0.0).unwrap()[0];
    let analytic_err = (analytic + 0.797_884_560_8).abs();
    let mut worst = 0.0f64;
    let mut k = 0u64;
    for mu in [-1.0, 0.0, 2.0, 5.0] {
        for (sigma, a) in [(0.5, -1.0), (1.0, -0.5), (1.0, 0.0), (2.0, 1.0), (3.0, 2.0)] {
            let limit = mu + sigma * a;
            let want = vecsvc::predict::mills_adjust(&[mu], &[sigma * sigma], limit).unwrap()[0];
            let mut r = stream(SEED, &[8, k]);
            k += 1;
            let (mut n, mut sum, mut sq) = (0u64, 0.0, 0.0);
            while n < 10_000_000 {
                let x = mu + sigma * r.sample::<f64, _>(StandardNormal);
                if x <= limit {
                    n += 1;
                    sum += x;
                    sq += x * x;
                }
            }
            let nf = n as f64;
            let m = sum / nf;
            let se = ((sq / nf - m * m) * nf / (nf - 1.0) / nf).sqrt();
            worst = worst.max((m - want).abs() / se);
        }
    }
    outcome(
        worst < 3.0 && analytic_err < 1e-9,
        format!("20 cases at 1e7 accepted draws: max |error| {worst:.2} SE (< 3); (0,1,0) error {analytic_err:.1e} (< 1e-9)"),
    )
}

fn criterion_9() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let mut r = stream(SEED, &[9, i]);
        let m = r.random_range(1..=2000usize);
        let scale = r.random_range(0.1..10.0);
        let draws: Vec<f64> = (0..m).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect();
        let truth = r.random_range(-2.0 * scale..2.0 * scale);
        let fast = crps_empirical(&draws, truth).unwrap();
        let slow = crps_brute_force(&draws, truth).unwrap();
        worst = worst.max((fast - slow).abs());
    }
    outcome(worst < 1e-10, format!("100 cases, m <= 2000: max |fast - brute force| {worst:.2e} (< 1e-10)"))
}

/// Largest deviation of empirical moments from the law, in standard errors.
fn moment_check(law: &ConditionalLaw, n_draws: usize, seed: u64) -> f64 {
    let n = law.n();
    let cov = law.covariance().unwrap();
    let mut r = stream(seed, &[]);
    let mut sum = vec![0.0; n];
    let mut cross = DMatrix::<f64>::zeros(n, n);
    let centre = law.mean().to_vec();
    for _ in 0..n_draws {
        let x: Vec<f64> = law.sample(&mut r).iter().zip(&centre).map(|(a, b)| a - b).collect();
        for a in 0..n {
            sum[a] += x[a];
            for b in 0..n {
                cross[(a, b)] += x[a] * x[b];
            }
        }
    }
    let nd = n_draws as f64;
    let em: Vec<f64> = sum.iter().map(|s| s / nd).collect();
    let mut worst = 0.0f64;
    for a in 0..n {
        worst = worst.max(em[a].abs() / (cov[(a, a)] / nd).sqrt());
        for b in 0..n {
            let ec = (cross[(a, b)] - nd * em[a] * em[b]) / (nd - 1.0);
            let se = ((cov[(a, a)] * cov[(b, b)] + cov[(a, b)].powi(2)) / nd).sqrt();
            worst = worst.max((ec - cov[(a, b)]).abs() / se);
        }
    }
    worst
}

fn criterion_10() -> Outcome {
    let params = reference_params();
    let opts = SimulationOptions::default();
    let ds = censored_dataset(60, 0.3, derive_seed(SEED, &[10, 0]));
    let (gs, gd) = simulate_sites(5, 2, &opts, derive_seed(SEED, &[10, 1]));
    let grid = PredictionGrid::new(gs, gd, 2).unwrap();
    // A latent field to condition on, observed at every site.
    let (latent, _) = simulate_svc_dataset(60, &params, &opts, derive_seed(SEED, &[10, 0])).unwrap();
    let w = latent.z();
    let zero = vec![0.0; 60];
    let mut laws = vec![("full-latent".to_string(), dense_law(ds.sites(), ds.design(), w, &zero, &params, &grid).unwrap())];
    for joint in [false, true] {
        let plan = PredictionPlan::new(ds.sites(), ds.design(), &grid, 8, joint).unwrap();
        let lp = LatentFreePlan::new(&ds, &grid, 8, joint).unwrap();
        let mode = if joint { "joint" } else { "independent" };
        laws.push((format!("latent-vecchia {mode}"), vecchia_law(&plan, w, &zero, &params, Exec::Sequential).unwrap()));
        let lf = latent_free_law(&lp, &ds, &params, LatentFreeOptions::default(), Exec::Sequential).unwrap();
        laws.push((format!("latent-free {mode}"), lf));
    }
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (k, (name, law)) in laws.iter().enumerate() {
        let dev = moment_check(law, 100_000, derive_seed(SEED, &[10, 2, k as u64]));
        worst = worst.max(dev);
        parts.push(format!("{name} {dev:.2}"));
    }
    outcome(worst < 5.0, format!("1e5 draws, n_P = 5, max deviation in SE (< 5): {}", parts.join(", ")))
}

fn criterion_analog() -> Outcome {
    let t = Instant::now();
    let p = 7;
    let params = params_p(p);
    let opts = SimulationOptions::default();
    let (base, _) = simulate_svc_dataset(136, &params, &opts, derive_seed(SEED, &[11, 0])).unwrap();
    let ds = apply_censoring(&base, 0.5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path().join("data.csv")).unwrap();
    let cfg = run(ModelKind::LatentFree, 40, 4, 2000, 1000, derive_seed(SEED, &[11, 1]));
    let samples = fit_samples(&ds, &cfg, Exec::Parallel);
    write_draws_csv(&samples, dir.path().join("draws.csv")).unwrap();
    write_diagnostics_json(&samples, dir.path().join("diagnostics.json")).unwrap();
    let (gs, gd) = simulate_sites(10_000, p, &opts, derive_seed(SEED, &[11, 2]));
    let grid = PredictionGrid::new(gs, gd, p).unwrap();
    let popts = PredictOptions {
        m: 40,
        joint: false,
        latent_free: LatentFreeOptions::default(),
        thin: samples.n_draws().div_ceil(100),
        exec: Exec::Parallel,
    };
    let pd = posterior_predictive(&samples, &ds, &grid, ModelKind::LatentFree, &popts, derive_seed(SEED, &[11, 3]))
        .unwrap();
    write_summary_csv(&pd, dir.path().join("pred.csv")).unwrap();
    let finite = pd.mean.iter().chain(&pd.sd).all(|v| v.is_finite());
    let secs = t.elapsed().as_secs_f64();
    outcome(
        finite && pd.n_sites() == 10_000 && secs < 3600.0,
        format!(
            "n=136, p=7, {} censored, M=40, 4x2000 iterations (max rhat {:.3}), {} draws on 10000 sites, finite {finite}; {secs:.0}s (< 3600s)",
            ds.n_censored(),
            samples.max_rhat(),
            pd.n_draws()
        ),
    )
}

fn main() {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let on = |id: &str| wanted.is_empty() || wanted.iter().any(|w| w == id);
    let mut results: Vec<(String, &str, Outcome)> = Vec::new();
    let mut report = |id: &str, name: &'static str, f: &dyn Fn() -> Outcome| {
        if !on(id) {
            return;
        }
        let t = Instant::now();
        let o = f();
        println!(
            "{} criterion {id} ({name}): {} [{:.0}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
        results.push((id.to_string(), name, o));
    };
    report("1", "exactness chain", &criterion_1);
    if on("2") || on("3") {
        let (rows, secs) = likelihood_run();
        report("2", "censored-likelihood accuracy", &|| criterion_2(&rows, secs));
        report("3", "monotone-in-M trend", &|| criterion_3(&rows));
    }
    report("4", "parameter recovery", &criterion_4);
    report("5", "method consistency", &criterion_5);
    report("6", "timing direction", &criterion_6);
    report("7", "prediction-metric degradation", &criterion_7);
    report("8", "Mills-ratio oracle", &criterion_8);
    report("9", "CRPS estimator", &criterion_9);
    report("10", "conditional-simulation law", &criterion_10);
    report("analog", "7-covariate pipeline", &criterion_analog);

    let failed: Vec<&str> = results.iter().filter(|r| !r.2.pass).map(|r| r.0.as_str()).collect();
    println!("acceptance: {} passed, {} failed {:?}", results.len() - failed.len(), failed.len(), failed);
    let strict = std::env::var("VECSVC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
