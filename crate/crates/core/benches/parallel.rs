use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use vecsvc::domain::reference_params;
use vecsvc::ordering::{censored_aware_order, conditioning_sets, maxmin_order};
use vecsvc::predict::{vecchia_law, PredictionGrid, PredictionPlan};
use vecsvc::simulate::{apply_censoring, simulate_sites, simulate_svc_dataset, SimulationOptions};
use vecsvc::vecchia::{build_factor_with, censored_vecchia_loglik_with, VecchiaCache};
use vecsvc::Exec;

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn factor(c: &mut Criterion) {
    let params = reference_params();
    let (ds, _) = simulate_svc_dataset(2000, &params, &SimulationOptions::default(), 1).unwrap();
    let perm = maxmin_order(ds.sites()).unwrap();
    let mut g = c.benchmark_group("factor_n2000");
    for m in [10, 30] {
        let sets = Arc::new(conditioning_sets(ds.sites(), &perm, m, None).unwrap());
        for (name, exec) in POLICIES {
            g.bench_with_input(BenchmarkId::new(name, m), &m, |b, _| {
                b.iter(|| build_factor_with(exec, ds.sites(), ds.design(), &params, Arc::clone(&sets), true).unwrap())
            });
        }
        // Cached build with a fresh decay each call, as in a sampler step.
        let mut cache = VecchiaCache::new(ds.sites(), ds.design(), ds.p(), Arc::clone(&sets), true).unwrap();
        for (name, exec) in POLICIES {
            let mut p = params.clone();
            g.bench_with_input(BenchmarkId::new(format!("cached_{name}"), m), &m, |b, _| {
                b.iter(|| {
                    p.phi[0] *= 1.0001;
                    cache.factor(exec, &p).unwrap()
                })
            });
        }
    }
    g.finish();
}

fn latent_free_loglik(c: &mut Criterion) {
    let params = reference_params();
    let (base, _) = simulate_svc_dataset(1000, &params, &SimulationOptions::default(), 2).unwrap();
    let ds = apply_censoring(&base, 0.25).unwrap();
    let perm = censored_aware_order(ds.sites(), ds.censored()).unwrap();
    let eligible: Vec<bool> = ds.censored().iter().map(|c| !c).collect();
    let sets = Arc::new(conditioning_sets(ds.sites(), &perm, 30, Some(&eligible)).unwrap());
    let mut g = c.benchmark_group("latent_free_loglik_n1000_m30");
    for (name, exec) in POLICIES {
        g.bench_function(name, |b| b.iter(|| censored_vecchia_loglik_with(exec, &ds, &params, &sets).unwrap()));
    }
    g.finish();
}

fn prediction_law(c: &mut Criterion) {
    let params = reference_params();
    let opts = SimulationOptions::default();
    let (ds, _) = simulate_svc_dataset(500, &params, &opts, 3).unwrap();
    let (sites, design) = simulate_sites(2000, ds.p(), &opts, 4);
    let grid = PredictionGrid::new(sites, design, ds.p()).unwrap();
    let plan = PredictionPlan::new(ds.sites(), ds.design(), &grid, 30, false).unwrap();
    let noise = vec![params.tau2; ds.n()];
    let mut g = c.benchmark_group("vecchia_law_500x2000_m30");
    for (name, exec) in POLICIES {
        g.bench_function(name, |b| b.iter(|| vecchia_law(&plan, ds.z(), &noise, &params, exec).unwrap()));
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = factor, latent_free_loglik, prediction_law
}
criterion_main!(benches);
