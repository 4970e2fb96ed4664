//! Draws CSV (`chain,iteration,<parameters>[,w1..wn]`) and diagnostics JSON.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::{json, Value};

use super::{ChainSamples, PosteriorSamples};
use crate::domain::ModelKind;
use crate::error::{Error, Result};

/// Writes one row per kept draw; latent columns are appended when recorded.
pub fn write_draws_csv(samples: &PosteriorSamples, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let n_latent = samples
        .chains
        .first()
        .and_then(|c| c.latent.as_ref())
        .and_then(|l| l.first())
        .map_or(0, Vec::len);
    let mut header = String::from("chain,iteration");
    for name in &samples.names {
        header.push(',');
        header.push_str(name);
    }
    for i in 1..=n_latent {
        header.push_str(&format!(",w{i}"));
    }
    writeln!(w, "{header}").map_err(io)?;
    for c in &samples.chains {
        for (k, d) in c.draws.iter().enumerate() {
            write!(w, "{},{}", c.chain, samples.burn_in + k).map_err(io)?;
            for v in d {
                write!(w, ",{v}").map_err(io)?;
            }
            if let Some(l) = c.latent.as_ref() {
                for v in &l[k] {
                    write!(w, ",{v}").map_err(io)?;
                }
            }
            writeln!(w).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads a draws CSV written by [`write_draws_csv`].
pub fn read_draws_csv(path: impl AsRef<Path>, kind: ModelKind, p: usize) -> Result<PosteriorSamples> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?.clone();
    let names = super::param_names(p);
    let expected: Vec<&str> = ["chain", "iteration"].into_iter().chain(names.iter().map(String::as_str)).collect();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < expected.len() || cols[..expected.len()] != expected[..] {
        return Err(Error::Parse {
            line: 1,
            message: format!("draws header does not match p = {p}: expected {}", expected.join(",")),
        });
    }
    let n_latent = cols.len() - expected.len();
    let mut chains: Vec<ChainSamples> = Vec::new();
    let mut min_iter = usize::MAX;
    let mut max_iter = 0;
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let num = |j: usize| -> Result<f64> {
            rec[j].parse().map_err(|_| Error::Parse {
                line,
                message: format!("column {}: cannot parse {:?}", cols[j], &rec[j]),
            })
        };
        let chain: usize = rec[0].parse().map_err(|_| Error::Parse { line, message: "bad chain index".into() })?;
        let iter: usize = rec[1].parse().map_err(|_| Error::Parse { line, message: "bad iteration".into() })?;
        min_iter = min_iter.min(iter);
        max_iter = max_iter.max(iter);
        let draw = (2..expected.len()).map(num).collect::<Result<Vec<f64>>>()?;
        let lat = (expected.len()..cols.len()).map(num).collect::<Result<Vec<f64>>>()?;
        if chains.last().is_none_or(|c| c.chain != chain) {
            chains.push(ChainSamples {
                chain,
                draws: Vec::new(),
                latent: (n_latent > 0).then(Vec::new),
                log_posterior: Vec::new(),
                acceptance: Vec::new(),
                wall_time: 0.0,
                auto_rejected: 0,
            });
        }
        let c = chains.last_mut().expect("pushed");
        c.draws.push(draw);
        if let Some(l) = c.latent.as_mut() {
            l.push(lat);
        }
    }
    if chains.is_empty() {
        return Err(Error::InvalidDataset(format!("{} holds no draws", path.display())));
    }
    PosteriorSamples::from_chains(kind, p, max_iter + 1, min_iter, chains)
}

pub fn diagnostics_json(samples: &PosteriorSamples) -> Value {
    let params: Vec<Value> = samples
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            json!({
                "name": name,
                "mean": samples.mean(k),
                "rhat": finite_or_null(samples.rhat[k]),
                "ess": finite_or_null(samples.ess[k]),
            })
        })
        .collect();
    let chains: Vec<Value> = samples
        .chains
        .iter()
        .map(|c| {
            let acc: serde_json::Map<String, Value> = c.acceptance.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
            json!({
                "chain": c.chain,
                "acceptance": acc,
                "wall_time_s": c.wall_time,
                "auto_rejected": c.auto_rejected,
                "log_posterior_mean": finite_or_null(c.log_posterior.iter().sum::<f64>() / c.log_posterior.len().max(1) as f64),
                "log_posterior_last": c.log_posterior.last().copied().map_or(Value::Null, finite_or_null),
            })
        })
        .collect();
    json!({
        "model": samples.kind.as_str(),
        "iterations": samples.iterations,
        "burn_in": samples.burn_in,
        "draws": samples.n_draws(),
        "max_rhat": finite_or_null(samples.max_rhat()),
        "parameters": params,
        "chains": chains,
    })
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

pub fn write_diagnostics_json(samples: &PosteriorSamples, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(&diagnostics_json(samples))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
