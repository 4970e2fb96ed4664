//! Grid CSV (`x,y,x1..xp`), summary CSV (`x,y,mean,sd`) and the binary
//! draw matrix: little-endian f64, row-major, written in row chunks, with a
//! `<file>.json` sidecar giving the shape.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PredictionGrid, PredictiveDraws};
use crate::error::{Error, Result};

/// Rows per chunk of the binary draw matrix.
const CHUNK_ROWS: usize = 256;

pub fn load_grid(path: impl AsRef<Path>) -> Result<PredictionGrid> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    let p = cols.len().saturating_sub(2);
    let expected: Vec<String> = ["x".to_string(), "y".to_string()]
        .into_iter()
        .chain((1..=p).map(|j| format!("x{j}")))
        .collect();
    if p == 0 || cols != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header x,y,x1,...,xp, found {}", cols.join(",")),
        });
    }
    let mut sites = Vec::new();
    let mut design = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if rec.len() != cols.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", cols.len(), rec.len()),
            });
        }
        let vals = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse { line, message: format!("cannot parse {s:?}") })
            })
            .collect::<Result<Vec<f64>>>()?;
        sites.push([vals[0], vals[1]]);
        design.extend_from_slice(&vals[2..]);
    }
    PredictionGrid::new(sites, design, p)
}

pub fn save_grid(grid: &PredictionGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let mut header = String::from("x,y");
    for j in 1..=grid.p() {
        header.push_str(&format!(",x{j}"));
    }
    writeln!(w, "{header}").map_err(io)?;
    for (j, s) in grid.sites().iter().enumerate() {
        write!(w, "{},{}", s[0], s[1]).map_err(io)?;
        for v in grid.x_row(j) {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_summary_csv(draws: &PredictiveDraws, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "x,y,mean,sd").map_err(io)?;
    for (j, s) in draws.grid.sites().iter().enumerate() {
        writeln!(w, "{},{},{},{}", s[0], s[1], draws.mean[j], draws.sd[j]).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    rows: usize,
    cols: usize,
    dtype: String,
    layout: String,
    chunk_rows: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the draw matrix and its sidecar.
pub fn write_draw_matrix(draws: &PredictiveDraws, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let cols = draws.n_sites();
    let mut buf = Vec::with_capacity(CHUNK_ROWS * cols * 8);
    for chunk in draws.matrix().chunks(CHUNK_ROWS * cols) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta = Sidecar {
        rows: draws.n_draws(),
        cols,
        dtype: "f64-le".into(),
        layout: "row-major".into(),
        chunk_rows: CHUNK_ROWS,
    };
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(side, e))
}

/// Reads a draw matrix written by [`write_draw_matrix`]: `(rows, cols, values)`.
pub fn read_draw_matrix(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f64>)> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: Sidecar = serde_json::from_str(&text)?;
    if meta.dtype != "f64-le" || meta.layout != "row-major" {
        return Err(Error::InvalidConfig(format!("unsupported draw layout {} / {}", meta.dtype, meta.layout)));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != meta.rows * meta.cols * 8 {
        return Err(Error::InvalidDataset(format!(
            "{} holds {} bytes, sidecar promises {}x{} doubles",
            path.display(),
            bytes.len(),
            meta.rows,
            meta.cols
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    Ok((meta.rows, meta.cols, values))
}
