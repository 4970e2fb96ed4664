//! Data model, ingestion, validation and configuration.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::SimulationOptions;

/// Planar coordinates of one site.
pub type Site = [f64; 2];

/// Euclidean distance between two sites.
#[inline]
pub fn distance(a: &Site, b: &Site) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Largest pairwise distance among `sites`.
pub fn max_pairwise_distance(sites: &[Site]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in sites.iter().enumerate() {
        for b in &sites[i + 1..] {
            best = best.max(distance(a, b));
        }
    }
    best
}

/// Spatial observations with a single left-censoring limit.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    sites: Vec<Site>,
    /// Row-major n×p design matrix.
    design: Vec<f64>,
    p: usize,
    z: Vec<f64>,
    censored: Vec<bool>,
    limit: f64,
}

impl Dataset {
    /// Builds a dataset and checks every invariant.
    pub fn new(
        sites: Vec<Site>,
        design: Vec<f64>,
        p: usize,
        z: Vec<f64>,
        censored: Vec<bool>,
        limit: f64,
    ) -> Result<Self> {
        let n = sites.len();
        if p == 0 {
            return Err(Error::InvalidDataset("design matrix has no columns".into()));
        }
        if design.len() != n * p || z.len() != n || censored.len() != n {
            return Err(Error::InvalidDataset(format!(
                "inconsistent sizes: {} sites, {} design entries for p={}, {} responses, {} mask entries",
                n,
                design.len(),
                p,
                z.len(),
                censored.len()
            )));
        }
        if !limit.is_finite() {
            return Err(Error::InvalidDataset("detection limit must be finite".into()));
        }
        for (i, s) in sites.iter().enumerate() {
            if !s[0].is_finite() || !s[1].is_finite() {
                return Err(Error::InvalidDataset(format!("row {}: non-finite coordinate", i + 1)));
            }
            if design[i * p..(i + 1) * p].iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!("row {}: non-finite covariate", i + 1)));
            }
            if !z[i].is_finite() {
                return Err(Error::InvalidDataset(format!("row {}: non-finite response", i + 1)));
            }
            if censored[i] && z[i] != limit {
                return Err(Error::InvalidDataset(format!(
                    "row {}: censored response {} differs from the detection limit {}",
                    i + 1,
                    z[i],
                    limit
                )));
            }
        }
        Ok(Dataset {
            sites,
            design,
            p,
            z,
            censored,
            limit,
        })
    }

    /// Fully observed dataset. The limit is set one unit below the minimum response.
    pub fn uncensored(sites: Vec<Site>, design: Vec<f64>, p: usize, z: Vec<f64>) -> Result<Self> {
        let limit = z.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
        let limit = if limit.is_finite() { limit } else { 0.0 };
        let n = z.len();
        Dataset::new(sites, design, p, z, vec![false; n], limit)
    }

    pub fn n(&self) -> usize {
        self.sites.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn design(&self) -> &[f64] {
        &self.design
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.design[i * self.p..(i + 1) * self.p]
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn censored(&self) -> &[bool] {
        &self.censored
    }

    pub fn limit(&self) -> f64 {
        self.limit
    }

    pub fn n_censored(&self) -> usize {
        self.censored.iter().filter(|&&c| c).count()
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.censored[i]).collect()
    }

    pub fn censored_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.censored[i]).collect()
    }

    /// Fixed-effect mean Xα.
    pub fn mean(&self, alpha: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|i| self.x_row(i).iter().zip(alpha).map(|(x, a)| x * a).sum())
            .collect()
    }

    /// Rows `idx` as a new dataset with the same limit.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut design = Vec::with_capacity(idx.len() * self.p);
        for &i in idx {
            design.extend_from_slice(self.x_row(i));
        }
        Dataset {
            sites: idx.iter().map(|&i| self.sites[i]).collect(),
            design,
            p: self.p,
            z: idx.iter().map(|&i| self.z[i]).collect(),
            censored: idx.iter().map(|&i| self.censored[i]).collect(),
            limit: self.limit,
        }
    }

    /// Same sites and covariates with a new response vector and mask.
    pub fn with_responses(&self, z: Vec<f64>, censored: Vec<bool>, limit: f64) -> Result<Dataset> {
        Dataset::new(self.sites.clone(), self.design.clone(), self.p, z, censored, limit)
    }
}

/// Reads a dataset CSV: a `# L=<value>` line, then `x,y,z,censored,x1..xp`.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    let limit = parse_limit_line(first.trim())?;

    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| parse_err(2, e.to_string()))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 5 || cols[..4] != ["x", "y", "z", "censored"] {
        return Err(parse_err(
            2,
            format!("expected header x,y,z,censored,x1,...,xp, found {}", cols.join(",")),
        ));
    }
    let p = cols.len() - 4;

    let mut sites = Vec::new();
    let mut design = Vec::new();
    let mut z = Vec::new();
    let mut censored = Vec::new();
    for (k, record) in csv.records().enumerate() {
        let line = k + 3;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != cols.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", cols.len(), record.len()),
            ));
        }
        let num = |j: usize| -> Result<f64> {
            let v: f64 = record[j]
                .parse()
                .map_err(|_| parse_err(line, format!("column {}: cannot parse {:?}", cols[j], &record[j])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(line, format!("column {}: non-finite value", cols[j])))
            }
        };
        sites.push([num(0)?, num(1)?]);
        z.push(num(2)?);
        let flag = match &record[3] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(line, format!("censored flag must be 0 or 1, found {other:?}"))),
        };
        if flag && z[z.len() - 1] != limit {
            return Err(parse_err(
                line,
                format!("censored row holds z = {} but L = {}", z[z.len() - 1], limit),
            ));
        }
        censored.push(flag);
        for j in 4..cols.len() {
            design.push(num(j)?);
        }
    }
    Dataset::new(sites, design, p, z, censored, limit)
}

fn parse_err(line: usize, message: String) -> Error {
    Error::Parse { line, message }
}

fn parse_limit_line(line: &str) -> Result<f64> {
    let value = line
        .strip_prefix('#')
        .map(str::trim)
        .and_then(|s| s.strip_prefix("L="))
        .ok_or_else(|| parse_err(1, format!("expected `# L=<value>`, found {line:?}")))?;
    let limit: f64 = value
        .trim()
        .parse()
        .map_err(|_| parse_err(1, format!("cannot parse detection limit {value:?}")))?;
    if !limit.is_finite() {
        return Err(parse_err(1, "detection limit must be finite".into()));
    }
    Ok(limit)
}

/// Writes `dataset` in the format read by [`load_dataset`]. Floats use the
/// shortest representation that round-trips exactly.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "# L={}", dataset.limit).map_err(io)?;
    let mut header = String::from("x,y,z,censored");
    for j in 1..=dataset.p {
        header.push_str(&format!(",x{j}"));
    }
    writeln!(w, "{header}").map_err(io)?;
    for i in 0..dataset.n() {
        let s = dataset.sites[i];
        write!(
            w,
            "{},{},{},{}",
            s[0],
            s[1],
            dataset.z[i],
            u8::from(dataset.censored[i])
        )
        .map_err(io)?;
        for v in dataset.x_row(i) {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Fixed effects, per-covariate GP hyperparameters and the nugget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvcParams {
    pub alpha: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub phi: Vec<f64>,
    pub tau2: f64,
}

impl SvcParams {
    pub fn p(&self) -> usize {
        self.alpha.len()
    }

    /// Checks positivity and that every vector has length `p`.
    pub fn validate(&self, p: usize) -> Result<()> {
        validate_params(self, p)
    }
}

pub fn validate_params(params: &SvcParams, p: usize) -> Result<()> {
    for (name, len) in [
        ("alpha", params.alpha.len()),
        ("sigma2", params.sigma2.len()),
        ("phi", params.phi.len()),
    ] {
        if len != p {
            return Err(Error::InvalidParams(format!("{name} has length {len}, expected {p}")));
        }
    }
    if params.alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidParams("alpha must be finite".into()));
    }
    for (j, &s) in params.sigma2.iter().enumerate() {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParams(format!("sigma2[{j}] = {s} must be positive")));
        }
    }
    for (j, &f) in params.phi.iter().enumerate() {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::InvalidParams(format!("phi[{j}] = {f} must be positive")));
        }
    }
    if !(params.tau2 > 0.0 && params.tau2.is_finite()) {
        return Err(Error::InvalidParams(format!("tau2 = {} must be positive", params.tau2)));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

impl NormalPrior {
    pub fn log_pdf(&self, x: f64) -> f64 {
        crate::normal::log_density(x, self.mean, self.sd * self.sd)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvGammaPrior {
    pub shape: f64,
    pub scale: f64,
}

impl InvGammaPrior {
    pub fn log_pdf(&self, x: f64) -> f64 {
        let (a, b) = (self.shape, self.scale);
        a * b.ln() - statrs::function::gamma::ln_gamma(a) - (a + 1.0) * x.ln() - b / x
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn log_pdf(&self, x: f64) -> f64 {
        let (a, r) = (self.shape, self.rate);
        a * r.ln() - statrs::function::gamma::ln_gamma(a) + (a - 1.0) * x.ln() - r * x
    }
}

/// Fully resolved priors, one entry per covariate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub alpha: Vec<NormalPrior>,
    pub sigma2: Vec<InvGammaPrior>,
    pub phi: Vec<GammaPrior>,
    pub tau2: InvGammaPrior,
}

impl PriorConfig {
    /// Weakly informative defaults scaled to the site geometry.
    pub fn default_for(sites: &[Site], p: usize) -> PriorConfig {
        PriorSpec::default().resolve(sites, p).expect("default priors are valid")
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.alpha.len() != p || self.sigma2.len() != p || self.phi.len() != p {
            return Err(Error::InvalidConfig(format!("priors must have one entry per covariate (p = {p})")));
        }
        let pos = |v: f64| v > 0.0 && v.is_finite();
        let ok = self.alpha.iter().all(|n| pos(n.sd) && n.mean.is_finite())
            && self.sigma2.iter().all(|g| pos(g.shape) && pos(g.scale))
            && self.phi.iter().all(|g| pos(g.shape) && pos(g.rate))
            && pos(self.tau2.shape)
            && pos(self.tau2.scale);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("prior sd/shape/scale/rate values must be positive".into()))
        }
    }
}

/// Partially specified priors as read from JSON. A one-element list is
/// broadcast to every covariate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub alpha: Option<Vec<NormalPrior>>,
    pub sigma2: Option<Vec<InvGammaPrior>>,
    pub phi: Option<Vec<GammaPrior>>,
    pub tau2: Option<InvGammaPrior>,
}

fn broadcast<T: Clone>(name: &str, v: Option<Vec<T>>, p: usize, default: T) -> Result<Vec<T>> {
    match v {
        None => Ok(vec![default; p]),
        Some(v) if v.len() == 1 => Ok(vec![v[0].clone(); p]),
        Some(v) if v.len() == p => Ok(v),
        Some(v) => Err(Error::InvalidConfig(format!(
            "priors.{name} has {} entries, expected 1 or {p}",
            v.len()
        ))),
    }
}

impl PriorSpec {
    pub fn resolve(&self, sites: &[Site], p: usize) -> Result<PriorConfig> {
        let dmax = max_pairwise_distance(sites);
        let phi0 = if dmax > 0.0 { 10.0 / dmax } else { 10.0 };
        let ig = InvGammaPrior { shape: 2.0, scale: 1.0 };
        let cfg = PriorConfig {
            alpha: broadcast("alpha", self.alpha.clone(), p, NormalPrior { mean: 0.0, sd: 10.0 })?,
            sigma2: broadcast("sigma2", self.sigma2.clone(), p, ig)?,
            phi: broadcast("phi", self.phi.clone(), p, GammaPrior { shape: 2.0, rate: 2.0 / phi0 })?,
            tau2: self.tau2.unwrap_or(ig),
        };
        cfg.validate(p)?;
        Ok(cfg)
    }
}

/// The three posterior samplers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    FullLatent,
    LatentVecchia,
    LatentFree,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::FullLatent, ModelKind::LatentVecchia, ModelKind::LatentFree];

    pub fn has_latent(self) -> bool {
        !matches!(self, ModelKind::LatentFree)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::FullLatent => "full-latent",
            ModelKind::LatentVecchia => "latent-vecchia",
            ModelKind::LatentFree => "latent-free",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-latent" => Ok(ModelKind::FullLatent),
            "latent-vecchia" => Ok(ModelKind::LatentVecchia),
            "latent-free" => Ok(ModelKind::LatentFree),
            other => Err(Error::InvalidConfig(format!(
                "unknown model {other:?}; expected full-latent, latent-vecchia or latent-free"
            ))),
        }
    }
}

/// Sampler schedule and model choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelKind,
    /// Conditioning-set size.
    #[serde(rename = "M")]
    pub m: usize,
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Censoring fraction applied by the simulator.
    pub censoring: f64,
    /// Predictions also condition on earlier prediction sites.
    pub joint_predictions: bool,
    /// Adds the stage-1 conditional variance to the noise of imputed censored values.
    pub inflate_pseudo_noise: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::LatentFree,
            m: 30,
            chains: 4,
            iterations: 2000,
            burn_in: 1000,
            seed: 1,
            censoring: 0.0,
            joint_predictions: false,
            inflate_pseudo_noise: false,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::InvalidConfig("M must be at least 1".into()));
        }
        if self.chains < 1 {
            return Err(Error::InvalidConfig("chains must be at least 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn-in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if !(0.0..1.0).contains(&self.censoring) {
            return Err(Error::InvalidConfig(format!(
                "censoring level {} must lie in [0, 1)",
                self.censoring
            )));
        }
        Ok(())
    }

    pub fn kept_draws(&self) -> usize {
        self.iterations - self.burn_in
    }
}

/// The single JSON configuration document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub params: Option<SvcParams>,
    pub priors: Option<PriorSpec>,
    pub run: Option<RunConfig>,
    pub simulation: Option<SimulationOptions>,
}

impl ConfigDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ConfigDocument = serde_json::from_str(text)?;
        if let Some(run) = &doc.run {
            run.validate()?;
        }
        Ok(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// The simulation-study parameter set on the unit square.
pub fn reference_params() -> SvcParams {
    SvcParams {
        alpha: vec![-5.0, 10.0],
        sigma2: vec![15.0, 30.0],
        phi: vec![40.0, 15.0],
        tau2: 0.1,
    }
}
