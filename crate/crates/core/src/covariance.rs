//! Exponential kernel and the SVC covariance `W Σ_η Wᵀ + τ² I`.

use nalgebra::DMatrix;

use crate::domain::{distance, Site, SvcParams};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelFamily {
    Exponential,
}

/// One stationary covariance function `C(d)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub sigma2: f64,
    /// Decay rate (inverse range).
    pub phi: f64,
}

impl KernelSpec {
    pub fn exponential(sigma2: f64, phi: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && phi > 0.0) {
            return Err(Error::InvalidParams(format!(
                "kernel needs sigma2 > 0 and phi > 0, got ({sigma2}, {phi})"
            )));
        }
        Ok(KernelSpec {
            family: KernelFamily::Exponential,
            sigma2,
            phi,
        })
    }

    #[inline]
    pub fn eval(&self, d: f64) -> f64 {
        match self.family {
            KernelFamily::Exponential => self.sigma2 * (-self.phi * d).exp(),
        }
    }
}

/// `sigma2 · exp(-phi · d)`.
pub fn exp_cov(d: f64, sigma2: f64, phi: f64) -> Result<f64> {
    if d < 0.0 || d.is_nan() {
        return Err(Error::InvalidParams(format!("negative distance {d}")));
    }
    Ok(sigma2 * (-phi * d).exp())
}

/// Covariance between two (site, covariate row) pairs. `nugget` adds τ²,
/// so callers pass it only for an observation with itself.
pub fn svc_cross_cov(
    site_i: &Site,
    x_i: &[f64],
    site_j: &Site,
    x_j: &[f64],
    params: &SvcParams,
    nugget: bool,
) -> Result<f64> {
    let p = params.p();
    if x_i.len() != p || x_j.len() != p {
        return Err(Error::Dimension(format!(
            "covariate rows of length {} and {} for p = {p}",
            x_i.len(),
            x_j.len()
        )));
    }
    let kern = SvcKernel::new(params);
    Ok(kern.cov(site_i, x_i, site_j, x_j) + if nugget { params.tau2 } else { 0.0 })
}

/// Pre-extracted parameters for fast repeated covariance evaluation.
#[derive(Clone, Debug)]
pub struct SvcKernel {
    sigma2: Vec<f64>,
    phi: Vec<f64>,
    tau2: f64,
}

impl SvcKernel {
    pub fn new(params: &SvcParams) -> Self {
        SvcKernel {
            sigma2: params.sigma2.clone(),
            phi: params.phi.clone(),
            tau2: params.tau2,
        }
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    /// Latent (noise-free) covariance at distance `d` for covariate rows `xa`, `xb`.
    #[inline]
    pub fn cov_at(&self, d: f64, xa: &[f64], xb: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in 0..self.sigma2.len() {
            let w = xa[k] * xb[k];
            if w != 0.0 {
                s += w * self.sigma2[k] * (-self.phi[k] * d).exp();
            }
        }
        s
    }

    #[inline]
    pub fn cov(&self, sa: &Site, xa: &[f64], sb: &Site, xb: &[f64]) -> f64 {
        self.cov_at(distance(sa, sb), xa, xb)
    }

    /// Latent variance at a site: Σ_k σ²_k x_k².
    #[inline]
    pub fn variance(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.sigma2).map(|(v, s)| v * v * s).sum()
    }
}

/// Dense n×n covariance. The upper triangle is computed and mirrored, so the
/// result is exactly symmetric.
pub fn dense_cov_matrix(sites: &[Site], design: &[f64], params: &SvcParams, include_nugget: bool) -> Result<DMatrix<f64>> {
    let n = sites.len();
    let p = params.p();
    if design.len() != n * p {
        return Err(Error::Dimension(format!(
            "design has {} entries, expected {} x {p}",
            design.len(),
            n
        )));
    }
    let kern = SvcKernel::new(params);
    let row = |i: usize| &design[i * p..(i + 1) * p];
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut c = kern.cov(&sites[i], row(i), &sites[j], row(j));
            if i == j && include_nugget {
                c += params.tau2;
            }
            k[(i, j)] = c;
            k[(j, i)] = c;
        }
    }
    Ok(k)
}

/// Dense cross-covariance between two site sets (latent, no nugget).
pub fn dense_cross_cov(
    sites_a: &[Site],
    design_a: &[f64],
    sites_b: &[Site],
    design_b: &[f64],
    params: &SvcParams,
) -> DMatrix<f64> {
    let p = params.p();
    let kern = SvcKernel::new(params);
    DMatrix::from_fn(sites_a.len(), sites_b.len(), |i, j| {
        kern.cov(
            &sites_a[i],
            &design_a[i * p..(i + 1) * p],
            &sites_b[j],
            &design_b[j * p..(j + 1) * p],
        )
    })
}
