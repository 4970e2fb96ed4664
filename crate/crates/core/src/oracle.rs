//! Exact reference computations: dense Gaussian likelihoods, the censored
//! likelihood through a quasi-Monte-Carlo multivariate normal CDF, and
//! truncated-normal moments.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::{dense_cov_matrix, dense_cross_cov};
use crate::domain::{Dataset, Site, SvcParams};
use crate::error::{Error, Result};
use crate::normal;
use crate::par::{self, Exec};
use crate::rng;

/// Largest number of censored dimensions the oracle integrates.
pub const MAX_CENSORED_DIM: usize = 200;

/// Quasi-Monte-Carlo settings for the multivariate normal CDF.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    /// Lattice points per randomization.
    pub samples: usize,
    /// Independent random shifts; their spread gives the standard error.
    pub randomizations: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            samples: 2000,
            randomizations: 10,
            seed: 0,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 128 {
            return Err(Error::InvalidConfig(format!("samples = {} must be at least 128", self.samples)));
        }
        if self.randomizations < 8 {
            return Err(Error::InvalidConfig(format!(
                "randomizations = {} must be at least 8",
                self.randomizations
            )));
        }
        Ok(())
    }
}

/// Log-density of `N(0, cov)` at `r`.
pub fn dense_mvn_logpdf(cov: &DMatrix<f64>, r: &[f64]) -> Result<f64> {
    let n = r.len();
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::Dimension(format!("{}×{} covariance for {n} residuals", cov.nrows(), cov.ncols())));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("dense covariance matrix".into()))?;
    let mut y = DVector::from_column_slice(r);
    chol.l_dirty().solve_lower_triangular_mut(&mut y);
    let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    Ok(-0.5 * y.norm_squared() - 0.5 * logdet - n as f64 * normal::LN_SQRT_2PI)
}

/// Exact log-density of all responses under the SVC model, ignoring the
/// censoring mask.
pub fn dense_gaussian_loglik(dataset: &Dataset, params: &SvcParams) -> Result<f64> {
    params.validate(dataset.p())?;
    let cov = dense_cov_matrix(dataset.sites(), dataset.design(), params, true)?;
    let mean = dataset.mean(&params.alpha);
    let r: Vec<f64> = dataset.z().iter().zip(&mean).map(|(z, m)| z - m).collect();
    dense_mvn_logpdf(&cov, &r)
}

/// A log-likelihood estimate with its Monte Carlo standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Censored log-likelihood `log p(Z_o) + log P(Z_c ≤ L | Z_o)`.
pub fn censored_exact_loglik(dataset: &Dataset, params: &SvcParams, mc: &McConfig) -> Result<Estimate> {
    censored_exact_loglik_with(Exec::Sequential, dataset, params, mc)
}

pub fn censored_exact_loglik_with(
    exec: Exec,
    dataset: &Dataset,
    params: &SvcParams,
    mc: &McConfig,
) -> Result<Estimate> {
    params.validate(dataset.p())?;
    mc.validate()?;
    let obs = dataset.observed_indices();
    let cen = dataset.censored_indices();
    if cen.len() > MAX_CENSORED_DIM {
        return Err(Error::InvalidConfig(format!(
            "{} censored observations exceed the oracle limit of {MAX_CENSORED_DIM}",
            cen.len()
        )));
    }
    let mean = dataset.mean(&params.alpha);
    let pick = |idx: &[usize]| -> (Vec<Site>, Vec<f64>) {
        let d = dataset.subset(idx);
        (d.sites().to_vec(), d.design().to_vec())
    };
    let (so, xo) = pick(&obs);
    let r_o: Vec<f64> = obs.iter().map(|&i| dataset.z()[i] - mean[i]).collect();
    let k_oo = dense_cov_matrix(&so, &xo, params, true)?;
    let log_obs = dense_mvn_logpdf(&k_oo, &r_o)?;
    if cen.is_empty() {
        return Ok(Estimate {
            value: log_obs,
            std_error: 0.0,
        });
    }
    let (sc, xc) = pick(&cen);
    let k_cc = dense_cov_matrix(&sc, &xc, params, true)?;
    let (cond_mean, cond_cov) = if obs.is_empty() {
        (cen.iter().map(|&i| mean[i]).collect::<Vec<_>>(), k_cc)
    } else {
        let k_co = dense_cross_cov(&sc, &xc, &so, &xo, params);
        let chol = k_oo
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("observed covariance".into()))?;
        let sol = chol.solve(&DVector::from_column_slice(&r_o));
        let shift = &k_co * sol;
        let a = chol.solve(&k_co.transpose());
        let cov = &k_cc - &k_co * a;
        let cov = (&cov + cov.transpose()) * 0.5;
        let m: Vec<f64> = cen.iter().enumerate().map(|(k, &i)| mean[i] + shift[k]).collect();
        (m, cov)
    };
    let upper = vec![dataset.limit(); cen.len()];
    let cdf = mvn_log_cdf_with(exec, &cond_mean, &cond_cov, &upper, mc)?;
    Ok(Estimate {
        value: log_obs + cdf.value,
        std_error: cdf.std_error,
    })
}

/// `log P(X ≤ upper)` for `X ~ N(mean, cov)` by the separation-of-variables
/// transform on randomly shifted Richtmyer lattices.
pub fn mvn_log_cdf(mean: &[f64], cov: &DMatrix<f64>, upper: &[f64], mc: &McConfig) -> Result<Estimate> {
    mvn_log_cdf_with(Exec::Sequential, mean, cov, upper, mc)
}

pub fn mvn_log_cdf_with(
    exec: Exec,
    mean: &[f64],
    cov: &DMatrix<f64>,
    upper: &[f64],
    mc: &McConfig,
) -> Result<Estimate> {
    mc.validate()?;
    let k = mean.len();
    if cov.nrows() != k || cov.ncols() != k || upper.len() != k {
        return Err(Error::Dimension("mean, covariance and bounds disagree in size".into()));
    }
    if k == 0 {
        return Ok(Estimate {
            value: 0.0,
            std_error: 0.0,
        });
    }
    let b: Vec<f64> = upper.iter().zip(mean).map(|(u, m)| u - m).collect();
    let (l, b) = reordered_cholesky(cov, &b)?;
    if k == 1 {
        return Ok(Estimate {
            value: normal::log_cdf(b[0] / l[0]),
            std_error: 0.0,
        });
    }
    let gen = richtmyer_generator(k - 1);
    let logs: Vec<f64> = par::map_range(exec, mc.randomizations, |r| {
        use rand::Rng;
        let mut srng = rng::stream(mc.seed, &[r as u64]);
        let shift: Vec<f64> = (0..k - 1).map(|_| srng.random::<f64>()).collect();
        let mut w = vec![0.0; k - 1];
        let mut y = vec![0.0; k];
        let mut vals = Vec::with_capacity(mc.samples);
        for t in 1..=mc.samples {
            for (d, wd) in w.iter_mut().enumerate() {
                let x = (t as f64 * gen[d] + shift[d]).fract();
                *wd = 1.0 - (2.0 * x - 1.0).abs();
            }
            vals.push(integrand_log(&l, &b, &w, &mut y));
        }
        log_mean_exp(&vals)
    });
    // combine shifts on the probability scale, relative to the largest
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::Numerical("multivariate normal probability underflowed".into()));
    }
    let rel: Vec<f64> = logs.iter().map(|v| (v - top).exp()).collect();
    let rn = rel.len() as f64;
    let mean_rel = rel.iter().sum::<f64>() / rn;
    let var = rel.iter().map(|v| (v - mean_rel).powi(2)).sum::<f64>() / (rn - 1.0);
    Ok(Estimate {
        value: top + mean_rel.ln(),
        std_error: (var / rn).sqrt() / mean_rel,
    })
}

fn log_mean_exp(v: &[f64]) -> f64 {
    let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return top;
    }
    let s: f64 = v.iter().map(|x| (x - top).exp()).sum();
    top + (s / v.len() as f64).ln()
}

/// Log of the transformed integrand at one point `w ∈ [0,1]^{k-1}`.
/// `l` is row-major lower triangular in the reordered variables.
fn integrand_log(l: &[f64], b: &[f64], w: &[f64], y: &mut [f64]) -> f64 {
    let k = b.len();
    let mut total = 0.0;
    for i in 0..k {
        let row = &l[i * k..i * k + i];
        let s: f64 = row.iter().zip(&y[..i]).map(|(a, c)| a * c).sum();
        let bi = (b[i] - s) / l[i * k + i];
        let log_e = normal::log_cdf(bi);
        total += log_e;
        if i + 1 < k {
            let u = w[i] * log_e.exp();
            y[i] = normal::quantile(u).min(bi);
        }
    }
    total
}

/// Cholesky factor with Genz–Bretz variable reordering: each step takes
/// the remaining variable with the smallest conditional truncation
/// probability. Returns the row-major factor and the permuted bounds.
fn reordered_cholesky(cov: &DMatrix<f64>, b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = b.len();
    let mut a = cov.clone();
    let mut b = b.to_vec();
    let mut l = vec![0.0; k * k];
    let mut y = vec![0.0; k];
    let tiny = 1e-14 * (0..k).map(|i| cov[(i, i)]).fold(0.0, f64::max);
    for i in 0..k {
        let mut best = i;
        let mut best_p = f64::INFINITY;
        for j in i..k {
            let s: f64 = (0..i).map(|m| l[j * k + m] * y[m]).sum();
            let v = a[(j, j)] - (0..i).map(|m| l[j * k + m].powi(2)).sum::<f64>();
            if v <= tiny {
                continue;
            }
            let pr = normal::log_cdf((b[j] - s) / v.sqrt());
            if pr < best_p {
                best_p = pr;
                best = j;
            }
        }
        if best_p == f64::INFINITY {
            return Err(Error::NotPositiveDefinite(format!(
                "conditional covariance is singular at dimension {i}"
            )));
        }
        if best != i {
            a.swap_rows(i, best);
            a.swap_columns(i, best);
            b.swap(i, best);
            for m in 0..i {
                l.swap(i * k + m, best * k + m);
            }
        }
        let d = (a[(i, i)] - (0..i).map(|m| l[i * k + m].powi(2)).sum::<f64>()).sqrt();
        l[i * k + i] = d;
        for j in i + 1..k {
            let s: f64 = (0..i).map(|m| l[j * k + m] * l[i * k + m]).sum();
            l[j * k + i] = (a[(j, i)] - s) / d;
        }
        let s: f64 = (0..i).map(|m| l[i * k + m] * y[m]).sum();
        let bt = (b[i] - s) / d;
        // expected standardized value of the truncated variable
        y[i] = -normal::inverse_mills(bt);
    }
    Ok((l, b))
}

/// Fractional parts of square roots of the first `dim` primes.
fn richtmyer_generator(dim: usize) -> Vec<f64> {
    let mut primes = Vec::with_capacity(dim);
    let mut c = 2u64;
    while primes.len() < dim {
        if primes.iter().take_while(|&&q| q * q <= c).all(|&q| c % q != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes.iter().map(|&q| (q as f64).sqrt().fract()).collect()
}

/// E[X | X ≤ L] for `X ~ N(mu, sigma²)`.
pub fn truncated_normal_mean(mu: f64, sigma: f64, limit: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParams(format!("sigma = {sigma} must be positive")));
    }
    let a = (limit - mu) / sigma;
    Ok(mu - sigma * normal::inverse_mills(a))
}

/// `|approx − exact| / |exact|` as a percentage.
pub fn relative_likelihood_error(approx: f64, exact: f64) -> Result<f64> {
    if exact.abs() < 1e-30 {
        return Err(Error::Numerical(format!("exact log-likelihood {exact} is too close to zero")));
    }
    Ok((approx - exact).abs() / exact.abs() * 100.0)
}
