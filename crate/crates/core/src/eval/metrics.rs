//! Point and probabilistic scores.

use crate::error::{Error, Result};
use crate::par::kahan_sum;

/// Root mean squared difference.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Dimension(format!(
            "rmse needs equal non-empty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let ss = kahan_sum(pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)));
    Ok((ss / pred.len() as f64).sqrt())
}

/// Empirical CRPS `mean|X − y| − ½ mean|X − X′|`, the second mean taken over
/// all m² ordered pairs. Sorting gives the pair sum in O(m log m).
pub fn crps_empirical(draws: &[f64], truth: f64) -> Result<f64> {
    check(draws, truth)?;
    let m = draws.len() as f64;
    let mut x = draws.to_vec();
    x.sort_by(f64::total_cmp);
    let abs_err = kahan_sum(x.iter().map(|v| (v - truth).abs())) / m;
    // Σ_{i<j} (x_j − x_i) = Σ_j (2j − m + 1) x_j for sorted x.
    let pairs = kahan_sum(x.iter().enumerate().map(|(j, v)| (2.0 * j as f64 - m + 1.0) * v));
    Ok(abs_err - pairs / (m * m))
}

/// The O(m²) definition of [`crps_empirical`].
pub fn crps_brute_force(draws: &[f64], truth: f64) -> Result<f64> {
    check(draws, truth)?;
    let m = draws.len() as f64;
    let abs_err = kahan_sum(draws.iter().map(|v| (v - truth).abs())) / m;
    let pairs = kahan_sum(draws.iter().flat_map(|a| draws.iter().map(move |b| (a - b).abs())));
    Ok(abs_err - 0.5 * pairs / (m * m))
}

fn check(draws: &[f64], truth: f64) -> Result<()> {
    if draws.is_empty() {
        return Err(Error::Dimension("CRPS needs at least one draw".into()));
    }
    if !truth.is_finite() || draws.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("CRPS inputs must be finite".into()));
    }
    Ok(())
}

/// Mean CRPS over sites; `site_draws(j)` returns the draws of site `j`.
pub fn mean_crps(n_sites: usize, site_draws: impl Fn(usize) -> Vec<f64>, truth: &[f64]) -> Result<f64> {
    if truth.len() != n_sites || n_sites == 0 {
        return Err(Error::Dimension("one truth value per site required".into()));
    }
    let scores = (0..n_sites)
        .map(|j| crps_empirical(&site_draws(j), truth[j]))
        .collect::<Result<Vec<f64>>>()?;
    Ok(kahan_sum(scores) / n_sites as f64)
}
