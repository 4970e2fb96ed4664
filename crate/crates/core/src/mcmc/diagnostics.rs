//! Split-R̂ and autocorrelation-based effective sample size.

use crate::error::{Error, Result};

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Split-chain potential scale reduction factor. Each chain is cut in two
/// halves (the middle draw of odd-length chains is dropped), so a single
/// chain is accepted.
pub fn rhat(chains: &[&[f64]]) -> Result<f64> {
    if chains.is_empty() || chains.iter().any(|c| c.len() < 4) {
        return Err(Error::InvalidConfig("split-R̂ needs chains with at least 4 draws".into()));
    }
    let mut halves = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let h = c.len() / 2;
        halves.push(&c[..h]);
        halves.push(&c[c.len() - h..]);
    }
    let n = halves.iter().map(|h| h.len()).min().unwrap_or(0);
    let stats: Vec<(f64, f64)> = halves.iter().map(|h| mean_var(&h[..n])).collect();
    let m = stats.len() as f64;
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
    let b = n as f64 * stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>() / (m - 1.0);
    if !(w > 0.0) {
        return Ok(if b > 0.0 { f64::INFINITY } else { 1.0 });
    }
    let nf = n as f64;
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Ok((var_plus / w).sqrt())
}

/// Effective sample size `N / (1 + 2 Σ ρ_t)` with Geyer's initial positive
/// sequence truncation, clipped to `[1, N]`.
pub fn ess(draws: &[f64]) -> Result<f64> {
    let n = draws.len();
    if n < 10 {
        return Err(Error::InvalidConfig("ESS needs at least 10 draws".into()));
    }
    let nf = n as f64;
    let mean = draws.iter().sum::<f64>() / nf;
    let centered: Vec<f64> = draws.iter().map(|v| v - mean).collect();
    let acov = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / nf
    };
    let c0 = acov(0);
    if !(c0 > 0.0) {
        return Ok(1.0);
    }
    // sum of consecutive pairs Γ_k = ρ_{2k} + ρ_{2k+1}, stopped at the first non-positive one
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let g = (acov(2 * k) + acov(2 * k + 1)) / c0;
        if g <= 0.0 {
            break;
        }
        // initial monotone sequence
        let g = g.min(prev);
        tau += 2.0 * g;
        prev = g;
        k += 1;
    }
    Ok((nf / tau.max(1.0 / nf)).clamp(1.0, nf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn constant_chains() {
        let c = vec![2.0; 50];
        assert_eq!(rhat(&[&c, &c]).unwrap(), 1.0);
        assert_eq!(ess(&c).unwrap(), 1.0);
    }

    #[test]
    fn same_stream_is_near_one() {
        let x = normals(20_000, 1);
        let v = rhat(&[&x[..10_000], &x[10_000..]]).unwrap();
        assert!((0.99..=1.01).contains(&v), "{v}");
    }

    #[test]
    fn separated_chains_are_flagged() {
        let a = normals(1000, 2);
        let b: Vec<f64> = normals(1000, 3).iter().map(|v| v + 10.0).collect();
        assert!(rhat(&[&a, &b]).unwrap() > 1.1);
    }

    #[test]
    fn trending_single_chain_is_flagged() {
        let x: Vec<f64> = (0..400).map(|i| i as f64 / 40.0).collect();
        assert!(rhat(&[&x]).unwrap() > 1.1);
    }

    #[test]
    fn white_noise_ess() {
        let n = 5000;
        let e = ess(&normals(n, 4)).unwrap();
        assert!(e > 0.7 * n as f64 && e <= 1.3 * n as f64, "{e}");
    }

    #[test]
    fn ar1_ess() {
        let n = 50_000;
        let rho: f64 = 0.9;
        let e = normals(n, 5);
        let mut x = vec![0.0; n];
        x[0] = e[0] / (1.0 - rho * rho).sqrt();
        for t in 1..n {
            x[t] = rho * x[t - 1] + e[t];
        }
        let expect = n as f64 * (1.0 - rho) / (1.0 + rho);
        let got = ess(&x).unwrap();
        assert!(got > expect / 1.5 && got < expect * 1.5, "{got} vs {expect}");
    }

    #[test]
    fn input_requirements() {
        assert!(rhat(&[&[1.0, 2.0, 3.0]]).is_err());
        assert!(ess(&[1.0; 9]).is_err());
    }
}
