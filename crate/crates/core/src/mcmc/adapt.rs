//! Proposal adaptation: Robbins–Monro scale control and, for
//! multivariate blocks, an empirical covariance learned during burn-in.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg;

/// Acceptance rate targeted by multivariate blocks.
pub const TARGET_MULTI: f64 = 0.234;
/// Acceptance rate targeted by scalar blocks and single latent sites.
pub const TARGET_SCALAR: f64 = 0.44;

/// Draws before the empirical covariance replaces the initial shape.
const COV_WARMUP: usize = 100;
/// Empirical covariance refresh interval.
const COV_REFRESH: usize = 25;

/// Robbins–Monro gain at adaptation step `t`.
#[inline]
fn gain(t: usize) -> f64 {
    (1.0 / (t as f64 + 1.0).powf(0.6)).min(0.5)
}

#[derive(Clone, Debug)]
pub(crate) struct BlockAdapter {
    dim: usize,
    log_scale: f64,
    target: f64,
    /// Row-major lower Cholesky factor of the proposal shape.
    shape: Vec<f64>,
    count: usize,
    mean: Vec<f64>,
    /// Row-major co-moment accumulator.
    comoment: Vec<f64>,
    steps: usize,
    pub(crate) proposed: u64,
    pub(crate) accepted: u64,
}

impl BlockAdapter {
    /// `init_sd` gives the initial proposal standard deviations.
    pub(crate) fn new(init_sd: &[f64]) -> Self {
        let dim = init_sd.len();
        let mut shape = vec![0.0; dim * dim];
        for (k, s) in init_sd.iter().enumerate() {
            shape[k * dim + k] = *s;
        }
        BlockAdapter {
            dim,
            log_scale: 0.0,
            target: if dim > 1 { TARGET_MULTI } else { TARGET_SCALAR },
            shape,
            count: 0,
            mean: vec![0.0; dim],
            comoment: vec![0.0; dim * dim],
            steps: 0,
            proposed: 0,
            accepted: 0,
        }
    }

    /// Random-walk proposal around `x`.
    pub(crate) fn propose(&self, x: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let s = self.log_scale.exp();
        (0..self.dim)
            .map(|a| x[a] + s * (0..=a).map(|b| self.shape[a * self.dim + b] * z[b]).sum::<f64>())
            .collect()
    }

    pub(crate) fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
    }

    /// Burn-in update after one proposal with acceptance probability
    /// `accept_prob`, given the block's value `x` after the step.
    pub(crate) fn adapt(&mut self, accept_prob: f64, x: &[f64]) {
        self.log_scale += gain(self.steps) * (accept_prob - self.target);
        self.log_scale = self.log_scale.clamp(-30.0, 10.0);
        self.steps += 1;
        if self.dim < 2 {
            return;
        }
        self.count += 1;
        let c = self.count as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d / c;
        }
        for a in 0..self.dim {
            for b in 0..self.dim {
                self.comoment[a * self.dim + b] += delta[a] * (x[b] - self.mean[b]);
            }
        }
        if self.count >= COV_WARMUP && self.count % COV_REFRESH == 0 {
            self.refresh_shape();
        }
    }

    fn refresh_shape(&mut self) {
        let d = self.dim;
        let c = (self.count - 1) as f64;
        let mut cov: Vec<f64> = self.comoment.iter().map(|v| v / c).collect();
        let ridge = 1e-10 * (0..d).map(|k| cov[k * d + k]).fold(0.0, f64::max).max(1e-300);
        for k in 0..d {
            cov[k * d + k] += ridge;
        }
        if linalg::cholesky_in_place(&mut cov, d).is_ok() {
            // keep the step size continuous across the switch of shape
            let old: f64 = (0..d).map(|k| self.shape[k * d + k].ln()).sum::<f64>() / d as f64;
            let new: f64 = (0..d).map(|k| cov[k * d + k].ln()).sum::<f64>() / d as f64;
            if self.count == COV_WARMUP {
                self.log_scale += old - new;
            }
            for a in 0..d {
                for b in a + 1..d {
                    cov[a * d + b] = 0.0;
                }
            }
            self.shape = cov;
        }
    }

    pub(crate) fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub(crate) fn reset_counts(&mut self) {
        self.proposed = 0;
        self.accepted = 0;
    }
}

/// Independent scalar random-walk scales, one per latent site.
#[derive(Clone, Debug)]
pub(crate) struct SiteScales {
    log_scale: Vec<f64>,
    steps: usize,
    pub(crate) proposed: u64,
    pub(crate) accepted: u64,
}

impl SiteScales {
    pub(crate) fn new(n: usize, init_sd: f64) -> Self {
        SiteScales {
            log_scale: vec![init_sd.ln(); n],
            steps: 0,
            proposed: 0,
            accepted: 0,
        }
    }

    #[inline]
    pub(crate) fn sd(&self, i: usize) -> f64 {
        self.log_scale[i].exp()
    }

    #[inline]
    pub(crate) fn record(&mut self, i: usize, accept_prob: f64, accepted: bool, adapting: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
        if adapting {
            let g = gain(self.steps);
            self.log_scale[i] = (self.log_scale[i] + g * (accept_prob - TARGET_SCALAR)).clamp(-30.0, 10.0);
        }
    }

    /// Marks the end of one sweep.
    pub(crate) fn end_sweep(&mut self, adapting: bool) {
        if adapting {
            self.steps += 1;
        }
    }

    pub(crate) fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub(crate) fn reset_counts(&mut self) {
        self.proposed = 0;
        self.accepted = 0;
    }
}
