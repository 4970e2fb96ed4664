//! Standard normal density, distribution and quantile functions with
//! tail-stable logarithmic forms.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

/// ln(√(2π))
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this standardized argument the asymptotic tail series is used.
const TAIL_CUTOFF: f64 = -30.0;

pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn log_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Leading factor of the Mills-ratio asymptotic series, `a < 0` large.
fn tail_series(a: f64) -> f64 {
    let r = 1.0 / (a * a);
    1.0 - r * (1.0 - r * (3.0 - r * (15.0 - r * 105.0)))
}

/// log Φ(x), finite for every finite `x`.
pub fn log_cdf(x: f64) -> f64 {
    if x < TAIL_CUTOFF {
        -0.5 * x * x - (-x).ln() - LN_SQRT_2PI + tail_series(x).ln()
    } else if x > 0.0 {
        (-0.5 * libm::erfc(x * FRAC_1_SQRT_2)).ln_1p()
    } else {
        cdf(x).ln()
    }
}

/// Inverse Mills ratio λ(a) = φ(a) / Φ(a).
pub fn inverse_mills(a: f64) -> f64 {
    if a < TAIL_CUTOFF {
        -a / tail_series(a)
    } else {
        pdf(a) / cdf(a)
    }
}

/// Standard normal quantile. `p` is clamped to the open unit interval.
pub fn quantile(p: f64) -> f64 {
    let p = p.clamp(1e-300, 1.0 - 1e-16);
    -SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
}

/// Log-density of N(mean, var) at `x`.
pub fn log_density(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * (r * r / var) - 0.5 * var.ln() - LN_SQRT_2PI
}
