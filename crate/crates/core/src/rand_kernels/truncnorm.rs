//! Normal distribution truncated to `[0, ∞)`: moments, quantiles, draws.

use statrs::function::erf::{erfc, erfc_inv};

use super::RngHandle;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Scaled complementary error function `exp(x²)·erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x < 0.0 {
        if x < -26.0 {
            return f64::INFINITY;
        }
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x < 25.0 {
        return (x * x).exp() * erfc(x);
    }
    // Laplace continued fraction, evaluated bottom-up.
    let mut t = x;
    for k in (1..=40).rev() {
        t = x + (k as f64 * 0.5) / t;
    }
    FRAC_1_SQRT_PI / t
}

/// Standard normal CDF `Φ(x)`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal quantile `Φ⁻¹(p)`.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Inverse Mills ratio `φ(α) / (1 − Φ(α))`.
fn inverse_mills(alpha: f64) -> f64 {
    SQRT_2_OVER_PI / erfcx(alpha / SQRT_2)
}

/// `λ(α) − α` where `λ` is the inverse Mills ratio; this is the mean of a
/// standard normal truncated to `[α, ∞)` measured from the truncation point.
fn mills_excess(alpha: f64) -> f64 {
    if alpha < 5.0 {
        return inverse_mills(alpha) - alpha;
    }
    // λ(α) − α = 1/(α + 2/(α + 3/(α + …)))
    let mut t = alpha;
    for k in (2..=120).rev() {
        t = alpha + k as f64 / t;
    }
    1.0 / t
}

/// First and second moments of `N(m, v)` truncated to `[0, ∞)`.
///
/// Stable for `m/√v` well below −8: the mean is computed as `√v·(λ(α) − α)`
/// with `α = −m/√v`, avoiding the cancellation in `m + √v·λ(α)`.
pub fn truncated_normal_moments(m: f64, v: f64) -> (f64, f64) {
    debug_assert!(v > 0.0);
    let s = v.sqrt();
    let alpha = -m / s;
    let excess = mills_excess(alpha);
    let lambda = excess + alpha;
    let mean = s * excess;
    let var_z = (1.0 - lambda * excess).max(0.0);
    (mean, mean * mean + v * var_z)
}

/// Quantile `q` of `N(m, v)` truncated to `[0, ∞)`.
pub fn truncated_normal_quantile(m: f64, v: f64, q: f64) -> f64 {
    let s = v.sqrt();
    let alpha = -m / s;
    let z = if alpha < 0.0 {
        let lo = normal_cdf(alpha);
        normal_quantile(lo + q * (1.0 - lo))
    } else {
        let upper = normal_cdf(-alpha);
        -normal_quantile((1.0 - q) * upper)
    };
    (m + s * z).max(0.0)
}

/// Draw `z ~ N(0, 1)` conditioned on `z ≥ alpha`.
///
/// Inverse CDF, switching to the exponential-proposal rejection sampler of
/// Robert (1995) once `alpha > 8`, where the tail mass is below 1e-15.
pub fn sample_truncated_standard_normal(alpha: f64, rng: &mut RngHandle) -> f64 {
    if alpha > 8.0 {
        let rate = 0.5 * (alpha + (alpha * alpha + 4.0).sqrt());
        loop {
            let z = alpha + rng.exponential() / rate;
            let u = rng.uniform_open();
            if u.ln() <= -0.5 * (z - rate) * (z - rate) {
                return z;
            }
        }
    }
    let u = rng.uniform_open();
    let z = if alpha < 0.0 {
        let lo = normal_cdf(alpha);
        normal_quantile(lo + u * (1.0 - lo))
    } else {
        -normal_quantile(u * normal_cdf(-alpha))
    };
    z.max(alpha)
}
