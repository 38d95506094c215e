//! Shaping parameters of the full conditionals, evaluated at a point.

use nalgebra::DVector;

use crate::model::{Dataset, LsapcConfig};

/// Gamma shape/rate pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

/// Gaussian mean/precision pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalParams {
    pub mean: f64,
    pub precision: f64,
}

/// `γ_σ = a + n/2`, `δ_σ = b + ½‖y − Xβ‖²`.
pub fn sigma_conditional(beta: &DVector<f64>, data: &Dataset, cfg: &LsapcConfig) -> GammaParams {
    GammaParams {
        shape: cfg.a + 0.5 * data.n() as f64,
        rate: cfg.b + 0.5 * data.rss(beta),
    }
}

/// `γᵢ = a + ½`, `δᵢ = b + ½(βᵢ + lᵢβᵢ₊₁)²` for `i = 1..p`.
pub fn tau_conditionals(beta: &DVector<f64>, l: &DVector<f64>, cfg: &LsapcConfig) -> Vec<GammaParams> {
    let p = beta.len();
    (0..p)
        .map(|i| {
            let inc = if i + 1 < p { beta[i] + l[i] * beta[i + 1] } else { beta[i] };
            GammaParams {
                shape: cfg.a + 0.5,
                rate: cfg.b + 0.5 * inc * inc,
            }
        })
        .collect()
}

/// `ρᵢ = ψᵢ + βᵢ₊₁²τᵢ`, `πᵢ = (ψᵢl₀ − βᵢβᵢ₊₁τᵢ)/ρᵢ` for `i = 1..p−1`.
pub fn l_conditionals(
    beta: &DVector<f64>,
    tau: &DVector<f64>,
    psi: &DVector<f64>,
    cfg: &LsapcConfig,
) -> Vec<NormalParams> {
    (0..psi.len())
        .map(|i| {
            let next = beta[i + 1];
            let precision = psi[i] + next * next * tau[i];
            NormalParams {
                mean: (psi[i] * cfg.l0 - beta[i] * next * tau[i]) / precision,
                precision,
            }
        })
        .collect()
}

/// `λᵢ = c + ½`, `ωᵢ = d + ½(lᵢ − l₀)²`.
pub fn psi_conditionals(l: &DVector<f64>, cfg: &LsapcConfig) -> Vec<GammaParams> {
    l.iter()
        .map(|&li| GammaParams {
            shape: cfg.c + 0.5,
            rate: cfg.d + 0.5 * (li - cfg.l0).powi(2),
        })
        .collect()
}
