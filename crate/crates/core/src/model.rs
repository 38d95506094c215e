//! Domain types of the LS-APC hierarchical model and the deterministic
//! algebra shared by the Gibbs and variational engines.
//!
//! The model, for coefficients `β ∈ ℝᵖ`:
//!
//! ```text
//! y | β, σ      ~ N(Xβ, σ⁻¹ Iₙ)              σ  ~ G(a, b)
//! βᵢ | βᵢ₊₁, lᵢ ~ N(−lᵢ βᵢ₊₁, τᵢ⁻¹)            τᵢ ~ G(a, b)
//! lᵢ | ψᵢ       ~ N(l₀, ψᵢ⁻¹)                 ψᵢ ~ G(c, d)
//! ```
//!
//! with the conventions `l_p = 0` and `β_{p+1} = 0`. Jointly,
//! `β | τ, l ~ N(0, (L D Lᵀ)⁻¹)` where `L` is unit lower bidiagonal with
//! sub-diagonal `l` and `D = diag(τ)`. All Gamma densities use the
//! shape–rate parameterization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{LsapcError, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Observations, regressors and optional site/time metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub site_id: Option<Vec<i64>>,
    pub time_index: Option<Vec<i64>>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        Self::with_metadata(y, x, None, None)
    }

    pub fn with_metadata(
        y: DVector<f64>,
        x: DMatrix<f64>,
        site_id: Option<Vec<i64>>,
        time_index: Option<Vec<i64>>,
    ) -> Result<Self> {
        let data = Dataset {
            y,
            x,
            site_id,
            time_index,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0 || self.x.ncols() == 0 {
            return Err(LsapcError::DimensionMismatch(format!(
                "need n >= 1 and p >= 1, got n = {n}, p = {}",
                self.x.ncols()
            )));
        }
        if self.x.nrows() != n {
            return Err(LsapcError::DimensionMismatch(format!(
                "X has {} rows but y has {n} entries",
                self.x.nrows()
            )));
        }
        match (&self.site_id, &self.time_index) {
            (Some(_), None) => {
                return Err(LsapcError::Format(
                    "site_id present without time_index".into(),
                ))
            }
            (Some(s), Some(t)) if s.len() != n || t.len() != n => {
                return Err(LsapcError::DimensionMismatch(format!(
                    "metadata lengths ({}, {}) differ from n = {n}",
                    s.len(),
                    t.len()
                )))
            }
            (None, Some(t)) if t.len() != n => {
                return Err(LsapcError::DimensionMismatch(format!(
                    "time_index length {} differs from n = {n}",
                    t.len()
                )))
            }
            _ => {}
        }
        if self.y.iter().chain(self.x.iter()).any(|v| !v.is_finite()) {
            return Err(LsapcError::NonFinite("dataset".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Squared residual norm `‖y − Xβ‖²`.
    pub fn rss(&self, beta: &DVector<f64>) -> f64 {
        (&self.y - &self.x * beta).norm_squared()
    }
}

/// Hyperparameters of the LS-APC prior plus the positivity switch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LsapcConfig {
    /// Gamma shape for the τ and σ priors.
    pub a: f64,
    /// Gamma rate for the τ and σ priors.
    pub b: f64,
    /// Gamma shape for the ψ prior.
    pub c: f64,
    /// Gamma rate for the ψ prior.
    pub d: f64,
    /// Prior mean of the coupling coefficients `lᵢ`.
    pub l0: f64,
    /// Restrict β to the nonnegative orthant.
    pub positivity: bool,
    /// Clamp every `lᵢ` to this value; `l` and `ψ` are then not inferred.
    /// `Some(0.0)` is the pure ARD prior, `Some(-1.0)` the smoothness prior.
    pub fixed_l: Option<f64>,
    /// Coordinate sweeps per truncated β draw in positivity mode.
    pub truncated_sweeps: usize,
}

impl Default for LsapcConfig {
    fn default() -> Self {
        LsapcConfig {
            a: 1e-10,
            b: 1e-10,
            c: 1e-10,
            d: 1e-10,
            l0: -1.0,
            positivity: false,
            fixed_l: None,
            truncated_sweeps: 1,
        }
    }
}

impl LsapcConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a", self.a), ("b", self.b), ("c", self.c), ("d", self.d)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(LsapcError::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !self.l0.is_finite() {
            return Err(LsapcError::InvalidParameter("l0 must be finite".into()));
        }
        if let Some(l) = self.fixed_l {
            if !l.is_finite() {
                return Err(LsapcError::InvalidParameter("fixed_l must be finite".into()));
            }
        }
        if self.truncated_sweeps == 0 {
            return Err(LsapcError::InvalidParameter(
                "truncated_sweeps must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// True when `l` and `ψ` are random (not clamped by `fixed_l`).
    pub fn infers_l(&self) -> bool {
        self.fixed_l.is_none()
    }
}

/// One joint configuration of every unknown of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub beta: DVector<f64>,
    /// Noise precision.
    pub sigma: f64,
    pub tau: DVector<f64>,
    /// Coupling coefficients `l₁..l_{p−1}`; `l_p = 0` is implicit.
    pub l: DVector<f64>,
    pub psi: DVector<f64>,
}

impl ModelState {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let pm1 = p.saturating_sub(1);
        if self.beta.len() != p || self.tau.len() != p || self.l.len() != pm1 || self.psi.len() != pm1
        {
            return Err(LsapcError::DimensionMismatch(format!(
                "state dims (beta {}, tau {}, l {}, psi {}) do not match p = {p}",
                self.beta.len(),
                self.tau.len(),
                self.l.len(),
                self.psi.len()
            )));
        }
        let finite = self
            .beta
            .iter()
            .chain(self.tau.iter())
            .chain(self.l.iter())
            .chain(self.psi.iter())
            .all(|v| v.is_finite())
            && self.sigma.is_finite();
        if !finite {
            return Err(LsapcError::NonFinite("model state".into()));
        }
        if self.sigma <= 0.0 || self.tau.iter().any(|&t| t <= 0.0) || self.psi.iter().any(|&v| v <= 0.0)
        {
            return Err(LsapcError::InvalidParameter(
                "sigma, tau and psi must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `Σᵢ τᵢ (βᵢ + lᵢ βᵢ₊₁)² = βᵀ L D Lᵀ β`.
    pub fn prior_quadratic(&self) -> f64 {
        prior_increments(&self.beta, &self.l)
            .iter()
            .zip(self.tau.iter())
            .map(|(e, t)| t * e * e)
            .sum()
    }
}

/// The increments `βᵢ + lᵢ βᵢ₊₁` (with `l_p = 0`), i.e. `Lᵀβ`.
pub fn prior_increments(beta: &DVector<f64>, l: &DVector<f64>) -> DVector<f64> {
    let p = beta.len();
    DVector::from_fn(p, |i, _| {
        if i + 1 < p {
            beta[i] + l[i] * beta[i + 1]
        } else {
            beta[i]
        }
    })
}

/// Which estimator produced a point estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimateSource {
    GibbsMaxSample,
    VbMean,
    FusedLasso,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointEstimate {
    pub beta_hat: DVector<f64>,
    /// Log joint density at the estimate; `None` for the fused lasso.
    pub log_joint_at_max: Option<f64>,
    pub source: EstimateSource,
}

/// Unit lower bidiagonal `L` with sub-diagonal `l`.
pub fn assemble_l(l: &DVector<f64>) -> DMatrix<f64> {
    let p = l.len() + 1;
    let mut m = DMatrix::identity(p, p);
    for (i, &li) in l.iter().enumerate() {
        m[(i + 1, i)] = li;
    }
    m
}

/// Prior precision `L diag(τ) Lᵀ` (symmetric tridiagonal, returned dense).
pub fn assemble_precision(l: &DVector<f64>, tau: &DVector<f64>) -> Result<DMatrix<f64>> {
    let p = tau.len();
    if l.len() + 1 != p {
        return Err(LsapcError::DimensionMismatch(format!(
            "l has length {} but tau has length {p}",
            l.len()
        )));
    }
    if let Some(t) = tau.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
        return Err(LsapcError::InvalidParameter(format!(
            "tau entries must be positive, got {t}"
        )));
    }
    let mut m = DMatrix::zeros(p, p);
    for i in 0..p {
        m[(i, i)] = tau[i];
        if i > 0 {
            m[(i, i)] += l[i - 1] * l[i - 1] * tau[i - 1];
            let off = l[i - 1] * tau[i - 1];
            m[(i, i - 1)] = off;
            m[(i - 1, i)] = off;
        }
    }
    Ok(m)
}

/// `ln G(x; shape, rate)`.
pub fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// `ln N(x; mean, precision⁻¹)`.
pub fn ln_normal_pdf(x: f64, mean: f64, precision: f64) -> f64 {
    let r = x - mean;
    0.5 * (precision.ln() - LN_2PI) - 0.5 * precision * r * r
}

/// Log joint density `ln p(y, β, σ, τ, l, ψ)`.
///
/// In positivity mode the β prior is the orthant-truncated Gaussian; its
/// normalizer is the constant `p·ln 2` (see [`positivity_log_normalizer`]).
/// States with a negative coefficient then have density zero and return −∞.
/// With `fixed_l` set, `l` is not a random variable and the `l`/`ψ` terms
/// are omitted.
pub fn log_joint(state: &ModelState, data: &Dataset, cfg: &LsapcConfig) -> Result<f64> {
    let p = data.p();
    state.validate(p)?;
    if cfg.positivity && state.beta.iter().any(|&b| b < 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    let n = data.n() as f64;
    let sigma = state.sigma;

    let likelihood = 0.5 * n * (sigma.ln() - LN_2PI) - 0.5 * sigma * data.rss(&state.beta);

    let increments = prior_increments(&state.beta, &state.l);
    let mut beta_prior = 0.0;
    for (e, &t) in increments.iter().zip(state.tau.iter()) {
        beta_prior += ln_normal_pdf(*e, 0.0, t);
    }
    if cfg.positivity {
        beta_prior += positivity_log_normalizer(p);
    }

    let tau_prior: f64 = state.tau.iter().map(|&t| ln_gamma_pdf(t, cfg.a, cfg.b)).sum();
    let sigma_prior = ln_gamma_pdf(sigma, cfg.a, cfg.b);

    let mut total = likelihood + beta_prior + tau_prior + sigma_prior;
    if cfg.infers_l() {
        for (&li, &psi) in state.l.iter().zip(state.psi.iter()) {
            total += ln_normal_pdf(li, cfg.l0, psi) + ln_gamma_pdf(psi, cfg.c, cfg.d);
        }
    }
    if !total.is_finite() {
        return Err(LsapcError::NonFinite("log joint".into()));
    }
    Ok(total)
}

/// `−ln P(β ≥ 0)` for the positivity-constrained prior, taken as `p·ln 2`.
///
/// The conditional updates for τ and l keep their untruncated form, so the
/// sampled joint treats the orthant mass as a global constant. `p·ln 2` is
/// that constant for independent coordinates (`l = 0`); it is identical
/// across noise models and cancels in any model comparison.
pub fn positivity_log_normalizer(p: usize) -> f64 {
    p as f64 * std::f64::consts::LN_2
}
