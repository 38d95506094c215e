//! Mean-field variational Bayes for the LS-APC model.
//!
//! `q(β, σ, τ, l, ψ) = N(β; μ, Σ) · G(σ; γσ, δσ) · ∏ G(τᵢ; γᵢ, δᵢ) ·
//! ∏ N(lᵢ; πᵢ, ρᵢ⁻¹) · ∏ G(ψᵢ; λᵢ, ωᵢ)`. Each factor has the form of the
//! corresponding Gibbs conditional with the conditioning variables replaced
//! by their moments under the other factors; one sweep updates β, σ, τ, l,
//! ψ in that order.
//!
//! In positivity mode the β moments are replaced per coordinate by the
//! moments of `N(μᵢ, Σᵢᵢ)` truncated to `[0, ∞)`, keeping the off-diagonal
//! covariance of the untruncated `Σ`.

mod elbo;

pub use elbo::elbo;

use nalgebra::{DMatrix, DVector};

use crate::error::{LsapcError, Result};
use crate::gibbs::conditionals::{GammaParams, NormalParams};
use crate::gibbs::initial_state;
use crate::model::{Dataset, EstimateSource, LsapcConfig, ModelState, PointEstimate};
use crate::numeric::log_sum_exp;
use crate::rand_kernels::truncated_normal_moments;

/// Variational posterior with its ELBO history.
#[derive(Clone, Debug, PartialEq)]
pub struct VbPosterior {
    pub mu: DVector<f64>,
    /// Covariance Σ of `q_β`.
    pub cov: DMatrix<f64>,
    pub gamma_sigma: f64,
    pub delta_sigma: f64,
    pub gamma: DVector<f64>,
    pub delta: DVector<f64>,
    pub pi: DVector<f64>,
    /// Precisions of `q_l`; infinite when `l` is fixed.
    pub rho: DVector<f64>,
    pub lambda: DVector<f64>,
    pub omega: DVector<f64>,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
}

impl VbPosterior {
    pub fn p(&self) -> usize {
        self.mu.len()
    }

    /// `E[β]`: `μ`, or the per-coordinate truncated means in positivity mode.
    pub fn beta_mean(&self, cfg: &LsapcConfig) -> DVector<f64> {
        if cfg.positivity {
            DVector::from_fn(self.p(), |i, _| truncated_normal_moments(self.mu[i], self.cov[(i, i)]).0)
        } else {
            self.mu.clone()
        }
    }

    pub fn point_estimate(&self, cfg: &LsapcConfig) -> PointEstimate {
        PointEstimate {
            beta_hat: self.beta_mean(cfg),
            log_joint_at_max: None,
            source: EstimateSource::VbMean,
        }
    }

    /// Posterior means of every unknown as a model state.
    pub fn mean_state(&self, cfg: &LsapcConfig) -> ModelState {
        ModelState {
            beta: self.beta_mean(cfg),
            sigma: self.gamma_sigma / self.delta_sigma,
            tau: self.gamma.component_div(&self.delta),
            l: self.pi.clone(),
            psi: self.lambda.component_div(&self.omega),
        }
    }

    pub fn moments(&self, cfg: &LsapcConfig) -> Moments {
        let p = self.p();
        let mut second = &self.cov + &self.mu * self.mu.transpose();
        let mean = if cfg.positivity {
            let mut m = DVector::zeros(p);
            let mut sq = DVector::zeros(p);
            for i in 0..p {
                let (m1, m2) = truncated_normal_moments(self.mu[i], self.cov[(i, i)]);
                m[i] = m1;
                sq[i] = m2;
            }
            for i in 0..p {
                for j in 0..p {
                    second[(i, j)] = if i == j { sq[i] } else { self.cov[(i, j)] + m[i] * m[j] };
                }
            }
            m
        } else {
            self.mu.clone()
        };
        let (l, l_sq) = match cfg.fixed_l {
            Some(v) => (
                DVector::from_element(p.saturating_sub(1), v),
                DVector::from_element(p.saturating_sub(1), v * v),
            ),
            None => (
                self.pi.clone(),
                self.pi.zip_map(&self.rho, |m, r| m * m + 1.0 / r),
            ),
        };
        Moments {
            beta_mean: mean,
            beta_second: second,
            sigma: self.gamma_sigma / self.delta_sigma,
            tau: self.gamma.component_div(&self.delta),
            l,
            l_sq,
            psi: self.lambda.component_div(&self.omega),
        }
    }
}

/// Expectations consumed by the update equations.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub beta_mean: DVector<f64>,
    /// `E[ββᵀ]`.
    pub beta_second: DMatrix<f64>,
    pub sigma: f64,
    pub tau: DVector<f64>,
    pub l: DVector<f64>,
    /// `E[lᵢ²]`.
    pub l_sq: DVector<f64>,
    pub psi: DVector<f64>,
}

impl Moments {
    /// Degenerate moments of a point mass at `state` (`E[x²] = x²`).
    pub fn point_mass(state: &ModelState) -> Self {
        Moments {
            beta_mean: state.beta.clone(),
            beta_second: &state.beta * state.beta.transpose(),
            sigma: state.sigma,
            tau: state.tau.clone(),
            l: state.l.clone(),
            l_sq: state.l.map(|v| v * v),
            psi: state.psi.clone(),
        }
    }

    /// `E[(βᵢ + lᵢβᵢ₊₁)²]` for `i = 1..p` (with `l_p = 0`).
    pub fn increment_second(&self) -> DVector<f64> {
        let p = self.beta_mean.len();
        let s = &self.beta_second;
        DVector::from_fn(p, |i, _| {
            if i + 1 < p {
                s[(i, i)] + 2.0 * self.l[i] * s[(i, i + 1)] + self.l_sq[i] * s[(i + 1, i + 1)]
            } else {
                s[(i, i)]
            }
        })
    }

    /// `E[L D Lᵀ]`: diagonal `E[τᵢ] + E[lᵢ₋₁²]E[τᵢ₋₁]`, off-diagonal `E[lᵢ]E[τᵢ]`.
    pub fn expected_prior_precision(&self) -> DMatrix<f64> {
        let p = self.tau.len();
        let mut m = DMatrix::zeros(p, p);
        for i in 0..p {
            m[(i, i)] = self.tau[i];
            if i > 0 {
                m[(i, i)] += self.l_sq[i - 1] * self.tau[i - 1];
                let off = self.l[i - 1] * self.tau[i - 1];
                m[(i, i - 1)] = off;
                m[(i - 1, i)] = off;
            }
        }
        m
    }
}

/// Sufficient statistics of the data reused by every sweep.
#[derive(Clone, Debug)]
pub struct VbSolver<'a> {
    data: &'a Dataset,
    cfg: &'a LsapcConfig,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
}

impl<'a> VbSolver<'a> {
    pub fn new(data: &'a Dataset, cfg: &'a LsapcConfig) -> Result<Self> {
        data.validate()?;
        cfg.validate()?;
        Ok(VbSolver {
            data,
            cfg,
            xtx: data.x.tr_mul(&data.x),
            xty: data.x.tr_mul(&data.y),
            yty: data.y.norm_squared(),
        })
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn config(&self) -> &LsapcConfig {
        self.cfg
    }

    /// `E‖y − Xβ‖² = yᵀy − 2yᵀX E[β] + tr(XᵀX E[ββᵀ])`.
    pub fn expected_rss(&self, m: &Moments) -> f64 {
        self.yty - 2.0 * self.xty.dot(&m.beta_mean) + self.xtx.component_mul(&m.beta_second).sum()
    }

    /// `q_β`: precision `E[σ]XᵀX + E[LDLᵀ]`, mean `Σ XᵀE[σ]y`.
    pub fn beta_update(&self, m: &Moments) -> Option<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let precision = &self.xtx * m.sigma + m.expected_prior_precision();
        let chol = precision.clone().cholesky()?;
        let cov = chol.inverse();
        let mean = chol.solve(&(&self.xty * m.sigma));
        Some((mean, cov, precision))
    }

    /// `q_σ`: `γσ = a + n/2`, `δσ = b + ½E‖y − Xβ‖²`.
    pub fn sigma_update(&self, m: &Moments) -> GammaParams {
        GammaParams {
            shape: self.cfg.a + 0.5 * self.data.n() as f64,
            rate: self.cfg.b + 0.5 * self.expected_rss(m),
        }
    }

    /// `q_τᵢ`: `γᵢ = a + ½`, `δᵢ = b + ½E[(βᵢ + lᵢβᵢ₊₁)²]`.
    pub fn tau_update(&self, m: &Moments) -> Vec<GammaParams> {
        m.increment_second()
            .iter()
            .map(|&e| GammaParams {
                shape: self.cfg.a + 0.5,
                rate: self.cfg.b + 0.5 * e,
            })
            .collect()
    }

    /// `q_lᵢ`: `ρᵢ = E[ψᵢ] + E[βᵢ₊₁²]E[τᵢ]`,
    /// `πᵢ = (l₀E[ψᵢ] − E[βᵢβᵢ₊₁]E[τᵢ]) / ρᵢ`.
    pub fn l_update(&self, m: &Moments) -> Vec<NormalParams> {
        let s = &m.beta_second;
        (0..m.psi.len())
            .map(|i| {
                let precision = m.psi[i] + s[(i + 1, i + 1)] * m.tau[i];
                NormalParams {
                    mean: (self.cfg.l0 * m.psi[i] - s[(i, i + 1)] * m.tau[i]) / precision,
                    precision,
                }
            })
            .collect()
    }

    /// `q_ψᵢ`: `λᵢ = c + ½`, `ωᵢ = d + ½E[(lᵢ − l₀)²]`.
    pub fn psi_update(&self, m: &Moments) -> Vec<GammaParams> {
        let l0 = self.cfg.l0;
        m.l.iter()
            .zip(m.l_sq.iter())
            .map(|(&l, &l2)| GammaParams {
                shape: self.cfg.c + 0.5,
                rate: self.cfg.d + 0.5 * (l2 - 2.0 * l0 * l + l0 * l0),
            })
            .collect()
    }

    /// Starting posterior matched to the Gibbs initialization.
    pub fn initial_posterior(&self) -> VbPosterior {
        let cfg = self.cfg;
        let start = initial_state(self.data, cfg);
        let p = self.data.p();
        let pm1 = p.saturating_sub(1);
        let gamma_sigma = cfg.a + 0.5 * self.data.n() as f64;
        let cov = (&self.xtx * start.sigma + DMatrix::identity(p, p))
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| DMatrix::identity(p, p));
        let (pi, rho, lambda, omega) = match cfg.fixed_l {
            Some(v) => (
                DVector::from_element(pm1, v),
                DVector::from_element(pm1, f64::INFINITY),
                DVector::from_element(pm1, cfg.c),
                DVector::from_element(pm1, cfg.d),
            ),
            None => (
                start.l.clone(),
                start.psi.clone(),
                DVector::from_element(pm1, cfg.c + 0.5),
                start.psi.map(|v| (cfg.c + 0.5) / v),
            ),
        };
        VbPosterior {
            mu: start.beta,
            cov,
            gamma_sigma,
            delta_sigma: gamma_sigma / start.sigma,
            gamma: DVector::from_element(p, cfg.a + 0.5),
            delta: DVector::from_element(p, cfg.a + 0.5),
            pi,
            rho,
            lambda,
            omega,
            elbo_trace: Vec::new(),
            converged: false,
        }
    }

    /// One sweep: β, σ, τ, l, ψ. The ELBO trace is carried over unchanged.
    pub fn step(&self, q: &VbPosterior, iteration: usize) -> Result<VbPosterior> {
        let cfg = self.cfg;
        let mut next = q.clone();

        let m = next.moments(cfg);
        let (mu, cov, _) = self
            .beta_update(&m)
            .ok_or(LsapcError::VbNumerical { iteration })?;
        next.mu = mu;
        next.cov = cov;

        let m = next.moments(cfg);
        let g = self.sigma_update(&m);
        next.gamma_sigma = g.shape;
        next.delta_sigma = g.rate;

        let m = next.moments(cfg);
        for (i, g) in self.tau_update(&m).into_iter().enumerate() {
            next.gamma[i] = g.shape;
            next.delta[i] = g.rate;
        }

        if cfg.infers_l() {
            let m = next.moments(cfg);
            for (i, c) in self.l_update(&m).into_iter().enumerate() {
                next.pi[i] = c.mean;
                next.rho[i] = c.precision;
            }
            let m = next.moments(cfg);
            for (i, g) in self.psi_update(&m).into_iter().enumerate() {
                next.lambda[i] = g.shape;
                next.omega[i] = g.rate;
            }
        }

        let finite = next.mu.iter().chain(next.cov.iter()).all(|v| v.is_finite())
            && next.delta_sigma > 0.0
            && next.delta.iter().all(|&d| d > 0.0 && d.is_finite());
        if !finite {
            return Err(LsapcError::VbNumerical { iteration });
        }
        Ok(next)
    }

    /// Iterates sweeps until the relative ELBO change drops below `tol`.
    pub fn run(&self, tol: f64, max_iter: usize) -> Result<VbPosterior> {
        if !(tol > 0.0) || max_iter == 0 {
            return Err(LsapcError::InvalidParameter(
                "tol must be positive and max_iter >= 1".into(),
            ));
        }
        let mut q = self.initial_posterior();
        let mut prev = f64::NAN;
        for it in 1..=max_iter {
            q = self.step(&q, it)?;
            let value = elbo(&q, self.data, self.cfg)?;
            q.elbo_trace.push(value);
            if prev.is_finite() && (value - prev).abs() <= tol * value.abs().max(1e-300) {
                q.converged = true;
                break;
            }
            prev = value;
        }
        if !q.converged {
            log::warn!("variational Bayes stopped at max_iter = {max_iter} without converging");
        }
        Ok(q)
    }
}

/// One sweep of the variational updates.
pub fn vb_step(q: &VbPosterior, data: &Dataset, cfg: &LsapcConfig) -> Result<VbPosterior> {
    VbSolver::new(data, cfg)?.step(q, q.elbo_trace.len() + 1)
}

/// Fits the variational posterior; `converged` is false when `max_iter` is hit.
pub fn run_vb(data: &Dataset, cfg: &LsapcConfig, tol: f64, max_iter: usize) -> Result<VbPosterior> {
    VbSolver::new(data, cfg)?.run(tol, max_iter)
}

/// Posterior model probabilities `∝ p(M_j)·exp(ELBO_j)`.
pub fn vb_model_weight(elbos: &[f64], prior_model_probs: &[f64]) -> Result<Vec<f64>> {
    if elbos.len() != prior_model_probs.len() || elbos.is_empty() {
        return Err(LsapcError::DimensionMismatch(
            "elbos and prior probabilities must have the same nonzero length".into(),
        ));
    }
    let total: f64 = prior_model_probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 || prior_model_probs.iter().any(|&v| v < 0.0) {
        return Err(LsapcError::InvalidParameter(
            "prior model probabilities must be nonnegative and sum to 1".into(),
        ));
    }
    let logs: Vec<f64> = elbos
        .iter()
        .zip(prior_model_probs)
        .map(|(e, p)| e + p.ln())
        .collect();
    let norm = log_sum_exp(&logs);
    Ok(logs.iter().map(|v| (v - norm).exp()).collect())
}
