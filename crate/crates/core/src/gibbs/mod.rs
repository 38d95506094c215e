//! Gibbs sampler for the LS-APC model.
//!
//! Each sweep redraws, in order, β (QR-factorized Gaussian, or its
//! orthant-truncated version in positivity mode), σ, every τᵢ, every lᵢ and
//! every ψᵢ from their full conditionals. With `fixed_l` set, `l` and `ψ`
//! are left untouched.

mod chib;
pub mod conditionals;
pub mod diagnostics;

pub use chib::{chib_from_chain, chib_log_marginal, theta_star, ChibEstimate, ThetaStarRule};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LsapcError, Result};
use crate::model::{log_joint, Dataset, EstimateSource, LsapcConfig, ModelState, PointEstimate};
use crate::rand_kernels::{sample_gamma, BetaSampler, RngHandle};
use conditionals::{l_conditionals, psi_conditionals, sigma_conditional, tau_conditionals, GammaParams};

/// Floor applied to Gamma rates before drawing (exactly zero residuals).
pub const RATE_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsSettings {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for GibbsSettings {
    fn default() -> Self {
        GibbsSettings {
            n_iter: 50_000,
            burn_in: 5_000,
            thin: 1,
            seed: 0,
        }
    }
}

impl GibbsSettings {
    pub fn new(n_iter: usize, burn_in: usize, seed: u64) -> Self {
        GibbsSettings {
            n_iter,
            burn_in,
            thin: 1,
            seed,
        }
    }

    pub fn retained(&self) -> usize {
        if self.thin == 0 || self.burn_in >= self.n_iter {
            return 0;
        }
        (self.n_iter - self.burn_in) / self.thin
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(LsapcError::InvalidParameter("thin must be >= 1".into()));
        }
        if self.burn_in >= self.n_iter || self.retained() == 0 {
            return Err(LsapcError::InvalidParameter(format!(
                "settings retain no samples (n_iter {}, burn_in {}, thin {})",
                self.n_iter, self.burn_in, self.thin
            )));
        }
        Ok(())
    }

    /// Whether 1-based iteration `t` is kept.
    fn keeps(&self, t: usize) -> bool {
        t > self.burn_in && (t - self.burn_in) % self.thin == 0
    }
}

/// Retained post-burn-in, thinned states with their log joint densities.
#[derive(Clone, Debug)]
pub struct GibbsChain {
    pub samples: Vec<ModelState>,
    pub log_joint_trace: Vec<f64>,
    pub settings: GibbsSettings,
}

impl GibbsChain {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Retained draws of β as a `p × len` matrix.
    pub fn beta_matrix(&self) -> DMatrix<f64> {
        let p = self.samples.first().map_or(0, |s| s.p());
        DMatrix::from_fn(p, self.len(), |i, j| self.samples[j].beta[i])
    }

    pub fn posterior_mean_beta(&self) -> DVector<f64> {
        let m = self.beta_matrix();
        m.column_mean()
    }
}

/// Which blocks stay clamped during a sweep (used by the reduced runs).
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Clamp {
    pub sigma: bool,
    pub tau: bool,
    pub l: bool,
}

/// Sampler bound to one dataset and configuration.
#[derive(Clone, Debug)]
pub struct GibbsSampler<'a> {
    data: &'a Dataset,
    cfg: &'a LsapcConfig,
    beta: BetaSampler,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(data: &'a Dataset, cfg: &'a LsapcConfig) -> Result<Self> {
        data.validate()?;
        cfg.validate()?;
        Ok(GibbsSampler {
            data,
            cfg,
            beta: BetaSampler::new(data),
        })
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn config(&self) -> &LsapcConfig {
        self.cfg
    }

    pub(crate) fn beta_sampler(&self) -> &BetaSampler {
        &self.beta
    }

    /// Deterministic starting point: unit-ridge β, `σ = 1/var(y)`, `τ = 1`,
    /// `l = l₀` (or the fixed value), `ψ = c/d`.
    pub fn initial_state(&self) -> ModelState {
        initial_state(self.data, self.cfg)
    }

    /// One full sweep.
    pub fn step(&self, state: &ModelState, rng: &mut RngHandle) -> Result<ModelState> {
        self.step_clamped(state, Clamp::default(), rng)
    }

    pub(crate) fn step_clamped(&self, state: &ModelState, clamp: Clamp, rng: &mut RngHandle) -> Result<ModelState> {
        let cfg = self.cfg;
        let mut next = state.clone();

        let cond = self.beta.conditional(next.sigma, &next.l, &next.tau)?;
        next.beta = if cfg.positivity {
            cond.draw_truncated(&next.beta, cfg.truncated_sweeps, rng)
        } else {
            cond.draw(rng)
        };

        if !clamp.sigma {
            next.sigma = draw(sigma_conditional(&next.beta, self.data, cfg), rng)?;
        }
        if !clamp.tau {
            for (i, g) in tau_conditionals(&next.beta, &next.l, cfg).into_iter().enumerate() {
                next.tau[i] = draw(g, rng)?;
            }
        }
        if cfg.infers_l() {
            if !clamp.l {
                for (i, c) in l_conditionals(&next.beta, &next.tau, &next.psi, cfg)
                    .into_iter()
                    .enumerate()
                {
                    next.l[i] = rng.normal(c.mean, 1.0 / c.precision.sqrt());
                }
            }
            for (i, g) in psi_conditionals(&next.l, cfg).into_iter().enumerate() {
                next.psi[i] = draw(g, rng)?;
            }
        }
        Ok(next)
    }

    /// Runs `settings.n_iter` sweeps from `start` and keeps the retained ones.
    pub fn run_from(&self, start: ModelState, settings: &GibbsSettings) -> Result<GibbsChain> {
        let mut rng = RngHandle::new(settings.seed);
        self.run_clamped(start, settings, Clamp::default(), &mut rng, |_| {})
    }

    /// Generic chain driver; `visit` sees every retained state.
    pub(crate) fn run_clamped(
        &self,
        start: ModelState,
        settings: &GibbsSettings,
        clamp: Clamp,
        rng: &mut RngHandle,
        mut visit: impl FnMut(&ModelState),
    ) -> Result<GibbsChain> {
        settings.validate()?;
        start.validate(self.data.p())?;
        let mut samples = Vec::with_capacity(settings.retained());
        let mut trace = Vec::with_capacity(settings.retained());
        let mut state = start;
        for t in 1..=settings.n_iter {
            state = self
                .step_clamped(&state, clamp, rng)
                .map_err(|e| LsapcError::Chain {
                    iteration: t,
                    source: Box::new(e),
                })?;
            if settings.keeps(t) {
                let lj = log_joint(&state, self.data, self.cfg).map_err(|e| LsapcError::Chain {
                    iteration: t,
                    source: Box::new(e),
                })?;
                visit(&state);
                samples.push(state.clone());
                trace.push(lj);
            }
        }
        Ok(GibbsChain {
            samples,
            log_joint_trace: trace,
            settings: settings.clone(),
        })
    }
}

fn draw(g: GammaParams, rng: &mut RngHandle) -> Result<f64> {
    sample_gamma(g.shape, g.rate.max(RATE_FLOOR), rng)
}

pub fn initial_state(data: &Dataset, cfg: &LsapcConfig) -> ModelState {
    let p = data.p();
    let n = data.n() as f64;
    let gram = data.x.tr_mul(&data.x) + DMatrix::identity(p, p);
    let rhs = data.x.tr_mul(&data.y);
    let mut beta = gram
        .cholesky()
        .map(|c| c.solve(&rhs))
        .unwrap_or_else(|| DVector::zeros(p));
    if cfg.positivity {
        beta.iter_mut().for_each(|b| *b = b.max(0.0));
    }
    let mean = data.y.sum() / n;
    let var = if data.n() > 1 {
        data.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let sigma = if var > 0.0 && var.is_finite() { 1.0 / var } else { 1.0 };
    let l0 = cfg.fixed_l.unwrap_or(cfg.l0);
    ModelState {
        beta,
        sigma,
        tau: DVector::from_element(p, 1.0),
        l: DVector::from_element(p.saturating_sub(1), l0),
        psi: DVector::from_element(p.saturating_sub(1), cfg.c / cfg.d),
    }
}

/// One sweep from `state`; builds the β factorization cache on the fly.
pub fn gibbs_step(state: &ModelState, data: &Dataset, cfg: &LsapcConfig, rng: &mut RngHandle) -> Result<ModelState> {
    GibbsSampler::new(data, cfg)?.step(state, rng)
}

/// Full chain from the deterministic initialization.
pub fn run_chain(data: &Dataset, cfg: &LsapcConfig, settings: &GibbsSettings) -> Result<GibbsChain> {
    let sampler = GibbsSampler::new(data, cfg)?;
    sampler.run_from(sampler.initial_state(), settings)
}

/// β of the retained sample with the largest log joint density.
pub fn map_point_estimate(chain: &GibbsChain) -> Result<PointEstimate> {
    let (idx, &best) = chain
        .log_joint_trace
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(LsapcError::EmptyChain)?;
    Ok(PointEstimate {
        beta_hat: chain.samples[idx].beta.clone(),
        log_joint_at_max: Some(best),
        source: EstimateSource::GibbsMaxSample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::diagnostics::batch_means_se;

    pub(crate) fn synthetic(seed: u64, n: usize, p: usize, noise: f64) -> (Dataset, DVector<f64>) {
        let mut rng = RngHandle::new(seed);
        let beta = DVector::from_fn(p, |i, _| if i % 3 == 0 { 2.0 } else { 0.0 });
        let x = DMatrix::from_fn(n, p, |_, _| rng.standard_normal());
        let y = &x * &beta + DVector::from_fn(n, |_, _| rng.normal(0.0, noise));
        (Dataset::new(y, x).unwrap(), beta)
    }

    fn informative() -> LsapcConfig {
        LsapcConfig {
            a: 1.0,
            b: 1.0,
            c: 1.0,
            d: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn settings_retained_count() {
        let s = GibbsSettings {
            n_iter: 100,
            burn_in: 10,
            thin: 7,
            seed: 0,
        };
        assert_eq!(s.retained(), 12);
        assert!(GibbsSettings::new(10, 10, 0).validate().is_err());
    }

    #[test]
    fn chain_length_and_determinism() {
        let (data, _) = synthetic(1, 30, 5, 0.5);
        let cfg = LsapcConfig::default();
        let settings = GibbsSettings {
            n_iter: 300,
            burn_in: 50,
            thin: 5,
            seed: 9,
        };
        let a = run_chain(&data, &cfg, &settings).unwrap();
        let b = run_chain(&data, &cfg, &settings).unwrap();
        assert_eq!(a.len(), 50);
        assert_eq!(a.log_joint_trace.len(), 50);
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            assert_eq!(sa, sb);
        }
        assert!(a.log_joint_trace.iter().all(|v| v.is_finite()));
        for s in &a.samples {
            s.validate(5).unwrap();
        }
    }

    #[test]
    fn fixed_l_leaves_l_and_psi_untouched() {
        let (data, _) = synthetic(2, 20, 4, 0.5);
        for fixed in [0.0, -1.0] {
            let cfg = LsapcConfig {
                fixed_l: Some(fixed),
                ..Default::default()
            };
            let chain = run_chain(&data, &cfg, &GibbsSettings::new(50, 10, 1)).unwrap();
            for s in &chain.samples {
                assert!(s.l.iter().all(|&l| l == fixed));
            }
        }
    }

    #[test]
    fn positivity_draws_are_nonnegative() {
        let (data, _) = synthetic(3, 25, 6, 1.0);
        let cfg = LsapcConfig {
            positivity: true,
            ..Default::default()
        };
        let chain = run_chain(&data, &cfg, &GibbsSettings::new(400, 0, 4)).unwrap();
        assert!(chain.samples.iter().all(|s| s.beta.iter().all(|&b| b >= 0.0)));
    }

    #[test]
    fn map_estimate_is_argmax() {
        let (data, _) = synthetic(4, 20, 3, 0.5);
        let cfg = LsapcConfig::default();
        let mut chain = run_chain(&data, &cfg, &GibbsSettings::new(60, 10, 2)).unwrap();
        let single = GibbsChain {
            samples: vec![chain.samples[3].clone()],
            log_joint_trace: vec![chain.log_joint_trace[3]],
            settings: chain.settings.clone(),
        };
        assert_eq!(map_point_estimate(&single).unwrap().beta_hat, chain.samples[3].beta);

        let mut injected = chain.samples[0].clone();
        injected.beta = DVector::from_vec(vec![9.0, 9.0, 9.0]);
        chain.samples.push(injected.clone());
        chain.log_joint_trace.push(1e9);
        let est = map_point_estimate(&chain).unwrap();
        assert_eq!(est.beta_hat, injected.beta);
        assert_eq!(est.source, EstimateSource::GibbsMaxSample);

        let empty = GibbsChain {
            samples: vec![],
            log_joint_trace: vec![],
            settings: chain.settings.clone(),
        };
        assert!(matches!(map_point_estimate(&empty), Err(LsapcError::EmptyChain)));
    }

    #[test]
    fn split_half_sigma_means_agree() {
        let (data, _) = synthetic(5, 60, 4, 0.5);
        let cfg = informative();
        let chain = run_chain(&data, &cfg, &GibbsSettings::new(5_000, 500, 3)).unwrap();
        let sig: Vec<f64> = chain.samples.iter().map(|s| s.sigma).collect();
        let (first, second) = sig.split_at(sig.len() / 2);
        let m1 = first.iter().sum::<f64>() / first.len() as f64;
        let m2 = second.iter().sum::<f64>() / second.len() as f64;
        let se = (batch_means_se(first).powi(2) + batch_means_se(second).powi(2)).sqrt();
        assert!((m1 - m2).abs() < 3.0 * se, "{m1} vs {m2} (se {se})");
    }

    #[test]
    fn distant_initializations_agree() {
        let (data, _) = synthetic(6, 40, 3, 0.5);
        let cfg = informative();
        let sampler = GibbsSampler::new(&data, &cfg).unwrap();
        let near = sampler.initial_state();
        let mut far = near.clone();
        far.beta = DVector::from_element(3, 50.0);
        far.sigma = 1e-4;
        far.tau = DVector::from_element(3, 1e3);
        far.l = DVector::from_element(2, 3.0);
        let s1 = GibbsSettings::new(6_000, 1_000, 11);
        let s2 = GibbsSettings::new(6_000, 1_000, 12);
        let c1 = sampler.run_from(near, &s1).unwrap();
        let c2 = sampler.run_from(far, &s2).unwrap();
        for i in 0..3 {
            let a: Vec<f64> = c1.samples.iter().map(|s| s.beta[i]).collect();
            let b: Vec<f64> = c2.samples.iter().map(|s| s.beta[i]).collect();
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            let se = (batch_means_se(&a).powi(2) + batch_means_se(&b).powi(2)).sqrt();
            assert!((ma - mb).abs() < 3.0 * se, "coord {i}: {ma} vs {mb}");
        }
    }
}
