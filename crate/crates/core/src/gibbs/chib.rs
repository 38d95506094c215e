//! Log marginal likelihood from Gibbs output (Chib, 1995).
//!
//! `ln p(y) = ln p(y | θ*) + ln p(θ*) − ln p(θ* | y)` at a high-density
//! point θ*. The posterior ordinate factorizes as
//!
//! ```text
//! p(σ*|y) · p(τ*|σ*,y) · p(l*|σ*,τ*,y) · p(ψ*|σ*,τ*,l*,y) · p(β*|σ*,τ*,l*,ψ*,y)
//! ```
//!
//! The first three factors are Rao-Blackwellized averages of full
//! conditional densities: over the main chain for σ, over a reduced run
//! with σ clamped for τ, and over a reduced run with (σ, τ) clamped for l.
//! The ψ conditional depends on l only and β's is Gaussian, so the last two
//! factors are exact. In positivity mode the β factor is divided by the
//! orthant probability of its conditional, estimated by GHK.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::conditionals::{l_conditionals, psi_conditionals, sigma_conditional, tau_conditionals};
use super::diagnostics::median;
use super::{run_chain, Clamp, GibbsChain, GibbsSampler, GibbsSettings};
use crate::error::{LsapcError, Result};
use crate::model::{ln_gamma_pdf, ln_normal_pdf, log_joint, Dataset, LsapcConfig, ModelState};
use crate::numeric::log_mean_exp;
use crate::rand_kernels::RngHandle;

/// GHK replicates for the truncated β ordinate.
const ORTHANT_DRAWS: usize = 4_000;

/// How θ* is picked from the main chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ThetaStarRule {
    /// The retained sample with the largest log joint density.
    MaxLogJoint,
    /// Componentwise posterior medians of every parameter.
    ComponentwiseMedian,
}

#[derive(Clone, Debug)]
pub struct ChibEstimate {
    pub rule: ThetaStarRule,
    pub log_marginal: f64,
    /// `ln p(y | θ*) + ln p(θ*)`.
    pub log_joint_at_star: f64,
    pub log_posterior_ordinate: f64,
    /// Per-block contributions to the ordinate, in decomposition order.
    pub blocks: Vec<(&'static str, f64)>,
    pub theta_star: ModelState,
}

/// Runs the main chain and returns Chib's estimate of `ln p(y)`.
pub fn chib_log_marginal(
    data: &Dataset,
    cfg: &LsapcConfig,
    settings: &GibbsSettings,
    rule: ThetaStarRule,
) -> Result<f64> {
    let chain = run_chain(data, cfg, settings)?;
    Ok(chib_from_chain(&chain, data, cfg, settings, rule)?.log_marginal)
}

/// Chib's estimate reusing an existing main chain; reduced runs use
/// `settings` with streams 1 and 2 of `settings.seed`.
pub fn chib_from_chain(
    chain: &GibbsChain,
    data: &Dataset,
    cfg: &LsapcConfig,
    settings: &GibbsSettings,
    rule: ThetaStarRule,
) -> Result<ChibEstimate> {
    if chain.is_empty() {
        return Err(LsapcError::EmptyChain);
    }
    let sampler = GibbsSampler::new(data, cfg)?;
    let star = theta_star(chain, rule)?;
    let log_joint_at_star = log_joint(&star, data, cfg)?;
    let mut blocks: Vec<(&'static str, f64)> = Vec::with_capacity(5);

    // σ: average over the main chain.
    let sigma_terms: Vec<f64> = chain
        .samples
        .iter()
        .map(|s| {
            let g = sigma_conditional(&s.beta, data, cfg);
            ln_gamma_pdf(star.sigma, g.shape, g.rate)
        })
        .collect();
    blocks.push(("sigma", finite_block("sigma", log_mean_exp(&sigma_terms))?));

    // τ: reduced run with σ clamped.
    let mut tau_terms = Vec::with_capacity(settings.retained());
    let mut rng = RngHandle::with_stream(settings.seed, 1);
    sampler.run_clamped(
        star.clone(),
        settings,
        Clamp {
            sigma: true,
            ..Default::default()
        },
        &mut rng,
        |s| {
            let v: f64 = tau_conditionals(&s.beta, &s.l, cfg)
                .iter()
                .zip(star.tau.iter())
                .map(|(g, &t)| ln_gamma_pdf(t, g.shape, g.rate))
                .sum();
            tau_terms.push(v);
        },
    )?;
    blocks.push(("tau", finite_block("tau", log_mean_exp(&tau_terms))?));

    if cfg.infers_l() && star.l.len() > 0 {
        // l: reduced run with σ and τ clamped.
        let mut l_terms = Vec::with_capacity(settings.retained());
        let mut rng = RngHandle::with_stream(settings.seed, 2);
        sampler.run_clamped(
            star.clone(),
            settings,
            Clamp {
                sigma: true,
                tau: true,
                l: false,
            },
            &mut rng,
            |s| {
                let v: f64 = l_conditionals(&s.beta, &star.tau, &s.psi, cfg)
                    .iter()
                    .zip(star.l.iter())
                    .map(|(c, &l)| ln_normal_pdf(l, c.mean, c.precision))
                    .sum();
                l_terms.push(v);
            },
        )?;
        blocks.push(("l", finite_block("l", log_mean_exp(&l_terms))?));

        let psi: f64 = psi_conditionals(&star.l, cfg)
            .iter()
            .zip(star.psi.iter())
            .map(|(g, &v)| ln_gamma_pdf(v, g.shape, g.rate))
            .sum();
        blocks.push(("psi", finite_block("psi", psi)?));
    }

    let cond = sampler
        .beta_sampler()
        .conditional(star.sigma, &star.l, &star.tau)?;
    let mut beta_ordinate = cond.ln_density(&star.beta);
    if cfg.positivity {
        let mut rng = RngHandle::with_stream(settings.seed, 3);
        beta_ordinate -= cond.ln_orthant_probability(ORTHANT_DRAWS, &mut rng);
    }
    blocks.push(("beta", finite_block("beta", beta_ordinate)?));

    let ordinate: f64 = blocks.iter().map(|(_, v)| v).sum();
    let log_marginal = log_joint_at_star - ordinate;
    if !log_marginal.is_finite() {
        return Err(LsapcError::Estimation { block: "total" });
    }
    Ok(ChibEstimate {
        rule,
        log_marginal,
        log_joint_at_star,
        log_posterior_ordinate: ordinate,
        blocks,
        theta_star: star,
    })
}

fn finite_block(block: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(LsapcError::Estimation { block })
    }
}

/// θ* under the chosen rule.
pub fn theta_star(chain: &GibbsChain, rule: ThetaStarRule) -> Result<ModelState> {
    match rule {
        ThetaStarRule::MaxLogJoint => {
            let idx = chain
                .log_joint_trace
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .ok_or(LsapcError::EmptyChain)?;
            Ok(chain.samples[idx].clone())
        }
        ThetaStarRule::ComponentwiseMedian => {
            let first = chain.samples.first().ok_or(LsapcError::EmptyChain)?;
            let med_vec = |get: &dyn Fn(&ModelState) -> &DVector<f64>, len: usize| {
                DVector::from_fn(len, |i, _| {
                    let v: Vec<f64> = chain.samples.iter().map(|s| get(s)[i]).collect();
                    median(&v)
                })
            };
            let sig: Vec<f64> = chain.samples.iter().map(|s| s.sigma).collect();
            Ok(ModelState {
                beta: med_vec(&|s| &s.beta, first.beta.len()),
                sigma: median(&sig),
                tau: med_vec(&|s| &s.tau, first.tau.len()),
                l: med_vec(&|s| &s.l, first.l.len()),
                psi: med_vec(&|s| &s.psi, first.psi.len()),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ln_gamma_pdf;
    use crate::numeric::log_sum_exp;
    use nalgebra::DMatrix;

    /// `ln p(y)` for p = 1 with β integrated out analytically and (ln σ, ln τ)
    /// by a midpoint rule on a wide grid.
    fn quadrature_p1(data: &Dataset, cfg: &LsapcConfig) -> f64 {
        let n = data.n() as f64;
        let x = data.x.column(0);
        let xx = x.dot(&x);
        let xy = x.dot(&data.y);
        let yy = data.y.dot(&data.y);
        let (lo, hi, k) = (-20.0, 12.0, 1_600);
        let h = (hi - lo) / k as f64;
        let mut terms = Vec::with_capacity(k * k);
        for i in 0..k {
            let ls = lo + (i as f64 + 0.5) * h;
            let s = ls.exp();
            for j in 0..k {
                let lt = lo + (j as f64 + 0.5) * h;
                let t = lt.exp();
                let r = s / t;
                let denom = 1.0 + r * xx;
                let quad = s * (yy - r * xy * xy / denom);
                let ln_lik = 0.5 * n * (s.ln() - crate::model::LN_2PI) - 0.5 * denom.ln() - 0.5 * quad;
                terms.push(ln_lik + ln_gamma_pdf(s, cfg.a, cfg.b) + ln_gamma_pdf(t, cfg.a, cfg.b) + ls + lt);
            }
        }
        log_sum_exp(&terms) + 2.0 * h.ln()
    }

    fn instance() -> (Dataset, LsapcConfig) {
        let mut rng = RngHandle::new(11);
        let n = 12;
        let x = DMatrix::from_fn(n, 1, |_, _| rng.standard_normal());
        let y = &x * 1.2 + DVector::from_fn(n, |_, _| rng.normal(0.0, 0.8));
        let cfg = LsapcConfig {
            a: 1.0,
            b: 1.0,
            c: 1.0,
            d: 1.0,
            ..Default::default()
        };
        (Dataset::new(y, x).unwrap(), cfg)
    }

    #[test]
    fn p1_matches_quadrature_for_both_rules() {
        let (data, cfg) = instance();
        let truth = quadrature_p1(&data, &cfg);
        let settings = GibbsSettings::new(20_000, 2_000, 4);
        let chain = run_chain(&data, &cfg, &settings).unwrap();
        for rule in [ThetaStarRule::MaxLogJoint, ThetaStarRule::ComponentwiseMedian] {
            let est = chib_from_chain(&chain, &data, &cfg, &settings, rule).unwrap();
            assert!((est.log_marginal - truth).abs() < 0.2, "{rule:?}: {} vs {truth}", est.log_marginal);
            let sum: f64 = est.blocks.iter().map(|b| b.1).sum();
            assert_eq!(sum, est.log_posterior_ordinate);
        }
    }

    #[test]
    fn thinning_leaves_estimate_consistent() {
        let (data, cfg) = instance();
        let truth = quadrature_p1(&data, &cfg);
        let settings = GibbsSettings {
            n_iter: 60_000,
            burn_in: 2_000,
            thin: 5,
            seed: 8,
        };
        let est = chib_log_marginal(&data, &cfg, &settings, ThetaStarRule::MaxLogJoint).unwrap();
        assert!((est - truth).abs() < 0.2, "{est} vs {truth}");
    }

    #[test]
    fn median_rule_takes_componentwise_medians() {
        let (data, cfg) = instance();
        let chain = run_chain(&data, &cfg, &GibbsSettings::new(301, 0, 1)).unwrap();
        let star = theta_star(&chain, ThetaStarRule::ComponentwiseMedian).unwrap();
        let mut sig: Vec<f64> = chain.samples.iter().map(|s| s.sigma).collect();
        sig.sort_by(f64::total_cmp);
        assert_eq!(star.sigma, sig[150]);
        let best = theta_star(&chain, ThetaStarRule::MaxLogJoint).unwrap();
        let top = chain.log_joint_trace.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(log_joint(&best, &data, &cfg).unwrap(), top);
    }

    #[test]
    fn positivity_and_inferred_l_give_finite_estimate() {
        let mut rng = RngHandle::new(3);
        let x = DMatrix::from_fn(20, 4, |_, _| rng.standard_normal());
        let y = &x * DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]) + DVector::from_fn(20, |_, _| rng.normal(0.0, 0.5));
        let data = Dataset::new(y, x).unwrap();
        let cfg = LsapcConfig {
            positivity: true,
            a: 1.0,
            b: 1.0,
            c: 1.0,
            d: 1.0,
            ..Default::default()
        };
        let est = chib_from_chain(
            &run_chain(&data, &cfg, &GibbsSettings::new(2_000, 200, 2)).unwrap(),
            &data,
            &cfg,
            &GibbsSettings::new(2_000, 200, 2),
            ThetaStarRule::MaxLogJoint,
        )
        .unwrap();
        assert!(est.log_marginal.is_finite());
        let names: Vec<&str> = est.blocks.iter().map(|b| b.0).collect();
        assert_eq!(names, ["sigma", "tau", "l", "psi", "beta"]);
    }
}
