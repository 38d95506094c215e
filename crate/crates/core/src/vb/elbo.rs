use statrs::function::gamma::{digamma, ln_gamma};

use super::{VbPosterior, VbSolver};
use crate::error::{LsapcError, Result};
use crate::model::{positivity_log_normalizer, Dataset, LsapcConfig, LN_2PI};

/// `E[ln x]` under `G(shape, rate)`.
fn expected_ln(shape: f64, rate: f64) -> f64 {
    digamma(shape) - rate.ln()
}

/// `E[ln G(x; a, b)]` under `q(x) = G(shape, rate)`.
fn expected_gamma_log_prior(a: f64, b: f64, shape: f64, rate: f64) -> f64 {
    a * b.ln() - ln_gamma(a) + (a - 1.0) * expected_ln(shape, rate) - b * shape / rate
}

fn gamma_entropy(shape: f64, rate: f64) -> f64 {
    shape - rate.ln() + ln_gamma(shape) + (1.0 - shape) * digamma(shape)
}

fn check(term: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(LsapcError::NonFinite(format!("ELBO term `{term}`")))
    }
}

/// Evidence lower bound `E_q[ln p(y, θ)] − E_q[ln q(θ)]`, in closed form.
///
/// In positivity mode the β entropy is that of the untruncated Gaussian
/// factor and the prior carries the `p·ln 2` orthant normalizer, so the
/// value is an approximation there.
pub fn elbo(q: &VbPosterior, data: &Dataset, cfg: &LsapcConfig) -> Result<f64> {
    let solver = VbSolver::new(data, cfg)?;
    let p = data.p();
    let n = data.n() as f64;
    let m = q.moments(cfg);

    let e_ln_sigma = expected_ln(q.gamma_sigma, q.delta_sigma);
    let likelihood = check(
        "likelihood",
        0.5 * n * (e_ln_sigma - LN_2PI) - 0.5 * m.sigma * solver.expected_rss(&m),
    )?;

    let inc = m.increment_second();
    let mut beta_prior = 0.0;
    let mut tau_prior = 0.0;
    let mut tau_entropy = 0.0;
    for i in 0..p {
        let e_ln_tau = expected_ln(q.gamma[i], q.delta[i]);
        beta_prior += 0.5 * (e_ln_tau - LN_2PI) - 0.5 * m.tau[i] * inc[i];
        tau_prior += expected_gamma_log_prior(cfg.a, cfg.b, q.gamma[i], q.delta[i]);
        tau_entropy += gamma_entropy(q.gamma[i], q.delta[i]);
    }
    if cfg.positivity {
        beta_prior += positivity_log_normalizer(p);
    }
    let beta_prior = check("beta prior", beta_prior)?;
    let tau_prior = check("tau prior", tau_prior)?;
    let tau_entropy = check("tau entropy", tau_entropy)?;

    let sigma_prior = check(
        "sigma prior",
        expected_gamma_log_prior(cfg.a, cfg.b, q.gamma_sigma, q.delta_sigma),
    )?;
    let sigma_entropy = check("sigma entropy", gamma_entropy(q.gamma_sigma, q.delta_sigma))?;

    let log_det_cov = q
        .cov
        .clone()
        .cholesky()
        .map(|c| 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
        .ok_or_else(|| LsapcError::NonFinite("ELBO term `beta entropy` (Σ not SPD)".into()))?;
    let beta_entropy = check("beta entropy", 0.5 * p as f64 * (1.0 + LN_2PI) + 0.5 * log_det_cov)?;

    let mut total = likelihood + beta_prior + tau_prior + sigma_prior + beta_entropy + tau_entropy + sigma_entropy;

    if cfg.infers_l() {
        let mut l_prior = 0.0;
        let mut psi_prior = 0.0;
        let mut l_entropy = 0.0;
        let mut psi_entropy = 0.0;
        for i in 0..p.saturating_sub(1) {
            let e_ln_psi = expected_ln(q.lambda[i], q.omega[i]);
            let sq_dev = m.l_sq[i] - 2.0 * cfg.l0 * m.l[i] + cfg.l0 * cfg.l0;
            l_prior += 0.5 * (e_ln_psi - LN_2PI) - 0.5 * m.psi[i] * sq_dev;
            psi_prior += expected_gamma_log_prior(cfg.c, cfg.d, q.lambda[i], q.omega[i]);
            l_entropy += 0.5 * (1.0 + LN_2PI) - 0.5 * q.rho[i].ln();
            psi_entropy += gamma_entropy(q.lambda[i], q.omega[i]);
        }
        total += check("l prior", l_prior)?
            + check("psi prior", psi_prior)?
            + check("l entropy", l_entropy)?
            + check("psi entropy", psi_entropy)?;
    }
    Ok(total)
}
