//! Draws from the Gaussian full conditional of β.
//!
//! The conditional precision `σXᵀX + L D Lᵀ` is never formed. Instead the
//! stacked matrix `[√σ·A; √D·Lᵀ]` is triangularized by Householder QR,
//! giving an upper-triangular `R` with `RᵀR` equal to that precision, and
//! the mean and draws follow from triangular solves. `A` is `X` itself when
//! `n ≤ p` and the `p × p` triangular factor of `X` otherwise; both satisfy
//! `AᵀA = XᵀX`, so the stacked matrix has at most `2p` rows.

use nalgebra::{DMatrix, DVector};

use super::{sample_truncated_standard_normal, RngHandle};
use crate::error::{LsapcError, Result};
use crate::model::{Dataset, LN_2PI};
use crate::numeric::log_mean_exp;

/// Relative pivot tolerance: `|R_ii| < tol · max_j |R_jj|` is singular.
pub const R_PIVOT_TOLERANCE: f64 = 1e-12;

/// Precomputed compressed design for repeated β draws on one dataset.
#[derive(Clone, Debug)]
pub struct BetaSampler {
    /// `A` with `AᵀA = XᵀX`.
    design: DMatrix<f64>,
    /// `Xᵀy`.
    xty: DVector<f64>,
}

impl BetaSampler {
    pub fn new(data: &Dataset) -> Self {
        let (n, p) = (data.n(), data.p());
        let xty = data.x.tr_mul(&data.y);
        let design = if n > p {
            data.x.clone().qr().r()
        } else {
            data.x.clone()
        };
        BetaSampler { design, xty }
    }

    pub fn p(&self) -> usize {
        self.xty.len()
    }

    /// Factor the conditional of β given `(σ, τ, l)`.
    pub fn conditional(&self, sigma: f64, l: &DVector<f64>, tau: &DVector<f64>) -> Result<BetaConditional> {
        let p = self.p();
        if tau.len() != p || l.len() + 1 != p {
            return Err(LsapcError::DimensionMismatch(format!(
                "tau ({}) / l ({}) do not match p = {p}",
                tau.len(),
                l.len()
            )));
        }
        if !(sigma > 0.0) || tau.iter().any(|&t| !(t > 0.0)) {
            return Err(LsapcError::InvalidParameter(
                "sigma and tau must be positive".into(),
            ));
        }
        let m = self.design.nrows();
        let mut stacked = DMatrix::zeros(m + p, p);
        let root_sigma = sigma.sqrt();
        stacked
            .view_mut((0, 0), (m, p))
            .copy_from(&(&self.design * root_sigma));
        for i in 0..p {
            let rt = tau[i].sqrt();
            stacked[(m + i, i)] = rt;
            if i + 1 < p {
                stacked[(m + i, i + 1)] = rt * l[i];
            }
        }
        let r = stacked.qr().r();
        let max_pivot = r.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        for i in 0..p {
            let v = r[(i, i)].abs();
            if !(v >= R_PIVOT_TOLERANCE * max_pivot) || !v.is_finite() || v == 0.0 {
                return Err(LsapcError::Conditioning { index: i, value: v });
            }
        }
        let rhs = &self.xty * sigma;
        let w = r
            .tr_solve_upper_triangular(&rhs)
            .ok_or(LsapcError::Conditioning { index: 0, value: 0.0 })?;
        let mean = r
            .solve_upper_triangular(&w)
            .ok_or(LsapcError::Conditioning { index: 0, value: 0.0 })?;
        Ok(BetaConditional { mean, r })
    }
}

/// `N(mean, (RᵀR)⁻¹)` with `R` upper triangular.
#[derive(Clone, Debug)]
pub struct BetaConditional {
    pub mean: DVector<f64>,
    pub r: DMatrix<f64>,
}

impl BetaConditional {
    /// Unconstrained draw `mean + R⁻¹z`.
    pub fn draw(&self, rng: &mut RngHandle) -> DVector<f64> {
        let p = self.mean.len();
        let z = DVector::from_fn(p, |_, _| rng.standard_normal());
        let dev = self
            .r
            .solve_upper_triangular(&z)
            .expect("pivots checked at construction");
        &self.mean + dev
    }

    /// Coordinate-wise Gibbs sweeps on the `[0, ∞)ᵖ`-truncated conditional,
    /// starting from `start` (projected onto the orthant).
    pub fn draw_truncated(&self, start: &DVector<f64>, sweeps: usize, rng: &mut RngHandle) -> DVector<f64> {
        let p = self.mean.len();
        let precision = self.r.tr_mul(&self.r);
        let mut beta = start.map(|b| b.max(0.0));
        let mut dev = &beta - &self.mean;
        let mut pdev = &precision * &dev;
        for _ in 0..sweeps {
            for i in 0..p {
                let pii = precision[(i, i)];
                let sd = 1.0 / pii.sqrt();
                let cond_mean = self.mean[i] - (pdev[i] - pii * dev[i]) / pii;
                let z = sample_truncated_standard_normal(-cond_mean / sd, rng);
                let new = (cond_mean + sd * z).max(0.0);
                let delta = new - beta[i];
                if delta != 0.0 {
                    beta[i] = new;
                    dev[i] += delta;
                    pdev.axpy(delta, &precision.column(i), 1.0);
                }
            }
        }
        beta
    }

    /// `ln N(beta; mean, (RᵀR)⁻¹)`.
    pub fn ln_density(&self, beta: &DVector<f64>) -> f64 {
        let p = self.mean.len() as f64;
        let log_det: f64 = self.r.diagonal().iter().map(|v| v.abs().ln()).sum();
        let dev = beta - &self.mean;
        let q = (&self.r * dev).norm_squared();
        -0.5 * p * LN_2PI + log_det - 0.5 * q
    }

    /// GHK estimate of `ln P(β ≥ 0)` under this Gaussian, `draws` replicates.
    ///
    /// Coordinates are fixed from last to first, following the triangular
    /// structure of `R(β − mean) = w` with `w ~ N(0, I)`.
    pub fn ln_orthant_probability(&self, draws: usize, rng: &mut RngHandle) -> f64 {
        let p = self.mean.len();
        let mut log_weights = Vec::with_capacity(draws);
        let mut dev = vec![0.0; p];
        for _ in 0..draws {
            let mut log_w = 0.0;
            for i in (0..p).rev() {
                let rii = self.r[(i, i)];
                let mut s = 0.0;
                for j in i + 1..p {
                    s += self.r[(i, j)] * dev[j];
                }
                // β_i ≥ 0  ⇔  (w_i − s)/r_ii ≥ −mean_i
                let bound = s - self.mean[i] * rii;
                let (prob_log, w) = if rii > 0.0 {
                    (
                        ln_upper_tail(bound),
                        sample_truncated_standard_normal(bound, rng),
                    )
                } else {
                    (
                        ln_upper_tail(-bound),
                        -sample_truncated_standard_normal(-bound, rng),
                    )
                };
                log_w += prob_log;
                dev[i] = (w - s) / rii;
            }
            log_weights.push(log_w);
        }
        log_mean_exp(&log_weights)
    }
}

/// `ln(1 − Φ(x))`, accurate in the far tail.
fn ln_upper_tail(x: f64) -> f64 {
    let t = x / std::f64::consts::SQRT_2;
    if x < 0.0 {
        (0.5 * statrs::function::erf::erfc(t)).ln()
    } else {
        (0.5 * super::erfcx(t)).ln() - t * t
    }
}

/// One draw from the Gaussian full conditional of β.
pub fn sample_beta_qr(
    data: &Dataset,
    sigma: f64,
    l: &DVector<f64>,
    tau: &DVector<f64>,
    rng: &mut RngHandle,
) -> Result<DVector<f64>> {
    Ok(BetaSampler::new(data).conditional(sigma, l, tau)?.draw(rng))
}

/// Truncated draw: `sweeps` coordinate passes from `start` (or the
/// orthant-projected conditional mean when `start` is `None`).
pub fn sample_beta_truncated(
    data: &Dataset,
    sigma: f64,
    l: &DVector<f64>,
    tau: &DVector<f64>,
    start: Option<&DVector<f64>>,
    sweeps: usize,
    rng: &mut RngHandle,
) -> Result<DVector<f64>> {
    if sweeps == 0 {
        return Err(LsapcError::InvalidParameter("sweeps must be >= 1".into()));
    }
    let cond = BetaSampler::new(data).conditional(sigma, l, tau)?;
    let start = start.cloned().unwrap_or_else(|| cond.mean.clone());
    Ok(cond.draw_truncated(&start, sweeps, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::assemble_precision;
    use crate::rand_kernels::truncated_normal_moments;

    fn instance(seed: u64, n: usize, p: usize) -> Dataset {
        let mut rng = RngHandle::new(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.standard_normal());
        let y = DVector::from_fn(n, |_, _| rng.normal(0.0, 2.0));
        Dataset::new(y, x).unwrap()
    }

    fn dense_oracle(data: &Dataset, sigma: f64, l: &DVector<f64>, tau: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let prec = data.x.tr_mul(&data.x) * sigma + assemble_precision(l, tau).unwrap();
        let cov = prec.try_inverse().unwrap();
        let mean = &cov * data.x.tr_mul(&data.y) * sigma;
        (mean, cov)
    }

    #[test]
    fn conditional_mean_matches_dense_inverse() {
        for (n, p) in [(5, 3), (3, 6), (40, 7)] {
            let data = instance(11, n, p);
            let l = DVector::from_fn(p - 1, |i, _| -0.3 - 0.1 * i as f64);
            let tau = DVector::from_fn(p, |i, _| 0.5 + i as f64);
            let cond = BetaSampler::new(&data).conditional(1.7, &l, &tau).unwrap();
            let (mean, cov) = dense_oracle(&data, 1.7, &l, &tau);
            assert!((&cond.mean - &mean).norm() < 1e-10 * (1.0 + mean.norm()));
            let rtr_inv = cond.r.tr_mul(&cond.r).try_inverse().unwrap();
            assert!((rtr_inv - cov).norm() < 1e-10);
        }
    }

    #[test]
    fn sample_mean_matches_dense_oracle() {
        let data = instance(5, 5, 3);
        let l = DVector::from_vec(vec![-0.8, 0.2]);
        let tau = DVector::from_vec(vec![1.0, 2.0, 0.5]);
        let (mean, cov) = dense_oracle(&data, 0.9, &l, &tau);
        let cond = BetaSampler::new(&data).conditional(0.9, &l, &tau).unwrap();
        let mut rng = RngHandle::new(1);
        let n = 100_000;
        let mut acc = DVector::zeros(3);
        for _ in 0..n {
            acc += cond.draw(&mut rng);
        }
        acc /= n as f64;
        for i in 0..3 {
            let se = (cov[(i, i)] / n as f64).sqrt();
            assert!((acc[i] - mean[i]).abs() < 3.0 * se, "coord {i}");
        }
    }

    #[test]
    fn zero_design_draws_from_prior() {
        let data = Dataset::new(DVector::zeros(4), DMatrix::zeros(4, 3)).unwrap();
        let l = DVector::from_vec(vec![-0.9, 0.4]);
        let tau = DVector::from_vec(vec![2.0, 1.0, 3.0]);
        let prior_cov = assemble_precision(&l, &tau).unwrap().try_inverse().unwrap();
        let cond = BetaSampler::new(&data).conditional(1.0, &l, &tau).unwrap();
        let mut rng = RngHandle::new(2);
        let n = 100_000;
        let mut second = DMatrix::zeros(3, 3);
        for _ in 0..n {
            let b = cond.draw(&mut rng);
            second += &b * b.transpose();
        }
        second /= n as f64;
        for i in 0..3 {
            for j in 0..3 {
                // se of a product moment ≤ sqrt((c_ii c_jj + c_ij²)/n)
                let se = ((prior_cov[(i, i)] * prior_cov[(j, j)] + prior_cov[(i, j)].powi(2)) / n as f64).sqrt();
                assert!((second[(i, j)] - prior_cov[(i, j)]).abs() < 4.0 * se, "({i},{j})");
            }
        }
    }

    #[test]
    fn ridge_posterior_moments() {
        let data = instance(9, 12, 4);
        let cond = BetaSampler::new(&data)
            .conditional(1.0, &DVector::zeros(3), &DVector::from_element(4, 1.0))
            .unwrap();
        let ridge = (data.x.tr_mul(&data.x) + DMatrix::identity(4, 4)).try_inverse().unwrap();
        let mean = &ridge * data.x.tr_mul(&data.y);
        assert!((&cond.mean - mean).norm() < 1e-12 * (1.0 + cond.mean.norm()));
    }

    #[test]
    fn zero_column_without_regularization_is_conditioning_error() {
        let mut x = DMatrix::from_fn(6, 3, |i, j| (i + j) as f64 + 1.0);
        x.column_mut(1).fill(0.0);
        let data = Dataset::new(DVector::from_element(6, 1.0), x).unwrap();
        let tau = DVector::from_vec(vec![1.0, 1e-40, 1.0]);
        let err = BetaSampler::new(&data).conditional(1.0, &DVector::zeros(2), &tau);
        assert!(matches!(err, Err(LsapcError::Conditioning { .. })));
    }

    #[test]
    fn ln_density_matches_dense_formula() {
        let data = instance(21, 8, 3);
        let l = DVector::from_vec(vec![-0.5, -0.5]);
        let tau = DVector::from_vec(vec![1.0, 1.5, 2.0]);
        let cond = BetaSampler::new(&data).conditional(0.6, &l, &tau).unwrap();
        let (mean, cov) = dense_oracle(&data, 0.6, &l, &tau);
        let b = DVector::from_vec(vec![0.1, -0.2, 0.3]);
        let dev = &b - &mean;
        let q = (dev.transpose() * cov.clone().try_inverse().unwrap() * &dev)[(0, 0)];
        let expect = -1.5 * LN_2PI - 0.5 * cov.determinant().ln() - 0.5 * q;
        assert!((cond.ln_density(&b) - expect).abs() < 1e-10);
    }

    #[test]
    fn truncated_diagonal_case_matches_closed_form() {
        // Orthogonal design with l = 0 gives a diagonal conditional.
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0]);
        let y = DVector::from_vec(vec![-1.0, 0.5, -0.8, 0.2]);
        let data = Dataset::new(y, x).unwrap();
        let tau = DVector::from_vec(vec![1.0, 1.0]);
        let cond = BetaSampler::new(&data).conditional(0.5, &DVector::zeros(1), &tau).unwrap();
        let var = cond.r.tr_mul(&cond.r).try_inverse().unwrap();
        let mut rng = RngHandle::new(4);
        let n = 100_000;
        let mut acc = DVector::zeros(2);
        let mut state = DVector::zeros(2);
        for _ in 0..n {
            state = cond.draw_truncated(&state, 1, &mut rng);
            assert!(state.iter().all(|&b| b >= 0.0));
            acc += &state;
        }
        acc /= n as f64;
        for i in 0..2 {
            let (m1, m2) = truncated_normal_moments(cond.mean[i], var[(i, i)]);
            let se = ((m2 - m1 * m1) / n as f64).sqrt();
            assert!((acc[i] - m1).abs() < 4.0 * se, "coord {i}: {} vs {m1}", acc[i]);
        }
    }

    #[test]
    fn truncation_inactive_far_inside_orthant() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let y = DVector::from_vec(vec![50.0, 60.0, 0.0]);
        let data = Dataset::new(y, x).unwrap();
        let tau = DVector::from_vec(vec![1e-6, 1e-6]);
        let cond = BetaSampler::new(&data).conditional(4.0, &DVector::zeros(1), &tau).unwrap();
        let mut a = RngHandle::new(8);
        let n = 20_000;
        let mut mean_t = DVector::zeros(2);
        let mut state = cond.mean.clone();
        for _ in 0..n {
            state = cond.draw_truncated(&state, 1, &mut a);
            mean_t += &state;
        }
        mean_t /= n as f64;
        let se = (0.25f64 / n as f64).sqrt();
        for i in 0..2 {
            assert!((mean_t[i] - cond.mean[i]).abs() < 4.0 * se);
        }
    }

    #[test]
    fn orthant_probability_independent_case() {
        // Diagonal, mean zero: P = 2^-p exactly.
        let data = Dataset::new(DVector::zeros(1), DMatrix::zeros(1, 3)).unwrap();
        let tau = DVector::from_vec(vec![1.0, 4.0, 0.3]);
        let cond = BetaSampler::new(&data).conditional(1.0, &DVector::zeros(2), &tau).unwrap();
        let mut rng = RngHandle::new(0);
        let v = cond.ln_orthant_probability(200, &mut rng);
        assert!((v - 3.0 * (0.5f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn orthant_probability_correlated_bivariate() {
        // Bivariate zero-mean orthant: 1/4 + asin(ρ)/(2π).
        let data = Dataset::new(DVector::zeros(1), DMatrix::zeros(1, 2)).unwrap();
        let l = DVector::from_vec(vec![-0.7]);
        let tau = DVector::from_vec(vec![1.0, 1.0]);
        let cov = assemble_precision(&l, &tau).unwrap().try_inverse().unwrap();
        let rho = cov[(0, 1)] / (cov[(0, 0)] * cov[(1, 1)]).sqrt();
        let expect = (0.25 + rho.asin() / (2.0 * std::f64::consts::PI)).ln();
        let cond = BetaSampler::new(&data).conditional(1.0, &l, &tau).unwrap();
        let mut rng = RngHandle::new(12);
        let v = cond.ln_orthant_probability(20_000, &mut rng);
        assert!((v - expect).abs() < 0.01, "{v} vs {expect}");
    }
}
