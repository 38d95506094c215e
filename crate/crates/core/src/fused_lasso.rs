//! Fused-lasso baseline.
//!
//! Minimizes `‖y − Xβ‖² + λ1 Σ|β_j| + λ2 Σ|β_{j+1} − β_j|` by accelerated
//! proximal gradient with function-value restart. The prox of the combined
//! penalty is soft-thresholding applied after the exact 1-D total-variation
//! prox, which is valid for this penalty pair.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LsapcError, Result};
use crate::model::{Dataset, EstimateSource, PointEstimate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub max_iter: usize,
    /// Relative objective change at which iteration stops.
    pub tol: f64,
    pub folds: usize,
    /// Project onto `β ≥ 0` after every prox step.
    pub positivity: bool,
}

impl Default for FlConfig {
    fn default() -> Self {
        FlConfig {
            lambda1: 1.0,
            lambda2: 1.0,
            max_iter: 20_000,
            tol: 1e-10,
            folds: 5,
            positivity: false,
        }
    }
}

impl FlConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(LsapcError::InvalidParameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.max_iter == 0 {
            return Err(LsapcError::InvalidParameter("max_iter must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(LsapcError::InvalidParameter(format!("tol must be positive, got {}", self.tol)));
        }
        if self.folds < 2 {
            return Err(LsapcError::InvalidParameter(format!("folds must be >= 2, got {}", self.folds)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlFit {
    pub estimate: PointEstimate,
    pub objective: f64,
    pub iterations: usize,
    /// False when `max_iter` was reached before the tolerance.
    pub converged: bool,
    /// Objective after every accepted iteration, starting with the initializer.
    pub objective_trace: Vec<f64>,
}

/// Exact minimizer of `½‖x − z‖² + w Σ|x_{j+1} − x_j|`.
///
/// Condat's direct algorithm: a single forward pass that maintains the
/// admissible range of the current segment and emits segments when the
/// taut string is forced to bend.
pub fn tv_prox(z: &[f64], w: f64) -> Vec<f64> {
    let n = z.len();
    if n == 0 {
        return Vec::new();
    }
    if !(w > 0.0) {
        return z.to_vec();
    }
    let mut x = vec![0.0; n];
    let (mut k, mut k0, mut kplus, mut kminus) = (0usize, 0usize, 0usize, 0usize);
    let mut umin = w;
    let mut umax = -w;
    let mut vmin = z[0] - w;
    let mut vmax = z[0] + w;
    let two_w = 2.0 * w;

    let fill = |x: &mut [f64], k0: &mut usize, last: usize, v: f64| {
        while *k0 <= last {
            x[*k0] = v;
            *k0 += 1;
        }
    };

    loop {
        while k == n - 1 {
            if umin < 0.0 {
                fill(&mut x, &mut k0, kminus, vmin);
                if k0 >= n {
                    return x;
                }
                k = k0;
                kminus = k0;
                vmin = z[k0];
                umin = w;
                umax = vmin + umin - vmax;
            } else if umax > 0.0 {
                fill(&mut x, &mut k0, kplus, vmax);
                if k0 >= n {
                    return x;
                }
                k = k0;
                kplus = k0;
                vmax = z[k0];
                umax = -w;
                umin = vmax + umax - vmin;
            } else {
                vmin += umin / (k - k0 + 1) as f64;
                fill(&mut x, &mut k0, k, vmin);
                return x;
            }
        }
        umin += z[k + 1] - vmin;
        if umin < -w {
            fill(&mut x, &mut k0, kminus, vmin);
            k = k0;
            kplus = k0;
            kminus = k0;
            vmin = z[k0];
            vmax = vmin + two_w;
            umin = w;
            umax = -w;
            continue;
        }
        umax += z[k + 1] - vmax;
        if umax > w {
            fill(&mut x, &mut k0, kplus, vmax);
            k = k0;
            kplus = k0;
            kminus = k0;
            vmax = z[k0];
            vmin = vmax - two_w;
            umin = w;
            umax = -w;
        } else {
            k += 1;
            if umin >= w {
                kminus = k;
                vmin += (umin - w) / (kminus - k0 + 1) as f64;
                umin = w;
            }
            if umax <= -w {
                kplus = k;
                vmax += (umax + w) / (kplus - k0 + 1) as f64;
                umax = -w;
            }
        }
    }
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

pub fn total_variation(beta: &[f64]) -> f64 {
    beta.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

pub fn fl_objective(data: &Dataset, beta: &DVector<f64>, lambda1: f64, lambda2: f64) -> f64 {
    data.rss(beta) + lambda1 * beta.iter().map(|v| v.abs()).sum::<f64>() + lambda2 * total_variation(beta.as_slice())
}

/// Largest eigenvalue of `A` (symmetric PSD) by power iteration.
fn power_iteration(a: &DMatrix<f64>) -> f64 {
    let p = a.nrows();
    let mut v = DVector::from_fn(p, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..2_000 {
        let av = a * &v;
        let norm = av.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&av);
        v = av / norm;
        if (next - lambda).abs() <= 1e-12 * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Fits the fused lasso for fixed penalties.
pub fn fit_fused_lasso(data: &Dataset, cfg: &FlConfig) -> Result<FlFit> {
    cfg.validate()?;
    data.validate()?;
    let p = data.p();
    let xtx = data.x.tr_mul(&data.x);
    let xty = data.x.tr_mul(&data.y);
    // Power iteration approaches λmax from below; the margin keeps 1/L a
    // valid step.
    let lip = 2.0 * power_iteration(&xtx) * 1.01;
    let objective = |b: &DVector<f64>| fl_objective(data, b, cfg.lambda1, cfg.lambda2);

    let project = |mut b: DVector<f64>| {
        if cfg.positivity {
            b.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        b
    };
    let zero = DVector::zeros(p);
    let ridge = {
        let mut a = xtx.clone();
        for i in 0..p {
            a[(i, i)] += 1.0;
        }
        project(a.cholesky().map(|c| c.solve(&xty)).unwrap_or_else(|| zero.clone()))
    };
    let mut x = if objective(&ridge) < objective(&zero) { ridge } else { zero };
    let mut f_x = objective(&x);
    let mut trace = vec![f_x];
    if lip == 0.0 {
        // X = 0: only the penalty remains and β = 0 minimizes it.
        let b = DVector::zeros(p);
        let f = objective(&b);
        return Ok(FlFit {
            estimate: estimate(b),
            objective: f,
            iterations: 0,
            converged: true,
            objective_trace: vec![f],
        });
    }
    let step = 1.0 / lip;
    let prox_step = |v: &DVector<f64>| {
        let grad = 2.0 * (&xtx * v - &xty);
        let z = v - step * grad;
        let tv = tv_prox(z.as_slice(), step * cfg.lambda2);
        let mut out = DVector::from_iterator(p, tv.into_iter().map(|u| soft_threshold(u, step * cfg.lambda1)));
        if cfg.positivity {
            out.iter_mut().for_each(|u| *u = u.max(0.0));
        }
        out
    };

    let mut momentum = x.clone();
    let mut theta = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        let mut next = prox_step(&momentum);
        let mut f_next = objective(&next);
        if f_next > f_x {
            theta = 1.0;
            next = prox_step(&x);
            f_next = objective(&next);
            if f_next > f_x {
                // Rounding at the optimum.
                next = x.clone();
                f_next = f_x;
            }
        }
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        momentum = &next + ((theta - 1.0) / theta_next) * (&next - &x);
        theta = theta_next;
        let rel = (f_x - f_next) / f_x.abs().max(f64::MIN_POSITIVE);
        x = next;
        f_x = f_next;
        trace.push(f_x);
        if rel < cfg.tol && (&momentum - &x).norm() <= 1e-9 * (1.0 + x.norm()) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("fused lasso stopped at max_iter = {} before reaching tol", cfg.max_iter);
    }
    Ok(FlFit {
        estimate: estimate(x),
        objective: f_x,
        iterations,
        converged,
        objective_trace: trace,
    })
}

fn estimate(beta: DVector<f64>) -> PointEstimate {
    PointEstimate {
        beta_hat: beta,
        log_joint_at_max: None,
        source: EstimateSource::FusedLasso,
    }
}

/// 8 log-spaced values over `[1e−3, 1e2]·‖Xᵀy‖∞ / n`.
pub fn default_lambda_grid(data: &Dataset) -> Vec<f64> {
    let scale = data.x.tr_mul(&data.y).amax() / data.n() as f64;
    let scale = if scale > 0.0 { scale } else { 1.0 };
    (0..8)
        .map(|i| scale * 10f64.powf(-3.0 + 5.0 * i as f64 / 7.0))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvOutcome {
    pub best: FlConfig,
    /// `(λ1, λ2, mean held-out MSE)` in grid order, λ2 varying fastest.
    pub scores: Vec<(f64, f64, f64)>,
}

/// Fold label of each row: a seeded permutation dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut label = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        label[row] = pos % folds;
    }
    label
}

fn subset(data: &Dataset, rows: &[usize]) -> Dataset {
    Dataset {
        y: DVector::from_iterator(rows.len(), rows.iter().map(|&r| data.y[r])),
        x: data.x.select_rows(rows),
        site_id: None,
        time_index: None,
    }
}

/// K-fold cross-validation of `(λ1, λ2)` by held-out mean squared error.
///
/// Ties go to the earliest grid cell; all other fields of `base` are kept.
pub fn cross_validate(
    data: &Dataset,
    lambda1_grid: &[f64],
    lambda2_grid: &[f64],
    folds: usize,
    seed: u64,
    base: &FlConfig,
) -> Result<CvOutcome> {
    if lambda1_grid.is_empty() || lambda2_grid.is_empty() {
        return Err(LsapcError::InvalidParameter("empty penalty grid".into()));
    }
    if folds < 2 || data.n() < folds {
        return Err(LsapcError::InvalidParameter(format!(
            "need 2 <= folds <= n, got folds = {folds}, n = {}",
            data.n()
        )));
    }
    let labels = fold_assignment(data.n(), folds, seed);
    let splits: Vec<(Dataset, Dataset)> = (0..folds)
        .map(|f| {
            let train: Vec<usize> = (0..data.n()).filter(|&i| labels[i] != f).collect();
            let test: Vec<usize> = (0..data.n()).filter(|&i| labels[i] == f).collect();
            (subset(data, &train), subset(data, &test))
        })
        .collect();
    let cells: Vec<(f64, f64)> = lambda1_grid
        .iter()
        .flat_map(|&l1| lambda2_grid.iter().map(move |&l2| (l1, l2)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..folds).map(move |f| (c, f))).collect();
    let errors: Vec<Result<(f64, usize)>> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let cfg = FlConfig {
                lambda1: cells[c].0,
                lambda2: cells[c].1,
                folds,
                ..base.clone()
            };
            let (train, test) = &splits[f];
            let fit = fit_fused_lasso(train, &cfg)?;
            Ok((test.rss(&fit.estimate.beta_hat), test.n()))
        })
        .collect();
    let mut sse = vec![0.0; cells.len()];
    let mut count = vec![0usize; cells.len()];
    for (&(c, _), r) in jobs.iter().zip(errors) {
        let (e, m) = r?;
        sse[c] += e;
        count[c] += m;
    }
    let scores: Vec<(f64, f64, f64)> = cells
        .iter()
        .enumerate()
        .map(|(c, &(l1, l2))| (l1, l2, sse[c] / count[c] as f64))
        .collect();
    let mut best = 0;
    for (c, s) in scores.iter().enumerate() {
        if s.2 < scores[best].2 {
            best = c;
        }
    }
    Ok(CvOutcome {
        best: FlConfig {
            lambda1: scores[best].0,
            lambda2: scores[best].1,
            folds,
            ..base.clone()
        },
        scores,
    })
}
