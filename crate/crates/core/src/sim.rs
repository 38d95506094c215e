//! Synthetic ground truths, data simulation and the method comparison study.

use std::ops::AddAssign;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::build_b;
use crate::error::{LsapcError, Result};
use crate::fused_lasso::{cross_validate, default_lambda_grid, fit_fused_lasso, FlConfig};
use crate::gibbs::diagnostics::quantile;
use crate::gibbs::{map_point_estimate, run_chain, GibbsSettings};
use crate::model::{Dataset, LsapcConfig};
use crate::rand_kernels::RngHandle;
use crate::vb::run_vb;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    /// Exponential rise, exponential decay and a Gaussian bell.
    ExpBell,
    /// One constant block.
    PiecewiseConstant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthSpec {
    pub shape: Shape,
    pub p: usize,
    pub support: usize,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

fn default_amplitude() -> f64 {
    100.0
}

impl GroundTruthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(LsapcError::InvalidParameter("p must be positive".into()));
        }
        if self.support == 0 || self.support > self.p {
            return Err(LsapcError::InvalidParameter(format!(
                "support must be in 1..=p ({}), got {}",
                self.p, self.support
            )));
        }
        if !(self.amplitude > 0.0) || !self.amplitude.is_finite() {
            return Err(LsapcError::InvalidParameter(format!(
                "amplitude must be positive, got {}",
                self.amplitude
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[allow(non_camel_case_types)]
pub enum Method {
    FL,
    LSAPC_GS,
    LSAPC_VB,
    LSAPC_GS_l0,
    LSAPC_VB_l0,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::FL,
        Method::LSAPC_GS,
        Method::LSAPC_VB,
        Method::LSAPC_GS_l0,
        Method::LSAPC_VB_l0,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FL => "FL",
            Method::LSAPC_GS => "LSAPC_GS",
            Method::LSAPC_VB => "LSAPC_VB",
            Method::LSAPC_GS_l0 => "LSAPC_GS_l0",
            Method::LSAPC_VB_l0 => "LSAPC_VB_l0",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub spec: GroundTruthSpec,
    pub n_values: Vec<usize>,
    pub noise_sd: f64,
    pub x_sd: f64,
    pub n_reps: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Prior settings shared by the LS-APC methods; the `_l0` variants
    /// override `fixed_l` with 0.
    pub lsapc: LsapcConfig,
    pub gibbs: GibbsSettings,
    pub vb_tol: f64,
    pub vb_max_iter: usize,
    /// Folds and solver settings for the fused lasso; penalties come from CV.
    pub fl: FlConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            spec: GroundTruthSpec {
                shape: Shape::ExpBell,
                p: 100,
                support: 14,
                amplitude: default_amplitude(),
            },
            n_values: vec![40, 80, 160],
            noise_sd: 200.0,
            x_sd: 2.0,
            n_reps: 10,
            seed: 0,
            methods: Method::ALL.to_vec(),
            lsapc: LsapcConfig::default(),
            gibbs: GibbsSettings::new(5_000, 500, 0),
            vb_tol: 1e-8,
            vb_max_iter: 2_000,
            fl: FlConfig::default(),
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.n_reps == 0 {
            return Err(LsapcError::InvalidParameter("n_reps must be >= 1".into()));
        }
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return Err(LsapcError::InvalidParameter("n_values must be nonempty and positive".into()));
        }
        if self.methods.is_empty() {
            return Err(LsapcError::InvalidParameter("no methods selected".into()));
        }
        for (name, v) in [("noise_sd", self.noise_sd), ("x_sd", self.x_sd)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(LsapcError::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        self.lsapc.validate()?;
        self.gibbs.validate()?;
        self.fl.validate()
    }
}

/// Block sizes splitting `support` into three near-equal parts.
fn thirds(support: usize) -> [usize; 3] {
    let base = support / 3;
    let extra = support % 3;
    [0, 1, 2].map(|i| base + usize::from(i < extra))
}

pub fn make_ground_truth(spec: &GroundTruthSpec) -> Result<DVector<f64>> {
    spec.validate()?;
    let p = spec.p;
    let amp = spec.amplitude;
    let mut beta = DVector::zeros(p);
    match spec.shape {
        Shape::PiecewiseConstant => {
            let start = (p - spec.support) / 2;
            for j in start..start + spec.support {
                beta[j] = amp;
            }
        }
        Shape::ExpBell => {
            let sizes = thirds(spec.support);
            let nominal = [0.1, 0.4, 0.7].map(|f| (f * p as f64).floor() as usize);
            // Keep the blocks in order, separated where room allows, and
            // inside the vector.
            let mut starts = [0usize; 3];
            let mut next_free = 0usize;
            for b in 0..3 {
                let remaining: usize = sizes[b..].iter().sum();
                let latest = p - remaining;
                starts[b] = nominal[b].max(next_free).min(latest);
                next_free = starts[b] + sizes[b] + usize::from(sizes[b] > 0);
            }
            for (b, (&s, &len)) in starts.iter().zip(sizes.iter()).enumerate() {
                for j in 0..len {
                    let t = j as f64;
                    let m = len as f64;
                    let v = match b {
                        0 => amp * (3.0 * (t + 1.0) / m - 3.0).exp(),
                        1 => amp * (-3.0 * t / m).exp(),
                        _ => {
                            let c = (m - 1.0) / 2.0;
                            let width = (m / 4.0).max(0.5);
                            amp * (-0.5 * ((t - c) / width).powi(2)).exp()
                        }
                    };
                    beta[s + j] = v;
                }
            }
        }
    }
    Ok(beta)
}

/// `y = Xβ + e` with `X_ij ~ N(0, x_sd²)` and `e ~ N(0, noise_sd² I)`.
pub fn simulate_dataset(beta_true: &DVector<f64>, n: usize, x_sd: f64, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(LsapcError::InvalidParameter("n must be >= 1".into()));
    }
    let mut rng = RngHandle::new(seed);
    let p = beta_true.len();
    let x = DMatrix::from_fn(n, p, |_, _| rng.normal(0.0, x_sd));
    let noise = DVector::from_fn(n, |_, _| rng.normal(0.0, noise_sd));
    let y = &x * beta_true + noise;
    Dataset::new(y, x)
}

/// Like [`simulate_dataset`] but with noise covariance `noise_sd² B(ξ)`.
///
/// Rows are laid out site by site: observation `i` belongs to site
/// `i / slots` at slot `i % slots`, so `n = sites · slots`.
pub fn simulate_correlated_dataset(
    beta_true: &DVector<f64>,
    sites: usize,
    slots: usize,
    xi: f64,
    x_sd: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    let n = sites * slots;
    if n == 0 {
        return Err(LsapcError::InvalidParameter("sites and slots must be >= 1".into()));
    }
    let site_id: Vec<i64> = (0..n).map(|i| (i / slots) as i64).collect();
    let time_index: Vec<i64> = (0..n).map(|i| (i % slots) as i64).collect();
    // B is block diagonal with one identical block per site.
    let slot_ids: Vec<i64> = (0..slots as i64).collect();
    let block = build_b(xi, &vec![0; slots], &slot_ids)?;
    let mut rng = RngHandle::new(seed);
    let p = beta_true.len();
    let x = DMatrix::from_fn(n, p, |_, _| rng.normal(0.0, x_sd));
    let e = DVector::from_fn(n, |_, _| rng.normal(0.0, noise_sd));
    let mut y = &x * beta_true;
    for s in 0..sites {
        let r = s * slots..(s + 1) * slots;
        let noise = &block.chol_b * e.rows(r.start, slots);
        y.rows_mut(r.start, slots).add_assign(&noise);
    }
    Dataset::with_metadata(y, x, Some(site_id), Some(time_index))
}

pub fn absolute_error(beta_hat: &DVector<f64>, beta_true: &DVector<f64>) -> Result<f64> {
    if beta_hat.len() != beta_true.len() {
        return Err(LsapcError::DimensionMismatch(format!(
            "estimate has {} coefficients, truth {}",
            beta_hat.len(),
            beta_true.len()
        )));
    }
    Ok(beta_hat.iter().zip(beta_true.iter()).map(|(a, b)| (a - b).abs()).sum())
}

/// SplitMix64 finalizer over a base seed and a list of tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut z = base;
    for &t in tags {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(t);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub rep: usize,
    pub n: usize,
    pub method: Method,
    /// `None` when the fit failed.
    pub ae: Option<f64>,
    pub wall_time: f64,
}

/// Seed of the dataset for replicate `rep` at sample size `n`.
pub fn data_seed(cfg: &StudyConfig, rep: usize, n: usize) -> u64 {
    derive_seed(cfg.seed, &[rep as u64, n as u64])
}

fn fit_method(method: Method, data: &Dataset, cfg: &StudyConfig, seed: u64) -> Result<DVector<f64>> {
    let l0 = LsapcConfig {
        fixed_l: Some(0.0),
        ..cfg.lsapc.clone()
    };
    let gibbs = GibbsSettings { seed, ..cfg.gibbs.clone() };
    match method {
        Method::FL => {
            let grid = default_lambda_grid(data);
            let cv = cross_validate(data, &grid, &grid, cfg.fl.folds, seed, &cfg.fl)?;
            Ok(fit_fused_lasso(data, &cv.best)?.estimate.beta_hat)
        }
        Method::LSAPC_GS => Ok(map_point_estimate(&run_chain(data, &cfg.lsapc, &gibbs)?)?.beta_hat),
        Method::LSAPC_GS_l0 => Ok(map_point_estimate(&run_chain(data, &l0, &gibbs)?)?.beta_hat),
        Method::LSAPC_VB => {
            let q = run_vb(data, &cfg.lsapc, cfg.vb_tol, cfg.vb_max_iter)?;
            Ok(q.point_estimate(&cfg.lsapc).beta_hat)
        }
        Method::LSAPC_VB_l0 => {
            let q = run_vb(data, &l0, cfg.vb_tol, cfg.vb_max_iter)?;
            Ok(q.point_estimate(&l0).beta_hat)
        }
    }
}

/// Runs every (rep, n, method) cell in parallel; rows come back ordered by
/// rep, then n in config order, then method in config order.
pub fn run_study(cfg: &StudyConfig) -> Result<Vec<StudyRow>> {
    cfg.validate()?;
    let truth = make_ground_truth(&cfg.spec)?;
    let mut cells = Vec::new();
    for rep in 0..cfg.n_reps {
        for &n in &cfg.n_values {
            for &m in &cfg.methods {
                cells.push((rep, n, m));
            }
        }
    }
    let rows = cells
        .par_iter()
        .map(|&(rep, n, method)| {
            let start = Instant::now();
            let ae = simulate_dataset(&truth, n, cfg.x_sd, cfg.noise_sd, data_seed(cfg, rep, n))
                .and_then(|data| {
                    let seed = derive_seed(cfg.seed, &[rep as u64, n as u64, method.tag()]);
                    fit_method(method, &data, cfg, seed)
                })
                .and_then(|b| absolute_error(&b, &truth));
            let ae = match ae {
                Ok(v) => Some(v),
                Err(e) => {
                    log::warn!("study cell rep={rep} n={n} method={method} failed: {e}");
                    None
                }
            };
            StudyRow {
                rep,
                n,
                method,
                ae,
                wall_time: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub n: usize,
    pub method: Method,
    pub count: usize,
    pub failures: usize,
    pub min: Option<f64>,
    pub q25: Option<f64>,
    pub median: Option<f64>,
    pub q75: Option<f64>,
    pub max: Option<f64>,
}

/// AE quantiles per (n, method), ordered by n then method.
pub fn summarize(rows: &[StudyRow]) -> Vec<SummaryEntry> {
    let mut keys: Vec<(usize, Method)> = rows.iter().map(|r| (r.n, r.method)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(n, method)| {
            let cell: Vec<&StudyRow> = rows.iter().filter(|r| r.n == n && r.method == method).collect();
            let ae: Vec<f64> = cell.iter().filter_map(|r| r.ae).collect();
            let q = |p: f64| (!ae.is_empty()).then(|| quantile(&ae, p));
            SummaryEntry {
                n,
                method,
                count: ae.len(),
                failures: cell.len() - ae.len(),
                min: q(0.0),
                q25: q(0.25),
                median: q(0.5),
                q75: q(0.75),
                max: q(1.0),
            }
        })
        .collect()
}
