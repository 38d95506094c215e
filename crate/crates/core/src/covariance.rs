//! Structured observation-noise covariance `B(ξ)` and grid selection of ξ.
//!
//! Two observations are correlated with coefficient ξ when they come from
//! the same site in adjacent sampling slots. Data are whitened with the
//! Cholesky factor `C` of `B` (`ỹ = C⁻¹y`, `X̃ = C⁻¹X`) and both engines are
//! run on the whitened problem. Log marginals are reported on the scale of
//! the original data by adding the Jacobian `−ln|C|`, so values for
//! different ξ are comparable.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LsapcError, Result};
use crate::gibbs::{chib_from_chain, run_chain, GibbsSettings, ThetaStarRule};
use crate::model::{Dataset, LsapcConfig};
use crate::vb::run_vb;

pub const DEFAULT_XI_GRID: [f64; 10] = [-0.2, -0.1, 0.0, 0.1, 0.2, 0.3, 0.35, 0.4, 0.45, 0.5];

/// Column order of [`SelectionTable::log_marginals`].
pub const METHODS: [&str; 3] = ["gs_map", "gs_median", "vb"];

#[derive(Clone, Debug)]
pub struct CovarianceModel {
    pub xi: f64,
    pub b: DMatrix<f64>,
    /// Lower-triangular `C` with `C Cᵀ = B`.
    pub chol_b: DMatrix<f64>,
}

impl CovarianceModel {
    pub fn n(&self) -> usize {
        self.b.nrows()
    }

    /// `ln|C| = ½ ln|B|`.
    pub fn log_det_chol(&self) -> f64 {
        self.chol_b.diagonal().iter().map(|v| v.ln()).sum()
    }
}

/// Builds `B(ξ)` from per-observation metadata and factors it.
pub fn build_b(xi: f64, site_id: &[i64], time_index: &[i64]) -> Result<CovarianceModel> {
    if site_id.len() != time_index.len() {
        return Err(LsapcError::DimensionMismatch(format!(
            "site_id has {} entries, time_index {}",
            site_id.len(),
            time_index.len()
        )));
    }
    if !xi.is_finite() {
        return Err(LsapcError::InvalidParameter(format!("xi must be finite, got {xi}")));
    }
    let n = site_id.len();
    let b = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else if site_id[i] == site_id[j] && (time_index[i] - time_index[j]).abs() == 1 {
            xi
        } else {
            0.0
        }
    });
    let chol_b = b
        .clone()
        .cholesky()
        .ok_or(LsapcError::NotPositiveDefinite { xi })?
        .unpack();
    Ok(CovarianceModel { xi, b, chol_b })
}

/// Builds `B(ξ)` from the metadata carried by `data`.
pub fn build_b_for(xi: f64, data: &Dataset) -> Result<CovarianceModel> {
    match (&data.site_id, &data.time_index) {
        (Some(s), Some(t)) => build_b(xi, s, t),
        _ => Err(LsapcError::Format(
            "noise-covariance selection needs site_id and time_index metadata".into(),
        )),
    }
}

/// `ỹ = C⁻¹y`, `X̃ = C⁻¹X` by forward substitution; metadata is kept.
pub fn whiten(data: &Dataset, model: &CovarianceModel) -> Result<Dataset> {
    if model.n() != data.n() {
        return Err(LsapcError::DimensionMismatch(format!(
            "B is {0}x{0} but the dataset has {1} observations",
            model.n(),
            data.n()
        )));
    }
    let solve = |m: &DMatrix<f64>| {
        model
            .chol_b
            .solve_lower_triangular(m)
            .ok_or(LsapcError::NotPositiveDefinite { xi: model.xi })
    };
    let y = solve(&DMatrix::from_column_slice(data.n(), 1, data.y.as_slice()))?;
    let x = solve(&data.x)?;
    Ok(Dataset {
        y: DVector::from_column_slice(y.as_slice()),
        x,
        site_id: data.site_id.clone(),
        time_index: data.time_index.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionTable {
    pub xis: Vec<f64>,
    /// Rows follow `xis`, columns follow [`METHODS`]; `None` marks a failed cell.
    pub log_marginals: Vec<[Option<f64>; 3]>,
    /// `log_marginals` shifted so that each column's maximum is exactly 0.
    pub relative: Vec<[Option<f64>; 3]>,
    /// Row index of each column's maximum.
    pub argmax_per_method: [Option<usize>; 3],
    /// Grid values whose `B` is not positive definite.
    pub dropped: Vec<f64>,
}

impl SelectionTable {
    pub fn from_log_marginals(xis: Vec<f64>, log_marginals: Vec<[Option<f64>; 3]>, dropped: Vec<f64>) -> Self {
        let mut relative = log_marginals.clone();
        let mut argmax_per_method = [None; 3];
        for k in 0..3 {
            let best = log_marginals
                .iter()
                .enumerate()
                .filter_map(|(i, row)| row[k].map(|v| (i, v)))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((i, top)) = best {
                argmax_per_method[k] = Some(i);
                for row in relative.iter_mut() {
                    if let Some(v) = row[k].as_mut() {
                        *v -= top;
                    }
                }
            }
        }
        SelectionTable {
            xis,
            log_marginals,
            relative,
            argmax_per_method,
            dropped,
        }
    }

    /// Selected ξ per method.
    pub fn selected(&self) -> [Option<f64>; 3] {
        self.argmax_per_method.map(|i| i.map(|i| self.xis[i]))
    }
}

/// Evaluates every feasible ξ of the grid with both Chib rules and VB.
///
/// Cell `k` of the feasible grid uses Gibbs seed `gibbs.seed + k`.
pub fn grid_select(
    data: &Dataset,
    xi_grid: &[f64],
    cfg: &LsapcConfig,
    gibbs: &GibbsSettings,
    vb_tol: f64,
    vb_max_iter: usize,
) -> Result<SelectionTable> {
    if xi_grid.is_empty() {
        return Err(LsapcError::InvalidParameter("empty xi grid".into()));
    }
    cfg.validate()?;
    gibbs.validate()?;
    data.validate()?;

    let mut feasible = Vec::new();
    let mut dropped = Vec::new();
    for &xi in xi_grid {
        match build_b_for(xi, data) {
            Ok(model) => feasible.push(model),
            Err(LsapcError::NotPositiveDefinite { xi }) => {
                log::warn!("xi = {xi} gives a B that is not positive definite; dropped");
                dropped.push(xi);
            }
            Err(e) => return Err(e),
        }
    }

    if feasible.is_empty() {
        return Err(LsapcError::NotPositiveDefinite { xi: dropped[0] });
    }

    let rows: Vec<[Option<f64>; 3]> = feasible
        .par_iter()
        .enumerate()
        .map(|(k, model)| evaluate_cell(data, model, cfg, gibbs, k as u64, vb_tol, vb_max_iter))
        .collect();
    let xis = feasible.iter().map(|m| m.xi).collect();
    Ok(SelectionTable::from_log_marginals(xis, rows, dropped))
}

fn evaluate_cell(
    data: &Dataset,
    model: &CovarianceModel,
    cfg: &LsapcConfig,
    gibbs: &GibbsSettings,
    offset: u64,
    vb_tol: f64,
    vb_max_iter: usize,
) -> [Option<f64>; 3] {
    let xi = model.xi;
    let whitened = match whiten(data, model) {
        Ok(d) => d,
        Err(e) => {
            log::warn!("xi = {xi}: whitening failed: {e}");
            return [None; 3];
        }
    };
    let jacobian = -model.log_det_chol();
    let settings = GibbsSettings {
        seed: gibbs.seed.wrapping_add(offset),
        ..gibbs.clone()
    };
    let mut row = [None; 3];
    match run_chain(&whitened, cfg, &settings) {
        Ok(chain) => {
            for (k, rule) in [ThetaStarRule::MaxLogJoint, ThetaStarRule::ComponentwiseMedian]
                .into_iter()
                .enumerate()
            {
                match chib_from_chain(&chain, &whitened, cfg, &settings, rule) {
                    Ok(est) => row[k] = Some(est.log_marginal + jacobian),
                    Err(e) => log::warn!("xi = {xi}: Chib ({rule:?}) failed: {e}"),
                }
            }
        }
        Err(e) => log::warn!("xi = {xi}: Gibbs run failed: {e}"),
    }
    match run_vb(&whitened, cfg, vb_tol, vb_max_iter) {
        Ok(q) => row[2] = q.elbo_trace.last().map(|v| v + jacobian),
        Err(e) => log::warn!("xi = {xi}: VB failed: {e}"),
    }
    row
}
