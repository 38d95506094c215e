use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Task};
use super::{csv_writer, dataset_files, fmt_f64, fmt_opt};
use crate::covariance::{SelectionTable, METHODS};
use crate::error::{LsapcError, Result};
use crate::gibbs::diagnostics::quantile;
use crate::gibbs::{map_point_estimate, GibbsChain};
use crate::model::{Dataset, LsapcConfig, PointEstimate};
use crate::rand_kernels::{normal_quantile, truncated_normal_quantile};
use crate::sim::StudyRow;
use crate::vb::VbPosterior;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Collects every file written for one run and records them in the manifest.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to the relative path `name` (forward slashes).
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_dataset(&mut self, subdir: &str, data: &Dataset) -> Result<()> {
        for (name, bytes) in dataset_files(data)? {
            self.write(&format!("{subdir}/{name}"), &bytes)?;
        }
        Ok(())
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    /// Writes `manifest.json` and returns its path.
    pub fn finish(self, cfg: &ExperimentConfig) -> Result<PathBuf> {
        let mut files = self.files;
        files.sort();
        let manifest = Manifest {
            tool: "lsapc".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            task: cfg.task,
            seed: cfg.seed,
            config_sha256: cfg.hash(),
            config: cfg.clone(),
            files,
        };
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, json_bytes(&manifest)?)?;
        Ok(path)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub task: Option<Task>,
    pub seed: u64,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    /// Paths relative to the manifest's directory, sorted.
    pub files: Vec<String>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

/// One row per retained sample: `β…, σ, τ…, l…, ψ…, log_joint`.
pub fn chain_csv(chain: &GibbsChain) -> Result<Vec<u8>> {
    let first = chain.samples.first().ok_or(LsapcError::EmptyChain)?;
    let p = first.beta.len();
    let q = first.l.len();
    let mut header: Vec<String> = (1..=p).map(|i| format!("beta{i}")).collect();
    header.push("sigma".into());
    header.extend((1..=p).map(|i| format!("tau{i}")));
    header.extend((1..=q).map(|i| format!("l{i}")));
    header.extend((1..=q).map(|i| format!("psi{i}")));
    header.push("log_joint".into());
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(&header)?;
        for (s, lj) in chain.samples.iter().zip(&chain.log_joint_trace) {
            let row = s
                .beta
                .iter()
                .chain(std::iter::once(&s.sigma))
                .chain(s.tau.iter())
                .chain(s.l.iter())
                .chain(s.psi.iter())
                .chain(std::iter::once(lj))
                .map(|v| fmt_f64(*v));
            w.write_record(row)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

/// All shaping parameters of the variational posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VbExport {
    pub mu: Vec<f64>,
    /// Row-major Σ.
    pub cov: Vec<Vec<f64>>,
    pub gamma_sigma: f64,
    pub delta_sigma: f64,
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
    pub pi: Vec<f64>,
    /// `null` when `l` is fixed.
    pub rho: Vec<Option<f64>>,
    pub lambda: Vec<f64>,
    pub omega: Vec<f64>,
    pub beta_mean: Vec<f64>,
    pub elbo: Option<f64>,
    pub elbo_trace: Vec<f64>,
    pub converged: bool,
}

impl VbExport {
    pub fn new(q: &VbPosterior, cfg: &LsapcConfig) -> Self {
        VbExport {
            mu: q.mu.iter().cloned().collect(),
            cov: q.cov.row_iter().map(|r| r.iter().cloned().collect()).collect(),
            gamma_sigma: q.gamma_sigma,
            delta_sigma: q.delta_sigma,
            gamma: q.gamma.iter().cloned().collect(),
            delta: q.delta.iter().cloned().collect(),
            pi: q.pi.iter().cloned().collect(),
            rho: q.rho.iter().map(|&r| r.is_finite().then_some(r)).collect(),
            lambda: q.lambda.iter().cloned().collect(),
            omega: q.omega.iter().cloned().collect(),
            beta_mean: q.beta_mean(cfg).iter().cloned().collect(),
            elbo: q.elbo_trace.last().copied(),
            elbo_trace: q.elbo_trace.clone(),
            converged: q.converged,
        }
    }
}

pub fn vb_json(q: &VbPosterior, cfg: &LsapcConfig) -> Result<Vec<u8>> {
    json_bytes(&VbExport::new(q, cfg))
}

/// One row of the posterior summary table (1-based `index`).
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub index: usize,
    pub map: f64,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
    /// Estimate of `l_index`; absent for the last coefficient.
    pub l_estimate: Option<f64>,
}

pub fn summarize_chain(chain: &GibbsChain) -> Result<Vec<SummaryRow>> {
    let map = map_point_estimate(chain)?;
    let p = map.beta_hat.len();
    let len = chain.len() as f64;
    Ok((0..p)
        .map(|i| {
            let draws: Vec<f64> = chain.samples.iter().map(|s| s.beta[i]).collect();
            let l_estimate = (i + 1 < p).then(|| chain.samples.iter().map(|s| s.l[i]).sum::<f64>() / len);
            SummaryRow {
                index: i + 1,
                map: map.beta_hat[i],
                mean: draws.iter().sum::<f64>() / len,
                q025: quantile(&draws, 0.025),
                q975: quantile(&draws, 0.975),
                l_estimate,
            }
        })
        .collect())
}

/// Marginal summaries of `q_β`; in positivity mode the marginals are the
/// truncated Gaussians and `map` is their mode.
pub fn summarize_vb(q: &VbPosterior, cfg: &LsapcConfig) -> Vec<SummaryRow> {
    let p = q.p();
    let mean = q.beta_mean(cfg);
    (0..p)
        .map(|i| {
            let (m, v) = (q.mu[i], q.cov[(i, i)]);
            let (map, q025, q975) = if cfg.positivity {
                (
                    m.max(0.0),
                    truncated_normal_quantile(m, v, 0.025),
                    truncated_normal_quantile(m, v, 0.975),
                )
            } else {
                let z = normal_quantile(0.975);
                (m, m - z * v.sqrt(), m + z * v.sqrt())
            };
            let l_estimate = (i + 1 < p).then(|| cfg.fixed_l.unwrap_or(q.pi[i]));
            SummaryRow {
                index: i + 1,
                map,
                mean: mean[i],
                q025,
                q975,
                l_estimate,
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(["index", "map", "mean", "q2.5", "q97.5", "l_estimate"])?;
        for r in rows {
            w.write_record([
                r.index.to_string(),
                fmt_f64(r.map),
                fmt_f64(r.mean),
                fmt_f64(r.q025),
                fmt_f64(r.q975),
                fmt_opt(r.l_estimate),
            ])?;
        }
        w.flush()?;
    }
    Ok(buf)
}

/// `index, beta_hat` for a point estimate.
pub fn estimate_csv(est: &PointEstimate) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(["index", "beta_hat"])?;
        for (i, v) in est.beta_hat.iter().enumerate() {
            w.write_record([(i + 1).to_string(), fmt_f64(*v)])?;
        }
        w.flush()?;
    }
    Ok(buf)
}

fn selection_header() -> Vec<String> {
    let mut h = vec!["xi".to_string()];
    h.extend(METHODS.iter().map(|m| m.to_string()));
    h.extend(METHODS.iter().map(|m| format!("{m}_rel")));
    h
}

/// Absolute and relative log marginals per ξ; failed cells are empty.
pub fn selection_csv(table: &SelectionTable) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(selection_header())?;
        for (k, xi) in table.xis.iter().enumerate() {
            let mut row = vec![fmt_f64(*xi)];
            row.extend(table.log_marginals[k].iter().map(|v| fmt_opt(*v)));
            row.extend(table.relative[k].iter().map(|v| fmt_opt(*v)));
            w.write_record(row)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

pub fn read_selection_csv(path: &Path) -> Result<SelectionTable> {
    let mut rdr = csv::ReaderBuilder::new().from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header != selection_header() {
        return Err(LsapcError::Format(format!("{}: not a selection table", path.display())));
    }
    let cell = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| LsapcError::Format(format!("{}: bad number {s:?}", path.display())))
        }
    };
    let mut xis = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        xis.push(cell(&rec[0])?.ok_or_else(|| LsapcError::Format("missing xi".into()))?);
        rows.push([cell(&rec[1])?, cell(&rec[2])?, cell(&rec[3])?]);
    }
    Ok(SelectionTable::from_log_marginals(xis, rows, Vec::new()))
}

/// Long-format study results without timings.
pub fn study_csv(rows: &[StudyRow]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(["rep", "n", "method", "ae"])?;
        for r in rows {
            w.write_record([r.rep.to_string(), r.n.to_string(), r.method.to_string(), fmt_opt(r.ae)])?;
        }
        w.flush()?;
    }
    Ok(buf)
}

/// Wall-clock seconds per study cell; kept apart so result files stay
/// reproducible.
pub fn timings_csv(rows: &[StudyRow]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(["rep", "n", "method", "wall_time"])?;
        for r in rows {
            w.write_record([
                r.rep.to_string(),
                r.n.to_string(),
                r.method.to_string(),
                fmt_f64(r.wall_time),
            ])?;
        }
        w.flush()?;
    }
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::{run_chain, GibbsSettings};
    use crate::rand_kernels::RngHandle;
    use crate::sim::Method;
    use crate::vb::run_vb;
    use nalgebra::{DMatrix, DVector};

    fn data() -> Dataset {
        let mut rng = RngHandle::new(1);
        let x = DMatrix::from_fn(15, 3, |_, _| rng.standard_normal());
        let y = &x * DVector::from_vec(vec![1.0, 1.0, 0.0]) + DVector::from_fn(15, |_, _| rng.normal(0.0, 0.3));
        Dataset::new(y, x).unwrap()
    }

    #[test]
    fn empty_chain_writes_nothing() {
        let chain = GibbsChain {
            samples: vec![],
            log_joint_trace: vec![],
            settings: GibbsSettings::default(),
        };
        assert!(matches!(chain_csv(&chain), Err(LsapcError::EmptyChain)));
        assert!(matches!(summarize_chain(&chain), Err(LsapcError::EmptyChain)));
    }

    #[test]
    fn chain_layout() {
        let d = data();
        let chain = run_chain(&d, &LsapcConfig::default(), &GibbsSettings::new(50, 10, 3)).unwrap();
        let text = String::from_utf8(chain_csv(&chain).unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "beta1,beta2,beta3,sigma,tau1,tau2,tau3,l1,l2,psi1,psi2,log_joint"
        );
        assert_eq!(lines.count(), 40);
        assert!(!text.contains('\r'));
        let rows = summarize_chain(&chain).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.q025 <= r.mean && r.mean <= r.q975));
        assert!(rows[2].l_estimate.is_none());
        let s = String::from_utf8(summary_csv(&rows).unwrap()).unwrap();
        assert!(s.starts_with("index,map,mean,q2.5,q97.5,l_estimate\n"));
        assert!(s.lines().last().unwrap().ends_with(','));
    }

    #[test]
    fn vb_export_round_trips_through_json() {
        let d = data();
        let cfg = LsapcConfig {
            fixed_l: Some(0.0),
            ..Default::default()
        };
        let q = run_vb(&d, &cfg, 1e-8, 200).unwrap();
        let bytes = vb_json(&q, &cfg).unwrap();
        let back: VbExport = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(back, VbExport::new(&q, &cfg));
        assert!(back.rho.iter().all(|r| r.is_none()));
        let rows = summarize_vb(&q, &cfg);
        assert_eq!(rows[0].l_estimate, Some(0.0));
        assert!(rows.iter().all(|r| r.q025 < r.mean && r.mean < r.q975));
    }

    #[test]
    fn selection_round_trip() {
        let t = SelectionTable::from_log_marginals(
            vec![0.0, 0.1],
            vec![[Some(-3.25), None, Some(-1.0)], [Some(-2.0), Some(-7.0), Some(-1.5)]],
            vec![],
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("selection.csv");
        fs::write(&path, selection_csv(&t).unwrap()).unwrap();
        assert_eq!(read_selection_csv(&path).unwrap(), t);
    }

    #[test]
    fn manifest_lists_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.write_dataset("data", &data()).unwrap();
        let rows = vec![StudyRow {
            rep: 0,
            n: 10,
            method: Method::FL,
            ae: Some(1.5),
            wall_time: 0.25,
        }];
        out.write("study.csv", &study_csv(&rows).unwrap()).unwrap();
        out.write("timings.csv", &timings_csv(&rows).unwrap()).unwrap();
        let cfg = ExperimentConfig::default();
        let path = out.finish(&cfg).unwrap();
        let m = Manifest::read(&path).unwrap();
        assert_eq!(m.files, vec!["data/X.csv", "data/y.csv", "study.csv", "timings.csv"]);
        for f in &m.files {
            assert!(dir.path().join(f).is_file());
        }
        assert_eq!(m.config_sha256, cfg.hash());
        let study = fs::read_to_string(dir.path().join("study.csv")).unwrap();
        assert_eq!(study, "rep,n,method,ae\n0,10,FL,1.5000000000000000e0\n");
    }
}
