use std::path::{Path, PathBuf};

use lsapc::covariance::{grid_select, METHODS};
use lsapc::fused_lasso::{cross_validate, default_lambda_grid, fit_fused_lasso};
use lsapc::gibbs::{chib_from_chain, map_point_estimate, run_chain, ThetaStarRule};
use lsapc::io::{
    chain_csv, estimate_csv, fmt_f64, fmt_opt, json_bytes, load_dataset, read_selection_csv, selection_csv,
    study_csv, summarize_chain, summarize_vb, summary_csv, timings_csv, vb_json, ExperimentConfig, Manifest,
    OutputDir, Task,
};
use lsapc::sim::{make_ground_truth, run_study, simulate_correlated_dataset, simulate_dataset, summarize, SummaryEntry};
use lsapc::vb::run_vb;
use lsapc::{LsapcError, Result};
use serde::Serialize;

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

#[derive(Serialize)]
struct ChibReport {
    rule: ThetaStarRule,
    log_marginal: f64,
    log_joint_at_star: f64,
    blocks: Vec<(&'static str, f64)>,
}

#[derive(Serialize)]
struct FlReport {
    lambda1: f64,
    lambda2: f64,
    objective: f64,
    iterations: usize,
    converged: bool,
    cross_validated: bool,
}

#[derive(Serialize)]
struct SelectionReport {
    xis: Vec<f64>,
    dropped: Vec<f64>,
    methods: [&'static str; 3],
    selected: [Option<f64>; 3],
}

pub fn run_task(cfg: &ExperimentConfig) -> Result<()> {
    let task = cfg.task.ok_or_else(|| LsapcError::Config("no task given".into()))?;
    let root = cfg
        .output_dir
        .as_deref()
        .ok_or_else(|| LsapcError::Config("output_dir is required".into()))?;
    let data = || {
        let path = cfg
            .dataset_path
            .as_deref()
            .ok_or_else(|| LsapcError::Config("dataset_path is required".into()))?;
        load_dataset(path)
    };
    // Everything is computed before the output directory is touched.
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut dataset_out = None;
    match task {
        Task::Simulate => {
            let s = &cfg.simulate;
            let truth = make_ground_truth(&s.spec)?;
            let d = match s.noise_xi {
                Some(xi) => {
                    simulate_correlated_dataset(&truth, s.n / s.slots, s.slots, xi, s.x_sd, s.noise_sd, cfg.seed)?
                }
                None => simulate_dataset(&truth, s.n, s.x_sd, s.noise_sd, cfg.seed)?,
            };
            let rows = truth
                .iter()
                .enumerate()
                .map(|(i, v)| vec![(i + 1).to_string(), fmt_f64(*v)]);
            files.push(("beta_true.csv".into(), csv_bytes(&["index", "beta_true"], rows)?));
            dataset_out = Some(d);
        }
        Task::FitGibbs => {
            let d = data()?;
            let chain = run_chain(&d, &cfg.lsapc, &cfg.gibbs)?;
            files.push(("chain.csv".into(), chain_csv(&chain)?));
            files.push(("summary.csv".into(), summary_csv(&summarize_chain(&chain)?)?));
            files.push(("estimate.csv".into(), estimate_csv(&map_point_estimate(&chain)?)?));
            if cfg.chib {
                let mut reports = Vec::new();
                for rule in [ThetaStarRule::MaxLogJoint, ThetaStarRule::ComponentwiseMedian] {
                    let est = chib_from_chain(&chain, &d, &cfg.lsapc, &cfg.gibbs, rule)?;
                    reports.push(ChibReport {
                        rule,
                        log_marginal: est.log_marginal,
                        log_joint_at_star: est.log_joint_at_star,
                        blocks: est.blocks,
                    });
                }
                files.push(("marginal_likelihood.json".into(), json_bytes(&reports)?));
            }
        }
        Task::FitVb => {
            let d = data()?;
            let q = run_vb(&d, &cfg.lsapc, cfg.vb.tol, cfg.vb.max_iter)?;
            if !q.converged {
                log::warn!("VB reached max_iter = {} without meeting tol", cfg.vb.max_iter);
            }
            files.push(("posterior.json".into(), vb_json(&q, &cfg.lsapc)?));
            files.push(("summary.csv".into(), summary_csv(&summarize_vb(&q, &cfg.lsapc))?));
            files.push(("estimate.csv".into(), estimate_csv(&q.point_estimate(&cfg.lsapc))?));
        }
        Task::FitFl => {
            let d = data()?;
            let mut fl = cfg.fl.clone();
            if cfg.fl_cross_validate {
                let grid = default_lambda_grid(&d);
                let cv = cross_validate(&d, &grid, &grid, fl.folds, cfg.seed, &fl)?;
                let rows = cv
                    .scores
                    .iter()
                    .map(|(l1, l2, mse)| vec![fmt_f64(*l1), fmt_f64(*l2), fmt_f64(*mse)]);
                files.push(("cv.csv".into(), csv_bytes(&["lambda1", "lambda2", "mse"], rows)?));
                fl = cv.best;
            }
            let fit = fit_fused_lasso(&d, &fl)?;
            files.push(("estimate.csv".into(), estimate_csv(&fit.estimate)?));
            files.push((
                "fl.json".into(),
                json_bytes(&FlReport {
                    lambda1: fl.lambda1,
                    lambda2: fl.lambda2,
                    objective: fit.objective,
                    iterations: fit.iterations,
                    converged: fit.converged,
                    cross_validated: cfg.fl_cross_validate,
                })?,
            ));
        }
        Task::SelectModel => {
            let d = data()?;
            let table = grid_select(&d, &cfg.xi_grid, &cfg.lsapc, &cfg.gibbs, cfg.vb.tol, cfg.vb.max_iter)?;
            files.push(("selection.csv".into(), selection_csv(&table)?));
            files.push((
                "selection.json".into(),
                json_bytes(&SelectionReport {
                    xis: table.xis.clone(),
                    dropped: table.dropped.clone(),
                    methods: METHODS,
                    selected: table.selected(),
                })?,
            ));
        }
        Task::Study => {
            let rows = run_study(&cfg.study)?;
            files.push(("study.csv".into(), study_csv(&rows)?));
            files.push(("timings.csv".into(), timings_csv(&rows)?));
            files.push(("study_summary.json".into(), json_bytes(&summarize(&rows))?));
        }
    }

    let mut out = OutputDir::create(root)?;
    if let Some(d) = &dataset_out {
        out.write_dataset("data", d)?;
    }
    for (name, bytes) in &files {
        out.write(name, bytes)?;
    }
    out.write("config.json", &json_bytes(cfg)?)?;
    let manifest = out.finish(cfg)?;
    println!("{}", manifest.display());
    Ok(())
}

/// Aggregates `selection.csv` and `study_summary.json` of earlier runs.
pub fn report(inputs: &[PathBuf], out_dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let mut selection_rows = Vec::new();
    let mut study_rows = Vec::new();
    for dir in inputs {
        let manifest = Manifest::read(&dir.join("manifest.json"))?;
        let label = dir.display().to_string();
        if manifest.files.iter().any(|f| f == "selection.csv") {
            let t = read_selection_csv(&dir.join("selection.csv"))?;
            let selected = t.argmax_per_method;
            for (k, xi) in t.xis.iter().enumerate() {
                let mut row = vec![label.clone(), fmt_f64(*xi)];
                row.extend(t.log_marginals[k].iter().map(|v| fmt_opt(*v)));
                row.extend(t.relative[k].iter().map(|v| fmt_opt(*v)));
                row.extend(selected.iter().map(|s| (*s == Some(k)).to_string()));
                selection_rows.push(row);
            }
        }
        if manifest.files.iter().any(|f| f == "study_summary.json") {
            let text = std::fs::read_to_string(dir.join("study_summary.json"))?;
            let entries: Vec<SummaryEntry> = serde_json::from_str(&text)?;
            for e in entries {
                study_rows.push(vec![
                    label.clone(),
                    e.n.to_string(),
                    e.method.to_string(),
                    e.count.to_string(),
                    e.failures.to_string(),
                    fmt_opt(e.q25),
                    fmt_opt(e.median),
                    fmt_opt(e.q75),
                ]);
            }
        }
    }
    let mut out = OutputDir::create(out_dir)?;
    out.write(
        "selection_report.csv",
        &csv_bytes(
            &[
                "run",
                "xi",
                "gs_map",
                "gs_median",
                "vb",
                "gs_map_rel",
                "gs_median_rel",
                "vb_rel",
                "gs_map_selected",
                "gs_median_selected",
                "vb_selected",
            ],
            selection_rows,
        )?,
    )?;
    out.write(
        "study_report.csv",
        &csv_bytes(
            &["run", "n", "method", "count", "failures", "q25", "median", "q75"],
            study_rows,
        )?,
    )?;
    let manifest = out.finish(cfg)?;
    println!("{}", manifest.display());
    Ok(())
}
