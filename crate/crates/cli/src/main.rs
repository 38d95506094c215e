//! `lsapc` command-line tool.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lsapc::io::{ExperimentConfig, Task};
use lsapc::sim::{Method, Shape};
use lsapc::{LsapcError, Result};

#[derive(Parser, Debug)]
#[command(name = "lsapc", version, about = "Sparse-and-smooth Bayesian linear regression")]
struct Cli {
    /// JSON experiment config; flags given on the command line override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Master seed for every random stream of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, env = "LSAPC_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset from a synthetic ground truth.
    Simulate(SimulateArgs),
    /// Run the Gibbs sampler and write the chain and summaries.
    FitGibbs(GibbsArgs),
    /// Run variational Bayes and write the posterior.
    FitVb(VbArgs),
    /// Fit the fused-lasso baseline.
    FitFl(FlArgs),
    /// Select the noise correlation ξ on a grid.
    SelectModel(SelectArgs),
    /// Monte Carlo comparison of the estimators.
    Study(StudyArgs),
    /// Collect selection tables and study summaries from earlier runs.
    Report(ReportArgs),
}

#[derive(Args, Debug, Default)]
struct PriorArgs {
    #[arg(long)]
    positivity: bool,
    /// Fix every l_i to this value (0 = ARD, -1 = smoothness prior).
    #[arg(long, allow_hyphen_values = true)]
    fixed_l: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    l0: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct ChainArgs {
    #[arg(long)]
    n_iter: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct VbRunArgs {
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    support: Option<usize>,
    #[arg(long, value_parser = parse_shape)]
    shape: Option<Shape>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long)]
    x_sd: Option<f64>,
    /// Correlate noise with B(ξ); rows are grouped into sites of `slots`.
    #[arg(long, allow_hyphen_values = true)]
    noise_xi: Option<f64>,
    #[arg(long)]
    slots: Option<usize>,
}

#[derive(Args, Debug)]
struct GibbsArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    prior: PriorArgs,
    #[command(flatten)]
    chain: ChainArgs,
    /// Also estimate the log marginal likelihood (both θ* rules).
    #[arg(long)]
    chib: bool,
}

#[derive(Args, Debug)]
struct VbArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    prior: PriorArgs,
    #[command(flatten)]
    vb: VbRunArgs,
}

#[derive(Args, Debug)]
struct FlArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Fixed penalties; giving either one disables cross-validation.
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    positivity: bool,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated ξ values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    xi_grid: Option<Vec<f64>>,
    #[command(flatten)]
    prior: PriorArgs,
    #[command(flatten)]
    chain: ChainArgs,
    #[command(flatten)]
    vb: VbRunArgs,
}

#[derive(Args, Debug)]
struct StudyArgs {
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    n_values: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    support: Option<usize>,
    #[arg(long, value_parser = parse_shape)]
    shape: Option<Shape>,
    #[command(flatten)]
    chain: ChainArgs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Output directories of earlier runs.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

fn parse_shape(s: &str) -> std::result::Result<Shape, String> {
    match s {
        "exp-bell" | "ExpBell" => Ok(Shape::ExpBell),
        "piecewise-constant" | "PiecewiseConstant" => Ok(Shape::PiecewiseConstant),
        _ => Err(format!("unknown shape {s:?} (exp-bell, piecewise-constant)")),
    }
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::ALL
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| format!("unknown method {s:?}"))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_prior(cfg: &mut ExperimentConfig, a: &PriorArgs) {
    if a.positivity {
        cfg.lsapc.positivity = true;
    }
    if a.fixed_l.is_some() {
        cfg.lsapc.fixed_l = a.fixed_l;
    }
    set(&mut cfg.lsapc.l0, a.l0);
}

fn apply_chain(settings: &mut lsapc::GibbsSettings, a: &ChainArgs) {
    set(&mut settings.n_iter, a.n_iter);
    set(&mut settings.burn_in, a.burn_in);
    set(&mut settings.thin, a.thin);
}

fn apply_vb(cfg: &mut ExperimentConfig, a: &VbRunArgs) {
    set(&mut cfg.vb.tol, a.tol);
    set(&mut cfg.vb.max_iter, a.max_iter);
}

/// Merges the config file and flags into the effective config.
fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    if cli.output.is_some() {
        cfg.output_dir = cli.output.clone();
    }
    match &cli.command {
        Command::Simulate(a) => {
            cfg.task = Some(Task::Simulate);
            let s = &mut cfg.simulate;
            set(&mut s.n, a.n);
            set(&mut s.spec.p, a.p);
            set(&mut s.spec.support, a.support);
            set(&mut s.spec.shape, a.shape);
            set(&mut s.spec.amplitude, a.amplitude);
            set(&mut s.noise_sd, a.noise_sd);
            set(&mut s.x_sd, a.x_sd);
            if a.noise_xi.is_some() {
                s.noise_xi = a.noise_xi;
            }
            set(&mut s.slots, a.slots);
        }
        Command::FitGibbs(a) => {
            cfg.task = Some(Task::FitGibbs);
            if a.data.is_some() {
                cfg.dataset_path = a.data.clone();
            }
            apply_prior(&mut cfg, &a.prior);
            apply_chain(&mut cfg.gibbs, &a.chain);
            if a.chib {
                cfg.chib = true;
            }
        }
        Command::FitVb(a) => {
            cfg.task = Some(Task::FitVb);
            if a.data.is_some() {
                cfg.dataset_path = a.data.clone();
            }
            apply_prior(&mut cfg, &a.prior);
            apply_vb(&mut cfg, &a.vb);
        }
        Command::FitFl(a) => {
            cfg.task = Some(Task::FitFl);
            if a.data.is_some() {
                cfg.dataset_path = a.data.clone();
            }
            if a.lambda1.is_some() || a.lambda2.is_some() {
                cfg.fl_cross_validate = false;
            }
            set(&mut cfg.fl.lambda1, a.lambda1);
            set(&mut cfg.fl.lambda2, a.lambda2);
            set(&mut cfg.fl.folds, a.folds);
            if a.positivity {
                cfg.fl.positivity = true;
            }
        }
        Command::SelectModel(a) => {
            cfg.task = Some(Task::SelectModel);
            if a.data.is_some() {
                cfg.dataset_path = a.data.clone();
            }
            set(&mut cfg.xi_grid, a.xi_grid.clone());
            apply_prior(&mut cfg, &a.prior);
            apply_chain(&mut cfg.gibbs, &a.chain);
            apply_vb(&mut cfg, &a.vb);
        }
        Command::Study(a) => {
            cfg.task = Some(Task::Study);
            let s = &mut cfg.study;
            set(&mut s.n_reps, a.reps);
            set(&mut s.n_values, a.n_values.clone());
            set(&mut s.methods, a.methods.clone());
            set(&mut s.spec.p, a.p);
            set(&mut s.spec.support, a.support);
            set(&mut s.spec.shape, a.shape);
            apply_chain(&mut s.gibbs, &a.chain);
        }
        Command::Report(_) => {
            cfg.task = None;
        }
    }
    Ok(cfg.resolved())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| LsapcError::Config(format!("thread pool: {e}")))?;
    }
    let cfg = build_config(&cli)?;
    match &cli.command {
        Command::Report(a) => {
            let out = cfg
                .output_dir
                .clone()
                .ok_or_else(|| LsapcError::Config("report needs --output".into()))?;
            commands::report(&a.inputs, &out, &cfg)
        }
        _ => {
            cfg.validate()?;
            commands::run_task(&cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
