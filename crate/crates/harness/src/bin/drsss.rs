use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use drsss::kernels::{gram_linear, gram_rbf, write_binary, write_csv, Bandwidth, RbfMode};
use drsss::solver::train_outcome;
use drsss::{screen_dr, screen_per_weight, SolverConfig, SweepOrder};
use drsss_harness::data::{dataset_name, load_problem, standardize, KernelSpec, Preprocess, Problem};
use drsss_harness::experiments::{
    default_a_grid, default_lambda_grid, experiment_cost, experiment_shift, sweep_screening_rate,
};
use drsss_harness::libsvm::parse_libsvm;
use drsss_harness::output::{config_hash, write_csv as write_rows, write_sidecar};
use drsss_harness::weights::ball_from_class_shift;
use nalgebra::DVector;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "drsss", version, about = "Distributionally robust safe sample screening experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Screening rate over a grid of lambda and class-shift a.
    Sweep(SweepArgs),
    /// Screening cost: per-weight screening alone vs after a DR pre-screen.
    Cost(CostArgs),
    /// Model parameter shifts after DRSSS, random and naive removal.
    Shift(ShiftArgs),
    /// Train once and screen at a single (lambda, a).
    Screen(ScreenArgs),
    /// Compute and export a Gram matrix.
    Gram(GramArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum CliRbfMode {
    Squared,
    Unsquared,
}

impl From<CliRbfMode> for RbfMode {
    fn from(m: CliRbfMode) -> Self {
        match m {
            CliRbfMode::Squared => RbfMode::Squared,
            CliRbfMode::Unsquared => RbfMode::Unsquared,
        }
    }
}

#[derive(Args, Clone, Serialize)]
struct Common {
    /// LIBSVM-format dataset.
    #[arg(long)]
    data: PathBuf,
    /// linear | rbf | precomputed:<path>
    #[arg(long, default_value = "linear")]
    kernel: String,
    #[arg(long, value_enum, default_value_t = CliRbfMode::Squared)]
    rbf_mode: CliRbfMode,
    /// none | standardize
    #[arg(long, default_value = "standardize")]
    preprocess: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Relative duality-gap tolerance for training.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// KKT tolerance for training (0 disables the KKT stopping check).
    #[arg(long, default_value_t = 1e-6)]
    kkt_tol: f64,
    #[arg(long, default_value_t = drsss_harness::experiments::HARNESS_MAX_EPOCHS)]
    max_epochs: usize,
}

impl Common {
    fn solver(&self) -> SolverConfig {
        SolverConfig {
            rel_gap_tol: self.tol,
            kkt_tol: (self.kkt_tol > 0.0).then_some(self.kkt_tol),
            max_epochs: self.max_epochs,
            sweep_order: SweepOrder::Shuffled { seed: self.seed },
        }
    }

    fn kernel(&self) -> Result<KernelSpec> {
        KernelSpec::parse(&self.kernel, self.rbf_mode.into()).map_err(anyhow::Error::msg)
    }

    fn load(&self) -> Result<Problem> {
        let pre: Preprocess = self.preprocess.parse().map_err(anyhow::Error::msg)?;
        load_problem(&self.data, &self.kernel()?, pre)
    }

    fn output_path(&self, experiment: &str, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let kernel = self.kernel()?.mode_label();
        Ok(self.out.join(format!("{experiment}_{name}_{kernel}.csv")))
    }
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("bad grid value {t:?}")))
        .collect::<Result<Vec<_>>>()?;
    if v.is_empty() {
        bail!("empty grid");
    }
    Ok(v)
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated lambdas (default n * 10^(-k/2), k = 0..6).
    #[arg(long)]
    lambda_grid: Option<String>,
    /// Comma-separated a values (default 0.95, 0.96, ..., 1.05).
    #[arg(long)]
    a_grid: Option<String>,
}

#[derive(Args)]
struct CostArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 0.95)]
    a: f64,
    /// Random weights (default 1000; 10000 with --paper-scale).
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Args)]
struct ShiftArgs {
    #[command(flatten)]
    common: Common,
    /// Defaults to n.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0.99)]
    a: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 10)]
    random_reps: usize,
}

#[derive(Args)]
struct ScreenArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    a: f64,
}

#[derive(Args)]
struct GramArgs {
    #[arg(long)]
    data: PathBuf,
    /// linear | rbf
    #[arg(long, default_value = "rbf")]
    kernel: String,
    #[arg(long, value_enum, default_value_t = CliRbfMode::Squared)]
    rbf_mode: CliRbfMode,
    #[arg(long, default_value = "standardize")]
    preprocess: String,
    /// Output file; `.csv` writes text, anything else the binary GRAM format.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct Meta<'a, C: Serialize> {
    experiment: &'a str,
    dataset: &'a str,
    seed: u64,
    config_hash: &'a str,
    config: &'a C,
    kernel: String,
    rbf_zeta: Option<f64>,
    psd_shift: f64,
    label_mapping: Option<String>,
    warnings: &'a [String],
    diagnostics: serde_json::Value,
}

fn meta<'a, C: Serialize>(
    experiment: &'a str,
    p: &'a Problem,
    common: &Common,
    hash: &'a str,
    config: &'a C,
    diagnostics: serde_json::Value,
) -> Meta<'a, C> {
    Meta {
        experiment,
        dataset: &p.name,
        seed: common.seed,
        config_hash: hash,
        config,
        kernel: p.kernel.to_string(),
        rbf_zeta: p.rbf_zeta,
        psd_shift: p.psd_shift,
        label_mapping: p.raw.mapping.map(|m| m.to_string()),
        warnings: &p.warnings,
        diagnostics,
    }
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let c = &args.common;
    let p = c.load()?;
    let lambdas = match &args.lambda_grid {
        Some(s) => parse_grid(s)?,
        None => default_lambda_grid(p.n()),
    };
    let a_grid = match &args.a_grid {
        Some(s) => parse_grid(s)?,
        None => default_a_grid(),
    };
    let cfg = serde_json::json!({"common": c, "lambdas": lambdas, "a_grid": a_grid});
    let hash = config_hash(&cfg)?;
    let rows = sweep_screening_rate(&p, &lambdas, &a_grid, &c.solver(), c.seed, &hash)?;
    let path = c.output_path("sweep", &p.name)?;
    write_rows(&path, &rows)?;
    let diag = serde_json::json!({
        "unconverged_rows": rows.iter().filter(|r| !r.converged).count(),
        "max_relative_gap": rows.iter().map(|r| r.relative_gap).fold(0.0, f64::max),
    });
    write_sidecar(&path, &meta("sweep", &p, c, &hash, &cfg, diag))?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

fn run_cost(args: CostArgs) -> Result<()> {
    let c = &args.common;
    let p = c.load()?;
    let trials = args.trials.unwrap_or(if args.paper_scale { 10_000 } else { 1_000 });
    let cfg = serde_json::json!({"common": c, "lambda": args.lambda, "a": args.a, "trials": trials});
    let hash = config_hash(&cfg)?;
    let row = experiment_cost(&p, args.lambda, args.a, trials, &c.solver(), c.seed, &hash)?;
    let path = c.output_path("cost", &p.name)?;
    write_rows(&path, std::slice::from_ref(&row))?;
    let diag = serde_json::json!({"converged": row.converged, "gap_at_center": row.gap_at_center,
        "mismatched_trials": row.mismatched_trials});
    write_sidecar(&path, &meta("cost", &p, c, &hash, &cfg, diag))?;
    println!(
        "{}: DRSSS remained {:.1}%, ISSS remained {:.1}%, ISSS {:.3}s vs DRSSS+ISSS {:.3}s",
        p.name,
        100.0 * row.drsss_remained,
        100.0 * row.isss_remained,
        row.isss_seconds,
        row.drsss_isss_seconds
    );
    if row.mismatched_trials > 0 {
        bail!("{} trials had different kept sets between strategies", row.mismatched_trials);
    }
    Ok(())
}

fn run_shift(args: ShiftArgs) -> Result<()> {
    let c = &args.common;
    let p = c.load()?;
    let lambda = args.lambda.unwrap_or(p.n() as f64);
    let cfg = serde_json::json!({"common": c, "lambda": lambda, "a": args.a, "trials": args.trials,
        "random_reps": args.random_reps});
    let hash = config_hash(&cfg)?;
    let rep = experiment_shift(&p, lambda, args.a, args.trials, args.random_reps, &c.solver(), c.seed, &hash)?;
    let path = c.output_path("shift", &p.name)?;
    write_rows(&path, &rep.rows)?;
    let diag = serde_json::json!({"worst_relative_gap": rep.rows.first().map(|r| r.worst_relative_gap)});
    write_sidecar(&path, &meta("shift", &p, c, &hash, &cfg, diag))?;
    for r in &rep.rows {
        println!(
            "{:8} remained {:5.1}%  shift {:.2e} ± {:.2e} (max {:.2e})",
            format!("{:?}", r.strategy),
            100.0 * r.remained,
            r.mean_shift,
            r.std_shift,
            r.max_shift
        );
    }
    Ok(())
}

fn run_screen(args: ScreenArgs) -> Result<()> {
    let c = &args.common;
    let p = c.load()?;
    let ds = &p.dataset;
    let w = DVector::from_element(ds.n(), 1.0);
    let out = train_outcome(ds, &w, args.lambda, &c.solver())?;
    let m = out.model;
    let pw = screen_per_weight(ds, &m)?;
    let ball = ball_from_class_shift(ds.labels(), args.a)?;
    let dr = screen_dr(ds, &m, &ball)?;
    println!("dataset {} (n = {}), kernel {}", p.name, ds.n(), p.kernel);
    println!(
        "trained: epochs {}, relative gap {:.3e}, converged {}",
        m.epochs,
        m.relative_gap(),
        out.converged
    );
    println!("per-weight: rate {:.4}, r = {:.6e}", pw.rate(), pw.radius);
    println!("DR (a = {}, S = {:.6}): rate {:.4}, R = {:.6e}", args.a, ball.radius, dr.rate(), dr.radius);
    Ok(())
}

fn run_gram(args: GramArgs) -> Result<()> {
    let raw = parse_libsvm(&args.data).with_context(|| format!("reading {}", args.data.display()))?;
    let mut x = raw.x;
    let pre: Preprocess = args.preprocess.parse().map_err(anyhow::Error::msg)?;
    if pre == Preprocess::Standardize {
        standardize(&mut x);
    }
    let g = match args.kernel.as_str() {
        "linear" => gram_linear(&x)?,
        "rbf" => gram_rbf(&x, Bandwidth::Auto, args.rbf_mode.into())?,
        k => bail!("gram supports linear|rbf, got {k:?}"),
    };
    if is_csv(&args.out) {
        write_csv(&args.out, &g.k)?;
    } else {
        write_binary(&args.out, &g.k)?;
    }
    println!(
        "wrote {}x{} {:?} Gram matrix of {} to {}",
        g.n(),
        g.n(),
        g.source,
        dataset_name(&args.data),
        args.out.display()
    );
    Ok(())
}

fn is_csv(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Sweep(a) => run_sweep(a),
        Command::Cost(a) => run_cost(a),
        Command::Shift(a) => run_shift(a),
        Command::Screen(a) => run_screen(a),
        Command::Gram(a) => run_gram(a),
    }
}
