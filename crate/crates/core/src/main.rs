//! Command-line driver: run experiments, generate data, score checkpoints and
//! compare methods from a results file.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use bgm_iv::bench::{
    evaluation_grid, gen_demand, gen_linear_iv, read_grid, write_dataset, write_grid, DemandConfig, DemandVariant,
};
use bgm_iv::harness::{compare, read_runs, run_experiment, Cell, ExperimentConfig, HolmFamily, Method, REPORT_SCALE};
use bgm_iv::infer::{structural_mse, FittedModel, MapConfig};
use bgm_iv::train::load_checkpoint;
use bgm_iv::Error;

#[derive(Parser)]
#[command(name = "bgm-iv", version, about = "Latent generative IV regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Lowdim,
    VectorProxy,
    Linear,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a JSON or TOML configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Restrict to cells given as `n=..,rho=..`; repeatable.
        #[arg(long)]
        cell: Vec<String>,
        /// Restrict to methods; repeatable.
        #[arg(long)]
        method: Vec<String>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a dataset CSV with a JSON sidecar.
    Gen {
        #[arg(long, value_enum)]
        variant: Variant,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the structural evaluation grid.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Slope of the linear design.
        #[arg(long, default_value_t = 2.0)]
        beta: f64,
        /// Instrument strength of the linear design.
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
    },
    /// Structural MSE of a checkpoint on a grid file.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        map_steps: Option<usize>,
    },
    /// Paired tests of two methods from a runs file.
    Stats {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        baseline: String,
        #[arg(long)]
        method: String,
    },
}

fn parse_cell(text: &str) -> anyhow::Result<Cell> {
    let (mut n, mut rho) = (None, None);
    for part in text.split(',') {
        match part.trim().split_once('=') {
            Some(("n", v)) => n = Some(v.parse().with_context(|| format!("bad n in '{text}'"))?),
            Some(("rho", v)) => rho = Some(v.parse().with_context(|| format!("bad rho in '{text}'"))?),
            _ => bail!("cell '{text}' must look like n=5000,rho=0.5"),
        }
    }
    match (n, rho) {
        (Some(n), Some(rho)) => Ok(Cell { n, rho }),
        _ => bail!("cell '{text}' needs both n and rho"),
    }
}

fn prepare(
    config: PathBuf,
    cells: Vec<String>,
    methods: Vec<String>,
    repeats: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if !cells.is_empty() {
        cfg.cells = cells.iter().map(|c| parse_cell(c)).collect::<anyhow::Result<_>>()?;
    }
    if !methods.is_empty() {
        cfg.methods = methods.iter().map(|m| Method::parse(m)).collect::<Result<_, _>>()?;
    }
    if let Some(r) = repeats {
        cfg.repeats = r;
    }
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    if out.is_some() {
        cfg.out_dir = out;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(
    config: PathBuf,
    cells: Vec<String>,
    methods: Vec<String>,
    repeats: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> anyhow::Result<ExitCode> {
    let cfg = prepare(config, cells, methods, repeats, seed, out)
        .map_err(|e| Error::InvalidConfig(format!("{e:#}")))?;
    let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("results"));
    let report = run_experiment(&cfg, Some(&dir), &mut |r| match (&r.mse, &r.error) {
        (Some(mse), _) => eprintln!(
            "{} n={} rho={} repeat={} mse={:.4}e4 ({:.1}s)",
            r.method.name(),
            r.n,
            r.rho,
            r.repeat,
            mse / REPORT_SCALE,
            r.wall_seconds
        ),
        (None, e) => eprintln!(
            "{} n={} rho={} repeat={} failed: {}",
            r.method.name(),
            r.n,
            r.rho,
            r.repeat,
            e.as_deref().unwrap_or("unknown error")
        ),
    })?;
    for s in &report.summaries {
        println!(
            "{:<22} n={:<6} rho={:<5} mse(x1e4) {:.4} +- {:.4}  ({} ok, {} failed)",
            s.method.name(),
            s.n,
            s.rho,
            s.mean_mse / REPORT_SCALE,
            s.std_mse / REPORT_SCALE,
            s.count,
            s.failures
        );
    }
    println!("results written to {}", dir.display());
    Ok(if report.failed_groups.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn gen(
    variant: Variant,
    n: usize,
    rho: f64,
    seed: u64,
    out: PathBuf,
    grid: Option<PathBuf>,
    beta: f64,
    gamma: f64,
) -> anyhow::Result<ExitCode> {
    let dataset = match variant {
        Variant::Linear => {
            if grid.is_some() {
                bail!("the linear design has no evaluation grid");
            }
            gen_linear_iv(n, beta, gamma, rho, seed)?
        }
        Variant::Lowdim | Variant::VectorProxy => {
            let v = if matches!(variant, Variant::Lowdim) { DemandVariant::Lowdim } else { DemandVariant::VectorProxy };
            let cfg = DemandConfig::new(v, n, rho, seed);
            if let Some(path) = &grid {
                write_grid(path, &evaluation_grid(&cfg)?)?;
            }
            gen_demand(&cfg)?
        }
    };
    write_dataset(&out, &dataset)?;
    println!("wrote {} rows to {}", dataset.observed.n(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn score(model: PathBuf, grid: PathBuf, map_steps: Option<usize>) -> anyhow::Result<ExitCode> {
    let ckpt = load_checkpoint(&model)?;
    let grid = read_grid(&grid)?;
    let mut map = MapConfig::default();
    if let Some(s) = map_steps {
        map.steps = s;
    }
    let s = structural_mse(&FittedModel::from_checkpoint(&ckpt), &grid, &map)?;
    println!(
        "structural mse {} (x1e4: {:.4}); {} distinct covariate vectors, {} MAP warnings",
        s.mse,
        s.mse / REPORT_SCALE,
        s.distinct_v,
        s.map_warnings
    );
    Ok(ExitCode::SUCCESS)
}

fn stats(runs: PathBuf, baseline: String, method: String) -> anyhow::Result<ExitCode> {
    let (baseline, method) = (Method::parse(&baseline)?, Method::parse(&method)?);
    let records: Vec<_> = read_runs(&runs)?
        .into_iter()
        .filter(|r| r.method == baseline || r.method == method)
        .collect();
    println!("n,rho,pairs,mean_diff,t,t_p,wilcoxon_p,wilcoxon_p_holm");
    for c in compare(&records, baseline, HolmFamily::Benchmark) {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        println!(
            "{},{},{},{},{},{},{},{}",
            c.n,
            c.rho,
            c.pairs,
            c.mean_diff,
            f(c.t.map(|t| t.t)),
            f(c.t.map(|t| t.p)),
            f(c.wilcoxon.map(|w| w.p)),
            f(c.wilcoxon_p_holm)
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn is_config_error(e: &anyhow::Error) -> bool {
    matches!(e.downcast_ref::<Error>(), Some(Error::InvalidConfig(_)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            cell,
            method,
            repeats,
            seed,
            out,
        } => run(config, cell, method, repeats, seed, out),
        Command::Gen {
            variant,
            n,
            rho,
            seed,
            out,
            grid,
            beta,
            gamma,
        } => gen(variant, n, rho, seed, out, grid, beta, gamma),
        Command::Score { model, grid, map_steps } => score(model, grid, map_steps),
        Command::Stats {
            runs,
            baseline,
            method,
        } => stats(runs, baseline, method),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
