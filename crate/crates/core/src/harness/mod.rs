//! Experiment driver: configuration, seeded repetitions, baselines, summaries,
//! paired comparisons and CSV outputs.

mod baselines;
mod output;
mod stats;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::bench::{evaluation_grid, fmt_f64, gen_demand, DemandConfig, DemandVariant, EvaluationGrid};
use crate::error::{Error, Result};
use crate::infer::{structural_mse, FittedModel, MapConfig};
use crate::rng::derive_seed;
use crate::train::{save_checkpoint, train, Architecture, Checkpoint, Objective, TrainConfig, TrainState, WarmStart};

pub use baselines::{ols, two_sls, LinearFit};
pub use output::{checkpoint_path, read_runs, trace_path, write_outputs};
pub use stats::{average_ranks, holm_adjust, mean_std, median, paired_t_test, wilcoxon_signed_rank, TTest, Wilcoxon};

/// MSE reporting unit of the summary tables.
pub const REPORT_SCALE: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BgmIv,
    BgmIvNoWarmstart,
    NaiveRegression,
    TwoSls,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::BgmIv,
        Method::BgmIvNoWarmstart,
        Method::NaiveRegression,
        Method::TwoSls,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::BgmIv => "bgm_iv",
            Method::BgmIvNoWarmstart => "bgm_iv_no_warmstart",
            Method::NaiveRegression => "naive_regression",
            Method::TwoSls => "two_sls",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{name}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub n: usize,
    pub rho: f64,
}

/// Which comparisons share one Holm family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HolmFamily {
    /// All cells of one method pair.
    #[default]
    Benchmark,
    /// All method pairs of one cell.
    Cell,
}

fn default_repeats() -> usize {
    20
}

fn default_methods() -> Vec<Method> {
    vec![Method::BgmIv, Method::NaiveRegression]
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: DemandVariant,
    pub cells: Vec<Cell>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Fields replacing the benchmark's training defaults.
    #[serde(default)]
    pub train: Map<String, Value>,
    /// Fields replacing the MAP defaults.
    #[serde(default)]
    pub map: Map<String, Value>,
    /// Generator fields other than `n`, `rho`, `seed` and `variant`.
    #[serde(default)]
    pub data: Map<String, Value>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub save_checkpoints: bool,
    #[serde(default)]
    pub holm_family: HolmFamily,
}

fn merged<T: Serialize + serde::de::DeserializeOwned>(base: &T, overrides: &Map<String, Value>, what: &str) -> Result<T> {
    let mut value = serde_json::to_value(base).expect("config serializes");
    let obj = value.as_object_mut().expect("config is an object");
    for (k, v) in overrides {
        obj.insert(k.clone(), v.clone());
    }
    serde_json::from_value(value).map_err(|e| Error::InvalidConfig(format!("{what}: {e}")))
}

impl ExperimentConfig {
    /// Reads JSON, or TOML when the extension is `.toml`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed: std::result::Result<Self, String> = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| e.to_string())
        } else {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        };
        let cfg = parsed.map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::InvalidConfig("repeats must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("at least one method is required".into()));
        }
        if self.cells.is_empty() {
            return Err(Error::InvalidConfig("at least one (n, rho) cell is required".into()));
        }
        for cell in &self.cells {
            self.demand_config(*cell, 0)?.validate()?;
        }
        self.train_config(0)?.validate()?;
        self.map_config()?.validate()
    }

    pub fn architecture(&self) -> Architecture {
        match self.benchmark {
            DemandVariant::Lowdim => Architecture::lowdim(),
            DemandVariant::VectorProxy => Architecture::vector(),
        }
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let base = match self.benchmark {
            DemandVariant::Lowdim => TrainConfig::default(),
            DemandVariant::VectorProxy => TrainConfig::vector(),
        };
        let mut cfg = merged(&base, &self.train, "train")?;
        cfg.seed = seed;
        Ok(cfg)
    }

    pub fn map_config(&self) -> Result<MapConfig> {
        merged(&MapConfig::default(), &self.map, "map")
    }

    pub fn demand_config(&self, cell: Cell, seed: u64) -> Result<DemandConfig> {
        let base = DemandConfig::new(self.benchmark, cell.n, cell.rho, seed);
        let mut cfg = merged(&base, &self.data, "data")?;
        cfg.n = cell.n;
        cfg.rho = cell.rho;
        cfg.seed = seed;
        cfg.variant = self.benchmark;
        Ok(cfg)
    }
}

/// Seeds of one repetition. Data and training seeds are shared by all
/// methods of a repetition so that comparisons are paired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    /// Distinct per (method, n, rho, repeat).
    pub run: u64,
    pub data: u64,
    pub train: u64,
}

pub fn run_seeds(base: u64, method: Method, cell: Cell, repeat: usize) -> RunSeeds {
    let (b, n, rho, r) = (base.to_string(), cell.n.to_string(), fmt_f64(cell.rho), repeat.to_string());
    RunSeeds {
        run: derive_seed(&[&b, method.name(), &n, &rho, &r]),
        data: derive_seed(&[&b, "data", &n, &rho, &r]),
        train: derive_seed(&[&b, "train", &n, &rho, &r]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub epoch: usize,
    pub covariate_loss: f64,
    pub treatment_loss: f64,
    pub outcome_loss: Option<f64>,
    pub latent_objective: Option<f64>,
    pub structural_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub n: usize,
    pub rho: f64,
    pub repeat: usize,
    pub seeds: RunSeeds,
    /// Final structural MSE on the original scale; absent for failed runs.
    pub mse: Option<f64>,
    pub map_warnings: usize,
    /// Failure message.
    pub error: Option<String>,
    pub trace: Vec<TracePoint>,
    pub wall_seconds: f64,
}

impl RunRecord {
    pub fn cell(&self) -> Cell {
        Cell { n: self.n, rho: self.rho }
    }

    pub fn succeeded(&self) -> bool {
        self.mse.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub n: usize,
    pub rho: f64,
    /// Successful runs.
    pub count: usize,
    pub failures: usize,
    /// Raw-scale mean and sample standard deviation of the MSE.
    pub mean_mse: f64,
    pub std_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: Method,
    pub method: Method,
    pub n: usize,
    pub rho: f64,
    /// Repeats where both methods succeeded.
    pub pairs: usize,
    /// Mean of `mse(method) - mse(baseline)`.
    pub mean_diff: f64,
    pub t: Option<TTest>,
    pub wilcoxon: Option<Wilcoxon>,
    pub wilcoxon_p_holm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub records: Vec<RunRecord>,
    pub summaries: Vec<CellSummary>,
    pub comparisons: Vec<Comparison>,
    /// (method, cell) groups in which every run failed.
    pub failed_groups: Vec<(Method, Cell)>,
}

fn run_method(
    cfg: &ExperimentConfig,
    method: Method,
    cell: Cell,
    repeat: usize,
    seeds: RunSeeds,
    grid: &EvaluationGrid,
    out_dir: Option<&Path>,
) -> Result<(f64, usize, Vec<TracePoint>)> {
    let dataset = gen_demand(&cfg.demand_config(cell, seeds.data)?)?;
    if method == Method::TwoSls {
        let fit = two_sls(&dataset.observed)?;
        return Ok((fit.grid_mse(grid)?, 0, Vec::new()));
    }
    let mut tcfg = cfg.train_config(seeds.train)?;
    match method {
        Method::BgmIvNoWarmstart => tcfg.warm_start = WarmStart::XavierOnly,
        Method::NaiveRegression => tcfg.objective = Objective::Naive,
        _ => {}
    }
    let map = cfg.map_config()?;
    let mut warnings = 0;
    let mut hook = |state: &TrainState, scalers: &crate::bench::ScalerSpec| {
        let score = structural_mse(&FittedModel::from_state(state, scalers), grid, &map)?;
        warnings = score.map_warnings;
        Ok(score.mse)
    };
    let out = train(&dataset.observed, dataset.scaling, &cfg.architecture(), &tcfg, Some(&mut hook))?;
    let trace: Vec<TracePoint> = out
        .history
        .iter()
        .map(|h| TracePoint {
            epoch: h.epoch,
            covariate_loss: h.covariate_loss,
            treatment_loss: h.treatment_loss,
            outcome_loss: h.outcome_loss,
            latent_objective: h.latent_objective,
            structural_mse: h.structural_mse,
        })
        .collect();
    let mse = trace
        .last()
        .and_then(|t| t.structural_mse)
        .expect("the final epoch is always evaluated");
    if let Some(dir) = out_dir.filter(|_| cfg.save_checkpoints) {
        let path = checkpoint_path(dir, method, cell, repeat);
        let ckpt = Checkpoint {
            state: out.state,
            scalers: out.scalers,
            config: tcfg,
        };
        save_checkpoint(&path, &ckpt)?;
    }
    Ok((mse, warnings, trace))
}

/// Runs one repetition of one method; failures are recorded, not returned.
pub fn run_single(
    cfg: &ExperimentConfig,
    method: Method,
    cell: Cell,
    repeat: usize,
    grid: &EvaluationGrid,
    out_dir: Option<&Path>,
) -> RunRecord {
    let seeds = run_seeds(cfg.base_seed, method, cell, repeat);
    let start = Instant::now();
    let result = run_method(cfg, method, cell, repeat, seeds, grid, out_dir);
    let wall_seconds = start.elapsed().as_secs_f64();
    let (mse, map_warnings, error, trace) = match result {
        Ok((mse, w, trace)) => (Some(mse), w, None, trace),
        Err(e) => (None, 0, Some(e.to_string()), Vec::new()),
    };
    RunRecord {
        method,
        n: cell.n,
        rho: cell.rho,
        repeat,
        seeds,
        mse,
        map_warnings,
        error,
        trace,
        wall_seconds,
    }
}

fn cell_key(cell: Cell) -> (usize, u64) {
    (cell.n, cell.rho.to_bits())
}

/// Mean and sample deviation of each (method, cell) over successful runs,
/// in configuration order.
pub fn summarize(records: &[RunRecord]) -> Vec<CellSummary> {
    let mut groups: Vec<((Method, usize, u64), Vec<&RunRecord>)> = Vec::new();
    for r in records {
        let key = (r.method, r.n, r.rho.to_bits());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|((method, n, _), runs)| {
            let values: Vec<f64> = runs.iter().filter_map(|r| r.mse).collect();
            let (mean_mse, std_mse) = if values.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&values) };
            CellSummary {
                method,
                n,
                rho: runs[0].rho,
                count: values.len(),
                failures: runs.len() - values.len(),
                mean_mse,
                std_mse,
            }
        })
        .collect()
}

/// Paired tests of every other method against `baseline`, matched by
/// repeat index over runs where both succeeded, with Holm-adjusted Wilcoxon
/// p-values.
pub fn compare(records: &[RunRecord], baseline: Method, family: HolmFamily) -> Vec<Comparison> {
    let mut by: HashMap<(Method, (usize, u64), usize), f64> = HashMap::new();
    let mut cells: Vec<Cell> = Vec::new();
    let mut methods: Vec<Method> = Vec::new();
    for r in records {
        if !cells.iter().any(|c| cell_key(*c) == cell_key(r.cell())) {
            cells.push(r.cell());
        }
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
        if let Some(m) = r.mse {
            by.insert((r.method, cell_key(r.cell()), r.repeat), m);
        }
    }
    let mut out = Vec::new();
    for &method in methods.iter().filter(|&&m| m != baseline) {
        for &cell in &cells {
            let mut repeats: Vec<usize> = records
                .iter()
                .filter(|r| r.method == method && cell_key(r.cell()) == cell_key(cell))
                .map(|r| r.repeat)
                .collect();
            repeats.sort_unstable();
            repeats.dedup();
            let diffs: Vec<f64> = repeats
                .iter()
                .filter_map(|&rep| {
                    let a = by.get(&(method, cell_key(cell), rep))?;
                    let b = by.get(&(baseline, cell_key(cell), rep))?;
                    Some(a - b)
                })
                .collect();
            let mean_diff = if diffs.is_empty() { f64::NAN } else { mean_std(&diffs).0 };
            out.push(Comparison {
                baseline,
                method,
                n: cell.n,
                rho: cell.rho,
                pairs: diffs.len(),
                mean_diff,
                t: paired_t_test(&diffs).ok(),
                wilcoxon: wilcoxon_signed_rank(&diffs).ok(),
                wilcoxon_p_holm: None,
            });
        }
    }
    let mut families: BTreeMap<(Method, usize, u64), Vec<usize>> = BTreeMap::new();
    for (k, c) in out.iter().enumerate() {
        if c.wilcoxon.is_none() {
            continue;
        }
        let key = match family {
            HolmFamily::Benchmark => (c.method, 0, 0),
            HolmFamily::Cell => (baseline, c.n, c.rho.to_bits()),
        };
        families.entry(key).or_default().push(k);
    }
    for members in families.values() {
        let p: Vec<f64> = members.iter().map(|&k| out[k].wilcoxon.expect("filtered").p).collect();
        let adj = holm_adjust(&p).expect("exact p-values lie in [0, 1]");
        for (&k, a) in members.iter().zip(adj) {
            out[k].wilcoxon_p_holm = Some(a);
        }
    }
    out
}

/// Reference method of the comparison table.
pub fn baseline_method(methods: &[Method]) -> Method {
    if methods.contains(&Method::BgmIv) {
        Method::BgmIv
    } else {
        methods[0]
    }
}

/// Runs every (cell, repeat, method) in configuration order, writing
/// outputs to `out_dir` when given. `progress` sees each finished run.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&RunRecord),
) -> Result<ExperimentReport> {
    cfg.validate()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if cfg.save_checkpoints {
            let ck = dir.join("checkpoints");
            std::fs::create_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
        }
    }
    let mut records = Vec::new();
    for &cell in &cfg.cells {
        let grid = evaluation_grid(&cfg.demand_config(cell, 0)?)?;
        for repeat in 0..cfg.repeats {
            for &method in &cfg.methods {
                let record = run_single(cfg, method, cell, repeat, &grid, out_dir);
                progress(&record);
                records.push(record);
            }
        }
    }
    let summaries = summarize(&records);
    let comparisons = compare(&records, baseline_method(&cfg.methods), cfg.holm_family);
    let failed_groups = summaries
        .iter()
        .filter(|s| s.count == 0)
        .map(|s| (s.method, Cell { n: s.n, rho: s.rho }))
        .collect();
    let report = ExperimentReport {
        records,
        summaries,
        comparisons,
        failed_groups,
    };
    if let Some(dir) = out_dir {
        write_outputs(dir, cfg, &report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(method: Method, repeat: usize, mse: Option<f64>) -> RunRecord {
        RunRecord {
            method,
            n: 10,
            rho: 0.5,
            repeat,
            seeds: run_seeds(0, method, Cell { n: 10, rho: 0.5 }, repeat),
            mse,
            map_warnings: 0,
            error: mse.is_none().then(|| "boom".into()),
            trace: Vec::new(),
            wall_seconds: 0.0,
        }
    }

    #[test]
    fn seeds_are_distinct_across_runs_and_shared_across_methods() {
        let mut seen = std::collections::HashSet::new();
        for m in Method::ALL {
            for (n, rho) in [(1000, 0.1), (1000, 0.5), (5000, 0.1)] {
                for r in 0..20 {
                    let c = Cell { n, rho };
                    assert!(seen.insert(run_seeds(7, m, c, r).run));
                    assert_eq!(run_seeds(7, m, c, r).data, run_seeds(7, Method::BgmIv, c, r).data);
                }
            }
        }
    }

    #[test]
    fn summary_excludes_failures() {
        let recs = vec![
            record(Method::BgmIv, 0, Some(1.0)),
            record(Method::BgmIv, 1, Some(1.0)),
            record(Method::BgmIv, 2, Some(1.0)),
            record(Method::BgmIv, 3, None),
        ];
        let s = summarize(&recs);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].mean_mse, s[0].std_mse, s[0].count, s[0].failures), (1.0, 0.0, 3, 1));
    }

    #[test]
    fn comparisons_pair_by_repeat() {
        let recs = vec![
            record(Method::BgmIv, 0, Some(1.0)),
            record(Method::NaiveRegression, 0, Some(3.0)),
            record(Method::BgmIv, 1, None),
            record(Method::NaiveRegression, 1, Some(9.0)),
            record(Method::BgmIv, 2, Some(2.0)),
            record(Method::NaiveRegression, 2, Some(3.0)),
        ];
        let c = compare(&recs, Method::BgmIv, HolmFamily::Benchmark);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].pairs, 2);
        assert_eq!(c[0].mean_diff, 1.5);
        assert_eq!(c[0].wilcoxon.unwrap().w_plus, 3.0);
        assert_eq!(c[0].wilcoxon_p_holm, Some(c[0].wilcoxon.unwrap().p));
    }

    #[test]
    fn overrides_merge_onto_variant_defaults() {
        let text = r#"
            benchmark = "vector_proxy"
            cells = [{ n = 100, rho = 0.5 }]
            repeats = 2
            methods = ["bgm_iv", "two_sls"]
            [train]
            epochs = 3
            [map]
            steps = 7
            [data]
            proxy_dim = 16
        "#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        let t = cfg.train_config(5).unwrap();
        assert_eq!((t.epochs, t.batch_size, t.seed), (3, 32, 5));
        assert_eq!(cfg.map_config().unwrap().steps, 7);
        assert_eq!(cfg.demand_config(cfg.cells[0], 1).unwrap().proxy_dim, 16);

        let bad: ExperimentConfig = toml::from_str(&text.replace("epochs = 3", "epoch = 3")).unwrap();
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        let zero: ExperimentConfig = toml::from_str(&text.replace("repeats = 2", "repeats = 0")).unwrap();
        assert!(zero.validate().is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!(Method::parse("dfiv").is_err());
    }
}
