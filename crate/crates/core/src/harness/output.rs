use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::{Cell, ExperimentConfig, ExperimentReport, Method, RunRecord, RunSeeds, REPORT_SCALE};
use crate::bench::{fmt_f64, write_text};
use crate::error::{Error, Result};

const RUNS_HEADER: [&str; 11] = [
    "method",
    "n",
    "rho",
    "repeat",
    "seed",
    "data_seed",
    "train_seed",
    "status",
    "structural_mse",
    "map_warnings",
    "error",
];

fn cell_tag(cell: Cell) -> String {
    format!("n{}_rho{}", cell.n, fmt_f64(cell.rho))
}

pub fn checkpoint_path(dir: &Path, method: Method, cell: Cell, repeat: usize) -> PathBuf {
    dir.join("checkpoints")
        .join(format!("{}_{}_r{repeat}.ckpt", method.name(), cell_tag(cell)))
}

pub fn trace_path(dir: &Path, cell: Cell) -> PathBuf {
    dir.join(format!("trace_{}.csv", cell_tag(cell)))
}

fn format_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header).map_err(format_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(format_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn run_row(r: &RunRecord) -> Vec<String> {
    vec![
        r.method.name().into(),
        r.n.to_string(),
        fmt_f64(r.rho),
        r.repeat.to_string(),
        r.seeds.run.to_string(),
        r.seeds.data.to_string(),
        r.seeds.train.to_string(),
        if r.succeeded() { "ok" } else { "failed" }.into(),
        opt(r.mse),
        r.map_warnings.to_string(),
        r.error.clone().unwrap_or_default(),
    ]
}

/// Writes `runs.csv`, `summary.csv`, `comparisons.csv`, `timings.csv`,
/// `config.json` and one `trace_*.csv` per cell. Wall-clock times go only to
/// `timings.csv`, so every other file is reproducible byte for byte.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, report: &ExperimentReport) -> Result<()> {
    write_csv(&dir.join("runs.csv"), &RUNS_HEADER, report.records.iter().map(run_row))?;
    write_csv(
        &dir.join("timings.csv"),
        &["method", "n", "rho", "repeat", "wall_seconds"],
        report.records.iter().map(|r| {
            vec![
                r.method.name().into(),
                r.n.to_string(),
                fmt_f64(r.rho),
                r.repeat.to_string(),
                format!("{:.3}", r.wall_seconds),
            ]
        }),
    )?;
    write_csv(
        &dir.join("summary.csv"),
        &["method", "n", "rho", "count", "failures", "mean_mse_e4", "std_mse_e4"],
        report.summaries.iter().map(|s| {
            vec![
                s.method.name().into(),
                s.n.to_string(),
                fmt_f64(s.rho),
                s.count.to_string(),
                s.failures.to_string(),
                fmt_f64(s.mean_mse / REPORT_SCALE),
                fmt_f64(s.std_mse / REPORT_SCALE),
            ]
        }),
    )?;
    write_csv(
        &dir.join("comparisons.csv"),
        &[
            "baseline",
            "method",
            "n",
            "rho",
            "pairs",
            "mean_diff",
            "t",
            "t_p",
            "t_degenerate",
            "wilcoxon_w_plus",
            "wilcoxon_p",
            "wilcoxon_p_holm",
        ],
        report.comparisons.iter().map(|c| {
            vec![
                c.baseline.name().into(),
                c.method.name().into(),
                c.n.to_string(),
                fmt_f64(c.rho),
                c.pairs.to_string(),
                fmt_f64(c.mean_diff),
                opt(c.t.map(|t| t.t)),
                opt(c.t.map(|t| t.p)),
                c.t.map(|t| t.degenerate.to_string()).unwrap_or_default(),
                opt(c.wilcoxon.map(|w| w.w_plus)),
                opt(c.wilcoxon.map(|w| w.p)),
                opt(c.wilcoxon_p_holm),
            ]
        }),
    )?;
    let mut cells: Vec<Cell> = Vec::new();
    for r in &report.records {
        if !cells.iter().any(|c| c.n == r.n && c.rho.to_bits() == r.rho.to_bits()) {
            cells.push(r.cell());
        }
    }
    for cell in cells {
        let rows = report
            .records
            .iter()
            .filter(|r| r.n == cell.n && r.rho.to_bits() == cell.rho.to_bits())
            .flat_map(|r| {
                r.trace.iter().map(move |t| {
                    vec![
                        r.method.name().into(),
                        r.repeat.to_string(),
                        t.epoch.to_string(),
                        fmt_f64(t.covariate_loss),
                        fmt_f64(t.treatment_loss),
                        opt(t.outcome_loss),
                        opt(t.latent_objective),
                        opt(t.structural_mse),
                    ]
                })
            });
        write_csv(
            &trace_path(dir, cell),
            &[
                "method",
                "repeat",
                "epoch",
                "covariate_loss",
                "treatment_loss",
                "outcome_loss",
                "latent_objective",
                "structural_mse",
            ],
            rows,
        )?;
    }
    let json = serde_json::to_string_pretty(cfg).expect("config serializes");
    write_text(&dir.join("config.json"), &(json + "\n"))
}

/// Reads `runs.csv` back; traces and timings are not part of the file.
pub fn read_runs(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(format_err(path))?;
    let header: Vec<String> = r.headers().map_err(format_err(path))?.iter().map(String::from).collect();
    if header != RUNS_HEADER {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("unexpected header {}", header.join(",")),
        });
    }
    let bad = |line: usize, what: &str| Error::Format {
        path: path.to_path_buf(),
        reason: format!("row {line}: invalid {what}"),
    };
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let line = k + 1;
        let rec = rec.map_err(format_err(path))?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let method = Method::parse(f(0)).map_err(|_| bad(line, "method"))?;
        let int = |i: usize, what: &str| f(i).parse::<u64>().map_err(|_| bad(line, what));
        let mse = match f(8) {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|_| bad(line, "structural_mse"))?),
        };
        out.push(RunRecord {
            method,
            n: int(1, "n")? as usize,
            rho: f(2).parse().map_err(|_| bad(line, "rho"))?,
            repeat: int(3, "repeat")? as usize,
            seeds: RunSeeds {
                run: int(4, "seed")?,
                data: int(5, "data_seed")?,
                train: int(6, "train_seed")?,
            },
            mse,
            map_warnings: int(9, "map_warnings")? as usize,
            error: Some(f(10)).filter(|s| !s.is_empty()).map(String::from),
            trace: Vec::new(),
            wall_seconds: 0.0,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{compare, mean_std, run_seeds, summarize, HolmFamily, TracePoint};

    fn report() -> ExperimentReport {
        let mut records = Vec::new();
        for (k, mse) in [Some(1.5e4), Some(2.25e3), None, Some(7.0e3)].into_iter().enumerate() {
            for method in [Method::BgmIv, Method::NaiveRegression] {
                let cell = Cell { n: 100, rho: 0.5 };
                records.push(RunRecord {
                    method,
                    n: 100,
                    rho: 0.5,
                    repeat: k,
                    seeds: run_seeds(1, method, cell, k),
                    mse: mse.map(|m| if method == Method::BgmIv { m } else { m * 1.7 + 3.0 }),
                    map_warnings: 0,
                    error: mse.is_none().then(|| "diverged, at epoch 3".into()),
                    trace: vec![TracePoint {
                        epoch: 0,
                        covariate_loss: 1.0,
                        treatment_loss: 2.0,
                        outcome_loss: None,
                        latent_objective: Some(-3.0),
                        structural_mse: mse,
                    }],
                    wall_seconds: 0.25,
                });
            }
        }
        let summaries = summarize(&records);
        let comparisons = compare(&records, Method::BgmIv, HolmFamily::Benchmark);
        ExperimentReport {
            records,
            summaries,
            comparisons,
            failed_groups: Vec::new(),
        }
    }

    fn config() -> ExperimentConfig {
        serde_json::from_str(r#"{"benchmark":"lowdim","cells":[{"n":100,"rho":0.5}]}"#).unwrap()
    }

    #[test]
    fn runs_round_trip_and_summary_recomputes() {
        let dir = tempfile::tempdir().unwrap();
        let rep = report();
        write_outputs(dir.path(), &config(), &rep).unwrap();
        let back = read_runs(&dir.path().join("runs.csv")).unwrap();
        for (a, b) in back.iter().zip(&rep.records) {
            assert_eq!((a.method, a.repeat, a.mse, a.seeds, &a.error), (b.method, b.repeat, b.mse, b.seeds, &b.error));
        }
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        let bgm: Vec<f64> = back.iter().filter(|r| r.method == Method::BgmIv).filter_map(|r| r.mse).collect();
        let (m, s) = mean_std(&bgm);
        let line = summary.lines().nth(1).unwrap();
        assert_eq!(line, format!("bgm_iv,100,0.5,3,1,{},{}", fmt_f64(m / 1e4), fmt_f64(s / 1e4)));
        assert!(trace_path(dir.path(), Cell { n: 100, rho: 0.5 }).exists());
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        write_outputs(dir.path(), &config(), &report()).unwrap();
        let names = ["runs.csv", "summary.csv", "comparisons.csv", "config.json", "trace_n100_rho0.5.csv"];
        let first: Vec<Vec<u8>> = names.iter().map(|n| std::fs::read(dir.path().join(n)).unwrap()).collect();
        write_outputs(dir.path(), &config(), &report()).unwrap();
        for (n, f) in names.iter().zip(first) {
            assert_eq!(std::fs::read(dir.path().join(n)).unwrap(), f, "{n}");
        }
    }

    #[test]
    fn empty_report_writes_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        let rep = ExperimentReport {
            records: vec![],
            summaries: vec![],
            comparisons: vec![],
            failed_groups: vec![],
        };
        write_outputs(dir.path(), &config(), &rep).unwrap();
        let runs = std::fs::read_to_string(dir.path().join("runs.csv")).unwrap();
        assert_eq!(runs.lines().count(), 1);
        assert_eq!(std::fs::read_to_string(dir.path().join("summary.csv")).unwrap().lines().count(), 1);
        assert!(read_runs(&dir.path().join("runs.csv")).unwrap().is_empty());
    }
}
