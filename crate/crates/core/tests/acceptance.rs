//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The three end-to-end training criteria take hours on one core;
//! `BGM_IV_QUICK_ACCEPTANCE=1` reports them as skipped. Failures are
//! reported, not fatal, unless `BGM_IV_ACCEPTANCE_STRICT=1`.

mod common;

use std::path::Path;
use std::process::ExitCode;

use common::{checks, Outcome};

fn report(id: usize, name: &str, outcome: &Outcome, failures: &mut usize) {
    let tag = if outcome.pass { "PASS" } else { "FAIL" };
    if !outcome.pass {
        *failures += 1;
    }
    println!("criterion {id} {tag} {name}: {}", outcome.detail);
}

fn skip(id: usize, name: &str) {
    println!("criterion {id} SKIP {name}: BGM_IV_QUICK_ACCEPTANCE=1");
}

fn main() -> ExitCode {
    let full = !std::env::var("BGM_IV_QUICK_ACCEPTANCE").is_ok_and(|v| v == "1");
    let out_root = std::env::var_os("BGM_IV_ACCEPTANCE_OUT");
    let mut failures = 0;
    report(1, "gradient correctness", &checks::criterion_gradients(), &mut failures);
    report(2, "IV mixture oracle", &checks::criterion_mixture(), &mut failures);
    report(3, "generator oracles", &checks::criterion_generators(), &mut failures);
    report(4, "2SLS/OLS sanity", &checks::criterion_linear(), &mut failures);
    if full {
        let dir = |name: &str| {
            out_root.as_ref().map(|root| {
                let d = Path::new(root).join(name);
                std::fs::create_dir_all(&d).unwrap();
                d
            })
        };
        let demand_dir = dir("demand");
        let (records, _) = checks::demand_experiment(demand_dir.as_deref());
        let seconds: f64 = records
            .iter()
            .filter(|r| r.method != bgm_iv::harness::Method::BgmIvNoWarmstart)
            .map(|r| r.wall_seconds)
            .sum();
        report(5, "demand end-to-end", &checks::criterion_demand(&records, seconds), &mut failures);
        report(6, "warm-start ablation", &checks::criterion_ablation(&records), &mut failures);
        let vector_dir = dir("vector");
        let records = checks::vector_experiment(vector_dir.as_deref());
        report(7, "vector-proxy trend", &checks::criterion_vector(&records), &mut failures);
    } else {
        skip(5, "demand end-to-end");
        skip(6, "warm-start ablation");
        skip(7, "vector-proxy trend");
    }
    report(8, "statistics oracles", &checks::criterion_stats(), &mut failures);
    let binary = Path::new(env!("CARGO_BIN_EXE_bgm-iv"));
    report(9, "determinism", &checks::criterion_determinism(binary), &mut failures);
    println!("{failures} criteria failed");
    let strict = std::env::var("BGM_IV_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failures == 0 || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
