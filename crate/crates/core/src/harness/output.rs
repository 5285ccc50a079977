//! Artifact serialization: per-replication CSV, summary CSV, plot-data CSV,
//! and the run manifest. All numeric fields carry seven significant digits;
//! every writer is deterministic so reruns overwrite byte-identically.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{
    Estimator, NcoSubgroupEffect, Regime, ReplicationResult, StudySummary, SummaryStat,
};
use crate::sim::{Scenario, ScenarioSpec, Setting};

use super::{FailureRecord, RunPlan};

pub const REPLICATIONS_FILE: &str = "replications.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const NCO_PLOT_FILE: &str = "nco_plot.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const REPLICATIONS_HEADER: &str = "scenario,setting,estimator,regime,rep,ate,\
q1,q2,q3,q4,q1_size,q2_size,q3_size,q4_size,rmse,cfb,\
nco_q1,nco_q2,nco_q3,nco_q4,nco_logodds_q1,nco_logodds_q2,nco_logodds_q3,nco_logodds_q4,flags";

pub const SUMMARY_HEADER: &str = "scenario,setting,estimator,regime,replications,\
ate_median,ate_lo,ate_hi,rmse_median,rmse_lo,rmse_hi,cfb_median,cfb_lo,cfb_hi,\
q1_mean,q2_mean,q3_mean,q4_mean";

pub const NCO_PLOT_HEADER: &str =
    "scenario,setting,estimator,regime,quartile,effect_median,effect_lo,effect_hi";

/// Seven significant digits in scientific notation; parses back exactly to
/// the printed value.
fn fmt_f64(v: f64) -> String {
    format!("{v:.6e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// One replications.csv data row, without trailing newline.
pub fn replication_row(r: &ReplicationResult) -> String {
    let mut flags: Vec<String> = Vec::new();
    if r.degenerate_quartiles {
        flags.push("degenerate_quartiles".to_string());
    }
    for e in &r.nco {
        if e.ridge_fallback {
            flags.push(format!("nco_ridge_q{}", e.quartile + 1));
        }
    }
    let mut row = String::with_capacity(256);
    write!(
        row,
        "{},{},{},{},{}",
        r.scenario.as_str(),
        r.setting.as_str(),
        r.estimator.as_str(),
        r.regime.as_str(),
        r.replication
    )
    .unwrap();
    write!(row, ",{}", fmt_f64(r.ate)).unwrap();
    for m in &r.quartile_means {
        write!(row, ",{}", fmt_f64(*m)).unwrap();
    }
    for s in &r.quartile_sizes {
        write!(row, ",{s}").unwrap();
    }
    write!(
        row,
        ",{},{}",
        fmt_opt(r.rmse_vs_oracle),
        fmt_opt(r.c_for_benefit)
    )
    .unwrap();
    for e in &r.nco {
        write!(row, ",{}", fmt_f64(e.effect)).unwrap();
    }
    for e in &r.nco {
        write!(row, ",{}", fmt_f64(e.log_odds)).unwrap();
    }
    write!(row, ",{}", flags.join(";")).unwrap();
    row
}

pub fn write_replications(dir: &Path, results: &[ReplicationResult]) -> Result<()> {
    let mut text = String::with_capacity(64 + 256 * results.len());
    text.push_str(REPLICATIONS_HEADER);
    text.push('\n');
    for r in results {
        text.push_str(&replication_row(r));
        text.push('\n');
    }
    std::fs::write(dir.join(REPLICATIONS_FILE), text)?;
    Ok(())
}

fn parse_f64(field: &str, what: &str, line_no: usize) -> Result<f64> {
    field.parse::<f64>().map_err(|_| {
        Error::config(format!(
            "replications.csv line {line_no}: bad {what} `{field}`"
        ))
    })
}

fn parse_opt(field: &str, what: &str, line_no: usize) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_f64(field, what, line_no).map(Some)
    }
}

/// Parse a replications.csv back into results (the inverse of
/// `replication_row`, used by `summarize --in`).
pub fn read_replications(path: &Path) -> Result<Vec<ReplicationResult>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == REPLICATIONS_HEADER => {}
        Some((_, header)) => {
            return Err(Error::config(format!(
                "unrecognized replications.csv header: `{header}`"
            )))
        }
        None => return Err(Error::config("replications.csv is empty")),
    }

    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 25 {
            return Err(Error::config(format!(
                "replications.csv line {line_no}: expected 25 fields, got {}",
                f.len()
            )));
        }
        let scenario = Scenario::parse(f[0])?;
        let setting = Setting::parse(f[1])?;
        let estimator = Estimator::parse(f[2])?;
        let regime = Regime::parse(f[3])?;
        let replication = f[4]
            .parse::<u64>()
            .map_err(|_| Error::config(format!("replications.csv line {line_no}: bad rep")))?;
        let ate = parse_f64(f[5], "ate", line_no)?;
        let mut quartile_means = [0.0f64; 4];
        for (k, m) in quartile_means.iter_mut().enumerate() {
            *m = parse_f64(f[6 + k], "quartile mean", line_no)?;
        }
        let mut quartile_sizes = [0usize; 4];
        for (k, s) in quartile_sizes.iter_mut().enumerate() {
            *s = f[10 + k].parse::<usize>().map_err(|_| {
                Error::config(format!(
                    "replications.csv line {line_no}: bad quartile size"
                ))
            })?;
        }
        let rmse_vs_oracle = parse_opt(f[14], "rmse", line_no)?;
        let c_for_benefit = parse_opt(f[15], "cfb", line_no)?;
        let flags: Vec<&str> = if f[24].is_empty() {
            Vec::new()
        } else {
            f[24].split(';').collect()
        };
        let mut nco = Vec::with_capacity(4);
        for k in 0..4 {
            nco.push(NcoSubgroupEffect {
                quartile: k as u8,
                effect: parse_f64(f[16 + k], "nco effect", line_no)?,
                log_odds: parse_f64(f[20 + k], "nco log-odds", line_no)?,
                adjusted_for_u: regime == Regime::WithU,
                ridge_fallback: flags.contains(&format!("nco_ridge_q{}", k + 1).as_str()),
            });
        }
        out.push(ReplicationResult {
            scenario,
            setting,
            replication,
            estimator,
            regime,
            ate,
            quartile_means,
            quartile_sizes,
            rmse_vs_oracle,
            c_for_benefit,
            nco: nco.try_into().expect("four quartiles"),
            degenerate_quartiles: flags.contains(&"degenerate_quartiles"),
        });
    }
    Ok(out)
}

fn stat_fields(s: &SummaryStat) -> String {
    format!("{},{},{}", fmt_f64(s.median), fmt_f64(s.lo), fmt_f64(s.hi))
}

fn opt_stat_fields(s: &Option<SummaryStat>) -> String {
    match s {
        Some(s) => stat_fields(s),
        None => ",,".to_string(),
    }
}

pub fn write_summary(dir: &Path, summary: &StudySummary) -> Result<()> {
    let mut text = String::new();
    text.push_str(SUMMARY_HEADER);
    text.push('\n');
    for c in &summary.cells {
        writeln!(
            text,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            c.scenario.as_str(),
            c.setting.as_str(),
            c.estimator.as_str(),
            c.regime.as_str(),
            c.replications,
            stat_fields(&c.ate),
            opt_stat_fields(&c.rmse),
            opt_stat_fields(&c.c_for_benefit),
            fmt_f64(c.quartile_means[0]),
            fmt_f64(c.quartile_means[1]),
            fmt_f64(c.quartile_means[2]),
            fmt_f64(c.quartile_means[3]),
        )
        .unwrap();
    }
    std::fs::write(dir.join(SUMMARY_FILE), text)?;
    Ok(())
}

pub fn write_nco_plot(dir: &Path, summary: &StudySummary) -> Result<()> {
    let mut text = String::new();
    text.push_str(NCO_PLOT_HEADER);
    text.push('\n');
    for c in &summary.cells {
        for (k, stat) in c.nco.iter().enumerate() {
            writeln!(
                text,
                "{},{},{},{},Q{},{}",
                c.scenario.as_str(),
                c.setting.as_str(),
                c.estimator.as_str(),
                c.regime.as_str(),
                k + 1,
                stat_fields(stat),
            )
            .unwrap();
        }
    }
    std::fs::write(dir.join(NCO_PLOT_FILE), text)?;
    Ok(())
}

/// Canonical text rendering of everything that defines a run's outputs;
/// hashed into the manifest so identical configurations are recognizable.
fn config_digest(plan: &RunPlan, specs: &[ScenarioSpec]) -> String {
    let mut text = String::new();
    write!(
        text,
        "seed={};reps={};train={:?};engine={:?}",
        plan.master_seed, plan.replications, plan.train_fraction, plan.engine
    )
    .unwrap();
    for spec in specs {
        write!(text, ";spec={spec:?}").unwrap();
    }
    let digest = Sha256::digest(text.as_bytes());
    let mut hex = String::with_capacity(64);
    for b in digest {
        write!(hex, "{b:02x}").unwrap();
    }
    hex
}

pub fn write_manifest(
    dir: &Path,
    plan: &RunPlan,
    specs: &[ScenarioSpec],
    results: &[ReplicationResult],
    failures: &[FailureRecord],
) -> Result<()> {
    // Thread count deliberately omitted: outputs are thread-invariant and
    // the manifest must be too.
    let cells: Vec<String> = specs.iter().map(|s| s.cell_id()).collect();
    let failure_records: Vec<serde_json::Value> = failures
        .iter()
        .take(100)
        .map(|f| {
            serde_json::json!({
                "cell_id": f.cell_id,
                "rep": f.replication,
                "cell": f.cell,
                "message": f.message,
            })
        })
        .collect();
    let manifest = serde_json::json!({
        "cells": cells,
        "config_digest": config_digest(plan, specs),
        "engine": {
            "forest_trees": plan.engine.forest_trees,
            "tune_draws": plan.engine.tune_draws,
            "pilot_trees": plan.engine.pilot_trees,
            "nuisance_trees": plan.engine.nuisance_trees,
            "oracle_plugin": plan.engine.oracle_plugin,
        },
        "failures": {
            "count": failures.len(),
            "records": failure_records,
        },
        "master_seed": plan.master_seed,
        "replications": plan.replications,
        "result_rows": results.len(),
        "tool_version": env!("CARGO_PKG_VERSION"),
        "train_fraction": plan.train_fraction,
    });
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}
