//! Output files: CSV traces, JSON summary and the run manifest.
//!
//! Reals are written with 9 significant digits, decimal point, no locale.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::sim::{Summary, TraceRecord};
use crate::sweep::{Quantiles, SweepRow, SweepSummaryRow};

pub const STATES_HEADER: &str = "time_s,agent,s,s_dot,theta,theta_dot,u_applied";
pub const ROUNDS_HEADER: &str =
    "round,time_s,slots_control,slots_other,slots_free,sent_agents,lost_to_manager,radio_on_s";
pub const SWEEP_HEADER: &str =
    "delta,seed,control_fraction,other_fraction,free_fraction,rmse,duty_cycle,savings,cost";
const SUMMARY_METRICS: [&str; 7] = [
    "control_fraction",
    "other_fraction",
    "free_fraction",
    "rmse",
    "duty_cycle",
    "savings",
    "cost",
];

/// `printf("%.9g")`.
pub fn fmt_g9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `x` rounded to 9 significant digits.
pub fn round_g9(x: f64) -> f64 {
    fmt_g9(x).parse().unwrap_or(x)
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

pub fn states_csv(trace: &TraceRecord) -> String {
    let mut out = String::with_capacity(trace.steps.len() * trace.agents * 80);
    out.push_str(STATES_HEADER);
    out.push('\n');
    for step in &trace.steps {
        let t = fmt_g9(step.time);
        for i in 0..trace.agents {
            let x = trace.state_of(step, i);
            let _ = write!(out, "{t},{i}");
            for v in x {
                let _ = write!(out, ",{}", fmt_g9(*v));
            }
            let _ = writeln!(out, ",{}", fmt_g9(trace.input_of(step, i)[0]));
        }
    }
    out
}

pub fn rounds_csv(trace: &TraceRecord) -> String {
    let mut out = String::with_capacity(trace.rounds.len() * 48);
    out.push_str(ROUNDS_HEADER);
    out.push('\n');
    for r in &trace.rounds {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.round,
            fmt_g9(r.time),
            r.control,
            r.other,
            r.free,
            join_ids(&r.sent_agents),
            join_ids(&r.lost_to_manager),
            fmt_g9(r.radio_on)
        );
    }
    out
}

/// Summary with every real rounded to 9 significant digits.
pub fn summary_json(summary: &Summary) -> String {
    let rounded = Summary {
        rmse_sync: round_g9(summary.rmse_sync),
        control_fraction: round_g9(summary.control_fraction),
        other_fraction: round_g9(summary.other_fraction),
        free_fraction: round_g9(summary.free_fraction),
        duty_cycle_control: round_g9(summary.duty_cycle_control),
        energy_savings_vs_periodic: round_g9(summary.energy_savings_vs_periodic),
        empirical_cost: round_g9(summary.empirical_cost),
        rounds: summary.rounds,
        seed: summary.seed,
    };
    let mut s = serde_json::to_string_pretty(&rounded).expect("summary serializes");
    s.push('\n');
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            fmt_g9(r.delta),
            r.seed,
            fmt_g9(s.control_fraction),
            fmt_g9(s.other_fraction),
            fmt_g9(s.free_fraction),
            fmt_g9(s.rmse_sync),
            fmt_g9(s.duty_cycle_control),
            fmt_g9(s.energy_savings_vs_periodic),
            fmt_g9(s.empirical_cost)
        );
    }
    out
}

pub fn sweep_summary_header() -> String {
    let mut cols = vec!["delta".to_string(), "runs".to_string()];
    for m in SUMMARY_METRICS {
        for q in ["median", "p25", "p75"] {
            cols.push(format!("{m}_{q}"));
        }
    }
    cols.join(",")
}

pub fn sweep_summary_csv(rows: &[SweepSummaryRow]) -> String {
    let mut out = sweep_summary_header();
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{}", fmt_g9(r.delta), r.runs);
        let metrics: [&Quantiles; 7] = [
            &r.control_fraction,
            &r.other_fraction,
            &r.free_fraction,
            &r.rmse,
            &r.duty_cycle,
            &r.savings,
            &r.cost,
        ];
        for q in metrics {
            let _ = write!(out, ",{},{},{}", fmt_g9(q.median), fmt_g9(q.p25), fmt_g9(q.p75));
        }
        out.push('\n');
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub const CONFIG_FILE: &str = "config.resolved.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

/// Provenance of one `run` or `sweep` invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub status: RunStatus,
    pub output_dir: PathBuf,
    pub config_file: String,
    pub seeds: Vec<u64>,
    pub deltas: Vec<f64>,
    pub outputs: Vec<String>,
    pub wall_clock_s: Option<f64>,
    pub resolved_config: String,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, out: &Path, seeds: Vec<u64>, deltas: Vec<f64>) -> Self {
        Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            status: RunStatus::Running,
            output_dir: out.to_path_buf(),
            config_file: CONFIG_FILE.into(),
            seeds,
            deltas,
            outputs: Vec::new(),
            wall_clock_s: None,
            resolved_config: cfg.to_toml_string(),
        }
    }

    /// Writes the manifest and the resolved config into the output directory.
    pub fn write(&self) -> Result<()> {
        ensure_dir(&self.output_dir)?;
        write_file(&self.output_dir.join(CONFIG_FILE), &self.resolved_config)?;
        let mut json = serde_json::to_string_pretty(self).expect("manifest serializes");
        json.push('\n');
        write_file(&self.output_dir.join(MANIFEST_FILE), &json)
    }

    pub fn finish(&mut self, status: RunStatus, outputs: Vec<String>, wall_clock_s: f64) -> Result<()> {
        self.status = status;
        self.outputs = outputs;
        self.wall_clock_s = Some(wall_clock_s);
        self.write()
    }
}

/// Writes states.csv, rounds.csv and summary.json; returns the file names.
pub fn write_run(dir: &Path, trace: &TraceRecord, summary: &Summary) -> Result<Vec<String>> {
    ensure_dir(dir)?;
    let files = [
        ("states.csv", states_csv(trace)),
        ("rounds.csv", rounds_csv(trace)),
        ("summary.json", summary_json(summary)),
    ];
    for (name, body) in &files {
        write_file(&dir.join(name), body)?;
    }
    Ok(files.iter().map(|(n, _)| n.to_string()).collect())
}

/// Writes sweep.csv and sweep_summary.csv; returns the file names.
pub fn write_sweep(dir: &Path, rows: &[SweepRow], summary: &[SweepSummaryRow]) -> Result<Vec<String>> {
    ensure_dir(dir)?;
    write_file(&dir.join("sweep.csv"), &sweep_csv(rows))?;
    write_file(&dir.join("sweep_summary.csv"), &sweep_summary_csv(summary))?;
    Ok(vec!["sweep.csv".into(), "sweep_summary.csv".into()])
}
