//! Threshold-by-seed sweeps and their per-threshold quantiles.

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::percentile;
use crate::par::{self, Execution};
use crate::sim::{run_experiment, Summary};

/// One experiment of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub delta: f64,
    pub seed: u64,
    pub summary: Summary,
}

/// Runs the cross product `deltas × seeds`; rows come back delta-major in
/// the given order regardless of execution mode.
pub fn run_sweep(base: &ExperimentConfig, deltas: &[f64], seeds: &[u64], exec: Execution) -> Result<Vec<SweepRow>> {
    if deltas.is_empty() || seeds.is_empty() {
        return Err(Error::arg("a sweep needs at least one delta and one seed"));
    }
    let jobs: Vec<ExperimentConfig> = deltas
        .iter()
        .flat_map(|&d| seeds.iter().map(move |&s| base.with_delta_seed(d, s)))
        .collect();
    for job in &jobs {
        job.validate()?;
    }
    par::map(&jobs, exec, |cfg| {
        run_experiment(cfg).map(|(_, summary)| SweepRow {
            delta: cfg.trigger.delta,
            seed: cfg.sim.seed,
            summary,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantiles {
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Self {
        Self {
            median: percentile(values, 0.5),
            p25: percentile(values, 0.25),
            p75: percentile(values, 0.75),
        }
    }
}

/// Aggregate over the seeds of one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSummaryRow {
    pub delta: f64,
    pub runs: usize,
    pub control_fraction: Quantiles,
    pub other_fraction: Quantiles,
    pub free_fraction: Quantiles,
    pub rmse: Quantiles,
    pub duty_cycle: Quantiles,
    pub savings: Quantiles,
    pub cost: Quantiles,
}

/// Groups rows by delta, in order of first appearance.
pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummaryRow> {
    let mut deltas: Vec<f64> = Vec::new();
    for r in rows {
        if !deltas.iter().any(|d| d.to_bits() == r.delta.to_bits()) {
            deltas.push(r.delta);
        }
    }
    deltas
        .into_iter()
        .map(|delta| {
            let group: Vec<&Summary> = rows
                .iter()
                .filter(|r| r.delta.to_bits() == delta.to_bits())
                .map(|r| &r.summary)
                .collect();
            let q = |f: fn(&Summary) -> f64| Quantiles::of(&group.iter().map(|s| f(s)).collect::<Vec<_>>());
            SweepSummaryRow {
                delta,
                runs: group.len(),
                control_fraction: q(|s| s.control_fraction),
                other_fraction: q(|s| s.other_fraction),
                free_fraction: q(|s| s.free_fraction),
                rmse: q(|s| s.rmse_sync),
                duty_cycle: q(|s| s.duty_cycle_control),
                savings: q(|s| s.energy_savings_vs_periodic),
                cost: q(|s| s.empirical_cost),
            }
        })
        .collect()
}
