//! Control, bandwidth and energy metrics over a trace.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::sim::{RoundRecord, StepRecord, TraceRecord};

/// RMS deviation of each agent's position from the instantaneous mean,
/// `sqrt( Σ_k Σ_i (p_i(k) − p̄(k))² / (N · steps) )`.
///
/// `positions[k]` holds every agent's position at step `k`.
pub fn rmse_sync_positions<P: AsRef<[f64]>>(positions: &[P]) -> Result<f64> {
    if positions.is_empty() {
        return Err(Error::arg("RMSE needs at least one step"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for step in positions {
        let p = step.as_ref();
        if p.is_empty() {
            return Err(Error::arg("step without agents"));
        }
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        sum += p.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        count += p.len();
    }
    Ok((sum / count as f64).sqrt())
}

/// Synchronization RMSE on the cart positions (state 0) of `steps`.
pub fn rmse_sync(trace: &TraceRecord, steps: &[StepRecord]) -> Result<f64> {
    let positions: Vec<Vec<f64>> = steps
        .iter()
        .map(|s| (0..trace.agents).map(|i| trace.state_of(s, i)[0]).collect())
        .collect();
    rmse_sync_positions(&positions)
}

/// Average share of the `K` data slots per slot type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fractions {
    pub control: f64,
    pub other: f64,
    pub free: f64,
}

pub fn bandwidth_fractions(rounds: &[RoundRecord], max_slots: usize) -> Fractions {
    if rounds.is_empty() {
        return Fractions {
            control: 0.0,
            other: 0.0,
            free: 1.0,
        };
    }
    let k = max_slots as f64;
    let n = rounds.len() as f64;
    let control = rounds.iter().map(|r| r.control as f64).sum::<f64>() / (k * n);
    let other = rounds.iter().map(|r| r.other as f64).sum::<f64>() / (k * n);
    // free as the remainder keeps the triple summing to one exactly
    Fractions {
        control,
        other,
        free: 1.0 - control - other,
    }
}

pub fn mean_control_slots(rounds: &[RoundRecord]) -> f64 {
    if rounds.is_empty() {
        return 0.0;
    }
    rounds.iter().map(|r| r.control as f64).sum::<f64>() / rounds.len() as f64
}

/// Radio-on fraction due to control traffic:
/// `mean_control_slots · slot_len / T`, plus the schedule slot if requested.
pub fn duty_cycle_control(
    mean_control_slots: f64,
    slot_len: f64,
    period: f64,
    include_schedule_slot: bool,
) -> f64 {
    let slots = mean_control_slots + if include_schedule_slot { 1.0 } else { 0.0 };
    slots * slot_len / period
}

/// Communication energy saved relative to sending in every slot,
/// `1 − mean_control_slots / K` (schedule slot counted on both sides if
/// requested).
pub fn energy_savings(mean_control_slots: f64, max_slots: usize, include_schedule_slot: bool) -> f64 {
    let extra = if include_schedule_slot { 1.0 } else { 0.0 };
    1.0 - (mean_control_slots + extra) / (max_slots as f64 + extra)
}

/// Time average of `x̃ᵀ Q x̃ + ũᵀ R ũ` over the stacked states and inputs.
pub fn empirical_cost(steps: &[StepRecord], q: &Matrix, r: &Matrix) -> Result<f64> {
    if steps.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in steps {
        if s.states.len() != q.rows() || s.inputs.len() != r.rows() {
            return Err(Error::dim("trace does not match the cost weights"));
        }
        total += quad(q, &s.states) + quad(r, &s.inputs);
    }
    Ok(total / steps.len() as f64)
}

fn quad(m: &Matrix, v: &[f64]) -> f64 {
    m.mul_vec(v).iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Percentile with linear interpolation between order statistics
/// (`q` in `[0, 1]`).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Slot;
    use proptest::prelude::*;

    fn round(control: usize, other: usize, k: usize) -> RoundRecord {
        let mut slots = vec![Slot::Control(0); control];
        slots.extend(vec![Slot::Other(9); other]);
        slots.resize(k, Slot::Free);
        RoundRecord {
            round: 0,
            time: 0.0,
            slots,
            control,
            other,
            free: k - control - other,
            sent_agents: vec![],
            lost_to_manager: vec![],
            radio_on: 0.0,
        }
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse_sync_positions(&vec![vec![1.0, 1.0, 1.0]; 4]).unwrap(), 0.0);
        assert!((rmse_sync_positions(&vec![vec![0.0, 2.0]; 3]).unwrap() - 1.0).abs() < 1e-15);
        assert!(rmse_sync_positions::<Vec<f64>>(&[]).is_err());
    }

    proptest! {
        #[test]
        fn rmse_ignores_common_offset(p in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 1..20), offset in -100.0..100.0f64) {
            let shifted: Vec<Vec<f64>> = p.iter().map(|s| s.iter().map(|v| v + offset).collect()).collect();
            let a = rmse_sync_positions(&p).unwrap();
            let b = rmse_sync_positions(&shifted).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn fractions() {
        let f = bandwidth_fractions(&vec![round(5, 0, 5); 3], 5);
        assert_eq!((f.control, f.other, f.free), (1.0, 0.0, 0.0));
        let f = bandwidth_fractions(&vec![round(2, 1, 5); 7], 5);
        assert!((f.control - 0.4).abs() < 1e-15);
        assert!((f.other - 0.2).abs() < 1e-15);
        assert!((f.free - 0.4).abs() < 1e-15);
    }

    #[test]
    fn duty_and_savings() {
        assert!((duty_cycle_control(5.0, 0.008, 0.05, false) - 0.8).abs() < 1e-15);
        assert_eq!(duty_cycle_control(0.0, 0.008, 0.05, false), 0.0);
        assert!((energy_savings(0.55, 5, false) - 0.89).abs() < 1e-12);
        assert_eq!(energy_savings(5.0, 5, false), 0.0);
        assert_eq!(energy_savings(5.0, 5, true), 0.0);
        assert!((duty_cycle_control(0.0, 0.008, 0.05, true) - 0.16).abs() < 1e-15);
    }

    #[test]
    fn cost_cases() {
        let q = Matrix::scalar(2.0);
        let r = Matrix::scalar(0.5);
        let zero = vec![StepRecord { time: 0.0, states: vec![0.0], inputs: vec![0.0], remote: vec![0.0] }; 3];
        assert_eq!(empirical_cost(&zero, &q, &r).unwrap(), 0.0);
        // (2·1 + 0.5·4) + (2·4 + 0.5·1) + (2·0 + 0.5·0) = 12.5, over 3 steps
        let steps = vec![
            StepRecord { time: 0.0, states: vec![1.0], inputs: vec![2.0], remote: vec![0.0] },
            StepRecord { time: 0.1, states: vec![2.0], inputs: vec![-1.0], remote: vec![0.0] },
            StepRecord { time: 0.2, states: vec![0.0], inputs: vec![0.0], remote: vec![0.0] },
        ];
        assert!((empirical_cost(&steps, &q, &r).unwrap() - 12.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn percentiles() {
        let v = [3.0, 1.0, 2.0];
        assert_eq!(percentile(&v, 0.5), 2.0);
        assert_eq!(percentile(&v, 0.25), 1.5);
        assert_eq!(percentile(&v, 0.75), 2.5);
        assert_eq!(percentile(&[4.0], 0.25), 4.0);
    }
}
