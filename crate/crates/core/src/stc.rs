//! Self-triggered communication of remote control inputs.
//!
//! An agent `i` broadcasts `F[j][i] x_i` for every other agent `j`. Between
//! broadcasts the receivers hold the last value, so the error on the
//! receivers' side is `e(k) = F_out x_i(k) − F_out x_i(k_ℓ)`. At each send
//! the agent predicts `E[eᵀe]` forward (with its own incoming remote input
//! frozen at the current value) and picks the first horizon at which the
//! prediction exceeds `δ`.

use crate::error::{Error, Result};
use crate::numerics::{min_eigenvalue_symmetric, Matrix, PSD_TOLERANCE};

/// Mean and covariance of the predicted error vector.
#[derive(Debug, Clone)]
pub struct ErrorMoments {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

/// `E[eᵀe] = ‖E[e]‖² + tr(Var[e])`.
pub fn expected_sq_norm(moments: &ErrorMoments) -> f64 {
    moments.mean.iter().map(|v| v * v).sum::<f64>() + moments.cov.trace()
}

/// Everything an agent knows at a send instant.
#[derive(Debug, Clone, Copy)]
pub struct PredictionInputs<'a> {
    /// `Ã_i = A_i + B_i F_ii` at the network rate.
    pub closed_loop: &'a Matrix,
    /// `B_i` at the network rate.
    pub input: &'a Matrix,
    /// Per-round process-noise covariance.
    pub sigma: &'a Matrix,
    /// Stacked outgoing gains `F[j][i]`.
    pub outgoing_gain: &'a Matrix,
    pub state: &'a [f64],
    /// Sum of held incoming remote inputs, assumed constant over the horizon.
    pub remote_input: &'a [f64],
    /// The message being sent now.
    pub sent: &'a [f64],
}

impl PredictionInputs<'_> {
    fn check(&self) -> Result<()> {
        let n = self.closed_loop.rows();
        let shapes_ok = self.closed_loop.is_square()
            && self.input.rows() == n
            && self.sigma.shape() == (n, n)
            && self.outgoing_gain.cols() == n
            && self.state.len() == n
            && self.remote_input.len() == self.input.cols()
            && self.sent.len() == self.outgoing_gain.rows();
        if shapes_ok {
            Ok(())
        } else {
            Err(Error::dim("inconsistent prediction inputs"))
        }
    }
}

/// Open-loop state mean and covariance propagation, one round per call to
/// [`MomentRecursion::advance`].
#[derive(Debug, Clone)]
pub struct MomentRecursion<'a> {
    inputs: PredictionInputs<'a>,
    forcing: Vec<f64>,
    mean: Vec<f64>,
    cov: Matrix,
    horizon: usize,
}

impl<'a> MomentRecursion<'a> {
    pub fn new(inputs: PredictionInputs<'a>) -> Result<Self> {
        inputs.check()?;
        let n = inputs.state.len();
        Ok(Self {
            forcing: inputs.input.mul_vec(inputs.remote_input),
            mean: inputs.state.to_vec(),
            cov: Matrix::zeros(n, n),
            horizon: 0,
            inputs,
        })
    }

    /// `x̂ ← Ã x̂ + B u_r`, `S ← Ã S Ãᵀ + Σ`.
    pub fn advance(&mut self) {
        let a = self.inputs.closed_loop;
        self.mean = a
            .mul_vec(&self.mean)
            .iter()
            .zip(&self.forcing)
            .map(|(x, f)| x + f)
            .collect();
        self.cov = (&(&(a * &self.cov) * &a.transpose()) + self.inputs.sigma).symmetrized();
        self.horizon += 1;
        debug_assert!(
            min_eigenvalue_symmetric(&self.cov) >= -PSD_TOLERANCE * self.cov.max_abs().max(1.0),
            "state covariance lost positive semidefiniteness"
        );
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn state_cov(&self) -> &Matrix {
        &self.cov
    }

    /// Error moments at the current horizon.
    pub fn error_moments(&self) -> ErrorMoments {
        let f = self.inputs.outgoing_gain;
        let mean = f
            .mul_vec(&self.mean)
            .iter()
            .zip(self.inputs.sent)
            .map(|(p, s)| p - s)
            .collect();
        let cov = (&(f * &self.cov) * &f.transpose()).symmetrized();
        ErrorMoments { mean, cov }
    }
}

/// Error moments `horizon` rounds ahead.
pub fn predict_error_moments(inputs: PredictionInputs<'_>, horizon: usize) -> Result<ErrorMoments> {
    if horizon < 1 {
        return Err(Error::arg("prediction horizon must be at least one round"));
    }
    let mut rec = MomentRecursion::new(inputs)?;
    for _ in 0..horizon {
        rec.advance();
    }
    Ok(rec.error_moments())
}

/// Smallest `M` in `[2, horizon_cap]` whose predicted `E[eᵀe]` exceeds
/// `delta`; `horizon_cap` when none does.
pub fn find_next_trigger(delta: f64, horizon_cap: usize, inputs: PredictionInputs<'_>) -> Result<usize> {
    if !(delta >= 0.0) {
        return Err(Error::arg(format!("threshold must be non-negative, got {delta}")));
    }
    if horizon_cap < 2 {
        return Err(Error::arg("horizon cap must be at least 2"));
    }
    let mut rec = MomentRecursion::new(inputs)?;
    rec.advance();
    for horizon in 2..=horizon_cap {
        rec.advance();
        if expected_sq_norm(&rec.error_moments()) > delta {
            return Ok(horizon);
        }
    }
    Ok(horizon_cap)
}

/// Event-triggered reference rule `eᵀe > δ`.
pub fn instantaneous_trigger(error: &[f64], delta: f64) -> bool {
    error.iter().map(|v| v * v).sum::<f64>() > delta
}

/// Per-agent trigger bookkeeping.
#[derive(Debug, Clone)]
pub struct TriggerState {
    pub delta: f64,
    pub horizon_cap: usize,
    pub last_send_round: Option<u64>,
    /// Message sent at the last send.
    pub sent_held: Vec<f64>,
    /// Frozen incoming remote input used for the last prediction.
    pub remote_held: Vec<f64>,
    /// Horizon chosen at the last send.
    pub horizon: usize,
    /// Round in which the agent plans to send next.
    pub next_due: u64,
}

impl TriggerState {
    pub fn new(delta: f64, horizon_cap: usize) -> Result<Self> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::arg(format!("threshold must be non-negative, got {delta}")));
        }
        if horizon_cap < 2 {
            return Err(Error::arg("horizon cap must be at least 2"));
        }
        Ok(Self {
            delta,
            horizon_cap,
            last_send_round: None,
            sent_held: Vec::new(),
            remote_held: Vec::new(),
            horizon: 0,
            next_due: 0,
        })
    }

    /// Decides the next horizon for a message about to go out in `round`,
    /// without committing it.
    pub fn plan(&self, inputs: PredictionInputs<'_>) -> Result<usize> {
        find_next_trigger(self.delta, self.horizon_cap, inputs)
    }

    /// Records that the message went out in `round` with horizon `horizon`:
    /// the next send is `horizon − 1` rounds later, so the update lands
    /// exactly `horizon` rounds after this one.
    pub fn commit(&mut self, round: u64, horizon: usize, sent: &[f64], remote: &[f64]) {
        debug_assert!(horizon >= 2 && horizon <= self.horizon_cap);
        self.last_send_round = Some(round);
        self.sent_held = sent.to_vec();
        self.remote_held = remote.to_vec();
        self.horizon = horizon;
        self.next_due = round + horizon as u64 - 1;
    }

    /// Rounds until the next send, as piggybacked on the message.
    pub fn demand(horizon: usize) -> u32 {
        (horizon - 1) as u32
    }
}
