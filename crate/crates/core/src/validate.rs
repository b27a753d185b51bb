//! Statistical and algebraic self-checks behind `wcs-sim validate`.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::net::{flood, BernoulliLoss};
use crate::numerics::{psd_factor, riccati_residual, spectral_radius, Matrix, DARE_TOLERANCE};
use crate::par::{self, Execution};
use crate::rng::{stream, Stream};
use crate::sim::Controllers;
use crate::stc::{expected_sq_norm, find_next_trigger, predict_error_moments, ErrorMoments, PredictionInputs};

/// Agreement band of a Monte Carlo estimate, in standard errors.
pub const Z_LIMIT: f64 = 3.0;
/// Below this many samples a standard error is not trusted.
pub const MIN_SAMPLES: usize = 1_000;
/// Largest relative confidence half-width that still counts as conclusive.
pub const MAX_RELATIVE_HALF_WIDTH: f64 = 0.1;
/// Samples drawn per oracle stream.
pub const CHUNK: usize = 8_192;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

impl Status {
    /// Fail dominates, then inconclusive.
    pub fn combine(self, other: Status) -> Status {
        use Status::*;
        match (self, other) {
            (Fail, _) | (_, Fail) => Fail,
            (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
            _ => Pass,
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<14} {:<12} {}", self.name, self.status, self.detail)
    }
}

/// Sample mean and standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn z_score(&self, expected: f64) -> f64 {
        let diff = self.mean - expected;
        if self.std_err == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff.abs() / self.std_err
        }
    }

    /// Pass within [`Z_LIMIT`] standard errors; inconclusive when the sample
    /// is too small or the interval too wide to discriminate.
    pub fn judge(&self, expected: f64) -> Status {
        let half_width = Z_LIMIT * self.std_err;
        if self.samples < MIN_SAMPLES || half_width > MAX_RELATIVE_HALF_WIDTH * expected.abs().max(1e-300) {
            return Status::Inconclusive;
        }
        if self.z_score(expected) <= Z_LIMIT {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

/// Running mean and squared deviations, mergeable across chunks.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * other.n as f64 / n as f64,
            m2: self.m2 + other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64,
        }
    }

    fn estimate(self) -> Estimate {
        let var = if self.n > 1 { self.m2 / (self.n - 1) as f64 } else { f64::INFINITY };
        Estimate {
            mean: self.mean,
            std_err: (var / self.n.max(1) as f64).sqrt(),
            samples: self.n,
        }
    }
}

/// Samples `0..samples` split into chunks, chunk `k` drawing from oracle
/// stream `tag · 2^20 + k`, so the estimate does not depend on threading.
fn chunked<F>(samples: usize, seed: u64, tag: u64, exec: Execution, draw: F) -> Estimate
where
    F: Fn(&mut crate::rng::SimRng) -> f64 + Sync + Send,
{
    let chunks: Vec<(u64, usize)> = (0..samples.div_ceil(CHUNK))
        .map(|k| (k as u64, CHUNK.min(samples - k * CHUNK)))
        .collect();
    let parts = par::map(&chunks, exec, |&(k, len)| {
        let mut rng = stream(seed, Stream::Oracle((tag << 20) | k));
        let mut m = Moments::default();
        for _ in 0..len {
            m.push(draw(&mut rng));
        }
        m
    });
    parts.into_iter().fold(Moments::default(), Moments::merge).estimate()
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// An owned set of prediction inputs.
#[derive(Debug, Clone)]
pub struct OracleInstance {
    pub closed_loop: Matrix,
    pub input: Matrix,
    pub sigma: Matrix,
    pub outgoing_gain: Matrix,
    pub state: Vec<f64>,
    pub remote_input: Vec<f64>,
    pub sent: Vec<f64>,
}

impl OracleInstance {
    pub fn inputs(&self) -> PredictionInputs<'_> {
        PredictionInputs {
            closed_loop: &self.closed_loop,
            input: &self.input,
            sigma: &self.sigma,
            outgoing_gain: &self.outgoing_gain,
            state: &self.state,
            remote_input: &self.remote_input,
            sent: &self.sent,
        }
    }

    /// Random dense instance with `states` states, one input and
    /// `outputs` message entries; the closed loop has spectral radius in
    /// `[0.6, 1.02]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, states: usize, outputs: usize) -> Result<Self> {
        let g = Matrix::new(states, states, normal_vec(rng, states * states))?;
        let target = rng.random_range(0.6..1.02);
        let rho = spectral_radius(&g);
        let closed_loop = g.scale(target / rho);
        let l = Matrix::new(states, states, normal_vec(rng, states * states))?;
        let sigma = (&l * &l.transpose()).scale(0.01);
        let outgoing_gain = Matrix::new(outputs, states, normal_vec(rng, outputs * states))?;
        let state = normal_vec(rng, states);
        let mut sent = outgoing_gain.mul_vec(&state);
        for s in &mut sent {
            *s += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(Self {
            closed_loop,
            input: Matrix::new(states, 1, normal_vec(rng, states))?,
            sigma,
            outgoing_gain,
            state,
            remote_input: vec![rng.sample(StandardNormal)],
            sent,
        })
    }

    /// One frozen-input rollout over `horizon` rounds; returns `eᵀe`.
    fn rollout<R: Rng + ?Sized>(&self, noise_factor: &Matrix, horizon: usize, rng: &mut R) -> f64 {
        let n = self.state.len();
        let drive = self.input.mul_vec(&self.remote_input);
        let mut x = self.state.clone();
        for _ in 0..horizon {
            let w = noise_factor.mul_vec(&normal_vec(rng, n));
            let ax = self.closed_loop.mul_vec(&x);
            for k in 0..n {
                x[k] = ax[k] + drive[k] + w[k];
            }
        }
        self.outgoing_gain
            .mul_vec(&x)
            .iter()
            .zip(&self.sent)
            .map(|(u, s)| (u - s).powi(2))
            .sum()
    }
}

/// Monte Carlo estimate of `E[eᵀe]` at `horizon` from `samples` rollouts.
pub fn monte_carlo_sq_norm(
    instance: &OracleInstance,
    horizon: usize,
    samples: usize,
    seed: u64,
    tag: u64,
    exec: Execution,
) -> Result<Estimate> {
    let factor = psd_factor(&instance.sigma)?;
    Ok(chunked(samples, seed, tag, exec, |rng| instance.rollout(&factor, horizon, rng)))
}

/// Direct sampling estimate of `E[eᵀe]` for `e ~ N(mean, cov)`.
pub fn sample_sq_norm(moments: &ErrorMoments, samples: usize, seed: u64, tag: u64, exec: Execution) -> Result<Estimate> {
    let factor = psd_factor(&moments.cov)?;
    let m = moments.mean.len();
    Ok(chunked(samples, seed, tag, exec, |rng| {
        let z = factor.mul_vec(&normal_vec(rng, m));
        moments.mean.iter().zip(&z).map(|(a, b)| (a + b).powi(2)).sum()
    }))
}

pub struct OracleOptions {
    pub instances: usize,
    pub horizons: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            instances: 20,
            horizons: vec![2, 5, 10],
            samples: 100_000,
            seed: 2024,
            exec: Execution::available(),
        }
    }
}

/// One analytic-against-sampled comparison.
#[derive(Debug, Clone, Copy)]
pub struct OracleCase {
    pub instance: usize,
    pub horizon: usize,
    pub analytic: f64,
    pub estimate: Estimate,
    pub status: Status,
}

/// Compares the analytic prediction with Monte Carlo rollouts on random
/// 4-state instances, plus `extra` instances given by the caller.
pub fn trigger_oracle_cases(opts: &OracleOptions, extra: &[OracleInstance]) -> Result<Vec<OracleCase>> {
    let mut rng = stream(opts.seed, Stream::Oracle(1 << 39));
    let mut instances = Vec::with_capacity(opts.instances + extra.len());
    for _ in 0..opts.instances {
        instances.push(OracleInstance::random(&mut rng, 4, 4)?);
    }
    instances.extend(extra.iter().cloned());
    let mut cases = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        for &h in &opts.horizons {
            let analytic = expected_sq_norm(&predict_error_moments(inst.inputs(), h)?);
            let tag = (i * 64 + h) as u64;
            let estimate = monte_carlo_sq_norm(inst, h, opts.samples, opts.seed, tag, opts.exec)?;
            cases.push(OracleCase {
                instance: i,
                horizon: h,
                analytic,
                estimate,
                status: estimate.judge(analytic),
            });
        }
    }
    Ok(cases)
}

/// The scalar random-walk case: `σ² = 0.01`, `δ = 0.035` must give `M = 4`.
pub fn scalar_trigger_case() -> Result<usize> {
    let one = Matrix::scalar(1.0);
    find_next_trigger(
        0.035,
        40,
        PredictionInputs {
            closed_loop: &one,
            input: &Matrix::scalar(0.0),
            sigma: &Matrix::scalar(0.01),
            outgoing_gain: &one,
            state: &[0.0],
            remote_input: &[0.0],
            sent: &[0.0],
        },
    )
}

pub fn trigger_oracle_check(opts: &OracleOptions, extra: &[OracleInstance]) -> Result<CheckReport> {
    let cases = trigger_oracle_cases(opts, extra)?;
    let status = cases.iter().fold(Status::Pass, |s, c| s.combine(c.status));
    let worst = cases
        .iter()
        .max_by(|a, b| a.estimate.z_score(a.analytic).total_cmp(&b.estimate.z_score(b.analytic)));
    let scalar = scalar_trigger_case()?;
    let status = if scalar == 4 { status } else { Status::Fail };
    let mut detail = format!("{} cases, {} samples each", cases.len(), opts.samples);
    if let Some(w) = worst {
        detail += &format!(
            "; worst z={:.2} (instance {}, M={}, analytic {:.6}, sampled {:.6} ± {:.6})",
            w.estimate.z_score(w.analytic),
            w.instance,
            w.horizon,
            w.analytic,
            w.estimate.mean,
            w.estimate.std_err
        );
    }
    detail += &format!("; scalar case M={scalar} (expected 4)");
    Ok(CheckReport {
        name: "trigger-oracle",
        status,
        detail,
    })
}

/// Residuals of a synthesized gain on the augmented system.
#[derive(Debug, Clone, Copy)]
pub struct DareDiagnostics {
    /// `‖Ric(P) − P‖_F`.
    pub riccati_residual: f64,
    /// `‖Q + FᵀRF + (A+BF)ᵀP(A+BF) − P‖_F` for the gain under test.
    pub closed_loop_residual: f64,
    pub spectral_radius: f64,
}

impl DareDiagnostics {
    pub fn passes(&self) -> bool {
        self.riccati_residual <= DARE_TOLERANCE
            && self.closed_loop_residual <= DARE_TOLERANCE
            && self.spectral_radius < 1.0
    }
}

/// Checks `controllers`' DARE solution; `perturb_gain` scales the gain by
/// `1 + perturb_gain` before the gain-dependent checks.
pub fn dare_diagnostics(controllers: &Controllers, perturb_gain: Option<f64>) -> Result<DareDiagnostics> {
    let aug = &controllers.gains.augmented;
    let p = &controllers.gains.dare.p;
    let gain = match perturb_gain {
        Some(eps) => controllers.gains.full.scale(1.0 + eps),
        None => controllers.gains.full.clone(),
    };
    let acl = &aug.a + &(&aug.b * &gain);
    let lyap = &(&aug.q + &(&(&gain.transpose() * &aug.r) * &gain)) + &(&(&acl.transpose() * p) * &acl);
    Ok(DareDiagnostics {
        riccati_residual: riccati_residual(&aug.a, &aug.b, &aug.q, &aug.r, p)?,
        closed_loop_residual: (&lyap - p).frobenius_norm(),
        spectral_radius: spectral_radius(&acl),
    })
}

pub fn dare_check(controllers: &Controllers, perturb_gain: Option<f64>) -> Result<CheckReport> {
    let d = dare_diagnostics(controllers, perturb_gain)?;
    Ok(CheckReport {
        name: "dare",
        status: if d.passes() { Status::Pass } else { Status::Fail },
        detail: format!(
            "riccati residual {:.3e}, closed-loop residual {:.3e} (limit {:.0e}), spectral radius {:.6}",
            d.riccati_residual, d.closed_loop_residual, DARE_TOLERANCE, d.spectral_radius
        ),
    })
}

/// Per-receiver loss counts over `floods` floods from `sender`.
pub fn flood_loss_counts(p_rx: f64, num_nodes: usize, sender: usize, floods: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream(seed, Stream::Oracle(1 << 38));
    let mut loss = BernoulliLoss { p_rx, rng: &mut rng };
    let mut lost = vec![0usize; num_nodes];
    for k in 0..floods {
        for (node, got) in flood(sender, Some(k % 5), num_nodes, &mut loss).into_iter().enumerate() {
            if !got {
                lost[node] += 1;
            }
        }
    }
    lost
}

/// Every receiver's loss rate against `1 − p_rx` within `Z_LIMIT` binomial
/// standard deviations.
pub fn flood_check(cfg: &ExperimentConfig, floods: usize, seed: u64) -> CheckReport {
    let p_rx = cfg.protocol.p_rx;
    let nodes = cfg.protocol.num_nodes;
    let sender = 0;
    let lost = flood_loss_counts(p_rx, nodes, sender, floods, seed);
    let q = 1.0 - p_rx;
    let sd = (p_rx * q / floods.max(1) as f64).sqrt();
    let mut worst = 0.0f64;
    let mut status = Status::Pass;
    for (node, &l) in lost.iter().enumerate() {
        if node == sender {
            continue;
        }
        let rate = l as f64 / floods.max(1) as f64;
        if q == 0.0 {
            if l > 0 {
                status = Status::Fail;
            }
            continue;
        }
        let z = (rate - q).abs() / sd;
        worst = worst.max(z);
        if z > Z_LIMIT {
            status = Status::Fail;
        }
    }
    // the normal approximation needs a few expected events per receiver
    if q > 0.0 && floods as f64 * q.min(p_rx) < 10.0 {
        status = Status::Inconclusive;
    }
    let total: usize = lost.iter().sum();
    CheckReport {
        name: "flood-rate",
        status,
        detail: format!(
            "{floods} floods to {} receivers, {total} losses, expected rate {q:.4}, worst z={worst:.2}",
            nodes - 1
        ),
    }
}

pub struct ValidateOptions {
    pub samples: usize,
    pub perturb_gain: Option<f64>,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            samples: 100_000,
            perturb_gain: None,
            seed: 2024,
            exec: Execution::available(),
        }
    }
}

/// The cart-pole instance of agent `agent` at a representative state.
pub fn cartpole_instance(controllers: &Controllers, agent: usize) -> OracleInstance {
    let state = vec![0.05, -0.1, 0.02, 0.3];
    let sent = controllers.outgoing[agent].mul_vec(&state);
    OracleInstance {
        closed_loop: controllers.gains.closed_loop[agent].clone(),
        input: controllers.network.b.clone(),
        sigma: controllers.network.sigma.clone(),
        outgoing_gain: controllers.outgoing[agent].clone(),
        remote_input: vec![0.2],
        state,
        sent,
    }
}

/// Runs all checks for `cfg`.
pub fn run_all(cfg: &ExperimentConfig, opts: &ValidateOptions) -> Result<Vec<CheckReport>> {
    cfg.validate()?;
    let controllers = Controllers::build(cfg)?;
    let oracle = OracleOptions {
        samples: opts.samples,
        seed: opts.seed,
        exec: opts.exec,
        ..OracleOptions::default()
    };
    let extra = [cartpole_instance(&controllers, 0)];
    Ok(vec![
        trigger_oracle_check(&oracle, &extra)?,
        dare_check(&controllers, opts.perturb_gain)?,
        flood_check(cfg, opts.samples, opts.seed),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_merge_matches_single_pass() {
        let values: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut whole = Moments::default();
        values.iter().for_each(|&v| whole.push(v));
        let mut a = Moments::default();
        let mut b = Moments::default();
        values[..313].iter().for_each(|&v| a.push(v));
        values[313..].iter().for_each(|&v| b.push(v));
        let merged = a.merge(b);
        assert!((merged.mean - whole.mean).abs() < 1e-12);
        assert!((merged.m2 - whole.m2).abs() < 1e-8);
    }

    #[test]
    fn estimates_do_not_depend_on_execution() {
        let mut rng = stream(5, Stream::Oracle(3));
        let inst = OracleInstance::random(&mut rng, 4, 4).unwrap();
        let a = monte_carlo_sq_norm(&inst, 5, 20_000, 1, 0, Execution::Parallel).unwrap();
        let b = monte_carlo_sq_norm(&inst, 5, 20_000, 1, 0, Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn judging() {
        let e = Estimate { mean: 1.0, std_err: 0.01, samples: 100_000 };
        assert_eq!(e.judge(1.02), Status::Pass);
        assert_eq!(e.judge(1.05), Status::Fail);
        let small = Estimate { mean: 1.0, std_err: 0.01, samples: 10 };
        assert_eq!(small.judge(1.5), Status::Inconclusive);
        let wide = Estimate { mean: 1.0, std_err: 0.5, samples: 100_000 };
        assert_eq!(wide.judge(1.0), Status::Inconclusive);
        assert_eq!(Status::Pass.combine(Status::Inconclusive), Status::Inconclusive);
        assert_eq!(Status::Inconclusive.combine(Status::Fail), Status::Fail);
    }

    #[test]
    fn scalar_case_gives_four() {
        assert_eq!(scalar_trigger_case().unwrap(), 4);
    }

    #[test]
    fn perturbed_gain_breaks_the_dare_check() {
        let cfg = ExperimentConfig::default();
        let c = Controllers::build(&cfg).unwrap();
        let ok = dare_diagnostics(&c, None).unwrap();
        assert!(ok.passes(), "{ok:?}");
        let bad = dare_diagnostics(&c, Some(0.05)).unwrap();
        assert!(!bad.passes());
        assert!(bad.closed_loop_residual > 1e-3);
    }

    #[test]
    fn few_samples_are_inconclusive() {
        let cfg = ExperimentConfig::default();
        let r = run_all(&cfg, &ValidateOptions { samples: 10, ..Default::default() }).unwrap();
        assert_eq!(r[0].status, Status::Inconclusive, "{}", r[0]);
        assert_eq!(r[1].status, Status::Pass);
        assert_eq!(r[2].status, Status::Inconclusive, "{}", r[2]);
    }
}
