//! Experiment configuration and its TOML file format.
//!
//! ```toml
//! [plant]     # cart-pole parameters, diagonal noise density
//! [cost]      # diagonal Q_i, scalar R_i, diagonal Q_sync
//! [protocol]  # round period, slots, flood reliability, nodes
//! [trigger]   # threshold and horizon cap
//! [sim]       # agents, rates, duration, seed, policy, disturbance
//! ```
//!
//! Every key is optional and unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lqr::CostSpec;
use crate::net::ProtocolConfig;
use crate::numerics::Matrix;
use crate::plant::{CartPoleParams, Disturbance, DisturbanceKind};
use crate::sched::PolicyKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
    pub cart_friction: f64,
    /// Diagonal of the process-noise density, state²/s.
    pub noise_density: Vec<f64>,
}

impl Default for PlantConfig {
    fn default() -> Self {
        let p = CartPoleParams::default();
        Self {
            cart_mass: p.cart_mass,
            pole_mass: p.pole_mass,
            pole_length: p.pole_length,
            gravity: p.gravity,
            cart_friction: p.cart_friction,
            noise_density: vec![0.0, 1e-4, 0.0, 1e-4],
        }
    }
}

impl PlantConfig {
    pub fn params(&self) -> CartPoleParams {
        CartPoleParams {
            cart_mass: self.cart_mass,
            pole_mass: self.pole_mass,
            pole_length: self.pole_length,
            gravity: self.gravity,
            cart_friction: self.cart_friction,
        }
    }

    pub fn noise_density_matrix(&self) -> Matrix {
        Matrix::diag(&self.noise_density)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    /// Diagonal of every `Q_i`.
    pub q_local: Vec<f64>,
    /// Every `R_i` (single input).
    pub r_local: f64,
    /// Diagonal of `Q_sync`.
    pub q_sync: Vec<f64>,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            q_local: vec![10.0, 1.0, 10.0, 1.0],
            r_local: 0.01,
            q_sync: vec![20.0, 0.0, 0.0, 0.0],
        }
    }
}

impl CostConfig {
    pub fn spec(&self, agents: usize) -> CostSpec {
        CostSpec::uniform(
            agents,
            Matrix::diag(&self.q_local),
            Matrix::scalar(self.r_local),
            Matrix::diag(&self.q_sync),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriggerConfig {
    /// Threshold on the expected squared input error, input units².
    pub delta: f64,
    /// Longest horizon `M` considered, rounds.
    pub horizon_cap: usize,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            delta: 0.03,
            horizon_cap: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisturbanceShape {
    None,
    Sine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub agents: usize,
    /// Local control period, seconds.
    pub dt_local: f64,
    pub duration: f64,
    /// Initial stretch excluded from summary statistics, seconds.
    pub warmup: f64,
    pub seed: u64,
    pub policy: PolicyKind,
    pub disturbance: DisturbanceShape,
    pub disturbance_amplitude: f64,
    pub disturbance_period: f64,
    pub disturbance_agent: usize,
    /// Count the schedule slot in duty cycle and savings.
    pub include_schedule_slot: bool,
    /// Initial cart positions, m; empty means all at rest at the origin.
    pub initial_positions: Vec<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            agents: 5,
            dt_local: 0.01,
            duration: 120.0,
            warmup: 5.0,
            seed: 42,
            policy: PolicyKind::Default,
            disturbance: DisturbanceShape::Sine,
            disturbance_amplitude: 5.0,
            disturbance_period: 3.6,
            disturbance_agent: 1,
            include_schedule_slot: false,
            initial_positions: Vec::new(),
        }
    }
}

/// Complete description of one experiment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub plant: PlantConfig,
    pub cost: CostConfig,
    pub protocol: ProtocolConfig,
    pub trigger: TriggerConfig,
    pub sim: SimConfig,
}

/// A validation failure tied to one key.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub section: &'static str,
    pub key: &'static str,
    pub message: String,
}

fn field(section: &'static str, key: &'static str, message: impl Into<String>) -> FieldError {
    FieldError {
        section,
        key,
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn agents(&self) -> usize {
        self.sim.agents
    }

    pub fn period(&self) -> f64 {
        self.protocol.period
    }

    pub fn steps_per_round(&self) -> usize {
        (self.protocol.period / self.sim.dt_local).round() as usize
    }

    pub fn rounds(&self) -> u64 {
        (self.sim.duration / self.protocol.period + 1e-9).floor() as u64
    }

    pub fn disturbance(&self) -> Disturbance {
        let kind = match self.sim.disturbance {
            DisturbanceShape::None => DisturbanceKind::None,
            DisturbanceShape::Sine => DisturbanceKind::Sine {
                amplitude: self.sim.disturbance_amplitude,
                period: self.sim.disturbance_period,
            },
        };
        Disturbance {
            kind,
            target_agent: self.sim.disturbance_agent,
        }
    }

    pub fn cost_spec(&self) -> CostSpec {
        self.cost.spec(self.sim.agents)
    }

    /// Copy with a different threshold and seed.
    pub fn with_delta_seed(&self, delta: f64, seed: u64) -> Self {
        let mut c = self.clone();
        c.trigger.delta = delta;
        c.sim.seed = seed;
        c
    }

    pub fn check(&self) -> std::result::Result<(), FieldError> {
        let sim = &self.sim;
        let proto = &self.protocol;
        let p = &self.plant;

        for (key, v) in [
            ("cart_mass", p.cart_mass),
            ("pole_mass", p.pole_mass),
            ("pole_length", p.pole_length),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(field("plant", key, format!("must be positive, got {v}")));
            }
        }
        if !(p.gravity >= 0.0) {
            return Err(field("plant", "gravity", "must be non-negative"));
        }
        if !(p.cart_friction >= 0.0) {
            return Err(field("plant", "cart_friction", "must be non-negative"));
        }
        if p.noise_density.len() != 4 || p.noise_density.iter().any(|v| !(*v >= 0.0)) {
            return Err(field(
                "plant",
                "noise_density",
                "needs four non-negative diagonal entries",
            ));
        }

        let c = &self.cost;
        if c.q_local.len() != 4 || c.q_local.iter().any(|v| !(*v >= 0.0)) {
            return Err(field("cost", "q_local", "needs four non-negative diagonal entries"));
        }
        if c.q_sync.len() != 4 || c.q_sync.iter().any(|v| !(*v >= 0.0)) {
            return Err(field("cost", "q_sync", "needs four non-negative diagonal entries"));
        }
        if !(c.r_local > 0.0) {
            return Err(field("cost", "r_local", "must be positive"));
        }

        if !(self.trigger.delta >= 0.0) || !self.trigger.delta.is_finite() {
            return Err(field("trigger", "delta", "must be a non-negative number"));
        }
        if self.trigger.horizon_cap < 2 {
            return Err(field("trigger", "horizon_cap", "must be at least 2"));
        }

        if sim.agents < 2 {
            return Err(field("sim", "agents", "need at least two agents"));
        }
        if !(sim.duration > 0.0) || !sim.duration.is_finite() {
            return Err(field("sim", "duration", format!("must be positive, got {}", sim.duration)));
        }
        if !(sim.dt_local > 0.0) {
            return Err(field("sim", "dt_local", "must be positive"));
        }
        let ratio = proto.period / sim.dt_local;
        if !(proto.period > 0.0) || (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(field(
                "sim",
                "dt_local",
                format!("round period {} is not a multiple of {}", proto.period, sim.dt_local),
            ));
        }
        if sim.duration < proto.period * (1.0 - 1e-9) {
            return Err(field("sim", "duration", "shorter than one round"));
        }
        if !(sim.warmup >= 0.0) || sim.warmup >= sim.duration {
            return Err(field("sim", "warmup", "must be non-negative and shorter than the run"));
        }
        if sim.disturbance == DisturbanceShape::Sine {
            if !(sim.disturbance_period > 0.0) {
                return Err(field("sim", "disturbance_period", "must be positive"));
            }
            if !sim.disturbance_amplitude.is_finite() {
                return Err(field("sim", "disturbance_amplitude", "must be finite"));
            }
            if sim.disturbance_agent >= sim.agents {
                return Err(field("sim", "disturbance_agent", "is not an agent"));
            }
        }
        if !sim.initial_positions.is_empty() && sim.initial_positions.len() != sim.agents {
            return Err(field("sim", "initial_positions", "needs one entry per agent"));
        }
        proto
            .validate(sim.agents)
            .map_err(|e| match e {
                Error::Config(msg) => field("protocol", protocol_key(&msg), msg),
                other => field("protocol", "period", other.to_string()),
            })?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|e| Error::Config(format!("[{}] {}: {}", e.section, e.key, e.message)))
    }

    /// Parses and validates configuration text. Errors name the offending
    /// line when it can be located.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            let msg = e.message().trim().to_string();
            Error::Config(match line {
                Some(l) => format!("line {l}: {msg}"),
                None => msg,
            })
        })?;
        cfg.check().map_err(|e| {
            let prefix = match find_key_line(text, e.section, e.key) {
                Some(l) => format!("line {l}: "),
                None => String::new(),
            };
            Error::Config(format!("{prefix}[{}] {}: {}", e.section, e.key, e.message))
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Fully resolved TOML, including derived defaults.
    pub fn to_toml_string(&self) -> String {
        let mut resolved = self.clone();
        if resolved.protocol.other_nodes.is_none() {
            resolved.protocol.other_nodes = Some(self.protocol.resolved_other_nodes(self.sim.agents));
        }
        toml::to_string(&resolved).expect("configuration always serializes")
    }
}

fn protocol_key(msg: &str) -> &'static str {
    if msg.contains("p_rx") {
        "p_rx"
    } else if msg.contains("manager") {
        "manager"
    } else if msg.contains("other node") {
        "other_nodes"
    } else if msg.contains("nodes") {
        "num_nodes"
    } else if msg.contains("max_slots") {
        "max_slots"
    } else if msg.contains("slots of") {
        "slot_len"
    } else {
        "period"
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// 1-based line of `key = ...` inside `[section]`.
fn find_key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = "";
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}
