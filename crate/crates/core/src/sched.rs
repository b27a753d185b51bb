//! Online scheduler run by the network manager.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::net::{NodeId, RoundSchedule, Slot};

/// The manager's view of pending control demands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemandTable {
    /// Round in which each agent must next be given a slot.
    pub next_due: Vec<u64>,
    /// Next other-traffic node to serve, as an index into `other_nodes`.
    pub rr_pointer: usize,
    pub other_nodes: Vec<NodeId>,
}

impl DemandTable {
    /// Every agent starts out due in round 0.
    pub fn new(agents: usize, other_nodes: Vec<NodeId>) -> Self {
        Self {
            next_due: vec![0; agents],
            rr_pointer: 0,
            other_nodes,
        }
    }

    pub fn due_agents(&self, round: u64) -> impl Iterator<Item = usize> + '_ {
        self.next_due
            .iter()
            .enumerate()
            .filter(move |(_, &due)| due <= round)
            .map(|(agent, _)| agent)
    }

    /// Advances the round-robin pointer past the other-traffic grants in
    /// `schedule`.
    pub fn record_schedule(&mut self, schedule: &RoundSchedule) {
        if self.other_nodes.is_empty() {
            return;
        }
        let granted = schedule.other_count();
        self.rr_pointer = (self.rr_pointer + granted) % self.other_nodes.len();
    }

    /// Replaces the entries of reporting agents; everyone else is untouched.
    pub fn update(&mut self, extracted: &[(usize, u64)]) {
        for &(agent, due) in extracted {
            self.next_due[agent] = due;
        }
    }
}

/// Maps the demand table to the schedule of one round. Implementations must
/// allocate every due agent (up to `K`) before any other traffic.
pub trait SchedulingPolicy: Send + Sync {
    /// Schedule for `round`; an agent is due when `next_due <= round`.
    fn plan(&self, demands: &DemandTable, round: u64, max_slots: usize) -> RoundSchedule;

    fn name(&self) -> &'static str;
}

/// Due agents in ascending id order, truncated to `max_slots`; overflow
/// stays due and is served in later rounds.
fn control_slots(demands: &DemandTable, round: u64, max_slots: usize) -> Vec<Slot> {
    demands
        .due_agents(round)
        .take(max_slots)
        .map(Slot::Control)
        .collect()
}

fn fill(demands: &DemandTable, slots: &mut Vec<Slot>, max_slots: usize, other_grants: usize) {
    let others = &demands.other_nodes;
    let spare = max_slots - slots.len();
    let grants = if others.is_empty() {
        0
    } else {
        other_grants.min(spare).min(others.len())
    };
    for k in 0..grants {
        slots.push(Slot::Other(others[(demands.rr_pointer + k) % others.len()]));
    }
    slots.resize(max_slots, Slot::Free);
}

/// Control first, then exactly one round-robin other-traffic slot if any
/// slot is left, the rest free.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultPolicy;

impl SchedulingPolicy for DefaultPolicy {
    fn plan(&self, demands: &DemandTable, round: u64, max_slots: usize) -> RoundSchedule {
        let mut slots = control_slots(demands, round, max_slots);
        fill(demands, &mut slots, max_slots, 1);
        RoundSchedule { round, slots }
    }

    fn name(&self) -> &'static str {
        "default"
    }
}

/// Control traffic only; spare slots stay free.
#[derive(Debug, Clone, Copy, Default)]
pub struct ControlOnlyPolicy;

impl SchedulingPolicy for ControlOnlyPolicy {
    fn plan(&self, demands: &DemandTable, round: u64, max_slots: usize) -> RoundSchedule {
        let mut slots = control_slots(demands, round, max_slots);
        fill(demands, &mut slots, max_slots, 0);
        RoundSchedule { round, slots }
    }

    fn name(&self) -> &'static str {
        "control-only"
    }
}

/// Every spare slot goes to other traffic, round-robin.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyOtherPolicy;

impl SchedulingPolicy for GreedyOtherPolicy {
    fn plan(&self, demands: &DemandTable, round: u64, max_slots: usize) -> RoundSchedule {
        let mut slots = control_slots(demands, round, max_slots);
        fill(demands, &mut slots, max_slots, usize::MAX);
        RoundSchedule { round, slots }
    }

    fn name(&self) -> &'static str {
        "greedy-other"
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    #[default]
    Default,
    ControlOnly,
    GreedyOther,
}

impl PolicyKind {
    pub fn build(self) -> Box<dyn SchedulingPolicy> {
        match self {
            PolicyKind::Default => Box::new(DefaultPolicy),
            PolicyKind::ControlOnly => Box::new(ControlOnlyPolicy),
            PolicyKind::GreedyOther => Box::new(GreedyOtherPolicy),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.build().name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "default" => Ok(PolicyKind::Default),
            "control-only" => Ok(PolicyKind::ControlOnly),
            "greedy-other" => Ok(PolicyKind::GreedyOther),
            other => Err(Error::Config(format!(
                "unknown policy {other:?} (expected default, control-only or greedy-other)"
            ))),
        }
    }
}

/// Applies the manager's extracted demands to the table.
pub fn update_demands(demands: &mut DemandTable, extracted: &[(usize, u64)]) {
    demands.update(extracted);
}
