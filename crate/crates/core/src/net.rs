//! Round-based flooding protocol.
//!
//! Every round has one schedule slot (flooded by the manager) followed by
//! up to `K` data slots. A flood reaches each other node independently.
//! Nodes that miss the schedule keep their radio off for the rest of the
//! round and never transmit in it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Protocol timing and reliability. Agents occupy nodes `0..agents`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    /// Round period `T`, seconds.
    pub period: f64,
    /// Data slots per round, `K`.
    pub max_slots: usize,
    /// Seconds per slot.
    pub slot_len: f64,
    /// Per-receiver flood success probability.
    pub p_rx: f64,
    pub num_nodes: usize,
    pub manager: NodeId,
    /// Nodes with non-control traffic; `None` means every node that is
    /// neither an agent nor the manager.
    pub other_nodes: Option<Vec<NodeId>>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            period: 0.05,
            max_slots: 5,
            slot_len: 0.008,
            p_rx: 0.999,
            num_nodes: 15,
            manager: 14,
            other_nodes: None,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self, agents: usize) -> Result<()> {
        if !(self.period > 0.0) || !(self.slot_len > 0.0) {
            return Err(Error::Config("period and slot_len must be positive".into()));
        }
        if self.max_slots == 0 {
            return Err(Error::Config("max_slots must be at least 1".into()));
        }
        if (self.max_slots + 1) as f64 * self.slot_len > self.period * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "{} slots of {} s do not fit a {} s round",
                self.max_slots + 1,
                self.slot_len,
                self.period
            )));
        }
        if !(self.p_rx > 0.0 && self.p_rx <= 1.0) {
            return Err(Error::Config(format!("p_rx must be in (0, 1], got {}", self.p_rx)));
        }
        if agents > self.num_nodes {
            return Err(Error::Config(format!(
                "{agents} agents need at least as many nodes, got {}",
                self.num_nodes
            )));
        }
        if self.manager >= self.num_nodes {
            return Err(Error::Config(format!("manager {} is not a node", self.manager)));
        }
        if let Some(others) = &self.other_nodes {
            for (k, &n) in others.iter().enumerate() {
                if n >= self.num_nodes || n < agents {
                    return Err(Error::Config(format!(
                        "other node {n} must be a non-agent node id below {}",
                        self.num_nodes
                    )));
                }
                if others[..k].contains(&n) {
                    return Err(Error::Config(format!("other node {n} listed twice")));
                }
            }
        }
        Ok(())
    }

    pub fn resolved_other_nodes(&self, agents: usize) -> Vec<NodeId> {
        match &self.other_nodes {
            Some(list) => list.clone(),
            None => (agents..self.num_nodes).filter(|&n| n != self.manager).collect(),
        }
    }
}

/// Use of one data slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    Control(usize),
    Other(NodeId),
    Free,
}

impl Slot {
    /// Node that initiates the flood, if any.
    pub fn sender(&self) -> Option<NodeId> {
        match *self {
            Slot::Control(agent) => Some(agent),
            Slot::Other(node) => Some(node),
            Slot::Free => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundSchedule {
    pub round: u64,
    pub slots: Vec<Slot>,
}

impl RoundSchedule {
    pub fn control_count(&self) -> usize {
        self.slots.iter().filter(|s| matches!(s, Slot::Control(_))).count()
    }

    pub fn other_count(&self) -> usize {
        self.slots.iter().filter(|s| matches!(s, Slot::Other(_))).count()
    }

    /// Free slots out of `max_slots`, counting slots the schedule omits.
    pub fn free_count(&self, max_slots: usize) -> usize {
        max_slots - self.control_count() - self.other_count()
    }

    pub fn allocated_count(&self) -> usize {
        self.slots.iter().filter(|s| s.sender().is_some()).count()
    }

    pub fn validate(&self, max_slots: usize) -> Result<()> {
        if self.slots.len() > max_slots {
            return Err(Error::Internal(format!(
                "schedule has {} slots, limit {max_slots}",
                self.slots.len()
            )));
        }
        for (k, slot) in self.slots.iter().enumerate() {
            if let Some(sender) = slot.sender() {
                if self.slots[..k].iter().any(|s| s.sender() == Some(sender)) {
                    return Err(Error::Internal(format!(
                        "node {sender} has two slots in round {}",
                        self.round
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Control message: the sender's outgoing input components and the
/// rounds until it needs to send again.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlMessage {
    pub sender: usize,
    pub inputs: Vec<f64>,
    pub demand: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Control(ControlMessage),
    Other,
}

/// Decides whether one receiver gets one flood.
pub trait LossModel {
    /// `slot` is `None` for the schedule flood.
    fn delivered(&mut self, slot: Option<usize>, sender: NodeId, receiver: NodeId) -> bool;
}

/// Independent Bernoulli reception with probability `p_rx`.
pub struct BernoulliLoss<'r, R: Rng + ?Sized> {
    pub p_rx: f64,
    pub rng: &'r mut R,
}

impl<R: Rng + ?Sized> LossModel for BernoulliLoss<'_, R> {
    fn delivered(&mut self, _slot: Option<usize>, _sender: NodeId, _receiver: NodeId) -> bool {
        if self.p_rx >= 1.0 {
            return true;
        }
        self.rng.random::<f64>() < self.p_rx
    }
}

/// Closure-backed loss model, for scripted outcomes.
pub struct ScriptedLoss<F>(pub F);

impl<F: FnMut(Option<usize>, NodeId, NodeId) -> bool> LossModel for ScriptedLoss<F> {
    fn delivered(&mut self, slot: Option<usize>, sender: NodeId, receiver: NodeId) -> bool {
        (self.0)(slot, sender, receiver)
    }
}

/// Which nodes receive a flood from `sender`; the sender counts as
/// having it. Draws are taken for every other node in id order.
pub fn flood(
    sender: NodeId,
    slot: Option<usize>,
    num_nodes: usize,
    loss: &mut dyn LossModel,
) -> Vec<bool> {
    (0..num_nodes)
        .map(|node| node == sender || loss.delivered(slot, sender, node))
        .collect()
}

/// Result of executing one round.
#[derive(Debug, Clone)]
pub struct DeliveryOutcome {
    pub schedule_received: Vec<bool>,
    /// `delivered[slot][node]`; false for untransmitted slots.
    pub delivered: Vec<Vec<bool>>,
    /// Whether the allocated sender actually flooded its slot.
    pub transmitted: Vec<bool>,
    pub manager_received: Vec<bool>,
    /// Radio-on seconds per node.
    pub radio_on: Vec<f64>,
}

impl DeliveryOutcome {
    pub fn mean_radio_on(&self) -> f64 {
        self.radio_on.iter().sum::<f64>() / self.radio_on.len().max(1) as f64
    }
}

/// Executes the schedule flood and every allocated data slot.
///
/// `payloads` is aligned with `schedule.slots` and must hold a payload for
/// every allocated slot.
pub fn run_round(
    schedule: &RoundSchedule,
    payloads: &[Option<Payload>],
    loss: &mut dyn LossModel,
    cfg: &ProtocolConfig,
) -> Result<DeliveryOutcome> {
    schedule.validate(cfg.max_slots)?;
    if payloads.len() != schedule.slots.len() {
        return Err(Error::Internal(format!(
            "{} payloads for {} slots",
            payloads.len(),
            schedule.slots.len()
        )));
    }
    for (k, (slot, payload)) in schedule.slots.iter().zip(payloads).enumerate() {
        match (slot, payload) {
            (Slot::Free, _) => {}
            (Slot::Control(agent), Some(Payload::Control(msg))) if msg.sender == *agent => {}
            (Slot::Other(_), Some(Payload::Other)) => {}
            _ => {
                return Err(Error::Internal(format!(
                    "slot {k} ({slot:?}) in round {} has payload {payload:?}",
                    schedule.round
                )))
            }
        }
    }

    let nodes = cfg.num_nodes;
    let schedule_received = flood(cfg.manager, None, nodes, loss);
    let allocated = schedule.allocated_count() as f64;
    let radio_on = schedule_received
        .iter()
        .map(|&got| {
            if got {
                cfg.slot_len * (1.0 + allocated)
            } else {
                cfg.slot_len
            }
        })
        .collect();

    let mut delivered = Vec::with_capacity(schedule.slots.len());
    let mut transmitted = Vec::with_capacity(schedule.slots.len());
    let mut manager_received = Vec::with_capacity(schedule.slots.len());
    for (k, slot) in schedule.slots.iter().enumerate() {
        let sender = match slot.sender() {
            Some(s) if schedule_received[s] => s,
            _ => {
                delivered.push(vec![false; nodes]);
                transmitted.push(false);
                manager_received.push(false);
                continue;
            }
        };
        let reach: Vec<bool> = flood(sender, Some(k), nodes, loss)
            .into_iter()
            .zip(&schedule_received)
            .map(|(got, listening)| got && *listening)
            .collect();
        manager_received.push(reach[cfg.manager]);
        delivered.push(reach);
        transmitted.push(true);
    }

    Ok(DeliveryOutcome {
        schedule_received,
        delivered,
        transmitted,
        manager_received,
        radio_on,
    })
}

/// Next due round per scheduled agent, as the manager sees it: the
/// piggybacked demand when the message arrived, the next round otherwise.
pub fn extract_demands(
    schedule: &RoundSchedule,
    outcome: &DeliveryOutcome,
    payloads: &[Option<Payload>],
) -> Vec<(usize, u64)> {
    schedule
        .slots
        .iter()
        .zip(payloads)
        .enumerate()
        .filter_map(|(k, (slot, payload))| match (slot, payload) {
            (Slot::Control(agent), Some(Payload::Control(msg))) => {
                let due = if outcome.manager_received[k] {
                    schedule.round + u64::from(msg.demand.max(1))
                } else {
                    schedule.round + 1
                };
                Some((*agent, due))
            }
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn cfg(p_rx: f64) -> ProtocolConfig {
        ProtocolConfig {
            p_rx,
            ..Default::default()
        }
    }

    fn control(agent: usize, demand: u32) -> Option<Payload> {
        Some(Payload::Control(ControlMessage {
            sender: agent,
            inputs: vec![0.0; 4],
            demand,
        }))
    }

    #[test]
    fn flood_extremes() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let all = flood(2, Some(0), 15, &mut BernoulliLoss { p_rx: 1.0, rng: &mut rng });
        assert!(all.iter().all(|&r| r));
        let none = flood(2, Some(0), 15, &mut BernoulliLoss { p_rx: 0.0, rng: &mut rng });
        assert_eq!(none.iter().filter(|&&r| r).count(), 1);
        assert!(none[2]);
    }

    #[test]
    fn flood_loss_rate_is_binomial() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let floods = 100_000;
        let mut lost = [0usize; 15];
        let mut loss = BernoulliLoss { p_rx: 0.999, rng: &mut rng };
        for _ in 0..floods {
            for (node, got) in flood(0, Some(0), 15, &mut loss).into_iter().enumerate() {
                if !got {
                    lost[node] += 1;
                }
            }
        }
        assert_eq!(lost[0], 0);
        let sd = (floods as f64 * 0.001 * 0.999).sqrt();
        for &l in &lost[1..] {
            assert!((l as f64 - floods as f64 * 0.001).abs() <= 3.0 * sd, "{l}");
        }
        // pooled over all 14 receivers
        let pooled: usize = lost[1..].iter().sum();
        let n = 14.0 * floods as f64;
        assert!((pooled as f64 - n * 0.001).abs() <= 3.0 * (n * 0.001 * 0.999).sqrt());
    }

    #[test]
    fn empty_schedule_costs_one_slot() {
        let c = cfg(1.0);
        let schedule = RoundSchedule { round: 0, slots: vec![] };
        let mut loss = ScriptedLoss(|_, _, _| true);
        let out = run_round(&schedule, &[], &mut loss, &c).unwrap();
        assert!(out.radio_on.iter().all(|&t| (t - c.slot_len).abs() < 1e-15));
        assert!(extract_demands(&schedule, &out, &[]).is_empty());
    }

    #[test]
    fn radio_time_counts_allocated_slots() {
        let c = cfg(1.0);
        let schedule = RoundSchedule {
            round: 4,
            slots: vec![Slot::Control(0), Slot::Control(2), Slot::Other(7), Slot::Free, Slot::Free],
        };
        let payloads = vec![control(0, 1), control(2, 3), Some(Payload::Other), None, None];
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let out = run_round(&schedule, &payloads, &mut BernoulliLoss { p_rx: 1.0, rng: &mut rng }, &c).unwrap();
        for &t in &out.radio_on {
            assert!((t - 4.0 * c.slot_len).abs() < 1e-15);
        }
        assert_eq!(out.transmitted, vec![true, true, true, false, false]);
        assert_eq!(extract_demands(&schedule, &out, &payloads), vec![(0, 5), (2, 7)]);
    }

    #[test]
    fn lost_report_means_due_next_round() {
        let c = cfg(0.999);
        let schedule = RoundSchedule {
            round: 10,
            slots: vec![Slot::Control(1), Slot::Control(3)],
        };
        let payloads = vec![control(1, 3), control(3, 3)];
        let manager = c.manager;
        // the manager never hears agent 1
        let mut loss = ScriptedLoss(|slot: Option<usize>, sender, receiver| {
            !(slot.is_some() && sender == 1 && receiver == manager)
        });
        let out = run_round(&schedule, &payloads, &mut loss, &c).unwrap();
        assert_eq!(out.manager_received, vec![false, true]);
        assert!(out.delivered[0][0] && out.delivered[0][2]);
        assert_eq!(extract_demands(&schedule, &out, &payloads), vec![(1, 11), (3, 13)]);
    }

    #[test]
    fn missing_the_schedule_means_sitting_out() {
        let c = cfg(0.999);
        let schedule = RoundSchedule {
            round: 2,
            slots: vec![Slot::Control(0), Slot::Control(1)],
        };
        let payloads = vec![control(0, 2), control(1, 2)];
        // agent 1 misses the schedule flood only
        let mut loss = ScriptedLoss(|slot: Option<usize>, _sender, receiver| !(slot.is_none() && receiver == 1));
        let out = run_round(&schedule, &payloads, &mut loss, &c).unwrap();
        assert!(!out.schedule_received[1]);
        assert_eq!(out.transmitted, vec![true, false]);
        assert!(!out.delivered[0][1], "radio is off, nothing received");
        assert!(out.delivered[1].iter().all(|&d| !d));
        assert!((out.radio_on[1] - c.slot_len).abs() < 1e-15);
        assert!((out.radio_on[0] - 3.0 * c.slot_len).abs() < 1e-15);
        // the manager heard nothing from agent 1: due next round
        assert_eq!(extract_demands(&schedule, &out, &payloads), vec![(0, 4), (1, 3)]);
    }

    #[test]
    fn missing_payload_is_an_internal_error() {
        let c = cfg(1.0);
        let schedule = RoundSchedule {
            round: 0,
            slots: vec![Slot::Control(0)],
        };
        let mut loss = ScriptedLoss(|_, _, _| true);
        assert!(matches!(
            run_round(&schedule, &[None], &mut loss, &c),
            Err(Error::Internal(_))
        ));
        let twice = RoundSchedule {
            round: 0,
            slots: vec![Slot::Control(0), Slot::Control(0)],
        };
        assert!(run_round(&twice, &[control(0, 1), control(0, 1)], &mut loss, &c).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = ProtocolConfig::default();
        assert!(c.validate(5).is_ok());
        assert_eq!(c.resolved_other_nodes(5), (5..14).collect::<Vec<_>>());
        c.slot_len = 0.01;
        assert!(c.validate(5).is_err());
        let c = ProtocolConfig {
            p_rx: 0.0,
            ..Default::default()
        };
        assert!(c.validate(5).is_err());
        let c = ProtocolConfig {
            other_nodes: Some(vec![2]),
            ..Default::default()
        };
        assert!(c.validate(5).is_err());
    }
}
