//! Per-packet outcomes and the summary statistics derived from them.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::app::Escalation;
use crate::sim::SimTime;

/// Possible sends in the reference run: 590 s of traffic at 10 packets/s.
pub const POSSIBLE_PACKETS: u64 = 5900;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    #[serde(rename = "IFQ-overflow")]
    IfqOverflow,
    RetryExceeded,
    ChannelAccessFailure,
    NoRoute,
    CollisionCorruption,
    /// Unacknowledged frame the next hop did not decode for a reason other
    /// than collision (asleep, half-duplex, out of range).
    LinkLoss,
}

impl DropReason {
    pub const ALL: [DropReason; 6] = [
        DropReason::IfqOverflow,
        DropReason::RetryExceeded,
        DropReason::ChannelAccessFailure,
        DropReason::NoRoute,
        DropReason::CollisionCorruption,
        DropReason::LinkLoss,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::IfqOverflow => "IFQ-overflow",
            DropReason::RetryExceeded => "retry-exceeded",
            DropReason::ChannelAccessFailure => "channel-access-failure",
            DropReason::NoRoute => "no-route",
            DropReason::CollisionCorruption => "collision-corruption",
            DropReason::LinkLoss => "link-loss",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Outcome {
    Received { at: SimTime },
    Dropped { reason: DropReason, at: SimTime },
    InFlight,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PacketRecord {
    pub id: u64,
    pub sent: SimTime,
    pub outcome: Outcome,
    pub hops: u32,
}

impl PacketRecord {
    pub fn delay(&self) -> Option<f64> {
        match self.outcome {
            Outcome::Received { at } => Some(at - self.sent),
            _ => None,
        }
    }
}

/// Delivery ratio, or `None` when nothing was attempted.
pub fn pdr(received: u64, dropped: u64) -> Option<f64> {
    let total = received + dropped;
    (total > 0).then(|| received as f64 / total as f64)
}

pub fn transmitted_fraction(attempted: u64, possible: u64) -> f64 {
    assert!(possible > 0, "possible packet count must be positive");
    attempted as f64 / possible as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayStats {
    pub min_s: f64,
    pub max_s: f64,
    pub mean_s: f64,
}

/// Delay statistics over received packets; `None` if none was received.
pub fn delay_stats(records: &[PacketRecord]) -> Option<DelayStats> {
    let delays: Vec<f64> = records.iter().filter_map(PacketRecord::delay).collect();
    if delays.is_empty() {
        return None;
    }
    let min_s = delays.iter().copied().fold(f64::INFINITY, f64::min);
    let max_s = delays.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean_s = delays.iter().sum::<f64>() / delays.len() as f64;
    Some(DelayStats { min_s, max_s, mean_s })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub generated: u64,
    pub received: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub pdr: Option<f64>,
    pub transmitted_fraction: f64,
    pub delay: Option<DelayStats>,
    pub drops_by_reason: BTreeMap<String, u64>,
    pub residual_energy_j: f64,
    pub collisions: u64,
    pub alerts: BTreeMap<String, Escalation>,
}

impl MetricsSummary {
    pub fn from_records(records: &[PacketRecord], residual_energy_j: f64, collisions: u64) -> Self {
        let mut received = 0;
        let mut dropped = 0;
        let mut in_flight = 0;
        let mut drops_by_reason: BTreeMap<String, u64> =
            DropReason::ALL.iter().map(|r| (r.as_str().to_string(), 0)).collect();
        for r in records {
            match r.outcome {
                Outcome::Received { .. } => received += 1,
                Outcome::Dropped { reason, .. } => {
                    dropped += 1;
                    *drops_by_reason.entry(reason.as_str().to_string()).or_default() += 1;
                }
                Outcome::InFlight => in_flight += 1,
            }
        }
        MetricsSummary {
            generated: records.len() as u64,
            received,
            dropped,
            in_flight,
            pdr: pdr(received, dropped),
            transmitted_fraction: transmitted_fraction(received + dropped, POSSIBLE_PACKETS),
            delay: delay_stats(records),
            drops_by_reason,
            residual_energy_j,
            collisions,
            alerts: BTreeMap::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn received(id: u64, sent: f64, at: f64) -> PacketRecord {
        PacketRecord {
            id,
            sent: SimTime::from_secs(sent),
            outcome: Outcome::Received { at: SimTime::from_secs(at) },
            hops: 2,
        }
    }

    #[test]
    fn pdr_empty_is_undefined() {
        assert_eq!(pdr(0, 0), None);
        assert_eq!(pdr(3, 1), Some(0.75));
    }

    #[test]
    fn delay_examples() {
        let recs = [received(0, 10.0, 10.009561), received(1, 10.1, 10.62958)];
        let s = delay_stats(&recs).unwrap();
        assert!((s.min_s - 0.009561).abs() < 1e-9);
        assert!((s.max_s - 0.529580).abs() < 1e-9);
        assert!((s.mean_s - 0.2695705).abs() < 1e-9);
        let single = delay_stats(&recs[..1]).unwrap();
        assert_eq!(single.min_s, single.max_s);
        assert_eq!(single.min_s, single.mean_s);
        assert_eq!(delay_stats(&[]), None);
    }

    #[test]
    fn summary_counts_each_outcome_once() {
        let recs = vec![
            received(0, 10.0, 10.5),
            PacketRecord {
                id: 1,
                sent: SimTime::from_secs(10.1),
                outcome: Outcome::Dropped {
                    reason: DropReason::NoRoute,
                    at: SimTime::from_secs(11.0),
                },
                hops: 0,
            },
            PacketRecord {
                id: 2,
                sent: SimTime::from_secs(599.9),
                outcome: Outcome::InFlight,
                hops: 0,
            },
        ];
        let s = MetricsSummary::from_records(&recs, 4000.0, 0);
        assert_eq!((s.generated, s.received, s.dropped, s.in_flight), (3, 1, 1, 1));
        assert_eq!(s.pdr, Some(0.5));
        assert_eq!(s.drops_by_reason["no-route"], 1);
        assert_eq!(s.drops_by_reason["IFQ-overflow"], 0);
    }
}
