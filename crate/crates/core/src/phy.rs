//! Shared half-duplex radio channel.
//!
//! Received power follows the two-ray ground model (Friis below the crossover
//! distance). A frame is decoded only if it arrives above the receive
//! threshold and nothing else above the carrier-sense threshold overlaps it at
//! the receiver. There is no capture effect.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ConfigError;
use crate::mobility::{distance, Position};
use crate::sim::SimTime;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PhyError {
    #[error("received power is undefined at zero distance")]
    ZeroDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    pub tx_power_w: f64,
    pub tx_gain: f64,
    pub rx_gain: f64,
    pub tx_height_m: f64,
    pub rx_height_m: f64,
    pub system_loss: f64,
    pub frequency_hz: f64,
    pub rx_threshold_w: f64,
    pub cs_threshold_w: f64,
    pub bitrate_bps: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        let mut p = ChannelParams {
            tx_power_w: 2.0,
            tx_gain: 1.0,
            rx_gain: 1.0,
            tx_height_m: 1.5,
            rx_height_m: 1.5,
            system_loss: 1.0,
            frequency_hz: 914e6,
            rx_threshold_w: 0.0,
            cs_threshold_w: 0.0,
            bitrate_bps: 2e6,
        };
        p.rx_threshold_w = p.power_at(250.0);
        p.cs_threshold_w = p.power_at(550.0);
        p
    }
}

impl ChannelParams {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.frequency_hz
    }

    /// Distance where the Friis and two-ray expressions meet.
    pub fn crossover_distance(&self) -> f64 {
        4.0 * PI * self.tx_height_m * self.rx_height_m / self.wavelength()
    }

    fn power_at(&self, d: f64) -> f64 {
        rx_power_two_ray(self, d).expect("positive distance")
    }

    /// Largest distance at which received power still reaches `threshold_w`.
    pub fn range_for(&self, threshold_w: f64) -> f64 {
        let dc = self.crossover_distance();
        let friis_num =
            self.tx_power_w * self.tx_gain * self.rx_gain * self.wavelength().powi(2);
        let d_friis = (friis_num / (threshold_w * self.system_loss)).sqrt() / (4.0 * PI);
        if d_friis < dc {
            return d_friis;
        }
        let tr_num = self.tx_power_w
            * self.tx_gain
            * self.rx_gain
            * self.tx_height_m.powi(2)
            * self.rx_height_m.powi(2);
        (tr_num / (threshold_w * self.system_loss)).powf(0.25)
    }

    pub fn airtime(&self, bytes: usize) -> f64 {
        (bytes * 8) as f64 / self.bitrate_bps
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fields = [
            ("channel.tx_power_w", self.tx_power_w),
            ("channel.tx_gain", self.tx_gain),
            ("channel.rx_gain", self.rx_gain),
            ("channel.tx_height_m", self.tx_height_m),
            ("channel.rx_height_m", self.rx_height_m),
            ("channel.system_loss", self.system_loss),
            ("channel.frequency_hz", self.frequency_hz),
            ("channel.rx_threshold_w", self.rx_threshold_w),
            ("channel.cs_threshold_w", self.cs_threshold_w),
            ("channel.bitrate_bps", self.bitrate_bps),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::invalid(name, format!("must be positive, got {v}")));
            }
        }
        if self.cs_threshold_w > self.rx_threshold_w {
            return Err(ConfigError::invalid(
                "channel.cs_threshold_w",
                "carrier-sense threshold must not exceed the receive threshold",
            ));
        }
        Ok(())
    }
}

/// Received power in watts at distance `d` meters.
pub fn rx_power_two_ray(params: &ChannelParams, d: f64) -> Result<f64, PhyError> {
    if d <= 0.0 {
        return Err(PhyError::ZeroDistance);
    }
    let p = params;
    if d < p.crossover_distance() {
        let lambda = p.wavelength();
        Ok(p.tx_power_w * p.tx_gain * p.rx_gain * lambda * lambda
            / ((4.0 * PI * d).powi(2) * p.system_loss))
    } else {
        Ok(p.tx_power_w
            * p.tx_gain
            * p.rx_gain
            * p.tx_height_m.powi(2)
            * p.rx_height_m.powi(2)
            / (d.powi(4) * p.system_loss))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RadioMode {
    Tx,
    Rx,
    Idle,
    Sleep,
}

impl RadioMode {
    pub const ALL: [RadioMode; 4] = [RadioMode::Tx, RadioMode::Rx, RadioMode::Idle, RadioMode::Sleep];

    pub fn index(self) -> usize {
        match self {
            RadioMode::Tx => 0,
            RadioMode::Rx => 1,
            RadioMode::Idle => 2,
            RadioMode::Sleep => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxId(pub u64);

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionRecord<F> {
    pub id: TxId,
    pub sender: NodeId,
    pub frame: F,
    pub start: SimTime,
    pub end: SimTime,
}

/// One transmission as seen at a single receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub start: f64,
    pub end: f64,
    pub power_w: f64,
}

/// Decides, for each arrival at one listening node, whether it is decoded.
///
/// Arrivals below the carrier-sense threshold are invisible. An arrival is
/// decoded iff it is at or above `rx_threshold_w` and no other visible arrival
/// overlaps its airtime. Touching intervals (`a.end == b.start`) do not
/// overlap.
pub fn resolve_reception(arrivals: &[Arrival], rx_threshold_w: f64, cs_threshold_w: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..arrivals.len())
        .filter(|&i| arrivals[i].power_w >= cs_threshold_w)
        .collect();
    order.sort_by(|&a, &b| arrivals[a].start.total_cmp(&arrivals[b].start).then(a.cmp(&b)));

    let mut clash = vec![false; arrivals.len()];
    let mut active: Vec<usize> = Vec::new();
    for &i in &order {
        active.retain(|&j| arrivals[j].end > arrivals[i].start);
        if !active.is_empty() {
            clash[i] = true;
            for &j in &active {
                clash[j] = true;
            }
        }
        active.push(i);
    }
    arrivals
        .iter()
        .enumerate()
        .map(|(i, a)| a.power_w >= rx_threshold_w && a.power_w >= cs_threshold_w && !clash[i])
        .collect()
}

/// What a node got out of a finished transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reception {
    Delivered,
    /// Decodable power but overlapped by another visible signal.
    Collided,
    /// Decodable power but the node was asleep or transmitting.
    Missed,
    /// Below the receive threshold; only sensed.
    Sensed,
}

#[derive(Debug, Clone)]
struct Incoming {
    tx: TxId,
    start: SimTime,
    power_w: f64,
    collided: bool,
    missed: bool,
}

#[derive(Debug, Clone)]
struct Listener {
    awake: bool,
    transmitting: Option<TxId>,
    incoming: Vec<Incoming>,
}

/// Per-node change of sensed medium state caused by a channel operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MediumChange {
    pub node: NodeId,
    pub busy: bool,
}

/// Incremental channel state shared by all nodes.
#[derive(Debug)]
pub struct Channel<F> {
    params: ChannelParams,
    listeners: Vec<Listener>,
    active: BTreeMap<TxId, (TransmissionRecord<F>, Vec<NodeId>)>,
    next_id: u64,
    collisions: u64,
}

impl<F: Clone> Channel<F> {
    pub fn new(params: ChannelParams, nodes: usize) -> Self {
        Channel {
            params,
            listeners: vec![
                Listener {
                    awake: true,
                    transmitting: None,
                    incoming: Vec::new(),
                };
                nodes
            ],
            active: BTreeMap::new(),
            next_id: 0,
            collisions: 0,
        }
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    /// Decodable receptions destroyed by overlap, summed over all nodes.
    pub fn collisions(&self) -> u64 {
        self.collisions
    }

    fn sensed_busy(&self, node: NodeId) -> bool {
        let l = &self.listeners[node];
        l.transmitting.is_some() || !l.incoming.is_empty()
    }

    /// True iff some transmission reaches `node` at or above the carrier-sense
    /// threshold, or the node is itself transmitting.
    ///
    /// Panics if the node is asleep: a sleeping radio cannot sense.
    pub fn carrier_busy(&self, node: NodeId) -> bool {
        assert!(
            self.listeners[node].awake,
            "carrier sense queried on sleeping node {node}"
        );
        self.sensed_busy(node)
    }

    /// Carrier sense at `now`: like [`Channel::carrier_busy`], except that a
    /// transmission beginning exactly at `now` is not yet detectable.
    pub fn carrier_busy_at(&self, node: NodeId, now: SimTime) -> bool {
        let l = &self.listeners[node];
        assert!(l.awake, "carrier sense queried on sleeping node {node}");
        l.transmitting.is_some() || l.incoming.iter().any(|i| i.start < now)
    }

    pub fn is_awake(&self, node: NodeId) -> bool {
        self.listeners[node].awake
    }

    pub fn is_transmitting(&self, node: NodeId) -> bool {
        self.listeners[node].transmitting.is_some()
    }

    pub fn mode(&self, node: NodeId) -> RadioMode {
        let l = &self.listeners[node];
        if l.transmitting.is_some() {
            RadioMode::Tx
        } else if !l.awake {
            RadioMode::Sleep
        } else if l
            .incoming
            .iter()
            .any(|i| i.power_w >= self.params.rx_threshold_w && !i.missed)
        {
            RadioMode::Rx
        } else {
            RadioMode::Idle
        }
    }

    /// Switches a node's receiver on or off. Going to sleep aborts every
    /// reception in progress at that node.
    pub fn set_awake(&mut self, node: NodeId, awake: bool) {
        let l = &mut self.listeners[node];
        if l.awake && !awake {
            for inc in &mut l.incoming {
                inc.missed = true;
            }
        }
        l.awake = awake;
    }

    /// Starts a transmission lasting `airtime` seconds. `positions` must hold the current position of
    /// every node. Returns the record and the medium-state changes it caused.
    ///
    /// Panics if the sender is asleep or already transmitting.
    pub fn begin_transmission(
        &mut self,
        sender: NodeId,
        frame: F,
        airtime: f64,
        now: SimTime,
        positions: &[Position],
    ) -> (TransmissionRecord<F>, Vec<MediumChange>) {
        assert!(self.listeners[sender].awake, "node {sender} transmits while asleep");
        assert!(
            self.listeners[sender].transmitting.is_none(),
            "node {sender} started a second concurrent transmission"
        );
        let id = TxId(self.next_id);
        self.next_id += 1;
        let end = now + airtime;
        let mut changes = Vec::new();

        let was_busy = self.sensed_busy(sender);
        {
            let l = &mut self.listeners[sender];
            l.transmitting = Some(id);
            for inc in &mut l.incoming {
                inc.missed = true;
            }
        }
        if !was_busy {
            changes.push(MediumChange {
                node: sender,
                busy: true,
            });
        }

        let mut reached = Vec::new();
        for node in 0..self.listeners.len() {
            if node == sender {
                continue;
            }
            let d = distance(positions[sender], positions[node]).max(1e-3);
            let power_w = rx_power_two_ray(&self.params, d).expect("positive distance");
            if power_w < self.params.cs_threshold_w {
                continue;
            }
            let was_busy = self.sensed_busy(node);
            let rx_thr = self.params.rx_threshold_w;
            let l = &mut self.listeners[node];
            let deaf = !l.awake || l.transmitting.is_some();
            let mut inc = Incoming {
                tx: id,
                start: now,
                power_w,
                collided: false,
                missed: deaf,
            };
            if !l.incoming.is_empty() {
                inc.collided = true;
                for other in &mut l.incoming {
                    if !other.collided && !other.missed && other.power_w >= rx_thr {
                        self.collisions += 1;
                    }
                    other.collided = true;
                }
                if !deaf && power_w >= rx_thr {
                    self.collisions += 1;
                }
            }
            l.incoming.push(inc);
            reached.push(node);
            if !was_busy {
                changes.push(MediumChange { node, busy: true });
            }
        }
        let record = TransmissionRecord {
            id,
            sender,
            frame,
            start: now,
            end,
        };
        self.active.insert(id, (record.clone(), reached));
        (record, changes)
    }

    /// Ends transmission `id`. Returns the record, the reception outcome at
    /// every reached node, and medium-state changes.
    pub fn end_transmission(
        &mut self,
        id: TxId,
    ) -> (TransmissionRecord<F>, Vec<(NodeId, Reception)>, Vec<MediumChange>) {
        let (record, reached) = self
            .active
            .remove(&id)
            .expect("ending an unknown transmission");
        let mut outcomes = Vec::with_capacity(reached.len());
        let mut changes = Vec::new();

        let sender = record.sender;
        self.listeners[sender].transmitting = None;
        if !self.sensed_busy(sender) {
            changes.push(MediumChange {
                node: sender,
                busy: false,
            });
        }
        let rx_thr = self.params.rx_threshold_w;
        for node in reached {
            let l = &mut self.listeners[node];
            let pos = l
                .incoming
                .iter()
                .position(|i| i.tx == id)
                .expect("incoming entry present");
            let inc = l.incoming.swap_remove(pos);
            let outcome = if inc.power_w < rx_thr {
                Reception::Sensed
            } else if inc.missed || !l.awake {
                Reception::Missed
            } else if inc.collided {
                Reception::Collided
            } else {
                Reception::Delivered
            };
            outcomes.push((node, outcome));
            if !self.sensed_busy(node) {
                changes.push(MediumChange { node, busy: false });
            }
        }
        (record, outcomes, changes)
    }
}
