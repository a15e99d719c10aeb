//! Medium access control.
//!
//! Every protocol implements [`Mac`] and talks to the rest of the simulator
//! only through a [`MacCtx`], which exposes the clock, timers, the radio and
//! carrier sense for the node that owns the MAC instance.

pub mod csma;
pub mod lrwpan;
pub mod smac;
pub mod tdma;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::app::DataPacket;
use crate::error::ConfigError;
use crate::phy::NodeId;
use crate::routing::AodvMessage;
use crate::sim::{EventHandle, RngStream, SimTime};

pub use csma::{csma_backoff_slots, CsmaConfig, CsmaMac};
pub use lrwpan::{LrwpanConfig, LrwpanMac};
pub use smac::{smac_state, SmacConfig, SmacMac, SmacState};
pub use tdma::{tdma_slot_owner, SlotOwner, TdmaConfig, TdmaMac};

/// Bytes of network-layer header carried by every data packet.
pub const NET_HEADER_BYTES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dest {
    Unicast(NodeId),
    Broadcast,
}

impl Dest {
    pub fn accepts(self, node: NodeId) -> bool {
        match self {
            Dest::Unicast(n) => n == node,
            Dest::Broadcast => true,
        }
    }
}

impl fmt::Display for Dest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dest::Unicast(n) => write!(f, "{n}"),
            Dest::Broadcast => f.write_str("*"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum FrameKind {
    Data,
    Ack,
    Control,
    Routing,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrameBody {
    Data(DataPacket),
    Routing(AodvMessage),
    Ack { acked: u64 },
    /// Listen-schedule advertisement (sleep/listen MAC).
    Sync { phase: f64 },
    /// Slot-use announcement sent in a TDMA preamble.
    Announce { to: Dest },
}

impl FrameBody {
    pub fn kind(&self) -> FrameKind {
        match self {
            FrameBody::Data(_) => FrameKind::Data,
            FrameBody::Routing(_) => FrameKind::Routing,
            FrameBody::Ack { .. } => FrameKind::Ack,
            FrameBody::Sync { .. } | FrameBody::Announce { .. } => FrameKind::Control,
        }
    }

    /// Bytes above the MAC header.
    pub fn net_bytes(&self) -> usize {
        match self {
            FrameBody::Data(p) => p.payload.len() + NET_HEADER_BYTES,
            FrameBody::Routing(m) => m.wire_bytes() + NET_HEADER_BYTES,
            FrameBody::Ack { .. } => 0,
            FrameBody::Sync { .. } => 4,
            FrameBody::Announce { .. } => 2,
        }
    }
}

/// Link-layer frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub src: NodeId,
    pub dst: Dest,
    /// Per-sender sequence number, used for ACK matching and duplicate
    /// suppression.
    pub seq: u64,
    pub body: FrameBody,
    /// Total bytes on air (MAC header included, PHY preamble excluded).
    pub bytes: usize,
}

impl Frame {
    pub fn kind(&self) -> FrameKind {
        self.body.kind()
    }

    pub fn data(&self) -> Option<&DataPacket> {
        match &self.body {
            FrameBody::Data(p) => Some(p),
            _ => None,
        }
    }
}

/// Frame handed down by the routing layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub next_hop: Dest,
    pub body: FrameBody,
}

/// FIFO with tail drop.
#[derive(Debug, Clone)]
pub struct TxQueue<T> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T> TxQueue<T> {
    pub fn new(capacity: usize) -> Self {
        TxQueue {
            items: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Appends `item`, or hands it back if the queue is full.
    pub fn push(&mut self, item: T) -> Result<(), T> {
        if self.items.len() >= self.capacity {
            return Err(item);
        }
        self.items.push_back(item);
        Ok(())
    }

    pub fn pop(&mut self) -> Option<T> {
        self.items.pop_front()
    }

    pub fn push_front(&mut self, item: T) {
        self.items.push_front(item);
    }

    pub fn front(&self) -> Option<&T> {
        self.items.front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// Removes and returns every item matching `pred`, preserving the order
    /// of the rest.
    pub fn drain_where(&mut self, mut pred: impl FnMut(&T) -> bool) -> Vec<T> {
        let mut kept = VecDeque::with_capacity(self.items.len());
        let mut out = Vec::new();
        for item in self.items.drain(..) {
            if pred(&item) {
                out.push(item);
            } else {
                kept.push_back(item);
            }
        }
        self.items = kept;
        out
    }
}

/// Data queue plus a priority queue for routing control.
#[derive(Debug, Clone)]
pub struct MacQueues {
    pub control: TxQueue<Outgoing>,
    pub data: TxQueue<Outgoing>,
}

impl MacQueues {
    pub fn new(capacity: usize) -> Self {
        MacQueues {
            control: TxQueue::new(capacity),
            data: TxQueue::new(capacity),
        }
    }

    /// Routing control bypasses the data queue.
    pub fn push(&mut self, out: Outgoing) -> Result<(), Outgoing> {
        match out.body.kind() {
            FrameKind::Data => self.data.push(out),
            _ => self.control.push(out),
        }
    }

    pub fn pop(&mut self) -> Option<Outgoing> {
        self.control.pop().or_else(|| self.data.pop())
    }

    pub fn front(&self) -> Option<&Outgoing> {
        self.control.front().or_else(|| self.data.front())
    }

    pub fn is_empty(&self) -> bool {
        self.control.is_empty() && self.data.is_empty()
    }

    pub fn len(&self) -> usize {
        self.control.len() + self.data.len()
    }

    pub fn drain_next_hop(&mut self, hop: NodeId) -> Vec<Outgoing> {
        let mut out = self.control.drain_where(|o| o.next_hop == Dest::Unicast(hop));
        out.extend(self.data.drain_where(|o| o.next_hop == Dest::Unicast(hop)));
        out
    }
}

/// Why the MAC gave up on a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum MacFailure {
    RetryExceeded,
    ChannelAccessFailure,
    /// Unacknowledged MACs: the next hop is no longer heard.
    NeighborLost,
}

/// Upward notifications from a MAC instance.
#[derive(Debug, Clone, PartialEq)]
pub enum MacIndication {
    /// A frame addressed to this node (or broadcast) was decoded.
    Received(Frame),
    /// A frame left the MAC: acknowledged for ACK-based MACs, otherwise
    /// simply transmitted.
    Sent(Frame),
    Failed(Frame, MacFailure),
}

/// Services the simulator provides to one node's MAC.
pub trait MacCtx {
    fn now(&self) -> SimTime;
    fn node(&self) -> NodeId;
    fn set_timer(&mut self, delay: f64, token: u32) -> EventHandle;
    fn cancel_timer(&mut self, handle: EventHandle);
    fn carrier_busy(&self) -> bool;
    fn is_transmitting(&self) -> bool;
    /// Puts `frame` on the air for `airtime` seconds.
    fn transmit(&mut self, frame: Frame, airtime: f64);
    fn set_awake(&mut self, awake: bool);
    fn is_awake(&self) -> bool;
    fn rng(&mut self) -> &mut RngStream;
    fn indicate(&mut self, ind: MacIndication);
    /// Listen-schedule phase of another node, in seconds.
    fn schedule_phase(&self, node: NodeId) -> f64;
    /// Nodes currently within decoding range of this node.
    fn neighbors(&self) -> Vec<NodeId>;
    fn trace(&mut self, event: &str, details: String);
}

/// A MAC protocol instance owned by one node.
pub trait Mac {
    fn start(&mut self, ctx: &mut dyn MacCtx);
    /// Accepts a frame from the routing layer; hands it back when the data
    /// queue is full.
    fn enqueue(&mut self, ctx: &mut dyn MacCtx, out: Outgoing) -> Result<(), Outgoing>;
    fn on_timer(&mut self, ctx: &mut dyn MacCtx, token: u32);
    fn on_tx_end(&mut self, ctx: &mut dyn MacCtx, frame: &Frame);
    /// A frame was decoded at this node (any destination).
    fn on_receive(&mut self, ctx: &mut dyn MacCtx, frame: Frame);
    fn on_medium(&mut self, ctx: &mut dyn MacCtx, busy: bool);
    /// Routing hint: a reply is expected, so a battery-powered radio should
    /// keep listening.
    fn set_expecting(&mut self, ctx: &mut dyn MacCtx, expecting: bool);
    /// Removes queued frames for `hop` (after a link break).
    fn purge_next_hop(&mut self, hop: NodeId) -> Vec<Outgoing>;
    fn queue_len(&self) -> usize;
    fn acknowledged(&self) -> bool;
}

/// MAC protocol selection, by the names used in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MacKind {
    #[serde(rename = "802.11")]
    Ieee80211,
    #[serde(rename = "802.15.4")]
    Ieee802154,
    #[serde(rename = "smac")]
    Smac,
    #[serde(rename = "tdma")]
    Tdma,
}

impl MacKind {
    pub const ALL: [MacKind; 4] = [
        MacKind::Ieee80211,
        MacKind::Ieee802154,
        MacKind::Smac,
        MacKind::Tdma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MacKind::Ieee80211 => "802.11",
            MacKind::Ieee802154 => "802.15.4",
            MacKind::Smac => "smac",
            MacKind::Tdma => "tdma",
        }
    }
}

impl fmt::Display for MacKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MacKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MacKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                ConfigError::invalid(
                    "mac.type",
                    format!("unknown MAC `{s}`; valid options: 802.11, 802.15.4, smac, tdma"),
                )
            })
    }
}

#[cfg(test)]
pub(crate) mod testing {
    //! Scripted single-node context for exercising MAC state machines.

    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    pub enum Action {
        Timer { at: f64, token: u32 },
        Tx { at: f64, frame: Frame, airtime: f64 },
        Awake(bool),
        Ind(MacIndication),
    }

    pub struct ScriptCtx {
        pub node: NodeId,
        pub now: SimTime,
        pub busy: bool,
        pub transmitting: bool,
        pub awake: bool,
        pub rng: RngStream,
        pub actions: Vec<Action>,
        pub phases: Vec<f64>,
        pub neighbors: Vec<NodeId>,
        handles: crate::sim::EventQueue<u32>,
    }

    impl ScriptCtx {
        pub fn new(node: NodeId, seed: u64) -> Self {
            ScriptCtx {
                node,
                now: SimTime::ZERO,
                busy: false,
                transmitting: false,
                awake: true,
                rng: RngStream::new(seed, "test-mac"),
                actions: Vec::new(),
                phases: vec![0.0; 64],
                neighbors: Vec::new(),
                handles: crate::sim::EventQueue::new(),
            }
        }

        /// Pops the earliest pending timer, advancing the clock to it.
        pub fn next_timer(&mut self) -> Option<u32> {
            let ev = self.handles.advance()?;
            self.now = ev.time;
            Some(ev.payload)
        }

        pub fn pending_timers(&self) -> usize {
            self.handles.len()
        }

        pub fn txs(&self) -> Vec<(f64, Frame)> {
            self.actions
                .iter()
                .filter_map(|a| match a {
                    Action::Tx { at, frame, .. } => Some((*at, frame.clone())),
                    _ => None,
                })
                .collect()
        }

        pub fn indications(&self) -> Vec<MacIndication> {
            self.actions
                .iter()
                .filter_map(|a| match a {
                    Action::Ind(i) => Some(i.clone()),
                    _ => None,
                })
                .collect()
        }
    }

    impl MacCtx for ScriptCtx {
        fn now(&self) -> SimTime {
            self.now
        }
        fn node(&self) -> NodeId {
            self.node
        }
        fn set_timer(&mut self, delay: f64, token: u32) -> EventHandle {
            self.actions.push(Action::Timer {
                at: (self.now + delay).secs(),
                token,
            });
            self.handles.schedule(self.now + delay, token)
        }
        fn cancel_timer(&mut self, handle: EventHandle) {
            self.handles.cancel(handle);
        }
        fn carrier_busy(&self) -> bool {
            assert!(self.awake, "carrier sense while asleep");
            self.busy || self.transmitting
        }
        fn is_transmitting(&self) -> bool {
            self.transmitting
        }
        fn transmit(&mut self, frame: Frame, airtime: f64) {
            assert!(self.awake, "transmit while asleep");
            assert!(!self.transmitting, "concurrent transmit");
            self.transmitting = true;
            self.actions.push(Action::Tx {
                at: self.now.secs(),
                frame,
                airtime,
            });
        }
        fn set_awake(&mut self, awake: bool) {
            if self.awake != awake {
                self.actions.push(Action::Awake(awake));
            }
            self.awake = awake;
        }
        fn is_awake(&self) -> bool {
            self.awake
        }
        fn rng(&mut self) -> &mut RngStream {
            &mut self.rng
        }
        fn indicate(&mut self, ind: MacIndication) {
            self.actions.push(Action::Ind(ind));
        }
        fn schedule_phase(&self, node: NodeId) -> f64 {
            self.phases[node]
        }
        fn neighbors(&self) -> Vec<NodeId> {
            self.neighbors.clone()
        }
        fn trace(&mut self, _event: &str, _details: String) {}
    }

    pub fn data_out(to: NodeId, id: u64) -> Outgoing {
        Outgoing {
            next_hop: Dest::Unicast(to),
            body: FrameBody::Data(DataPacket::test_packet(id)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queue_tail_drops_the_51st() {
        let mut q = TxQueue::new(50);
        for i in 0..50 {
            assert!(q.push(i).is_ok());
        }
        assert_eq!(q.push(50), Err(50));
        assert_eq!(q.len(), 50);
        assert_eq!(q.pop(), Some(0));
        assert_eq!(q.pop(), Some(1));
        assert!(q.push(51).is_ok());
        let rest: Vec<_> = q.iter().copied().collect();
        assert_eq!(rest.first(), Some(&2));
        assert_eq!(rest.last(), Some(&51));
    }

    #[test]
    fn control_frames_bypass_full_data_queue() {
        let mut q = MacQueues::new(2);
        for i in 0..2 {
            q.push(testing::data_out(1, i)).unwrap();
        }
        assert!(q.push(testing::data_out(1, 9)).is_err());
        let ctl = Outgoing {
            next_hop: Dest::Broadcast,
            body: FrameBody::Routing(AodvMessage::test_rreq()),
        };
        q.push(ctl.clone()).unwrap();
        assert_eq!(q.pop(), Some(ctl));
    }

    #[test]
    fn mac_names_round_trip_and_reject_unknown() {
        for k in MacKind::ALL {
            assert_eq!(k.name().parse::<MacKind>().unwrap(), k);
        }
        let err = "csma-foo".parse::<MacKind>().unwrap_err();
        assert!(err.message.contains("802.11") && err.message.contains("tdma"));
    }
}
