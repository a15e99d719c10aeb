//! Fixed-assignment TDMA.
//!
//! A frame is a preamble followed by one data slot per node; node `k` owns
//! data slot `k`. The preamble is split into per-node mini-slots in which a
//! node announces a unicast control frame it will send in its data slot, so a
//! battery-powered receiver knows which slot to wake up for. Transmissions
//! start one guard time into a slot and end at least one guard time before
//! its end. Frames are not acknowledged.

use serde::{Deserialize, Serialize};

use super::{Dest, Frame, FrameBody, FrameKind, Mac, MacCtx, MacFailure, MacIndication, MacQueues, Outgoing};
use crate::phy::NodeId;
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TdmaConfig {
    pub preamble_slots: u32,
    pub slot_s: f64,
    pub guard_s: f64,
    pub phy_header_bytes: usize,
    pub header_bytes: usize,
}

impl Default for TdmaConfig {
    fn default() -> Self {
        TdmaConfig {
            preamble_slots: 2,
            slot_s: 5e-3,
            guard_s: 10e-6,
            phy_header_bytes: 6,
            header_bytes: 8,
        }
    }
}

impl TdmaConfig {
    pub fn frame_s(&self, nodes: usize) -> f64 {
        (self.preamble_slots as usize + nodes) as f64 * self.slot_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotOwner {
    /// Preamble slot with its index in the preamble.
    Preamble(u32),
    Data(NodeId),
}

/// Owner of the slot containing time `t`.
pub fn tdma_slot_owner(t: f64, cfg: &TdmaConfig, nodes: usize) -> SlotOwner {
    let frame = cfg.frame_s(nodes);
    let offset = t.rem_euclid(frame);
    let idx = ((offset / cfg.slot_s) as usize).min(cfg.preamble_slots as usize + nodes - 1);
    if idx < cfg.preamble_slots as usize {
        SlotOwner::Preamble(idx as u32)
    } else {
        SlotOwner::Data(idx - cfg.preamble_slots as usize)
    }
}

const TOKEN_PREAMBLE: u32 = 1;
const TOKEN_ANNOUNCE: u32 = 3;
const TOKEN_DATA: u32 = 4;
const TOKEN_LISTEN_START: u32 = 5;
const TOKEN_LISTEN_END: u32 = 6;
const TOKEN_MINI_START: u32 = 7;
const TOKEN_MINI_END: u32 = 8;

pub struct TdmaMac {
    cfg: TdmaConfig,
    bitrate: f64,
    nodes: usize,
    low_power: bool,
    expecting: bool,
    queues: MacQueues,
    seq: u64,
    slot_end: Option<SimTime>,
    slot_listens: u32,
    pending_listens: u32,
}

impl TdmaMac {
    pub fn new(cfg: TdmaConfig, bitrate: f64, nodes: usize, queue_capacity: usize, low_power: bool) -> Self {
        TdmaMac {
            cfg,
            bitrate,
            nodes,
            low_power,
            expecting: false,
            queues: MacQueues::new(queue_capacity),
            seq: 0,
            slot_end: None,
            slot_listens: 0,
            pending_listens: 0,
        }
    }

    pub fn airtime(&self, bytes: usize) -> f64 {
        ((self.cfg.phy_header_bytes + bytes) * 8) as f64 / self.bitrate
    }

    fn frame_s(&self) -> f64 {
        self.cfg.frame_s(self.nodes)
    }

    fn mini_slot_s(&self) -> f64 {
        f64::from(self.cfg.preamble_slots) * self.cfg.slot_s / self.nodes as f64
    }

    /// Start of the frame containing `t`.
    fn frame_start(&self, t: f64) -> f64 {
        (t / self.frame_s() + 1e-9).floor() * self.frame_s()
    }

    fn data_slot_offset(&self, node: NodeId) -> f64 {
        (self.cfg.preamble_slots as usize + node) as f64 * self.cfg.slot_s
    }

    fn update_radio(&mut self, ctx: &mut dyn MacCtx) {
        if !self.low_power {
            return;
        }
        let needed = ctx.is_transmitting() || self.slot_listens > 0;
        ctx.set_awake(needed);
    }

    /// Unicast control frames are announced so a sleeping receiver wakes up.
    fn needs_announce(out: &Outgoing) -> bool {
        matches!(out.next_hop, Dest::Unicast(_)) && out.body.kind() != FrameKind::Data
    }

    fn send_in_slot(&mut self, ctx: &mut dyn MacCtx) {
        let Some(end) = self.slot_end else {
            return;
        };
        if ctx.is_transmitting() {
            return;
        }
        let neighbors = ctx.neighbors();
        while let Some(head) = self.queues.front() {
            if let Dest::Unicast(hop) = head.next_hop {
                if !neighbors.contains(&hop) {
                    let out = self.queues.pop().expect("front exists");
                    let frame = self.build(ctx.node(), out);
                    ctx.trace("neighbor-lost", format!("dst={} seq={}", frame.dst, frame.seq));
                    ctx.indicate(MacIndication::Failed(frame, MacFailure::NeighborLost));
                    continue;
                }
            }
            let bytes = head.body.net_bytes() + self.cfg.header_bytes;
            let airtime = self.airtime(bytes);
            if airtime > self.cfg.slot_s - 2.0 * self.cfg.guard_s {
                let out = self.queues.pop().expect("front exists");
                let frame = self.build(ctx.node(), out);
                ctx.indicate(MacIndication::Failed(frame, MacFailure::ChannelAccessFailure));
                continue;
            }
            if (ctx.now() + airtime).secs() > end.secs() - self.cfg.guard_s {
                return;
            }
            let out = self.queues.pop().expect("front exists");
            let frame = self.build(ctx.node(), out);
            if self.low_power {
                ctx.set_awake(true);
            }
            ctx.trace("tx", format!("dst={} seq={} kind={:?}", frame.dst, frame.seq, frame.kind()));
            ctx.transmit(frame, airtime);
            return;
        }
    }

    fn build(&mut self, node: NodeId, out: Outgoing) -> Frame {
        self.seq += 1;
        let bytes = out.body.net_bytes() + self.cfg.header_bytes;
        Frame {
            src: node,
            dst: out.next_hop,
            seq: self.seq,
            body: out.body,
            bytes,
        }
    }
}

impl Mac for TdmaMac {
    fn start(&mut self, ctx: &mut dyn MacCtx) {
        assert!(ctx.node() < self.nodes, "node outside the slot table");
        let now = ctx.now().secs();
        let frame = self.frame_s();
        let f0 = self.frame_start(now);
        let next_frame = if f0 + 1e-12 < now { f0 + frame } else { f0 };
        ctx.set_timer(next_frame - now, TOKEN_PREAMBLE);
        let mut slot = f0 + self.data_slot_offset(ctx.node()) + self.cfg.guard_s;
        if slot + 1e-12 < now {
            slot += frame;
        }
        ctx.set_timer(slot - now, TOKEN_DATA);
        ctx.set_awake(!self.low_power);
    }

    fn enqueue(&mut self, ctx: &mut dyn MacCtx, out: Outgoing) -> Result<(), Outgoing> {
        self.queues.push(out)?;
        self.send_in_slot(ctx);
        Ok(())
    }

    fn on_timer(&mut self, ctx: &mut dyn MacCtx, token: u32) {
        match token {
            TOKEN_PREAMBLE => {
                ctx.set_timer(self.frame_s(), TOKEN_PREAMBLE);
                let mini = self.mini_slot_s();
                if self.queues.front().is_some_and(Self::needs_announce) {
                    ctx.set_timer(ctx.node() as f64 * mini + self.cfg.guard_s, TOKEN_ANNOUNCE);
                }
                if self.low_power && self.expecting {
                    // only neighbors can announce something for this node
                    for n in ctx.neighbors() {
                        ctx.set_timer(n as f64 * mini, TOKEN_MINI_START);
                    }
                }
            }
            TOKEN_MINI_START => {
                self.slot_listens += 1;
                ctx.set_timer(self.mini_slot_s(), TOKEN_MINI_END);
                self.update_radio(ctx);
            }
            TOKEN_MINI_END => {
                self.slot_listens = self.slot_listens.saturating_sub(1);
                self.update_radio(ctx);
            }
            TOKEN_ANNOUNCE => {
                let Some(to) = self.queues.front().filter(|o| Self::needs_announce(o)).map(|o| o.next_hop) else {
                    return;
                };
                if ctx.is_transmitting() {
                    return;
                }
                let frame = Frame {
                    src: ctx.node(),
                    dst: Dest::Broadcast,
                    seq: 0,
                    body: FrameBody::Announce { to },
                    bytes: FrameBody::Announce { to }.net_bytes() + self.cfg.header_bytes,
                };
                let airtime = self.airtime(frame.bytes);
                ctx.set_awake(true);
                ctx.transmit(frame, airtime);
            }
            TOKEN_DATA => {
                ctx.set_timer(self.frame_s(), TOKEN_DATA);
                self.slot_end = Some(ctx.now() + (self.cfg.slot_s - self.cfg.guard_s));
                self.send_in_slot(ctx);
            }
            TOKEN_LISTEN_START => {
                self.pending_listens = self.pending_listens.saturating_sub(1);
                self.slot_listens += 1;
                ctx.set_timer(self.cfg.slot_s, TOKEN_LISTEN_END);
                self.update_radio(ctx);
            }
            TOKEN_LISTEN_END => {
                self.slot_listens = self.slot_listens.saturating_sub(1);
                self.update_radio(ctx);
            }
            _ => {}
        }
    }

    fn on_tx_end(&mut self, ctx: &mut dyn MacCtx, frame: &Frame) {
        if !matches!(frame.body, FrameBody::Announce { .. }) {
            ctx.indicate(MacIndication::Sent(frame.clone()));
            self.send_in_slot(ctx);
        }
        self.update_radio(ctx);
    }

    fn on_receive(&mut self, ctx: &mut dyn MacCtx, frame: Frame) {
        let me = ctx.node();
        if let FrameBody::Announce { to } = frame.body {
            if self.low_power && to == Dest::Unicast(me) {
                let now = ctx.now().secs();
                let slot = self.frame_start(now) + self.data_slot_offset(frame.src);
                if slot >= now {
                    self.pending_listens += 1;
                    ctx.set_timer(slot - now, TOKEN_LISTEN_START);
                }
            }
            return;
        }
        if frame.dst.accepts(me) {
            ctx.indicate(MacIndication::Received(frame));
        }
    }

    fn on_medium(&mut self, _ctx: &mut dyn MacCtx, _busy: bool) {}

    fn set_expecting(&mut self, ctx: &mut dyn MacCtx, expecting: bool) {
        self.expecting = expecting;
        self.update_radio(ctx);
    }

    fn purge_next_hop(&mut self, hop: NodeId) -> Vec<Outgoing> {
        self.queues.drain_next_hop(hop)
    }

    fn queue_len(&self) -> usize {
        self.queues.len()
    }

    fn acknowledged(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mac::testing::{data_out, ScriptCtx};
    use crate::routing::AodvMessage;

    #[test]
    fn frame_length_and_slot_table() {
        let cfg = TdmaConfig::default();
        assert!((cfg.frame_s(26) - 0.140).abs() < 1e-12);
        assert_eq!(tdma_slot_owner(0.0, &cfg, 26), SlotOwner::Preamble(0));
        assert_eq!(tdma_slot_owner(0.0075, &cfg, 26), SlotOwner::Preamble(1));
        assert_eq!(tdma_slot_owner(0.0101, &cfg, 26), SlotOwner::Data(0));
        assert_eq!(tdma_slot_owner(0.1395, &cfg, 26), SlotOwner::Data(25));
        assert_eq!(tdma_slot_owner(0.140 + 0.0101, &cfg, 26), SlotOwner::Data(0));
    }

    #[test]
    fn data_frame_fits_a_slot() {
        let mac = TdmaMac::new(TdmaConfig::default(), 2e6, 26, 50, false);
        let bytes = 512 + crate::mac::NET_HEADER_BYTES + TdmaConfig::default().header_bytes;
        assert!(mac.airtime(bytes) < TdmaConfig::default().slot_s);
    }

    #[test]
    fn transmits_only_in_own_slot() {
        let cfg = TdmaConfig::default();
        let mut mac = TdmaMac::new(cfg, 2e6, 26, 50, false);
        let mut ctx = ScriptCtx::new(3, 1);
        ctx.neighbors = vec![1];
        mac.start(&mut ctx);
        mac.enqueue(&mut ctx, data_out(1, 1)).unwrap();
        mac.enqueue(&mut ctx, data_out(1, 2)).unwrap();
        assert!(ctx.txs().is_empty());
        for i in 3..6 {
            mac.enqueue(&mut ctx, data_out(1, i)).unwrap();
        }
        while ctx.txs().len() < 3 {
            let token = ctx.next_timer().unwrap();
            mac.on_timer(&mut ctx, token);
            if ctx.transmitting {
                ctx.transmitting = false;
                let f = ctx.txs().last().unwrap().1.clone();
                ctx.now = ctx.now + mac.airtime(f.bytes);
                mac.on_tx_end(&mut ctx, &f);
            }
        }
        let times: Vec<f64> = ctx.txs().iter().map(|t| t.0).collect();
        for t in &times {
            assert_eq!(tdma_slot_owner(*t + 1e-6, &cfg, 26), SlotOwner::Data(3));
        }
        let airtime = mac.airtime(ctx.txs()[0].1.bytes);
        assert!((times[1] - times[0] - airtime).abs() < 1e-9, "back to back within the slot");
        assert!((times[2] - times[0] - cfg.frame_s(26)).abs() < 1e-9, "third frame waits a cycle");
    }

    #[test]
    fn unheard_next_hop_fails_without_transmitting() {
        let mut mac = TdmaMac::new(TdmaConfig::default(), 2e6, 26, 50, false);
        let mut ctx = ScriptCtx::new(0, 1);
        mac.start(&mut ctx);
        mac.enqueue(&mut ctx, data_out(5, 1)).unwrap();
        for _ in 0..4 {
            let token = ctx.next_timer().unwrap();
            mac.on_timer(&mut ctx, token);
        }
        assert!(ctx.txs().is_empty());
        assert!(ctx
            .indications()
            .iter()
            .any(|i| matches!(i, MacIndication::Failed(_, MacFailure::NeighborLost))));
    }

    #[test]
    fn announcement_wakes_sleeping_receiver_for_the_sender_slot() {
        let cfg = TdmaConfig::default();
        let mut sender = TdmaMac::new(cfg, 2e6, 26, 50, false);
        let mut sctx = ScriptCtx::new(4, 1);
        sctx.neighbors = vec![25];
        sender.start(&mut sctx);
        let reply = Outgoing {
            next_hop: Dest::Unicast(25),
            body: FrameBody::Routing(AodvMessage::test_rreq()),
        };
        sender.enqueue(&mut sctx, reply).unwrap();
        let mut announce = None;
        while announce.is_none() {
            let token = sctx.next_timer().unwrap();
            sender.on_timer(&mut sctx, token);
            announce = sctx.txs().into_iter().find(|t| matches!(t.1.body, FrameBody::Announce { .. }));
        }
        let (at, frame) = announce.unwrap();
        assert!(matches!(tdma_slot_owner(at, &cfg, 26), SlotOwner::Preamble(_)));

        let mut vehicle = TdmaMac::new(cfg, 2e6, 26, 50, true);
        let mut vctx = ScriptCtx::new(25, 2);
        vehicle.start(&mut vctx);
        assert!(!vctx.awake);
        vctx.now = SimTime::from_secs(at);
        vehicle.on_receive(&mut vctx, frame);
        let mut woke_at = None;
        while let Some(token) = vctx.next_timer() {
            vehicle.on_timer(&mut vctx, token);
            if token == TOKEN_LISTEN_START {
                woke_at = Some(vctx.now.secs());
                break;
            }
        }
        assert!(vctx.awake);
        assert_eq!(tdma_slot_owner(woke_at.unwrap() + 1e-6, &cfg, 26), SlotOwner::Data(4));
    }
}
