//! Sleep/listen MAC in the style of S-MAC.
//!
//! Every node listens for `duty * period` seconds at the start of each cycle,
//! offset by its own phase, and sleeps otherwise. Schedules are announced in
//! SYNC frames, one per followed schedule every `sync_every` cycles. A node
//! listens continuously for the first `sync_every` cycles, and adopts every
//! foreign schedule it hears in addition to its own (a border node).
//!
//! A sender wakes up for the receiver's listen window and contends there.
//! Unicast to a neighbor whose SYNC has not been heard yet waits in the queue
//! until it is. Broadcasts are repeated once per distinct known schedule.
//! Frames are not acknowledged. Adaptive listening and virtual clusters are
//! not modelled.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dest, Frame, FrameBody, Mac, MacCtx, MacFailure, MacIndication, MacQueues, Outgoing};
use crate::error::ConfigError;
use crate::phy::NodeId;
use crate::sim::{EventHandle, SimTime};

/// How station listen phases are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StationPhases {
    /// All stations share phase zero.
    Synchronized,
    /// Each station draws its own phase.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmacConfig {
    pub period_s: f64,
    pub duty: f64,
    pub station_phases: StationPhases,
    /// Contention window in slots.
    pub cw: u32,
    pub slot_s: f64,
    pub difs_s: f64,
    pub phy_header_bytes: usize,
    pub header_bytes: usize,
    /// Unicast frames a sender may deliver in one listen window of a given
    /// receiver; 0 means unlimited.
    pub unicast_per_window: u32,
    /// A schedule broadcast goes out every this many cycles; 0 disables it.
    pub sync_every: u32,
}

impl Default for SmacConfig {
    fn default() -> Self {
        SmacConfig {
            period_s: 1.0,
            duty: 0.1,
            station_phases: StationPhases::Synchronized,
            cw: 32,
            slot_s: 20e-6,
            difs_s: 50e-6,
            phy_header_bytes: 6,
            header_bytes: 11,
            unicast_per_window: 2,
            sync_every: 10,
        }
    }
}

impl SmacConfig {
    pub fn listen_s(&self) -> f64 {
        self.duty * self.period_s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.period_s > 0.0 && self.period_s.is_finite()) {
            return Err(ConfigError::invalid("mac.smac.period_s", "must be positive"));
        }
        if !(self.duty > 0.0 && self.duty < 1.0) {
            return Err(ConfigError::invalid("mac.smac.duty", "must lie strictly between 0 and 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmacState {
    Awake,
    Asleep,
}

/// Schedule state of a node with listen phase `phase` at time `now`.
pub fn smac_state(now: SimTime, phase: f64, cfg: &SmacConfig) -> SmacState {
    if (now.secs() - phase).rem_euclid(cfg.period_s) < cfg.listen_s() {
        SmacState::Awake
    } else {
        SmacState::Asleep
    }
}

/// Start of the listen window (of a node with `phase`) that is open at `now`
/// with at least `needed` seconds left, or else the next one to open.
pub fn next_listen_start(now: f64, needed: f64, phase: f64, cfg: &SmacConfig) -> f64 {
    let p = cfg.period_s;
    let into = (now - phase).rem_euclid(p);
    let current = now - into;
    if into + needed <= cfg.listen_s() {
        now
    } else {
        current + p
    }
}

const TOKEN_LISTEN_START: u32 = 1;
const TOKEN_LISTEN_END: u32 = 2;
const TOKEN_CONTEND: u32 = 3;
const TOKEN_SENSE: u32 = 4;
const TOKEN_DISCOVERY_END: u32 = 5;
/// Listen timers carry the schedule index above these bits.
const TOKEN_BITS: u32 = 4;

fn same_phase(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Idle,
    Waiting,
    Contending,
    BusyWait,
    Transmitting,
}

pub struct SmacMac {
    cfg: SmacConfig,
    bitrate: f64,
    queues: MacQueues,
    state: State,
    cycles: u64,
    seq: u64,
    timer: Option<EventHandle>,
    /// Phases still to cover for the broadcast at the head of the queue.
    bcast_targets: Option<Vec<f64>>,
    /// Phase and end of the window currently targeted.
    target: Option<(f64, SimTime)>,
    sent_in_window: HashMap<(u64, i64), u32>,
    replan: bool,
    /// Destination of the head frame the current access was planned for.
    planned: Option<Dest>,
    /// Schedules followed; the node's own comes first.
    schedules: Vec<f64>,
    open_windows: usize,
    discovering: bool,
    /// Neighbor schedules learned from SYNC frames.
    known: HashMap<NodeId, f64>,
    held: bool,
}

impl SmacMac {
    pub fn new(cfg: SmacConfig, bitrate: f64, queue_capacity: usize) -> Self {
        SmacMac {
            cfg,
            bitrate,
            queues: MacQueues::new(queue_capacity),
            state: State::Idle,
            cycles: 0,
            seq: 0,
            timer: None,
            bcast_targets: None,
            target: None,
            sent_in_window: HashMap::new(),
            replan: false,
            planned: None,
            schedules: Vec::new(),
            open_windows: 0,
            discovering: false,
            known: HashMap::new(),
            held: false,
        }
    }

    /// Neighbor schedules known before the run starts.
    pub fn with_known(mut self, known: impl IntoIterator<Item = (NodeId, f64)>) -> Self {
        self.known.extend(known);
        self
    }

    pub fn knows(&self, node: NodeId) -> bool {
        self.known.contains_key(&node)
    }

    pub fn schedules(&self) -> &[f64] {
        &self.schedules
    }

    /// Starts the listen timers of schedule `k`.
    fn arm_schedule(&mut self, ctx: &mut dyn MacCtx, k: usize) {
        let phase = self.schedules[k];
        let tag = (k as u32) << TOKEN_BITS;
        let into = (ctx.now().secs() - phase).rem_euclid(self.cfg.period_s);
        if into < self.cfg.listen_s() {
            self.open_windows += 1;
            ctx.set_timer(self.cfg.listen_s() - into, TOKEN_LISTEN_END | tag);
        }
        ctx.set_timer(self.cfg.period_s - into, TOKEN_LISTEN_START | tag);
    }

    fn announce(&mut self) {
        for phase in self.schedules.clone() {
            let sync = Outgoing {
                next_hop: Dest::Broadcast,
                body: FrameBody::Sync { phase },
            };
            if self.queues.push(sync).is_err() {
                break;
            }
        }
    }

    pub fn airtime(&self, bytes: usize) -> f64 {
        ((self.cfg.phy_header_bytes + bytes) * 8) as f64 / self.bitrate
    }

    fn head_airtime(&self) -> Option<f64> {
        self.queues
            .front()
            .map(|o| self.airtime(o.body.net_bytes() + self.cfg.header_bytes))
    }

    /// Start of the window of `phase` containing `t`.
    fn window_start(&self, t: f64, phase: f64) -> f64 {
        let k = ((t - phase) / self.cfg.period_s + 1e-9).floor();
        phase + k * self.cfg.period_s
    }

    fn window_key(&self, phase: f64, start: f64) -> (u64, i64) {
        let k = ((start - phase) / self.cfg.period_s).round() as i64;
        (phase.to_bits(), k)
    }

    fn update_radio(&mut self, ctx: &mut dyn MacCtx) {
        let needed = self.open_windows > 0 || self.discovering || ctx.is_transmitting() || matches!(
            self.state,
            State::Contending | State::BusyWait | State::Transmitting
        );
        ctx.set_awake(needed);
    }

    fn plan(&mut self, ctx: &mut dyn MacCtx) {
        if self.state != State::Idle {
            return;
        }
        let Some(airtime) = self.head_airtime() else {
            self.update_radio(ctx);
            return;
        };
        let head = self.queues.front().expect("queue not empty");
        let head_dest = head.next_hop;
        let phase = match head.next_hop {
            Dest::Unicast(hop) => match self.known.get(&hop) {
                Some(&p) => p,
                None if !ctx.neighbors().contains(&hop) => {
                    self.held = false;
                    let out = self.queues.pop().expect("head exists");
                    let frame = self.build(ctx.node(), out);
                    ctx.trace("neighbor-lost", format!("dst={} seq={}", frame.dst, frame.seq));
                    ctx.indicate(MacIndication::Failed(frame, MacFailure::NeighborLost));
                    return self.plan(ctx);
                }
                None => {
                    if !std::mem::replace(&mut self.held, true) {
                        ctx.trace("schedule-unknown", format!("dst={hop}"));
                    }
                    self.update_radio(ctx);
                    return;
                }
            },
            Dest::Broadcast => {
                if self.bcast_targets.is_none() {
                    self.bcast_targets = Some(self.broadcast_phases(ctx, &head.body));
                }
                let now = ctx.now().secs();
                let needed = self.access_time(airtime);
                let targets = self.bcast_targets.as_ref().expect("targets set");
                *targets
                    .iter()
                    .min_by(|a, b| {
                        next_listen_start(now, needed, **a, &self.cfg)
                            .total_cmp(&next_listen_start(now, needed, **b, &self.cfg))
                    })
                    .expect("at least one target")
            }
        };
        let now = ctx.now().secs();
        let needed = self.access_time(airtime);
        let mut start = next_listen_start(now, needed, phase, &self.cfg);
        if let Dest::Unicast(_) = head.next_hop {
            if self.cfg.unicast_per_window > 0 {
                let ws = self.window_start(start, phase);
                let key = self.window_key(phase, ws);
                if self.sent_in_window.get(&key).copied().unwrap_or(0) >= self.cfg.unicast_per_window {
                    start = ws + self.cfg.period_s;
                }
            }
        }
        self.held = false;
        let window_start = self.window_start(start, phase);
        let end = SimTime::from_secs(window_start + self.cfg.listen_s());
        self.target = Some((phase, end));
        self.planned = Some(head_dest);
        self.state = State::Waiting;
        self.timer = Some(ctx.set_timer((start - now).max(0.0), TOKEN_CONTEND));
        self.update_radio(ctx);
    }

    fn broadcast_phases(&self, ctx: &dyn MacCtx, body: &FrameBody) -> Vec<f64> {
        if let FrameBody::Sync { phase } = body {
            return vec![*phase];
        }
        let mut phases: Vec<f64> = ctx
            .neighbors()
            .into_iter()
            .filter_map(|n| self.known.get(&n).copied())
            .chain(self.schedules.iter().copied())
            .collect();
        phases.sort_by(f64::total_cmp);
        phases.dedup_by(|a, b| same_phase(*a, *b));
        phases
    }

    /// Worst-case time from window entry to the end of the transmission.
    fn access_time(&self, airtime: f64) -> f64 {
        self.cfg.difs_s + f64::from(self.cfg.cw) * self.cfg.slot_s + airtime
    }

    fn contend(&mut self, ctx: &mut dyn MacCtx) {
        self.state = State::Contending;
        self.update_radio(ctx);
        let slots = ctx.rng().gen_range(0..self.cfg.cw.max(1));
        let wait = self.cfg.difs_s + f64::from(slots) * self.cfg.slot_s;
        self.timer = Some(ctx.set_timer(wait, TOKEN_SENSE));
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

    fn try_send(&mut self, ctx: &mut dyn MacCtx) {
        if std::mem::take(&mut self.replan) {
            self.state = State::Idle;
            self.plan(ctx);
            return;
        }
        if ctx.carrier_busy() {
            self.state = State::BusyWait;
            return;
        }
        let Some(head) = self.queues.front() else {
            self.state = State::Idle;
            self.update_radio(ctx);
            return;
        };
        if Some(head.next_hop) != self.planned {
            // a control frame overtook the planned head
            self.state = State::Idle;
            self.plan(ctx);
            return;
        }
        if let Dest::Unicast(hop) = head.next_hop {
            if !ctx.neighbors().contains(&hop) {
                let out = self.queues.pop().expect("head exists");
                let frame = self.build(ctx.node(), out);
                ctx.trace("neighbor-lost", format!("dst={} seq={}", frame.dst, frame.seq));
                ctx.indicate(MacIndication::Failed(frame, MacFailure::NeighborLost));
                self.state = State::Idle;
                self.plan(ctx);
                return;
            }
        }
        let airtime = self.head_airtime().expect("head exists");
        let (_, end) = self.target.expect("target window set");
        if (ctx.now() + airtime) > end {
            self.state = State::Idle;
            self.plan(ctx);
            return;
        }
        let frame = if let Dest::Unicast(_) = head.next_hop {
            let out = self.queues.pop().expect("head exists");
            self.build(ctx.node(), out)
        } else {
            let out = head.clone();
            self.build(ctx.node(), out)
        };
        ctx.trace("tx", format!("dst={} seq={} kind={:?}", frame.dst, frame.seq, frame.kind()));
        ctx.transmit(frame, airtime);
        self.state = State::Transmitting;
    }
}

impl Mac for SmacMac {
    fn start(&mut self, ctx: &mut dyn MacCtx) {
        self.schedules = vec![ctx.schedule_phase(ctx.node())];
        self.arm_schedule(ctx, 0);
        if self.cfg.sync_every > 0 {
            self.discovering = true;
            let span = f64::from(self.cfg.sync_every) * self.cfg.period_s;
            ctx.set_timer(span, TOKEN_DISCOVERY_END);
        }
        self.update_radio(ctx);
    }

    fn enqueue(&mut self, ctx: &mut dyn MacCtx, out: Outgoing) -> Result<(), Outgoing> {
        self.queues.push(out)?;
        self.plan(ctx);
        Ok(())
    }

    fn on_timer(&mut self, ctx: &mut dyn MacCtx, token: u32) {
        let tag = token & !((1 << TOKEN_BITS) - 1);
        let primary = tag == 0;
        match token & ((1 << TOKEN_BITS) - 1) {
            TOKEN_LISTEN_START => {
                self.open_windows += 1;
                ctx.set_timer(self.cfg.period_s, TOKEN_LISTEN_START | tag);
                ctx.set_timer(self.cfg.listen_s(), TOKEN_LISTEN_END | tag);
                if primary {
                    self.cycles += 1;
                    let now = ctx.now().secs();
                    let horizon = now - 2.0 * self.cfg.period_s;
                    self.sent_in_window.retain(|&(phase, k), _| {
                        f64::from_bits(phase) + k as f64 * self.cfg.period_s > horizon
                    });
                    let every = u64::from(self.cfg.sync_every);
                    // stagger announcements across nodes
                    if every > 0 && (self.cycles + ctx.node() as u64) % every == 0 {
                        self.announce();
                    }
                    if self.state == State::Idle {
                        self.plan(ctx);
                    }
                }
                self.update_radio(ctx);
            }
            TOKEN_LISTEN_END => {
                self.open_windows -= 1;
                self.update_radio(ctx);
            }
            TOKEN_DISCOVERY_END => {
                self.discovering = false;
                self.update_radio(ctx);
            }
            TOKEN_CONTEND if self.state == State::Waiting => {
                self.timer = None;
                self.contend(ctx);
            }
            TOKEN_SENSE if self.state == State::Contending => {
                self.timer = None;
                self.try_send(ctx);
            }
            _ => {}
        }
    }

    fn on_tx_end(&mut self, ctx: &mut dyn MacCtx, frame: &Frame) {
        let (phase, end) = self.target.take().expect("target window set");
        self.state = State::Idle;
        match frame.dst {
            Dest::Unicast(_) => {
                let start = end.secs() - self.cfg.listen_s();
                let key = self.window_key(phase, start);
                *self.sent_in_window.entry(key).or_insert(0) += 1;
                ctx.indicate(MacIndication::Sent(frame.clone()));
            }
            Dest::Broadcast => {
                let targets = self.bcast_targets.as_mut().expect("broadcast targets");
                targets.retain(|p| (*p - phase).abs() > 1e-9);
                if targets.is_empty() {
                    self.bcast_targets = None;
                    self.queues.pop();
                    if !matches!(frame.body, FrameBody::Sync { .. }) {
                        ctx.indicate(MacIndication::Sent(frame.clone()));
                    }
                }
            }
        }
        self.plan(ctx);
        self.update_radio(ctx);
    }

    fn on_receive(&mut self, ctx: &mut dyn MacCtx, frame: Frame) {
        if let FrameBody::Sync { phase } = frame.body {
            self.known.insert(frame.src, phase);
            if !self.schedules.iter().any(|&p| same_phase(p, phase)) {
                self.schedules.push(phase);
                self.arm_schedule(ctx, self.schedules.len() - 1);
                ctx.trace("adopt-schedule", format!("phase={phase:.6} from={}", frame.src));
            }
            if self.state == State::Idle {
                self.plan(ctx);
            }
            self.update_radio(ctx);
            return;
        }
        if frame.dst.accepts(ctx.node()) {
            ctx.indicate(MacIndication::Received(frame));
        }
    }

    fn on_medium(&mut self, ctx: &mut dyn MacCtx, busy: bool) {
        if !busy && self.state == State::BusyWait {
            self.contend(ctx);
        }
    }

    fn set_expecting(&mut self, _ctx: &mut dyn MacCtx, _expecting: bool) {}

    fn purge_next_hop(&mut self, hop: NodeId) -> Vec<Outgoing> {
        let head_affected = self
            .queues
            .front()
            .is_some_and(|o| o.next_hop == Dest::Unicast(hop));
        if head_affected && self.state != State::Idle && self.state != State::Transmitting {
            // the pending access targets a window chosen for the purged head
            self.replan = true;
        }
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
    use crate::sim::RngStream;

    #[test]
    fn listen_schedule_examples() {
        let cfg = SmacConfig::default();
        assert_eq!(smac_state(SimTime::from_secs(0.05), 0.0, &cfg), SmacState::Awake);
        assert_eq!(smac_state(SimTime::from_secs(0.5), 0.0, &cfg), SmacState::Asleep);
        assert_eq!(smac_state(SimTime::from_secs(0.55), 0.5, &cfg), SmacState::Awake);
        assert_eq!(smac_state(SimTime::from_secs(0.1), 0.0, &cfg), SmacState::Asleep);
        assert_eq!(smac_state(SimTime::from_secs(0.05), 0.98, &cfg), SmacState::Awake);
    }

    #[test]
    fn invalid_duty_is_rejected() {
        let cfg = SmacConfig { duty: 1.0, ..SmacConfig::default() };
        assert_eq!(cfg.validate().unwrap_err().field, "mac.smac.duty");
    }

    #[test]
    fn residual_wait_matches_closed_form() {
        // sender phase 0, receiver phase 0.5; frames appear at uniform times
        let cfg = SmacConfig::default();
        let mut rng = RngStream::new(3, "residual");
        let n = 10_000;
        let mut total = 0.0;
        for _ in 0..n {
            let t: f64 = rng.gen_range(0.0..100.0);
            total += next_listen_start(t, 0.0, 0.5, &cfg) - t;
        }
        let mean = total / n as f64;
        let d = cfg.duty;
        let expected = (1.0 - d) * (1.0 - d) * cfg.period_s / 2.0;
        assert!((mean - expected).abs() / expected < 0.1, "mean {mean} vs {expected}");
    }

    fn drive(mac: &mut SmacMac, ctx: &mut ScriptCtx, until_txs: usize) {
        while ctx.txs().len() < until_txs {
            let token = ctx.next_timer().expect("timer pending");
            mac.on_timer(ctx, token);
            if ctx.transmitting {
                ctx.transmitting = false;
                let f = ctx.txs().last().unwrap().1.clone();
                mac.on_tx_end(ctx, &f);
            }
        }
    }

    #[test]
    fn unicast_waits_for_receiver_window() {
        let cfg = SmacConfig { sync_every: 0, ..SmacConfig::default() };
        let mut mac = SmacMac::new(cfg, 2e6, 50).with_known([(1, 0.5)]);
        let mut ctx = ScriptCtx::new(0, 1);
        ctx.neighbors = vec![1];
        mac.start(&mut ctx);
        ctx.now = SimTime::from_secs(0.2);
        mac.enqueue(&mut ctx, data_out(1, 1)).unwrap();
        drive(&mut mac, &mut ctx, 1);
        let (at, _) = ctx.txs()[0];
        assert_eq!(smac_state(SimTime::from_secs(at), 0.5, &cfg), SmacState::Awake);
        assert!(at >= 0.5);
    }

    #[test]
    fn one_unicast_per_receiver_window() {
        let cfg = SmacConfig { sync_every: 0, unicast_per_window: 1, ..SmacConfig::default() };
        let mut mac = SmacMac::new(cfg, 2e6, 50).with_known([(1, 0.0)]);
        let mut ctx = ScriptCtx::new(0, 1);
        ctx.neighbors = vec![1];
        mac.start(&mut ctx);
        for i in 0..3 {
            mac.enqueue(&mut ctx, data_out(1, i)).unwrap();
        }
        drive(&mut mac, &mut ctx, 3);
        let times: Vec<f64> = ctx.txs().iter().map(|t| t.0).collect();
        assert!(times[0] < 0.1);
        assert!(times[1] >= 1.0 && times[1] < 1.1);
        assert!(times[2] >= 2.0 && times[2] < 2.1);
    }

    #[test]
    fn broadcast_covers_each_distinct_schedule() {
        let cfg = SmacConfig { sync_every: 0, ..SmacConfig::default() };
        let mut mac = SmacMac::new(cfg, 2e6, 50).with_known([(1, 0.0), (2, 0.3), (3, 0.3)]);
        let mut ctx = ScriptCtx::new(0, 1);
        ctx.neighbors = vec![1, 2, 3];
        mac.start(&mut ctx);
        let out = Outgoing {
            next_hop: Dest::Broadcast,
            body: FrameBody::Routing(crate::routing::AodvMessage::test_rreq()),
        };
        mac.enqueue(&mut ctx, out).unwrap();
        drive(&mut mac, &mut ctx, 2);
        let times: Vec<f64> = ctx.txs().iter().map(|t| t.0).collect();
        assert_eq!(smac_state(SimTime::from_secs(times[0]), 0.0, &cfg), SmacState::Awake);
        assert_eq!(smac_state(SimTime::from_secs(times[1]), 0.3, &cfg), SmacState::Awake);
        let sent = ctx
            .indications()
            .iter()
            .filter(|i| matches!(i, MacIndication::Sent(_)))
            .count();
        assert_eq!(sent, 1);
        assert_eq!(mac.queue_len(), 0);
    }

    #[test]
    fn radio_sleeps_outside_window_when_idle() {
        let cfg = SmacConfig { sync_every: 0, ..SmacConfig::default() };
        let mut mac = SmacMac::new(cfg, 2e6, 50);
        let mut ctx = ScriptCtx::new(0, 1);
        mac.start(&mut ctx);
        assert!(ctx.awake);
        let token = ctx.next_timer().unwrap();
        assert_eq!(token, TOKEN_LISTEN_END);
        mac.on_timer(&mut ctx, token);
        assert!(!ctx.awake);
    }

    fn sync_from(src: NodeId, phase: f64) -> Frame {
        Frame {
            src,
            dst: Dest::Broadcast,
            seq: 1,
            body: FrameBody::Sync { phase },
            bytes: 20,
        }
    }

    #[test]
    fn unknown_schedule_holds_until_sync() {
        let cfg = SmacConfig { sync_every: 0, ..SmacConfig::default() };
        let mut mac = SmacMac::new(cfg, 2e6, 50);
        let mut ctx = ScriptCtx::new(0, 1);
        ctx.neighbors = vec![1];
        mac.start(&mut ctx);
        mac.enqueue(&mut ctx, data_out(1, 0)).unwrap();
        assert_eq!(ctx.pending_timers(), 2, "only the listen timers are armed");
        ctx.now = SimTime::from_secs(0.42);
        mac.on_receive(&mut ctx, sync_from(1, 0.4));
        assert!(mac.knows(1));
        assert_eq!(mac.schedules().len(), 2);
        drive(&mut mac, &mut ctx, 1);
        let (at, _) = ctx.txs()[0];
        assert_eq!(smac_state(SimTime::from_secs(at), 0.4, &cfg), SmacState::Awake);
    }

    #[test]
    fn held_frame_fails_when_neighbor_leaves() {
        let cfg = SmacConfig { sync_every: 0, ..SmacConfig::default() };
        let mut mac = SmacMac::new(cfg, 2e6, 50);
        let mut ctx = ScriptCtx::new(0, 1);
        ctx.neighbors = vec![1];
        mac.start(&mut ctx);
        mac.enqueue(&mut ctx, data_out(1, 0)).unwrap();
        ctx.neighbors.clear();
        while ctx.indications().is_empty() {
            let token = ctx.next_timer().expect("timer pending");
            mac.on_timer(&mut ctx, token);
        }
        assert!(matches!(
            ctx.indications()[0],
            MacIndication::Failed(_, MacFailure::NeighborLost)
        ));
        assert_eq!(mac.queue_len(), 0);
    }

    #[test]
    fn discovery_listens_through_first_sync_period() {
        let cfg = SmacConfig::default();
        let mut mac = SmacMac::new(cfg, 2e6, 50);
        let mut ctx = ScriptCtx::new(0, 1);
        mac.start(&mut ctx);
        while ctx.now.secs() < 9.9 {
            let token = ctx.next_timer().unwrap();
            mac.on_timer(&mut ctx, token);
            if ctx.transmitting {
                ctx.transmitting = false;
                let f = ctx.txs().last().unwrap().1.clone();
                mac.on_tx_end(&mut ctx, &f);
            }
            if ctx.now.secs() < 10.0 - 1e-9 {
                assert!(ctx.awake, "asleep at {}", ctx.now.secs());
            }
        }
        while ctx.now.secs() < 10.1 - 1e-9 {
            let token = ctx.next_timer().unwrap();
            mac.on_timer(&mut ctx, token);
            if ctx.transmitting {
                ctx.transmitting = false;
                let f = ctx.txs().last().unwrap().1.clone();
                mac.on_tx_end(&mut ctx, &f);
            }
        }
        assert!(!ctx.awake);
    }
}
