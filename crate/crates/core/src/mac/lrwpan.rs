//! 802.15.4 unslotted CSMA-CA with acknowledged unicast.
//!
//! Timing is expressed in PHY symbols of four bits each, so every interval
//! scales with the configured bitrate.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dest, Frame, FrameBody, Mac, MacCtx, MacFailure, MacIndication, MacQueues, Outgoing};
use crate::phy::NodeId;
use crate::sim::{EventHandle, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrwpanConfig {
    pub bits_per_symbol: u32,
    pub unit_backoff_symbols: u32,
    pub cca_symbols: u32,
    pub turnaround_symbols: u32,
    pub ack_wait_symbols: u32,
    pub min_be: u32,
    pub max_be: u32,
    pub max_csma_backoffs: u32,
    pub max_frame_retries: u32,
    pub phy_header_bytes: usize,
    pub header_bytes: usize,
    pub ack_bytes: usize,
}

impl Default for LrwpanConfig {
    fn default() -> Self {
        LrwpanConfig {
            bits_per_symbol: 4,
            unit_backoff_symbols: 20,
            cca_symbols: 8,
            turnaround_symbols: 12,
            ack_wait_symbols: 54,
            min_be: 3,
            max_be: 5,
            max_csma_backoffs: 4,
            max_frame_retries: 3,
            phy_header_bytes: 6,
            header_bytes: 11,
            ack_bytes: 5,
        }
    }
}

/// Random backoff, in unit backoff periods, for exponent `be`.
pub fn lrwpan_backoff_periods(be: u32, rng: &mut RngStream) -> u32 {
    rng.gen_range(0..(1u32 << be.min(31)))
}

const TOKEN_BACKOFF: u32 = 1;
const TOKEN_CCA_END: u32 = 2;
const TOKEN_TURNAROUND: u32 = 3;
const TOKEN_ACK_TIMEOUT: u32 = 4;
const TOKEN_SEND_ACK: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Idle,
    Backoff,
    Cca,
    Turnaround,
    Transmitting,
    WaitAck,
}

pub struct LrwpanMac {
    cfg: LrwpanConfig,
    bitrate: f64,
    /// Battery-powered radio: the receiver is off unless needed.
    low_power: bool,
    expecting: bool,
    queues: MacQueues,
    state: State,
    current: Option<Frame>,
    nb: u32,
    be: u32,
    retries: u32,
    cca_busy: bool,
    timer: Option<EventHandle>,
    ack_due: Vec<(NodeId, u64)>,
    seq: u64,
    last_seen: HashMap<NodeId, u64>,
}

impl LrwpanMac {
    pub fn new(cfg: LrwpanConfig, bitrate: f64, queue_capacity: usize, low_power: bool) -> Self {
        LrwpanMac {
            cfg,
            bitrate,
            low_power,
            expecting: false,
            queues: MacQueues::new(queue_capacity),
            state: State::Idle,
            current: None,
            nb: 0,
            be: cfg.min_be,
            retries: 0,
            cca_busy: false,
            timer: None,
            ack_due: Vec::new(),
            seq: 0,
            last_seen: HashMap::new(),
        }
    }

    pub fn symbol_s(&self) -> f64 {
        f64::from(self.cfg.bits_per_symbol) / self.bitrate
    }

    fn symbols(&self, n: u32) -> f64 {
        f64::from(n) * self.symbol_s()
    }

    pub fn airtime(&self, bytes: usize) -> f64 {
        ((self.cfg.phy_header_bytes + bytes) * 8) as f64 / self.bitrate
    }

    fn update_radio(&mut self, ctx: &mut dyn MacCtx) {
        if !self.low_power {
            return;
        }
        let needed = self.expecting
            || !self.ack_due.is_empty()
            || ctx.is_transmitting()
            || matches!(
                self.state,
                State::Cca | State::Turnaround | State::Transmitting | State::WaitAck
            );
        ctx.set_awake(needed);
    }

    fn start_next(&mut self, ctx: &mut dyn MacCtx) {
        if self.state != State::Idle {
            return;
        }
        let Some(out) = self.queues.pop() else {
            self.update_radio(ctx);
            return;
        };
        self.seq += 1;
        let bytes = out.body.net_bytes() + self.cfg.header_bytes;
        self.current = Some(Frame {
            src: ctx.node(),
            dst: out.next_hop,
            seq: self.seq,
            body: out.body,
            bytes,
        });
        self.retries = 0;
        self.begin_csma(ctx);
    }

    fn begin_csma(&mut self, ctx: &mut dyn MacCtx) {
        self.nb = 0;
        self.be = self.cfg.min_be;
        self.schedule_backoff(ctx);
    }

    fn schedule_backoff(&mut self, ctx: &mut dyn MacCtx) {
        let periods = lrwpan_backoff_periods(self.be, ctx.rng());
        let delay = f64::from(periods) * self.symbols(self.cfg.unit_backoff_symbols);
        self.state = State::Backoff;
        self.timer = Some(ctx.set_timer(delay, TOKEN_BACKOFF));
        self.update_radio(ctx);
    }

    fn finish(&mut self, ctx: &mut dyn MacCtx) {
        self.current = None;
        self.state = State::Idle;
        self.start_next(ctx);
        self.update_radio(ctx);
    }

    fn channel_busy(&mut self, ctx: &mut dyn MacCtx) {
        self.nb += 1;
        self.be = (self.be + 1).min(self.cfg.max_be);
        if self.nb > self.cfg.max_csma_backoffs {
            let frame = self.current.clone().expect("contending without a frame");
            ctx.trace("channel-access-failure", format!("dst={} seq={}", frame.dst, frame.seq));
            ctx.indicate(MacIndication::Failed(frame, MacFailure::ChannelAccessFailure));
            self.finish(ctx);
        } else {
            self.schedule_backoff(ctx);
        }
    }

    #[cfg(test)]
    pub(crate) fn exponent(&self) -> u32 {
        self.be
    }
}

impl Mac for LrwpanMac {
    fn start(&mut self, ctx: &mut dyn MacCtx) {
        ctx.set_awake(!self.low_power);
    }

    fn enqueue(&mut self, ctx: &mut dyn MacCtx, out: Outgoing) -> Result<(), Outgoing> {
        self.queues.push(out)?;
        self.start_next(ctx);
        Ok(())
    }

    fn on_timer(&mut self, ctx: &mut dyn MacCtx, token: u32) {
        match token {
            TOKEN_BACKOFF if self.state == State::Backoff => {
                self.timer = None;
                self.state = State::Cca;
                self.update_radio(ctx);
                self.cca_busy = ctx.carrier_busy();
                self.timer = Some(ctx.set_timer(self.symbols(self.cfg.cca_symbols), TOKEN_CCA_END));
            }
            TOKEN_CCA_END if self.state == State::Cca => {
                self.timer = None;
                if self.cca_busy || ctx.carrier_busy() {
                    self.channel_busy(ctx);
                } else {
                    self.state = State::Turnaround;
                    let t = self.symbols(self.cfg.turnaround_symbols);
                    self.timer = Some(ctx.set_timer(t, TOKEN_TURNAROUND));
                }
            }
            TOKEN_TURNAROUND if self.state == State::Turnaround => {
                self.timer = None;
                if ctx.is_transmitting() {
                    self.channel_busy(ctx);
                    return;
                }
                let frame = self.current.clone().expect("turnaround without a frame");
                let airtime = self.airtime(frame.bytes);
                ctx.trace(
                    "tx",
                    format!("dst={} seq={} retry={} kind={:?}", frame.dst, frame.seq, self.retries, frame.kind()),
                );
                ctx.transmit(frame, airtime);
                self.state = State::Transmitting;
            }
            TOKEN_ACK_TIMEOUT if self.state == State::WaitAck => {
                self.timer = None;
                self.retries += 1;
                if self.retries > self.cfg.max_frame_retries {
                    let frame = self.current.clone().expect("awaiting ack without a frame");
                    ctx.trace("retry-exceeded", format!("dst={} seq={}", frame.dst, frame.seq));
                    ctx.indicate(MacIndication::Failed(frame, MacFailure::RetryExceeded));
                    self.finish(ctx);
                } else {
                    self.begin_csma(ctx);
                }
            }
            TOKEN_SEND_ACK => {
                if let Some((to, seq)) = self.ack_due.pop() {
                    if !ctx.is_transmitting() && ctx.is_awake() {
                        let frame = Frame {
                            src: ctx.node(),
                            dst: Dest::Unicast(to),
                            seq,
                            body: FrameBody::Ack { acked: seq },
                            bytes: self.cfg.ack_bytes,
                        };
                        let airtime = self.airtime(frame.bytes);
                        ctx.transmit(frame, airtime);
                    }
                }
                self.update_radio(ctx);
            }
            _ => {}
        }
    }

    fn on_tx_end(&mut self, ctx: &mut dyn MacCtx, frame: &Frame) {
        if matches!(frame.body, FrameBody::Ack { .. }) {
            self.update_radio(ctx);
            return;
        }
        match frame.dst {
            Dest::Broadcast => {
                ctx.indicate(MacIndication::Sent(frame.clone()));
                self.finish(ctx);
            }
            Dest::Unicast(_) => {
                self.state = State::WaitAck;
                let wait = self.symbols(self.cfg.ack_wait_symbols);
                self.timer = Some(ctx.set_timer(wait, TOKEN_ACK_TIMEOUT));
            }
        }
    }

    fn on_receive(&mut self, ctx: &mut dyn MacCtx, frame: Frame) {
        let me = ctx.node();
        if !frame.dst.accepts(me) {
            return;
        }
        if let FrameBody::Ack { acked } = frame.body {
            let matches = self.state == State::WaitAck
                && self
                    .current
                    .as_ref()
                    .is_some_and(|c| c.seq == acked && c.dst == Dest::Unicast(frame.src));
            if matches {
                if let Some(h) = self.timer.take() {
                    ctx.cancel_timer(h);
                }
                let done = self.current.clone().expect("current frame");
                ctx.indicate(MacIndication::Sent(done));
                self.finish(ctx);
            }
            return;
        }
        if let Dest::Unicast(_) = frame.dst {
            self.ack_due.push((frame.src, frame.seq));
            ctx.set_timer(self.symbols(self.cfg.turnaround_symbols), TOKEN_SEND_ACK);
            if self.last_seen.get(&frame.src) == Some(&frame.seq) {
                return;
            }
            self.last_seen.insert(frame.src, frame.seq);
        }
        ctx.indicate(MacIndication::Received(frame));
    }

    fn on_medium(&mut self, _ctx: &mut dyn MacCtx, busy: bool) {
        if busy && self.state == State::Cca {
            self.cca_busy = true;
        }
    }

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
        true
    }
}
