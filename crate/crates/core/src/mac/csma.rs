//! 802.11-style DCF: basic access with ACKs, binary exponential backoff that
//! freezes while the medium is busy, no RTS/CTS.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dest, Frame, FrameBody, Mac, MacCtx, MacFailure, MacIndication, MacQueues, Outgoing};
use crate::phy::NodeId;
use crate::sim::{EventHandle, RngStream, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsmaConfig {
    pub cw_min: u32,
    pub cw_max: u32,
    pub slot_s: f64,
    pub sifs_s: f64,
    pub difs_s: f64,
    pub retry_limit: u32,
    /// PHY preamble and header time added to every frame.
    pub plcp_s: f64,
    pub header_bytes: usize,
    pub ack_bytes: usize,
}

impl Default for CsmaConfig {
    fn default() -> Self {
        CsmaConfig {
            cw_min: 31,
            cw_max: 1023,
            slot_s: 20e-6,
            sifs_s: 10e-6,
            difs_s: 50e-6,
            retry_limit: 7,
            plcp_s: 192e-6,
            header_bytes: 28,
            ack_bytes: 14,
        }
    }
}

/// Contention window upper bound for the given retry count.
pub fn contention_window(retry: u32, cfg: &CsmaConfig) -> u32 {
    let factor = 1u64 << retry.min(32);
    let cw = (u64::from(cfg.cw_min) + 1) * factor - 1;
    cw.min(u64::from(cfg.cw_max)) as u32
}

/// Uniform backoff in `[0, CW(retry)]` slots.
pub fn csma_backoff_slots(retry: u32, cfg: &CsmaConfig, rng: &mut RngStream) -> u32 {
    rng.gen_range(0..=contention_window(retry, cfg))
}

const TOKEN_BACKOFF: u32 = 1;
const TOKEN_ACK_TIMEOUT: u32 = 2;
const TOKEN_SEND_ACK: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Idle,
    Contend,
    Transmitting,
    WaitAck,
}

pub struct CsmaMac {
    cfg: CsmaConfig,
    bitrate: f64,
    queues: MacQueues,
    state: State,
    current: Option<Frame>,
    retry: u32,
    backoff: u32,
    countdown_from: Option<SimTime>,
    fire_at: Option<SimTime>,
    timer: Option<EventHandle>,
    ack_due: Vec<(NodeId, u64)>,
    seq: u64,
    last_seen: HashMap<NodeId, u64>,
}

impl CsmaMac {
    pub fn new(cfg: CsmaConfig, bitrate: f64, queue_capacity: usize) -> Self {
        CsmaMac {
            cfg,
            bitrate,
            queues: MacQueues::new(queue_capacity),
            state: State::Idle,
            current: None,
            retry: 0,
            backoff: 0,
            countdown_from: None,
            fire_at: None,
            timer: None,
            ack_due: Vec::new(),
            seq: 0,
            last_seen: HashMap::new(),
        }
    }

    pub fn airtime(&self, bytes: usize) -> f64 {
        self.cfg.plcp_s + (bytes * 8) as f64 / self.bitrate
    }

    fn frame_from(&mut self, node: NodeId, out: Outgoing) -> Frame {
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

    fn start_next(&mut self, ctx: &mut dyn MacCtx) {
        if self.state != State::Idle {
            return;
        }
        let Some(out) = self.queues.pop() else {
            return;
        };
        let frame = self.frame_from(ctx.node(), out);
        self.current = Some(frame);
        self.retry = 0;
        self.backoff = csma_backoff_slots(0, &self.cfg, ctx.rng());
        self.state = State::Contend;
        self.try_countdown(ctx);
    }

    fn try_countdown(&mut self, ctx: &mut dyn MacCtx) {
        if self.state != State::Contend || self.timer.is_some() || ctx.carrier_busy() {
            return;
        }
        let wait = self.cfg.difs_s + f64::from(self.backoff) * self.cfg.slot_s;
        self.countdown_from = Some(ctx.now());
        self.fire_at = Some(ctx.now() + wait);
        self.timer = Some(ctx.set_timer(wait, TOKEN_BACKOFF));
    }

    fn freeze(&mut self, ctx: &mut dyn MacCtx) {
        if self.state != State::Contend {
            return;
        }
        if self.fire_at.is_some_and(|t| t <= ctx.now()) {
            // countdown ends in this very slot; the busy medium came too late
            return;
        }
        if let Some(h) = self.timer.take() {
            ctx.cancel_timer(h);
            let from = self.countdown_from.take().expect("countdown start recorded");
            let counted = ctx.now() - from - self.cfg.difs_s;
            if counted > 0.0 {
                let slots = (counted / self.cfg.slot_s + 1e-9).floor() as u32;
                self.backoff = self.backoff.saturating_sub(slots);
            }
        }
    }

    fn finish(&mut self, ctx: &mut dyn MacCtx) {
        self.current = None;
        self.state = State::Idle;
        self.start_next(ctx);
    }

    fn send_pending_ack(&mut self, ctx: &mut dyn MacCtx) {
        if ctx.is_transmitting() {
            // our own frame is on air; the peer will time out and retry
            self.ack_due.clear();
            return;
        }
        if let Some((to, seq)) = self.ack_due.pop() {
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

    #[cfg(test)]
    pub(crate) fn backoff_remaining(&self) -> u32 {
        self.backoff
    }
}

impl Mac for CsmaMac {
    fn start(&mut self, ctx: &mut dyn MacCtx) {
        ctx.set_awake(true);
    }

    fn enqueue(&mut self, ctx: &mut dyn MacCtx, out: Outgoing) -> Result<(), Outgoing> {
        self.queues.push(out)?;
        self.start_next(ctx);
        Ok(())
    }

    fn on_timer(&mut self, ctx: &mut dyn MacCtx, token: u32) {
        match token {
            TOKEN_BACKOFF => {
                self.timer = None;
                self.countdown_from = None;
                if self.state != State::Contend {
                    return;
                }
                if ctx.is_transmitting() {
                    // an ACK of ours is on air; contend again afterwards
                    return;
                }
                let frame = self.current.clone().expect("contending without a frame");
                let airtime = self.airtime(frame.bytes);
                ctx.trace(
                    "tx",
                    format!("dst={} seq={} retry={} kind={:?}", frame.dst, frame.seq, self.retry, frame.kind()),
                );
                ctx.transmit(frame, airtime);
                self.state = State::Transmitting;
            }
            TOKEN_ACK_TIMEOUT => {
                self.timer = None;
                if self.state != State::WaitAck {
                    return;
                }
                self.retry += 1;
                if self.retry > self.cfg.retry_limit {
                    let frame = self.current.clone().expect("awaiting ack without a frame");
                    ctx.trace("retry-exceeded", format!("dst={} seq={}", frame.dst, frame.seq));
                    ctx.indicate(MacIndication::Failed(frame, MacFailure::RetryExceeded));
                    self.finish(ctx);
                } else {
                    self.backoff = csma_backoff_slots(self.retry, &self.cfg, ctx.rng());
                    self.state = State::Contend;
                    self.try_countdown(ctx);
                }
            }
            TOKEN_SEND_ACK => self.send_pending_ack(ctx),
            _ => {}
        }
    }

    fn on_tx_end(&mut self, ctx: &mut dyn MacCtx, frame: &Frame) {
        if matches!(frame.body, FrameBody::Ack { .. }) {
            self.try_countdown(ctx);
            return;
        }
        debug_assert_eq!(self.state, State::Transmitting);
        match frame.dst {
            Dest::Broadcast => {
                ctx.indicate(MacIndication::Sent(frame.clone()));
                self.finish(ctx);
            }
            Dest::Unicast(_) => {
                self.state = State::WaitAck;
                let ack_time = self.airtime(self.cfg.ack_bytes);
                let wait = self.cfg.sifs_s + ack_time + 2.0 * self.cfg.slot_s;
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
            ctx.set_timer(self.cfg.sifs_s, TOKEN_SEND_ACK);
            if self.last_seen.get(&frame.src) == Some(&frame.seq) {
                return;
            }
            self.last_seen.insert(frame.src, frame.seq);
        }
        ctx.indicate(MacIndication::Received(frame));
    }

    fn on_medium(&mut self, ctx: &mut dyn MacCtx, busy: bool) {
        if busy {
            self.freeze(ctx);
        } else {
            self.try_countdown(ctx);
        }
    }

    fn set_expecting(&mut self, _ctx: &mut dyn MacCtx, _expecting: bool) {}

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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mac::testing::{data_out, ScriptCtx};

    fn cfg() -> CsmaConfig {
        CsmaConfig::default()
    }

    #[test]
    fn window_sequence_doubles_and_caps() {
        let c = cfg();
        let seq: Vec<u32> = (0..8).map(|r| contention_window(r, &c)).collect();
        assert_eq!(seq, vec![31, 63, 127, 255, 511, 1023, 1023, 1023]);
        assert_eq!(contention_window(40, &c), 1023);
    }

    #[test]
    fn backoff_bounds() {
        let c = cfg();
        let mut rng = RngStream::new(5, "bo");
        for _ in 0..10_000 {
            assert!(csma_backoff_slots(0, &c, &mut rng) <= 31);
            assert!(csma_backoff_slots(9, &c, &mut rng) <= 1023);
        }
    }

    #[test]
    fn backoff_is_uniform_chi_square() {
        let c = cfg();
        let mut rng = RngStream::new(11, "chi");
        let n = 100_000;
        let mut bins = [0u32; 32];
        for _ in 0..n {
            bins[csma_backoff_slots(0, &c, &mut rng) as usize] += 1;
        }
        let expected = n as f64 / 32.0;
        let chi2: f64 = bins
            .iter()
            .map(|&o| (f64::from(o) - expected).powi(2) / expected)
            .sum();
        // chi-square critical value, 31 degrees of freedom, alpha = 0.01
        assert!(chi2 < 52.191, "chi2 = {chi2}");
    }

    #[test]
    fn idle_channel_zero_backoff_transmits_after_difs() {
        let c = CsmaConfig { cw_min: 0, ..cfg() };
        let mut mac = CsmaMac::new(c, 2e6, 50);
        let mut ctx = ScriptCtx::new(0, 1);
        mac.start(&mut ctx);
        mac.enqueue(&mut ctx, data_out(1, 1)).unwrap();
        let token = ctx.next_timer().unwrap();
        assert!((ctx.now.secs() - c.difs_s).abs() < 1e-12);
        mac.on_timer(&mut ctx, token);
        let txs = ctx.txs();
        assert_eq!(txs.len(), 1);
        assert!((txs[0].0 - c.difs_s).abs() < 1e-12);
    }

    #[test]
    fn backoff_freezes_while_busy() {
        let c = CsmaConfig { cw_min: 1023, ..cfg() };
        let mut mac = CsmaMac::new(c, 2e6, 50);
        let mut ctx = ScriptCtx::new(0, 3);
        mac.enqueue(&mut ctx, data_out(1, 1)).unwrap();
        let start = mac.backoff_remaining();
        assert!(start >= 10, "seeded draw should leave room for the check");
        // medium turns busy after DIFS + 5.5 slots
        ctx.now = SimTime::from_secs(c.difs_s + 5.5 * c.slot_s);
        ctx.busy = true;
        mac.on_medium(&mut ctx, true);
        assert_eq!(mac.backoff_remaining(), start - 5);
        assert_eq!(ctx.pending_timers(), 0);
        ctx.now = SimTime::from_secs(1.0);
        ctx.busy = false;
        mac.on_medium(&mut ctx, false);
        assert_eq!(ctx.pending_timers(), 1);
        ctx.next_timer();
        let expected = 1.0 + c.difs_s + f64::from(start - 5) * c.slot_s;
        assert!((ctx.now.secs() - expected).abs() < 1e-9);
    }

    #[test]
    fn retry_limit_exhaustion_drops_frame() {
        let mut mac = CsmaMac::new(cfg(), 2e6, 50);
        let mut ctx = ScriptCtx::new(0, 9);
        mac.enqueue(&mut ctx, data_out(1, 1)).unwrap();
        let mut attempts = 0;
        while let Some(token) = ctx.next_timer() {
            mac.on_timer(&mut ctx, token);
            if token == TOKEN_BACKOFF {
                attempts += 1;
                ctx.transmitting = false;
                let frame = ctx.txs().last().unwrap().1.clone();
                mac.on_tx_end(&mut ctx, &frame);
            }
        }
        assert_eq!(attempts, 8, "initial attempt plus seven retries");
        let failed: Vec<_> = ctx
            .indications()
            .into_iter()
            .filter(|i| matches!(i, MacIndication::Failed(_, MacFailure::RetryExceeded)))
            .collect();
        assert_eq!(failed.len(), 1);
    }

    #[test]
    fn ack_completes_and_duplicates_are_suppressed() {
        let mut tx = CsmaMac::new(cfg(), 2e6, 50);
        let mut ctx = ScriptCtx::new(0, 4);
        tx.enqueue(&mut ctx, data_out(1, 1)).unwrap();
        let token = ctx.next_timer().unwrap();
        tx.on_timer(&mut ctx, token);
        ctx.transmitting = false;
        let frame = ctx.txs()[0].1.clone();
        tx.on_tx_end(&mut ctx, &frame);

        // receiver side
        let mut rx = CsmaMac::new(cfg(), 2e6, 50);
        let mut rctx = ScriptCtx::new(1, 5);
        rx.on_receive(&mut rctx, frame.clone());
        rx.on_receive(&mut rctx, frame.clone());
        let received = rctx
            .indications()
            .into_iter()
            .filter(|i| matches!(i, MacIndication::Received(_)))
            .count();
        assert_eq!(received, 1);
        let token = rctx.next_timer().unwrap();
        rx.on_timer(&mut rctx, token);
        let ack = rctx.txs()[0].1.clone();
        assert_eq!(ack.body, FrameBody::Ack { acked: frame.seq });

        tx.on_receive(&mut ctx, ack);
        assert!(ctx
            .indications()
            .iter()
            .any(|i| matches!(i, MacIndication::Sent(f) if f.seq == frame.seq)));
        assert_eq!(ctx.pending_timers(), 0);
    }
}
