//! AODV route discovery and maintenance.
//!
//! [`Aodv`] is the per-node protocol state. Handlers are pure with respect
//! to the simulator: they return [`RoutingAction`]s for the engine to carry
//! out, which keeps the protocol testable on a bare event queue.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::app::DataPacket;
use crate::error::ConfigError;
use crate::metrics::DropReason;
use crate::phy::NodeId;
use crate::sim::{RngStream, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AodvConfig {
    pub route_lifetime_s: f64,
    /// Extend a route's lifetime whenever data is forwarded over it.
    pub refresh_on_use: bool,
    pub rreq_attempts: u32,
    pub rreq_wait_s: f64,
    pub jitter_s: f64,
    pub pending_capacity: usize,
    pub ttl: u32,
}

impl Default for AodvConfig {
    fn default() -> Self {
        AodvConfig {
            route_lifetime_s: 10.0,
            refresh_on_use: false,
            rreq_attempts: 3,
            rreq_wait_s: 1.0,
            jitter_s: 0.01,
            pending_capacity: 50,
            ttl: 30,
        }
    }
}

impl AodvConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.route_lifetime_s > 0.0) {
            return Err(ConfigError::invalid("routing.route_lifetime_s", "must be positive"));
        }
        if self.rreq_attempts == 0 {
            return Err(ConfigError::invalid("routing.rreq_attempts", "must be at least 1"));
        }
        if !(self.rreq_wait_s > 0.0) {
            return Err(ConfigError::invalid("routing.rreq_wait_s", "must be positive"));
        }
        if !(self.jitter_s >= 0.0) {
            return Err(ConfigError::invalid("routing.jitter_s", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AodvMessage {
    Rreq {
        id: u32,
        orig: NodeId,
        orig_seq: u32,
        dest: NodeId,
        dest_seq: Option<u32>,
        hops: u32,
        ttl: u32,
    },
    Rrep {
        orig: NodeId,
        dest: NodeId,
        dest_seq: u32,
        hops: u32,
        lifetime_s: f64,
    },
    Rerr {
        unreachable: Vec<(NodeId, u32)>,
    },
}

impl AodvMessage {
    /// Size on the wire, following the standard message layouts.
    pub fn wire_bytes(&self) -> usize {
        match self {
            AodvMessage::Rreq { .. } => 24,
            AodvMessage::Rrep { .. } => 20,
            AodvMessage::Rerr { unreachable } => 4 + 8 * unreachable.len(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AodvMessage::Rreq { .. } => "RREQ",
            AodvMessage::Rrep { .. } => "RREP",
            AodvMessage::Rerr { .. } => "RERR",
        }
    }

    #[cfg(test)]
    pub(crate) fn test_rreq() -> Self {
        AodvMessage::Rreq {
            id: 1,
            orig: 25,
            orig_seq: 1,
            dest: 12,
            dest_seq: None,
            hops: 0,
            ttl: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteEntry {
    pub dest: NodeId,
    pub next_hop: NodeId,
    pub hops: u32,
    pub seq: u32,
    pub valid_seq: bool,
    pub expires: SimTime,
    pub valid: bool,
}

impl RouteEntry {
    pub fn usable(&self, now: SimTime) -> bool {
        self.valid && self.expires > now
    }
}

/// Where a control message goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextHop {
    Broadcast,
    Unicast(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RoutingAction {
    /// Hand a control message to the MAC after `delay` seconds.
    Control {
        to: NextHop,
        msg: AodvMessage,
        delay: f64,
    },
    Forward {
        next_hop: NodeId,
        packet: DataPacket,
    },
    Deliver(DataPacket),
    Drop {
        packet: DataPacket,
        reason: DropReason,
    },
    /// Call [`Aodv::on_rreq_timeout`] after `delay` seconds.
    Timer {
        delay: f64,
        dest: NodeId,
        id: u32,
    },
    /// Discovery started (true) or finished (false) at this node.
    Expecting(bool),
    /// Remove queued frames for this neighbor from the MAC.
    Purge(NodeId),
    Trace {
        event: &'static str,
        details: String,
    },
}

#[derive(Debug, Clone)]
struct Discovery {
    attempt: u32,
    id: u32,
}

/// Per-node AODV state.
#[derive(Debug, Clone)]
pub struct Aodv {
    me: NodeId,
    cfg: AodvConfig,
    seq: u32,
    next_rreq_id: u32,
    routes: BTreeMap<NodeId, RouteEntry>,
    seen: HashSet<(NodeId, u32)>,
    pending: VecDeque<DataPacket>,
    discovering: HashMap<NodeId, Discovery>,
}

impl Aodv {
    pub fn new(me: NodeId, cfg: AodvConfig) -> Self {
        Aodv {
            me,
            cfg,
            seq: 0,
            next_rreq_id: 0,
            routes: BTreeMap::new(),
            seen: HashSet::new(),
            pending: VecDeque::new(),
            discovering: HashMap::new(),
        }
    }

    pub fn node(&self) -> NodeId {
        self.me
    }

    pub fn seq(&self) -> u32 {
        self.seq
    }

    pub fn routes(&self) -> impl Iterator<Item = &RouteEntry> {
        self.routes.values()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Unexpired valid route to `dest`.
    pub fn route_lookup(&self, dest: NodeId, now: SimTime) -> Option<&RouteEntry> {
        self.routes.get(&dest).filter(|r| r.usable(now))
    }

    /// Installs or updates a route when the offered one is fresher, or as
    /// fresh but shorter, or the existing one is unusable. Returns true if
    /// the table changed.
    fn offer_route(
        &mut self,
        dest: NodeId,
        next_hop: NodeId,
        hops: u32,
        seq: Option<u32>,
        now: SimTime,
        lifetime_s: f64,
    ) -> bool {
        let expires = now + lifetime_s;
        let accept = match self.routes.get(&dest) {
            None => true,
            Some(r) => match seq {
                _ if !r.usable(now) => seq.is_none_or(|s| !r.valid_seq || s >= r.seq),
                Some(s) if r.valid_seq => s > r.seq || (s == r.seq && hops < r.hops),
                Some(_) => true,
                None => hops < r.hops,
            },
        };
        if !accept {
            return false;
        }
        let (seq, valid_seq) = match (seq, self.routes.get(&dest)) {
            (Some(s), _) => (s, true),
            (None, Some(r)) => (r.seq, r.valid_seq),
            (None, None) => (0, false),
        };
        self.routes.insert(
            dest,
            RouteEntry {
                dest,
                next_hop,
                hops,
                seq,
                valid_seq,
                expires,
                valid: true,
            },
        );
        true
    }

    /// Data from the local application.
    pub fn send_data(&mut self, packet: DataPacket, now: SimTime, rng: &mut RngStream) -> Vec<RoutingAction> {
        let dest = packet.dst;
        if dest == self.me {
            return vec![RoutingAction::Deliver(packet)];
        }
        if let Some(next_hop) = self.use_route(dest, now) {
            return vec![RoutingAction::Forward { next_hop, packet }];
        }
        let mut actions = Vec::new();
        if self.pending.len() >= self.cfg.pending_capacity {
            actions.push(RoutingAction::Drop {
                packet,
                reason: DropReason::IfqOverflow,
            });
        } else {
            self.pending.push_back(packet);
        }
        if !self.discovering.contains_key(&dest) {
            actions.extend(self.originate_rreq(dest, now, rng));
        }
        actions
    }

    fn use_route(&mut self, dest: NodeId, now: SimTime) -> Option<NodeId> {
        let lifetime = self.cfg.route_lifetime_s;
        let refresh = self.cfg.refresh_on_use;
        let r = self.routes.get_mut(&dest).filter(|r| r.usable(now))?;
        if refresh {
            r.expires = r.expires.max(now + lifetime);
        }
        Some(r.next_hop)
    }

    /// Starts (or restarts) a discovery flood for `dest`.
    pub fn originate_rreq(&mut self, dest: NodeId, now: SimTime, _rng: &mut RngStream) -> Vec<RoutingAction> {
        let mut actions = Vec::new();
        let attempt = match self.discovering.get(&dest) {
            Some(d) => d.attempt + 1,
            None => {
                actions.push(RoutingAction::Expecting(true));
                0
            }
        };
        self.seq += 1;
        self.next_rreq_id += 1;
        let id = self.next_rreq_id;
        self.seen.insert((self.me, id));
        self.discovering.insert(dest, Discovery { attempt, id });
        let dest_seq = self.routes.get(&dest).filter(|r| r.valid_seq).map(|r| r.seq);
        actions.push(RoutingAction::Trace {
            event: "rreq-originate",
            details: format!("dest={dest} id={id} attempt={}", attempt + 1),
        });
        actions.push(RoutingAction::Control {
            to: NextHop::Broadcast,
            msg: AodvMessage::Rreq {
                id,
                orig: self.me,
                orig_seq: self.seq,
                dest,
                dest_seq,
                hops: 0,
                ttl: self.cfg.ttl,
            },
            delay: 0.0,
        });
        let wait = self.cfg.rreq_wait_s * f64::from(1u32 << attempt.min(16));
        actions.push(RoutingAction::Timer { delay: wait, dest, id });
        let _ = now;
        actions
    }

    /// Discovery wait expired.
    pub fn on_rreq_timeout(&mut self, dest: NodeId, id: u32, now: SimTime, rng: &mut RngStream) -> Vec<RoutingAction> {
        let Some(d) = self.discovering.get(&dest) else {
            return Vec::new();
        };
        if d.id != id {
            return Vec::new();
        }
        if self.route_lookup(dest, now).is_some() {
            self.discovering.remove(&dest);
            return vec![RoutingAction::Expecting(!self.discovering.is_empty())];
        }
        if d.attempt + 1 < self.cfg.rreq_attempts {
            return self.originate_rreq(dest, now, rng);
        }
        self.discovering.remove(&dest);
        let mut actions = vec![RoutingAction::Trace {
            event: "discovery-failed",
            details: format!("dest={dest}"),
        }];
        let (drop, keep): (Vec<_>, Vec<_>) = self.pending.drain(..).partition(|p| p.dst == dest);
        self.pending = keep.into();
        actions.extend(drop.into_iter().map(|packet| RoutingAction::Drop {
            packet,
            reason: DropReason::NoRoute,
        }));
        actions.push(RoutingAction::Expecting(!self.discovering.is_empty()));
        actions
    }

    pub fn handle_rreq(&mut self, from: NodeId, msg: AodvMessage, now: SimTime, rng: &mut RngStream) -> Vec<RoutingAction> {
        let AodvMessage::Rreq {
            id,
            orig,
            orig_seq,
            dest,
            dest_seq,
            hops,
            ttl,
        } = msg
        else {
            panic!("handle_rreq given {msg:?}");
        };
        if orig == self.me || !self.seen.insert((orig, id)) {
            return Vec::new();
        }
        let lifetime = self.cfg.route_lifetime_s;
        self.offer_route(from, from, 1, None, now, lifetime);
        self.offer_route(orig, from, hops + 1, Some(orig_seq), now, lifetime);
        let mut actions = Vec::new();
        if dest == self.me {
            if let Some(s) = dest_seq {
                self.seq = self.seq.max(s);
            }
            self.seq += 1;
            actions.push(RoutingAction::Trace {
                event: "rrep-originate",
                details: format!("orig={orig} id={id}"),
            });
            actions.push(RoutingAction::Control {
                to: NextHop::Unicast(from),
                msg: AodvMessage::Rrep {
                    orig,
                    dest: self.me,
                    dest_seq: self.seq,
                    hops: 0,
                    lifetime_s: lifetime,
                },
                delay: 0.0,
            });
            return actions;
        }
        if let Some(r) = self.route_lookup(dest, now) {
            let fresh_enough = r.valid_seq && dest_seq.is_none_or(|s| r.seq >= s);
            if fresh_enough {
                let remaining = r.expires - now;
                actions.push(RoutingAction::Trace {
                    event: "rrep-intermediate",
                    details: format!("orig={orig} dest={dest} hops={}", r.hops),
                });
                actions.push(RoutingAction::Control {
                    to: NextHop::Unicast(from),
                    msg: AodvMessage::Rrep {
                        orig,
                        dest,
                        dest_seq: r.seq,
                        hops: r.hops,
                        lifetime_s: remaining,
                    },
                    delay: 0.0,
                });
                return actions;
            }
        }
        if ttl <= 1 {
            return actions;
        }
        let delay = if self.cfg.jitter_s > 0.0 {
            rng.gen_range(0.0..self.cfg.jitter_s)
        } else {
            0.0
        };
        actions.push(RoutingAction::Control {
            to: NextHop::Broadcast,
            msg: AodvMessage::Rreq {
                id,
                orig,
                orig_seq,
                dest,
                dest_seq,
                hops: hops + 1,
                ttl: ttl - 1,
            },
            delay,
        });
        actions
    }

    pub fn handle_rrep(&mut self, from: NodeId, msg: AodvMessage, now: SimTime) -> Vec<RoutingAction> {
        let AodvMessage::Rrep {
            orig,
            dest,
            dest_seq,
            hops,
            lifetime_s,
        } = msg
        else {
            panic!("handle_rrep given {msg:?}");
        };
        let lifetime = self.cfg.route_lifetime_s;
        self.offer_route(from, from, 1, None, now, lifetime);
        let mut updated = self.offer_route(dest, from, hops + 1, Some(dest_seq), now, lifetime_s.max(0.0));
        if !updated {
            // a reply confirming the route already held still travels on
            if let Some(r) = self.routes.get_mut(&dest) {
                if r.next_hop == from && r.seq == dest_seq && r.hops == hops + 1 {
                    r.expires = r.expires.max(now + lifetime_s.max(0.0));
                    updated = true;
                }
            }
        }
        let mut actions = Vec::new();
        if !updated {
            return actions;
        }
        actions.push(RoutingAction::Trace {
            event: "route-install",
            details: format!("dest={dest} via={from} hops={}", hops + 1),
        });
        if orig == self.me {
            if self.discovering.remove(&dest).is_some() {
                actions.push(RoutingAction::Expecting(!self.discovering.is_empty()));
            }
            let (ready, keep): (Vec<_>, Vec<_>) = self.pending.drain(..).partition(|p| p.dst == dest);
            self.pending = keep.into();
            for packet in ready {
                actions.push(RoutingAction::Forward { next_hop: from, packet });
            }
            return actions;
        }
        if let Some(back) = self.route_lookup(orig, now).map(|r| r.next_hop) {
            actions.push(RoutingAction::Control {
                to: NextHop::Unicast(back),
                msg: AodvMessage::Rrep {
                    orig,
                    dest,
                    dest_seq,
                    hops: hops + 1,
                    lifetime_s,
                },
                delay: 0.0,
            });
        }
        actions
    }

    /// Invalidates routes through `from` that it reports unreachable and
    /// propagates the error for those that were in use.
    pub fn handle_rerr(&mut self, from: NodeId, msg: AodvMessage, now: SimTime) -> Vec<RoutingAction> {
        let AodvMessage::Rerr { unreachable } = msg else {
            panic!("handle_rerr given {msg:?}");
        };
        let mut lost = Vec::new();
        for (dest, seq) in unreachable {
            if let Some(r) = self.routes.get_mut(&dest) {
                if r.valid && r.next_hop == from && r.expires > now {
                    r.valid = false;
                    r.seq = r.seq.max(seq);
                    lost.push((dest, r.seq));
                }
            }
        }
        if lost.is_empty() {
            return Vec::new();
        }
        vec![
            RoutingAction::Trace {
                event: "rerr-propagate",
                details: format!("from={from} lost={lost:?}"),
            },
            RoutingAction::Control {
                to: NextHop::Broadcast,
                msg: AodvMessage::Rerr { unreachable: lost },
                delay: 0.0,
            },
        ]
    }

    /// The MAC gave up on `hop`.
    pub fn handle_link_break(&mut self, hop: NodeId, now: SimTime) -> Vec<RoutingAction> {
        let mut lost = Vec::new();
        for r in self.routes.values_mut() {
            if r.next_hop == hop && r.valid {
                let in_use = r.expires > now;
                r.valid = false;
                r.seq = r.seq.wrapping_add(1);
                if in_use {
                    lost.push((r.dest, r.seq));
                }
            }
        }
        let mut actions = vec![
            RoutingAction::Trace {
                event: "link-break",
                details: format!("hop={hop}"),
            },
            RoutingAction::Purge(hop),
        ];
        if !lost.is_empty() {
            actions.push(RoutingAction::Control {
                to: NextHop::Broadcast,
                msg: AodvMessage::Rerr { unreachable: lost },
                delay: 0.0,
            });
        }
        actions
    }

    /// Data received from a neighbor.
    pub fn handle_data(&mut self, from: NodeId, mut packet: DataPacket, now: SimTime) -> Vec<RoutingAction> {
        let _ = from;
        packet.hops += 1;
        if packet.dst == self.me {
            return vec![RoutingAction::Deliver(packet)];
        }
        match self.use_route(packet.dst, now) {
            Some(next_hop) => vec![RoutingAction::Forward { next_hop, packet }],
            None => vec![RoutingAction::Drop {
                packet,
                reason: DropReason::NoRoute,
            }],
        }
    }

    pub fn handle_control(&mut self, from: NodeId, msg: AodvMessage, now: SimTime, rng: &mut RngStream) -> Vec<RoutingAction> {
        match msg {
            AodvMessage::Rreq { .. } => self.handle_rreq(from, msg, now, rng),
            AodvMessage::Rrep { .. } => self.handle_rrep(from, msg, now),
            AodvMessage::Rerr { .. } => self.handle_rerr(from, msg, now),
        }
    }
}

/// Follows next-hop pointers from `start` towards `dest` and returns the
/// number of hops, or `None` on a loop or dead end.
pub fn follow_route(nodes: &[Aodv], start: NodeId, dest: NodeId, now: SimTime) -> Option<u32> {
    let mut at = start;
    let mut hops = 0;
    while at != dest {
        let r = nodes[at].route_lookup(dest, now)?;
        at = r.next_hop;
        hops += 1;
        if hops as usize > nodes.len() {
            return None;
        }
    }
    Some(hops)
}
