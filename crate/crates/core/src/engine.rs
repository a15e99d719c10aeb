//! One replication: mobility, channel, MACs, routing, traffic and the
//! vehicle's energy ledger driven by a single event queue.
//!
//! MAC callbacks never call each other directly. Everything a MAC causes on
//! other nodes (medium changes, receptions, indications) goes through a FIFO
//! of effects that is drained after the call returns.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use rand::Rng;

use crate::app::{evaluate_reading, generate_cbr, sample_reading, DataPacket, EmissionReading, EscalationTracker};
use crate::energy::EnergyLedger;
use crate::mac::{
    CsmaMac, Dest, Frame, FrameBody, FrameKind, LrwpanMac, Mac, MacCtx, MacFailure, MacIndication, MacKind, Outgoing,
    SmacMac, TdmaMac,
};
use crate::mac::smac::StationPhases;
use crate::metrics::{DropReason, MetricsSummary, Outcome, PacketRecord};
use crate::mobility::{distance, manhattan_step, place_base_stations, random_start, GridSpec, Position, VehicleMotion};
use crate::phy::{rx_power_two_ray, Channel, MediumChange, NodeId, Reception, TxId};
use crate::routing::{Aodv, AodvMessage, NextHop, RoutingAction};
use crate::scenario::Scenario;
use crate::sim::{EventHandle, EventQueue, RngStream, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Phy,
    Mac,
    Rtg,
    App,
    Energy,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Phy => "PHY",
            Layer::Mac => "MAC",
            Layer::Rtg => "RTG",
            Layer::App => "APP",
            Layer::Energy => "ENERGY",
        }
    }
}

/// One trace-log line.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceLine {
    pub time: SimTime,
    pub node: NodeId,
    pub layer: Layer,
    pub event: String,
    pub details: String,
}

impl fmt::Display for TraceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.6} {} {} {} {}",
            self.time.secs(),
            self.node,
            self.layer.as_str(),
            self.event,
            self.details
        )
    }
}

/// A transmission as it went on the air.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxLogEntry {
    pub sender: NodeId,
    pub start: f64,
    pub end: f64,
    pub kind: FrameKind,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub trace: bool,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub mac: MacKind,
    pub records: Vec<PacketRecord>,
    pub summary: MetricsSummary,
    pub energy: EnergyLedger,
    pub trajectory: Vec<(SimTime, Position)>,
    pub stations: Vec<Position>,
    pub server: NodeId,
    pub vehicle: NodeId,
    pub transmissions: Vec<TxLogEntry>,
    pub trace: Vec<TraceLine>,
    pub events: u64,
}

enum Ev {
    MacTimer { node: NodeId, token: u32 },
    TxEnd(TxId),
    Control { node: NodeId, to: NextHop, msg: AodvMessage },
    RoutingTimer { node: NodeId, dest: NodeId, id: u32 },
    Cbr(usize),
    Mobility,
    EnergySample,
}

enum Effect {
    Medium(MediumChange),
    Receive(NodeId, Frame),
    TxEnd(NodeId, Frame),
    Indication(NodeId, MacIndication),
}

struct Ctx<'a> {
    node: NodeId,
    now: SimTime,
    queue: &'a mut EventQueue<Ev>,
    channel: &'a mut Channel<Frame>,
    positions: &'a [Position],
    neighbors: &'a [Vec<NodeId>],
    phases: &'a [f64],
    rng: &'a mut RngStream,
    effects: &'a mut VecDeque<Effect>,
    tx_log: &'a mut Vec<TxLogEntry>,
    trace: Option<&'a mut Vec<TraceLine>>,
}

impl MacCtx for Ctx<'_> {
    fn now(&self) -> SimTime {
        self.now
    }

    fn node(&self) -> NodeId {
        self.node
    }

    fn set_timer(&mut self, delay: f64, token: u32) -> EventHandle {
        self.queue.schedule(
            self.now + delay.max(0.0),
            Ev::MacTimer {
                node: self.node,
                token,
            },
        )
    }

    fn cancel_timer(&mut self, handle: EventHandle) {
        self.queue.cancel(handle);
    }

    fn carrier_busy(&self) -> bool {
        self.channel.carrier_busy_at(self.node, self.now)
    }

    fn is_transmitting(&self) -> bool {
        self.channel.is_transmitting(self.node)
    }

    fn transmit(&mut self, frame: Frame, airtime: f64) {
        let kind = frame.kind();
        let (record, changes) = self
            .channel
            .begin_transmission(self.node, frame, airtime, self.now, self.positions);
        self.queue.schedule(record.end, Ev::TxEnd(record.id));
        self.tx_log.push(TxLogEntry {
            sender: self.node,
            start: record.start.secs(),
            end: record.end.secs(),
            kind,
        });
        if let Some(t) = self.trace.as_deref_mut() {
            t.push(TraceLine {
                time: self.now,
                node: self.node,
                layer: Layer::Phy,
                event: "tx-start".into(),
                details: format!("dst={} seq={} kind={kind:?} airtime={airtime:.6}", record.frame.dst, record.frame.seq),
            });
        }
        self.effects.extend(changes.into_iter().map(Effect::Medium));
    }

    fn set_awake(&mut self, awake: bool) {
        self.channel.set_awake(self.node, awake);
    }

    fn is_awake(&self) -> bool {
        self.channel.is_awake(self.node)
    }

    fn rng(&mut self) -> &mut RngStream {
        self.rng
    }

    fn indicate(&mut self, ind: MacIndication) {
        self.effects.push_back(Effect::Indication(self.node, ind));
    }

    fn schedule_phase(&self, node: NodeId) -> f64 {
        self.phases[node]
    }

    fn neighbors(&self) -> Vec<NodeId> {
        self.neighbors[self.node].clone()
    }

    fn trace(&mut self, event: &str, details: String) {
        if let Some(t) = self.trace.as_deref_mut() {
            t.push(TraceLine {
                time: self.now,
                node: self.node,
                layer: Layer::Mac,
                event: event.to_string(),
                details,
            });
        }
    }
}

fn build_mac(sc: &Scenario, node: NodeId, vehicle: NodeId, phases: &[f64]) -> Box<dyn Mac> {
    let bitrate = sc.channel.bitrate_bps;
    let cap = sc.mac.ifq_length;
    let low_power = node == vehicle;
    match sc.mac.kind {
        MacKind::Ieee80211 => Box::new(CsmaMac::new(sc.mac.csma, bitrate, cap)),
        MacKind::Ieee802154 => Box::new(LrwpanMac::new(sc.mac.lrwpan, bitrate, cap, low_power)),
        MacKind::Smac => {
            // stations start out synchronized with one another; the vehicle
            // has to discover them
            let known = if low_power {
                Vec::new()
            } else {
                (0..vehicle).filter(|&s| s != node).map(|s| (s, phases[s])).collect()
            };
            Box::new(SmacMac::new(sc.mac.smac, bitrate, cap).with_known(known))
        }
        MacKind::Tdma => Box::new(TdmaMac::new(sc.mac.tdma, bitrate, sc.node_count(), cap, low_power)),
    }
}

fn failure_reason(why: MacFailure) -> DropReason {
    match why {
        MacFailure::RetryExceeded => DropReason::RetryExceeded,
        MacFailure::ChannelAccessFailure => DropReason::ChannelAccessFailure,
        MacFailure::NeighborLost => DropReason::NoRoute,
    }
}

struct Engine<'s> {
    sc: &'s Scenario,
    queue: EventQueue<Ev>,
    channel: Channel<Frame>,
    macs: Vec<Box<dyn Mac>>,
    mac_rngs: Vec<RngStream>,
    aodv: Vec<Aodv>,
    aodv_rngs: Vec<RngStream>,
    positions: Vec<Position>,
    neighbors: Vec<Vec<NodeId>>,
    phases: Vec<f64>,
    effects: VecDeque<Effect>,
    tx_log: Vec<TxLogEntry>,
    trace: Option<Vec<TraceLine>>,
    grid: GridSpec,
    motion: VehicleMotion,
    mobility_rng: RngStream,
    traffic_rng: RngStream,
    vehicle: NodeId,
    server: NodeId,
    vehicle_alive: bool,
    ledger: EnergyLedger,
    records: Vec<PacketRecord>,
    /// Node currently responsible for each packet; `None` once terminal.
    holder: Vec<Option<NodeId>>,
    cbr_times: Vec<SimTime>,
    trajectory: Vec<(SimTime, Position)>,
    /// Reception outcomes of the transmission that just ended.
    last_tx: Option<(NodeId, u64, Vec<(NodeId, Reception)>)>,
    acked: bool,
    trackers: BTreeMap<NodeId, EscalationTracker>,
    events: u64,
}

impl<'s> Engine<'s> {
    fn new(sc: &'s Scenario, seed: u64, opts: &RunOptions) -> Self {
        let layout = place_base_stations(sc.topology.base_stations, sc.topology.width_m, sc.topology.height_m)
            .expect("validated scenario");
        let grid = GridSpec::new(sc.topology.width_m, sc.topology.height_m, sc.mobility.street_spacing_m)
            .expect("validated scenario");
        let n = sc.node_count();
        let vehicle = layout.stations.len();
        let mut mobility_rng = RngStream::new(seed, "mobility");
        let motion = random_start(&grid, sc.mobility.speed_mps, &mut mobility_rng);
        let mut positions = layout.stations.clone();
        positions.push(motion.position);

        let mut phase_rng = RngStream::new(seed, "smac-phases");
        let period = sc.mac.smac.period_s;
        let mut phases: Vec<f64> = (0..vehicle)
            .map(|_| match sc.mac.smac.station_phases {
                StationPhases::Synchronized => 0.0,
                StationPhases::Random => phase_rng.gen_range(0.0..period),
            })
            .collect();
        // the vehicle never shares the stations' schedule
        phases.push(phase_rng.gen_range(0.0..period));

        let macs: Vec<Box<dyn Mac>> = (0..n).map(|i| build_mac(sc, i, vehicle, &phases)).collect();
        let acked = macs[0].acknowledged();
        let mut engine = Engine {
            sc,
            queue: EventQueue::new(),
            channel: Channel::new(sc.channel, n),
            macs,
            mac_rngs: (0..n).map(|i| RngStream::new(seed, format!("mac-{i}"))).collect(),
            aodv: (0..n).map(|i| Aodv::new(i, sc.routing)).collect(),
            aodv_rngs: (0..n).map(|i| RngStream::new(seed, format!("aodv-{i}"))).collect(),
            positions,
            neighbors: vec![Vec::new(); n],
            phases,
            effects: VecDeque::new(),
            tx_log: Vec::new(),
            trace: opts.trace.then(Vec::new),
            grid,
            motion,
            mobility_rng,
            traffic_rng: RngStream::new(seed, "traffic"),
            vehicle,
            server: layout.server,
            vehicle_alive: true,
            ledger: EnergyLedger::new(sc.energy),
            records: Vec::new(),
            holder: Vec::new(),
            cbr_times: generate_cbr(&sc.cbr, SimTime::from_secs(sc.horizon_s)),
            trajectory: Vec::new(),
            last_tx: None,
            acked,
            trackers: BTreeMap::new(),
            events: 0,
        };
        engine.compute_station_neighbors();
        engine.update_vehicle_neighbors();
        engine.trajectory.push((SimTime::ZERO, engine.motion.position));
        engine
    }

    fn in_range(&self, a: NodeId, b: NodeId) -> bool {
        let d = distance(self.positions[a], self.positions[b]).max(1e-3);
        rx_power_two_ray(&self.sc.channel, d).expect("positive distance") >= self.sc.channel.rx_threshold_w
    }

    fn compute_station_neighbors(&mut self) {
        for a in 0..self.vehicle {
            let list = (0..self.vehicle).filter(|&b| b != a && self.in_range(a, b)).collect();
            self.neighbors[a] = list;
        }
    }

    fn update_vehicle_neighbors(&mut self) {
        let v = self.vehicle;
        let mut mine = Vec::new();
        for s in 0..v {
            let near = self.in_range(s, v);
            let list = &mut self.neighbors[s];
            list.retain(|&x| x != v);
            if near {
                list.push(v);
                mine.push(s);
            }
        }
        self.neighbors[v] = mine;
    }

    fn now(&self) -> SimTime {
        self.queue.now()
    }

    fn tracing(&self) -> bool {
        self.trace.is_some()
    }

    fn trace(&mut self, node: NodeId, layer: Layer, event: &str, details: String) {
        let time = self.now();
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceLine {
                time,
                node,
                layer,
                event: event.to_string(),
                details,
            });
        }
    }

    fn alive(&self, node: NodeId) -> bool {
        node != self.vehicle || self.vehicle_alive
    }

    fn with_mac(&mut self, node: NodeId, f: impl FnOnce(&mut dyn Mac, &mut dyn MacCtx)) {
        if !self.alive(node) {
            return;
        }
        let now = self.queue.now();
        let Engine {
            queue,
            channel,
            macs,
            mac_rngs,
            positions,
            neighbors,
            phases,
            effects,
            tx_log,
            trace,
            ..
        } = self;
        let mut ctx = Ctx {
            node,
            now,
            queue,
            channel,
            positions,
            neighbors,
            phases,
            rng: &mut mac_rngs[node],
            effects,
            tx_log,
            trace: trace.as_mut(),
        };
        f(macs[node].as_mut(), &mut ctx);
    }

    fn run(mut self) -> Self {
        let sc = self.sc;
        for node in 0..self.macs.len() {
            self.with_mac(node, |m, c| m.start(c));
        }
        self.queue.schedule_in(sc.mobility.tick_s, Ev::Mobility);
        self.queue.schedule_in(sc.energy_sample_s, Ev::EnergySample);
        if let Some(&t) = self.cbr_times.first() {
            self.queue.schedule(t, Ev::Cbr(0));
        }
        self.drain();
        self.sync_energy();
        let horizon = SimTime::from_secs(sc.horizon_s);
        while let Some(t) = self.queue.peek_time() {
            if t >= horizon {
                break;
            }
            let ev = self.queue.advance().expect("peeked");
            self.events += 1;
            self.dispatch(ev.payload);
            self.drain();
            self.sync_energy();
        }
        self.ledger.sample(horizon);
        self
    }

    fn dispatch(&mut self, ev: Ev) {
        let now = self.now();
        match ev {
            Ev::MacTimer { node, token } => self.with_mac(node, |m, c| m.on_timer(c, token)),
            Ev::TxEnd(id) => {
                let (record, outcomes, changes) = self.channel.end_transmission(id);
                for &(node, rx) in &outcomes {
                    match rx {
                        Reception::Delivered => self.effects.push_back(Effect::Receive(node, record.frame.clone())),
                        Reception::Collided if self.tracing() => self.trace(
                            node,
                            Layer::Phy,
                            "collision",
                            format!("from={} seq={}", record.sender, record.frame.seq),
                        ),
                        _ => {}
                    }
                }
                self.last_tx = Some((record.sender, record.frame.seq, outcomes));
                self.effects.push_back(Effect::TxEnd(record.sender, record.frame));
                self.effects.extend(changes.into_iter().map(Effect::Medium));
            }
            Ev::Control { node, to, msg } => self.send_control(node, to, msg),
            Ev::RoutingTimer { node, dest, id } => {
                let actions = self.aodv[node].on_rreq_timeout(dest, id, now, &mut self.aodv_rngs[node]);
                self.apply(node, actions);
            }
            Ev::Cbr(k) => {
                if let Some(&next) = self.cbr_times.get(k + 1) {
                    self.queue.schedule(next, Ev::Cbr(k + 1));
                }
                self.generate(k);
            }
            Ev::Mobility => {
                let sc = self.sc;
                let (motion, _) = manhattan_step(
                    self.motion,
                    sc.mobility.tick_s,
                    &self.grid,
                    &sc.mobility.turns,
                    &mut self.mobility_rng,
                );
                self.motion = motion;
                self.positions[self.vehicle] = motion.position;
                self.update_vehicle_neighbors();
                self.trajectory.push((now, motion.position));
                self.queue.schedule_in(sc.mobility.tick_s, Ev::Mobility);
            }
            Ev::EnergySample => {
                self.ledger.sample(now);
                if self.tracing() {
                    let residual = self.ledger.residual();
                    self.trace(self.vehicle, Layer::Energy, "sample", format!("residual_j={residual:.6}"));
                }
                self.queue.schedule_in(self.sc.energy_sample_s, Ev::EnergySample);
            }
        }
    }

    fn drain(&mut self) {
        while let Some(effect) = self.effects.pop_front() {
            match effect {
                Effect::Medium(MediumChange { node, busy }) => {
                    if self.channel.is_awake(node) {
                        self.with_mac(node, |m, c| m.on_medium(c, busy));
                    }
                }
                Effect::Receive(node, frame) => self.with_mac(node, |m, c| m.on_receive(c, frame)),
                Effect::TxEnd(node, frame) => self.with_mac(node, |m, c| m.on_tx_end(c, &frame)),
                Effect::Indication(node, ind) => self.on_indication(node, ind),
            }
        }
    }

    fn sync_energy(&mut self) {
        if !self.vehicle_alive {
            return;
        }
        let mode = self.channel.mode(self.vehicle);
        if mode == self.ledger.mode() {
            return;
        }
        let now = self.now();
        let died = self.ledger.transition(now, mode);
        if died {
            self.vehicle_alive = false;
            self.channel.set_awake(self.vehicle, false);
            self.trace(self.vehicle, Layer::Energy, "depleted", String::new());
        }
    }

    fn generate(&mut self, k: usize) {
        if !self.vehicle_alive {
            return;
        }
        let now = self.now();
        let sc = self.sc;
        let id = self.records.len() as u64;
        let reading = sample_reading(self.vehicle, now, sc.alert.vehicle_profile, &mut self.traffic_rng);
        let packet = DataPacket {
            id,
            src: self.vehicle,
            dst: self.server,
            created: now,
            hops: 0,
            payload: reading.encode(sc.cbr.payload_bytes).into(),
        };
        self.records.push(PacketRecord {
            id,
            sent: now,
            outcome: Outcome::InFlight,
            hops: 0,
        });
        self.holder.push(Some(self.vehicle));
        if self.tracing() {
            self.trace(self.vehicle, Layer::App, "send", format!("id={id} k={k}"));
        }
        let v = self.vehicle;
        let actions = self.aodv[v].send_data(packet, now, &mut self.aodv_rngs[v]);
        self.apply(v, actions);
    }

    fn drop_packet(&mut self, node: NodeId, id: u64, reason: DropReason) {
        let now = self.now();
        let rec = &mut self.records[id as usize];
        if rec.outcome != Outcome::InFlight {
            return;
        }
        rec.outcome = Outcome::Dropped { reason, at: now };
        self.holder[id as usize] = None;
        if self.tracing() {
            self.trace(node, Layer::App, "drop", format!("id={id} reason={reason}"));
        }
    }

    fn deliver(&mut self, node: NodeId, packet: DataPacket) {
        let now = self.now();
        let idx = packet.id as usize;
        if self.records[idx].outcome != Outcome::InFlight {
            return;
        }
        self.records[idx].outcome = Outcome::Received { at: now };
        self.records[idx].hops = packet.hops;
        self.holder[idx] = None;
        if self.tracing() {
            let delay = now - packet.created;
            self.trace(node, Layer::App, "recv", format!("id={} hops={} delay={delay:.6}", packet.id, packet.hops));
        }
        if let Ok(reading) = EmissionReading::decode(&packet.payload) {
            let verdict = evaluate_reading(&reading, &self.sc.alert.policy);
            let raised = self
                .trackers
                .entry(reading.vehicle)
                .or_default()
                .observe(&verdict, &self.sc.alert.policy);
            if let Some(level) = raised {
                self.trace(node, Layer::App, "alert", format!("vehicle={} level={level:?}", reading.vehicle));
            }
        }
    }

    fn send_control(&mut self, node: NodeId, to: NextHop, msg: AodvMessage) {
        let next_hop = match to {
            NextHop::Broadcast => Dest::Broadcast,
            NextHop::Unicast(n) => Dest::Unicast(n),
        };
        if self.tracing() {
            self.trace(node, Layer::Rtg, "ctrl-send", format!("to={next_hop} msg={}", msg.name()));
        }
        let out = Outgoing {
            next_hop,
            body: FrameBody::Routing(msg),
        };
        // a full control queue loses the message silently
        self.with_mac(node, |m, c| {
            let _ = m.enqueue(c, out);
        });
    }

    fn on_indication(&mut self, node: NodeId, ind: MacIndication) {
        let now = self.now();
        match ind {
            MacIndication::Received(frame) => match frame.body {
                FrameBody::Data(packet) => {
                    if let Some(h) = self.holder.get_mut(packet.id as usize) {
                        if h.is_some() {
                            *h = Some(node);
                        }
                    }
                    let actions = self.aodv[node].handle_data(frame.src, packet, now);
                    self.apply(node, actions);
                }
                FrameBody::Routing(msg) => {
                    let actions = self.aodv[node].handle_control(frame.src, msg, now, &mut self.aodv_rngs[node]);
                    self.apply(node, actions);
                }
                _ => {}
            },
            MacIndication::Sent(frame) => {
                if self.acked {
                    return;
                }
                let (Dest::Unicast(to), FrameBody::Data(packet)) = (frame.dst, &frame.body) else {
                    return;
                };
                if self.holder[packet.id as usize] != Some(node) {
                    return;
                }
                let rx = match &self.last_tx {
                    Some((sender, seq, outcomes)) if *sender == node && *seq == frame.seq => {
                        outcomes.iter().find(|(n, _)| *n == to).map(|(_, r)| *r)
                    }
                    _ => None,
                };
                let reason = match rx {
                    Some(Reception::Delivered) => return,
                    Some(Reception::Collided) => DropReason::CollisionCorruption,
                    _ => DropReason::LinkLoss,
                };
                self.drop_packet(node, packet.id, reason);
            }
            MacIndication::Failed(frame, why) => {
                if let FrameBody::Data(packet) = &frame.body {
                    if self.holder[packet.id as usize] == Some(node) {
                        self.drop_packet(node, packet.id, failure_reason(why));
                    }
                }
                if self.tracing() {
                    self.trace(node, Layer::Mac, "fail", format!("dst={} seq={} why={why:?}", frame.dst, frame.seq));
                }
                if let (Dest::Unicast(hop), MacFailure::RetryExceeded | MacFailure::NeighborLost) = (frame.dst, why) {
                    let actions = self.aodv[node].handle_link_break(hop, now);
                    self.apply(node, actions);
                }
            }
        }
    }

    fn apply(&mut self, node: NodeId, actions: Vec<RoutingAction>) {
        let now = self.now();
        for action in actions {
            match action {
                RoutingAction::Control { to, msg, delay } => {
                    if delay > 0.0 {
                        self.queue.schedule_in(delay, Ev::Control { node, to, msg });
                    } else {
                        self.send_control(node, to, msg);
                    }
                }
                RoutingAction::Forward { next_hop, packet } => {
                    let id = packet.id;
                    let out = Outgoing {
                        next_hop: Dest::Unicast(next_hop),
                        body: FrameBody::Data(packet),
                    };
                    let mut accepted = true;
                    self.with_mac(node, |m, c| accepted = m.enqueue(c, out).is_ok());
                    if !accepted {
                        self.drop_packet(node, id, DropReason::IfqOverflow);
                    }
                }
                RoutingAction::Deliver(packet) => {
                    if node == self.server {
                        self.deliver(node, packet);
                    }
                }
                RoutingAction::Drop { packet, reason } => self.drop_packet(node, packet.id, reason),
                RoutingAction::Timer { delay, dest, id } => {
                    self.queue.schedule_in(delay, Ev::RoutingTimer { node, dest, id });
                }
                RoutingAction::Expecting(on) => self.with_mac(node, |m, c| m.set_expecting(c, on)),
                RoutingAction::Purge(hop) => {
                    // queued data for the broken hop goes back to routing
                    let purged = self.macs[node].purge_next_hop(hop);
                    for out in purged {
                        if let FrameBody::Data(packet) = out.body {
                            let actions = self.aodv[node].send_data(packet, now, &mut self.aodv_rngs[node]);
                            self.apply(node, actions);
                        }
                    }
                }
                RoutingAction::Trace { event, details } => self.trace(node, Layer::Rtg, event, details),
            }
        }
    }

    fn finish(self, seed: u64) -> RunResult {
        let mut summary = MetricsSummary::from_records(&self.records, self.ledger.residual(), self.channel.collisions());
        summary.alerts = self
            .trackers
            .iter()
            .map(|(v, t)| (v.to_string(), t.level))
            .collect();
        RunResult {
            seed,
            mac: self.sc.mac.kind,
            records: self.records,
            summary,
            energy: self.ledger,
            trajectory: self.trajectory,
            stations: self.positions[..self.vehicle].to_vec(),
            server: self.server,
            vehicle: self.vehicle,
            transmissions: self.tx_log,
            trace: self.trace.unwrap_or_default(),
            events: self.events,
        }
    }
}

/// Runs one replication of a validated scenario.
pub fn simulate(scenario: &Scenario, seed: u64, opts: &RunOptions) -> RunResult {
    Engine::new(scenario, seed, opts).run().finish(seed)
}
