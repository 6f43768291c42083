//! One simulation run: node state, event dispatch and bookkeeping.
//!
//! The medium is collision free. Each node sends one frame at a time at
//! `link_rate`; a frame reaches every node inside `tx_range` (broadcast) or
//! its named next hop (unicast) at the instant its transmission ends.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;

use crate::channel::{in_range, ChannelModel};
use crate::clustering::{ClusterAction, ClusterParams, NodeClusterState, Role};
use crate::config::{generate_initial_placement, ScenarioConfig};
use crate::engine::event::EventQueue;
use crate::engine::packet::{Frame, Packet, PacketBody, PacketKind};
use crate::engine::queue::{EnqueueOutcome, InterfaceQueue};
use crate::geometry::{NodeId, Position};
use crate::metrics::{finalize, MetricsLedger, RunReport};
use crate::mobility::NodeMobility;
use crate::rng::{stream_rng, SimRng, Stream};
use crate::routing::{has_duplicates, DataPacket, DropCause, RouteAction, RouterParams, RouterState, SourceRoute};
use crate::traffic::{generate_flows, Flow, TooManyFlows};

const TRACE_RING: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    HelloTimer(NodeId),
    TrafficEmit { flow: usize, index: u64 },
    WaypointArrival(NodeId),
    NeighborExpiryScan(NodeId),
    TransmitComplete(NodeId),
    PacketDelivery { from: NodeId, to: NodeId, packet: Packet },
    RouteTimeout { node: NodeId, target: NodeId, generation: u64 },
    Snapshot,
    MobilitySample,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::HelloTimer(_) => "hello_timer",
            EventKind::TrafficEmit { .. } => "traffic_emit",
            EventKind::WaypointArrival(_) => "waypoint_arrival",
            EventKind::NeighborExpiryScan(_) => "neighbor_expiry_scan",
            EventKind::TransmitComplete(_) => "transmit_complete",
            EventKind::PacketDelivery { .. } => "packet_delivery",
            EventKind::RouteTimeout { .. } => "route_timeout",
            EventKind::Snapshot => "snapshot",
            EventKind::MobilitySample => "mobility_sample",
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Traffic(#[from] TooManyFlows),
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SimOptions {
    /// Keep every trace line instead of only the most recent ones.
    pub full_trace: bool,
}

#[derive(Debug)]
struct Node {
    cluster: NodeClusterState,
    router: RouterState,
    mobility: NodeMobility,
    queue: InterfaceQueue<Frame>,
    in_air: Option<Frame>,
    hello_rng: SimRng,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub report: RunReport,
    pub ledger: MetricsLedger,
    pub final_roles: Vec<Role>,
    pub final_heads: Vec<BTreeSet<NodeId>>,
    pub initial_positions: Vec<Position>,
    pub flows: Vec<Flow>,
    /// Routes installed at sources: (time, hops).
    pub installed_routes: Vec<(f64, Vec<NodeId>)>,
    /// `time,node,event_kind,detail` lines; only the tail unless a full trace was requested.
    pub trace: Vec<String>,
    /// `time,node,role,head_id,M_value` lines.
    pub snapshots: Vec<String>,
    /// `time,node,x,y` lines.
    pub mobility_samples: Vec<String>,
}

pub struct Simulation {
    cfg: ScenarioConfig,
    options: SimOptions,
    channel: ChannelModel,
    nodes: Vec<Node>,
    initial_positions: Vec<Position>,
    flows: Vec<Flow>,
    events: EventQueue<EventKind>,
    ledger: MetricsLedger,
    fading_rng: SimRng,
    resolved: Vec<bool>,
    installed_routes: Vec<(f64, Vec<NodeId>)>,
    trace: VecDeque<String>,
    snapshots: Vec<String>,
    mobility_samples: Vec<String>,
}

pub fn run_simulation(cfg: &ScenarioConfig, options: SimOptions) -> Result<SimOutcome, SimError> {
    Ok(Simulation::new(cfg, options)?.run())
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig, options: SimOptions) -> Result<Self, SimError> {
        let seed = cfg.rng_seed;
        let flows = generate_flows(cfg, &mut stream_rng(seed, Stream::Traffic, 0))?;
        let initial_positions = generate_initial_placement(cfg);
        let cluster_params = ClusterParams::from_config(cfg);
        let router_params = RouterParams::from_config(cfg);
        let nodes = initial_positions
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let id = NodeId(i as u32);
                Node {
                    cluster: NodeClusterState::new(id, cluster_params.clone()),
                    router: RouterState::new(id, router_params.clone()),
                    mobility: NodeMobility::new(p, cfg, stream_rng(seed, Stream::Mobility, i as u64)),
                    queue: InterfaceQueue::new(cfg.queue_capacity),
                    in_air: None,
                    hello_rng: stream_rng(seed, Stream::Hello, i as u64),
                }
            })
            .collect();
        let mut sim = Self {
            cfg: cfg.clone(),
            options,
            channel: ChannelModel::from_config(cfg),
            nodes,
            initial_positions,
            flows,
            events: EventQueue::new(cfg.sim_duration),
            ledger: MetricsLedger::default(),
            fading_rng: stream_rng(seed, Stream::Fading, 0),
            resolved: Vec::new(),
            installed_routes: Vec::new(),
            trace: VecDeque::new(),
            snapshots: Vec::new(),
            mobility_samples: Vec::new(),
        };
        sim.bootstrap();
        Ok(sim)
    }

    fn bootstrap(&mut self) {
        let bi = self.cfg.hello_interval_bi;
        for i in 0..self.nodes.len() {
            let id = NodeId(i as u32);
            let node = &mut self.nodes[i];
            let first_hello = node.hello_rng.gen_range(0.0..bi);
            let leg_end = node.mobility.leg_end();
            self.schedule(first_hello, EventKind::HelloTimer(id));
            self.schedule(bi / 2.0, EventKind::NeighborExpiryScan(id));
            if let Some(t) = leg_end {
                self.schedule(t, EventKind::WaypointArrival(id));
            }
        }
        for f in 0..self.flows.len() {
            let t = self.flows[f].start_time;
            if t < self.cfg.sim_duration {
                self.schedule(t, EventKind::TrafficEmit { flow: f, index: 0 });
            }
        }
        if self.cfg.snapshot_period > 0.0 {
            self.schedule(0.0, EventKind::Snapshot);
        }
        if self.cfg.mobility_trace_period > 0.0 {
            self.schedule(0.0, EventKind::MobilitySample);
        }
    }

    fn now(&self) -> f64 {
        self.events.now()
    }

    fn schedule(&mut self, at: f64, kind: EventKind) {
        if let Err(e) = self.events.schedule(at, kind) {
            let now = self.now();
            self.ledger.violation(now, e.to_string());
        }
    }

    fn log(&mut self, node: NodeId, kind: &str, detail: std::fmt::Arguments<'_>) {
        if !self.options.full_trace && self.trace.len() >= TRACE_RING {
            self.trace.pop_front();
        }
        self.trace.push_back(format!("{},{},{},{}", self.now(), node, kind, detail));
    }

    fn position(&self, id: NodeId) -> Position {
        self.nodes[id.index()].mobility.position_at(self.now())
    }

    pub fn run(mut self) -> SimOutcome {
        while let Some(ev) = self.events.pop() {
            self.dispatch(ev.kind);
        }
        self.finish()
    }

    fn dispatch(&mut self, kind: EventKind) {
        match kind {
            EventKind::HelloTimer(id) => {
                self.send_hello(id);
                let n = &mut self.nodes[id.index()];
                let period = self.cfg.hello_interval_bi * n.hello_rng.gen_range(0.9..1.1);
                let at = self.now() + period;
                self.schedule(at, EventKind::HelloTimer(id));
            }
            EventKind::NeighborExpiryScan(id) => {
                let now = self.now();
                let cluster = &mut self.nodes[id.index()].cluster;
                let (removed, mut actions) = cluster.expire_neighbors(now);
                if actions.is_empty() && cluster.role == Role::Undecided {
                    actions = cluster.elect(now);
                }
                if !removed.is_empty() {
                    self.log(id, "neighbor_expired", format_args!("{removed:?}"));
                }
                self.cluster_actions(id, actions);
                self.check_cluster(id);
                let at = now + self.cfg.hello_interval_bi / 2.0;
                self.schedule(at, EventKind::NeighborExpiryScan(id));
            }
            EventKind::WaypointArrival(id) => {
                let m = &mut self.nodes[id.index()].mobility;
                m.advance(&self.cfg);
                if let Some(t) = m.leg_end() {
                    self.schedule(t, EventKind::WaypointArrival(id));
                }
            }
            EventKind::TrafficEmit { flow, index } => self.emit(flow, index),
            EventKind::TransmitComplete(id) => self.transmit_complete(id),
            EventKind::PacketDelivery { from, to, packet } => self.receive(from, to, packet),
            EventKind::RouteTimeout { node, target, generation } => {
                let now = self.now();
                let n = &mut self.nodes[node.index()];
                let actions = n.router.on_timeout(&n.cluster, target, generation, now);
                self.route_actions(node, actions);
            }
            EventKind::Snapshot => {
                let now = self.now();
                for n in &self.nodes {
                    let head = n.cluster.primary_head().map_or_else(String::new, |h| h.to_string());
                    self.snapshots
                        .push(format!("{now},{},{},{head},{}", n.cluster.id, n.cluster.role, n.cluster.my_m));
                }
                self.schedule(now + self.cfg.snapshot_period, EventKind::Snapshot);
            }
            EventKind::MobilitySample => {
                let now = self.now();
                for i in 0..self.nodes.len() {
                    let p = self.nodes[i].mobility.position_at(now);
                    self.mobility_samples.push(format!("{now},{i},{},{}", p.x, p.y));
                }
                self.schedule(now + self.cfg.mobility_trace_period, EventKind::MobilitySample);
            }
        }
    }

    fn send_hello(&mut self, id: NodeId) {
        let now = self.now();
        let hello = self.nodes[id.index()].cluster.build_hello();
        self.enqueue(id, Frame { packet: Packet::hello(hello, now), next_hop: None });
    }

    fn emit(&mut self, flow: usize, index: u64) {
        let now = self.now();
        let f = self.flows[flow].clone();
        let uid = self.resolved.len() as u64;
        self.resolved.push(false);
        self.ledger.data_sent += 1;
        let packet = Packet::data(
            DataPacket {
                uid,
                flow_id: flow,
                route: SourceRoute { hops: Vec::new() },
                hop: 0,
            },
            f.src,
            f.dst,
            f.packet_size,
            now,
        );
        let n = &mut self.nodes[f.src.index()];
        let actions = n.router.send_data(&n.cluster, packet, now);
        self.route_actions(f.src, actions);
        let next = f.start_time + (index + 1) as f64 * f.interval();
        if next < self.cfg.sim_duration {
            self.schedule(next, EventKind::TrafficEmit { flow, index: index + 1 });
        }
    }

    fn enqueue(&mut self, id: NodeId, frame: Frame) {
        let outcome = self.nodes[id.index()].queue.enqueue(frame);
        match outcome {
            EnqueueOutcome::Accepted => {}
            EnqueueOutcome::DroppedIncoming(f) | EnqueueOutcome::DroppedTailData(f) => {
                self.log(id, "queue_drop", format_args!("{}", f.packet.kind().as_str()));
                self.lose_frame(f, DropCause::Queue);
            }
        }
        self.check_queue(id);
        self.try_start(id);
    }

    fn lose_frame(&mut self, frame: Frame, cause: DropCause) {
        match frame.packet.kind() {
            PacketKind::Data => self.drop_data(&frame.packet, cause),
            PacketKind::RouteReply => {
                self.ledger.control_dropped += 1;
                self.ledger.rrep_dropped += 1;
            }
            _ => self.ledger.control_dropped += 1,
        }
    }

    fn try_start(&mut self, id: NodeId) {
        let now = self.now();
        let n = &mut self.nodes[id.index()];
        if n.in_air.is_some() {
            return;
        }
        let Some(frame) = n.queue.dequeue() else {
            return;
        };
        let done = now + self.cfg.transmission_time(frame.packet.size_bytes);
        n.queue.busy_until = done;
        self.ledger.record_transmission(frame.packet.kind());
        n.in_air = Some(frame);
        self.check_queue(id);
        self.schedule(done, EventKind::TransmitComplete(id));
    }

    fn transmit_complete(&mut self, id: NodeId) {
        let frame = self.nodes[id.index()].in_air.take().expect("a frame was on the air");
        let here = self.position(id);
        match frame.next_hop {
            None => {
                for j in 0..self.nodes.len() {
                    let to = NodeId(j as u32);
                    if to != id && in_range(&here, &self.position(to), self.cfg.tx_range) {
                        let at = self.now();
                        self.schedule(at, EventKind::PacketDelivery { from: id, to, packet: frame.packet.clone() });
                    }
                }
            }
            Some(to) => {
                if in_range(&here, &self.position(to), self.cfg.tx_range) {
                    let at = self.now();
                    self.schedule(at, EventKind::PacketDelivery { from: id, to, packet: frame.packet });
                } else {
                    self.log(id, "link_failure", format_args!("{} to {}", frame.packet.kind().as_str(), to));
                    let actions = self.nodes[id.index()].router.on_link_failure(to);
                    self.route_actions(id, actions);
                    self.lose_frame(frame, DropCause::ForwardingFailure);
                }
            }
        }
        self.try_start(id);
    }

    fn receive(&mut self, from: NodeId, to: NodeId, packet: Packet) {
        let now = self.now();
        match packet.body {
            PacketBody::Hello(hello) => {
                let d = self.position(from).distance(&self.position(to)).max(self.channel.d0);
                let rx = match self.channel.received_power(self.cfg.tx_power, d, &mut self.fading_rng) {
                    Ok(p) => p,
                    Err(e) => {
                        self.ledger.violation(now, e.to_string());
                        return;
                    }
                };
                let actions = self.nodes[to.index()].cluster.on_hello_received(&hello, rx, now);
                self.cluster_actions(to, actions);
                self.check_cluster(to);
            }
            PacketBody::RouteRequest(rreq) => {
                if has_duplicates(&rreq.recorded_route) {
                    self.ledger.violation(now, format!("repeated node in recorded route {:?}", rreq.recorded_route));
                }
                let n = &mut self.nodes[to.index()];
                let actions = n.router.process_rreq(&n.cluster, rreq, now);
                self.route_actions(to, actions);
            }
            PacketBody::RouteReply(rrep) => {
                if rrep.route.get(rrep.position) != Some(&to) {
                    self.ledger.violation(now, format!("route reply for {:?} reached {to}", rrep.route));
                    self.ledger.rrep_dropped += 1;
                    return;
                }
                let n = &mut self.nodes[to.index()];
                let actions = n.router.process_rrep(&n.cluster, rrep, now);
                self.route_actions(to, actions);
            }
            PacketBody::Data(_) => {
                let n = &mut self.nodes[to.index()];
                match n.router.forward_data(&n.cluster, packet, now) {
                    Ok(action) => self.route_actions(to, vec![action]),
                    Err(e) => self.ledger.violation(now, e.to_string()),
                }
            }
        }
    }

    fn cluster_actions(&mut self, id: NodeId, actions: Vec<ClusterAction>) {
        let now = self.now();
        let mut changed = false;
        for a in actions {
            match a {
                ClusterAction::RoleChanged { old, new } => {
                    self.ledger
                        .record_role_change(id, old, new, now, self.cfg.formation_grace);
                    self.log(id, "role_change", format_args!("{old}->{new}"));
                    changed = true;
                }
                ClusterAction::TriggerHello => self.send_hello(id),
            }
        }
        if changed {
            let n = &mut self.nodes[id.index()];
            let actions = n.router.on_cluster_change(&n.cluster, now);
            self.route_actions(id, actions);
        }
    }

    fn route_actions(&mut self, id: NodeId, actions: Vec<RouteAction>) {
        let now = self.now();
        for a in actions {
            match a {
                RouteAction::Send { packet, next_hop } => {
                    self.enqueue(id, Frame { packet, next_hop: Some(next_hop) });
                }
                RouteAction::Deliver(packet) => {
                    let uid = packet.as_data().expect("delivered packets are data").uid;
                    self.resolve(uid);
                    self.ledger
                        .record_delivery(packet.size_bytes, now - packet.created_at);
                }
                RouteAction::DropData { packet, cause } => {
                    self.log(id, "data_drop", format_args!("{}", cause.as_str()));
                    self.drop_data(&packet, cause);
                }
                RouteAction::RrepDropped => self.ledger.rrep_dropped += 1,
                RouteAction::RreqOriginated { target } => {
                    self.log(id, "rreq_originated", format_args!("target {target}"));
                }
                RouteAction::RouteInstalled { target, route } => {
                    self.ledger.routes_installed += 1;
                    if route.has_duplicates() {
                        self.ledger.violation(now, format!("installed route with a repeated node {:?}", route.hops));
                    }
                    self.log(id, "route_installed", format_args!("to {target} via {:?}", route.hops));
                    self.installed_routes.push((now, route.hops));
                }
                RouteAction::RouteBroken { .. } => self.ledger.routes_broken += 1,
                RouteAction::ScheduleTimeout { target, at, generation } => {
                    self.schedule(at, EventKind::RouteTimeout { node: id, target, generation });
                }
            }
        }
    }

    fn drop_data(&mut self, packet: &Packet, cause: DropCause) {
        let uid = packet.as_data().expect("data").uid;
        self.resolve(uid);
        self.ledger.record_drop(cause);
    }

    fn resolve(&mut self, uid: u64) {
        let now = self.now();
        if std::mem::replace(&mut self.resolved[uid as usize], true) {
            self.ledger.violation(now, format!("data packet {uid} classified twice"));
        }
    }

    fn check_queue(&mut self, id: NodeId) {
        if let Err(e) = self.nodes[id.index()].queue.check_invariants() {
            let now = self.now();
            self.ledger.violation(now, format!("node {id}: {e}"));
        }
    }

    fn check_cluster(&mut self, id: NodeId) {
        if let Err(e) = self.nodes[id.index()].cluster.check_invariants() {
            let now = self.now();
            self.ledger.violation(now, e);
        }
    }

    /// Data packets still held somewhere at the horizon.
    fn count_in_flight(&self) -> u64 {
        let mut uids = BTreeSet::new();
        for n in &self.nodes {
            let queued = n.queue.iter().chain(n.in_air.as_ref());
            for f in queued {
                if let Some(d) = f.packet.as_data() {
                    uids.insert(d.uid);
                }
            }
            for p in n.router.pending_packets() {
                if let Some(d) = p.as_data() {
                    uids.insert(d.uid);
                }
            }
        }
        for ev in self.events.pending() {
            if let EventKind::PacketDelivery { packet, .. } = &ev.kind {
                if let Some(d) = packet.as_data() {
                    uids.insert(d.uid);
                }
            }
        }
        uids.len() as u64
    }

    fn finish(mut self) -> SimOutcome {
        let now = self.now();
        let unresolved = self.resolved.iter().filter(|r| !**r).count() as u64;
        let held = self.count_in_flight();
        if held != unresolved {
            self.ledger.violation(
                now,
                format!("{unresolved} data packets unaccounted for but {held} still held"),
            );
        }
        let l = &self.ledger;
        if l.data_sent != l.data_delivered + l.dropped() + unresolved {
            let msg = format!(
                "conservation: sent {} != delivered {} + dropped {} + in flight {}",
                l.data_sent,
                l.data_delivered,
                l.dropped(),
                unresolved
            );
            self.ledger.violation(now, msg);
        }
        let report = finalize(&self.ledger, &self.cfg, unresolved);
        SimOutcome {
            report,
            final_roles: self.nodes.iter().map(|n| n.cluster.role).collect(),
            final_heads: self.nodes.iter().map(|n| n.cluster.head_ids.clone()).collect(),
            ledger: self.ledger,
            initial_positions: self.initial_positions,
            flows: self.flows,
            installed_routes: self.installed_routes,
            trace: self.trace.into(),
            snapshots: self.snapshots,
            mobility_samples: self.mobility_samples,
        }
    }
}
