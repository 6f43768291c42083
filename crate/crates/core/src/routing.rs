//! Cluster-based source routing.
//!
//! Route discovery floods only the cluster backbone: a source hands its
//! request to its cluster heads, and each head relays one copy per
//! neighboring cluster through the lowest-id gateway path, so a request
//! follows `source -> head -> gateway(s) -> head -> ... -> destination`.
//! Replies retrace the recorded route. Data packets carry the full hop list.
//!
//! Routers are driven by the engine and answer with [`RouteAction`]s; they
//! never touch the event queue or the radio directly.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::clustering::{LinkState, NodeClusterState, Role};
use crate::config::ScenarioConfig;
use crate::engine::packet::{Packet, PacketBody};
use crate::geometry::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RequestId {
    pub source: NodeId,
    pub sequence: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteRequest {
    pub request_id: RequestId,
    pub source: NodeId,
    pub target: NodeId,
    /// Nodes traversed so far, source first.
    pub recorded_route: Vec<NodeId>,
    /// Remaining relay hops toward the next cluster head, head last.
    pub forward_path: Vec<NodeId>,
}

impl RouteRequest {
    pub fn size_bytes(&self) -> usize {
        24 + 4 * self.recorded_route.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteReply {
    pub request_id: RequestId,
    /// Complete route, source first, target last.
    pub route: Vec<NodeId>,
    /// Index in `route` of the node this copy is addressed to.
    pub position: usize,
}

impl RouteReply {
    pub fn size_bytes(&self) -> usize {
        24 + 4 * self.route.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceRoute {
    pub hops: Vec<NodeId>,
}

impl SourceRoute {
    pub fn has_duplicates(&self) -> bool {
        has_duplicates(&self.hops)
    }
}

pub fn has_duplicates(ids: &[NodeId]) -> bool {
    let mut seen = BTreeSet::new();
    !ids.iter().all(|id| seen.insert(*id))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataPacket {
    pub uid: u64,
    pub flow_id: usize,
    pub route: SourceRoute,
    /// Index in the route of the node this copy is addressed to.
    pub hop: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CachedRoute {
    pub route: SourceRoute,
    pub created_at: f64,
}

/// One route per destination; newer routes replace older ones.
#[derive(Debug, Clone, Default)]
pub struct RouteCache {
    routes: BTreeMap<NodeId, CachedRoute>,
}

impl RouteCache {
    pub fn insert(&mut self, dst: NodeId, route: SourceRoute, now: f64) {
        self.routes.insert(dst, CachedRoute { route, created_at: now });
    }

    pub fn get(&self, dst: NodeId) -> Option<&CachedRoute> {
        self.routes.get(&dst)
    }

    pub fn remove(&mut self, dst: NodeId) -> Option<CachedRoute> {
        self.routes.remove(&dst)
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }

    /// Drops every route whose first hop is `next_hop`; returns their destinations.
    pub fn invalidate_via(&mut self, next_hop: NodeId) -> Vec<NodeId> {
        let dead: Vec<NodeId> = self
            .routes
            .iter()
            .filter(|(_, c)| c.route.hops.get(1) == Some(&next_hop))
            .map(|(d, _)| *d)
            .collect();
        for d in &dead {
            self.routes.remove(d);
        }
        dead
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropCause {
    Queue,
    NoRoute,
    ForwardingFailure,
}

impl DropCause {
    pub fn as_str(self) -> &'static str {
        match self {
            DropCause::Queue => "queue",
            DropCause::NoRoute => "no_route",
            DropCause::ForwardingFailure => "forwarding_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RouteAction {
    /// Unicast `packet` to `next_hop`.
    Send { packet: Packet, next_hop: NodeId },
    /// A data packet reached its destination.
    Deliver(Packet),
    DropData { packet: Packet, cause: DropCause },
    RrepDropped,
    RreqOriginated { target: NodeId },
    RouteInstalled { target: NodeId, route: SourceRoute },
    RouteBroken { target: NodeId },
    ScheduleTimeout { target: NodeId, at: f64, generation: u64 },
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RoutingError {
    #[error("node {0} has no cluster head to send a route request to")]
    NoClusterHead(NodeId),
    #[error("node {node} received a data packet for a route it is not on")]
    NotOnRoute { node: NodeId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouterParams {
    pub rreq_timeout: f64,
    pub max_retries: u32,
    pub pending_capacity: usize,
    pub route_lifetime: f64,
}

impl RouterParams {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            rreq_timeout: cfg.rreq_timeout,
            max_retries: cfg.max_retries,
            pending_capacity: cfg.pending_capacity,
            route_lifetime: cfg.route_lifetime,
        }
    }
}

#[derive(Debug, Clone)]
struct Discovery {
    attempts: u32,
    generation: u64,
    awaiting_head: bool,
}

#[derive(Debug, Clone)]
pub struct RouterState {
    pub id: NodeId,
    pub params: RouterParams,
    pub cache: RouteCache,
    next_sequence: u32,
    next_generation: u64,
    seen: BTreeSet<RequestId>,
    pending: BTreeMap<NodeId, VecDeque<Packet>>,
    discoveries: BTreeMap<NodeId, Discovery>,
}

/// Relay paths from a head to each neighboring cluster head, shortest first
/// and then by lowest gateway ids. Each path ends with the neighboring head.
pub fn cluster_adjacency(table: &NodeClusterState) -> BTreeMap<NodeId, Vec<Vec<NodeId>>> {
    let me = table.id;
    let mut adj: BTreeMap<NodeId, BTreeSet<Vec<NodeId>>> = BTreeMap::new();
    for e in table.bidirectional_neighbors() {
        match e.neighbor_role {
            Role::ClusterHead => {
                adj.entry(e.neighbor_id).or_default().insert(vec![e.neighbor_id]);
            }
            Role::Member => {
                for x in &e.neighbor_list {
                    if x.link != LinkState::Bidirectional || x.id == me {
                        continue;
                    }
                    match (x.role, x.head) {
                        (Role::ClusterHead, _) => {
                            adj.entry(x.id).or_default().insert(vec![e.neighbor_id, x.id]);
                        }
                        (Role::Member, Some(h)) if h != me && h != e.neighbor_id => {
                            adj.entry(h).or_default().insert(vec![e.neighbor_id, x.id, h]);
                        }
                        _ => {}
                    }
                }
            }
            Role::Undecided => {}
        }
    }
    adj.into_iter()
        .map(|(h, paths)| {
            let mut paths: Vec<Vec<NodeId>> = paths.into_iter().collect();
            paths.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
            (h, paths)
        })
        .collect()
}

impl RouterState {
    pub fn new(id: NodeId, params: RouterParams) -> Self {
        Self {
            id,
            params,
            cache: RouteCache::default(),
            next_sequence: 0,
            next_generation: 0,
            seen: BTreeSet::new(),
            pending: BTreeMap::new(),
            discoveries: BTreeMap::new(),
        }
    }

    pub fn pending_len(&self) -> usize {
        self.pending.values().map(VecDeque::len).sum()
    }

    pub fn pending_packets(&self) -> impl Iterator<Item = &Packet> {
        self.pending.values().flatten()
    }

    pub fn has_discovery(&self, target: NodeId) -> bool {
        self.discoveries.contains_key(&target)
    }

    fn valid_route(&self, dst: NodeId, now: f64) -> Option<&SourceRoute> {
        self.cache
            .get(dst)
            .filter(|c| now - c.created_at < self.params.route_lifetime)
            .map(|c| &c.route)
    }

    /// Entry point for a freshly generated data packet at its source.
    pub fn send_data(&mut self, table: &NodeClusterState, packet: Packet, now: f64) -> Vec<RouteAction> {
        let dst = packet.dst.expect("data packets have a destination");
        let mut out = Vec::new();
        if let Some(route) = self.valid_route(dst, now).cloned() {
            if table.is_bidirectional_neighbor(route.hops[1]) {
                out.push(self.launch(packet, route));
                return out;
            }
            self.cache.remove(dst);
            out.push(RouteAction::RouteBroken { target: dst });
        } else if self.cache.remove(dst).is_some() {
            // Aged out; rediscover.
        }
        self.park(dst, packet, &mut out);
        if !self.discoveries.contains_key(&dst) {
            self.start_discovery(table, dst, now, &mut out);
        }
        out
    }

    fn launch(&self, mut packet: Packet, route: SourceRoute) -> RouteAction {
        let next_hop = route.hops[1];
        let d = packet.as_data_mut().expect("only data is source routed");
        d.route = route;
        d.hop = 1;
        RouteAction::Send { packet, next_hop }
    }

    fn park(&mut self, dst: NodeId, packet: Packet, out: &mut Vec<RouteAction>) {
        let q = self.pending.entry(dst).or_default();
        q.push_back(packet);
        while q.len() > self.params.pending_capacity {
            let oldest = q.pop_front().expect("non-empty");
            out.push(RouteAction::DropData {
                packet: oldest,
                cause: DropCause::NoRoute,
            });
        }
    }

    fn start_discovery(&mut self, table: &NodeClusterState, target: NodeId, now: f64, out: &mut Vec<RouteAction>) {
        let generation = self.next_generation;
        self.next_generation += 1;
        self.discoveries.insert(
            target,
            Discovery {
                attempts: 0,
                generation,
                awaiting_head: false,
            },
        );
        self.attempt(table, target, now, out);
        if self.discoveries.contains_key(&target) {
            out.push(RouteAction::ScheduleTimeout {
                target,
                at: now + self.params.rreq_timeout,
                generation,
            });
        }
    }

    fn attempt(&mut self, table: &NodeClusterState, target: NodeId, now: f64, out: &mut Vec<RouteAction>) {
        match self.originate_rreq(table, target, now) {
            Ok(actions) => {
                if let Some(d) = self.discoveries.get_mut(&target) {
                    d.awaiting_head = false;
                }
                for a in actions {
                    self.absorb(table, a, now, out);
                }
            }
            Err(RoutingError::NoClusterHead(_)) => {
                if let Some(d) = self.discoveries.get_mut(&target) {
                    d.awaiting_head = true;
                }
            }
            Err(e) => unreachable!("{e}"),
        }
    }

    /// Handles actions that resolve locally (route installs) before handing
    /// the rest to the engine.
    fn absorb(&mut self, table: &NodeClusterState, action: RouteAction, now: f64, out: &mut Vec<RouteAction>) {
        match action {
            RouteAction::RouteInstalled { target, route } => {
                self.install_route(table, target, route, now, out);
            }
            other => out.push(other),
        }
    }

    /// Builds the initial route request. A bidirectional neighbor target is
    /// answered from the neighbor table; a head processes its own request.
    pub fn originate_rreq(&mut self, table: &NodeClusterState, target: NodeId, now: f64) -> Result<Vec<RouteAction>, RoutingError> {
        if table.is_bidirectional_neighbor(target) {
            return Ok(vec![RouteAction::RouteInstalled {
                target,
                route: SourceRoute {
                    hops: vec![self.id, target],
                },
            }]);
        }
        if table.head_ids.is_empty() {
            return Err(RoutingError::NoClusterHead(self.id));
        }
        self.next_sequence += 1;
        let rreq = RouteRequest {
            request_id: RequestId {
                source: self.id,
                sequence: self.next_sequence,
            },
            source: self.id,
            target,
            recorded_route: vec![self.id],
            forward_path: Vec::new(),
        };
        self.seen.insert(rreq.request_id);
        let mut out = vec![RouteAction::RreqOriginated { target }];
        if table.role == Role::ClusterHead {
            out.extend(self.head_forward(table, &rreq, now));
        } else {
            for &h in &table.head_ids {
                out.push(RouteAction::Send {
                    packet: Packet::route_request(rreq.clone(), now),
                    next_hop: h,
                });
            }
        }
        Ok(out)
    }

    fn head_forward(&self, table: &NodeClusterState, rreq: &RouteRequest, now: f64) -> Vec<RouteAction> {
        let mut out = Vec::new();
        for (head, paths) in cluster_adjacency(table) {
            if rreq.recorded_route.contains(&head) {
                continue;
            }
            let fresh = |n: &NodeId| !rreq.recorded_route.contains(n);
            // Failing a clean path, one that starts at an earlier hop: the
            // request goes back to that hop and the loop is cut from the record.
            let Some(path) = paths
                .iter()
                .find(|p| p.iter().all(fresh))
                .or_else(|| paths.iter().find(|p| !fresh(&p[0]) && p[1..].iter().all(fresh)))
            else {
                continue;
            };
            let mut copy = rreq.clone();
            if let Some(k) = copy.recorded_route.iter().position(|&n| n == path[0]) {
                copy.recorded_route.truncate(k + 1);
            }
            copy.forward_path = path[1..].to_vec();
            out.push(RouteAction::Send {
                packet: Packet::route_request(copy, now),
                next_hop: path[0],
            });
        }
        out
    }

    fn reply(&self, table: &NodeClusterState, rreq: &RouteRequest, route: Vec<NodeId>, now: f64) -> Vec<RouteAction> {
        let me = route
            .iter()
            .position(|&n| n == self.id)
            .expect("replier is on the route");
        debug_assert!(me > 0);
        let prev = route[me - 1];
        if !table.is_bidirectional_neighbor(prev) {
            return vec![RouteAction::RrepDropped];
        }
        let rrep = RouteReply {
            request_id: rreq.request_id,
            route,
            position: me - 1,
        };
        vec![RouteAction::Send {
            packet: Packet::route_reply(rrep, now),
            next_hop: prev,
        }]
    }

    /// Route request arriving over the air.
    pub fn process_rreq(&mut self, table: &NodeClusterState, mut rreq: RouteRequest, now: f64) -> Vec<RouteAction> {
        if rreq.recorded_route.last() == Some(&self.id) {
            // Handed back by a head whose only way out is through us.
            return self.relay(table, rreq, now);
        }
        if rreq.recorded_route.contains(&self.id) {
            return Vec::new();
        }
        // Plain relays pass every copy along; loops are caught by the
        // recorded route. Heads and repliers act once per request.
        let relay_only =
            self.id != rreq.target && table.role != Role::ClusterHead && !table.is_bidirectional_neighbor(rreq.target);
        if !relay_only && !self.seen.insert(rreq.request_id) {
            return Vec::new();
        }
        rreq.recorded_route.push(self.id);
        if self.id == rreq.target {
            let route = rreq.recorded_route.clone();
            return self.reply(table, &rreq, route, now);
        }
        if table.is_bidirectional_neighbor(rreq.target) {
            let mut route = rreq.recorded_route.clone();
            route.push(rreq.target);
            return self.reply(table, &rreq, route, now);
        }
        if table.role == Role::ClusterHead {
            return self.head_forward(table, &rreq, now);
        }
        self.relay(table, rreq, now)
    }

    fn relay(&self, table: &NodeClusterState, mut rreq: RouteRequest, now: f64) -> Vec<RouteAction> {
        if rreq.forward_path.is_empty() {
            return Vec::new();
        }
        let next = rreq.forward_path.remove(0);
        if !table.is_bidirectional_neighbor(next) {
            return Vec::new();
        }
        vec![RouteAction::Send {
            packet: Packet::route_request(rreq, now),
            next_hop: next,
        }]
    }

    /// Route reply arriving over the air.
    pub fn process_rrep(&mut self, table: &NodeClusterState, mut rrep: RouteReply, now: f64) -> Vec<RouteAction> {
        debug_assert_eq!(rrep.route.get(rrep.position), Some(&self.id));
        let mut out = Vec::new();
        if rrep.position == 0 {
            let target = *rrep.route.last().expect("non-empty route");
            self.install_route(table, target, SourceRoute { hops: rrep.route }, now, &mut out);
            return out;
        }
        let prev = rrep.route[rrep.position - 1];
        if !table.is_bidirectional_neighbor(prev) {
            out.push(RouteAction::RrepDropped);
            return out;
        }
        rrep.position -= 1;
        out.push(RouteAction::Send {
            packet: Packet::route_reply(rrep, now),
            next_hop: prev,
        });
        out
    }

    fn install_route(&mut self, table: &NodeClusterState, target: NodeId, route: SourceRoute, now: f64, out: &mut Vec<RouteAction>) {
        self.cache.insert(target, route.clone(), now);
        self.discoveries.remove(&target);
        out.push(RouteAction::RouteInstalled {
            target,
            route: route.clone(),
        });
        self.flush(table, target, now, out);
    }

    fn flush(&mut self, table: &NodeClusterState, target: NodeId, now: f64, out: &mut Vec<RouteAction>) {
        let Some(route) = self.valid_route(target, now).cloned() else {
            return;
        };
        if !table.is_bidirectional_neighbor(route.hops[1]) {
            self.cache.remove(target);
            out.push(RouteAction::RouteBroken { target });
            if self.pending.get(&target).is_some_and(|q| !q.is_empty()) && !self.discoveries.contains_key(&target) {
                self.start_discovery(table, target, now, out);
            }
            return;
        }
        if let Some(q) = self.pending.remove(&target) {
            for p in q {
                out.push(self.launch(p, route.clone()));
            }
        }
    }

    /// Source-side retry policy, driven by the discovery timer.
    pub fn on_timeout(&mut self, table: &NodeClusterState, target: NodeId, generation: u64, now: f64) -> Vec<RouteAction> {
        let mut out = Vec::new();
        match self.discoveries.get(&target) {
            Some(d) if d.generation == generation => {}
            _ => return out,
        }
        if self.valid_route(target, now).is_some() {
            self.discoveries.remove(&target);
            self.flush(table, target, now, &mut out);
            return out;
        }
        let d = self.discoveries.get_mut(&target).expect("checked above");
        d.attempts += 1;
        if d.attempts > self.params.max_retries {
            self.discoveries.remove(&target);
            for packet in self.pending.remove(&target).unwrap_or_default() {
                out.push(RouteAction::DropData {
                    packet,
                    cause: DropCause::NoRoute,
                });
            }
            return out;
        }
        self.attempt(table, target, now, &mut out);
        if self.discoveries.contains_key(&target) {
            out.push(RouteAction::ScheduleTimeout {
                target,
                at: now + self.params.rreq_timeout,
                generation,
            });
        }
        out
    }

    /// Called after a role change; discoveries stalled for lack of a head
    /// go out as soon as one exists.
    pub fn on_cluster_change(&mut self, table: &NodeClusterState, now: f64) -> Vec<RouteAction> {
        let mut out = Vec::new();
        if table.head_ids.is_empty() {
            return out;
        }
        let stalled: Vec<NodeId> = self
            .discoveries
            .iter()
            .filter(|(_, d)| d.awaiting_head)
            .map(|(t, _)| *t)
            .collect();
        for t in stalled {
            self.attempt(table, t, now, &mut out);
        }
        out
    }

    /// Data packet arriving over the air.
    pub fn forward_data(&mut self, table: &NodeClusterState, mut packet: Packet, _now: f64) -> Result<RouteAction, RoutingError> {
        let me = self.id;
        let dst = packet.dst;
        let d = packet.as_data_mut().expect("forward_data takes data packets");
        if d.route.hops.get(d.hop) != Some(&me) {
            return Err(RoutingError::NotOnRoute { node: me });
        }
        if Some(me) == dst {
            return Ok(RouteAction::Deliver(packet));
        }
        let next = d.route.hops[d.hop + 1];
        if !table.is_bidirectional_neighbor(next) {
            return Ok(RouteAction::DropData {
                packet,
                cause: DropCause::ForwardingFailure,
            });
        }
        d.hop += 1;
        Ok(RouteAction::Send { packet, next_hop: next })
    }

    /// Our own transmission to `next_hop` found it out of range.
    pub fn on_link_failure(&mut self, next_hop: NodeId) -> Vec<RouteAction> {
        self.cache
            .invalidate_via(next_hop)
            .into_iter()
            .map(|target| RouteAction::RouteBroken { target })
            .collect()
    }
}

/// Lets tests and the engine check packet bodies without matching by hand.
pub fn recorded_route(packet: &Packet) -> Option<&[NodeId]> {
    match &packet.body {
        PacketBody::RouteRequest(r) => Some(&r.recorded_route),
        PacketBody::RouteReply(r) => Some(&r.route),
        PacketBody::Data(d) => Some(&d.route.hops),
        PacketBody::Hello(_) => None,
    }
}
