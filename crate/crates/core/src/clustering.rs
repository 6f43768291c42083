//! Per-node cluster state: hello processing, neighbor tables, the
//! received-power mobility metric and the two cluster head elections.
//!
//! Both elections share the least-cluster-change maintenance rules:
//!
//! * an Undecided node joins any cluster head it has a bidirectional link to;
//!   otherwise it declares itself head once it holds the smallest election
//!   key among its Undecided bidirectional neighbors;
//! * a Member never challenges its head, and only re-enters the election when
//!   it has no head left;
//! * when two heads become bidirectional neighbors, the one with the larger
//!   key gives up its role and joins the other.
//!
//! The variants differ only in the key: lowest-ID compares node ids, while the
//! mobility-aware variant compares the aggregate mobility advertised in hellos
//! first and falls back to ids on exact ties.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::config::{Protocol, ScenarioConfig};
use crate::geometry::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Undecided,
    ClusterHead,
    Member,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Undecided => "undecided",
            Role::ClusterHead => "head",
            Role::Member => "member",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkState {
    /// We hear the neighbor but it has not reported hearing us.
    UniFromNeighbor,
    Bidirectional,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("received powers must be positive (new={new}, old={old})")]
pub struct NonPositivePower {
    pub new: f64,
    pub old: f64,
}

/// Relative mobility in dB between two successive receptions from the same
/// neighbor: positive when approaching, negative when receding.
pub fn relative_mobility(pr_new: f64, pr_old: f64) -> Result<f64, NonPositivePower> {
    if !(pr_new > 0.0 && pr_old > 0.0) {
        return Err(NonPositivePower {
            new: pr_new,
            old: pr_old,
        });
    }
    Ok(10.0 * (pr_new / pr_old).log10())
}

/// Aggregate local mobility: the mean square of the relative mobility samples
/// (their variance about zero). An empty set yields 0.
pub fn aggregate_mobility(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
}

/// One row of a neighbor list carried in a hello.
#[derive(Debug, Clone, PartialEq)]
pub struct HelloEntry {
    pub id: NodeId,
    pub link: LinkState,
    pub role: Role,
    /// The neighbor's primary cluster head as known by the sender.
    pub head: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HelloPacket {
    pub sender: NodeId,
    pub sender_role: Role,
    pub sender_head: Option<NodeId>,
    /// Aggregate mobility; only the mobility-aware variant carries it.
    pub sender_m: Option<f64>,
    pub neighbors: Vec<HelloEntry>,
}

impl HelloPacket {
    pub const HEADER_BYTES: usize = 20;
    pub const ENTRY_BYTES: usize = 8;
    pub const METRIC_BYTES: usize = 4;

    pub fn size_bytes(&self) -> usize {
        Self::HEADER_BYTES
            + Self::ENTRY_BYTES * self.neighbors.len()
            + if self.sender_m.is_some() {
                Self::METRIC_BYTES
            } else {
                0
            }
    }

    pub fn lists(&self, id: NodeId) -> bool {
        self.neighbors.iter().any(|e| e.id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborEntry {
    pub neighbor_id: NodeId,
    pub link: LinkState,
    pub neighbor_role: Role,
    pub neighbor_head: Option<NodeId>,
    /// `None` when the neighbor's hellos carry no metric; compares as +inf.
    pub advertised_m: Option<f64>,
    pub prev_rx_power: Option<f64>,
    pub last_rx_power: Option<f64>,
    pub rel_mobility: Option<f64>,
    pub last_heard: f64,
    pub expires_at: f64,
    /// The neighbor's own table as of its last hello.
    pub neighbor_list: Vec<HelloEntry>,
}

impl NeighborEntry {
    pub fn is_bidirectional(&self) -> bool {
        self.link == LinkState::Bidirectional
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClusterAction {
    RoleChanged { old: Role, new: Role },
    /// Announce the new role now rather than at the next periodic hello.
    TriggerHello,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams {
    pub protocol: Protocol,
    pub neighbor_timeout: f64,
    pub election_warmup: f64,
    /// How long a node without a head waits before settling for being
    /// the best of its unserved neighbors rather than of all neighbors.
    pub undecided_timeout: f64,
}

impl ClusterParams {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            protocol: cfg.protocol,
            neighbor_timeout: cfg.neighbor_timeout_tp,
            election_warmup: cfg.election_warmup,
            undecided_timeout: cfg.undecided_timeout,
        }
    }
}

/// Election key; the smaller key wins.
#[derive(Debug, Clone, Copy)]
struct Key {
    m: f64,
    id: NodeId,
}

impl Key {
    fn cmp(&self, other: &Key) -> Ordering {
        self.m.total_cmp(&other.m).then(self.id.cmp(&other.id))
    }

    fn beats(&self, other: &Key) -> bool {
        self.cmp(other) == Ordering::Less
    }
}

#[derive(Debug, Clone)]
pub struct NodeClusterState {
    pub id: NodeId,
    pub role: Role,
    /// Current aggregate mobility over the live neighbor table.
    pub my_m: f64,
    /// The value put in our most recent hello; what neighbors compare against.
    pub announced_m: f64,
    pub neighbors: BTreeMap<NodeId, NeighborEntry>,
    pub head_ids: BTreeSet<NodeId>,
    /// When the node last entered the Undecided state.
    pub undecided_since: f64,
    pub params: ClusterParams,
}

impl NodeClusterState {
    pub fn new(id: NodeId, params: ClusterParams) -> Self {
        Self {
            id,
            role: Role::Undecided,
            my_m: 0.0,
            announced_m: 0.0,
            neighbors: BTreeMap::new(),
            head_ids: BTreeSet::new(),
            undecided_since: 0.0,
            params,
        }
    }

    pub fn bidirectional_neighbors(&self) -> impl Iterator<Item = &NeighborEntry> {
        self.neighbors.values().filter(|e| e.is_bidirectional())
    }

    pub fn is_bidirectional_neighbor(&self, id: NodeId) -> bool {
        self.neighbors.get(&id).is_some_and(NeighborEntry::is_bidirectional)
    }

    /// Lowest-id head this node belongs to (itself when it is a head).
    pub fn primary_head(&self) -> Option<NodeId> {
        self.head_ids.iter().next().copied()
    }

    pub fn build_hello(&mut self) -> HelloPacket {
        let sender_m = match self.params.protocol {
            Protocol::Cbrp => None,
            Protocol::CrossCbrp => {
                self.announced_m = self.my_m;
                Some(self.my_m)
            }
        };
        HelloPacket {
            sender: self.id,
            sender_role: self.role,
            sender_head: self.primary_head(),
            sender_m,
            neighbors: self
                .neighbors
                .values()
                .map(|e| HelloEntry {
                    id: e.neighbor_id,
                    link: e.link,
                    role: e.neighbor_role,
                    head: e.neighbor_head,
                })
                .collect(),
        }
    }

    fn own_key(&self) -> Key {
        match self.params.protocol {
            Protocol::Cbrp => Key { m: 0.0, id: self.id },
            Protocol::CrossCbrp => Key {
                m: self.announced_m,
                id: self.id,
            },
        }
    }

    fn neighbor_key(&self, e: &NeighborEntry) -> Key {
        match self.params.protocol {
            Protocol::Cbrp => Key {
                m: 0.0,
                id: e.neighbor_id,
            },
            Protocol::CrossCbrp => Key {
                m: e.advertised_m.unwrap_or(f64::INFINITY),
                id: e.neighbor_id,
            },
        }
    }

    fn recompute_m(&mut self) {
        let samples: Vec<f64> = self.neighbors.values().filter_map(|e| e.rel_mobility).collect();
        self.my_m = aggregate_mobility(&samples);
    }

    fn refresh_heads(&mut self) {
        self.head_ids = match self.role {
            Role::ClusterHead => BTreeSet::from([self.id]),
            Role::Undecided => BTreeSet::new(),
            Role::Member => self
                .bidirectional_neighbors()
                .filter(|e| e.neighbor_role == Role::ClusterHead)
                .map(|e| e.neighbor_id)
                .collect(),
        };
    }

    /// Table update for one received hello, followed by an election step.
    pub fn on_hello_received(&mut self, hello: &HelloPacket, rx_power: f64, now: f64) -> Vec<ClusterAction> {
        let timeout = self.params.neighbor_timeout;
        let link = if hello.lists(self.id) {
            LinkState::Bidirectional
        } else {
            LinkState::UniFromNeighbor
        };
        let entry = self.neighbors.entry(hello.sender).or_insert_with(|| NeighborEntry {
            neighbor_id: hello.sender,
            link,
            neighbor_role: hello.sender_role,
            neighbor_head: hello.sender_head,
            advertised_m: hello.sender_m,
            prev_rx_power: None,
            last_rx_power: None,
            rel_mobility: None,
            last_heard: now,
            expires_at: now + timeout,
            neighbor_list: Vec::new(),
        });
        entry.prev_rx_power = entry.last_rx_power;
        entry.last_rx_power = Some(rx_power);
        entry.rel_mobility = match (entry.last_rx_power, entry.prev_rx_power) {
            (Some(new), Some(old)) => relative_mobility(new, old).ok(),
            _ => None,
        };
        entry.link = link;
        entry.neighbor_role = hello.sender_role;
        entry.neighbor_head = hello.sender_head;
        entry.advertised_m = hello.sender_m;
        entry.last_heard = now;
        entry.expires_at = now + timeout;
        entry.neighbor_list.clone_from(&hello.neighbors);

        self.recompute_m();
        self.refresh_heads();
        self.elect(now)
    }

    /// Drops entries whose timeout has passed, then re-runs the election.
    pub fn expire_neighbors(&mut self, now: f64) -> (Vec<NodeId>, Vec<ClusterAction>) {
        let removed: Vec<NodeId> = self
            .neighbors
            .values()
            .filter(|e| e.expires_at < now)
            .map(|e| e.neighbor_id)
            .collect();
        if removed.is_empty() {
            return (removed, Vec::new());
        }
        for id in &removed {
            self.neighbors.remove(id);
        }
        self.recompute_m();
        self.refresh_heads();
        let actions = self.elect(now);
        (removed, actions)
    }

    /// Variant-dispatched election step.
    pub fn elect(&mut self, now: f64) -> Vec<ClusterAction> {
        match self.params.protocol {
            Protocol::Cbrp => self.elect_lid(now),
            Protocol::CrossCbrp => self.elect_cross(now),
        }
    }

    /// Lowest-ID election with least-cluster-change maintenance.
    pub fn elect_lid(&mut self, now: f64) -> Vec<ClusterAction> {
        debug_assert_eq!(self.params.protocol, Protocol::Cbrp);
        self.elect_lcc(now)
    }

    /// Aggregate-mobility election with lowest-ID tie-break and
    /// least-cluster-change maintenance.
    pub fn elect_cross(&mut self, now: f64) -> Vec<ClusterAction> {
        debug_assert_eq!(self.params.protocol, Protocol::CrossCbrp);
        self.elect_lcc(now)
    }

    fn elect_lcc(&mut self, now: f64) -> Vec<ClusterAction> {
        if now < self.params.election_warmup {
            return Vec::new();
        }
        let old = self.role;
        let me = self.own_key();
        match self.role {
            Role::ClusterHead => {
                let yield_to = self
                    .bidirectional_neighbors()
                    .filter(|e| e.neighbor_role == Role::ClusterHead)
                    .any(|e| self.neighbor_key(e).beats(&me));
                if yield_to {
                    self.role = Role::Member;
                }
            }
            Role::Member => {
                if self.head_ids.is_empty() {
                    self.role = Role::Undecided;
                    self.undecided_since = now;
                    self.undecided_step(me, now);
                }
            }
            Role::Undecided => self.undecided_step(me, now),
        }
        self.refresh_heads();
        if self.role == old {
            Vec::new()
        } else {
            vec![
                ClusterAction::RoleChanged {
                    old,
                    new: self.role,
                },
                ClusterAction::TriggerHello,
            ]
        }
    }

    /// A neighbor already served by a live head does not compete for
    /// headship. A member whose head we know has stepped down (or is us)
    /// is not served.
    fn is_covered(&self, e: &NeighborEntry) -> bool {
        match (e.neighbor_role, e.neighbor_head) {
            (Role::ClusterHead, _) => true,
            (Role::Member, Some(h)) if h == self.id => false,
            (Role::Member, Some(h)) => self
                .neighbors
                .get(&h)
                .is_none_or(|x| x.neighbor_role == Role::ClusterHead),
            _ => false,
        }
    }

    fn undecided_step(&mut self, me: Key, now: f64) {
        let has_head = self
            .bidirectional_neighbors()
            .any(|e| e.neighbor_role == Role::ClusterHead);
        if has_head {
            self.role = Role::Member;
            return;
        }
        let patient = now - self.undecided_since < self.params.undecided_timeout;
        let lowest = self
            .bidirectional_neighbors()
            .filter(|e| patient || !self.is_covered(e))
            .all(|e| me.beats(&self.neighbor_key(e)));
        if lowest {
            self.role = Role::ClusterHead;
        }
    }

    /// For a cluster head: the members with a bidirectional link into a
    /// different cluster. Empty for non-heads.
    pub fn gateway_set(&self) -> BTreeSet<NodeId> {
        if self.role != Role::ClusterHead {
            return BTreeSet::new();
        }
        self.bidirectional_neighbors()
            .filter(|m| m.neighbor_role == Role::Member)
            .filter(|m| {
                m.neighbor_list.iter().any(|e| {
                    e.link == LinkState::Bidirectional
                        && e.id != self.id
                        && match e.role {
                            Role::ClusterHead => true,
                            Role::Member => e.head.is_some_and(|h| h != self.id),
                            Role::Undecided => false,
                        }
                })
            })
            .map(|m| m.neighbor_id)
            .collect()
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        match self.role {
            Role::ClusterHead => {
                if self.head_ids != BTreeSet::from([self.id]) {
                    return Err(format!("head {} lists heads {:?}", self.id, self.head_ids));
                }
            }
            Role::Member => {
                if self.head_ids.is_empty() {
                    return Err(format!("member {} has no cluster head", self.id));
                }
                for h in &self.head_ids {
                    let ok = self
                        .neighbors
                        .get(h)
                        .is_some_and(|e| e.is_bidirectional() && e.neighbor_role == Role::ClusterHead);
                    if !ok {
                        return Err(format!(
                            "member {} lists head {} without a bidirectional link to a head",
                            self.id, h
                        ));
                    }
                }
            }
            Role::Undecided => {
                if !self.head_ids.is_empty() {
                    return Err(format!("undecided node {} lists heads", self.id));
                }
            }
        }
        for e in self.neighbors.values() {
            if e.rel_mobility.is_some() != (e.prev_rx_power.is_some() && e.last_rx_power.is_some()) {
                return Err(format!(
                    "node {} neighbor {}: relative mobility without two power samples",
                    self.id, e.neighbor_id
                ));
            }
        }
        Ok(())
    }
}
