//! Static instance description, fluents, actions and the transition function.
//!
//! A [`State`] is a complete assignment: UAV positions and `down` flags are
//! inertial, `in_contact` is recomputed from positions and `down` on every
//! step, and picture holdings only ever grow. Everything not derivable as true
//! is false.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use smallvec::SmallVec;
use thiserror::Error;

use crate::dsu::DisjointSet;

/// Maximum number of radio nodes an instance may declare (node sets are `u64` masks).
pub const MAX_NODES: usize = 64;
/// Maximum number of targets an instance may declare.
pub const MAX_TARGETS: usize = 64;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LocId(pub u16);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u16);

/// Ordinal of a target within [`Instance::targets`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TargetId(pub u8);

impl LocId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl TargetId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A set of radio nodes packed into a bit mask.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeSet(pub u64);

impl NodeSet {
    pub const EMPTY: NodeSet = NodeSet(0);

    pub fn singleton(n: NodeId) -> Self {
        NodeSet(1 << n.0)
    }

    pub fn contains(self, n: NodeId) -> bool {
        self.0 & (1 << n.0) != 0
    }

    pub fn insert(&mut self, n: NodeId) {
        self.0 |= 1 << n.0;
    }

    pub fn union(self, other: NodeSet) -> NodeSet {
        NodeSet(self.0 | other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = NodeId> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let i = bits.trailing_zeros();
            bits &= bits - 1;
            Some(NodeId(i as u16))
        })
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum LocationKind {
    HomeBase,
    Waypoint,
    Target,
    RelaySite,
}

impl LocationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LocationKind::HomeBase => "home_base",
            LocationKind::Waypoint => "waypoint",
            LocationKind::Target => "target",
            LocationKind::RelaySite => "relay_site",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "home_base" => LocationKind::HomeBase,
            "waypoint" => LocationKind::Waypoint,
            "target" => LocationKind::Target,
            "relay_site" => LocationKind::RelaySite,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Location {
    pub id: String,
    pub x: i64,
    pub y: i64,
    pub kind: LocationKind,
}

/// Squared euclidean distance between two grid locations.
pub fn dist2(a: &Location, b: &Location) -> i64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    dx * dx + dy * dy
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Uav,
    Relay,
    Base,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Uav => "uav",
            NodeKind::Relay => "relay",
            NodeKind::Base => "base",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "uav" => NodeKind::Uav,
            "relay" => NodeKind::Relay,
            "base" => NodeKind::Base,
            _ => return None,
        })
    }
}

/// A radio node. For relays and the base `location` is fixed; for UAVs it is
/// the initial location.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RadioNode {
    pub id: String,
    pub kind: NodeKind,
    pub location: LocId,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InstanceError {
    #[error("duplicate location id `{0}`")]
    DuplicateLocation(String),
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("expected exactly one home_base location, found {0}")]
    HomeBaseCount(usize),
    #[error("expected exactly one base node, found {0}")]
    BaseCount(usize),
    #[error("base node `{0}` is not located at the home base")]
    BaseNotAtHome(String),
    #[error("adjacency must be irreflexive: `{0}` is its own neighbor")]
    SelfLoop(String),
    #[error("location index {0} out of range")]
    UnknownLocation(usize),
    #[error("location graph is disconnected: `{0}` unreachable from `{1}`")]
    Disconnected(String, String),
    #[error("radio range must be positive, got {0}")]
    NonPositiveRange(i64),
    #[error("too many {what}: {count} (max {max})")]
    TooMany { what: &'static str, count: usize, max: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorldError {
    #[error("precondition violation at step {step}: {action} is not executable")]
    PreconditionViolation { action: String, step: u32 },
    #[error("more than one agent action for `{uav}` at step {step}")]
    DuplicateAgentAction { uav: String, step: u32 },
    #[error("instance integrity: {0}")]
    Integrity(String),
}

/// Static world description. Construct through [`Instance::new`], which
/// validates every structural invariant and precomputes range and hop tables.
#[derive(Clone, Debug)]
pub struct Instance {
    locations: Vec<Location>,
    adjacency: Vec<Vec<LocId>>,
    nodes: Vec<RadioNode>,
    targets: Vec<LocId>,
    radio_range: i64,
    base: NodeId,
    home: LocId,
    uavs: Vec<NodeId>,
    in_range: Vec<bool>,
    hops: Vec<u32>,
    target_of: Vec<Option<TargetId>>,
    loc_index: HashMap<String, LocId>,
    node_index: HashMap<String, NodeId>,
}

impl PartialEq for Instance {
    fn eq(&self, other: &Self) -> bool {
        self.locations == other.locations
            && self.adjacency == other.adjacency
            && self.nodes == other.nodes
            && self.radio_range == other.radio_range
    }
}

impl Instance {
    /// Builds and validates an instance. `edges` are undirected.
    pub fn new(
        locations: Vec<Location>,
        edges: &[(LocId, LocId)],
        nodes: Vec<RadioNode>,
        radio_range: i64,
    ) -> Result<Self, InstanceError> {
        if radio_range <= 0 {
            return Err(InstanceError::NonPositiveRange(radio_range));
        }
        if locations.len() > u16::MAX as usize {
            return Err(InstanceError::TooMany {
                what: "locations",
                count: locations.len(),
                max: u16::MAX as usize,
            });
        }
        if nodes.len() > MAX_NODES {
            return Err(InstanceError::TooMany { what: "nodes", count: nodes.len(), max: MAX_NODES });
        }
        let mut loc_index = HashMap::new();
        for (i, l) in locations.iter().enumerate() {
            if loc_index.insert(l.id.clone(), LocId(i as u16)).is_some() {
                return Err(InstanceError::DuplicateLocation(l.id.clone()));
            }
        }
        let homes: Vec<usize> = (0..locations.len())
            .filter(|&i| locations[i].kind == LocationKind::HomeBase)
            .collect();
        if homes.len() != 1 {
            return Err(InstanceError::HomeBaseCount(homes.len()));
        }
        let home = LocId(homes[0] as u16);

        let n = locations.len();
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a.index() >= n {
                return Err(InstanceError::UnknownLocation(a.index()));
            }
            if b.index() >= n {
                return Err(InstanceError::UnknownLocation(b.index()));
            }
            if a == b {
                return Err(InstanceError::SelfLoop(locations[a.index()].id.clone()));
            }
            adjacency[a.index()].push(b);
            adjacency[b.index()].push(a);
        }
        for adj in &mut adjacency {
            adj.sort();
            adj.dedup();
        }

        let mut node_index = HashMap::new();
        for (i, nd) in nodes.iter().enumerate() {
            if nd.location.index() >= n {
                return Err(InstanceError::UnknownLocation(nd.location.index()));
            }
            if node_index.insert(nd.id.clone(), NodeId(i as u16)).is_some() {
                return Err(InstanceError::DuplicateNode(nd.id.clone()));
            }
        }
        let bases: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].kind == NodeKind::Base).collect();
        if bases.len() != 1 {
            return Err(InstanceError::BaseCount(bases.len()));
        }
        let base = NodeId(bases[0] as u16);
        if nodes[base.index()].location != home {
            return Err(InstanceError::BaseNotAtHome(nodes[base.index()].id.clone()));
        }
        let uavs = (0..nodes.len())
            .filter(|&i| nodes[i].kind == NodeKind::Uav)
            .map(|i| NodeId(i as u16))
            .collect();

        let targets: Vec<LocId> = (0..n)
            .filter(|&i| locations[i].kind == LocationKind::Target)
            .map(|i| LocId(i as u16))
            .collect();
        if targets.len() > MAX_TARGETS {
            return Err(InstanceError::TooMany { what: "targets", count: targets.len(), max: MAX_TARGETS });
        }
        let mut target_of = vec![None; n];
        for (k, t) in targets.iter().enumerate() {
            target_of[t.index()] = Some(TargetId(k as u8));
        }

        let r2 = radio_range * radio_range;
        let mut in_range = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                in_range[i * n + j] = dist2(&locations[i], &locations[j]) <= r2;
            }
        }

        let mut hops = vec![u32::MAX; n * n];
        for src in 0..n {
            let row = &mut hops[src * n..(src + 1) * n];
            row[src] = 0;
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                for v in &adjacency[u] {
                    if row[v.index()] == u32::MAX {
                        row[v.index()] = row[u] + 1;
                        queue.push_back(v.index());
                    }
                }
            }
        }
        if let Some(far) = (0..n).find(|&j| hops[home.index() * n + j] == u32::MAX) {
            return Err(InstanceError::Disconnected(
                locations[far].id.clone(),
                locations[home.index()].id.clone(),
            ));
        }

        Ok(Self {
            locations,
            adjacency,
            nodes,
            targets,
            radio_range,
            base,
            home,
            uavs,
            in_range,
            hops,
            target_of,
            loc_index,
            node_index,
        })
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn location(&self, l: LocId) -> &Location {
        &self.locations[l.index()]
    }

    pub fn nodes(&self) -> &[RadioNode] {
        &self.nodes
    }

    pub fn node(&self, n: NodeId) -> &RadioNode {
        &self.nodes[n.index()]
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len() as u16).map(NodeId)
    }

    pub fn targets(&self) -> &[LocId] {
        &self.targets
    }

    pub fn target_ids(&self) -> impl Iterator<Item = TargetId> {
        (0..self.targets.len() as u8).map(TargetId)
    }

    pub fn target_location(&self, t: TargetId) -> LocId {
        self.targets[t.index()]
    }

    pub fn target_at(&self, l: LocId) -> Option<TargetId> {
        self.target_of[l.index()]
    }

    pub fn radio_range(&self) -> i64 {
        self.radio_range
    }

    pub fn base(&self) -> NodeId {
        self.base
    }

    pub fn home(&self) -> LocId {
        self.home
    }

    pub fn uavs(&self) -> &[NodeId] {
        &self.uavs
    }

    pub fn relays(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.node_ids().filter(|&n| self.node(n).kind == NodeKind::Relay)
    }

    pub fn is_uav(&self, n: NodeId) -> bool {
        n.index() < self.nodes.len() && self.nodes[n.index()].kind == NodeKind::Uav
    }

    pub fn neighbors(&self, l: LocId) -> &[LocId] {
        &self.adjacency[l.index()]
    }

    /// Undirected edge list with `a < b`, in ascending order.
    pub fn edges(&self) -> Vec<(LocId, LocId)> {
        let mut out = Vec::new();
        for (i, adj) in self.adjacency.iter().enumerate() {
            for &b in adj {
                if (i as u16) < b.0 {
                    out.push((LocId(i as u16), b));
                }
            }
        }
        out
    }

    pub fn is_next(&self, a: LocId, b: LocId) -> bool {
        self.adjacency[a.index()].binary_search(&b).is_ok()
    }

    /// True when two locations are within direct radio range.
    pub fn in_range(&self, a: LocId, b: LocId) -> bool {
        self.in_range[a.index() * self.locations.len() + b.index()]
    }

    /// Shortest-path hop count in the location graph.
    pub fn hops(&self, a: LocId, b: LocId) -> u32 {
        self.hops[a.index() * self.locations.len() + b.index()]
    }

    pub fn diameter(&self) -> u32 {
        self.hops.iter().copied().max().unwrap_or(0)
    }

    /// Deterministic shortest path from `from` to `to`, excluding `from`.
    pub fn path(&self, from: LocId, to: LocId) -> Vec<LocId> {
        let mut out = Vec::new();
        let mut cur = from;
        while cur != to {
            let d = self.hops(cur, to);
            cur = *self
                .neighbors(cur)
                .iter()
                .find(|&&m| self.hops(m, to) + 1 == d)
                .expect("connected graph");
            out.push(cur);
        }
        out
    }

    pub fn loc_by_name(&self, name: &str) -> Option<LocId> {
        self.loc_index.get(name).copied()
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.node_index.get(name).copied()
    }

    pub fn target_by_name(&self, name: &str) -> Option<TargetId> {
        self.loc_by_name(name).and_then(|l| self.target_at(l))
    }

    pub fn loc_name(&self, l: LocId) -> &str {
        &self.locations[l.index()].id
    }

    pub fn node_name(&self, n: NodeId) -> &str {
        &self.nodes[n.index()].id
    }

    pub fn target_name(&self, t: TargetId) -> &str {
        self.loc_name(self.target_location(t))
    }

    /// Positions of every node in the initial configuration.
    pub fn initial_positions(&self) -> SmallVec<[LocId; 16]> {
        self.nodes.iter().map(|n| n.location).collect()
    }

    pub fn fmt_action(&self, a: &Action) -> String {
        match *a {
            Action::Move { uav, to } => format!("move({},{})", self.node_name(uav), self.loc_name(to)),
            Action::Wait { uav } => format!("wait({})", self.node_name(uav)),
            Action::Break { node } => format!("break({})", self.node_name(node)),
            Action::Aborted { uav } => format!("aborted({})", self.node_name(uav)),
            Action::Unpredictable { uav } => format!("unpredictable({})", self.node_name(uav)),
        }
    }

    pub fn fmt_fluent(&self, f: &Fluent) -> String {
        match *f {
            Fluent::At { uav, loc } => format!("at({},{})", self.node_name(uav), self.loc_name(loc)),
            Fluent::Down(n) => format!("down({})", self.node_name(n)),
            Fluent::InContact(a, b) => format!("in_contact({},{})", self.node_name(a), self.node_name(b)),
            Fluent::HasPic { node, target } => {
                format!("has_pic({},{})", self.node_name(node), self.target_name(target))
            }
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fluent {
    At { uav: NodeId, loc: LocId },
    Down(NodeId),
    InContact(NodeId, NodeId),
    HasPic { node: NodeId, target: TargetId },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Move { uav: NodeId, to: LocId },
    Wait { uav: NodeId },
    Break { node: NodeId },
    Aborted { uav: NodeId },
    Unpredictable { uav: NodeId },
}

impl Action {
    pub fn is_agent_action(&self) -> bool {
        matches!(self, Action::Move { .. } | Action::Wait { .. })
    }

    /// The node the action is performed by or applied to.
    pub fn subject(&self) -> NodeId {
        match *self {
            Action::Move { uav, .. }
            | Action::Wait { uav }
            | Action::Aborted { uav }
            | Action::Unpredictable { uav } => uav,
            Action::Break { node } => node,
        }
    }
}

/// How radio contact is derived. Only [`ContactModel::Radio`] describes the
/// real world; the other two are the planning assumptions of the baseline
/// modes.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum ContactModel {
    /// Multi-hop closure of direct links between up nodes.
    Radio,
    /// Every pair of nodes is always in contact.
    AlwaysConnected,
    /// Only UAVs parked on the home base location talk to the base.
    HomeBaseOnly,
}

const NO_COMPONENT: u16 = u16::MAX;

/// The `in_contact` relation, stored as one component label per node.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Contact {
    comp: SmallVec<[u16; 16]>,
}

impl Contact {
    pub fn in_contact(&self, a: NodeId, b: NodeId) -> bool {
        a != b && self.comp[a.index()] != NO_COMPONENT && self.comp[a.index()] == self.comp[b.index()]
    }

    /// All unordered contact pairs `(a, b)` with `a < b`.
    pub fn pairs(&self) -> Vec<(NodeId, NodeId)> {
        let n = self.comp.len();
        let mut out = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if self.in_contact(NodeId(a as u16), NodeId(b as u16)) {
                    out.push((NodeId(a as u16), NodeId(b as u16)));
                }
            }
        }
        out
    }

    /// Nodes in contact with `n`.
    pub fn peers(&self, n: NodeId) -> NodeSet {
        let mut s = NodeSet::EMPTY;
        for m in 0..self.comp.len() {
            if self.in_contact(n, NodeId(m as u16)) {
                s.insert(NodeId(m as u16));
            }
        }
        s
    }

    fn label(&self, n: usize) -> u16 {
        self.comp[n]
    }
}

/// Computes the `in_contact` relation for the given node positions.
pub fn connectivity(positions: &[LocId], down: NodeSet, inst: &Instance) -> Result<Contact, WorldError> {
    if positions.len() != inst.nodes.len() {
        return Err(WorldError::Integrity(format!(
            "{} positions for {} nodes",
            positions.len(),
            inst.nodes.len()
        )));
    }
    if let Some(bad) = down.iter().find(|n| n.index() >= inst.nodes.len()) {
        return Err(WorldError::Integrity(format!("unknown node index {}", bad.0)));
    }
    if let Some(bad) = positions.iter().find(|l| l.index() >= inst.locations.len()) {
        return Err(WorldError::Integrity(format!("unknown location index {}", bad.0)));
    }
    Ok(contact_for(positions, down, ContactModel::Radio, inst))
}

fn contact_for(positions: &[LocId], down: NodeSet, model: ContactModel, inst: &Instance) -> Contact {
    let n = positions.len();
    match model {
        ContactModel::Radio => {
            let mut dsu = DisjointSet::new(n);
            for a in 0..n {
                if down.contains(NodeId(a as u16)) {
                    continue;
                }
                for b in a + 1..n {
                    if !down.contains(NodeId(b as u16)) && inst.in_range(positions[a], positions[b]) {
                        dsu.union(a, b);
                    }
                }
            }
            let comp = (0..n)
                .map(|i| if down.contains(NodeId(i as u16)) { NO_COMPONENT } else { dsu.find(i) as u16 })
                .collect();
            Contact { comp }
        }
        ContactModel::AlwaysConnected => Contact { comp: SmallVec::from_elem(0, n) },
        ContactModel::HomeBaseOnly => {
            let comp = (0..n)
                .map(|i| {
                    let id = NodeId(i as u16);
                    if id == inst.base || (inst.is_uav(id) && positions[i] == inst.home) {
                        0
                    } else {
                        i as u16 + 1
                    }
                })
                .collect();
            Contact { comp }
        }
    }
}

/// A complete world state at one step.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct State {
    step: u32,
    positions: SmallVec<[LocId; 16]>,
    down: NodeSet,
    contact: Contact,
    pics: SmallVec<[NodeSet; 8]>,
}

/// The inertial part of a state; two states with equal keys are equal up to
/// the step number.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey {
    pub positions: SmallVec<[LocId; 16]>,
    pub down: NodeSet,
    pub pics: SmallVec<[NodeSet; 8]>,
}

impl State {
    /// Builds a state from its inertial fluents, deriving contact and closing
    /// picture holdings (capture at targets, then sharing).
    pub fn from_parts(
        step: u32,
        positions: SmallVec<[LocId; 16]>,
        down: NodeSet,
        pics: SmallVec<[NodeSet; 8]>,
        inst: &Instance,
    ) -> Self {
        Self::derive(step, positions, down, pics, ContactModel::Radio, inst)
    }

    fn derive(
        step: u32,
        positions: SmallVec<[LocId; 16]>,
        down: NodeSet,
        mut pics: SmallVec<[NodeSet; 8]>,
        model: ContactModel,
        inst: &Instance,
    ) -> Self {
        let contact = contact_for(&positions, down, model, inst);
        for &u in &inst.uavs {
            if let Some(t) = inst.target_at(positions[u.index()]) {
                pics[t.index()].insert(u);
            }
        }
        close_pictures(&mut pics, &contact);
        Self { step, positions, down, contact, pics }
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    pub fn position(&self, n: NodeId) -> LocId {
        self.positions[n.index()]
    }

    pub fn positions(&self) -> &[LocId] {
        &self.positions
    }

    pub fn down(&self) -> NodeSet {
        self.down
    }

    pub fn is_down(&self, n: NodeId) -> bool {
        self.down.contains(n)
    }

    pub fn contact(&self) -> &Contact {
        &self.contact
    }

    pub fn in_contact(&self, a: NodeId, b: NodeId) -> bool {
        self.contact.in_contact(a, b)
    }

    pub fn has_pic(&self, n: NodeId, t: TargetId) -> bool {
        self.pics[t.index()].contains(n)
    }

    pub fn holders(&self, t: TargetId) -> NodeSet {
        self.pics[t.index()]
    }

    pub fn pictures(&self) -> &[NodeSet] {
        &self.pics
    }

    /// True when some node holds a picture of `t`.
    pub fn captured(&self, t: TargetId) -> bool {
        !self.pics[t.index()].is_empty()
    }

    /// Number of pictures taken but not yet at the base; each one accrues one
    /// step of staleness per state it stays in this condition.
    pub fn pending_pictures(&self, base: NodeId) -> u32 {
        self.pics.iter().filter(|h| !h.is_empty() && !h.contains(base)).count() as u32
    }

    pub fn holds(&self, f: &Fluent) -> bool {
        match *f {
            Fluent::At { uav, loc } => self.positions.get(uav.index()) == Some(&loc),
            Fluent::Down(n) => self.down.contains(n),
            Fluent::InContact(a, b) => self.contact.in_contact(a, b),
            Fluent::HasPic { node, target } => self.pics.get(target.index()).is_some_and(|h| h.contains(node)),
        }
    }

    pub fn key(&self) -> StateKey {
        StateKey { positions: self.positions.clone(), down: self.down, pics: self.pics.clone() }
    }

    /// Same state relabelled to another step.
    pub fn at_step(mut self, step: u32) -> Self {
        self.step = step;
        self
    }
}

fn close_pictures(pics: &mut [NodeSet], contact: &Contact) {
    let n = contact.comp.len();
    for holders in pics.iter_mut() {
        if holders.is_empty() {
            continue;
        }
        let mut labels: SmallVec<[u16; 8]> = SmallVec::new();
        for h in holders.iter() {
            let l = contact.label(h.index());
            if l != NO_COMPONENT && !labels.contains(&l) {
                labels.push(l);
            }
        }
        for m in 0..n {
            if labels.contains(&contact.label(m)) && contact.label(m) != NO_COMPONENT {
                holders.insert(NodeId(m as u16));
            }
        }
    }
}

/// The initial state: every node at its declared location, nothing down.
pub fn initial_state(inst: &Instance) -> State {
    State::from_parts(
        0,
        inst.initial_positions(),
        NodeSet::EMPTY,
        SmallVec::from_elem(NodeSet::EMPTY, inst.targets.len()),
        inst,
    )
}

/// Executability of an agent action: moves follow an adjacency edge, waits are
/// always possible. Exogenous actions are not agent actions and yield `false`.
pub fn legal(s: &State, a: &Action, inst: &Instance) -> bool {
    match *a {
        Action::Move { uav, to } => {
            inst.is_uav(uav) && to.index() < inst.locations.len() && inst.is_next(s.position(uav), to)
        }
        Action::Wait { uav } => inst.is_uav(uav),
        _ => false,
    }
}

/// Successor state under the given agent actions and exogenous events.
///
/// Effects are applied as moves, then breaks, then inertia for everything
/// else, then contact is recomputed, pictures are taken at targets and finally
/// shared across the new contact relation.
pub fn transition(s: &State, agent_actions: &[Action], exogenous: &[Action], inst: &Instance) -> Result<State, WorldError> {
    let mut seen = NodeSet::EMPTY;
    let mut moves: SmallVec<[(NodeId, LocId); 4]> = SmallVec::new();
    for a in agent_actions {
        if !a.is_agent_action() || !legal(s, a, inst) {
            return Err(WorldError::PreconditionViolation { action: fmt_action_checked(inst, a), step: s.step });
        }
        let u = a.subject();
        if seen.contains(u) {
            return Err(WorldError::DuplicateAgentAction { uav: inst.node_name(u).to_string(), step: s.step });
        }
        seen.insert(u);
        if let Action::Move { uav, to } = *a {
            moves.push((uav, to));
        }
    }
    let mut breaks = NodeSet::EMPTY;
    for e in exogenous {
        match *e {
            Action::Break { node } => {
                if node.index() >= inst.nodes.len() {
                    return Err(WorldError::Integrity(format!("break of unknown node index {}", node.0)));
                }
                breaks.insert(node);
            }
            Action::Aborted { uav } | Action::Unpredictable { uav } => {
                if !inst.is_uav(uav) {
                    return Err(WorldError::Integrity(format!("{} applied to a non-UAV", fmt_action_checked(inst, e))));
                }
            }
            _ => {
                return Err(WorldError::Integrity(format!("{} is not exogenous", fmt_action_checked(inst, e))));
            }
        }
    }
    Ok(advance(s, &moves, breaks, ContactModel::Radio, inst))
}

fn fmt_action_checked(inst: &Instance, a: &Action) -> String {
    let node_ok = a.subject().index() < inst.nodes.len();
    let loc_ok = match a {
        Action::Move { to, .. } => to.index() < inst.locations.len(),
        _ => true,
    };
    if node_ok && loc_ok {
        inst.fmt_action(a)
    } else {
        format!("{a:?}")
    }
}

/// Unchecked successor computation shared by the planner and the belief
/// projection. `moves` must already be legal.
pub(crate) fn advance(
    s: &State,
    moves: &[(NodeId, LocId)],
    breaks: NodeSet,
    model: ContactModel,
    inst: &Instance,
) -> State {
    let mut positions = s.positions.clone();
    for &(u, l) in moves {
        positions[u.index()] = l;
    }
    State::derive(s.step + 1, positions, s.down.union(breaks), s.pics.clone(), model, inst)
}

/// Initial state re-derived under a non-radio contact model.
pub(crate) fn initial_state_with(inst: &Instance, model: ContactModel) -> State {
    State::derive(
        0,
        inst.initial_positions(),
        NodeSet::EMPTY,
        SmallVec::from_elem(NodeSet::EMPTY, inst.targets.len()),
        model,
        inst,
    )
}

/// True iff the base holds a picture of every target.
pub fn goal_holds(s: &State, inst: &Instance) -> bool {
    s.pics.iter().all(|h| h.contains(inst.base))
}

impl fmt::Display for LocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "l{}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn loc(id: &str, x: i64, y: i64, kind: LocationKind) -> Location {
        Location { id: id.into(), x, y, kind }
    }

    /// Line of locations 5 units apart: home(0,0) a(5,0) b(10,0) t(15,0).
    /// Relays at a and b, one UAV at home.
    pub(crate) fn line_instance() -> Instance {
        let locs = vec![
            loc("home", 0, 0, LocationKind::HomeBase),
            loc("a", 5, 0, LocationKind::RelaySite),
            loc("b", 10, 0, LocationKind::RelaySite),
            loc("t", 15, 0, LocationKind::Target),
        ];
        let edges = [(LocId(0), LocId(1)), (LocId(1), LocId(2)), (LocId(2), LocId(3))];
        let nodes = vec![
            RadioNode { id: "base".into(), kind: NodeKind::Base, location: LocId(0) },
            RadioNode { id: "r1".into(), kind: NodeKind::Relay, location: LocId(1) },
            RadioNode { id: "r2".into(), kind: NodeKind::Relay, location: LocId(2) },
            RadioNode { id: "u1".into(), kind: NodeKind::Uav, location: LocId(0) },
        ];
        Instance::new(locs, &edges, nodes, 7).unwrap()
    }

    #[test]
    fn dist2_examples() {
        let o = loc("o", 0, 0, LocationKind::Waypoint);
        assert_eq!(dist2(&o, &o), 0);
        assert_eq!(dist2(&o, &loc("p", 3, 4, LocationKind::Waypoint)), 25);
        let d = dist2(&loc("a", 2, 1, LocationKind::Waypoint), &loc("b", 9, 1, LocationKind::Waypoint));
        assert_eq!(d, 49);
        assert!(d <= 7 * 7);
    }

    #[test]
    fn chain_contact_through_relay_and_cut_by_down() {
        let inst = line_instance();
        let pos = inst.initial_positions();
        let c = connectivity(&pos, NodeSet::EMPTY, &inst).unwrap();
        // base(0,0) - r1(5,0) - r2(10,0); base and r2 are 10 apart
        assert!(c.in_contact(NodeId(0), NodeId(2)));
        let mut down = NodeSet::EMPTY;
        down.insert(NodeId(1));
        let c = connectivity(&pos, down, &inst).unwrap();
        assert!(!c.in_contact(NodeId(0), NodeId(2)));
        assert!(c.peers(NodeId(1)).is_empty());
        // base and the UAV share the home location
        assert!(c.in_contact(NodeId(0), NodeId(3)));
    }

    #[test]
    fn connectivity_rejects_bad_positions() {
        let inst = line_instance();
        assert!(matches!(
            connectivity(&[LocId(0)], NodeSet::EMPTY, &inst),
            Err(WorldError::Integrity(_))
        ));
    }

    #[test]
    fn legality() {
        let inst = line_instance();
        let s = initial_state(&inst);
        let u = NodeId(3);
        assert!(legal(&s, &Action::Move { uav: u, to: LocId(1) }, &inst));
        assert!(!legal(&s, &Action::Move { uav: u, to: LocId(2) }, &inst));
        assert!(legal(&s, &Action::Wait { uav: u }, &inst));
        assert!(!legal(&s, &Action::Move { uav: NodeId(1), to: LocId(1) }, &inst));
    }

    #[test]
    fn picture_reaches_base_same_step() {
        let inst = line_instance();
        let mut s = initial_state(&inst);
        let u = NodeId(3);
        for to in [1, 2, 3] {
            s = transition(&s, &[Action::Move { uav: u, to: LocId(to) }], &[], &inst).unwrap();
        }
        let t = TargetId(0);
        assert_eq!(s.step(), 3);
        assert!(s.has_pic(u, t));
        assert!(s.has_pic(inst.base(), t));
        assert!(goal_holds(&s, &inst));
    }

    #[test]
    fn illegal_move_is_rejected() {
        let inst = line_instance();
        let s = initial_state(&inst);
        let err = transition(&s, &[Action::Move { uav: NodeId(3), to: LocId(3) }], &[], &inst).unwrap_err();
        assert_eq!(err, WorldError::PreconditionViolation { action: "move(u1,t)".into(), step: 0 });
        let dup = [Action::Wait { uav: NodeId(3) }, Action::Wait { uav: NodeId(3) }];
        assert!(matches!(transition(&s, &dup, &[], &inst), Err(WorldError::DuplicateAgentAction { .. })));
    }

    #[test]
    fn empty_actions_are_pure_inertia() {
        let inst = line_instance();
        let s = initial_state(&inst);
        let n = transition(&s, &[], &[], &inst).unwrap();
        assert_eq!(n.step(), 1);
        assert_eq!(n.key(), s.key());
        assert_eq!(n.contact(), s.contact());
    }

    #[test]
    fn goal_needs_delivery_not_capture() {
        let inst = line_instance();
        let s = initial_state(&inst);
        assert!(!goal_holds(&s, &inst));
        let mut pics: SmallVec<[NodeSet; 8]> = SmallVec::from_elem(NodeSet::EMPTY, 1);
        pics[0].insert(NodeId(3));
        let mut down = NodeSet::EMPTY;
        down.insert(NodeId(3));
        let s = State::from_parts(0, inst.initial_positions(), down, pics, &inst);
        assert!(s.has_pic(NodeId(3), TargetId(0)));
        assert!(!goal_holds(&s, &inst));
    }

    #[test]
    fn instance_validation() {
        let home = loc("h", 0, 0, LocationKind::HomeBase);
        let w = loc("w", 1, 0, LocationKind::Waypoint);
        let base = RadioNode { id: "base".into(), kind: NodeKind::Base, location: LocId(0) };
        let r = Instance::new(vec![home.clone(), w.clone()], &[], vec![base.clone()], 7);
        assert!(matches!(r, Err(InstanceError::Disconnected(..))));
        let r = Instance::new(vec![home.clone(), w.clone()], &[(LocId(1), LocId(1))], vec![base.clone()], 7);
        assert!(matches!(r, Err(InstanceError::SelfLoop(_))));
        let r = Instance::new(vec![home.clone(), home.clone()], &[], vec![base.clone()], 7);
        assert!(matches!(r, Err(InstanceError::DuplicateLocation(_))));
        let far_base = RadioNode { location: LocId(1), ..base };
        let r = Instance::new(vec![home, w], &[(LocId(0), LocId(1))], vec![far_base], 7);
        assert!(matches!(r, Err(InstanceError::BaseNotAtHome(_))));
    }

    #[test]
    fn shortest_path_is_deterministic() {
        let inst = line_instance();
        assert_eq!(inst.path(LocId(0), LocId(3)), vec![LocId(1), LocId(2), LocId(3)]);
        assert_eq!(inst.hops(LocId(3), LocId(0)), 3);
        assert_eq!(inst.diameter(), 3);
    }
}
