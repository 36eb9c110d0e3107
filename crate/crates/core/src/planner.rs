//! Mission planning and single-agent replanning.
//!
//! The search runs over time-indexed world states. A layer holds every
//! distinct state reachable at one step, keeping the cheapest accumulated
//! staleness for each; the first layer containing a goal state fixes the
//! makespan. Staleness is additive over states: every state contributes the
//! number of pictures that have been taken but are not yet at the base.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use smallvec::SmallVec;
use thiserror::Error;

use crate::belief::{project, unexpected, BeliefError, ExplanationIndex};
use crate::belief::History;
use crate::world::{
    advance, goal_holds, initial_state, initial_state_with, legal, transition, Action, ContactModel, Instance, LocId,
    NodeId, NodeSet, State, TargetId, WorldError,
};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    NetworkAware,
    Optimistic,
    Naive,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Naive, Mode::Optimistic, Mode::NetworkAware];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::NetworkAware => "network_aware",
            Mode::Optimistic => "optimistic",
            Mode::Naive => "naive",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "network_aware" => Mode::NetworkAware,
            "optimistic" => Mode::Optimistic,
            "naive" => Mode::Naive,
            _ => return None,
        })
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How makespan and staleness are combined.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Default)]
pub enum ObjectiveKind {
    /// Minimize makespan, then total staleness.
    #[default]
    Lexicographic,
    /// Minimize `makespan_weight * makespan + staleness_weight * staleness`.
    WeightedSum { makespan_weight: u32, staleness_weight: u32 },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct PlannerConfig {
    pub mode: Mode,
    pub horizon_limit: u32,
    pub objective: ObjectiveKind,
}

impl PlannerConfig {
    pub fn new(mode: Mode, horizon_limit: u32) -> Self {
        Self { mode, horizon_limit, objective: ObjectiveKind::Lexicographic }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Objective {
    pub makespan: u32,
    pub total_staleness: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlannerError {
    #[error("no plan reaches the goal within horizon {0}")]
    UnsatisfiableHorizon(u32),
    #[error("plan invalid at step {step}: {reason}")]
    PlanInvalid { step: u32, reason: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Belief(#[from] BeliefError),
}

/// Step-stamped actions for every UAV plus the objective values predicted by
/// whoever produced the plan.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiAgentPlan {
    tracks: BTreeMap<NodeId, BTreeMap<u32, Action>>,
    pub horizon: u32,
    pub predicted_makespan: u32,
    pub predicted_total_staleness: u32,
    /// Tracks that only record what the planning agent assumes others will do.
    pub assumed: NodeSet,
    /// Set when the plan delivers what it can instead of reaching the goal.
    pub fallback: bool,
}

impl MultiAgentPlan {
    pub fn empty(horizon: u32) -> Self {
        Self {
            tracks: BTreeMap::new(),
            horizon,
            predicted_makespan: 0,
            predicted_total_staleness: 0,
            assumed: NodeSet::EMPTY,
            fallback: false,
        }
    }

    pub fn push(&mut self, uav: NodeId, step: u32, action: Action) {
        self.tracks.entry(uav).or_default().insert(step, action);
    }

    pub fn action_at(&self, uav: NodeId, step: u32) -> Option<Action> {
        self.tracks.get(&uav).and_then(|t| t.get(&step)).copied()
    }

    pub fn track(&self, uav: NodeId) -> impl Iterator<Item = (u32, Action)> + '_ {
        self.tracks.get(&uav).into_iter().flat_map(|t| t.iter().map(|(&s, &a)| (s, a)))
    }

    pub fn uavs(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.tracks.keys().copied()
    }

    pub fn is_empty_for(&self, uav: NodeId) -> bool {
        self.tracks.get(&uav).is_none_or(|t| t.is_empty())
    }

    /// Plan with every entry before `step` removed.
    pub fn tail(&self, step: u32) -> MultiAgentPlan {
        let mut out = self.clone();
        for t in out.tracks.values_mut() {
            *t = t.split_off(&step);
        }
        out
    }

    /// All actions scheduled for `step`, in UAV order.
    pub fn actions_at(&self, step: u32) -> Vec<Action> {
        self.tracks.values().filter_map(|t| t.get(&step).copied()).collect()
    }

    pub fn last_step(&self) -> Option<u32> {
        self.tracks.values().filter_map(|t| t.keys().next_back().copied()).max()
    }
}

/// Exogenous events assumed to happen at given steps.
pub type AssumedEvents = [(u32, Action)];

/// Simulates `plan` under the real radio model with the assumed events.
///
/// Never-reached goals and never-delivered targets are charged
/// `horizon_limit + 1`.
pub fn evaluate(
    plan: &MultiAgentPlan,
    inst: &Instance,
    assumed_events: &AssumedEvents,
    horizon_limit: u32,
) -> Result<Objective, PlannerError> {
    evaluate_under(plan, inst, assumed_events, horizon_limit, ContactModel::Radio)
}

/// [`evaluate`] under an arbitrary contact model.
pub fn evaluate_under(
    plan: &MultiAgentPlan,
    inst: &Instance,
    assumed_events: &AssumedEvents,
    horizon_limit: u32,
    model: ContactModel,
) -> Result<Objective, PlannerError> {
    let mut s = initial_state_with(inst, model);
    let mut tracker = StalenessTracker::new(inst);
    tracker.observe(&s, inst);
    while !goal_holds(&s, inst) && s.step() < horizon_limit {
        let step = s.step();
        let actions = plan.actions_at(step);
        let mut moves: SmallVec<[(NodeId, LocId); 4]> = SmallVec::new();
        for a in &actions {
            if !legal(&s, a, inst) {
                return Err(PlannerError::PlanInvalid { step, reason: format!("{} not executable", inst.fmt_action(a)) });
            }
            if let Action::Move { uav, to } = *a {
                moves.push((uav, to));
            }
        }
        let mut breaks = NodeSet::EMPTY;
        for &(es, e) in assumed_events {
            if es == step {
                match e {
                    Action::Break { node } => breaks.insert(node),
                    _ if e.is_agent_action() => {
                        return Err(PlannerError::PlanInvalid { step, reason: "agent action given as event".into() })
                    }
                    _ => {}
                }
            }
        }
        s = advance(&s, &moves, breaks, model, inst);
        tracker.observe(&s, inst);
    }
    let makespan = if goal_holds(&s, inst) { s.step() } else { horizon_limit + 1 };
    Ok(Objective { makespan, total_staleness: tracker.total(horizon_limit + 1) })
}

/// Records capture and receipt steps of each picture along a trajectory.
#[derive(Clone, Debug)]
pub struct StalenessTracker {
    pub captured: Vec<Option<u32>>,
    pub received: Vec<Option<u32>>,
}

impl StalenessTracker {
    pub fn new(inst: &Instance) -> Self {
        let n = inst.targets().len();
        Self { captured: vec![None; n], received: vec![None; n] }
    }

    pub fn observe(&mut self, s: &State, inst: &Instance) {
        for t in inst.target_ids() {
            let i = t.index();
            if self.captured[i].is_none() && s.captured(t) {
                self.captured[i] = Some(s.step());
            }
            if self.received[i].is_none() && s.has_pic(inst.base(), t) {
                self.received[i] = Some(s.step());
            }
        }
    }

    pub fn staleness(&self, t: TargetId) -> Option<u32> {
        match (self.captured[t.index()], self.received[t.index()]) {
            (Some(c), Some(r)) => Some(r - c),
            _ => None,
        }
    }

    /// Sum over targets; undelivered targets are charged `penalty`.
    pub fn total(&self, penalty: u32) -> u32 {
        (0..self.captured.len()).map(|i| self.staleness(TargetId(i as u8)).unwrap_or(penalty)).sum()
    }
}

/// Computes a mission plan for every UAV of the instance.
pub fn plan_mission(inst: &Instance, cfg: &PlannerConfig) -> Result<MultiAgentPlan, PlannerError> {
    if cfg.horizon_limit < inst.diameter() {
        return Err(PlannerError::Precondition(format!(
            "horizon limit {} below location graph diameter {}",
            cfg.horizon_limit,
            inst.diameter()
        )));
    }
    match cfg.mode {
        Mode::NetworkAware => joint_plan(inst, cfg, ContactModel::Radio),
        Mode::Optimistic => joint_plan(inst, cfg, ContactModel::AlwaysConnected),
        Mode::Naive => naive_plan(inst, cfg),
    }
}

fn joint_plan(inst: &Instance, cfg: &PlannerConfig, model: ContactModel) -> Result<MultiAgentPlan, PlannerError> {
    let start = initial_state_with(inst, model);
    let problem = Search {
        inst,
        model,
        free: inst.uavs().to_vec(),
        start_step: 0,
        fixed_moves: Vec::new(),
        breaks: BTreeMap::new(),
        horizon_limit: cfg.horizon_limit,
        objective: cfg.objective,
        prune: true,
    };
    let found = problem.run(&start).ok_or(PlannerError::UnsatisfiableHorizon(cfg.horizon_limit))?;
    let mut plan = MultiAgentPlan::empty(found.makespan);
    for (offset, positions) in found.positions.windows(2).enumerate() {
        for (i, &u) in inst.uavs().iter().enumerate() {
            plan.push(u, offset as u32, step_action(u, positions[0][i], positions[1][i]));
        }
    }
    plan.predicted_makespan = found.makespan;
    plan.predicted_total_staleness = found.cost;
    Ok(plan)
}

fn step_action(uav: NodeId, from: LocId, to: LocId) -> Action {
    if from == to {
        Action::Wait { uav }
    } else {
        Action::Move { uav, to }
    }
}

/// Each UAV tours a share of the targets and flies home; the network is
/// ignored while planning.
fn naive_plan(inst: &Instance, cfg: &PlannerConfig) -> Result<MultiAgentPlan, PlannerError> {
    let uavs = inst.uavs();
    let targets = inst.targets();
    if uavs.is_empty() {
        return if targets.is_empty() {
            Ok(MultiAgentPlan::empty(0))
        } else {
            Err(PlannerError::UnsatisfiableHorizon(cfg.horizon_limit))
        };
    }
    let starts: Vec<LocId> = uavs.iter().map(|&u| inst.node(u).location).collect();
    let assignment = if targets.len() <= 4 {
        best_partition(inst, &starts, targets)
    } else {
        nearest_assignment(inst, &starts, targets)
    };
    let mut plan = MultiAgentPlan::empty(0);
    let mut longest = 0;
    for (i, &u) in uavs.iter().enumerate() {
        let (_, order) = best_tour(inst, starts[i], &assignment[i]);
        let mut cur = starts[i];
        let mut step = 0;
        for stop in order.iter().copied().chain(std::iter::once(inst.home())) {
            for next in inst.path(cur, stop) {
                plan.push(u, step, Action::Move { uav: u, to: next });
                step += 1;
                cur = next;
            }
        }
        longest = longest.max(step);
    }
    if longest > cfg.horizon_limit {
        return Err(PlannerError::UnsatisfiableHorizon(cfg.horizon_limit));
    }
    plan.horizon = longest;
    let predicted = evaluate_under(&plan, inst, &[], cfg.horizon_limit, ContactModel::HomeBaseOnly)?;
    plan.predicted_makespan = predicted.makespan;
    plan.predicted_total_staleness = predicted.total_staleness;
    Ok(plan)
}

/// Shortest closed tour from `start` through `stops` ending at home.
fn best_tour(inst: &Instance, start: LocId, stops: &[LocId]) -> (u32, Vec<LocId>) {
    let mut best: Option<(u32, Vec<LocId>)> = None;
    let mut order = stops.to_vec();
    permute(&mut order, 0, &mut |perm| {
        let mut len = 0;
        let mut cur = start;
        for &s in perm {
            len += inst.hops(cur, s);
            cur = s;
        }
        len += inst.hops(cur, inst.home());
        if best.as_ref().is_none_or(|(b, _)| len < *b) {
            best = Some((len, perm.to_vec()));
        }
    });
    best.unwrap_or_else(|| (inst.hops(start, inst.home()), Vec::new()))
}

fn permute(items: &mut Vec<LocId>, k: usize, visit: &mut impl FnMut(&[LocId])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

fn best_partition(inst: &Instance, starts: &[LocId], targets: &[LocId]) -> Vec<Vec<LocId>> {
    let k = starts.len();
    let combos = (k as u64).pow(targets.len() as u32);
    type Scored = ((u32, u32), Vec<Vec<LocId>>);
    let mut best: Option<Scored> = None;
    for code in 0..combos {
        let mut groups = vec![Vec::new(); k];
        let mut c = code;
        for &t in targets {
            groups[(c % k as u64) as usize].push(t);
            c /= k as u64;
        }
        let lens: Vec<u32> = (0..k).map(|i| tour_len(inst, starts[i], &groups[i])).collect();
        let score = (lens.iter().copied().max().unwrap_or(0), lens.iter().sum());
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, groups));
        }
    }
    best.map(|(_, g)| g).unwrap_or_else(|| vec![Vec::new(); k])
}

fn tour_len(inst: &Instance, start: LocId, stops: &[LocId]) -> u32 {
    if stops.is_empty() {
        // a UAV with nothing to do stays where it is unless it is away from home
        return inst.hops(start, inst.home());
    }
    best_tour(inst, start, stops).0
}

fn nearest_assignment(inst: &Instance, starts: &[LocId], targets: &[LocId]) -> Vec<Vec<LocId>> {
    let mut groups = vec![Vec::new(); starts.len()];
    let mut cursors = starts.to_vec();
    let mut loads = vec![0u32; starts.len()];
    let mut remaining = targets.to_vec();
    while !remaining.is_empty() {
        // the least loaded UAV takes its nearest remaining target
        let i = (0..starts.len()).min_by_key(|&i| (loads[i], i)).unwrap();
        let (j, &t) = remaining.iter().enumerate().min_by_key(|(_, &t)| (inst.hops(cursors[i], t), t)).unwrap();
        loads[i] += inst.hops(cursors[i], t);
        cursors[i] = t;
        groups[i].push(t);
        remaining.remove(j);
    }
    groups
}

/// Replaces the owner's future actions given its history and accepted
/// explanation. Other UAVs are assumed to keep following the mission plan
/// (or to stay put once hypothesized aborted).
pub fn replan(
    h: &History,
    mission: &MultiAgentPlan,
    inst: &Instance,
    cfg: &PlannerConfig,
) -> Result<MultiAgentPlan, PlannerError> {
    if h.accepted().is_empty() {
        return Err(PlannerError::Precondition("replan requires an accepted explanation".into()));
    }
    let remaining = unexpected(h, mission, inst)?;
    if !remaining.is_empty() {
        return Err(PlannerError::Precondition(format!(
            "{} observations remain unexplained",
            remaining.len()
        )));
    }
    replan_from_projection(h, mission, inst, cfg)
}

pub(crate) fn replan_from_projection(
    h: &History,
    mission: &MultiAgentPlan,
    inst: &Instance,
    cfg: &PlannerConfig,
) -> Result<MultiAgentPlan, PlannerError> {
    let owner = h.owner();
    let traj = project(h, mission, inst)?;
    let start = traj.last().clone();
    let now = start.step();
    let past: u32 = traj.states[..traj.states.len() - 1].iter().map(|s| s.pending_pictures(inst.base())).sum();
    let limit = now + cfg.horizon_limit;

    // others evolve independently of the owner
    let idx = ExplanationIndex::new(h.accepted());
    let others: Vec<NodeId> = inst.uavs().iter().copied().filter(|&u| u != owner).collect();
    let mut fixed_moves = Vec::new();
    let mut positions: Vec<LocId> = others.iter().map(|&u| start.position(u)).collect();
    let mut assumed = MultiAgentPlan::empty(0);
    for step in now..limit {
        let mut moves = SmallVec::<[(NodeId, LocId); 4]>::new();
        for (i, &u) in others.iter().enumerate() {
            if idx.aborted_by(u, step) {
                continue;
            }
            if let Some(a @ Action::Move { to, .. }) = mission.action_at(u, step) {
                if inst.is_next(positions[i], to) {
                    positions[i] = to;
                    moves.push((u, to));
                    assumed.push(u, step, a);
                }
            } else if let Some(a @ Action::Wait { .. }) = mission.action_at(u, step) {
                assumed.push(u, step, a);
            }
        }
        fixed_moves.push(moves);
    }

    let search = Search {
        inst,
        model: ContactModel::Radio,
        free: vec![owner],
        start_step: now,
        fixed_moves,
        breaks: BTreeMap::new(),
        horizon_limit: limit,
        objective: cfg.objective,
        prune: false,
    };
    let (found, fallback) = match search.run(&start) {
        Some(f) => (f, false),
        None => (search.best_effort(&start), true),
    };
    let mut plan = assumed;
    for (offset, pos) in found.positions.windows(2).enumerate() {
        plan.push(owner, now + offset as u32, step_action(owner, pos[0][0], pos[1][0]));
    }
    plan.assumed = others.iter().fold(NodeSet::EMPTY, |mut s, &u| {
        s.insert(u);
        s
    });
    plan.horizon = found.makespan;
    plan.fallback = fallback;
    plan.predicted_makespan = if fallback { limit + 1 } else { found.makespan };
    plan.predicted_total_staleness = past + found.cost;
    Ok(plan)
}

/// Result of a search: positions of the free UAVs at every step from the
/// start state to the final one.
#[derive(Clone, Debug)]
struct Found {
    makespan: u32,
    cost: u32,
    positions: Vec<SmallVec<[LocId; 4]>>,
}

struct Search<'a> {
    inst: &'a Instance,
    model: ContactModel,
    free: Vec<NodeId>,
    start_step: u32,
    /// Moves of non-free UAVs, indexed by step offset from `start_step`.
    fixed_moves: Vec<SmallVec<[(NodeId, LocId); 4]>>,
    breaks: BTreeMap<u32, NodeSet>,
    horizon_limit: u32,
    objective: ObjectiveKind,
    prune: bool,
}

/// One search layer. Full states are kept only for the frontier; older
/// layers keep what backtracking needs.
struct Layer {
    states: Vec<State>,
    positions: Vec<SmallVec<[LocId; 4]>>,
    costs: Vec<u32>,
    parents: Vec<u32>,
}

type Key = (SmallVec<[LocId; 4]>, SmallVec<[NodeSet; 8]>);

impl Search<'_> {
    /// Admissible lower bound on the steps still needed to reach the goal.
    fn lower_bound(&self, s: &State) -> u32 {
        if goal_holds(s, self.inst) {
            return 0;
        }
        let mut lb = 1;
        for t in self.inst.target_ids() {
            if !s.captured(t) {
                let loc = self.inst.target_location(t);
                let d = self.free.iter().map(|&u| self.inst.hops(s.position(u), loc)).min().unwrap_or(u32::MAX);
                lb = lb.max(d);
            }
        }
        lb
    }

    fn free_positions(&self, s: &State) -> SmallVec<[LocId; 4]> {
        self.free.iter().map(|&u| s.position(u)).collect()
    }

    fn successors(&self, s: &State, mut emit: impl FnMut(State)) {
        let offset = (s.step() - self.start_step) as usize;
        let fixed = self.fixed_moves.get(offset).cloned().unwrap_or_default();
        let breaks = self.breaks.get(&s.step()).copied().unwrap_or_default();
        // waiting first, then neighbors in id order
        let options: Vec<SmallVec<[LocId; 8]>> = self
            .free
            .iter()
            .map(|&u| {
                let here = s.position(u);
                std::iter::once(here).chain(self.inst.neighbors(here).iter().copied()).collect()
            })
            .collect();
        let mut choice = vec![0usize; options.len()];
        loop {
            let mut moves = fixed.clone();
            for (i, &u) in self.free.iter().enumerate() {
                let to = options[i][choice[i]];
                if to != s.position(u) {
                    moves.push((u, to));
                }
            }
            emit(advance(s, &moves, breaks, self.model, self.inst));
            let mut i = 0;
            loop {
                if i == choice.len() {
                    return;
                }
                choice[i] += 1;
                if choice[i] < options[i].len() {
                    break;
                }
                choice[i] = 0;
                i += 1;
            }
        }
    }

    /// Runs the search; `None` when no goal state is reachable in time.
    fn run(&self, start: &State) -> Option<Found> {
        match self.objective {
            ObjectiveKind::Lexicographic if self.prune => {
                let first = start.step() + self.lower_bound(start);
                (first..=self.horizon_limit).find_map(|h| self.layered(start, h, false))
            }
            _ => self.layered(start, self.horizon_limit, false),
        }
    }

    /// Plan maximizing delivered pictures at the horizon when the goal is out
    /// of reach, then minimizing staleness.
    fn best_effort(&self, start: &State) -> Found {
        self.layered(start, self.horizon_limit, true).expect("best effort always yields a plan")
    }

    fn layered(&self, start: &State, horizon: u32, best_effort: bool) -> Option<Found> {
        let base = self.inst.base();
        let mut layers: Vec<Layer> = vec![Layer {
            states: vec![start.clone()],
            positions: vec![self.free_positions(start)],
            costs: vec![start.pending_pictures(base)],
            parents: vec![u32::MAX],
        }];
        let mut best: Option<(u64, usize, usize)> = None;
        loop {
            let depth = layers.len() - 1;
            let cur = &layers[depth];
            let step = start.step() + depth as u32;
            if !best_effort {
                let goal = (0..cur.states.len())
                    .filter(|&i| goal_holds(&cur.states[i], self.inst))
                    .min_by_key(|&i| cur.costs[i]);
                if let Some(i) = goal {
                    match self.objective {
                        ObjectiveKind::Lexicographic => return Some(self.extract(&layers, depth, i)),
                        ObjectiveKind::WeightedSum { makespan_weight, staleness_weight } => {
                            let v = makespan_weight as u64 * step as u64 + staleness_weight as u64 * cur.costs[i] as u64;
                            if best.is_none_or(|(b, _, _)| v < b) {
                                best = Some((v, depth, i));
                            }
                        }
                    }
                }
                if let (Some((b, _, _)), ObjectiveKind::WeightedSum { makespan_weight, .. }) = (best, self.objective) {
                    if makespan_weight as u64 * (step as u64 + 1) >= b {
                        break;
                    }
                }
            }
            if step >= horizon || cur.states.is_empty() {
                break;
            }
            let mut next = Layer { states: Vec::new(), positions: Vec::new(), costs: Vec::new(), parents: Vec::new() };
            let mut index: HashMap<Key, usize> = HashMap::new();
            for (pi, s) in cur.states.iter().enumerate() {
                if !best_effort && goal_holds(s, self.inst) {
                    continue;
                }
                let pc = cur.costs[pi];
                self.successors(s, |n| {
                    if self.prune && n.step() + self.lower_bound(&n) > horizon {
                        return;
                    }
                    let cost = pc + n.pending_pictures(base);
                    let key = (self.free_positions(&n), n.pictures().iter().copied().collect());
                    match index.entry(key) {
                        std::collections::hash_map::Entry::Occupied(e) => {
                            let j = *e.get();
                            if cost < next.costs[j] {
                                next.costs[j] = cost;
                                next.parents[j] = pi as u32;
                            }
                        }
                        std::collections::hash_map::Entry::Vacant(e) => {
                            e.insert(next.states.len());
                            next.positions.push(self.free_positions(&n));
                            next.states.push(n);
                            next.costs.push(cost);
                            next.parents.push(pi as u32);
                        }
                    }
                });
            }
            layers[depth].states = Vec::new();
            layers.push(next);
        }
        let depth = layers.len() - 1;
        if best_effort {
            let last = &layers[depth];
            let i = (0..last.states.len()).min_by_key(|&i| {
                let missing = last.states[i].pictures().iter().filter(|h| !h.contains(base)).count();
                (missing, last.costs[i])
            })?;
            return Some(self.extract(&layers, depth, i));
        }
        best.map(|(_, d, i)| self.extract(&layers, d, i))
    }

    fn extract(&self, layers: &[Layer], depth: usize, mut i: usize) -> Found {
        let cost = layers[depth].costs[i];
        let makespan = self.start_step + depth as u32;
        let mut positions = Vec::with_capacity(depth + 1);
        for d in (0..=depth).rev() {
            positions.push(layers[d].positions[i].clone());
            i = layers[d].parents[i] as usize;
        }
        positions.reverse();
        Found { makespan, cost, positions }
    }
}

/// Checks that a plan's actions are executable along its nominal trajectory
/// and returns the final state.
pub fn simulate_nominal(plan: &MultiAgentPlan, inst: &Instance, steps: u32) -> Result<State, WorldError> {
    let mut s = initial_state(inst);
    for step in 0..steps {
        s = transition(&s, &plan.actions_at(step), &[], inst)?;
    }
    Ok(s)
}
