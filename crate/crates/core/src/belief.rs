//! One agent's private history and the trajectory it expects.
//!
//! Projection replays the owner's own recorded actions, assumes every other
//! UAV follows the mission plan unless the accepted explanation says it
//! aborted, and applies the hypothesized exogenous events of that
//! explanation. Observations that disagree with the projection are the
//! reality-check violations.

use std::collections::{BTreeMap, HashMap};

use smallvec::SmallVec;
use thiserror::Error;

use crate::diagnosis::Explanation;
use crate::planner::MultiAgentPlan;
use crate::world::{advance, goal_holds, legal, Action, ContactModel, Fluent, Instance, LocId, NodeId, NodeSet, State};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Observation {
    pub step: u32,
    pub fluent: Fluent,
    pub value: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BeliefError {
    #[error("step-0 observations do not fix a unique location for `{0}`")]
    InitialStateUnderdetermined(String),
    #[error("conflicting observations of {fluent} at step {step}")]
    ConflictingObservation { fluent: String, step: u32 },
    #[error("history of `{owner}` cannot record {action}: not an own agent action")]
    ForeignAction { owner: String, action: String },
    #[error("step {step} is in the future of the history (current step {current})")]
    FutureStep { step: u32, current: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct History {
    owner: NodeId,
    current_step: u32,
    observations: BTreeMap<(u32, Fluent), bool>,
    own_actions: BTreeMap<u32, Action>,
    accepted: Explanation,
}

impl History {
    /// A history seeded with the known initial location of every UAV.
    pub fn new(owner: NodeId, inst: &Instance) -> Self {
        let mut h = Self::empty(owner);
        for &u in inst.uavs() {
            h.observations.insert((0, Fluent::At { uav: u, loc: inst.node(u).location }), true);
        }
        h
    }

    /// A history with no observations at all.
    pub fn empty(owner: NodeId) -> Self {
        Self {
            owner,
            current_step: 0,
            observations: BTreeMap::new(),
            own_actions: BTreeMap::new(),
            accepted: Explanation::default(),
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn current_step(&self) -> u32 {
        self.current_step
    }

    pub fn set_current_step(&mut self, step: u32) {
        self.current_step = self.current_step.max(step);
    }

    pub fn accepted(&self) -> &Explanation {
        &self.accepted
    }

    pub fn accept(&mut self, e: Explanation) {
        self.accepted = e;
    }

    /// Adds an observation; advances the current step to the observation's.
    pub fn observe(&mut self, obs: Observation, inst: &Instance) -> Result<(), BeliefError> {
        match self.observations.get(&(obs.step, obs.fluent)) {
            Some(&v) if v != obs.value => Err(BeliefError::ConflictingObservation {
                fluent: inst.fmt_fluent(&obs.fluent),
                step: obs.step,
            }),
            _ => {
                self.observations.insert((obs.step, obs.fluent), obs.value);
                self.set_current_step(obs.step);
                Ok(())
            }
        }
    }

    pub fn observe_all(&mut self, obs: &[Observation], inst: &Instance) -> Result<(), BeliefError> {
        obs.iter().try_for_each(|o| self.observe(*o, inst))
    }

    /// Records one of the owner's own executed actions.
    pub fn record(&mut self, action: Action, step: u32, inst: &Instance) -> Result<(), BeliefError> {
        if !action.is_agent_action() || action.subject() != self.owner {
            return Err(BeliefError::ForeignAction {
                owner: inst.node_name(self.owner).to_string(),
                action: inst.fmt_action(&action),
            });
        }
        if step > self.current_step {
            return Err(BeliefError::FutureStep { step, current: self.current_step });
        }
        self.own_actions.insert(step, action);
        Ok(())
    }

    pub fn observations(&self) -> impl Iterator<Item = Observation> + '_ {
        self.observations.iter().map(|(&(step, fluent), &value)| Observation { step, fluent, value })
    }

    pub fn own_actions(&self) -> impl Iterator<Item = (u32, Action)> + '_ {
        self.own_actions.iter().map(|(&s, &a)| (s, a))
    }

    pub fn own_action_at(&self, step: u32) -> Option<Action> {
        self.own_actions.get(&step).copied()
    }

    /// Observations grouped by step, for steps `0..=current_step`.
    pub fn observations_by_step(&self) -> Vec<Vec<(Fluent, bool)>> {
        let mut out = vec![Vec::new(); self.current_step as usize + 1];
        for (&(s, f), &v) in &self.observations {
            if s <= self.current_step {
                out[s as usize].push((f, v));
            }
        }
        out
    }

    /// The history truncated to `step`: later observations and actions are
    /// dropped and the accepted explanation is cleared.
    pub fn truncated(&self, step: u32) -> History {
        History {
            owner: self.owner,
            current_step: step.min(self.current_step),
            observations: self.observations.iter().filter(|((s, _), _)| *s <= step).map(|(k, v)| (*k, *v)).collect(),
            own_actions: self.own_actions.iter().filter(|(s, _)| **s < step).map(|(k, v)| (*k, *v)).collect(),
            accepted: Explanation::default(),
        }
    }
}

/// Expected states for steps `0..=current_step`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<State>,
}

impl Trajectory {
    pub fn last(&self) -> &State {
        self.states.last().expect("trajectory has an initial state")
    }
}

/// The initial state fixed by step-0 `at` observations.
pub fn initial_belief(h: &History, inst: &Instance) -> Result<State, BeliefError> {
    let mut positions = inst.initial_positions();
    for &u in inst.uavs() {
        let mut found = None;
        let mut ambiguous = false;
        for (&(_, f), &v) in h.observations.range((0, Fluent::At { uav: u, loc: LocId(0) })..=(0, Fluent::At { uav: u, loc: LocId(u16::MAX) })) {
            match f {
                Fluent::At { uav, loc } if uav == u => {
                    if v {
                        ambiguous |= found.replace(loc).is_some();
                    }
                }
                _ => break,
            }
        }
        match found {
            Some(l) if !ambiguous => positions[u.index()] = l,
            _ => return Err(BeliefError::InitialStateUnderdetermined(inst.node_name(u).to_string())),
        }
    }
    Ok(State::from_parts(
        0,
        positions,
        NodeSet::EMPTY,
        SmallVec::from_elem(NodeSet::EMPTY, inst.targets().len()),
        inst,
    ))
}

/// Index of an explanation by UAV and step, for fast projection.
pub(crate) struct ExplanationIndex {
    pub abort_step: HashMap<NodeId, u32>,
    pub unpredictable_step: HashMap<NodeId, u32>,
    pub moves: HashMap<(NodeId, u32), LocId>,
    pub breaks: BTreeMap<u32, NodeSet>,
}

impl ExplanationIndex {
    pub fn new(e: &Explanation) -> Self {
        let mut abort_step = HashMap::new();
        for &(u, s) in &e.aborts {
            let v = abort_step.entry(u).or_insert(s);
            *v = (*v).min(s);
        }
        let mut unpredictable_step = HashMap::new();
        for &(u, s) in &e.unpredictables {
            let v = unpredictable_step.entry(u).or_insert(s);
            *v = (*v).min(s);
        }
        let moves = e.moves.iter().map(|m| ((m.uav, m.step), m.to)).collect();
        let mut breaks: BTreeMap<u32, NodeSet> = BTreeMap::new();
        for &(n, s) in &e.breaks {
            breaks.entry(s).or_default().insert(n);
        }
        Self { abort_step, unpredictable_step, moves, breaks }
    }

    pub fn aborted_by(&self, u: NodeId, step: u32) -> bool {
        self.abort_step.get(&u).is_some_and(|&s| s <= step)
    }

    pub fn unpredictable_by(&self, u: NodeId, step: u32) -> bool {
        self.unpredictable_step.get(&u).is_some_and(|&s| s <= step)
    }
}

/// Moves the owner and the other UAVs are expected to perform at `state.step()`.
pub(crate) fn expected_moves(
    state: &State,
    owner: NodeId,
    own: Option<Action>,
    plan: &MultiAgentPlan,
    idx: &ExplanationIndex,
    inst: &Instance,
) -> SmallVec<[(NodeId, LocId); 4]> {
    let step = state.step();
    let mut moves = SmallVec::new();
    for &u in inst.uavs() {
        let action = if u == owner {
            own
        } else if idx.aborted_by(u, step) {
            if idx.unpredictable_by(u, step) {
                idx.moves.get(&(u, step)).map(|&to| Action::Move { uav: u, to })
            } else {
                None
            }
        } else {
            plan.action_at(u, step)
        };
        if let Some(a @ Action::Move { uav, to }) = action {
            if uav == u && legal(state, &a, inst) {
                moves.push((u, to));
            }
        }
    }
    moves
}

/// Expected trajectory under the history's accepted explanation.
pub fn project(h: &History, plan: &MultiAgentPlan, inst: &Instance) -> Result<Trajectory, BeliefError> {
    project_with(h, plan, inst, &h.accepted)
}

/// Expected trajectory under an arbitrary explanation.
pub fn project_with(
    h: &History,
    plan: &MultiAgentPlan,
    inst: &Instance,
    e: &Explanation,
) -> Result<Trajectory, BeliefError> {
    let idx = ExplanationIndex::new(e);
    let mut states = Vec::with_capacity(h.current_step as usize + 1);
    states.push(initial_belief(h, inst)?);
    for step in 0..h.current_step {
        let cur = states.last().unwrap();
        let moves = expected_moves(cur, h.owner, h.own_action_at(step), plan, &idx, inst);
        let breaks = idx.breaks.get(&step).copied().unwrap_or_default();
        let next = advance(cur, &moves, breaks, ContactModel::Radio, inst);
        states.push(next);
    }
    Ok(Trajectory { states })
}

/// Observations contradicted by the trajectory.
pub fn violations(h: &History, traj: &Trajectory) -> Vec<Observation> {
    h.observations()
        .filter(|o| o.step <= h.current_step && traj.states[o.step as usize].holds(&o.fluent) != o.value)
        .collect()
}

/// Reality check: every observation that contradicts the projection.
pub fn unexpected(h: &History, plan: &MultiAgentPlan, inst: &Instance) -> Result<Vec<Observation>, BeliefError> {
    let traj = project(h, plan, inst)?;
    Ok(violations(h, &traj))
}

/// Belief-level goal test on the last projected state. A history that
/// contradicts its own projection supports no conclusion about the goal.
pub fn goal_achieved(h: &History, inst: &Instance, plan: &MultiAgentPlan) -> Result<bool, BeliefError> {
    let traj = project(h, plan, inst)?;
    Ok(goal_holds(traj.last(), inst) && violations(h, &traj).is_empty())
}
