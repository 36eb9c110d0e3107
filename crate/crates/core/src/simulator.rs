//! Ground-truth lockstep engine.
//!
//! Each step every agent receives its observations of the true state, picks
//! an action, and then the world advances with the step's scheduled faults.
//! A fault scheduled at step `s` is therefore first observable at `s + 1`.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::agent::{AgentConfig, AgentEvent, AgentRuntime};
use crate::belief::Observation;
use crate::planner::{MultiAgentPlan, StalenessTracker};
use crate::world::{
    goal_holds, initial_state, legal, transition, Action, Fluent, Instance, LocId, NodeId, State, TargetId,
};

/// Exogenous events injected by the engine, plus scripted overrides of agent
/// behavior used to exercise diagnosis.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FaultSchedule {
    pub breaks: BTreeSet<(u32, NodeId)>,
    /// From this step on the UAV ignores its agent and stays put.
    pub aborts: BTreeMap<NodeId, u32>,
    /// Forced moves replacing the agent's choice at a step.
    pub forced_moves: BTreeMap<(u32, NodeId), LocId>,
}

impl FaultSchedule {
    pub fn breaks_at(&self, step: u32) -> Vec<Action> {
        self.breaks.range((step, NodeId(0))..=(step, NodeId(u16::MAX))).map(|&(_, node)| Action::Break { node }).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.breaks.is_empty() && self.aborts.is_empty() && self.forced_moves.is_empty()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct SimConfig {
    pub max_steps: u32,
    pub agent: AgentConfig,
}

/// What happened to one UAV's action at one step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionRecord {
    pub uav: NodeId,
    /// What the agent chose (`None` when it believed the goal achieved).
    pub chosen: Option<Action>,
    /// What the world executed.
    pub applied: Option<Action>,
    pub rejected: bool,
    pub overridden: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepRecord {
    pub step: u32,
    pub observations: Vec<(NodeId, Vec<Observation>)>,
    pub actions: Vec<ActionRecord>,
    pub injected: Vec<Action>,
    pub events: Vec<(NodeId, AgentEvent)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetMetric {
    pub target: TargetId,
    pub captured: Option<u32>,
    pub received: Option<u32>,
}

impl TargetMetric {
    pub fn staleness(&self) -> Option<u32> {
        Some(self.received? - self.captured?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Metrics {
    /// First step at which the goal holds; `None` marks an incomplete mission.
    pub mission_length: Option<u32>,
    pub per_target: Vec<TargetMetric>,
    /// Sum of staleness over delivered targets.
    pub total_staleness: u32,
}

impl Metrics {
    pub fn complete(&self) -> bool {
        self.mission_length.is_some()
    }
}

/// Authoritative record of a run. `states[k]` is the true state at step `k`;
/// `steps[k]` holds what happened between `states[k]` and `states[k + 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub states: Vec<State>,
    pub steps: Vec<StepRecord>,
    pub metrics: Metrics,
}

/// Everything `agent` perceives in `state`: its contact with every other node,
/// which nearby locations other UAVs do and do not occupy, its own position and
/// which pictures it holds.
pub fn observe(state: &State, agent: NodeId, inst: &Instance) -> Vec<Observation> {
    let step = state.step();
    let here = state.position(agent);
    let mut out = Vec::new();
    for n in inst.node_ids().filter(|&n| n != agent) {
        let f = Fluent::InContact(agent, n);
        out.push(Observation { step, fluent: f, value: state.holds(&f) });
    }
    let visible: Vec<LocId> =
        (0..inst.locations().len() as u16).map(LocId).filter(|&l| inst.in_range(here, l)).collect();
    for &u in inst.uavs().iter().filter(|&&u| u != agent) {
        for &l in &visible {
            let f = Fluent::At { uav: u, loc: l };
            out.push(Observation { step, fluent: f, value: state.holds(&f) });
        }
    }
    out.push(Observation { step, fluent: Fluent::At { uav: agent, loc: here }, value: true });
    for t in inst.target_ids() {
        let f = Fluent::HasPic { node: agent, target: t };
        out.push(Observation { step, fluent: f, value: state.holds(&f) });
    }
    out
}

/// Runs the mission until the goal holds in the true state or `max_steps`
/// transitions have been taken.
pub fn run(inst: &Instance, plan: &MultiAgentPlan, faults: &FaultSchedule, cfg: &SimConfig) -> Trace {
    let mut agents: Vec<AgentRuntime> =
        inst.uavs().iter().map(|&u| AgentRuntime::new(u, plan.clone(), inst, cfg.agent)).collect();
    let mut state = initial_state(inst);
    let mut states = vec![state.clone()];
    let mut steps = Vec::new();
    while !goal_holds(&state, inst) && state.step() < cfg.max_steps {
        let step = state.step();
        let observations: Vec<(NodeId, Vec<Observation>)> =
            agents.iter().map(|a| (a.id(), observe(&state, a.id(), inst))).collect();
        // agents are isolated; results are merged in agent order
        let outcomes: Vec<_> = agents
            .par_iter_mut()
            .zip(observations.par_iter())
            .map(|(agent, (_, obs))| agent.step(obs, inst))
            .collect();

        let mut actions = Vec::new();
        let mut applied = Vec::new();
        let mut events = Vec::new();
        for (agent, outcome) in agents.iter().zip(outcomes) {
            let uav = agent.id();
            events.extend(outcome.events.into_iter().map(|e| (uav, e)));
            let mut record = ActionRecord { uav, chosen: outcome.action, applied: None, rejected: false, overridden: false };
            let mut act = outcome.action;
            if faults.aborts.get(&uav).is_some_and(|&s| s <= step) {
                act = None;
                record.overridden = true;
            }
            if let Some(&to) = faults.forced_moves.get(&(step, uav)) {
                act = Some(Action::Move { uav, to });
                record.overridden = true;
            }
            match act {
                Some(a) if legal(&state, &a, inst) => {
                    record.applied = Some(a);
                    applied.push(a);
                }
                Some(_) => record.rejected = true,
                None => {}
            }
            actions.push(record);
        }
        let injected = faults.breaks_at(step);
        state = transition(&state, &applied, &injected, inst).expect("engine applies only legal actions");
        states.push(state.clone());
        steps.push(StepRecord { step, observations, actions, injected, events });
    }
    let metrics = metrics_from_states(&states, inst);
    Trace { states, steps, metrics }
}

/// Mission length and staleness recomputed from a state sequence.
pub fn metrics_from_states(states: &[State], inst: &Instance) -> Metrics {
    let mut tracker = StalenessTracker::new(inst);
    let mut mission_length = None;
    for s in states {
        tracker.observe(s, inst);
        if mission_length.is_none() && goal_holds(s, inst) {
            mission_length = Some(s.step());
        }
    }
    let per_target: Vec<TargetMetric> = inst
        .target_ids()
        .map(|t| TargetMetric { target: t, captured: tracker.captured[t.index()], received: tracker.received[t.index()] })
        .collect();
    let total_staleness = per_target.iter().filter_map(TargetMetric::staleness).sum();
    Metrics { mission_length, per_target, total_staleness }
}

/// Mission length and staleness of a complete trace.
pub fn metrics(trace: &Trace) -> &Metrics {
    &trace.metrics
}
