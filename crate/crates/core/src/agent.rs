//! Per-UAV control loop: observe, check the goal, detect anomalies, explain,
//! replan, then execute the next action of the current plan.

use crate::belief::{goal_achieved, unexpected, History, Observation};
use crate::diagnosis::{explain, Explanation};
use crate::planner::{replan, MultiAgentPlan, ObjectiveKind, PlannerConfig, Mode};
use crate::world::{Action, Instance, NodeId};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct AgentConfig {
    pub horizon_limit: u32,
    pub max_card: usize,
    pub objective: ObjectiveKind,
}

/// Something an agent did or concluded during one loop iteration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AgentEvent {
    /// The agent believes the goal has been achieved and stops acting.
    GoalBelieved,
    /// Reality check failed on this many observations.
    Anomaly { violations: usize },
    Diagnosis(Explanation),
    NoDiagnosis { reason: String },
    /// Incoming observations contradicted the history and were dropped.
    ObservationRejected { reason: String },
    Replan { makespan: u32, staleness: u32, fallback: bool },
    PlanFailure { reason: String },
}

#[derive(Clone, Debug)]
pub struct AgentRuntime {
    id: NodeId,
    history: History,
    mission: MultiAgentPlan,
    current_plan: MultiAgentPlan,
    config: AgentConfig,
}

/// What one iteration of the loop produced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepOutcome {
    pub action: Option<Action>,
    pub events: Vec<AgentEvent>,
}

impl AgentRuntime {
    pub fn new(id: NodeId, mission: MultiAgentPlan, inst: &Instance, config: AgentConfig) -> Self {
        Self { id, history: History::new(id, inst), current_plan: mission.clone(), mission, config }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn current_plan(&self) -> &MultiAgentPlan {
        &self.current_plan
    }

    pub fn mission(&self) -> &MultiAgentPlan {
        &self.mission
    }

    /// One pass of the loop body for the current step. `incoming` must be
    /// this agent's own observations for the step.
    pub fn step(&mut self, incoming: &[Observation], inst: &Instance) -> StepOutcome {
        let mut events = Vec::new();
        if let Err(e) = self.history.observe_all(incoming, inst) {
            events.push(AgentEvent::ObservationRejected { reason: e.to_string() });
        }
        let step = self.history.current_step();

        if goal_achieved(&self.history, inst, &self.mission).unwrap_or(false) {
            events.push(AgentEvent::GoalBelieved);
            return StepOutcome { action: None, events };
        }

        let mut diagnosed = true;
        let anomalies = unexpected(&self.history, &self.mission, inst).map(|v| v.len()).unwrap_or(0);
        if anomalies > 0 {
            events.push(AgentEvent::Anomaly { violations: anomalies });
            match explain(&self.history, &self.mission, inst, self.config.max_card) {
                Ok(e) => {
                    events.push(AgentEvent::Diagnosis(e.clone()));
                    self.history.accept(e);
                    let cfg = PlannerConfig {
                        mode: Mode::NetworkAware,
                        horizon_limit: self.config.horizon_limit,
                        objective: self.config.objective,
                    };
                    match replan(&self.history, &self.mission, inst, &cfg) {
                        Ok(p) => {
                            events.push(AgentEvent::Replan {
                                makespan: p.predicted_makespan,
                                staleness: p.predicted_total_staleness,
                                fallback: p.fallback,
                            });
                            self.current_plan = p;
                        }
                        Err(e) => events.push(AgentEvent::PlanFailure { reason: e.to_string() }),
                    }
                }
                Err(e) => {
                    diagnosed = false;
                    events.push(AgentEvent::NoDiagnosis { reason: e.to_string() });
                }
            }
        }

        let action = if diagnosed { next_action(&self.current_plan, self.id, step) } else { Action::Wait { uav: self.id } };
        self.current_plan = self.current_plan.tail(step + 1);
        // an own action is always recordable at the current step
        self.history.record(action, step, inst).expect("own agent action");
        StepOutcome { action: Some(action), events }
    }
}

/// The UAV's action stamped at `step`, or `wait` when there is none.
pub fn next_action(plan: &MultiAgentPlan, uav: NodeId, step: u32) -> Action {
    match plan.action_at(uav, step) {
        Some(a) if a.subject() == uav && a.is_agent_action() => a,
        _ => Action::Wait { uav },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::tests::line_instance;
    use crate::world::LocId;

    #[test]
    fn next_action_examples() {
        let u = NodeId(3);
        let mut plan = MultiAgentPlan::empty(2);
        plan.push(u, 0, Action::Move { uav: u, to: LocId(1) });
        plan.push(u, 1, Action::Wait { uav: u });
        assert_eq!(next_action(&plan, u, 0), Action::Move { uav: u, to: LocId(1) });
        assert_eq!(next_action(&MultiAgentPlan::empty(0), u, 0), Action::Wait { uav: u });
        let mut sparse = MultiAgentPlan::empty(4);
        sparse.push(u, 3, Action::Move { uav: u, to: LocId(1) });
        assert_eq!(next_action(&sparse, u, 2), Action::Wait { uav: u });
    }

    #[test]
    fn nominal_step_records_action() {
        let inst = line_instance();
        let u = NodeId(3);
        let mut plan = MultiAgentPlan::empty(3);
        plan.push(u, 0, Action::Move { uav: u, to: LocId(1) });
        let cfg = AgentConfig { horizon_limit: 8, max_card: 3, objective: ObjectiveKind::Lexicographic };
        let mut rt = AgentRuntime::new(u, plan, &inst, cfg);
        let out = rt.step(&[], &inst);
        assert_eq!(out.action, Some(Action::Move { uav: u, to: LocId(1) }));
        assert!(out.events.is_empty());
        assert_eq!(rt.history().own_actions().collect::<Vec<_>>(), vec![(0, Action::Move { uav: u, to: LocId(1) })]);
        assert!(rt.current_plan().is_empty_for(u));
    }
}
