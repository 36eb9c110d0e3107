//! Network-aware coordination of UAV teams.
//!
//! A centralized planner computes a multi-agent mission plan; every UAV then
//! runs its own control loop, monitoring execution against the plan,
//! explaining unexpected observations with minimal sets of exogenous events
//! (relay failures, other UAVs aborting or behaving unpredictably) and
//! replanning its own actions. [`simulator`] provides the ground-truth engine
//! and [`scenario`] the file formats and reports.

pub mod agent;
pub mod belief;
pub mod diagnosis;
mod dsu;
pub mod generate;
pub mod planner;
pub mod scenario;
pub mod simulator;
pub mod world;

pub use agent::{next_action, AgentConfig, AgentEvent, AgentRuntime};
pub use belief::{goal_achieved, project, unexpected, History, Observation, Trajectory};
pub use diagnosis::{enumerate_minimal, explain, DiagnosisError, Explanation};
pub use planner::{evaluate, plan_mission, replan, Mode, MultiAgentPlan, Objective, PlannerConfig, PlannerError};
pub use simulator::{metrics, observe, run, FaultSchedule, Metrics, SimConfig, Trace};
pub use world::{connectivity, dist2, goal_holds, legal, transition, Action, Fluent, Instance, State};
