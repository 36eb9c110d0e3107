use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use uavcoord::agent::AgentConfig;
use uavcoord::diagnosis::explain;
use uavcoord::generate::{random_scenario, GenParams};
use uavcoord::planner::{plan_mission, Mode, PlannerConfig};
use uavcoord::scenario::{
    emit_plan, emit_report, emit_scenario, emit_trace, history_from_trace, parse_history, parse_scenario, parse_trace,
    Scenario,
};
use uavcoord::simulator::{run, SimConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_INCOMPLETE: u8 = 3;

#[derive(Parser)]
#[command(name = "uavcoord", version, about = "Network-aware multi-UAV mission planning and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Planning mode: network_aware, optimistic or naive.
    #[arg(long)]
    mode: Option<String>,
    /// Maximum plan length.
    #[arg(long)]
    horizon: Option<u32>,
    /// Maximum number of events in a diagnosis.
    #[arg(long)]
    max_card: Option<usize>,
    /// Simulation step budget.
    #[arg(long)]
    max_steps: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute and print the mission plan.
    Plan(Common),
    /// Execute the mission plan with the scenario's faults.
    Run {
        #[command(flatten)]
        common: Common,
        /// Write the full trace here instead of stdout.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Diagnose a history, given directly or cut from a trace.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with_all = ["trace", "agent", "step"])]
        history: Option<PathBuf>,
        #[arg(long, requires_all = ["agent", "step"])]
        trace: Option<PathBuf>,
        #[arg(long)]
        agent: Option<String>,
        #[arg(long)]
        step: Option<u32>,
    },
    /// Run every planning mode and report mission length and staleness.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Print a seeded random scenario.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        locations: usize,
        #[arg(long, default_value_t = 2)]
        uavs: usize,
        #[arg(long, default_value_t = 2)]
        targets: usize,
        #[arg(long, default_value_t = 3)]
        relays: usize,
    },
}

enum Failure {
    Usage(String),
    Input(String),
    Incomplete,
}

struct Setup {
    sc: Scenario,
    mode: Mode,
    agent: AgentConfig,
    max_steps: u32,
}

fn setup(c: &Common) -> Result<Setup, Failure> {
    let text = fs::read_to_string(&c.scenario)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", c.scenario.display())))?;
    let sc = parse_scenario(&text).map_err(|e| Failure::Input(format!("{}: {e}", c.scenario.display())))?;
    let mode = match &c.mode {
        Some(m) => Mode::parse(m).ok_or_else(|| Failure::Usage(format!("unknown mode `{m}`")))?,
        None => sc.config.mode,
    };
    let agent = AgentConfig {
        horizon_limit: c.horizon.unwrap_or(sc.config.horizon_limit),
        max_card: c.max_card.unwrap_or_else(|| sc.config.max_card_for(&sc.instance)),
        objective: sc.config.objective,
    };
    let max_steps = c.max_steps.unwrap_or(sc.config.max_steps);
    Ok(Setup { sc, mode, agent, max_steps })
}

impl Setup {
    fn plan(&self, mode: Mode) -> Result<uavcoord::MultiAgentPlan, Failure> {
        let cfg = PlannerConfig { mode, horizon_limit: self.agent.horizon_limit, objective: self.agent.objective };
        plan_mission(&self.sc.instance, &cfg)
            .map_err(|e| Failure::Input(format!("planning failed: {e}")))
    }

    fn sim(&self) -> SimConfig {
        SimConfig { max_steps: self.max_steps, agent: self.agent }
    }
}

fn write_out(path: Option<&PathBuf>, text: &[u8]) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Input(format!("cannot write {}: {e}", p.display()))),
        None => io::stdout().write_all(text).map_err(|e| Failure::Input(e.to_string())),
    }
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Plan(c) => {
            let s = setup(&c)?;
            print!("{}", emit_plan(&s.plan(s.mode)?, &s.sc.instance));
            Ok(())
        }
        Command::Run { common, trace_out } => {
            let s = setup(&common)?;
            let plan = s.plan(s.mode)?;
            let trace = run(&s.sc.instance, &plan, &s.sc.faults, &s.sim());
            let mut buf = Vec::new();
            emit_trace(&trace, &s.sc.instance, &mut buf).map_err(|e| Failure::Input(e.to_string()))?;
            write_out(trace_out.as_ref(), &buf)?;
            if trace_out.is_some() {
                let m = &trace.metrics;
                match m.mission_length {
                    Some(l) => println!("mission_length={l} total_staleness={}", m.total_staleness),
                    None => println!("mission incomplete after {} steps", trace.steps.len()),
                }
            }
            if trace.metrics.complete() {
                Ok(())
            } else {
                Err(Failure::Incomplete)
            }
        }
        Command::Explain { common, history, trace, agent, step } => {
            let s = setup(&common)?;
            let inst = &s.sc.instance;
            let h = match (history, trace) {
                (Some(p), None) => {
                    let text = fs::read_to_string(&p).map_err(|e| Failure::Input(format!("cannot read {}: {e}", p.display())))?;
                    parse_history(&text, inst).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?
                }
                (None, Some(p)) => {
                    let text = fs::read_to_string(&p).map_err(|e| Failure::Input(format!("cannot read {}: {e}", p.display())))?;
                    let rec = parse_trace(&text, inst).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?;
                    let name = agent.expect("clap enforces --agent");
                    let u = inst
                        .node_by_name(&name)
                        .filter(|&u| inst.is_uav(u))
                        .ok_or_else(|| Failure::Usage(format!("`{name}` is not a UAV of the scenario")))?;
                    history_from_trace(&rec, u, step.expect("clap enforces --step"), inst)
                        .map_err(|e| Failure::Input(e.to_string()))?
                }
                _ => return Err(Failure::Usage("explain needs --history, or --trace with --agent and --step".into())),
            };
            let plan = s.plan(s.mode)?;
            match explain(&h, &plan, inst, s.agent.max_card) {
                Ok(e) => {
                    let body = e.describe(inst);
                    println!("card={} {}", e.cardinality(), if body.is_empty() { "-" } else { &body });
                    Ok(())
                }
                Err(e) => {
                    println!("{e}");
                    Ok(())
                }
            }
        }
        Command::Compare { common, trace_out } => {
            let s = setup(&common)?;
            let mut rows = Vec::new();
            let mut traces = Vec::new();
            for mode in Mode::ALL {
                let plan = s.plan(mode)?;
                let trace = run(&s.sc.instance, &plan, &s.sc.faults, &s.sim());
                rows.push((mode, trace.metrics.clone()));
                traces.push((mode, trace));
            }
            if let Some(p) = trace_out {
                let mut buf = Vec::new();
                for (mode, t) in &traces {
                    writeln!(buf, "# mode {mode}").ok();
                    emit_trace(t, &s.sc.instance, &mut buf).map_err(|e| Failure::Input(e.to_string()))?;
                }
                write_out(Some(&p), &buf)?;
            }
            let mut buf = Vec::new();
            emit_report(&rows, &mut buf).map_err(|e| Failure::Input(e.to_string()))?;
            write_out(None, &buf)
        }
        Command::Gen { seed, locations, uavs, targets, relays } => {
            if locations < 1 + targets + relays {
                return Err(Failure::Usage("--locations must exceed --targets plus --relays".into()));
            }
            let p = GenParams { locations, uavs, targets, relays, ..GenParams::default() };
            print!("{}", emit_scenario(&random_scenario(seed, &p)));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(Failure::Incomplete) => {
            eprintln!("mission incomplete");
            ExitCode::from(EXIT_INCOMPLETE)
        }
    }
}
