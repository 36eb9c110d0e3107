//! Text formats: scenario files, traces, comparison reports, histories and
//! mission plans. Every format is line-oriented with `#` comments.
//!
//! Scenario grammar, one record per line:
//!
//! ```text
//! grid <w> <h>
//! range <rho>
//! loc <id> <x> <y> <home_base|waypoint|target|relay_site>
//! edge <a> <b>                 # undirected
//! next <a> <b>                 # directed; every pair must appear both ways
//! node <id> <uav|relay|base> <loc>
//! fault break <node> <step>
//! fault abort <uav> <step>
//! fault move <uav> <step> <loc>
//! config <mode|horizon_limit|max_card|max_steps> <value>
//! config objective <lexicographic | weighted_sum <makespan_w> <staleness_w>>
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{self, Write};

use thiserror::Error;

use crate::agent::AgentEvent;
use crate::belief::{History, Observation};
use crate::diagnosis::default_max_card;
use crate::planner::{Mode, MultiAgentPlan, ObjectiveKind};
use crate::simulator::{metrics_from_states, FaultSchedule, Metrics, Trace};
use crate::world::{
    initial_state, transition, Action, Fluent, Instance, LocId, Location, LocationKind, NodeId, NodeKind, NodeSet,
    RadioNode, State,
};

pub const DEFAULT_HORIZON_LIMIT: u32 = 30;
pub const DEFAULT_MAX_STEPS: u32 = 60;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub horizon_limit: u32,
    /// `None` selects the default bound for the instance.
    pub max_card: Option<usize>,
    pub max_steps: u32,
    pub objective: ObjectiveKind,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            mode: Mode::NetworkAware,
            horizon_limit: DEFAULT_HORIZON_LIMIT,
            max_card: None,
            max_steps: DEFAULT_MAX_STEPS,
            objective: ObjectiveKind::Lexicographic,
        }
    }
}

impl ScenarioConfig {
    pub fn max_card_for(&self, inst: &Instance) -> usize {
        self.max_card.unwrap_or_else(|| default_max_card(inst))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub grid: (i64, i64),
    pub instance: Instance,
    pub faults: FaultSchedule,
    pub config: ScenarioConfig,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    Semantic { line: usize, msg: String },
    #[error("invalid instance: {0}")]
    Instance(String),
}

fn syntax(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Syntax { line, msg: msg.into() }
}

fn semantic(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Semantic { line, msg: msg.into() }
}

/// Non-empty lines with comments stripped, numbered from 1.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let body = raw.split('#').next().unwrap_or("");
        let toks: Vec<&str> = body.split_whitespace().collect();
        (!toks.is_empty()).then_some((i + 1, toks))
    })
}

fn num<T: std::str::FromStr>(line: usize, what: &str, tok: &str) -> Result<T, FormatError> {
    tok.parse().map_err(|_| syntax(line, format!("bad {what} `{tok}`")))
}

fn arity(line: usize, toks: &[&str], n: usize, usage: &str) -> Result<(), FormatError> {
    if toks.len() != n {
        return Err(syntax(line, format!("expected `{usage}`")));
    }
    Ok(())
}

enum FaultRecord {
    Break(String, u32),
    Abort(String, u32),
    Move(String, u32, String),
}

pub fn parse_scenario(text: &str) -> Result<Scenario, FormatError> {
    let mut grid = None;
    let mut range = None;
    let mut locs: Vec<(usize, Location)> = Vec::new();
    let mut edges: Vec<(usize, String, String)> = Vec::new();
    let mut directed: Vec<(usize, String, String)> = Vec::new();
    let mut nodes: Vec<(usize, String, NodeKind, String)> = Vec::new();
    let mut faults: Vec<(usize, FaultRecord)> = Vec::new();
    let mut config = ScenarioConfig::default();

    for (line, toks) in records(text) {
        match toks[0] {
            "grid" => {
                arity(line, &toks, 3, "grid <w> <h>")?;
                let (w, h): (i64, i64) = (num(line, "width", toks[1])?, num(line, "height", toks[2])?);
                if w <= 0 || h <= 0 {
                    return Err(semantic(line, "grid dimensions must be positive"));
                }
                grid = Some((w, h));
            }
            "range" => {
                arity(line, &toks, 2, "range <rho>")?;
                range = Some(num::<i64>(line, "range", toks[1])?);
            }
            "loc" => {
                arity(line, &toks, 5, "loc <id> <x> <y> <kind>")?;
                let kind = LocationKind::parse(toks[4])
                    .ok_or_else(|| syntax(line, format!("unknown location kind `{}`", toks[4])))?;
                locs.push((
                    line,
                    Location { id: toks[1].to_string(), x: num(line, "x", toks[2])?, y: num(line, "y", toks[3])?, kind },
                ));
            }
            "edge" => {
                arity(line, &toks, 3, "edge <a> <b>")?;
                edges.push((line, toks[1].to_string(), toks[2].to_string()));
            }
            "next" => {
                arity(line, &toks, 3, "next <a> <b>")?;
                directed.push((line, toks[1].to_string(), toks[2].to_string()));
            }
            "node" => {
                arity(line, &toks, 4, "node <id> <kind> <loc>")?;
                let kind =
                    NodeKind::parse(toks[2]).ok_or_else(|| syntax(line, format!("unknown node kind `{}`", toks[2])))?;
                nodes.push((line, toks[1].to_string(), kind, toks[3].to_string()));
            }
            "fault" => {
                let rec = match toks.get(1).copied() {
                    Some("break") => {
                        arity(line, &toks, 4, "fault break <node> <step>")?;
                        FaultRecord::Break(toks[2].to_string(), num(line, "step", toks[3])?)
                    }
                    Some("abort") => {
                        arity(line, &toks, 4, "fault abort <uav> <step>")?;
                        FaultRecord::Abort(toks[2].to_string(), num(line, "step", toks[3])?)
                    }
                    Some("move") => {
                        arity(line, &toks, 5, "fault move <uav> <step> <loc>")?;
                        FaultRecord::Move(toks[2].to_string(), num(line, "step", toks[3])?, toks[4].to_string())
                    }
                    other => return Err(syntax(line, format!("unknown fault kind `{}`", other.unwrap_or("")))),
                };
                faults.push((line, rec));
            }
            "config" if toks.get(1) == Some(&"objective") => {
                config.objective = match &toks[2..] {
                    ["lexicographic"] => ObjectiveKind::Lexicographic,
                    ["weighted_sum", m, st] => ObjectiveKind::WeightedSum {
                        makespan_weight: num(line, "weight", m)?,
                        staleness_weight: num(line, "weight", st)?,
                    },
                    _ => return Err(syntax(line, "expected `config objective lexicographic|weighted_sum <m> <s>`")),
                };
            }
            "config" => {
                arity(line, &toks, 3, "config <key> <value>")?;
                match toks[1] {
                    "mode" => {
                        config.mode =
                            Mode::parse(toks[2]).ok_or_else(|| syntax(line, format!("unknown mode `{}`", toks[2])))?
                    }
                    "horizon_limit" => config.horizon_limit = num(line, "horizon_limit", toks[2])?,
                    "max_card" => config.max_card = Some(num(line, "max_card", toks[2])?),
                    "max_steps" => config.max_steps = num(line, "max_steps", toks[2])?,
                    k => return Err(syntax(line, format!("unknown config key `{k}`"))),
                }
            }
            k => return Err(syntax(line, format!("unknown record `{k}`"))),
        }
    }

    let grid = grid.ok_or_else(|| semantic(0, "missing `grid` record"))?;
    let range = range.ok_or_else(|| semantic(0, "missing `range` record"))?;
    let mut loc_ids: HashMap<String, LocId> = HashMap::new();
    for (i, (line, l)) in locs.iter().enumerate() {
        if l.x < 0 || l.y < 0 || l.x >= grid.0 || l.y >= grid.1 {
            return Err(semantic(*line, format!("location `{}` lies outside the grid", l.id)));
        }
        if loc_ids.insert(l.id.clone(), LocId(i as u16)).is_some() {
            return Err(semantic(*line, format!("duplicate location `{}`", l.id)));
        }
    }
    let loc = |line: usize, name: &str| {
        loc_ids.get(name).copied().ok_or_else(|| semantic(line, format!("undefined location `{name}`")))
    };

    let mut pairs: Vec<(LocId, LocId)> = Vec::new();
    for (line, a, b) in &edges {
        pairs.push((loc(*line, a)?, loc(*line, b)?));
    }
    let mut arcs: BTreeMap<(LocId, LocId), usize> = BTreeMap::new();
    for (line, a, b) in &directed {
        arcs.insert((loc(*line, a)?, loc(*line, b)?), *line);
    }
    for (&(a, b), &line) in &arcs {
        if !arcs.contains_key(&(b, a)) {
            return Err(semantic(line, "asymmetric adjacency: reverse `next` record missing"));
        }
        if a < b {
            pairs.push((a, b));
        }
    }
    for (line, a, b) in edges.iter().chain(directed.iter()) {
        if a == b {
            return Err(semantic(*line, format!("self-loop on `{a}`")));
        }
    }

    let mut node_ids: HashMap<String, NodeId> = HashMap::new();
    let mut radio = Vec::new();
    for (i, (line, id, kind, at)) in nodes.iter().enumerate() {
        if node_ids.insert(id.clone(), NodeId(i as u16)).is_some() {
            return Err(semantic(*line, format!("duplicate node `{id}`")));
        }
        radio.push(RadioNode { id: id.clone(), kind: *kind, location: loc(*line, at)? });
    }
    let instance = Instance::new(locs.into_iter().map(|(_, l)| l).collect(), &pairs, radio, range)
        .map_err(|e| FormatError::Instance(e.to_string()))?;

    let mut schedule = FaultSchedule::default();
    for (line, rec) in faults {
        let node = |name: &str| {
            instance.node_by_name(name).ok_or_else(|| semantic(line, format!("undefined node `{name}`")))
        };
        let uav = |name: &str| {
            let n = node(name)?;
            if instance.is_uav(n) {
                Ok(n)
            } else {
                Err(semantic(line, format!("`{name}` is not a UAV")))
            }
        };
        let step_ok = |s: u32| if s >= 1 { Ok(s) } else { Err(semantic(line, "fault steps start at 1")) };
        match rec {
            FaultRecord::Break(n, s) => {
                schedule.breaks.insert((step_ok(s)?, node(&n)?));
            }
            FaultRecord::Abort(u, s) => {
                schedule.aborts.insert(uav(&u)?, step_ok(s)?);
            }
            FaultRecord::Move(u, s, to) => {
                let to = instance.loc_by_name(&to).ok_or_else(|| semantic(line, format!("undefined location `{to}`")))?;
                schedule.forced_moves.insert((step_ok(s)?, uav(&u)?), to);
            }
        }
    }
    Ok(Scenario { grid, instance, faults: schedule, config })
}

/// Canonical text of a scenario; `parse_scenario` reads it back unchanged.
pub fn emit_scenario(sc: &Scenario) -> String {
    let inst = &sc.instance;
    let mut out = String::new();
    let _ = writeln!(out, "grid {} {}", sc.grid.0, sc.grid.1);
    let _ = writeln!(out, "range {}", inst.radio_range());
    for l in inst.locations() {
        let _ = writeln!(out, "loc {} {} {} {}", l.id, l.x, l.y, l.kind.as_str());
    }
    for (a, b) in inst.edges() {
        let _ = writeln!(out, "edge {} {}", inst.loc_name(a), inst.loc_name(b));
    }
    for n in inst.nodes() {
        let _ = writeln!(out, "node {} {} {}", n.id, n.kind.as_str(), inst.loc_name(n.location));
    }
    for &(s, n) in &sc.faults.breaks {
        let _ = writeln!(out, "fault break {} {s}", inst.node_name(n));
    }
    for (&u, &s) in &sc.faults.aborts {
        let _ = writeln!(out, "fault abort {} {s}", inst.node_name(u));
    }
    for (&(s, u), &to) in &sc.faults.forced_moves {
        let _ = writeln!(out, "fault move {} {s} {}", inst.node_name(u), inst.loc_name(to));
    }
    let c = &sc.config;
    let _ = writeln!(out, "config mode {}", c.mode);
    let _ = writeln!(out, "config horizon_limit {}", c.horizon_limit);
    if let Some(k) = c.max_card {
        let _ = writeln!(out, "config max_card {k}");
    }
    let _ = writeln!(out, "config max_steps {}", c.max_steps);
    if let ObjectiveKind::WeightedSum { makespan_weight, staleness_weight } = c.objective {
        let _ = writeln!(out, "config objective weighted_sum {makespan_weight} {staleness_weight}");
    }
    out
}

/// Splits `name(a,b)` into its functor and arguments.
fn term(s: &str) -> Option<(&str, Vec<&str>)> {
    let open = s.find('(')?;
    let args = s[open + 1..].strip_suffix(')')?;
    Some((&s[..open], args.split(',').collect()))
}

pub fn parse_action(s: &str, inst: &Instance) -> Option<Action> {
    let (f, args) = term(s)?;
    let node = |i: usize| args.get(i).and_then(|a| inst.node_by_name(a));
    let a = match (f, args.len()) {
        ("move", 2) => Action::Move { uav: node(0)?, to: inst.loc_by_name(args[1])? },
        ("wait", 1) => Action::Wait { uav: node(0)? },
        ("break", 1) => Action::Break { node: node(0)? },
        ("aborted", 1) => Action::Aborted { uav: node(0)? },
        ("unpredictable", 1) => Action::Unpredictable { uav: node(0)? },
        _ => return None,
    };
    Some(a)
}

pub fn parse_fluent(s: &str, inst: &Instance) -> Option<Fluent> {
    let (f, args) = term(s)?;
    let node = |i: usize| args.get(i).and_then(|a| inst.node_by_name(a));
    let fl = match (f, args.len()) {
        ("at", 2) => Fluent::At { uav: node(0)?, loc: inst.loc_by_name(args[1])? },
        ("down", 1) => Fluent::Down(node(0)?),
        ("in_contact", 2) => Fluent::InContact(node(0)?, node(1)?),
        ("has_pic", 2) => Fluent::HasPic { node: node(0)?, target: inst.target_by_name(args[1])? },
        _ => return None,
    };
    Some(fl)
}

fn parse_bool(line: usize, s: &str) -> Result<bool, FormatError> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(syntax(line, format!("expected true or false, got `{s}`"))),
    }
}

fn list(items: impl IntoIterator<Item = String>) -> String {
    let v: Vec<String> = items.into_iter().collect();
    if v.is_empty() {
        "-".to_string()
    } else {
        v.join(",")
    }
}

fn unlist(s: &str) -> Vec<&str> {
    if s == "-" {
        Vec::new()
    } else {
        s.split(',').collect()
    }
}

fn state_line(s: &State, inst: &Instance) -> String {
    let pos = list(inst.uavs().iter().map(|&u| format!("{}:{}", inst.node_name(u), inst.loc_name(s.position(u)))));
    let down = list(s.down().iter().map(|n| inst.node_name(n).to_string()));
    let pics = list(inst.target_ids().filter(|&t| s.captured(t)).map(|t| {
        let holders: Vec<&str> = s.holders(t).iter().map(|n| inst.node_name(n)).collect();
        format!("{}:{}", inst.target_name(t), holders.join("+"))
    }));
    format!("state {} pos={pos} down={down} pics={pics}", s.step())
}

fn event_line(step: u32, uav: NodeId, e: &AgentEvent, inst: &Instance) -> String {
    let u = inst.node_name(uav);
    match e {
        AgentEvent::GoalBelieved => format!("goal_believed {step} {u}"),
        AgentEvent::Anomaly { violations } => format!("anomaly {step} {u} violations={violations}"),
        AgentEvent::Diagnosis(x) => {
            let body = x.describe(inst);
            format!("diagnosis {step} {u} card={} {}", x.cardinality(), if body.is_empty() { "-" } else { &body })
        }
        AgentEvent::NoDiagnosis { reason } => format!("no_diagnosis {step} {u} {reason}"),
        AgentEvent::ObservationRejected { reason } => format!("obs_rejected {step} {u} {reason}"),
        AgentEvent::Replan { makespan, staleness, fallback } => {
            format!("replan {step} {u} makespan={makespan} staleness={staleness} fallback={fallback}")
        }
        AgentEvent::PlanFailure { reason } => format!("plan_failure {step} {u} {reason}"),
    }
}

fn opt(v: Option<u32>) -> String {
    v.map_or("-".to_string(), |x| x.to_string())
}

/// Writes a trace, one record per line:
///
/// ```text
/// trace states=<n> steps=<n>
/// state <k> pos=<uav>:<loc>,.. down=<node>,.. pics=<target>:<node>+..,..
/// obs <k> <agent> <fluent> <true|false>
/// action <k> <uav> chosen=<action|-> applied=<action|-> <ok|rejected|overridden|idle>
/// inject <k> <action>
/// anomaly|diagnosis|replan|no_diagnosis|plan_failure|goal_believed <k> <uav> ..
/// metrics mission_length=<n|incomplete> total_staleness=<n>
/// staleness <target> captured=<k|-> received=<k|->
/// ```
pub fn emit_trace(trace: &Trace, inst: &Instance, sink: &mut dyn Write) -> io::Result<()> {
    writeln!(sink, "trace states={} steps={}", trace.states.len(), trace.steps.len())?;
    for (k, s) in trace.states.iter().enumerate() {
        writeln!(sink, "{}", state_line(s, inst))?;
        let Some(rec) = trace.steps.get(k) else { continue };
        for (agent, obs) in &rec.observations {
            for o in obs {
                writeln!(sink, "obs {} {} {} {}", o.step, inst.node_name(*agent), inst.fmt_fluent(&o.fluent), o.value)?;
            }
        }
        for (uav, e) in &rec.events {
            writeln!(sink, "{}", event_line(rec.step, *uav, e, inst))?;
        }
        for a in &rec.actions {
            let status = if a.rejected {
                "rejected"
            } else if a.overridden {
                "overridden"
            } else if a.applied.is_none() {
                "idle"
            } else {
                "ok"
            };
            let fmt = |x: &Option<Action>| x.as_ref().map_or("-".to_string(), |x| inst.fmt_action(x));
            writeln!(
                sink,
                "action {} {} chosen={} applied={} {status}",
                rec.step,
                inst.node_name(a.uav),
                fmt(&a.chosen),
                fmt(&a.applied)
            )?;
        }
        for a in &rec.injected {
            writeln!(sink, "inject {} {}", rec.step, inst.fmt_action(a))?;
        }
    }
    let m = &trace.metrics;
    let len = m.mission_length.map_or("incomplete".to_string(), |l| l.to_string());
    writeln!(sink, "metrics mission_length={len} total_staleness={}", m.total_staleness)?;
    for t in &m.per_target {
        writeln!(sink, "staleness {} captured={} received={}", inst.target_name(t.target), opt(t.captured), opt(t.received))?;
    }
    Ok(())
}

pub fn trace_to_string(trace: &Trace, inst: &Instance) -> String {
    let mut buf = Vec::new();
    emit_trace(trace, inst, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("trace text is utf-8")
}

/// The inertial content of a recorded state line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateRecord {
    pub step: u32,
    pub uav_positions: Vec<(NodeId, LocId)>,
    pub down: NodeSet,
    pub pics: Vec<NodeSet>,
}

impl StateRecord {
    pub fn of(s: &State, inst: &Instance) -> Self {
        Self {
            step: s.step(),
            uav_positions: inst.uavs().iter().map(|&u| (u, s.position(u))).collect(),
            down: s.down(),
            pics: s.pictures().to_vec(),
        }
    }
}

/// A parsed trace: what replay needs plus the recorded outcome.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TraceRecord {
    pub states: Vec<StateRecord>,
    /// Applied agent actions and injected events per step.
    pub applied: BTreeMap<u32, Vec<Action>>,
    pub injected: BTreeMap<u32, Vec<Action>>,
    /// Chosen action per (step, uav); this is what an agent records as done.
    pub chosen: BTreeMap<(u32, NodeId), Action>,
    pub observations: Vec<(NodeId, Observation)>,
    /// Raw event lines, in order.
    pub events: Vec<String>,
    pub mission_length: Option<u32>,
    pub total_staleness: u32,
    pub per_target: Vec<(Option<u32>, Option<u32>)>,
}

fn kv<'a>(line: usize, tok: &'a str, key: &str) -> Result<&'a str, FormatError> {
    tok.strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| syntax(line, format!("expected `{key}=`, got `{tok}`")))
}

fn opt_num(line: usize, s: &str) -> Result<Option<u32>, FormatError> {
    if s == "-" {
        Ok(None)
    } else {
        num(line, "step", s).map(Some)
    }
}

pub fn parse_trace(text: &str, inst: &Instance) -> Result<TraceRecord, FormatError> {
    let mut t = TraceRecord::default();
    let mut seen_header = false;
    let mut seen_metrics = false;
    let node = |line: usize, s: &str| inst.node_by_name(s).ok_or_else(|| semantic(line, format!("unknown node `{s}`")));
    let action = |line: usize, s: &str| -> Result<Option<Action>, FormatError> {
        if s == "-" {
            return Ok(None);
        }
        parse_action(s, inst).map(Some).ok_or_else(|| syntax(line, format!("bad action `{s}`")))
    };
    for (line, toks) in records(text) {
        match toks[0] {
            "trace" => seen_header = true,
            "state" => {
                arity(line, &toks, 5, "state <k> pos= down= pics=")?;
                let step = num(line, "step", toks[1])?;
                let mut uav_positions = Vec::new();
                for p in unlist(kv(line, toks[2], "pos")?) {
                    let (u, l) = p.split_once(':').ok_or_else(|| syntax(line, format!("bad position `{p}`")))?;
                    let l = inst.loc_by_name(l).ok_or_else(|| semantic(line, format!("unknown location `{l}`")))?;
                    uav_positions.push((node(line, u)?, l));
                }
                let mut down = NodeSet::EMPTY;
                for n in unlist(kv(line, toks[3], "down")?) {
                    down.insert(node(line, n)?);
                }
                let mut pics = vec![NodeSet::EMPTY; inst.targets().len()];
                for p in unlist(kv(line, toks[4], "pics")?) {
                    let (tn, hs) = p.split_once(':').ok_or_else(|| syntax(line, format!("bad holding `{p}`")))?;
                    let tid = inst.target_by_name(tn).ok_or_else(|| semantic(line, format!("unknown target `{tn}`")))?;
                    for h in hs.split('+') {
                        pics[tid.index()].insert(node(line, h)?);
                    }
                }
                t.states.push(StateRecord { step, uav_positions, down, pics });
            }
            "obs" => {
                arity(line, &toks, 5, "obs <k> <agent> <fluent> <value>")?;
                let step = num(line, "step", toks[1])?;
                let fluent = parse_fluent(toks[3], inst).ok_or_else(|| syntax(line, format!("bad fluent `{}`", toks[3])))?;
                t.observations.push((node(line, toks[2])?, Observation { step, fluent, value: parse_bool(line, toks[4])? }));
            }
            "action" => {
                arity(line, &toks, 6, "action <k> <uav> chosen= applied= <status>")?;
                let step = num(line, "step", toks[1])?;
                let uav = node(line, toks[2])?;
                if let Some(a) = action(line, kv(line, toks[3], "chosen")?)? {
                    t.chosen.insert((step, uav), a);
                }
                if let Some(a) = action(line, kv(line, toks[4], "applied")?)? {
                    t.applied.entry(step).or_default().push(a);
                }
            }
            "inject" => {
                arity(line, &toks, 3, "inject <k> <action>")?;
                let a = action(line, toks[2])?.ok_or_else(|| syntax(line, "missing injected action"))?;
                t.injected.entry(num(line, "step", toks[1])?).or_default().push(a);
            }
            "anomaly" | "diagnosis" | "replan" | "no_diagnosis" | "obs_rejected" | "plan_failure" | "goal_believed" => {
                if toks.len() < 3 {
                    return Err(syntax(line, "event needs a step and a UAV"));
                }
                num::<u32>(line, "step", toks[1])?;
                node(line, toks[2])?;
                t.events.push(toks.join(" "));
            }
            "metrics" => {
                arity(line, &toks, 3, "metrics mission_length= total_staleness=")?;
                let len = kv(line, toks[1], "mission_length")?;
                t.mission_length = if len == "incomplete" { None } else { Some(num(line, "mission_length", len)?) };
                t.total_staleness = num(line, "total_staleness", kv(line, toks[2], "total_staleness")?)?;
                seen_metrics = true;
            }
            "staleness" => {
                arity(line, &toks, 4, "staleness <target> captured= received=")?;
                inst.target_by_name(toks[1]).ok_or_else(|| semantic(line, format!("unknown target `{}`", toks[1])))?;
                t.per_target.push((
                    opt_num(line, kv(line, toks[2], "captured")?)?,
                    opt_num(line, kv(line, toks[3], "received")?)?,
                ));
            }
            k => return Err(syntax(line, format!("unknown trace record `{k}`"))),
        }
    }
    if !seen_header || !seen_metrics {
        return Err(semantic(0, "trace lacks its header or metrics line"));
    }
    Ok(t)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("step {step}: {reason}")]
    Transition { step: u32, reason: String },
    #[error("recorded state at step {0} differs from the replayed one")]
    StateMismatch(u32),
    #[error("recorded metrics differ from the replayed ones")]
    MetricsMismatch,
}

/// Re-executes the recorded actions and faults from the initial state,
/// checking every recorded state and returning the recomputed metrics.
pub fn replay(rec: &TraceRecord, inst: &Instance) -> Result<Metrics, ReplayError> {
    let mut states = Vec::new();
    if !rec.states.is_empty() {
        let mut s = initial_state(inst);
        for (k, want) in rec.states.iter().enumerate() {
            if k > 0 {
                let step = s.step();
                let none = Vec::new();
                s = transition(
                    &s,
                    rec.applied.get(&step).unwrap_or(&none),
                    rec.injected.get(&step).unwrap_or(&none),
                    inst,
                )
                .map_err(|e| ReplayError::Transition { step, reason: e.to_string() })?;
            }
            if &StateRecord::of(&s, inst) != want {
                return Err(ReplayError::StateMismatch(want.step));
            }
            states.push(s.clone());
        }
    }
    let m = metrics_from_states(&states, inst);
    let per_target: Vec<_> = m.per_target.iter().map(|t| (t.captured, t.received)).collect();
    let recorded_targets = if rec.per_target.is_empty() && states.is_empty() { per_target.clone() } else { rec.per_target.clone() };
    if m.mission_length != rec.mission_length || m.total_staleness != rec.total_staleness || per_target != recorded_targets {
        return Err(ReplayError::MetricsMismatch);
    }
    Ok(m)
}

/// The history an agent held at the start of `step` (before acting), rebuilt
/// from a parsed trace.
pub fn history_from_trace(rec: &TraceRecord, agent: NodeId, step: u32, inst: &Instance) -> Result<History, FormatError> {
    let mut h = History::new(agent, inst);
    for (a, o) in &rec.observations {
        if *a == agent && o.step <= step {
            h.observe(*o, inst).map_err(|e| semantic(0, e.to_string()))?;
        }
    }
    h.set_current_step(step);
    for (&(s, u), a) in &rec.chosen {
        if u == agent && s < step {
            h.record(*a, s, inst).map_err(|e| semantic(0, e.to_string()))?;
        }
    }
    Ok(h)
}

/// ```text
/// history <owner> step=<k>
/// obs <k> <fluent> <true|false>
/// hpd <k> <action>
/// ```
pub fn emit_history(h: &History, inst: &Instance) -> String {
    let mut out = format!("history {} step={}\n", inst.node_name(h.owner()), h.current_step());
    for o in h.observations() {
        let _ = writeln!(out, "obs {} {} {}", o.step, inst.fmt_fluent(&o.fluent), o.value);
    }
    for (s, a) in h.own_actions() {
        let _ = writeln!(out, "hpd {s} {}", inst.fmt_action(&a));
    }
    out
}

pub fn parse_history(text: &str, inst: &Instance) -> Result<History, FormatError> {
    let mut h: Option<History> = None;
    let mut actions = Vec::new();
    for (line, toks) in records(text) {
        match toks[0] {
            "history" => {
                arity(line, &toks, 3, "history <owner> step=<k>")?;
                let owner = inst.node_by_name(toks[1]).ok_or_else(|| semantic(line, format!("unknown node `{}`", toks[1])))?;
                if !inst.is_uav(owner) {
                    return Err(semantic(line, format!("`{}` is not a UAV", toks[1])));
                }
                let mut fresh = History::empty(owner);
                fresh.set_current_step(num(line, "step", kv(line, toks[2], "step")?)?);
                h = Some(fresh);
            }
            "obs" => {
                arity(line, &toks, 4, "obs <k> <fluent> <value>")?;
                let hist = h.as_mut().ok_or_else(|| semantic(line, "observation before `history` header"))?;
                let fluent = parse_fluent(toks[2], inst).ok_or_else(|| syntax(line, format!("bad fluent `{}`", toks[2])))?;
                let o = Observation { step: num(line, "step", toks[1])?, fluent, value: parse_bool(line, toks[3])? };
                hist.observe(o, inst).map_err(|e| semantic(line, e.to_string()))?;
            }
            "hpd" => {
                arity(line, &toks, 3, "hpd <k> <action>")?;
                let a = parse_action(toks[2], inst).ok_or_else(|| syntax(line, format!("bad action `{}`", toks[2])))?;
                actions.push((line, num::<u32>(line, "step", toks[1])?, a));
            }
            k => return Err(syntax(line, format!("unknown history record `{k}`"))),
        }
    }
    let mut h = h.ok_or_else(|| semantic(0, "missing `history` header"))?;
    for (line, s, a) in actions {
        h.record(a, s, inst).map_err(|e| semantic(line, e.to_string()))?;
    }
    Ok(h)
}

/// ```text
/// plan horizon=<h> makespan=<m> staleness=<s> fallback=<bool>
/// act <k> <action>
/// ```
pub fn emit_plan(p: &MultiAgentPlan, inst: &Instance) -> String {
    let mut out = format!(
        "plan horizon={} makespan={} staleness={} fallback={}\n",
        p.horizon, p.predicted_makespan, p.predicted_total_staleness, p.fallback
    );
    let mut rows: BTreeSet<(u32, NodeId, Action)> = BTreeSet::new();
    for u in p.uavs() {
        for (s, a) in p.track(u) {
            rows.insert((s, u, a));
        }
    }
    for (s, _, a) in rows {
        let _ = writeln!(out, "act {s} {}", inst.fmt_action(&a));
    }
    out
}

pub fn parse_plan(text: &str, inst: &Instance) -> Result<MultiAgentPlan, FormatError> {
    let mut plan: Option<MultiAgentPlan> = None;
    for (line, toks) in records(text) {
        match toks[0] {
            "plan" => {
                arity(line, &toks, 5, "plan horizon= makespan= staleness= fallback=")?;
                let mut p = MultiAgentPlan::empty(num(line, "horizon", kv(line, toks[1], "horizon")?)?);
                p.predicted_makespan = num(line, "makespan", kv(line, toks[2], "makespan")?)?;
                p.predicted_total_staleness = num(line, "staleness", kv(line, toks[3], "staleness")?)?;
                p.fallback = parse_bool(line, kv(line, toks[4], "fallback")?)?;
                plan = Some(p);
            }
            "act" => {
                arity(line, &toks, 3, "act <k> <action>")?;
                let p = plan.as_mut().ok_or_else(|| semantic(line, "action before `plan` header"))?;
                let a = parse_action(toks[2], inst).ok_or_else(|| syntax(line, format!("bad action `{}`", toks[2])))?;
                if !a.is_agent_action() {
                    return Err(semantic(line, "plans contain only agent actions"));
                }
                p.push(a.subject(), num(line, "step", toks[1])?, a);
            }
            k => return Err(syntax(line, format!("unknown plan record `{k}`"))),
        }
    }
    plan.ok_or_else(|| semantic(0, "missing `plan` header"))
}

/// Reduction of `ours` relative to `base` in tenths of a percent, rounded
/// half away from zero; `None` when `base` is zero.
pub fn reduction_permille(base: u32, ours: u32) -> Option<i64> {
    if base == 0 {
        return None;
    }
    let num = (base as i64 - ours as i64) * 1000;
    let den = base as i64;
    let q = (2 * num.abs() + den) / (2 * den);
    Some(if num < 0 { -q } else { q })
}

/// Renders a permille value with one decimal, e.g. `-12.5%`.
pub fn fmt_percent(p: Option<i64>) -> String {
    match p {
        None => "n/a".to_string(),
        Some(v) => format!("{}{}.{}%", if v < 0 { "-" } else { "" }, v.abs() / 10, v.abs() % 10),
    }
}

/// Per-mode mission length and total staleness, followed by the reductions
/// achieved by the network-aware mode against each other mode.
pub fn emit_report(rows: &[(Mode, Metrics)], sink: &mut dyn Write) -> io::Result<()> {
    writeln!(sink, "{:<14} {:>14} {:>15}", "mode", "mission_length", "total_staleness")?;
    for (mode, m) in rows {
        let len = m.mission_length.map_or("incomplete".to_string(), |l| l.to_string());
        writeln!(sink, "{:<14} {:>14} {:>15}", mode.as_str(), len, m.total_staleness)?;
    }
    let Some((_, ours)) = rows.iter().find(|(m, _)| *m == Mode::NetworkAware) else { return Ok(()) };
    for (mode, other) in rows.iter().filter(|(m, _)| *m != Mode::NetworkAware) {
        let len = match (other.mission_length, ours.mission_length) {
            (Some(b), Some(o)) => fmt_percent(reduction_permille(b, o)),
            _ => "n/a".to_string(),
        };
        writeln!(
            sink,
            "reduction vs {}: mission_length {len} total_staleness {}",
            mode.as_str(),
            fmt_percent(reduction_permille(other.total_staleness, ours.total_staleness))
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
grid 10 10
range 7
loc home 0 0 home_base
loc t1 1 0 target
edge home t1
node base base home
node u1 uav home
";

    #[test]
    fn minimal_scenario() {
        let sc = parse_scenario(MINIMAL).unwrap();
        assert_eq!(sc.instance.uavs().len(), 1);
        assert_eq!(sc.instance.targets().len(), 1);
        assert_eq!(sc.config, ScenarioConfig::default());
        assert!(sc.faults.is_empty());
    }

    #[test]
    fn round_trip() {
        let text = format!("{MINIMAL}fault break u1 3\nconfig max_card 2\nconfig mode naive\nconfig objective weighted_sum 2 1\n");
        let sc = parse_scenario(&text).unwrap();
        let again = parse_scenario(&emit_scenario(&sc)).unwrap();
        assert_eq!(sc, again);
    }

    #[test]
    fn errors_carry_lines() {
        let bad = MINIMAL.replace("edge home t1", "edge home t9");
        assert_eq!(
            parse_scenario(&bad).unwrap_err(),
            FormatError::Semantic { line: 5, msg: "undefined location `t9`".into() }
        );
        let bad = format!("{MINIMAL}colour red\n");
        assert!(matches!(parse_scenario(&bad), Err(FormatError::Syntax { line: 8, .. })));
        let bad = format!("{MINIMAL}config speed 3\n");
        assert!(matches!(parse_scenario(&bad), Err(FormatError::Syntax { line: 8, .. })));
        let bad = MINIMAL.replace("loc t1 1 0 target", "loc t1 one 0 target");
        assert!(matches!(parse_scenario(&bad), Err(FormatError::Syntax { line: 4, .. })));
    }

    #[test]
    fn asymmetric_next_rejected() {
        let bad = MINIMAL.replace("edge home t1", "next home t1");
        assert!(matches!(parse_scenario(&bad), Err(FormatError::Semantic { line: 5, .. })));
        let ok = MINIMAL.replace("edge home t1", "next home t1\nnext t1 home");
        assert_eq!(parse_scenario(&ok).unwrap().instance, parse_scenario(MINIMAL).unwrap().instance);
    }

    #[test]
    fn disconnected_rejected() {
        let bad = MINIMAL.replace("edge home t1\n", "");
        assert!(matches!(parse_scenario(&bad), Err(FormatError::Instance(_))));
    }

    #[test]
    fn percentages() {
        assert_eq!(fmt_percent(reduction_permille(10, 5)), "50.0%");
        assert_eq!(fmt_percent(reduction_permille(3, 2)), "33.3%");
        assert_eq!(fmt_percent(reduction_permille(8, 9)), "-12.5%");
        assert_eq!(fmt_percent(reduction_permille(0, 0)), "n/a");
        assert_eq!(fmt_percent(reduction_permille(7, 0)), "100.0%");
    }

    #[test]
    fn empty_trace_has_header_and_metrics_only() {
        let inst = parse_scenario(MINIMAL).unwrap().instance;
        let trace = Trace {
            states: Vec::new(),
            steps: Vec::new(),
            metrics: Metrics { mission_length: None, per_target: Vec::new(), total_staleness: 0 },
        };
        let text = trace_to_string(&trace, &inst);
        assert_eq!(text, "trace states=0 steps=0\nmetrics mission_length=incomplete total_staleness=0\n");
        let rec = parse_trace(&text, &inst).unwrap();
        assert_eq!(replay(&rec, &inst).unwrap().mission_length, None);
    }

    #[test]
    fn terms() {
        let inst = parse_scenario(MINIMAL).unwrap().instance;
        for a in ["move(u1,t1)", "wait(u1)", "break(base)", "aborted(u1)", "unpredictable(u1)"] {
            assert_eq!(inst.fmt_action(&parse_action(a, &inst).unwrap()), a);
        }
        for f in ["at(u1,home)", "down(u1)", "in_contact(u1,base)", "has_pic(base,t1)"] {
            assert_eq!(inst.fmt_fluent(&parse_fluent(f, &inst).unwrap()), f);
        }
        assert_eq!(parse_action("move(u1)", &inst), None);
        assert_eq!(parse_fluent("has_pic(u1,home)", &inst), None);
    }
}
