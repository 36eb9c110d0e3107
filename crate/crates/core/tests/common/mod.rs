//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls into the library's contact, transition, planning or
//! diagnosis code. Instances, histories and plans are only read as data.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uavcoord::generate::{random_instance, GenParams};
use uavcoord::planner::MultiAgentPlan;
use uavcoord::scenario::{parse_scenario, Scenario};
use uavcoord::world::{Action, Fluent, Instance, LocId, NodeId, State, TargetId};
use uavcoord::History;

pub fn fig2_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/fig2.scn")
}

pub fn fig2() -> Scenario {
    parse_scenario(&std::fs::read_to_string(fig2_path()).expect("fig2.scn readable")).expect("fig2.scn parses")
}

/// The fig2 scenario with r5, r6 and r7 failing between steps 5 and 6.
pub fn fig2_faulted() -> Scenario {
    let mut sc = fig2();
    for r in ["r5", "r6", "r7"] {
        let n = sc.instance.node_by_name(r).expect("relay exists");
        sc.faults.breaks.insert((5, n));
    }
    sc
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A small random instance drawn from `seed`.
pub fn small_instance(seed: u64, max_locations: usize, max_uavs: usize, max_targets: usize, max_relays: usize) -> Instance {
    let mut r = rng(seed ^ 0x5eed);
    let uavs = r.gen_range(1..=max_uavs);
    let targets = r.gen_range(1..=max_targets);
    let relays = r.gen_range(0..=max_relays);
    let min_locs = 1 + targets + relays;
    let locations = r.gen_range(min_locs.max(3)..=max_locations.max(min_locs));
    let p = GenParams {
        grid: r.gen_range(10..=20),
        radio_range: r.gen_range(3..=7),
        locations,
        uavs,
        targets,
        relays,
        extra_edges: r.gen_range(0..=3),
    };
    random_instance(seed, &p)
}

// ---------------------------------------------------------------------------
// Reference world

/// A state in the reference model. Contact is not stored; it is recomputed
/// from scratch by breadth-first search whenever needed.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RefState {
    pub step: u32,
    pub pos: Vec<LocId>,
    pub down: BTreeSet<NodeId>,
    pub holders: Vec<BTreeSet<NodeId>>,
}

pub fn direct(inst: &Instance, a: LocId, b: LocId) -> bool {
    let (la, lb) = (inst.location(a), inst.location(b));
    let (dx, dy) = (la.x - lb.x, la.y - lb.y);
    dx * dx + dy * dy <= inst.radio_range() * inst.radio_range()
}

/// All-pairs reachability over direct links among up nodes.
pub fn reach(inst: &Instance, pos: &[LocId], down: &BTreeSet<NodeId>) -> Vec<Vec<bool>> {
    let n = pos.len();
    let up = |i: usize| !down.contains(&NodeId(i as u16));
    let mut out = vec![vec![false; n]; n];
    for src in 0..n {
        if !up(src) {
            continue;
        }
        let mut seen = vec![false; n];
        seen[src] = true;
        let mut queue = vec![src];
        while let Some(a) = queue.pop() {
            for b in 0..n {
                if !seen[b] && up(b) && direct(inst, pos[a], pos[b]) {
                    seen[b] = true;
                    queue.push(b);
                }
            }
        }
        for (b, &s) in seen.iter().enumerate() {
            out[src][b] = s && b != src;
        }
    }
    out
}

fn settle(inst: &Instance, s: &mut RefState) {
    let c = reach(inst, &s.pos, &s.down);
    for (t, &tl) in inst.targets().iter().enumerate() {
        for &u in inst.uavs() {
            if s.pos[u.index()] == tl {
                s.holders[t].insert(u);
            }
        }
        let seeds: Vec<NodeId> = s.holders[t].iter().copied().collect();
        for a in seeds {
            for (b, &linked) in c[a.index()].iter().enumerate() {
                if linked {
                    s.holders[t].insert(NodeId(b as u16));
                }
            }
        }
    }
}

pub fn ref_initial(inst: &Instance) -> RefState {
    let mut s = RefState {
        step: 0,
        pos: inst.nodes().iter().map(|n| n.location).collect(),
        down: BTreeSet::new(),
        holders: vec![BTreeSet::new(); inst.targets().len()],
    };
    settle(inst, &mut s);
    s
}

/// Successor under already-legal moves and breaks.
pub fn ref_step(inst: &Instance, s: &RefState, moves: &[(NodeId, LocId)], breaks: &[NodeId]) -> RefState {
    let mut n = s.clone();
    n.step += 1;
    for &(u, l) in moves {
        n.pos[u.index()] = l;
    }
    n.down.extend(breaks.iter().copied());
    settle(inst, &mut n);
    n
}

pub fn ref_goal(inst: &Instance, s: &RefState) -> bool {
    s.holders.iter().all(|h| h.contains(&inst.base()))
}

pub fn ref_holds(inst: &Instance, s: &RefState, f: &Fluent) -> bool {
    ref_holds_with(&reach(inst, &s.pos, &s.down), s, f)
}

/// [`ref_holds`] with a precomputed reachability matrix.
pub fn ref_holds_with(c: &[Vec<bool>], s: &RefState, f: &Fluent) -> bool {
    match *f {
        Fluent::At { uav, loc } => s.pos[uav.index()] == loc,
        Fluent::Down(n) => s.down.contains(&n),
        Fluent::InContact(a, b) => c[a.index()][b.index()],
        Fluent::HasPic { node, target } => s.holders[target.index()].contains(&node),
    }
}

pub fn ref_of(s: &State) -> RefState {
    RefState {
        step: s.step(),
        pos: s.positions().to_vec(),
        down: s.down().iter().collect(),
        holders: s.pictures().iter().map(|h| h.iter().collect()).collect(),
    }
}

/// Adjacent locations plus staying put.
pub fn options(inst: &Instance, from: LocId) -> Vec<LocId> {
    let mut out = vec![from];
    for (a, b) in inst.edges() {
        if a == from {
            out.push(b);
        } else if b == from {
            out.push(a);
        }
    }
    out
}

pub fn adjacent(inst: &Instance, a: LocId, b: LocId) -> bool {
    a != b && options(inst, a).contains(&b)
}

// ---------------------------------------------------------------------------
// Exhaustive planner

#[derive(Clone, PartialEq, Eq, Hash)]
struct PlanKey {
    step: u32,
    pos: Vec<LocId>,
    holders: Vec<BTreeSet<NodeId>>,
    captured: Vec<Option<u32>>,
    received: Vec<Option<u32>>,
}

/// Lexicographically smallest (first goal step, total staleness) over every
/// joint course of the UAVs of at most `horizon` steps, computed by
/// exhaustive enumeration with memoization on the full search node.
pub fn optimal_joint(inst: &Instance, horizon: u32) -> Option<(u32, u32)> {
    let s = ref_initial(inst);
    let n = inst.targets().len();
    let mut captured = vec![None; n];
    let mut received = vec![None; n];
    stamp(inst, &s, &mut captured, &mut received);
    let mut memo = HashMap::new();
    explore(inst, horizon, s, captured, received, &mut memo)
}

fn stamp(inst: &Instance, s: &RefState, captured: &mut [Option<u32>], received: &mut [Option<u32>]) {
    for (t, h) in s.holders.iter().enumerate() {
        if captured[t].is_none() && !h.is_empty() {
            captured[t] = Some(s.step);
        }
        if received[t].is_none() && h.contains(&inst.base()) {
            received[t] = Some(s.step);
        }
    }
}

fn explore(
    inst: &Instance,
    horizon: u32,
    s: RefState,
    captured: Vec<Option<u32>>,
    received: Vec<Option<u32>>,
    memo: &mut HashMap<PlanKey, Option<(u32, u32)>>,
) -> Option<(u32, u32)> {
    if ref_goal(inst, &s) {
        let stale = captured.iter().zip(&received).map(|(c, r)| r.unwrap() - c.unwrap()).sum();
        return Some((s.step, stale));
    }
    if s.step >= horizon {
        return None;
    }
    let key = PlanKey {
        step: s.step,
        pos: s.pos.clone(),
        holders: s.holders.clone(),
        captured: captured.clone(),
        received: received.clone(),
    };
    if let Some(&v) = memo.get(&key) {
        return v;
    }
    let uavs = inst.uavs();
    let choices: Vec<Vec<LocId>> = uavs.iter().map(|&u| options(inst, s.pos[u.index()])).collect();
    let mut best: Option<(u32, u32)> = None;
    let mut idx = vec![0usize; uavs.len()];
    loop {
        let moves: Vec<(NodeId, LocId)> = uavs.iter().enumerate().map(|(i, &u)| (u, choices[i][idx[i]])).collect();
        let next = ref_step(inst, &s, &moves, &[]);
        let (mut c, mut r) = (captured.clone(), received.clone());
        stamp(inst, &next, &mut c, &mut r);
        if let Some(v) = explore(inst, horizon, next, c, r, memo) {
            best = Some(best.map_or(v, |b| b.min(v)));
        }
        // odometer over the joint choice
        let mut i = 0;
        loop {
            if i == uavs.len() {
                memo.insert(key, best);
                return best;
            }
            idx[i] += 1;
            if idx[i] < choices[i].len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

/// Simulates `plan` in the reference model for at most `horizon` steps and
/// returns the first goal step and the total staleness of delivered targets.
pub type Stamps = Vec<(Option<u32>, Option<u32>)>;

/// Per target `(captured, received)` steps are returned alongside.
pub fn ref_evaluate(inst: &Instance, plan: &MultiAgentPlan, horizon: u32) -> (Option<u32>, u32, Stamps) {
    let mut s = ref_initial(inst);
    let n = inst.targets().len();
    let (mut captured, mut received) = (vec![None; n], vec![None; n]);
    stamp(inst, &s, &mut captured, &mut received);
    while !ref_goal(inst, &s) && s.step < horizon {
        let mut moves = Vec::new();
        for &u in inst.uavs() {
            if let Some(Action::Move { uav, to }) = plan.action_at(u, s.step) {
                assert!(adjacent(inst, s.pos[uav.index()], to), "plan moves along a non-edge");
                moves.push((uav, to));
            }
        }
        s = ref_step(inst, &s, &moves, &[]);
        stamp(inst, &s, &mut captured, &mut received);
    }
    let goal = ref_goal(inst, &s).then_some(s.step);
    let stale = captured.iter().zip(&received).filter_map(|(c, r)| Some(r.as_ref()? - c.as_ref()?)).sum();
    (goal, stale, captured.into_iter().zip(received).collect())
}

// ---------------------------------------------------------------------------
// Brute-force diagnosis

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Kind {
    Break,
    Aborted,
    Unpredictable,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Ev {
    pub kind: Kind,
    pub node: NodeId,
    pub step: u32,
}

/// Smallest number of exogenous events, each stamped at an explicit step,
/// under which some explicit course of the unpredictable UAVs reproduces
/// every observation of `h`. `None` if more than `max_card` are needed.
pub fn brute_min_card(h: &History, plan: &MultiAgentPlan, inst: &Instance, max_card: usize) -> Option<usize> {
    let owner = h.owner();
    let last = h.current_step();
    let mut triples = Vec::new();
    for n in inst.node_ids().filter(|&n| n != owner) {
        for step in 0..last {
            triples.push(Ev { kind: Kind::Break, node: n, step });
            if inst.is_uav(n) {
                triples.push(Ev { kind: Kind::Aborted, node: n, step });
                triples.push(Ev { kind: Kind::Unpredictable, node: n, step });
            }
        }
    }
    let obs: Vec<Vec<(Fluent, bool)>> = (0..=last)
        .map(|k| h.observations().filter(|o| o.step == k).map(|o| (o.fluent, o.value)).collect())
        .collect();
    let mut start = ref_initial(inst);
    for o in h.observations().filter(|o| o.step == 0 && o.value) {
        if let Fluent::At { uav, loc } = o.fluent {
            start.pos[uav.index()] = loc;
        }
    }
    let start = {
        let mut s = RefState { holders: vec![BTreeSet::new(); inst.targets().len()], ..start };
        settle(inst, &mut s);
        s
    };
    (0..=max_card).find(|&card| {
        let mut found = false;
        subsets(&triples, card, &mut Vec::new(), 0, &mut |set| {
            if !found && well_formed(set) && replays(inst, h, plan, &obs, &start, set) {
                found = true;
            }
            found
        });
        found
    })
}

fn subsets(items: &[Ev], k: usize, cur: &mut Vec<Ev>, from: usize, visit: &mut dyn FnMut(&[Ev]) -> bool) -> bool {
    if cur.len() == k {
        return visit(cur);
    }
    for i in from..items.len() {
        cur.push(items[i]);
        let stop = subsets(items, k, cur, i + 1, visit);
        cur.pop();
        if stop {
            return true;
        }
    }
    false
}

fn well_formed(set: &[Ev]) -> bool {
    for (i, a) in set.iter().enumerate() {
        for b in &set[i + 1..] {
            if a.kind == b.kind && a.node == b.node {
                return false;
            }
        }
        if a.kind == Kind::Unpredictable
            && !set.iter().any(|b| b.kind == Kind::Aborted && b.node == a.node && b.step <= a.step)
        {
            return false;
        }
    }
    true
}

fn since(set: &[Ev], kind: Kind, node: NodeId, step: u32) -> bool {
    set.iter().any(|e| e.kind == kind && e.node == node && e.step <= step)
}

fn replays(inst: &Instance, h: &History, plan: &MultiAgentPlan, obs: &[Vec<(Fluent, bool)>], s: &RefState, set: &[Ev]) -> bool {
    let c = reach(inst, &s.pos, &s.down);
    if !obs[s.step as usize].iter().all(|(f, v)| ref_holds_with(&c, s, f) == *v) {
        return false;
    }
    if s.step == h.current_step() {
        return true;
    }
    let step = s.step;
    let breaks: Vec<NodeId> = set.iter().filter(|e| e.kind == Kind::Break && e.step == step).map(|e| e.node).collect();
    // fixed moves, plus a list of UAVs whose next location is free
    let mut fixed = Vec::new();
    let mut free = Vec::new();
    for &u in inst.uavs() {
        let here = s.pos[u.index()];
        let intended = if u == h.owner() {
            h.own_action_at(step)
        } else if since(set, Kind::Aborted, u, step) {
            if since(set, Kind::Unpredictable, u, step) {
                free.push(u);
            }
            None
        } else {
            plan.action_at(u, step)
        };
        if let Some(Action::Move { uav, to }) = intended {
            if uav == u && adjacent(inst, here, to) {
                fixed.push((u, to));
            }
        }
    }
    branch(inst, h, plan, obs, s, set, &breaks, &mut fixed, &free)
}

#[allow(clippy::too_many_arguments)]
fn branch(
    inst: &Instance,
    h: &History,
    plan: &MultiAgentPlan,
    obs: &[Vec<(Fluent, bool)>],
    s: &RefState,
    set: &[Ev],
    breaks: &[NodeId],
    moves: &mut Vec<(NodeId, LocId)>,
    free: &[NodeId],
) -> bool {
    match free.split_first() {
        None => replays(inst, h, plan, obs, &ref_step(inst, s, moves, breaks), set),
        Some((&u, rest)) => options(inst, s.pos[u.index()]).into_iter().any(|to| {
            moves.push((u, to));
            let ok = branch(inst, h, plan, obs, s, set, breaks, moves, rest);
            moves.pop();
            ok
        }),
    }
}

pub fn target(t: usize) -> TargetId {
    TargetId(t as u8)
}

// ---------------------------------------------------------------------------
// Seeded cases

/// Instance for planner optimality checks: at most 2 UAVs, 2 targets and 12
/// locations.
pub fn planner_case(seed: u64) -> Instance {
    small_instance(seed, 12, 2, 2, 2)
}

pub struct DiagnosisCase {
    pub inst: Instance,
    pub plan: MultiAgentPlan,
    pub history: History,
    pub injected: Vec<Ev>,
}

/// Two UAVs, at most six radio nodes and at most eight steps. The owner
/// follows the mission plan; 1 to 3 faults (breaks of other nodes, an abort of
/// the other UAV) are injected. `None` when the faults leave no visible trace
/// or no mission plan exists.
pub fn diagnosis_case(seed: u64) -> Option<DiagnosisCase> {
    use uavcoord::planner::{plan_mission, Mode, PlannerConfig};
    use uavcoord::world::{initial_state, transition};
    use uavcoord::{observe, unexpected};

    let mut r = rng(seed ^ 0xd1a6);
    let targets = r.gen_range(1..=2);
    let relays = r.gen_range(1..=3);
    let p = GenParams {
        grid: r.gen_range(10..=16),
        radio_range: r.gen_range(4..=7),
        locations: r.gen_range((1 + targets + relays).max(5)..=8),
        uavs: 2,
        targets,
        relays,
        extra_edges: r.gen_range(0..=2),
    };
    let inst = random_instance(seed, &p);
    let plan = plan_mission(&inst, &PlannerConfig::new(Mode::NetworkAware, 12)).ok()?;
    let (owner, other) = (inst.uavs()[0], inst.uavs()[1]);
    let steps: u32 = r.gen_range(3..=8);

    let mut injected: Vec<Ev> = Vec::new();
    for _ in 0..r.gen_range(1..=3) {
        let step = r.gen_range(0..steps);
        let ev = if r.gen_bool(0.25) {
            Ev { kind: Kind::Aborted, node: other, step }
        } else {
            let nodes: Vec<NodeId> = inst.node_ids().filter(|&n| n != owner).collect();
            Ev { kind: Kind::Break, node: nodes[r.gen_range(0..nodes.len())], step }
        };
        if !injected.iter().any(|e| e.kind == ev.kind && e.node == ev.node) {
            injected.push(ev);
        }
    }

    let mut h = History::new(owner, &inst);
    let mut s = initial_state(&inst);
    for k in 0..=steps {
        h.observe_all(&observe(&s, owner, &inst), &inst).ok()?;
        if k == steps {
            break;
        }
        let own = plan.action_at(owner, k).unwrap_or(Action::Wait { uav: owner });
        h.record(own, k, &inst).ok()?;
        let mut acts = vec![own];
        if !since(&injected, Kind::Aborted, other, k) {
            if let Some(a) = plan.action_at(other, k) {
                acts.push(a);
            }
        }
        let breaks: Vec<Action> = injected
            .iter()
            .filter(|e| e.kind == Kind::Break && e.step == k)
            .map(|e| Action::Break { node: e.node })
            .collect();
        s = transition(&s, &acts, &breaks, &inst).ok()?;
    }
    if unexpected(&h, &plan, &inst).ok()?.is_empty() {
        return None;
    }
    Some(DiagnosisCase { inst, plan, history: h, injected })
}

// ---------------------------------------------------------------------------
// Relay failure narrative on fig2.scn

/// Outcome of each narrative property on a trace of the faulted fig2 run.
pub struct Narrative {
    pub first_u2_diagnosis: Result<(), String>,
    pub u1_blames_u2: Result<(), String>,
    pub rendezvous: Result<(), String>,
    pub completes: Result<(), String>,
}

pub fn check_narrative(trace: &uavcoord::Trace, inst: &Instance) -> Narrative {
    use uavcoord::agent::AgentEvent;

    let node = |n: &str| inst.node_by_name(n).unwrap();
    let (u1, u2) = (node("u1"), node("u2"));
    let diagnoses = |who: NodeId| {
        trace.steps.iter().flat_map(move |st| {
            st.events.iter().filter_map(move |(n, e)| match e {
                AgentEvent::Diagnosis(x) if *n == who => Some((st.step, x.clone())),
                _ => None,
            })
        })
    };

    let first_u2_diagnosis = match diagnoses(u2).next() {
        None => Err("u2 never diagnosed anything".into()),
        Some((k, e)) => {
            let broken: BTreeSet<NodeId> = e.breaks.iter().map(|&(n, _)| n).collect();
            let want: BTreeSet<NodeId> = ["r5", "r6", "r7"].iter().map(|r| node(r)).collect();
            if e.cardinality() == 3 && e.aborts.is_empty() && e.unpredictables.is_empty() && broken == want {
                Ok(())
            } else {
                Err(format!("step {k}: {} (card {})", e.describe(inst), e.cardinality()))
            }
        }
    };

    let first_u2 = diagnoses(u2).next().map(|(k, _)| k);
    let u1_blames_u2 = diagnoses(u1)
        .find(|(_, e)| e.aborts.iter().any(|&(n, _)| n == u2))
        .ok_or_else(|| "u1 never diagnosed aborted(u2)".to_string())
        .and_then(|(k, e)| {
            if e.cardinality() != 1 {
                Err(format!("step {k}: {} (card {})", e.describe(inst), e.cardinality()))
            } else if first_u2.is_some_and(|f| k <= f) {
                Err(format!("step {k}: not after u2's diagnosis"))
            } else {
                Ok(())
            }
        });

    // the last picture to be taken ends up with both UAVs while they are in contact
    let last_target = inst
        .target_ids()
        .filter_map(|t| trace.states.iter().position(|s| s.captured(t)).map(|k| (k, t)))
        .max()
        .map(|(_, t)| t);
    let rendezvous = match last_target {
        None => Err("no picture was taken".into()),
        Some(t) => trace
            .states
            .iter()
            .find(|s| s.in_contact(u1, u2) && s.has_pic(u1, t) && s.has_pic(u2, t))
            .map(|_| ())
            .ok_or_else(|| format!("u1 and u2 never shared {} while in contact", inst.target_name(t))),
    };

    let last = trace.states.last().unwrap();
    let completes = if trace.metrics.complete() && inst.target_ids().all(|t| last.has_pic(inst.base(), t)) {
        Ok(())
    } else {
        Err(format!("mission incomplete after {} steps", trace.steps.len()))
    };
    Narrative { first_u2_diagnosis, u1_blames_u2, rendezvous, completes }
}
