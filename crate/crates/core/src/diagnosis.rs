//! Cardinality-minimal explanations of unexpected observations.
//!
//! A candidate explanation is a *signature* (which nodes break, which UAVs
//! abort, which of those turn unpredictable) plus a step for every event.
//! Signatures are tried in order of increasing cardinality. For one
//! signature, a forward search over projected states decides whether some
//! timing of its events (and some course of moves for unpredictable UAVs)
//! agrees with every observation; timings are then fixed one event at a time
//! to obtain the lexicographically smallest explanation.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use smallvec::SmallVec;
use thiserror::Error;

use crate::belief::{initial_belief, project_with, unexpected, violations, BeliefError, History};
use crate::planner::MultiAgentPlan;
use crate::world::{advance, legal, Action, ContactModel, Fluent, Instance, LocId, NodeId, NodeSet, State, StateKey};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    Break,
    Aborted,
    Unpredictable,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Break => "break",
            EventKind::Aborted => "aborted",
            EventKind::Unpredictable => "unpredictable",
        }
    }
}

/// One counted exogenous occurrence.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Event {
    pub kind: EventKind,
    pub node: NodeId,
    pub step: u32,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HypothesizedMove {
    pub uav: NodeId,
    pub step: u32,
    pub to: LocId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Explanation {
    pub breaks: BTreeSet<(NodeId, u32)>,
    pub aborts: BTreeSet<(NodeId, u32)>,
    pub unpredictables: BTreeSet<(NodeId, u32)>,
    pub moves: BTreeSet<HypothesizedMove>,
}

impl Explanation {
    /// Number of counted occurrences; hypothesized moves are free.
    pub fn cardinality(&self) -> usize {
        self.breaks.len() + self.aborts.len() + self.unpredictables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cardinality() == 0 && self.moves.is_empty()
    }

    /// Counted events in `(kind, node, step)` order.
    pub fn events(&self) -> Vec<Event> {
        let mut out: Vec<Event> = self
            .breaks
            .iter()
            .map(|&(node, step)| Event { kind: EventKind::Break, node, step })
            .chain(self.aborts.iter().map(|&(node, step)| Event { kind: EventKind::Aborted, node, step }))
            .chain(self.unpredictables.iter().map(|&(node, step)| Event { kind: EventKind::Unpredictable, node, step }))
            .collect();
        out.sort();
        out
    }

    pub fn insert(&mut self, e: Event) {
        match e.kind {
            EventKind::Break => self.breaks.insert((e.node, e.step)),
            EventKind::Aborted => self.aborts.insert((e.node, e.step)),
            EventKind::Unpredictable => self.unpredictables.insert((e.node, e.step)),
        };
    }

    /// Checks the structural constraints: unpredictable behavior only after
    /// an abort, and hypothesized moves only inside an unpredictable window.
    pub fn validate(&self, current_step: u32) -> Result<(), String> {
        for &(u, s) in &self.unpredictables {
            if !self.aborts.iter().any(|&(a, sa)| a == u && sa <= s) {
                return Err(format!("unpredictable({}, {s}) without an earlier abort", u.0));
            }
        }
        for m in &self.moves {
            let ok = self.unpredictables.iter().any(|&(u, s)| u == m.uav && s <= m.step) && m.step < current_step;
            if !ok {
                return Err(format!("hypothesized move of {} at step {} outside window", m.uav.0, m.step));
            }
        }
        Ok(())
    }

    pub fn describe(&self, inst: &Instance) -> String {
        let mut parts: Vec<String> = self
            .events()
            .iter()
            .map(|e| format!("{}({})@{}", e.kind.as_str(), inst.node_name(e.node), e.step))
            .collect();
        parts.extend(
            self.moves.iter().map(|m| format!("move({},{})@{}", inst.node_name(m.uav), inst.loc_name(m.to), m.step)),
        );
        parts.join(" ")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DiagnosisError {
    #[error("history is consistent with expectations; nothing to explain")]
    NothingToExplain,
    #[error("no explanation with at most {0} occurrences")]
    NoDiagnosis(usize),
    #[error(transparent)]
    Belief(#[from] BeliefError),
}

/// Default bound on explanation size: every relay broken plus every UAV
/// aborted and unpredictable.
pub fn default_max_card(inst: &Instance) -> usize {
    inst.relays().count() + 2 * inst.uavs().len()
}

/// A cardinality-minimal explanation; ties are broken by the smallest
/// `(kind, node, step)` event list.
pub fn explain(h: &History, plan: &MultiAgentPlan, inst: &Instance, max_card: usize) -> Result<Explanation, DiagnosisError> {
    if unexpected(h, plan, inst)?.is_empty() {
        return Err(DiagnosisError::NothingToExplain);
    }
    let ctx = Context::new(h, plan, inst)?;
    for card in 0..=max_card {
        let feasible = ctx.feasible_signatures(card);
        let best = feasible
            .par_iter()
            .map(|sig| ctx.lexmin_timing(sig).expect("feasible signature has a timing"))
            .min_by(|a, b| a.0.cmp(&b.0));
        if let Some((events, moves)) = best {
            return Ok(ctx.build(&events, moves));
        }
    }
    Err(DiagnosisError::NoDiagnosis(max_card))
}

/// Every minimal-cardinality explanation (one witness move course per event
/// list), sorted by event list. [`explain`] returns the first element.
pub fn enumerate_minimal(
    h: &History,
    plan: &MultiAgentPlan,
    inst: &Instance,
    max_card: usize,
) -> Result<Vec<Explanation>, DiagnosisError> {
    if unexpected(h, plan, inst)?.is_empty() {
        return Err(DiagnosisError::NothingToExplain);
    }
    let ctx = Context::new(h, plan, inst)?;
    for card in 0..=max_card {
        let feasible = ctx.feasible_signatures(card);
        if feasible.is_empty() {
            continue;
        }
        let mut all: Vec<(Vec<Event>, Explanation)> = Vec::new();
        for sig in &feasible {
            let mut windows = ctx.full_windows(sig);
            ctx.all_timings(sig, &mut windows, 0, &mut |events, moves| {
                all.push((events.clone(), ctx.build(events, moves)));
            });
        }
        all.sort_by(|a, b| a.0.cmp(&b.0));
        return Ok(all.into_iter().map(|(_, e)| e).collect());
    }
    Err(DiagnosisError::NoDiagnosis(max_card))
}

/// True when `e` makes every observation of `h` expected.
pub fn is_consistent(h: &History, plan: &MultiAgentPlan, inst: &Instance, e: &Explanation) -> Result<bool, BeliefError> {
    let traj = project_with(h, plan, inst, e)?;
    Ok(violations(h, &traj).is_empty())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct EventKey {
    kind: EventKind,
    node: NodeId,
}

type Signature = Vec<EventKey>;

struct Context<'a> {
    h: &'a History,
    plan: &'a MultiAgentPlan,
    inst: &'a Instance,
    obs: Vec<Vec<(Fluent, bool)>>,
    initial: State,
    candidates: Vec<EventKey>,
    /// Events every consistent signature contains.
    required: Vec<EventKey>,
}

/// A DP node: projected state plus the set of signature events already fired.
#[derive(Clone)]
struct Node {
    state: State,
    fired: u32,
    parent: u32,
    moves: SmallVec<[(NodeId, LocId); 2]>,
}

impl<'a> Context<'a> {
    fn new(h: &'a History, plan: &'a MultiAgentPlan, inst: &'a Instance) -> Result<Self, BeliefError> {
        let owner = h.owner();
        let mut candidates = Vec::new();
        for n in inst.node_ids().filter(|&n| n != owner) {
            candidates.push(EventKey { kind: EventKind::Break, node: n });
        }
        for &u in inst.uavs().iter().filter(|&&u| u != owner) {
            candidates.push(EventKey { kind: EventKind::Aborted, node: u });
            candidates.push(EventKey { kind: EventKind::Unpredictable, node: u });
        }
        candidates.sort();
        let required = Self::forced_breaks(h, plan, inst)?;
        candidates.retain(|k| !required.contains(k));
        Ok(Self { h, plan, inst, obs: h.observations_by_step(), initial: initial_belief(h, inst)?, candidates, required })
    }

    /// Fixed nodes within direct range of the owner that it observed itself
    /// out of contact with. The owner's own course does not depend on any
    /// hypothesis, and only a break takes an in-range fixed node out of
    /// contact.
    fn forced_breaks(h: &History, plan: &MultiAgentPlan, inst: &Instance) -> Result<Vec<EventKey>, BeliefError> {
        let owner = h.owner();
        let traj = project_with(h, plan, inst, &Explanation::default())?;
        let mut forced = BTreeSet::new();
        for o in h.observations() {
            if let Fluent::InContact(a, n) = o.fluent {
                let n = if a == owner { n } else if n == owner { a } else { continue };
                if !o.value && n != owner && !inst.is_uav(n) {
                    let here = traj.states[o.step as usize].position(owner);
                    if inst.in_range(here, inst.node(n).location) {
                        forced.insert(EventKey { kind: EventKind::Break, node: n });
                    }
                }
            }
        }
        Ok(forced.into_iter().collect())
    }

    fn matches(&self, s: &State) -> bool {
        self.obs[s.step() as usize].iter().all(|(f, v)| s.holds(f) == *v)
    }

    fn signature_valid(sig: &[EventKey]) -> bool {
        sig.iter().all(|k| {
            k.kind != EventKind::Unpredictable
                || sig.iter().any(|o| o.kind == EventKind::Aborted && o.node == k.node)
        })
    }

    fn feasible_signatures(&self, card: usize) -> Vec<Signature> {
        let cur = self.h.current_step();
        if card > 0 && cur == 0 {
            return Vec::new();
        }
        let mut sigs = Vec::new();
        let Some(free) = card.checked_sub(self.required.len()) else { return sigs };
        combinations(&self.candidates, free, &mut |rest| {
            let mut sig: Signature = self.required.iter().chain(rest).copied().collect();
            sig.sort();
            if Self::signature_valid(&sig) {
                sigs.push(sig);
            }
        });
        let ok: Vec<bool> = sigs.par_iter().map(|sig| self.search(sig, &self.full_windows(sig)).is_some()).collect();
        sigs.into_iter().zip(ok).filter(|(_, ok)| *ok).map(|(s, _)| s).collect()
    }

    fn full_windows(&self, sig: &[EventKey]) -> Vec<(u32, u32)> {
        vec![(0, self.h.current_step().saturating_sub(1)); sig.len()]
    }

    /// Smallest step for each event in turn, keeping the rest feasible.
    fn lexmin_timing(&self, sig: &[EventKey]) -> Option<(Vec<Event>, Vec<HypothesizedMove>)> {
        let mut windows = self.full_windows(sig);
        for i in 0..sig.len() {
            let (lo, hi) = windows[i];
            let s = (lo..=hi).find(|&s| {
                let mut w = windows.clone();
                w[i] = (s, s);
                self.search(sig, &w).is_some()
            })?;
            windows[i] = (s, s);
        }
        let moves = self.search(sig, &windows)?;
        Some((events_of(sig, &windows), moves))
    }

    fn all_timings(
        &self,
        sig: &[EventKey],
        windows: &mut Vec<(u32, u32)>,
        i: usize,
        out: &mut dyn FnMut(&Vec<Event>, Vec<HypothesizedMove>),
    ) {
        if i == sig.len() {
            if let Some(moves) = self.search(sig, windows) {
                out(&events_of(sig, windows), moves);
            }
            return;
        }
        let (lo, hi) = windows[i];
        for s in lo..=hi {
            windows[i] = (s, s);
            if self.search(sig, windows).is_some() {
                self.all_timings(sig, windows, i + 1, out);
            }
        }
        windows[i] = (lo, hi);
    }

    fn build(&self, events: &[Event], moves: Vec<HypothesizedMove>) -> Explanation {
        let mut e = Explanation::default();
        for &ev in events {
            e.insert(ev);
        }
        e.moves = moves.into_iter().collect();
        debug_assert!(e.validate(self.h.current_step()).is_ok());
        e
    }

    /// Forward search over projected trajectories where the signature's
    /// events fire inside their windows. Returns the hypothesized moves of a
    /// witness trajectory, or `None` if no trajectory matches the history.
    fn search(&self, sig: &[EventKey], windows: &[(u32, u32)]) -> Option<Vec<HypothesizedMove>> {
        let owner = self.h.owner();
        let cur = self.h.current_step();
        let all: u32 = if sig.is_empty() { 0 } else { (1u32 << sig.len()) - 1 };
        if !self.matches(&self.initial) {
            return None;
        }
        let abort_bit = |u: NodeId| {
            sig.iter().position(|k| k.kind == EventKind::Aborted && k.node == u).map(|i| 1u32 << i)
        };
        let unpred_bit = |u: NodeId| {
            sig.iter().position(|k| k.kind == EventKind::Unpredictable && k.node == u).map(|i| 1u32 << i)
        };
        let mut layers: Vec<Vec<Node>> =
            vec![vec![Node { state: self.initial.clone(), fired: 0, parent: u32::MAX, moves: SmallVec::new() }]];
        for step in 0..cur {
            let frontier = layers.last().unwrap();
            let mut next: Vec<Node> = Vec::new();
            let mut index: HashMap<(StateKey, u32), ()> = HashMap::new();
            // events that may fire now, and those that must have fired by now
            let mut can_fire = 0u32;
            let mut must_fire = 0u32;
            for (i, &(lo, hi)) in windows.iter().enumerate() {
                if lo <= step && step <= hi {
                    can_fire |= 1 << i;
                }
                if hi <= step {
                    must_fire |= 1 << i;
                }
            }
            for (pi, node) in frontier.iter().enumerate() {
                let pending = all & !node.fired & can_fire;
                // iterate subsets of pending, largest first
                let mut sub = pending;
                loop {
                    let fired = node.fired | sub;
                    if fired & must_fire == must_fire && self.order_ok(sig, fired, node.fired) {
                        self.expand(node, pi, fired, sig, owner, &abort_bit, &unpred_bit, &mut |n| {
                            if self.matches(&n.state) && index.insert((n.state.key(), n.fired), ()).is_none() {
                                next.push(n);
                            }
                        });
                    }
                    if sub == 0 {
                        break;
                    }
                    sub = (sub - 1) & pending;
                }
            }
            if next.is_empty() {
                return None;
            }
            layers.push(next);
        }
        let last = layers.last().unwrap();
        let mut i = last.iter().position(|n| n.fired == all)?;
        let mut moves = Vec::new();
        for d in (1..layers.len()).rev() {
            let n = &layers[d][i];
            for &(uav, to) in &n.moves {
                moves.push(HypothesizedMove { uav, step: d as u32 - 1, to });
            }
            i = n.parent as usize;
        }
        moves.sort();
        Some(moves)
    }

    /// Unpredictable behavior may start only once the abort has happened.
    fn order_ok(&self, sig: &[EventKey], fired: u32, _before: u32) -> bool {
        sig.iter().enumerate().all(|(i, k)| {
            if k.kind != EventKind::Unpredictable || fired & (1 << i) == 0 {
                return true;
            }
            sig.iter()
                .position(|o| o.kind == EventKind::Aborted && o.node == k.node)
                .is_some_and(|j| fired & (1 << j) != 0)
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn expand(
        &self,
        node: &Node,
        parent: usize,
        fired: u32,
        sig: &[EventKey],
        owner: NodeId,
        abort_bit: &dyn Fn(NodeId) -> Option<u32>,
        unpred_bit: &dyn Fn(NodeId) -> Option<u32>,
        emit: &mut dyn FnMut(Node),
    ) {
        let inst = self.inst;
        let s = &node.state;
        let step = s.step();
        let mut moves: SmallVec<[(NodeId, LocId); 4]> = SmallVec::new();
        let mut wild: SmallVec<[NodeId; 2]> = SmallVec::new();
        for &u in inst.uavs() {
            let action = if u == owner {
                self.h.own_action_at(step)
            } else if abort_bit(u).is_some_and(|b| fired & b != 0) {
                if unpred_bit(u).is_some_and(|b| fired & b != 0) {
                    wild.push(u);
                }
                None
            } else {
                self.plan.action_at(u, step)
            };
            if let Some(a @ Action::Move { uav, to }) = action {
                if uav == u && legal(s, &a, inst) {
                    moves.push((u, to));
                }
            }
        }
        let mut breaks = NodeSet::EMPTY;
        for (i, k) in sig.iter().enumerate() {
            if k.kind == EventKind::Break && fired & (1 << i) != 0 && node.fired & (1 << i) == 0 {
                breaks.insert(k.node);
            }
        }
        // every course of moves for unpredictable UAVs: stay or go to a neighbor
        let options: Vec<SmallVec<[Option<LocId>; 8]>> = wild
            .iter()
            .map(|&u| std::iter::once(None).chain(inst.neighbors(s.position(u)).iter().map(|&l| Some(l))).collect())
            .collect();
        let mut choice = vec![0usize; wild.len()];
        loop {
            let mut all_moves = moves.clone();
            let mut hyp: SmallVec<[(NodeId, LocId); 2]> = SmallVec::new();
            for (i, &u) in wild.iter().enumerate() {
                if let Some(to) = options[i][choice[i]] {
                    all_moves.push((u, to));
                    hyp.push((u, to));
                }
            }
            let state = advance(s, &all_moves, breaks, ContactModel::Radio, inst);
            emit(Node { state, fired, parent: parent as u32, moves: hyp });
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
}

fn events_of(sig: &[EventKey], windows: &[(u32, u32)]) -> Vec<Event> {
    let mut v: Vec<Event> =
        sig.iter().zip(windows).map(|(k, &(s, _))| Event { kind: k.kind, node: k.node, step: s }).collect();
    v.sort();
    v
}

fn combinations<T: Copy>(items: &[T], k: usize, visit: &mut impl FnMut(&[T])) {
    fn rec<T: Copy>(items: &[T], k: usize, start: usize, cur: &mut Vec<T>, visit: &mut impl FnMut(&[T])) {
        if cur.len() == k {
            visit(cur);
            return;
        }
        for i in start..items.len() {
            if items.len() - i < k - cur.len() {
                break;
            }
            cur.push(items[i]);
            rec(items, k, i + 1, cur, visit);
            cur.pop();
        }
    }
    rec(items, k, 0, &mut Vec::with_capacity(k), visit);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::Observation;
    use crate::world::tests::line_instance;
    use crate::world::{initial_state, transition};

    #[test]
    fn combinations_in_lexicographic_order() {
        let mut out = Vec::new();
        combinations(&[1, 2, 3, 4], 2, &mut |c| out.push(c.to_vec()));
        assert_eq!(out, vec![vec![1, 2], vec![1, 3], vec![1, 4], vec![2, 3], vec![2, 4], vec![3, 4]]);
        let mut n = 0;
        combinations(&[1, 2], 0, &mut |_| n += 1);
        assert_eq!(n, 1);
    }

    /// UAV parked at home watches relay r2 (two hops away) until it vanishes.
    fn relay_history(lost_at: u32, cur: u32) -> (History, MultiAgentPlan) {
        let inst = line_instance();
        let u = NodeId(3);
        let mut h = History::new(u, &inst);
        for step in 0..=cur {
            let f = Fluent::InContact(u, NodeId(2));
            h.observe(Observation { step, fluent: f, value: step < lost_at }, &inst).unwrap();
            if step < cur {
                h.record(Action::Wait { uav: u }, step, &inst).unwrap();
            }
        }
        (h, MultiAgentPlan::empty(0))
    }

    #[test]
    fn consistent_history_is_not_explained() {
        let inst = line_instance();
        let (h, plan) = relay_history(10, 3);
        assert_eq!(explain(&h, &plan, &inst, 3), Err(DiagnosisError::NothingToExplain));
    }

    #[test]
    fn lost_relay_has_two_single_break_explanations() {
        // contact with r2 lost at step 3: either r1 or r2 broke at step 2
        let inst = line_instance();
        let (h, plan) = relay_history(3, 3);
        let all = enumerate_minimal(&h, &plan, &inst, 3).unwrap();
        let described: Vec<String> = all.iter().map(|e| e.describe(&inst)).collect();
        assert_eq!(described, vec!["break(r1)@2", "break(r2)@2"]);
        let e = explain(&h, &plan, &inst, 3).unwrap();
        assert_eq!(e, all[0]);
        assert!(is_consistent(&h, &plan, &inst, &e).unwrap());
    }

    #[test]
    fn break_window_spans_unobserved_steps() {
        // contact seen at step 0, then observations stop until step 3
        let inst = line_instance();
        let u = NodeId(3);
        let mut h = History::new(u, &inst);
        let f = Fluent::InContact(u, NodeId(2));
        h.observe(Observation { step: 0, fluent: f, value: true }, &inst).unwrap();
        h.observe(Observation { step: 3, fluent: f, value: false }, &inst).unwrap();
        let plan = MultiAgentPlan::empty(0);
        let all = enumerate_minimal(&h, &plan, &inst, 2).unwrap();
        let steps: Vec<(u16, u32)> = all.iter().map(|e| {
            let &(n, s) = e.breaks.iter().next().unwrap();
            (n.0, s)
        }).collect();
        assert_eq!(steps, vec![(1, 0), (1, 1), (1, 2), (2, 0), (2, 1), (2, 2)]);
    }

    #[test]
    fn no_diagnosis_within_bound() {
        let inst = line_instance();
        let (h, plan) = relay_history(3, 3);
        assert_eq!(explain(&h, &plan, &inst, 0), Err(DiagnosisError::NoDiagnosis(0)));
    }

    #[test]
    fn explanation_invariants() {
        let mut e = Explanation::default();
        e.unpredictables.insert((NodeId(1), 2));
        assert!(e.validate(5).is_err());
        e.aborts.insert((NodeId(1), 1));
        assert!(e.validate(5).is_ok());
        e.moves.insert(HypothesizedMove { uav: NodeId(1), step: 1, to: LocId(0) });
        assert!(e.validate(5).is_err());
        e.moves.clear();
        e.moves.insert(HypothesizedMove { uav: NodeId(1), step: 5, to: LocId(0) });
        assert!(e.validate(5).is_err());
        assert_eq!(e.cardinality(), 2);
    }

    #[test]
    fn matches_truth_for_simulated_break() {
        let inst = line_instance();
        let u = NodeId(3);
        let plan = MultiAgentPlan::empty(0);
        let mut truth = initial_state(&inst);
        let mut h = History::new(u, &inst);
        for step in 0..4 {
            for n in inst.node_ids().filter(|&n| n != u) {
                let f = Fluent::InContact(u, n);
                h.observe(Observation { step, fluent: f, value: truth.holds(&f) }, &inst).unwrap();
            }
            if step == 3 {
                break;
            }
            h.record(Action::Wait { uav: u }, step, &inst).unwrap();
            let ex = if step == 1 { vec![Action::Break { node: NodeId(2) }] } else { vec![] };
            truth = transition(&truth, &[Action::Wait { uav: u }], &ex, &inst).unwrap();
        }
        let e = explain(&h, &plan, &inst, 3).unwrap();
        assert_eq!(e.describe(&inst), "break(r2)@1");
    }
}
