use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::graph::{BoolCsc, GraphView};
use crate::time::{Interval, TemporalRelation};
use crate::tkg::PredicateId;

use super::{MinerConfig, QueryAnchor, RulePattern};

/// Which end of the query a walk leaves from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Query,
    Mirror,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Query, Side::Mirror];

    /// Local slot holding this side's anchor.
    pub fn slot(self) -> usize {
        self as usize
    }
}

/// Complete groundings of one pattern from one side, summarized by how many
/// paths start and end at each slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternGrounding {
    /// Index into the pattern list the local graph was built from.
    pub pattern: usize,
    pub first: Vec<(usize, f64)>,
    pub last: Vec<(usize, f64)>,
    pub total: f64,
}

/// Query-centred subgraph. Slot 0 is the query anchor and slot 1 its
/// mirror; both only have outgoing `Any` edges. Slots from 2 on are body
/// events, in ascending global id order.
#[derive(Debug, Clone)]
pub struct LocalGraph {
    anchors: [QueryAnchor; 2],
    globals: Vec<Option<usize>>,
    index: HashMap<usize, usize>,
    predicates: Vec<PredicateId>,
    intervals: Vec<Interval>,
    operators: [BoolCsc; TemporalRelation::COUNT],
    returns: [Vec<bool>; 2],
    groundings: [Vec<PatternGrounding>; 2],
}

impl LocalGraph {
    pub fn len(&self) -> usize {
        self.globals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.globals.len() <= 2
    }

    pub fn anchor(&self, side: Side) -> &QueryAnchor {
        &self.anchors[side as usize]
    }

    /// Global ids of the body events.
    pub fn body(&self) -> impl Iterator<Item = usize> + '_ {
        self.globals.iter().flatten().copied()
    }

    pub fn global(&self, slot: usize) -> Option<usize> {
        self.globals[slot]
    }

    pub fn slot_of(&self, global: usize) -> Option<usize> {
        self.index.get(&global).copied()
    }

    pub fn predicate(&self, slot: usize) -> PredicateId {
        self.predicates[slot]
    }

    pub fn predicates(&self) -> &[PredicateId] {
        &self.predicates
    }

    pub fn interval(&self, slot: usize) -> Interval {
        self.intervals[slot]
    }

    pub fn operator(&self, tr: TemporalRelation) -> &BoolCsc {
        &self.operators[tr.index()]
    }

    /// Slots whose object is the side anchor's subject, i.e. events that
    /// close a cycle.
    pub fn returns(&self, side: Side) -> &[bool] {
        &self.returns[side as usize]
    }

    pub fn groundings(&self, side: Side) -> &[PatternGrounding] {
        &self.groundings[side as usize]
    }

    /// Complete paths of `pattern` from `side`, as slot sequences, in
    /// depth-first order, at most `cap` of them.
    pub fn enumerate_paths(&self, side: Side, pattern: &RulePattern, cap: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut stack = Vec::with_capacity(pattern.len());
        self.dfs(side, pattern, side.slot(), &mut stack, &mut out, cap);
        out
    }

    fn dfs(
        &self,
        side: Side,
        pattern: &RulePattern,
        at: usize,
        stack: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
        cap: usize,
    ) {
        if out.len() >= cap {
            return;
        }
        let k = stack.len();
        if k == pattern.len() {
            if self.returns(side)[at] {
                out.push(stack.clone());
            }
            return;
        }
        let op = if k == 0 {
            self.operator(TemporalRelation::Any)
        } else {
            self.operator(pattern.relations[k - 1])
        };
        for &n in op.col(at) {
            let n = n as usize;
            if n < 2 || self.predicates[n] != pattern.body[k] {
                continue;
            }
            stack.push(n);
            self.dfs(side, pattern, n, stack, out, cap);
            stack.pop();
            if out.len() >= cap {
                return;
            }
        }
    }
}

struct Frontiers {
    /// `levels[k]`: events reachable at body position `k`.
    levels: Vec<BTreeSet<usize>>,
    /// `steps[k]`: edges from position `k` to `k + 1`.
    steps: Vec<Vec<(usize, usize)>>,
}

fn propagate(
    view: &GraphView<'_>,
    anchor: &QueryAnchor,
    pattern: &RulePattern,
    cfg: &MinerConfig,
) -> Frontiers {
    let g = view.graph();
    let mut levels = Vec::with_capacity(pattern.len());
    let mut steps = Vec::new();
    let first: BTreeSet<usize> = view
        .visible_with_subject(anchor.object)
        .filter(|&n| anchor.allows(g, cfg.mask, 0, n) && view.fact(n).predicate == pattern.body[0])
        .collect();
    levels.push(first);
    for k in 1..pattern.len() {
        let tr = pattern.relations[k - 1];
        let mut next = BTreeSet::new();
        let mut edges = Vec::new();
        for &m in &levels[k - 1] {
            let fm = view.fact(m);
            for n in view.visible_with_subject(fm.object) {
                if !anchor.allows(g, cfg.mask, k, n) {
                    continue;
                }
                let fnn = view.fact(n);
                if fnn.predicate == pattern.body[k] && tr.holds(&fm.time, &fnn.time) {
                    next.insert(n);
                    edges.push((m, n));
                }
            }
        }
        let empty = next.is_empty();
        levels.push(next);
        steps.push(edges);
        if empty {
            break;
        }
    }
    Frontiers { levels, steps }
}

/// Path counts from the frontiers: forward counts give how many prefixes
/// end at each last event, backward counts how many completions leave each
/// first event.
fn count_paths(
    view: &GraphView<'_>,
    anchor: &QueryAnchor,
    f: &Frontiers,
    l: usize,
) -> Option<(BTreeMap<usize, f64>, BTreeMap<usize, f64>, f64)> {
    if f.levels.len() < l || f.levels[l - 1].is_empty() {
        return None;
    }
    let closes = |n: usize| view.fact(n).object == anchor.subject;
    let mut fw: BTreeMap<usize, f64> = f.levels[0].iter().map(|&n| (n, 1.0)).collect();
    for edges in &f.steps {
        let mut next = BTreeMap::new();
        for &(m, n) in edges {
            *next.entry(n).or_insert(0.0) += fw[&m];
        }
        fw = next;
    }
    let last: BTreeMap<usize, f64> = fw.into_iter().filter(|&(n, _)| closes(n)).collect();
    let total: f64 = last.values().sum();
    if total == 0.0 {
        return None;
    }
    let mut bw: BTreeMap<usize, f64> = last.keys().map(|&n| (n, 1.0)).collect();
    for edges in f.steps.iter().rev() {
        let mut prev = BTreeMap::new();
        for &(m, n) in edges {
            if let Some(&c) = bw.get(&n) {
                *prev.entry(m).or_insert(0.0) += c;
            }
        }
        bw = prev;
    }
    Some((bw, last, total))
}

/// Builds the local graph of `anchor` from every event that lies on a
/// prefix of a pattern whose head matches the anchor (query side) or its
/// inverse (mirror side). Induced operators are the global operators
/// restricted to that event set.
pub fn build_local_graph(
    view: &GraphView<'_>,
    anchor: &QueryAnchor,
    patterns: &[RulePattern],
    cfg: &MinerConfig,
) -> LocalGraph {
    let g = view.graph();
    let anchors = [*anchor, anchor.mirror(g)];
    let mut members = BTreeSet::new();
    let mut raw: [Vec<(usize, BTreeMap<usize, f64>, BTreeMap<usize, f64>, f64)>; 2] =
        [Vec::new(), Vec::new()];
    for side in Side::BOTH {
        let a = &anchors[side as usize];
        for (pi, p) in patterns.iter().enumerate() {
            if p.head != a.predicate {
                continue;
            }
            let fr = propagate(view, a, p, cfg);
            for level in &fr.levels {
                members.extend(level.iter().copied());
            }
            if let Some((first, last, total)) = count_paths(view, a, &fr, p.len()) {
                raw[side as usize].push((pi, first, last, total));
            }
        }
    }

    let mut globals: Vec<Option<usize>> = vec![None, None];
    globals.extend(members.iter().map(|&m| Some(m)));
    let index: HashMap<usize, usize> = members.iter().enumerate().map(|(i, &m)| (m, i + 2)).collect();
    let n = globals.len();
    let mut predicates = vec![anchors[0].predicate, anchors[1].predicate];
    let mut intervals = vec![Interval::unknown(); 2];
    for &m in &members {
        let f = view.fact(m);
        predicates.push(f.predicate);
        intervals.push(f.time);
    }

    let mut cols: [Vec<Vec<u32>>; TemporalRelation::COUNT] = std::array::from_fn(|_| vec![Vec::new(); n]);
    for (s, a) in anchors.iter().enumerate() {
        let any = &mut cols[TemporalRelation::Any.index()][s];
        for succ in view.visible_with_subject(a.object) {
            if let Some(&j) = index.get(&succ) {
                if a.allows(g, cfg.mask, 0, succ) {
                    any.push(j as u32);
                }
            }
        }
        any.sort_unstable();
    }
    for (&m, i) in members.iter().zip(2usize..) {
        let obj = view.fact(m).object;
        for succ in view.visible_with_subject(obj) {
            let Some(&j) = index.get(&succ) else { continue };
            for tr in TemporalRelation::ALL {
                if tr.holds(&intervals[i], &intervals[j]) {
                    cols[tr.index()][i].push(j as u32);
                }
            }
        }
        for c in cols.iter_mut() {
            c[i].sort_unstable();
        }
    }
    let operators = cols.map(|c| BoolCsc::from_columns(n, &c));

    let returns = std::array::from_fn(|s| {
        globals
            .iter()
            .map(|slot| slot.is_some_and(|m| g.fact(m).object == anchors[s].subject))
            .collect()
    });
    let groundings = raw.map(|list| {
        list.into_iter()
            .map(|(pattern, first, last, total)| PatternGrounding {
                pattern,
                first: first.into_iter().map(|(m, c)| (index[&m], c)).collect(),
                last: last.into_iter().map(|(m, c)| (index[&m], c)).collect(),
                total,
            })
            .collect()
    });

    LocalGraph {
        anchors,
        globals,
        index,
        predicates,
        intervals,
        operators,
        returns,
        groundings,
    }
}
