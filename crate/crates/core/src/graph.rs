//! Temporal event knowledge graph: one event node per (augmented) fact,
//! timestamp nodes, entity / temporal-order / start-end edges, and the
//! boolean operators the random walk is built from.

use std::io::Write;
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::time::{Endpoint, Granularity, Interval, TemporalRelation, TimePoint};
use crate::tkg::{EntityId, Fact, PredicateId, Schema, Tkg, Vocabulary};

/// Sparse boolean square matrix stored by column: column `m` lists every
/// row `n` with entry `(n, m) = 1`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BoolCsc {
    n: usize,
    col_ptr: Vec<usize>,
    rows: Vec<u32>,
}

impl BoolCsc {
    /// `columns[m]` must be sorted and deduplicated.
    pub fn from_columns(n: usize, columns: &[Vec<u32>]) -> Self {
        debug_assert_eq!(columns.len(), n);
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut rows = Vec::new();
        col_ptr.push(0);
        for col in columns {
            rows.extend_from_slice(col);
            col_ptr.push(rows.len());
        }
        BoolCsc { n, col_ptr, rows }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    pub fn col(&self, m: usize) -> &[u32] {
        &self.rows[self.col_ptr[m]..self.col_ptr[m + 1]]
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.col(col).binary_search(&(row as u32)).is_ok()
    }

    /// `M x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, 1.0, &mut y);
        y
    }

    /// `y += scale * M x`.
    pub fn matvec_into(&self, x: &[f64], scale: f64, y: &mut [f64]) {
        for (m, &xm) in x.iter().enumerate() {
            if xm == 0.0 {
                continue;
            }
            let v = scale * xm;
            for &n in self.col(m) {
                y[n as usize] += v;
            }
        }
    }

    /// `x += scale * Mᵀ g`.
    pub fn matvec_transpose_into(&self, g: &[f64], scale: f64, x: &mut [f64]) {
        for (m, xm) in x.iter_mut().enumerate() {
            let s: f64 = self.col(m).iter().map(|&n| g[n as usize]).sum();
            *xm += scale * s;
        }
    }

    pub fn filter(&self, mut keep: impl FnMut(usize, usize) -> bool) -> BoolCsc {
        let columns: Vec<Vec<u32>> = (0..self.n)
            .map(|m| {
                self.col(m)
                    .iter()
                    .copied()
                    .filter(|&n| keep(n as usize, m))
                    .collect()
            })
            .collect();
        BoolCsc::from_columns(self.n, &columns)
    }

    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        let mut d = vec![vec![false; self.n]; self.n];
        for m in 0..self.n {
            for &n in self.col(m) {
                d[n as usize][m] = true;
            }
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventNode {
    pub fact_id: usize,
    pub is_mirror: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeEdge {
    pub event: usize,
    /// Index into [`TekgGraph::timestamps`].
    pub timestamp: usize,
    pub kind: Endpoint,
}

/// `M_P`: diagonal selecting events whose predicate is `P`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateOperator {
    pub predicate: PredicateId,
    pub diag: Vec<bool>,
}

impl PredicateOperator {
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.diag)
            .map(|(&x, &d)| if d { x } else { 0.0 })
            .collect()
    }
}

/// `M_{E,TR}`: entry `(n, m)` is 1 iff an entity edge runs from `F_m` to
/// `F_n` and `TR(I_m, I_n)` holds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeOperator {
    pub relation: TemporalRelation,
    pub matrix: BoolCsc,
}

#[derive(Debug, Clone)]
pub struct TekgGraph {
    facts: Vec<Fact>,
    vocab: Vocabulary,
    schema: Schema,
    granularity: Granularity,
    events: Vec<EventNode>,
    timestamps: Vec<TimePoint>,
    entity_edges: BoolCsc,
    order_edges: Vec<(TimePoint, TimePoint)>,
    time_edges: Vec<TimeEdge>,
    by_subject: Vec<Vec<u32>>,
    by_object: Vec<Vec<u32>>,
}

/// Converts an inverse-augmented TKG into its event graph. Node `m` is
/// fact `m`.
pub fn build_tekg(g: &Tkg) -> Result<TekgGraph> {
    if !g.is_augmented() && !g.is_empty() {
        return Err(Error::NotAugmented);
    }
    let n = g.len();
    let num_entities = g.vocab().entities.len();
    let mut by_subject = vec![Vec::new(); num_entities];
    let mut by_object = vec![Vec::new(); num_entities];
    for f in g.facts() {
        by_subject[f.subject.0 as usize].push(f.id as u32);
        by_object[f.object.0 as usize].push(f.id as u32);
    }
    let columns: Vec<Vec<u32>> = g
        .facts()
        .iter()
        .map(|f| by_subject[f.object.0 as usize].clone())
        .collect();
    let entity_edges = BoolCsc::from_columns(n, &columns);

    let mut timestamps: Vec<TimePoint> = g
        .facts()
        .iter()
        .flat_map(|f| [f.time.start, f.time.end])
        .flatten()
        .collect();
    timestamps.sort_unstable();
    timestamps.dedup();
    let order_edges = timestamps.windows(2).map(|w| (w[0], w[1])).collect();
    let mut time_edges = Vec::new();
    for f in g.facts() {
        for kind in [Endpoint::Start, Endpoint::End] {
            if let Some(t) = f.time.endpoint(kind) {
                let timestamp = timestamps.binary_search(&t).expect("collected above");
                time_edges.push(TimeEdge {
                    event: f.id,
                    timestamp,
                    kind,
                });
            }
        }
    }
    let events = g
        .facts()
        .iter()
        .map(|f| EventNode {
            fact_id: f.id,
            is_mirror: g.is_inverse(f.predicate),
        })
        .collect();
    Ok(TekgGraph {
        facts: g.facts().to_vec(),
        vocab: g.vocab().clone(),
        schema: g.schema(),
        granularity: g.granularity(),
        events,
        timestamps,
        entity_edges,
        order_edges,
        time_edges,
        by_subject,
        by_object,
    })
}

impl TekgGraph {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[EventNode] {
        &self.events
    }

    pub fn fact(&self, m: usize) -> &Fact {
        &self.facts[m]
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn schema(&self) -> Schema {
        self.schema
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn num_base_predicates(&self) -> usize {
        self.vocab.num_base_predicates()
    }

    pub fn num_predicates(&self) -> usize {
        2 * self.num_base_predicates()
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.entities.len()
    }

    pub fn inverse(&self, p: PredicateId) -> PredicateId {
        crate::tkg::inverse_predicate(p, self.num_base_predicates())
    }

    pub fn mirror(&self, m: usize) -> usize {
        let half = self.facts.len() / 2;
        if m < half {
            m + half
        } else {
            m - half
        }
    }

    pub fn timestamps(&self) -> &[TimePoint] {
        &self.timestamps
    }

    pub fn entity_edges(&self) -> &BoolCsc {
        &self.entity_edges
    }

    pub fn order_edges(&self) -> &[(TimePoint, TimePoint)] {
        &self.order_edges
    }

    pub fn time_edges(&self) -> &[TimeEdge] {
        &self.time_edges
    }

    pub fn has_entity_edge(&self, from: usize, to: usize) -> bool {
        self.facts[from].object == self.facts[to].subject
    }

    /// Events whose subject is `e`, ascending.
    pub fn events_with_subject(&self, e: EntityId) -> &[u32] {
        self.by_subject.get(e.0 as usize).map_or(&[], Vec::as_slice)
    }

    /// Events whose object is `e`, ascending.
    pub fn events_with_object(&self, e: EntityId) -> &[u32] {
        self.by_object.get(e.0 as usize).map_or(&[], Vec::as_slice)
    }

    pub fn predicate_operator(&self, p: PredicateId) -> Result<PredicateOperator> {
        if p.index() >= self.num_predicates() {
            return Err(Error::UnknownPredicate(p.0));
        }
        Ok(PredicateOperator {
            predicate: p,
            diag: self.facts.iter().map(|f| f.predicate == p).collect(),
        })
    }

    pub fn edge_operator(&self, tr: TemporalRelation) -> EdgeOperator {
        let matrix = match tr {
            TemporalRelation::Any => self.entity_edges.clone(),
            tr => self
                .entity_edges
                .filter(|n, m| tr.holds(&self.facts[m].time, &self.facts[n].time)),
        };
        EdgeOperator {
            relation: tr,
            matrix,
        }
    }

    /// Line-oriented listing of nodes then edges.
    pub fn write_dump(&self, mut out: impl Write) -> Result<()> {
        let fmt = |t: Option<TimePoint>| crate::dataset::format_time(t, self.granularity);
        for (m, f) in self.facts.iter().enumerate() {
            writeln!(
                out,
                "event\t{m}\t{}\t{}\t{}\t{}\t{}\t{}",
                self.vocab.entity_name(f.subject),
                self.vocab.predicate_name(f.predicate),
                self.vocab.entity_name(f.object),
                fmt(f.time.start),
                fmt(f.time.end),
                if self.events[m].is_mirror { "mirror" } else { "base" },
            )?;
        }
        for (i, t) in self.timestamps.iter().enumerate() {
            writeln!(out, "time\t{i}\t{}", fmt(Some(*t)))?;
        }
        for m in 0..self.len() {
            for &n in self.entity_edges.col(m) {
                writeln!(out, "entity_edge\t{m}\t{n}")?;
            }
        }
        for (a, b) in &self.order_edges {
            writeln!(out, "order_edge\t{}\t{}", fmt(Some(*a)), fmt(Some(*b)))?;
        }
        for e in &self.time_edges {
            let tag = match e.kind {
                Endpoint::Start => "start_edge",
                Endpoint::End => "end_edge",
            };
            writeln!(out, "{tag}\t{}\t{}", e.event, e.timestamp)?;
        }
        Ok(())
    }
}

/// A walk over the TKG read off an event path: `entities[k]` is the shared
/// entity before `facts[k]`, so `entities.len() == facts.len() + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TkgPath {
    pub entities: Vec<EntityId>,
    pub facts: Vec<usize>,
}

pub fn tekg_path_to_tkg(g: &TekgGraph, path: &[usize]) -> Result<TkgPath> {
    let first = *path.first().ok_or(Error::EmptyInput)?;
    if let Some(&bad) = path.iter().find(|&&m| m >= g.len()) {
        return Err(Error::UnknownEvent(bad));
    }
    let mut entities = vec![g.fact(first).subject];
    for (k, w) in path.windows(2).enumerate() {
        if !g.has_entity_edge(w[0], w[1]) {
            return Err(Error::NotAdjacent { at: k });
        }
    }
    for &m in path {
        entities.push(g.fact(m).object);
    }
    Ok(TkgPath {
        entities,
        facts: path.to_vec(),
    })
}

/// Records which events had their fact data read.
#[derive(Debug, Default)]
pub struct AccessLog {
    events: Mutex<Vec<usize>>,
}

impl AccessLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, m: usize) {
        self.events.lock().expect("access log poisoned").push(m);
    }

    pub fn events(&self) -> Vec<usize> {
        let mut v = self.events.lock().expect("access log poisoned").clone();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn clear(&self) {
        self.events.lock().expect("access log poisoned").clear();
    }
}

/// Read access to a graph, optionally restricted to events starting
/// strictly before a cutoff and optionally logging every fact read.
#[derive(Debug, Clone, Copy)]
pub struct GraphView<'g> {
    graph: &'g TekgGraph,
    cutoff: Option<TimePoint>,
    log: Option<&'g AccessLog>,
}

impl<'g> GraphView<'g> {
    pub fn new(graph: &'g TekgGraph) -> Self {
        GraphView {
            graph,
            cutoff: None,
            log: None,
        }
    }

    pub fn with_cutoff(mut self, cutoff: Option<TimePoint>) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn with_log(mut self, log: &'g AccessLog) -> Self {
        self.log = Some(log);
        self
    }

    pub fn graph(&self) -> &'g TekgGraph {
        self.graph
    }

    pub fn cutoff(&self) -> Option<TimePoint> {
        self.cutoff
    }

    pub fn is_visible(&self, m: usize) -> bool {
        match self.cutoff {
            None => true,
            Some(c) => matches!(self.graph.facts[m].time.start, Some(s) if s < c),
        }
    }

    /// Fact data of a visible event.
    pub fn fact(&self, m: usize) -> &'g Fact {
        debug_assert!(self.is_visible(m), "read of hidden event {m}");
        if let Some(log) = self.log {
            log.record(m);
        }
        &self.graph.facts[m]
    }

    pub fn interval(&self, m: usize) -> Interval {
        self.fact(m).time
    }

    pub fn visible_with_subject(&self, e: EntityId) -> impl Iterator<Item = usize> + '_ {
        self.graph
            .events_with_subject(e)
            .iter()
            .map(|&n| n as usize)
            .filter(move |&n| self.is_visible(n))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::tkg::{add_inverse_facts, Quad};

    /// Three-fact study/work graph: F1..F3 are ids 0..2, mirrors 3..5.
    pub(crate) fn student_graph() -> TekgGraph {
        let mut vocab = Vocabulary::default();
        let mut q = |s: &str, p: &str, o: &str, a: i64, b: i64| Quad {
            subject: EntityId(vocab.entities.intern(s)),
            predicate: PredicateId(vocab.predicates.intern(p)),
            object: EntityId(vocab.entities.intern(o)),
            time: Interval::known(a, b).unwrap(),
        };
        let quads = vec![
            q("Jackson", "StudyIn", "Harvard", 2018, 2021),
            q("Nancy", "StudyIn", "Harvard", 2020, 2023),
            q("Jackson", "WorkIn", "New York", 2021, 2023),
        ];
        let tkg = Tkg::new(vocab, quads, Schema::Interval, Granularity::Year).unwrap();
        build_tekg(&add_inverse_facts(tkg).unwrap()).unwrap()
    }

    const F1: usize = 0;
    const F2: usize = 1;
    const F3: usize = 2;
    const F1I: usize = 3;
    const F2I: usize = 4;
    const F3I: usize = 5;

    #[test]
    fn student_graph_entity_edges() {
        let g = student_graph();
        let e = g.entity_edges();
        for (m, n) in [
            (F1, F1I),
            (F1, F2I),
            (F2I, F2),
            (F1I, F1),
            (F1I, F3),
            (F3, F3I),
            (F3I, F1),
        ] {
            assert!(e.contains(n, m), "missing edge {m}->{n}");
        }
        // exhaustive: obj(m) == subj(n)
        let mut count = 0;
        for m in 0..6 {
            for n in 0..6 {
                assert_eq!(e.contains(n, m), g.has_entity_edge(m, n));
                count += usize::from(g.has_entity_edge(m, n));
            }
        }
        assert_eq!(count, e.nnz());
        assert_eq!(count, 10);
    }

    #[test]
    fn order_edges_chain_timestamps() {
        let g = student_graph();
        let t = |v| TimePoint(v);
        assert_eq!(
            g.order_edges(),
            &[(t(2018), t(2020)), (t(2020), t(2021)), (t(2021), t(2023))]
        );
        assert_eq!(g.time_edges().len(), 12);
    }

    #[test]
    fn mirror_flags() {
        let g = student_graph();
        assert!(!g.events()[F1].is_mirror);
        assert!(g.events()[F1I].is_mirror);
        assert_eq!(g.mirror(F2), F2I);
    }

    #[test]
    fn predicate_operator_marks_study_in() {
        let g = student_graph();
        let study = g.vocab().predicate_id("StudyIn").unwrap();
        let op = g.predicate_operator(study).unwrap();
        assert_eq!(op.diag, vec![true, true, false, false, false, false]);
        let v = vec![0.3, 0.1, 0.7, 0.2, 0.5, 0.9];
        let once = op.apply(&v);
        assert_eq!(op.apply(&once), once);
        assert!(matches!(
            g.predicate_operator(PredicateId(99)),
            Err(Error::UnknownPredicate(99))
        ));
    }

    #[test]
    fn overlap_operator_links_f1_to_f2_mirror() {
        let g = student_graph();
        let op = g.edge_operator(TemporalRelation::Overlap);
        assert!(op.matrix.contains(F2I, F1));
        let any = g.edge_operator(TemporalRelation::Any);
        assert_eq!(&any.matrix, g.entity_edges());
    }

    #[test]
    fn path_correspondence_on_student_graph() {
        let g = student_graph();
        let p = tekg_path_to_tkg(&g, &[F1, F2I, F2, F1I]).unwrap();
        let names: Vec<_> = p.entities.iter().map(|&e| g.vocab().entity_name(e)).collect();
        assert_eq!(names, ["Jackson", "Harvard", "Nancy", "Harvard", "Jackson"]);
        let single = tekg_path_to_tkg(&g, &[F3]).unwrap();
        assert_eq!(single.entities.len(), 2);
        assert!(matches!(
            tekg_path_to_tkg(&g, &[F1, F3]),
            Err(Error::NotAdjacent { at: 0 })
        ));
    }

    #[test]
    fn mirror_symmetry() {
        let g = student_graph();
        for m in 0..g.len() {
            for n in 0..g.len() {
                assert_eq!(
                    g.has_entity_edge(m, n),
                    g.has_entity_edge(g.mirror(n), g.mirror(m))
                );
            }
        }
    }

    #[test]
    fn cutoff_view_hides_late_events() {
        let g = student_graph();
        let log = AccessLog::new();
        let view = GraphView::new(&g).with_cutoff(Some(TimePoint(2020))).with_log(&log);
        let harvard = g.fact(F1).object;
        let visible: Vec<_> = view.visible_with_subject(harvard).collect();
        assert_eq!(visible, vec![F1I]);
        let _ = view.fact(F1I);
        assert_eq!(log.events(), vec![F1I]);
    }

    #[test]
    fn dump_lists_nodes_then_edges() {
        let g = student_graph();
        let mut buf = Vec::new();
        g.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("event\t0\tJackson\tStudyIn\tHarvard\t2018\t2021\tbase"));
        assert_eq!(text.lines().filter(|l| l.starts_with("entity_edge")).count(), 10);
    }

    #[test]
    fn empty_graph_builds() {
        let tkg = Tkg::new(Vocabulary::default(), [], Schema::Interval, Granularity::Year).unwrap();
        let g = build_tekg(&tkg).unwrap();
        assert!(g.is_empty());
    }
}
