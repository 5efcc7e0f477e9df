//! Cyclic random-walk rule mining and per-query local graphs.

mod local;
mod pattern;

pub use local::{build_local_graph, LocalGraph, PatternGrounding, Side};
pub use pattern::{
    extract_rule_patterns, pattern_of, read_rules, validate_path, write_paths, write_rules,
    GroundedPath, PatternSupport, RulePattern,
};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphView, TekgGraph};
use crate::time::{Interval, TimePoint};
use crate::tkg::{EntityId, PredicateId, Schema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transition {
    Uniform,
    Exponential,
}

/// Which events a walk from an anchor may not use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPolicy {
    /// The first hop may not enter the anchor's own mirror.
    MirrorExcluded,
    /// Neither the anchor event nor its mirror appears anywhere in a body.
    QueryHidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinerConfig {
    pub max_length: usize,
    pub walks_per_predicate: usize,
    pub walks_per_query: usize,
    pub transition: Transition,
    /// Per granularity unit; `None` derives it from the data.
    pub exponential_rate: Option<f64>,
    pub min_support: usize,
    pub mask: MaskPolicy,
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig {
            max_length: 3,
            walks_per_predicate: 2000,
            walks_per_query: 10,
            transition: Transition::Uniform,
            exponential_rate: None,
            min_support: 2,
            mask: MaskPolicy::MirrorExcluded,
        }
    }
}

impl MinerConfig {
    /// Uniform transitions for interval data, exponential for timestamps.
    pub fn for_schema(schema: Schema) -> Self {
        MinerConfig {
            transition: match schema {
                Schema::Interval => Transition::Uniform,
                Schema::Timestamp => Transition::Exponential,
            },
            ..MinerConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_length == 0 {
            return Err(Error::Config("max_length must be at least 1".into()));
        }
        if self.walks_per_predicate == 0 || self.walks_per_query == 0 {
            return Err(Error::Config("walk counts must be at least 1".into()));
        }
        if let Some(r) = self.exponential_rate {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("exponential_rate must be positive, got {r}")));
            }
        }
        Ok(())
    }
}

/// The query a walk starts from. `event` is set when the query is itself a
/// fact in the graph; the anchor's interval is never consulted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QueryAnchor {
    pub subject: EntityId,
    pub predicate: PredicateId,
    pub object: EntityId,
    pub event: Option<usize>,
}

impl QueryAnchor {
    pub fn from_event(g: &TekgGraph, m: usize) -> Self {
        let f = g.fact(m);
        QueryAnchor {
            subject: f.subject,
            predicate: f.predicate,
            object: f.object,
            event: Some(m),
        }
    }

    pub fn mirror(&self, g: &TekgGraph) -> Self {
        QueryAnchor {
            subject: self.object,
            predicate: g.inverse(self.predicate),
            object: self.subject,
            event: self.event.map(|m| g.mirror(m)),
        }
    }

    /// Whether body position `k` (0-based) may hold event `n`.
    pub fn allows(&self, g: &TekgGraph, mask: MaskPolicy, k: usize, n: usize) -> bool {
        let Some(e) = self.event else { return true };
        match mask {
            MaskPolicy::MirrorExcluded => k > 0 || n != g.mirror(e),
            MaskPolicy::QueryHidden => n != e && n != g.mirror(e),
        }
    }
}

/// Next-hop probabilities. Exponential weights decay with the absolute
/// start-time gap to the current event; candidates with an unknown start
/// take the largest observed gap.
pub fn transition_weights(
    current: Option<TimePoint>,
    candidates: &[Option<TimePoint>],
    mode: Transition,
    rate: f64,
) -> Vec<f64> {
    let n = candidates.len();
    if n == 0 {
        return Vec::new();
    }
    let uniform = vec![1.0 / n as f64; n];
    let (Transition::Exponential, Some(cur)) = (mode, current) else {
        return uniform;
    };
    let gaps: Vec<Option<f64>> = candidates
        .iter()
        .map(|c| c.map(|t| (t.0 - cur.0).abs() as f64))
        .collect();
    let max_gap = gaps.iter().flatten().copied().fold(0.0, f64::max);
    let min_gap = gaps.iter().flatten().copied().fold(max_gap, f64::min);
    let w: Vec<f64> = gaps
        .iter()
        .map(|g| (-rate * (g.unwrap_or(max_gap) - min_gap)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// `1 / median |Δstart|` over entity edges with known starts; 1 when no
/// such edge has a positive gap.
pub fn default_exponential_rate(g: &TekgGraph) -> f64 {
    let mut gaps = Vec::new();
    for m in 0..g.len() {
        let Some(a) = g.fact(m).time.start else { continue };
        for &n in g.entity_edges().col(m) {
            if let Some(b) = g.fact(n as usize).time.start {
                gaps.push((b.0 - a.0).abs());
            }
        }
    }
    if gaps.is_empty() {
        return 1.0;
    }
    let mid = gaps.len() / 2;
    let (_, median, _) = gaps.select_nth_unstable(mid);
    if *median > 0 {
        1.0 / *median as f64
    } else {
        1.0
    }
}

/// One walk of exactly `length` hops from `anchor`; `None` unless it
/// closes back at the anchor's subject.
pub fn sample_walk(
    view: &GraphView<'_>,
    anchor: &QueryAnchor,
    length: usize,
    cfg: &MinerConfig,
    rate: f64,
    rng: &mut impl Rng,
) -> Option<GroundedPath> {
    let g = view.graph();
    let mut events = Vec::with_capacity(length);
    let mut at = anchor.object;
    let mut current: Option<TimePoint> = anchor.event.and_then(|m| view.fact(m).time.start);
    for k in 0..length {
        let cands: Vec<usize> = view
            .visible_with_subject(at)
            .filter(|&n| anchor.allows(g, cfg.mask, k, n))
            .collect();
        if cands.is_empty() {
            return None;
        }
        let pick = if cfg.transition == Transition::Uniform || current.is_none() {
            rng.random_range(0..cands.len())
        } else {
            let starts: Vec<_> = cands.iter().map(|&n| view.fact(n).time.start).collect();
            let w = transition_weights(current, &starts, cfg.transition, rate);
            WeightedIndex::new(&w).ok()?.sample(rng)
        };
        let n = cands[pick];
        let f = view.fact(n);
        events.push(n);
        at = f.object;
        current = f.time.start;
    }
    if at != anchor.subject {
        return None;
    }
    let intervals: Vec<Interval> = events.iter().map(|&m| view.fact(m).time).collect();
    let pattern = pattern_of(g, anchor.predicate, &events).ok()?;
    Some(GroundedPath {
        query: anchor.event.unwrap_or(usize::MAX),
        events,
        intervals,
        pattern,
    })
}

/// `walks_per_query` walks, each from the query or its mirror (chosen at
/// random) with a length drawn uniformly from `1..=max_length`.
pub fn sample_cyclic_walks(
    view: &GraphView<'_>,
    query: usize,
    cfg: &MinerConfig,
    seed: u64,
) -> Vec<GroundedPath> {
    let g = view.graph();
    let rate = cfg.exponential_rate.unwrap_or_else(|| default_exponential_rate(g));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchor = QueryAnchor::from_event(g, query);
    let mirror = anchor.mirror(g);
    (0..cfg.walks_per_query)
        .filter_map(|_| {
            let side = if rng.random_bool(0.5) { &mirror } else { &anchor };
            let l = rng.random_range(1..=cfg.max_length);
            sample_walk(view, side, l, cfg, rate, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MiningOutcome {
    pub paths: Vec<GroundedPath>,
    pub patterns: Vec<PatternSupport>,
}

/// `walks_per_predicate` walks per base predicate, each from a random fact
/// of that predicate. Predicates run in parallel with independent streams,
/// so the outcome depends only on `seed`.
pub fn mine(g: &TekgGraph, cfg: &MinerConfig, seed: u64) -> Result<MiningOutcome> {
    cfg.validate()?;
    let rate = cfg.exponential_rate.unwrap_or_else(|| default_exponential_rate(g));
    let view = GraphView::new(g);
    let n = g.num_base_predicates();
    let mut by_pred: Vec<Vec<usize>> = vec![Vec::new(); n];
    for f in g.facts() {
        if f.predicate.index() < n {
            by_pred[f.predicate.index()].push(f.id);
        }
    }
    let per_pred: Vec<Vec<GroundedPath>> = by_pred
        .par_iter()
        .enumerate()
        .map(|(p, facts)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let mut out = Vec::new();
            if facts.is_empty() {
                return out;
            }
            for _ in 0..cfg.walks_per_predicate {
                let q = facts[rng.random_range(0..facts.len())];
                let m = if rng.random_bool(0.5) { g.mirror(q) } else { q };
                let l = rng.random_range(1..=cfg.max_length);
                let anchor = QueryAnchor::from_event(g, m);
                if let Some(path) = sample_walk(&view, &anchor, l, cfg, rate, &mut rng) {
                    out.push(path);
                }
            }
            out
        })
        .collect();
    let paths: Vec<GroundedPath> = per_pred.into_iter().flatten().collect();
    let patterns = extract_rule_patterns(&paths, cfg.min_support);
    Ok(MiningOutcome { paths, patterns })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::student_graph;
    use crate::time::TemporalRelation::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_weights() {
        let w = transition_weights(Some(TimePoint(0)), &[None; 4], Transition::Uniform, 1.0);
        assert_eq!(w, vec![0.25; 4]);
    }

    #[test]
    fn exponential_weights_halve_at_ln2_over_rate() {
        let rate = 0.1;
        let dt = (2f64.ln() / rate).round() as i64;
        let exact = (-rate * dt as f64).exp();
        let w = transition_weights(
            Some(TimePoint(100)),
            &[Some(TimePoint(100)), Some(TimePoint(100 + dt))],
            Transition::Exponential,
            rate,
        );
        assert_abs_diff_eq!(w[0], 1.0 / (1.0 + exact), epsilon = 1e-12);
        let w = transition_weights(
            Some(TimePoint(0)),
            &[Some(TimePoint(0)), Some(TimePoint(1))],
            Transition::Exponential,
            2f64.ln(),
        );
        assert_abs_diff_eq!(w[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn single_candidate_weight_one() {
        for mode in [Transition::Uniform, Transition::Exponential] {
            let w = transition_weights(Some(TimePoint(3)), &[Some(TimePoint(9))], mode, 0.5);
            assert_eq!(w, vec![1.0]);
        }
    }

    #[test]
    fn unknown_starts_take_largest_gap() {
        let w = transition_weights(
            Some(TimePoint(0)),
            &[Some(TimePoint(0)), Some(TimePoint(5)), None],
            Transition::Exponential,
            1.0,
        );
        assert_abs_diff_eq!(w[1], w[2], epsilon = 1e-15);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn student_graph_walks_find_the_length_three_cycle() {
        let g = student_graph();
        let cfg = MinerConfig {
            walks_per_query: 400,
            ..MinerConfig::default()
        };
        let paths = sample_cyclic_walks(&GraphView::new(&g), 0, &cfg, 11);
        assert!(paths.iter().all(|p| validate_path(&g, p)));
        let study = g.vocab().predicate_id("StudyIn").unwrap();
        let inv = g.inverse(study);
        let target =
            RulePattern::new(study, vec![inv, study, inv], vec![Overlap, Overlap]).unwrap();
        assert!(paths
            .iter()
            .any(|p| p.events == [4, 1, 3] && p.pattern == target));
        // the first hop never enters the query's mirror
        assert!(paths.iter().all(|p| !(p.query == 0 && p.events[0] == 3)));
        assert!(paths.iter().all(|p| !(p.query == 3 && p.events[0] == 0)));
    }

    #[test]
    fn no_cycle_means_no_paths() {
        use crate::time::Granularity;
        use crate::tkg::{add_inverse_facts, Quad, Tkg, Vocabulary};
        let mut vocab = Vocabulary::default();
        let a = EntityId(vocab.entities.intern("a"));
        let b = EntityId(vocab.entities.intern("b"));
        let p = PredicateId(vocab.predicates.intern("p"));
        let quad = Quad {
            subject: a,
            predicate: p,
            object: b,
            time: Interval::point(1),
        };
        let tkg = Tkg::new(vocab, [quad], Schema::Timestamp, Granularity::Year).unwrap();
        let g = crate::graph::build_tekg(&add_inverse_facts(tkg).unwrap()).unwrap();
        let paths = sample_cyclic_walks(&GraphView::new(&g), 0, &MinerConfig::default(), 0);
        assert!(paths.is_empty());
    }

    #[test]
    fn mining_is_deterministic() {
        let g = student_graph();
        let cfg = MinerConfig {
            walks_per_predicate: 200,
            min_support: 1,
            ..MinerConfig::default()
        };
        let a = mine(&g, &cfg, 5).unwrap();
        let b = mine(&g, &cfg, 5).unwrap();
        assert_eq!(a.paths, b.paths);
        assert_eq!(a.patterns, b.patterns);
        assert!(!a.patterns.is_empty());
    }

    #[test]
    fn query_hidden_never_uses_query_events() {
        let g = student_graph();
        let cfg = MinerConfig {
            walks_per_query: 300,
            mask: MaskPolicy::QueryHidden,
            ..MinerConfig::default()
        };
        for p in sample_cyclic_walks(&GraphView::new(&g), 0, &cfg, 3) {
            assert!(!p.events.contains(&0) && !p.events.contains(&3));
        }
    }

    #[test]
    fn config_validation() {
        assert!(MinerConfig { max_length: 0, ..MinerConfig::default() }.validate().is_err());
        assert!(MinerConfig { exponential_rate: Some(0.0), ..MinerConfig::default() }
            .validate()
            .is_err());
        assert_eq!(
            MinerConfig::for_schema(Schema::Timestamp).transition,
            Transition::Exponential
        );
    }
}
