//! Applying a trained model to queries.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::format_time;
use crate::density::{DensityTable, Target};
use crate::error::{Error, Result};
use crate::graph::{AccessLog, GraphView, TekgGraph};
use crate::learner::features::{FeatureContext, QueryFeatures};
use crate::learner::model::Model;
use crate::learner::score::{probabilities, Scorer};
use crate::learner::walk::rule_score;
use crate::miner::{QueryAnchor, RulePattern, Side};
use crate::time::{Interval, TimePoint};
use crate::tkg::{EntityId, PredicateId, Quad, Schema};

fn span(start: i64, end: i64) -> Interval {
    Interval {
        start: Some(TimePoint(start)),
        end: Some(TimePoint(end)),
    }
}

/// Index of the largest score; ties go to the earliest index.
pub fn argmax(y: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in y.iter().enumerate() {
        if v > y[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackEntry {
    pub start: i64,
    pub duration: i64,
}

/// Per-predicate mode start time and median duration of training facts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackStats {
    pub by_predicate: BTreeMap<u32, FallbackEntry>,
    pub global: FallbackEntry,
}

fn summarize(starts: &mut [i64], durations: &mut [i64]) -> Option<FallbackEntry> {
    if starts.is_empty() {
        return None;
    }
    starts.sort_unstable();
    let mut mode = (starts[0], 0usize);
    for run in starts.chunk_by(|a, b| a == b) {
        if run.len() > mode.1 {
            mode = (run[0], run.len());
        }
    }
    durations.sort_unstable();
    let duration = if durations.is_empty() {
        0
    } else {
        durations[(durations.len() - 1) / 2]
    };
    Some(FallbackEntry { start: mode.0, duration })
}

impl FallbackStats {
    /// Statistics over the base facts of `g`.
    pub fn fit(g: &TekgGraph) -> Self {
        let n = g.num_base_predicates() as u32;
        let mut groups: BTreeMap<u32, (Vec<i64>, Vec<i64>)> = BTreeMap::new();
        let mut all = (Vec::new(), Vec::new());
        for f in g.facts().iter().filter(|f| f.predicate.0 < n) {
            let Some(s) = f.time.start else { continue };
            let e = groups.entry(f.predicate.0).or_default();
            e.0.push(s.0);
            all.0.push(s.0);
            if let Some(end) = f.time.end {
                e.1.push((end.0 - s.0).max(0));
                all.1.push((end.0 - s.0).max(0));
            }
        }
        let by_predicate = groups
            .into_iter()
            .filter_map(|(p, (mut s, mut d))| summarize(&mut s, &mut d).map(|e| (p, e)))
            .collect();
        let global = summarize(&mut all.0, &mut all.1).unwrap_or(FallbackEntry { start: 0, duration: 0 });
        FallbackStats { by_predicate, global }
    }

    pub fn get(&self, base: PredicateId) -> FallbackEntry {
        self.by_predicate.get(&base.0).copied().unwrap_or(self.global)
    }

    pub fn interval(&self, base: PredicateId, schema: Schema) -> Interval {
        let e = self.get(base);
        match schema {
            Schema::Timestamp => Interval::point(e.start),
            Schema::Interval => span(e.start, e.start + e.duration),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    pub interval: Interval,
    /// Normalized distribution over the grid per target.
    pub distributions: Vec<(Target, Vec<f64>)>,
    /// Grounded query-side patterns with rule scores, best first.
    pub support: Vec<(usize, f64)>,
    pub fallback: bool,
}

/// A query triple with an optional cutoff for forecast mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query {
    pub subject: EntityId,
    pub predicate: PredicateId,
    pub object: EntityId,
    pub cutoff: Option<TimePoint>,
}

impl Query {
    pub fn from_quad(q: &Quad, forecast: bool) -> Self {
        Query {
            subject: q.subject,
            predicate: q.predicate,
            object: q.object,
            cutoff: if forecast { q.time.start } else { None },
        }
    }
}

pub struct Predictor<'a> {
    pub model: &'a Model,
    pub graph: &'a TekgGraph,
    pub patterns: &'a [RulePattern],
    ctx: FeatureContext<'a>,
}

impl<'a> Predictor<'a> {
    pub fn new(model: &'a Model, graph: &'a TekgGraph, patterns: &'a [RulePattern], densities: &'a DensityTable) -> Self {
        let ctx = FeatureContext::new(
            graph,
            patterns,
            densities,
            model.era,
            model.grids,
            model.targets.clone(),
            model.miner.clone(),
        );
        Predictor {
            model,
            graph,
            patterns,
            ctx,
        }
    }

    fn scorer(&self) -> Scorer<'_> {
        Scorer {
            space: self.model.space,
            theta: &self.model.theta,
            patterns: self.patterns,
            scoring: self.model.scoring,
        }
    }

    pub fn features(&self, q: &Query, log: Option<&'a AccessLog>) -> QueryFeatures {
        let mut view = GraphView::new(self.graph).with_cutoff(q.cutoff);
        if let Some(log) = log {
            view = view.with_log(log);
        }
        let anchor = QueryAnchor {
            subject: q.subject,
            predicate: q.predicate,
            object: q.object,
            event: None,
        };
        self.ctx.build(&view, &anchor, None)
    }

    pub fn predict(&self, q: &Query, log: Option<&'a AccessLog>) -> Result<PredictionResult> {
        let n = self.model.space.num_base_predicates;
        if q.predicate.index() >= n {
            return Err(Error::UnknownPredicate(q.predicate.0));
        }
        let f = self.features(q, log);
        let scorer = self.scorer();
        let attn = scorer.attention(f.base)?;
        let ys = scorer.scores(&f, &attn)?;
        let mut support: Vec<(usize, f64)> = f
            .local
            .groundings(Side::Query)
            .iter()
            .map(|g| (g.pattern, rule_score(&attn[0], &self.patterns[g.pattern])))
            .collect();
        support.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

        let fb = self.model.fallback.get(f.base);
        let mut fallback = false;
        let mut start = fb.start;
        let mut end: Option<i64> = None;
        let mut distributions = Vec::with_capacity(ys.len());
        for (tf, y) in f.targets.iter().zip(&ys) {
            let grid = self.model.grids.for_target(tf.target);
            let empty = y.iter().all(|&v| v <= 0.0);
            let value = grid.point(argmax(y)).0;
            match tf.target {
                Target::Start if empty => fallback = true,
                Target::Start => start = value,
                Target::End if empty => fallback = true,
                Target::End => end = Some(value),
                Target::Duration if empty => fallback = true,
                Target::Duration => end = Some(start + value),
            }
            distributions.push((tf.target, probabilities(y, self.model.epsilon)));
        }
        let interval = match self.model.schema {
            Schema::Timestamp => Interval::point(start),
            Schema::Interval => {
                let e = end.unwrap_or(start + fb.duration).max(start);
                span(start, e)
            }
        };
        Ok(PredictionResult {
            interval,
            distributions,
            support,
            fallback,
        })
    }

    /// Predictions for many queries in input order.
    pub fn predict_all(&self, queries: &[Query], log: Option<&'a AccessLog>) -> Result<Vec<PredictionResult>> {
        queries.par_iter().map(|q| self.predict(q, log)).collect()
    }
}

/// Prediction TSV: query columns, predicted start and end, fallback flag and
/// up to three supporting rule hashes.
pub fn write_predictions(
    mut out: impl Write,
    g: &TekgGraph,
    patterns: &[RulePattern],
    queries: &[Quad],
    preds: &[PredictionResult],
) -> Result<()> {
    let v = g.vocab();
    let gran = g.granularity();
    writeln!(out, "#subject\tpredicate\tobject\tstart\tend\tfallback\trules")?;
    for (q, p) in queries.iter().zip(preds) {
        let rules: Vec<String> = p.support.iter().take(3).map(|&(k, _)| patterns[k].hash()).collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            v.entity_name(q.subject),
            v.predicate_name(q.predicate),
            v.entity_name(q.object),
            format_time(p.interval.start, gran),
            format_time(p.interval.end, gran),
            u8::from(p.fallback),
            if rules.is_empty() { "-".to_owned() } else { rules.join(",") }
        )?;
    }
    Ok(())
}
