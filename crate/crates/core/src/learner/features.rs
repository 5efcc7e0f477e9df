//! Per-query quantities that do not depend on trainable parameters: the
//! local graph, gridded gap-density rows for last events (event split) and
//! path-averaged density rows per pattern (rule split).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::density::{anchor_offset, Density, DensityTable, EraPolicy, Target};
use crate::error::Result;
use crate::graph::{GraphView, TekgGraph};
use crate::miner::{build_local_graph, LocalGraph, MinerConfig, QueryAnchor, RulePattern, Side};
use crate::time::{quantize, Endpoint, Interval, TimeGrid, TimePoint};
use crate::tkg::{PredicateId, Schema};

/// Candidate grids: absolute time points for start and end targets,
/// nonnegative gaps for durations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grids {
    pub t_min: i64,
    pub t_max: i64,
    pub step: i64,
}

impl Grids {
    pub fn new(t_min: i64, t_max: i64, step: i64) -> Result<Self> {
        quantize(TimePoint(t_min), TimePoint(t_max), step)?;
        Ok(Grids { t_min, t_max, step })
    }

    pub fn time(&self) -> TimeGrid {
        quantize(TimePoint(self.t_min), TimePoint(self.t_max), self.step).expect("validated")
    }

    pub fn duration(&self) -> TimeGrid {
        quantize(TimePoint(0), TimePoint(self.t_max - self.t_min), self.step).expect("validated")
    }

    pub fn for_target(&self, target: Target) -> TimeGrid {
        match target {
            Target::Start | Target::End => self.time(),
            Target::Duration => self.duration(),
        }
    }
}

/// Targets scored for a schema: timestamps only have a start; intervals
/// have a start plus either an end or a duration.
pub fn targets_for(schema: Schema, duration: bool) -> Vec<Target> {
    match (schema, duration) {
        (Schema::Timestamp, _) => vec![Target::Start],
        (Schema::Interval, false) => vec![Target::Start, Target::End],
        (Schema::Interval, true) => vec![Target::Start, Target::Duration],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scoring {
    /// Differentiable walk composed with the conditional probability matrix.
    Event,
    /// Rule-score weighted average of per-path densities.
    Rule,
}

/// Cell-averaged density values on `grid` for gaps `t_r − offset`.
pub fn density_row(d: &Density, offset: f64, grid: &TimeGrid) -> Vec<f64> {
    let step = grid.step() as f64;
    let h = step / 2.0;
    let first = grid.first().0 as f64 - offset;
    let cdfs: Vec<f64> = (0..=grid.len()).map(|k| d.cdf(first - h + k as f64 * step)).collect();
    cdfs.windows(2).map(|w| ((w[1] - w[0]) / step).max(0.0)).collect()
}

/// Sparse rows of the conditional probability matrix for one side and
/// target, split by the anchor endpoint of the gap.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SideRows {
    pub start: Vec<(usize, Vec<f64>)>,
    pub end: Vec<(usize, Vec<f64>)>,
}

/// `c` over the local graph: slot → row over the grid. Slots without a
/// satisfied pattern have all-zero rows and are not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CondProbMatrix {
    pub slots: usize,
    pub len: usize,
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl CondProbMatrix {
    pub fn row(&self, slot: usize) -> Vec<f64> {
        self.rows
            .iter()
            .find(|(m, _)| *m == slot)
            .map_or_else(|| vec![0.0; self.len], |(_, r)| r.clone())
    }
}

/// `c = w·c_start + (1 − w)·c_end`.
pub fn cond_prob_matrix(rows: &SideRows, w: f64, slots: usize, len: usize) -> CondProbMatrix {
    let rows = rows
        .start
        .iter()
        .zip(&rows.end)
        .map(|((m, s), (_, e))| (*m, s.iter().zip(e).map(|(a, b)| w * a + (1.0 - w) * b).collect()))
        .collect();
    CondProbMatrix { slots, len, rows }
}

/// Path-averaged density rows of one pattern on the query side.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleTerm {
    pub pattern: usize,
    pub first_start: Vec<f64>,
    pub first_end: Vec<f64>,
    pub last_start: Vec<f64>,
    pub last_end: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetFeatures {
    pub target: Target,
    pub len: usize,
    /// Snapped grid index of the true value.
    pub truth: Option<usize>,
    pub event: [SideRows; 2],
    pub rule: Vec<RuleTerm>,
}

#[derive(Debug, Clone)]
pub struct QueryFeatures {
    /// Base predicate of the query.
    pub base: PredicateId,
    pub local: LocalGraph,
    pub targets: Vec<TargetFeatures>,
}

impl QueryFeatures {
    pub fn has_evidence(&self, scoring: Scoring) -> bool {
        self.targets.iter().any(|t| match scoring {
            Scoring::Event => t.event.iter().any(|s| !s.start.is_empty()),
            Scoring::Rule => !t.rule.is_empty(),
        })
    }
}

/// Shared inputs for building [`QueryFeatures`].
pub struct FeatureContext<'a> {
    pub graph: &'a TekgGraph,
    pub patterns: &'a [RulePattern],
    pub densities: &'a DensityTable,
    pub era: EraPolicy,
    pub grids: Grids,
    pub targets: Vec<Target>,
    pub miner: MinerConfig,
    keys: Vec<String>,
}

impl<'a> FeatureContext<'a> {
    pub fn new(
        graph: &'a TekgGraph,
        patterns: &'a [RulePattern],
        densities: &'a DensityTable,
        era: EraPolicy,
        grids: Grids,
        targets: Vec<Target>,
        miner: MinerConfig,
    ) -> Self {
        let keys = patterns.iter().map(RulePattern::key).collect();
        FeatureContext {
            graph,
            patterns,
            densities,
            era,
            grids,
            targets,
            miner,
            keys,
        }
    }

    fn density(&self, pattern: usize, target: Target, position: usize, anchor: Endpoint, body: &Interval) -> Option<Density> {
        let p = &self.patterns[pattern];
        self.densities
            .lookup(&self.keys[pattern], p.head, target, position, anchor, self.era.era(body.start))
            .map(|(d, _)| d)
    }

    /// Start- and end-anchored rows of pattern `k` at `position` for a body
    /// interval, or `None` when a density or endpoint is missing.
    fn rows(&self, k: usize, target: Target, position: usize, body: &Interval, grid: &TimeGrid) -> Option<(Vec<f64>, Vec<f64>)> {
        let ds = self.density(k, target, position, Endpoint::Start, body)?;
        let de = self.density(k, target, position, Endpoint::End, body)?;
        let os = anchor_offset(target, Endpoint::Start, body)?;
        let oe = anchor_offset(target, Endpoint::End, body)?;
        Some((density_row(&ds, os, grid), density_row(&de, oe, grid)))
    }

    pub fn build(&self, view: &GraphView<'_>, anchor: &QueryAnchor, truth: Option<&Interval>) -> QueryFeatures {
        let local = build_local_graph(view, anchor, self.patterns, &self.miner);
        let base = PredicateId(anchor.predicate.0 % self.graph.num_base_predicates().max(1) as u32);
        let targets = self
            .targets
            .iter()
            .map(|&target| {
                let grid = self.grids.for_target(target);
                let truth = truth
                    .and_then(|i| target.value(i))
                    .map(|v| grid.snap(TimePoint(v.round() as i64)));
                let event = Side::BOTH.map(|side| self.side_rows(&local, side, target, &grid));
                let rule = self.rule_terms(&local, target, &grid);
                TargetFeatures {
                    target,
                    len: grid.len(),
                    truth,
                    event,
                    rule,
                }
            })
            .collect();
        QueryFeatures { base, local, targets }
    }

    fn side_rows(&self, local: &LocalGraph, side: Side, target: Target, grid: &TimeGrid) -> SideRows {
        let mut acc: BTreeMap<usize, (Vec<f64>, Vec<f64>, f64)> = BTreeMap::new();
        for gr in local.groundings(side) {
            let l = self.patterns[gr.pattern].len();
            for &(slot, _) in &gr.last {
                let body = local.interval(slot);
                let Some((s, e)) = self.rows(gr.pattern, target, l, &body, grid) else { continue };
                let entry = acc
                    .entry(slot)
                    .or_insert_with(|| (vec![0.0; grid.len()], vec![0.0; grid.len()], 0.0));
                add(&mut entry.0, &s, 1.0);
                add(&mut entry.1, &e, 1.0);
                entry.2 += 1.0;
            }
        }
        let mut out = SideRows::default();
        for (slot, (mut s, mut e, n)) in acc {
            s.iter_mut().chain(e.iter_mut()).for_each(|x| *x /= n);
            out.start.push((slot, s));
            out.end.push((slot, e));
        }
        out
    }

    fn rule_terms(&self, local: &LocalGraph, target: Target, grid: &TimeGrid) -> Vec<RuleTerm> {
        let mut terms = Vec::new();
        for gr in local.groundings(Side::Query) {
            let l = self.patterns[gr.pattern].len();
            let average = |events: &[(usize, f64)], position: usize| {
                let mut s = vec![0.0; grid.len()];
                let mut e = vec![0.0; grid.len()];
                let mut n = 0.0;
                for &(slot, count) in events {
                    let body = local.interval(slot);
                    if let Some((rs, re)) = self.rows(gr.pattern, target, position, &body, grid) {
                        add(&mut s, &rs, count);
                        add(&mut e, &re, count);
                        n += count;
                    }
                }
                (n > 0.0).then(|| {
                    s.iter_mut().chain(e.iter_mut()).for_each(|x| *x /= n);
                    (s, e)
                })
            };
            let (Some((fs, fe)), Some((ls, le))) = (average(&gr.first, 1), average(&gr.last, l)) else {
                continue;
            };
            terms.push(RuleTerm {
                pattern: gr.pattern,
                first_start: fs,
                first_end: fe,
                last_start: ls,
                last_end: le,
            });
        }
        terms
    }
}

fn add(dst: &mut [f64], src: &[f64], k: f64) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += k * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn density_row_is_cell_average() {
        let grid = quantize(TimePoint(0), TimePoint(20), 1).unwrap();
        let d = Density::Gaussian { mu: 10.0, sigma: 1.0 };
        let row = density_row(&d, 0.0, &grid);
        for (r, &v) in row.iter().enumerate() {
            assert_abs_diff_eq!(v, d.cell(r as f64, 1.0), epsilon = 1e-12);
        }
        assert!(row.iter().sum::<f64>() <= 1.0);
        let e = Density::Exponential { rate: 3.0 };
        assert!(density_row(&e, 5.0, &grid).iter().sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn matrix_mixes_anchor_rows() {
        let rows = SideRows {
            start: vec![(3, vec![1.0, 0.0])],
            end: vec![(3, vec![0.0, 1.0])],
        };
        let c = cond_prob_matrix(&rows, 0.25, 5, 2);
        assert_eq!(c.row(3), vec![0.25, 0.75]);
        assert_eq!(c.row(0), vec![0.0, 0.0]);
    }

    #[test]
    fn targets() {
        assert_eq!(targets_for(Schema::Timestamp, true), vec![Target::Start]);
        assert_eq!(targets_for(Schema::Interval, true), vec![Target::Start, Target::Duration]);
        let g = Grids::new(1990, 2000, 1).unwrap();
        assert_eq!(g.time().len(), 11);
        assert_eq!(g.duration().first(), TimePoint(0));
        assert_eq!(g.duration().len(), 11);
    }
}
