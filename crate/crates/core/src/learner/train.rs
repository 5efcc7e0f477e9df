//! Mini-batch SGD over per-query losses.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::miner::RulePattern;
use crate::tkg::PredicateId;

use super::controller::{attention, attention_on_tape, ControllerKind, ParamSpace};
use super::features::{QueryFeatures, Scoring};
use super::score::{loss_on_tape, scores_on_tape, Scorer};
use super::tape::Tape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Training queries drawn per predicate.
    pub samples_per_predicate: usize,
    pub epsilon: f64,
    /// Predict `(start, duration)` instead of `(start, end)`.
    pub duration: bool,
    pub controller: ControllerKind,
    pub scoring: Scoring,
    pub hidden: usize,
    pub embed: usize,
    pub init_scale: f64,
    /// Share of training queries held out when no validation split exists.
    pub valid_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 10,
            batch_size: 32,
            samples_per_predicate: 500,
            epsilon: 1e-8,
            duration: false,
            controller: ControllerKind::Recurrent,
            scoring: Scoring::Event,
            hidden: 64,
            embed: 32,
            init_scale: 0.1,
            valid_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.valid_fraction) {
            return bad("valid_fraction must lie in [0, 1)");
        }
        if self.controller == ControllerKind::Recurrent && (self.hidden == 0 || self.embed == 0) {
            return bad("hidden and embed must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss per training query.
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    /// Largest deviation of any attention vector's sum from one.
    pub attention_error: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub theta: Vec<f64>,
    /// Parameters with the lowest validation loss, or the final ones.
    pub best_theta: Vec<f64>,
    pub history: Vec<EpochStats>,
    pub skipped: usize,
}

/// Loss of one query and its gradient with respect to `theta`.
pub fn loss_and_grad(
    space: &ParamSpace,
    theta: &[f64],
    f: &QueryFeatures,
    patterns: &[RulePattern],
    scoring: Scoring,
    eps: f64,
) -> (f64, Vec<f64>) {
    let mut t = Tape::new();
    let leaf = t.input(theta.to_vec());
    let mirror = PredicateId(f.base.0 + space.num_base_predicates as u32);
    let attn = [
        attention_on_tape(&mut t, space, leaf, f.base),
        attention_on_tape(&mut t, space, leaf, mirror),
    ];
    let ys = scores_on_tape(&mut t, space, leaf, f, &attn, patterns, scoring);
    let losses: Vec<_> = ys
        .into_iter()
        .zip(&f.targets)
        .filter_map(|(y, tf)| tf.truth.map(|r| (y, r)))
        .collect::<Vec<_>>()
        .into_iter()
        .map(|(y, r)| loss_on_tape(&mut t, y, r, eps))
        .collect();
    if losses.is_empty() {
        return (0.0, vec![0.0; theta.len()]);
    }
    let total = t.concat(losses);
    let total = t.sum(total);
    (t.scalar(total), t.grad(total, leaf))
}

/// Mean loss over queries with evidence.
pub fn loss_value(scorer: &Scorer<'_>, queries: &[QueryFeatures], eps: f64) -> Result<f64> {
    let used: Vec<&QueryFeatures> = queries.iter().filter(|q| q.has_evidence(scorer.scoring)).collect();
    if used.is_empty() {
        return Err(Error::NoTrainableQueries);
    }
    let losses: Vec<f64> = used.par_iter().map(|q| scorer.query_loss(q, eps)).collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / used.len() as f64)
}

fn attention_error(space: &ParamSpace, theta: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for p in 0..space.num_predicates() {
        worst = worst.max(attention(space, theta, PredicateId(p as u32))?.normalization_error());
    }
    Ok(worst)
}

pub fn train(
    space: ParamSpace,
    theta0: Vec<f64>,
    patterns: &[RulePattern],
    train: &[QueryFeatures],
    valid: &[QueryFeatures],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    space.validate(&theta0)?;
    let used: Vec<&QueryFeatures> = train.iter().filter(|q| q.has_evidence(cfg.scoring)).collect();
    if used.is_empty() {
        return Err(Error::NoTrainableQueries);
    }
    let skipped = train.len() - used.len();
    let has_valid = valid.iter().any(|q| q.has_evidence(cfg.scoring));
    let mut theta = theta0;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..used.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let parts: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| loss_and_grad(&space, &theta, used[i], patterns, cfg.scoring, cfg.epsilon))
                .collect();
            let mut grad = vec![0.0; theta.len()];
            for (l, g) in parts {
                if !l.is_finite() {
                    return Err(Error::Config(format!("non-finite loss in epoch {epoch}")));
                }
                epoch_loss += l;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            for (x, g) in theta.iter_mut().zip(&grad) {
                *x -= cfg.learning_rate * g;
            }
        }
        let scorer = Scorer {
            space,
            theta: &theta,
            patterns,
            scoring: cfg.scoring,
        };
        let valid_loss = if has_valid {
            Some(loss_value(&scorer, valid, cfg.epsilon)?)
        } else {
            None
        };
        if let Some(v) = valid_loss {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, theta.clone()));
            }
        }
        history.push(EpochStats {
            epoch,
            train_loss: epoch_loss / used.len() as f64,
            valid_loss,
            attention_error: attention_error(&space, &theta)?,
        });
    }
    let best_theta = best.map_or_else(|| theta.clone(), |(_, t)| t);
    Ok(TrainOutcome {
        theta,
        best_theta,
        history,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::Target;
    use crate::graph::tests::student_graph;
    use crate::graph::GraphView;
    use crate::learner::features::{RuleTerm, SideRows, TargetFeatures};
    use crate::miner::{build_local_graph, MinerConfig, QueryAnchor};
    use crate::time::TemporalRelation::*;
    use rand::Rng;

    fn features(kind: ControllerKind) -> (ParamSpace, Vec<RulePattern>, QueryFeatures) {
        let g = student_graph();
        let study = g.vocab().predicate_id("StudyIn").unwrap();
        let inv = g.inverse(study);
        let patterns = vec![
            RulePattern::new(study, vec![inv, study, inv], vec![Overlap, Overlap]).unwrap(),
            RulePattern::new(inv, vec![inv, study, inv], vec![Overlap, Overlap]).unwrap(),
        ];
        let anchor = QueryAnchor::from_event(&g, 0);
        let local = build_local_graph(&GraphView::new(&g), &anchor, &patterns, &MinerConfig::default());
        let len = 5;
        let row = |k: usize| (0..len).map(|r| 0.05 + 0.1 * ((r + k) % len) as f64).collect::<Vec<f64>>();
        let rows = |slot: usize| SideRows {
            start: vec![(slot, row(1))],
            end: vec![(slot, row(3))],
        };
        let (sq, sm) = (local.slot_of(3).unwrap(), local.slot_of(4).unwrap());
        let tf = |target, truth| TargetFeatures {
            target,
            len,
            truth: Some(truth),
            event: [rows(sq), rows(sm)],
            rule: vec![RuleTerm {
                pattern: 0,
                first_start: row(0),
                first_end: row(1),
                last_start: row(2),
                last_end: row(4),
            }],
        };
        let f = QueryFeatures {
            base: study,
            local,
            targets: vec![tf(Target::Start, 1), tf(Target::End, 3)],
        };
        let space = ParamSpace {
            kind,
            num_base_predicates: 2,
            max_length: 3,
            hidden: 4,
            embed: 3,
        };
        (space, patterns, f)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for kind in [ControllerKind::Recurrent, ControllerKind::Direct] {
            for scoring in [Scoring::Event, Scoring::Rule] {
                let (space, patterns, f) = features(kind);
                let mut rng = ChaCha8Rng::seed_from_u64(9);
                let theta: Vec<f64> = (0..space.len()).map(|_| rng.random_range(-0.8..0.8)).collect();
                let (l, g) = loss_and_grad(&space, &theta, &f, &patterns, scoring, 1e-8);
                let value = |th: &[f64]| {
                    Scorer {
                        space,
                        theta: th,
                        patterns: &patterns,
                        scoring,
                    }
                    .query_loss(&f, 1e-8)
                    .unwrap()
                };
                assert!((l - value(&theta)).abs() < 1e-10, "{kind:?} {scoring:?}");
                let h = 1e-6;
                let mut probe: Vec<usize> = (0..space.len()).step_by(7).collect();
                probe.extend(space.len() - 18..space.len());
                for i in probe {
                    let mut p = theta.clone();
                    p[i] += h;
                    let up = value(&p);
                    p[i] -= 2.0 * h;
                    let down = value(&p);
                    let num = (up - down) / (2.0 * h);
                    assert!(
                        (num - g[i]).abs() <= 1e-5 * (1.0 + num.abs()),
                        "{kind:?} {scoring:?} coord {i}: {} vs {num}",
                        g[i]
                    );
                }
            }
        }
    }

    #[test]
    fn training_lowers_loss_and_is_deterministic() {
        let (space, patterns, f) = features(ControllerKind::Direct);
        let queries = vec![f.clone(), f];
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 15,
            batch_size: 1,
            controller: ControllerKind::Direct,
            ..TrainConfig::default()
        };
        let theta0 = space.init(1, 0.1);
        let a = train(space, theta0.clone(), &patterns, &queries, &[], &cfg, 3).unwrap();
        let b = train(space, theta0, &patterns, &queries, &[], &cfg, 3).unwrap();
        assert_eq!(a.theta, b.theta);
        assert!(a.history.last().unwrap().train_loss < a.history[0].train_loss);
        assert!(a.history.iter().all(|h| h.attention_error < 1e-9));
    }

    #[test]
    fn no_evidence_is_an_error() {
        let (space, patterns, mut f) = features(ControllerKind::Direct);
        for t in &mut f.targets {
            t.event = Default::default();
            t.rule.clear();
        }
        let r = train(space, space.init(0, 0.1), &patterns, &[f], &[], &TrainConfig::default(), 0);
        assert!(matches!(r, Err(Error::NoTrainableQueries)));
    }
}
