//! End-to-end stages: mine, fit, train, predict and evaluate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Splits;
use crate::density::{anchor_offset, DensityTable, EraPolicy, GapSample, Target};
use crate::error::{Error, Result};
use crate::graph::{build_tekg, GraphView, TekgGraph};
use crate::learner::controller::ParamSpace;
use crate::learner::features::{targets_for, FeatureContext, Grids, QueryFeatures};
use crate::learner::model::{sha256_hex, Model, MODEL_FORMAT, MODEL_VERSION};
use crate::learner::train::{train, TrainConfig, TrainOutcome};
use crate::metrics::{evaluate_dataset, Evaluation};
use crate::miner::{build_local_graph, mine, MaskPolicy, MinerConfig, MiningOutcome, PatternSupport, QueryAnchor, RulePattern, Side};
use crate::predictor::{FallbackStats, Predictor};
use crate::time::{Endpoint, TimePoint};
use crate::tkg::{add_inverse_facts, Quad, Tkg};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub miner: MinerConfig,
    pub train: TrainConfig,
    pub seed: u64,
}

/// Inverse-augmented event graph over the given facts.
pub fn graph_of(splits: &Splits, quads: impl IntoIterator<Item = Quad>) -> Result<TekgGraph> {
    let g = Tkg::new(splits.vocab.clone(), quads, splits.schema, splits.granularity)?;
    build_tekg(&add_inverse_facts(g)?)
}

pub fn train_graph(splits: &Splits) -> Result<TekgGraph> {
    graph_of(splits, splits.train.iter().copied())
}

/// Background graph for answering test queries: train plus valid facts.
pub fn background_graph(splits: &Splits) -> Result<TekgGraph> {
    graph_of(splits, splits.train.iter().chain(&splits.valid).copied())
}

pub fn mine_rules(g: &TekgGraph, cfg: &MinerConfig, seed: u64) -> Result<MiningOutcome> {
    mine(g, cfg, seed)
}

pub fn rules_text(rules: &[PatternSupport], g: &TekgGraph) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    crate::miner::write_rules(&mut buf, rules, g.vocab())?;
    Ok(buf)
}

pub fn densities_text(t: &DensityTable) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    t.write_tsv(&mut buf)?;
    Ok(buf)
}

/// Up to `per_predicate` base events per predicate with a known start, in
/// ascending id order within each predicate.
pub fn training_queries(g: &TekgGraph, per_predicate: usize, seed: u64) -> Vec<usize> {
    let n = g.num_base_predicates();
    let mut by_pred: Vec<Vec<usize>> = vec![Vec::new(); n];
    for f in g.facts() {
        if f.predicate.index() < n && f.time.start.is_some() {
            by_pred[f.predicate.index()].push(f.id);
        }
    }
    let mut out = Vec::new();
    for (p, mut ids) in by_pred.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        ids.shuffle(&mut rng);
        ids.truncate(per_predicate);
        ids.sort_unstable();
        out.extend(ids);
    }
    out
}

fn hidden(cfg: &MinerConfig) -> MinerConfig {
    MinerConfig {
        mask: MaskPolicy::QueryHidden,
        ..cfg.clone()
    }
}

/// Gap observations of every grounded pattern around the training queries,
/// with each query's hidden event excluded. Path counts are normalized per
/// query and pattern.
pub fn gap_samples(g: &TekgGraph, patterns: &[RulePattern], miner: &MinerConfig, era: EraPolicy, queries: &[usize]) -> Vec<GapSample> {
    let cfg = hidden(miner);
    let view = GraphView::new(g);
    queries
        .par_iter()
        .map(|&m| {
            let truth = g.fact(m).time;
            let local = build_local_graph(&view, &QueryAnchor::from_event(g, m), patterns, &cfg);
            let mut out = Vec::new();
            for side in Side::BOTH {
                for gr in local.groundings(side) {
                    let l = patterns[gr.pattern].len();
                    let positions: &[(usize, &[(usize, f64)])] = if l == 1 {
                        &[(1, &gr.last)]
                    } else {
                        &[(1, &gr.first), (l, &gr.last)]
                    };
                    for &(position, events) in positions {
                        let total: f64 = events.iter().map(|e| e.1).sum();
                        for &(slot, count) in events {
                            let body = local.interval(slot);
                            for target in Target::ALL {
                                let Some(v) = target.value(&truth) else { continue };
                                for anchor in [Endpoint::Start, Endpoint::End] {
                                    let Some(off) = anchor_offset(target, anchor, &body) else { continue };
                                    out.push(GapSample {
                                        pattern: gr.pattern,
                                        target,
                                        position,
                                        anchor,
                                        era: era.era(body.start),
                                        gap: v - off,
                                        weight: count / total,
                                    });
                                }
                            }
                        }
                    }
                }
            }
            out
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

pub fn fit_densities(g: &TekgGraph, patterns: &[RulePattern], cfg: &PipelineConfig) -> DensityTable {
    let era = EraPolicy::for_granularity(g.granularity());
    let queries = training_queries(g, cfg.train.samples_per_predicate, cfg.seed);
    DensityTable::fit(patterns, &gap_samples(g, patterns, &cfg.miner, era, &queries))
}

/// Grid over the known endpoints of `g`, one granularity unit per step.
pub fn grids_for(g: &TekgGraph) -> Result<Grids> {
    let pts = g.facts().iter().flat_map(|f| [f.time.start, f.time.end]).flatten();
    let (lo, hi) = pts.fold((i64::MAX, i64::MIN), |(a, b), t: TimePoint| (a.min(t.0), b.max(t.0)));
    if lo > hi {
        return Err(Error::EmptyDataset);
    }
    Grids::new(lo, hi, 1)
}

pub struct Trained {
    pub model: Model,
    pub outcome: TrainOutcome,
}

/// Builds training and validation features and fits the controller.
pub fn train_model(
    g: &TekgGraph,
    splits: &Splits,
    patterns: &[RulePattern],
    densities: &DensityTable,
    rules_sha256: String,
    densities_sha256: String,
    cfg: &PipelineConfig,
) -> Result<Trained> {
    let tc = &cfg.train;
    let era = EraPolicy::for_granularity(g.granularity());
    let grids = grids_for(g)?;
    let targets = targets_for(g.schema(), tc.duration);
    let ctx = FeatureContext::new(g, patterns, densities, era, grids, targets.clone(), hidden(&cfg.miner));
    let view = GraphView::new(g);
    let mut queries = training_queries(g, tc.samples_per_predicate, cfg.seed);
    let valid_feats: Vec<QueryFeatures> = if splits.valid.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
        queries.shuffle(&mut rng);
        let k = (tc.valid_fraction * queries.len() as f64).round() as usize;
        let held: Vec<usize> = queries.drain(..k).collect();
        queries.sort_unstable();
        held.par_iter()
            .map(|&m| ctx.build(&view, &QueryAnchor::from_event(g, m), Some(&g.fact(m).time)))
            .collect()
    } else {
        let vctx = FeatureContext::new(g, patterns, densities, era, grids, targets.clone(), cfg.miner.clone());
        splits
            .valid
            .par_iter()
            .filter(|q| q.time.start.is_some())
            .map(|q| {
                let anchor = QueryAnchor {
                    subject: q.subject,
                    predicate: q.predicate,
                    object: q.object,
                    event: None,
                };
                vctx.build(&view, &anchor, Some(&q.time))
            })
            .collect()
    };
    let train_feats: Vec<QueryFeatures> = queries
        .par_iter()
        .map(|&m| ctx.build(&view, &QueryAnchor::from_event(g, m), Some(&g.fact(m).time)))
        .collect();
    let space = ParamSpace {
        kind: tc.controller,
        num_base_predicates: g.num_base_predicates(),
        max_length: cfg.miner.max_length,
        hidden: tc.hidden,
        embed: tc.embed,
    };
    let theta0 = space.init(cfg.seed, tc.init_scale);
    let outcome = train(space, theta0, patterns, &train_feats, &valid_feats, tc, cfg.seed)?;
    let model = Model {
        format: MODEL_FORMAT.to_owned(),
        version: MODEL_VERSION,
        space,
        scoring: tc.scoring,
        targets,
        duration: tc.duration,
        schema: g.schema(),
        granularity: g.granularity(),
        grids,
        era,
        miner: cfg.miner.clone(),
        epsilon: tc.epsilon,
        theta: outcome.best_theta.clone(),
        rules_sha256,
        densities_sha256,
        fallback: FallbackStats::fit(g),
        history: outcome.history.clone(),
    };
    Ok(Trained { model, outcome })
}

/// Everything produced by a full run over one dataset.
pub struct Run {
    pub graph: TekgGraph,
    pub mining: MiningOutcome,
    pub patterns: Vec<RulePattern>,
    pub densities: DensityTable,
    pub trained: Trained,
}

pub fn run(splits: &Splits, cfg: &PipelineConfig) -> Result<Run> {
    let graph = train_graph(splits)?;
    let mining = mine_rules(&graph, &cfg.miner, cfg.seed)?;
    let patterns: Vec<RulePattern> = mining.patterns.iter().map(|p| p.pattern.clone()).collect();
    let densities = fit_densities(&graph, &patterns, cfg);
    let rules_sha = sha256_hex(&rules_text(&mining.patterns, &graph)?);
    let dens_sha = sha256_hex(&densities_text(&densities)?);
    let trained = train_model(&graph, splits, &patterns, &densities, rules_sha, dens_sha, cfg)?;
    Ok(Run {
        graph,
        mining,
        patterns,
        densities,
        trained,
    })
}

impl Run {
    pub fn evaluate(&self, splits: &Splits, forecast: bool) -> Result<Evaluation> {
        let bg = background_graph(splits)?;
        let p = Predictor::new(&self.trained.model, &bg, &self.patterns, &self.densities);
        evaluate_dataset(&p, &splits.test, forecast)
    }
}
