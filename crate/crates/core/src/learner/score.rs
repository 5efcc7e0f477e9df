//! Score vectors over the grid for both scoring variants, and the loss.

use crate::error::Result;
use crate::miner::{LocalGraph, RulePattern, Side};
use crate::tkg::PredicateId;

use super::controller::{attention, mix_weight, AttentionState, Mix, ParamSpace, TapeAttention};
use super::features::{cond_prob_matrix, CondProbMatrix, QueryFeatures, RuleTerm, Scoring, TargetFeatures};
use super::tape::{Tape, Var};
use super::walk::{rule_score, rule_score_on_tape, walk_forward, walk_on_tape};

/// `y_side = Σ_m ret[m] · u_{L+1}[m] · c[m, :]`, mixed as
/// `a·y_query + (1 − a)·y_mirror`.
pub fn score_event_split(
    local: &LocalGraph,
    attn: [&AttentionState; 2],
    c: [&CondProbMatrix; 2],
    a: f64,
) -> Result<Vec<f64>> {
    let len = c[0].len;
    let mut y = vec![0.0; len];
    for (side, k) in Side::BOTH.into_iter().zip([a, 1.0 - a]) {
        let u = walk_forward(local, side, attn[side as usize])?;
        let last = &u[u.len() - 1];
        let ret = local.returns(side);
        for (m, row) in &c[side as usize].rows {
            if !ret[*m] || last[*m] == 0.0 {
                continue;
            }
            let f = k * last[*m];
            for (yr, cr) in y.iter_mut().zip(row) {
                *yr += f * cr;
            }
        }
    }
    Ok(y)
}

/// `Σ_κ s_κ [a·g_{κ,1} + (1 − a)·g_{κ,l}]` with path-averaged rows.
pub fn score_rule_split(terms: &[RuleTerm], scores: &[f64], a: f64, w_first: f64, w_last: f64, len: usize) -> Vec<f64> {
    let mut y = vec![0.0; len];
    for (t, &s) in terms.iter().zip(scores) {
        if s == 0.0 {
            continue;
        }
        for r in 0..len {
            let first = w_first * t.first_start[r] + (1.0 - w_first) * t.first_end[r];
            let last = w_last * t.last_start[r] + (1.0 - w_last) * t.last_end[r];
            y[r] += s * (a * first + (1.0 - a) * last);
        }
    }
    y
}

/// `Pr(t_r | Y) = (Y_r + ε) / Σ (Y + ε)`.
pub fn probabilities(y: &[f64], eps: f64) -> Vec<f64> {
    let total: f64 = y.iter().map(|v| v + eps).sum();
    y.iter().map(|v| (v + eps) / total).collect()
}

/// `−Σ log Pr(t* | Y)` over `(Y, truth index)` pairs.
pub fn loss(predictions: &[(Vec<f64>, usize)], eps: f64) -> f64 {
    predictions
        .iter()
        .map(|(y, r)| {
            let total: f64 = y.iter().map(|v| v + eps).sum();
            total.ln() - (y[*r] + eps).ln()
        })
        .sum()
}

/// Everything needed to score queries with one parameter vector.
pub struct Scorer<'a> {
    pub space: ParamSpace,
    pub theta: &'a [f64],
    pub patterns: &'a [RulePattern],
    pub scoring: Scoring,
}

impl Scorer<'_> {
    fn heads(&self, base: PredicateId) -> [PredicateId; 2] {
        [base, PredicateId(base.0 + self.space.num_base_predicates as u32)]
    }

    /// Attention for the query and mirror heads of `base`.
    pub fn attention(&self, base: PredicateId) -> Result<[AttentionState; 2]> {
        let [q, m] = self.heads(base);
        Ok([attention(&self.space, self.theta, q)?, attention(&self.space, self.theta, m)?])
    }

    pub fn scores(&self, f: &QueryFeatures, attn: &[AttentionState; 2]) -> Result<Vec<Vec<f64>>> {
        f.targets.iter().map(|t| self.target_scores(f, t, attn)).collect()
    }

    fn target_scores(&self, f: &QueryFeatures, t: &TargetFeatures, attn: &[AttentionState; 2]) -> Result<Vec<f64>> {
        let w = |mix| mix_weight(&self.space, self.theta, f.base, t.target, mix);
        let a = w(Mix::A);
        match self.scoring {
            Scoring::Event => {
                let n = f.local.len();
                let cq = cond_prob_matrix(&t.event[0], w(Mix::WLast), n, t.len);
                let cm = cond_prob_matrix(&t.event[1], w(Mix::WFirst), n, t.len);
                score_event_split(&f.local, [&attn[0], &attn[1]], [&cq, &cm], a)
            }
            Scoring::Rule => {
                let s: Vec<f64> = t.rule.iter().map(|r| rule_score(&attn[0], &self.patterns[r.pattern])).collect();
                Ok(score_rule_split(&t.rule, &s, a, w(Mix::WFirst), w(Mix::WLast), t.len))
            }
        }
    }

    /// Loss of one query; targets without a known truth are skipped.
    pub fn query_loss(&self, f: &QueryFeatures, eps: f64) -> Result<f64> {
        let attn = self.attention(f.base)?;
        let ys = self.scores(f, &attn)?;
        let pairs: Vec<(Vec<f64>, usize)> = ys
            .into_iter()
            .zip(&f.targets)
            .filter_map(|(y, t)| t.truth.map(|r| (y, r)))
            .collect();
        Ok(loss(&pairs, eps))
    }
}

/// Per-target score vectors recorded on the tape.
pub fn scores_on_tape<'a>(
    t: &mut Tape<'a>,
    space: &ParamSpace,
    theta: Var,
    f: &'a QueryFeatures,
    attn: &[TapeAttention; 2],
    patterns: &[RulePattern],
    scoring: Scoring,
) -> Vec<Var> {
    let last = match scoring {
        Scoring::Event => Some(Side::BOTH.map(|side| walk_on_tape(t, &f.local, side, &attn[side as usize]))),
        Scoring::Rule => None,
    };
    let scores: Vec<Option<Var>> = match scoring {
        Scoring::Rule => f.targets.first().map_or_else(Vec::new, |tf| {
            tf.rule.iter().map(|r| rule_score_on_tape(t, &attn[0], &patterns[r.pattern])).collect()
        }),
        Scoring::Event => Vec::new(),
    };
    let mut out = Vec::with_capacity(f.targets.len());
    for tf in &f.targets {
        let mut weight = |mix| {
            let v = t.slice(theta, space.mix_index(f.base, tf.target, mix), 1);
            let s = t.sigmoid(v);
            let c = t.one_minus(s);
            (s, c)
        };
        let (a, not_a) = weight(Mix::A);
        let (wf, not_wf) = weight(Mix::WFirst);
        let (wl, not_wl) = weight(Mix::WLast);
        let y = match scoring {
            Scoring::Event => {
                let [uq, um] = last.expect("event walks");
                let side = |t: &mut Tape<'a>, rows: &'a super::features::SideRows, u: Var, w: Var, not_w: Var| {
                    let s = t.rows_t(&rows.start, u, tf.len);
                    let e = t.rows_t(&rows.end, u, tf.len);
                    t.combine(vec![(w, 0, s), (not_w, 0, e)], tf.len)
                };
                let yq = side(t, &tf.event[0], uq, wl, not_wl);
                let ym = side(t, &tf.event[1], um, wf, not_wf);
                t.combine(vec![(a, 0, yq), (not_a, 0, ym)], tf.len)
            }
            Scoring::Rule => {
                let mut parts: [Vec<(Var, usize, Var)>; 4] = Default::default();
                // the rule terms of every target share pattern order
                for (r, s) in tf.rule.iter().zip(&scores) {
                    let Some(s) = *s else { continue };
                    for (k, row) in [&r.first_start, &r.first_end, &r.last_start, &r.last_end].into_iter().enumerate() {
                        let v = t.input(row.clone());
                        parts[k].push((s, 0, v));
                    }
                }
                let [fs, fe, ls, le] = parts.map(|p| t.combine(p, tf.len));
                let c1 = t.mul(a, wf);
                let c2 = t.mul(a, not_wf);
                let c3 = t.mul(not_a, wl);
                let c4 = t.mul(not_a, not_wl);
                t.combine(vec![(c1, 0, fs), (c2, 0, fe), (c3, 0, ls), (c4, 0, le)], tf.len)
            }
        };
        out.push(y);
    }
    out
}

/// `ln Σ(Y + ε) − ln(Y_r + ε)` on the tape.
pub fn loss_on_tape(t: &mut Tape<'_>, y: Var, truth: usize, eps: f64) -> Var {
    let n = t.value(y).len() as f64;
    let total = t.sum(y);
    let total = t.add_const(total, n * eps);
    let lt = t.ln(total);
    let yr = t.index(y, truth);
    let yr = t.add_const(yr, eps);
    let lr = t.ln(yr);
    t.sub(lt, lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn loss_examples() {
        let mut one_hot = vec![0.0; 10];
        one_hot[4] = 1.0;
        assert!(loss(&[(one_hot, 4)], 1e-12) < 1e-10);
        assert_abs_diff_eq!(loss(&[(vec![0.1; 10], 0)], 1e-8), 10f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(loss(&[(vec![0.0; 10], 7)], 1e-8), 10f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn probabilities_normalize() {
        let p = probabilities(&[0.0, 3.0, 1.0, 0.0], 1e-8);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(p.iter().all(|&x| x > 0.0));
    }

    fn term(first: [f64; 3], last: [f64; 3]) -> RuleTerm {
        RuleTerm {
            pattern: 0,
            first_start: first.to_vec(),
            first_end: vec![0.0; 3],
            last_start: last.to_vec(),
            last_end: vec![0.0; 3],
        }
    }

    #[test]
    fn rule_split_collapses_and_scales() {
        let t = [term([0.1, 0.5, 0.2], [0.3, 0.3, 0.3])];
        let y = score_rule_split(&t, &[0.5], 1.0, 1.0, 1.0, 3);
        assert_eq!(y, vec![0.05, 0.25, 0.1]);
        let y2 = score_rule_split(&t, &[1.0], 1.0, 1.0, 1.0, 3);
        for (a, b) in y.iter().zip(&y2) {
            assert_abs_diff_eq!(2.0 * a, *b, epsilon = 1e-15);
        }
    }

    #[test]
    fn tape_loss_matches_plain() {
        let y0 = vec![0.2, 0.0, 1.3, 0.4];
        let mut t = Tape::new();
        let y = t.input(y0.clone());
        let l = loss_on_tape(&mut t, y, 2, 1e-8);
        assert_abs_diff_eq!(t.scalar(l), loss(&[(y0, 2)], 1e-8), epsilon = 1e-12);
    }
}
