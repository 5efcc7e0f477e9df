//! The soft random walk over a local graph and the product rule score.

use crate::error::{Error, Result};
use crate::miner::{LocalGraph, RulePattern, Side};
use crate::time::TemporalRelation;

use super::controller::{AttentionState, TapeAttention};
use super::tape::{Tape, Var};

/// States `u_0..u_{L+1}` of the walk leaving `side`'s anchor slot.
pub fn walk_forward(local: &LocalGraph, side: Side, attn: &AttentionState) -> Result<Vec<Vec<f64>>> {
    let l = attn.max_length();
    let n = local.len();
    let np = attn.beta.first().map_or(0, Vec::len);
    if attn.gamma.len() != l + 1 {
        return Err(Error::Dimension {
            expected: l + 1,
            got: attn.gamma.len(),
        });
    }
    if let Some(p) = local.predicates().iter().find(|p| p.index() >= np && l > 1) {
        return Err(Error::UnknownPredicate(p.0));
    }
    let mut u = Vec::with_capacity(l + 2);
    let mut u0 = vec![0.0; n];
    u0[side.slot()] = 1.0;
    u.push(u0);
    u.push(local.operator(TemporalRelation::Any).matvec(&u[0]));
    for i in 2..=l {
        let gamma = &attn.gamma[i - 1];
        let beta = &attn.beta[i - 1];
        let alpha = &attn.alpha[i - 1];
        let mut sel = vec![0.0; n];
        for (tau, g) in gamma.iter().enumerate() {
            for (s, x) in sel.iter_mut().zip(&u[tau]) {
                *s += g * x;
            }
        }
        for (m, s) in sel.iter_mut().enumerate() {
            *s *= beta[local.predicate(m).index()];
        }
        let mut next = vec![0.0; n];
        for tr in TemporalRelation::ALL {
            local.operator(tr).matvec_into(&sel, alpha[tr.index()], &mut next);
        }
        u.push(next);
    }
    let mut last = vec![0.0; n];
    for (tau, g) in attn.gamma[l].iter().enumerate() {
        for (s, x) in last.iter_mut().zip(&u[tau]) {
            *s += g * x;
        }
    }
    u.push(last);
    Ok(u)
}

/// `u_{L+1}` recorded on the tape.
pub fn walk_on_tape<'a>(t: &mut Tape<'a>, local: &'a LocalGraph, side: Side, attn: &TapeAttention) -> Var {
    let l = attn.alpha.len();
    let n = local.len();
    let mut u0 = vec![0.0; n];
    u0[side.slot()] = 1.0;
    let u0 = t.input(u0);
    let u1 = t.sparse_matvec(local.operator(TemporalRelation::Any), u0);
    let mut u = vec![u0, u1];
    let preds: Vec<usize> = local.predicates().iter().map(|p| p.index()).collect();
    for i in 2..=l {
        let terms = (0..i).map(|tau| (attn.gamma[i - 1], tau, u[tau])).collect();
        let mix = t.combine(terms, n);
        let b = t.gather(attn.beta[i - 1], preds.clone());
        let sel = t.mul(b, mix);
        let moved: Vec<(Var, usize, Var)> = TemporalRelation::ALL
            .iter()
            .map(|&tr| (attn.alpha[i - 1], tr.index(), t.sparse_matvec(local.operator(tr), sel)))
            .collect();
        u.push(t.combine(moved, n));
    }
    let terms = (0..=l).map(|tau| (attn.gamma[l], tau, u[tau])).collect();
    t.combine(terms, n)
}

/// `γ^{L+1}[l] · Π_{i=2..l} γ^i[i−1] β^i[P_{i−1}] α^i[TR_{i−1}]`.
pub fn rule_score(attn: &AttentionState, pattern: &RulePattern) -> f64 {
    let l = pattern.len();
    let big_l = attn.max_length();
    if l > big_l {
        return 0.0;
    }
    let mut s = attn.gamma[big_l][l];
    for i in 2..=l {
        s *= attn.gamma[i - 1][i - 1]
            * attn.beta[i - 1][pattern.body[i - 2].index()]
            * attn.alpha[i - 1][pattern.relations[i - 2].index()];
    }
    s
}

pub fn rule_score_on_tape(t: &mut Tape<'_>, attn: &TapeAttention, pattern: &RulePattern) -> Option<Var> {
    let l = pattern.len();
    let big_l = attn.alpha.len();
    if l > big_l {
        return None;
    }
    let mut s = t.index(attn.gamma[big_l], l);
    for i in 2..=l {
        let g = t.index(attn.gamma[i - 1], i - 1);
        let b = t.index(attn.beta[i - 1], pattern.body[i - 2].index());
        let a = t.index(attn.alpha[i - 1], pattern.relations[i - 2].index());
        let gb = t.mul(g, b);
        let gba = t.mul(gb, a);
        s = t.mul(s, gba);
    }
    Some(s)
}
