//! Attention over relations, predicates and previous steps, produced either
//! by a recurrent controller or read directly from per-step logits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::density::Target;
use crate::error::{Error, Result};
use crate::time::TemporalRelation;
use crate::tkg::PredicateId;

use super::tape::{sigmoid, softmax, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    /// LSTM cell driven by the head-predicate embedding.
    Recurrent,
    /// Free logits per head predicate and step.
    Direct,
}

/// Mixing weight families per base predicate and target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mix {
    /// Query side versus mirror side (event split) or first versus last
    /// event (rule split).
    A,
    /// Start-anchored weight for densities on the first body event, also
    /// used for the mirror side's last event.
    WFirst,
    /// Start-anchored weight for densities on the last body event.
    WLast,
}

impl Mix {
    fn offset(self) -> usize {
        match self {
            Mix::A => 0,
            Mix::WFirst => 1,
            Mix::WLast => 2,
        }
    }
}

/// Shape of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub kind: ControllerKind,
    pub num_base_predicates: usize,
    pub max_length: usize,
    pub hidden: usize,
    pub embed: usize,
}

/// Offsets of the recurrent controller's blocks.
#[derive(Debug, Clone, Copy)]
struct Recurrent {
    emb: usize,
    wx: usize,
    wh: usize,
    b: usize,
    w_tr: usize,
    b_tr: usize,
    w_p: usize,
    b_p: usize,
    end: usize,
}

impl ParamSpace {
    pub fn num_predicates(&self) -> usize {
        2 * self.num_base_predicates
    }

    fn recurrent(&self) -> Recurrent {
        let (h, e, np) = (self.hidden, self.embed, self.num_predicates());
        let emb = 0;
        let wx = emb + (np + 1) * e;
        let wh = wx + 4 * h * e;
        let b = wh + 4 * h * h;
        let w_tr = b + 4 * h;
        let b_tr = w_tr + TemporalRelation::COUNT * h;
        let w_p = b_tr + TemporalRelation::COUNT;
        let b_p = w_p + np * h;
        Recurrent {
            emb,
            wx,
            wh,
            b,
            w_tr,
            b_tr,
            w_p,
            b_p,
            end: b_p + np,
        }
    }

    /// Direct logits of step `i` (1-based): `α` (4), `β` (|P|), `γ` (i).
    /// Step `L + 1` holds only `γ`.
    fn direct_step_len(&self, i: usize) -> usize {
        if i <= self.max_length {
            TemporalRelation::COUNT + self.num_predicates() + i
        } else {
            i
        }
    }

    fn direct_head_len(&self) -> usize {
        (1..=self.max_length + 1).map(|i| self.direct_step_len(i)).sum()
    }

    fn direct_offset(&self, head: PredicateId, i: usize) -> usize {
        head.index() * self.direct_head_len() + (1..i).map(|k| self.direct_step_len(k)).sum::<usize>()
    }

    pub fn controller_len(&self) -> usize {
        match self.kind {
            ControllerKind::Recurrent => self.recurrent().end,
            ControllerKind::Direct => self.num_predicates() * self.direct_head_len(),
        }
    }

    pub fn len(&self) -> usize {
        self.controller_len() + 9 * self.num_base_predicates
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Position of a mixing logit. `base` is the base predicate of the query.
    pub fn mix_index(&self, base: PredicateId, target: Target, mix: Mix) -> usize {
        self.controller_len() + base.index() * 9 + target.index() * 3 + mix.offset()
    }

    /// Zero logits everywhere (uniform attention, mixing weights 1/2) except
    /// the recurrent cell and embeddings, drawn from `N(0, scale²)`.
    pub fn init(&self, seed: u64, scale: f64) -> Vec<f64> {
        let mut theta = vec![0.0; self.len()];
        if self.kind == ControllerKind::Recurrent && scale > 0.0 {
            let r = self.recurrent();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = Normal::new(0.0, scale).expect("positive scale");
            for v in &mut theta[r.emb..r.b] {
                *v = d.sample(&mut rng);
            }
        }
        theta
    }

    pub fn validate(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: theta.len(),
            });
        }
        Ok(())
    }
}

/// `α^i`, `β^i` for steps `1..=L` and `γ^i` for steps `1..=L+1`, stored at
/// index `i - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionState {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
}

impl AttentionState {
    pub fn max_length(&self) -> usize {
        self.alpha.len()
    }

    /// Largest `|Σ v − 1|` over all attention vectors.
    pub fn normalization_error(&self) -> f64 {
        self.alpha
            .iter()
            .chain(&self.beta)
            .chain(&self.gamma)
            .map(|v| (v.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Output of one recurrent step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// Borrowed view of the recurrent controller inside `theta`.
pub struct ControllerParams<'a> {
    space: ParamSpace,
    theta: &'a [f64],
}

impl<'a> ControllerParams<'a> {
    pub fn new(space: ParamSpace, theta: &'a [f64]) -> Result<Self> {
        space.validate(theta)?;
        if space.kind != ControllerKind::Recurrent {
            return Err(Error::Config("controller parameters need the recurrent kind".into()));
        }
        Ok(ControllerParams { space, theta })
    }

    pub fn embedding(&self, token: usize) -> &'a [f64] {
        let r = self.space.recurrent();
        let e = self.space.embed;
        &self.theta[r.emb + token * e..r.emb + (token + 1) * e]
    }

    /// Embedding row of the end-of-program token.
    pub fn end_token(&self) -> usize {
        self.space.num_predicates()
    }
}

fn affine(w: &[f64], x: &[f64], b: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(r, &br)| br + w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// One LSTM update followed by the three attention read-outs. `history`
/// holds `h_0..h_{i-1}`.
pub fn controller_step(
    params: &ControllerParams<'_>,
    h_prev: &[f64],
    c_prev: &[f64],
    history: &[Vec<f64>],
    x: &[f64],
) -> Result<StepOutput> {
    if history.is_empty() {
        return Err(Error::EmptyHistory(1));
    }
    let s = params.space;
    let (h, e, np) = (s.hidden, s.embed, s.num_predicates());
    if x.len() != e || h_prev.len() != h || c_prev.len() != h {
        return Err(Error::Dimension {
            expected: h,
            got: h_prev.len(),
        });
    }
    let r = s.recurrent();
    let t = params.theta;
    let zx = affine(&t[r.wx..r.wh], x, &t[r.b..r.w_tr]);
    let zh = affine(&t[r.wh..r.b], h_prev, &vec![0.0; 4 * h]);
    let z: Vec<f64> = zx.iter().zip(&zh).map(|(a, b)| a + b).collect();
    let mut c = vec![0.0; h];
    let mut hn = vec![0.0; h];
    for k in 0..h {
        let ig = sigmoid(z[k]);
        let fg = sigmoid(z[h + k]);
        let og = sigmoid(z[2 * h + k]);
        let gg = z[3 * h + k].tanh();
        c[k] = fg * c_prev[k] + ig * gg;
        hn[k] = og * c[k].tanh();
    }
    let alpha = softmax(&affine(&t[r.w_tr..r.b_tr], &hn, &t[r.b_tr..r.w_p]));
    let beta = softmax(&affine(&t[r.w_p..r.b_p], &hn, &t[r.b_p..r.b_p + np]));
    let logits: Vec<f64> = history
        .iter()
        .map(|hp| hp.iter().zip(&hn).map(|(a, b)| a * b).sum())
        .collect();
    Ok(StepOutput {
        h: hn,
        c,
        alpha,
        beta,
        gamma: softmax(&logits),
    })
}

/// Attention for walks anchored at a query with predicate `head`.
pub fn attention(space: &ParamSpace, theta: &[f64], head: PredicateId) -> Result<AttentionState> {
    space.validate(theta)?;
    let l = space.max_length;
    let mut out = AttentionState {
        alpha: Vec::with_capacity(l),
        beta: Vec::with_capacity(l),
        gamma: Vec::with_capacity(l + 1),
    };
    match space.kind {
        ControllerKind::Direct => {
            let np = space.num_predicates();
            for i in 1..=l + 1 {
                let o = space.direct_offset(head, i);
                if i <= l {
                    out.alpha.push(softmax(&theta[o..o + TemporalRelation::COUNT]));
                    let ob = o + TemporalRelation::COUNT;
                    out.beta.push(softmax(&theta[ob..ob + np]));
                    out.gamma.push(softmax(&theta[ob + np..ob + np + i]));
                } else {
                    out.gamma.push(softmax(&theta[o..o + i]));
                }
            }
        }
        ControllerKind::Recurrent => {
            let p = ControllerParams::new(*space, theta)?;
            let mut history = vec![vec![0.0; space.hidden]];
            let mut c = vec![0.0; space.hidden];
            for i in 1..=l + 1 {
                let token = if i <= l { head.index() } else { p.end_token() };
                let h_prev = history[i - 1].clone();
                let step = controller_step(&p, &h_prev, &c, &history, p.embedding(token))?;
                if i <= l {
                    out.alpha.push(step.alpha);
                    out.beta.push(step.beta);
                }
                out.gamma.push(step.gamma);
                c = step.c;
                history.push(step.h);
            }
        }
    }
    Ok(out)
}

/// [`AttentionState`] as tape variables.
#[derive(Debug, Clone)]
pub struct TapeAttention {
    pub alpha: Vec<Var>,
    pub beta: Vec<Var>,
    pub gamma: Vec<Var>,
}

impl TapeAttention {
    pub fn snapshot(&self, t: &Tape<'_>) -> AttentionState {
        let get = |vs: &[Var]| vs.iter().map(|&v| t.value(v).to_vec()).collect();
        AttentionState {
            alpha: get(&self.alpha),
            beta: get(&self.beta),
            gamma: get(&self.gamma),
        }
    }
}

/// [`attention`] recorded on `t`, with `theta` the parameter leaf.
pub fn attention_on_tape(t: &mut Tape<'_>, space: &ParamSpace, theta: Var, head: PredicateId) -> TapeAttention {
    let l = space.max_length;
    let np = space.num_predicates();
    let mut out = TapeAttention {
        alpha: Vec::new(),
        beta: Vec::new(),
        gamma: Vec::new(),
    };
    match space.kind {
        ControllerKind::Direct => {
            for i in 1..=l + 1 {
                let o = space.direct_offset(head, i);
                if i <= l {
                    let a = t.slice(theta, o, TemporalRelation::COUNT);
                    out.alpha.push(t.softmax(a));
                    let ob = o + TemporalRelation::COUNT;
                    let b = t.slice(theta, ob, np);
                    out.beta.push(t.softmax(b));
                    let g = t.slice(theta, ob + np, i);
                    out.gamma.push(t.softmax(g));
                } else {
                    let g = t.slice(theta, o, i);
                    out.gamma.push(t.softmax(g));
                }
            }
        }
        ControllerKind::Recurrent => {
            let r = space.recurrent();
            let (h, e) = (space.hidden, space.embed);
            let wx = t.slice(theta, r.wx, r.wh - r.wx);
            let wh = t.slice(theta, r.wh, r.b - r.wh);
            let b = t.slice(theta, r.b, 4 * h);
            let w_tr = t.slice(theta, r.w_tr, r.b_tr - r.w_tr);
            let b_tr = t.slice(theta, r.b_tr, TemporalRelation::COUNT);
            let w_p = t.slice(theta, r.w_p, r.b_p - r.w_p);
            let b_p = t.slice(theta, r.b_p, np);
            let x_head = t.slice(theta, r.emb + head.index() * e, e);
            let x_end = t.slice(theta, r.emb + np * e, e);
            let mut history = vec![t.zeros(h)];
            let mut c = t.zeros(h);
            for i in 1..=l + 1 {
                let x = if i <= l { x_head } else { x_end };
                let zx = t.affine(wx, x, Some(b));
                let zh = t.affine(wh, history[i - 1], None);
                let z = t.add(zx, zh);
                let zi = t.slice(z, 0, h);
                let zf = t.slice(z, h, h);
                let zo = t.slice(z, 2 * h, h);
                let zg = t.slice(z, 3 * h, h);
                let ig = t.sigmoid(zi);
                let fg = t.sigmoid(zf);
                let og = t.sigmoid(zo);
                let gg = t.tanh(zg);
                let fc = t.mul(fg, c);
                let ic = t.mul(ig, gg);
                c = t.add(fc, ic);
                let tc = t.tanh(c);
                let hn = t.mul(og, tc);
                if i <= l {
                    let za = t.affine(w_tr, hn, Some(b_tr));
                    out.alpha.push(t.softmax(za));
                    let zb = t.affine(w_p, hn, Some(b_p));
                    out.beta.push(t.softmax(zb));
                }
                let dots: Vec<Var> = history.iter().map(|&hp| t.dot(hp, hn)).collect();
                let logits = t.concat(dots);
                out.gamma.push(t.softmax(logits));
                history.push(hn);
            }
        }
    }
    out
}

/// Mixing weight in `[0, 1]`.
pub fn mix_weight(space: &ParamSpace, theta: &[f64], base: PredicateId, target: Target, mix: Mix) -> f64 {
    sigmoid(theta[space.mix_index(base, target, mix)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn space(kind: ControllerKind) -> ParamSpace {
        ParamSpace {
            kind,
            num_base_predicates: 3,
            max_length: 3,
            hidden: 5,
            embed: 4,
        }
    }

    fn random_theta(s: &ParamSpace, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 0.7).unwrap();
        (0..s.len()).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn attention_is_normalized() {
        for kind in [ControllerKind::Recurrent, ControllerKind::Direct] {
            let s = space(kind);
            let theta = random_theta(&s, 3);
            for head in 0..6 {
                let a = attention(&s, &theta, PredicateId(head)).unwrap();
                assert!(a.normalization_error() < 1e-12);
                assert_eq!(a.alpha.len(), 3);
                assert_eq!(a.gamma.len(), 4);
                assert_eq!(a.gamma[0], vec![1.0]);
                assert_eq!(a.gamma[3].len(), 4);
                assert_eq!(a.beta[0].len(), 6);
            }
        }
    }

    #[test]
    fn zero_projection_gives_uniform_alpha() {
        let s = space(ControllerKind::Recurrent);
        let theta = s.init(1, 0.5);
        let a = attention(&s, &theta, PredicateId(1)).unwrap();
        for v in &a.alpha {
            for &x in v {
                assert_abs_diff_eq!(x, 0.25, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn empty_history_is_an_error() {
        let s = space(ControllerKind::Recurrent);
        let theta = s.init(1, 0.5);
        let p = ControllerParams::new(s, &theta).unwrap();
        let z = vec![0.0; 5];
        assert!(matches!(
            controller_step(&p, &z, &z, &[], p.embedding(0)),
            Err(Error::EmptyHistory(_))
        ));
        let one = controller_step(&p, &z, &z, &[z.clone()], p.embedding(0)).unwrap();
        assert_eq!(one.gamma, vec![1.0]);
    }

    #[test]
    fn tape_matches_plain_forward() {
        for kind in [ControllerKind::Recurrent, ControllerKind::Direct] {
            let s = space(kind);
            let theta = random_theta(&s, 9);
            for head in [0, 4] {
                let plain = attention(&s, &theta, PredicateId(head)).unwrap();
                let mut t = Tape::new();
                let leaf = t.input(theta.clone());
                let ta = attention_on_tape(&mut t, &s, leaf, PredicateId(head)).snapshot(&t);
                for (a, b) in [(&plain.alpha, &ta.alpha), (&plain.beta, &ta.beta), (&plain.gamma, &ta.gamma)] {
                    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
                        assert_abs_diff_eq!(x, y, epsilon = 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn mixing_slots_are_disjoint() {
        let s = space(ControllerKind::Direct);
        let mut seen = std::collections::HashSet::new();
        for p in 0..3 {
            for t in Target::ALL {
                for m in [Mix::A, Mix::WFirst, Mix::WLast] {
                    let i = s.mix_index(PredicateId(p), t, m);
                    assert!(i >= s.controller_len() && i < s.len());
                    assert!(seen.insert(i));
                }
            }
        }
        assert_eq!(mix_weight(&s, &s.init(0, 0.1), PredicateId(2), Target::End, Mix::A), 0.5);
    }
}
