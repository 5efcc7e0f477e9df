//! Minimal reverse-mode automatic differentiation over dense `f64` vectors.

use crate::graph::BoolCsc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Rows of a sparse nonnegative matrix keyed by row index.
pub type SparseRows = [(usize, Vec<f64>)];

enum Op<'a> {
    Input,
    Slice(Var, usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    OneMinus(Var),
    Sum(Var),
    Dot(Var, Var),
    Concat(Vec<Var>),
    Gather(Var, Vec<usize>),
    Affine { w: Var, x: Var, b: Option<Var> },
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    Ln(Var),
    /// `Σ_k c_k[i_k] · v_k`.
    Combine(Vec<(Var, usize, Var)>),
    SparseMatVec(&'a BoolCsc, Var),
    /// `y = Σ_m x[m] · row_m`.
    RowsT(&'a SparseRows, Var),
}

struct Node<'a> {
    op: Op<'a>,
    value: Vec<f64>,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op<'a>, value: Vec<f64>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(Op::Input, value)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.input(vec![0.0; n])
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x)[start..start + len].to_vec();
        self.push(Op::Slice(x, start), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).iter().map(|x| x * s).collect();
        self.push(Op::Scale(a, s), v)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).iter().map(|x| x + c).collect();
        self.push(Op::AddConst(a), v)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| 1.0 - x).collect();
        self.push(Op::OneMinus(a), v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = vec![self.value(a).iter().sum()];
        self.push(Op::Sum(a), v)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let v = vec![self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum()];
        self.push(Op::Dot(a, b), v)
    }

    pub fn concat(&mut self, parts: Vec<Var>) -> Var {
        let v = parts.iter().flat_map(|&p| self.value(p).iter().copied()).collect();
        self.push(Op::Concat(parts), v)
    }

    pub fn gather(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let src = self.value(a);
        let v = idx.iter().map(|&i| src[i]).collect();
        self.push(Op::Gather(a, idx), v)
    }

    pub fn index(&mut self, a: Var, i: usize) -> Var {
        self.gather(a, vec![i])
    }

    /// `W x + b` with `W` stored row-major as a flat vector.
    pub fn affine(&mut self, w: Var, x: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let cols = xv.len();
        let rows = wv.len() / cols;
        let mut v: Vec<f64> = (0..rows)
            .map(|r| wv[r * cols..(r + 1) * cols].iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        if let Some(b) = b {
            for (y, c) in v.iter_mut().zip(self.value(b)) {
                *y += c;
            }
        }
        self.push(Op::Affine { w, x, b }, v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a), v)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = softmax(self.value(a));
        self.push(Op::Softmax(a), v)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.ln()).collect();
        self.push(Op::Ln(a), v)
    }

    pub fn combine(&mut self, terms: Vec<(Var, usize, Var)>, len: usize) -> Var {
        let mut v = vec![0.0; len];
        for &(c, i, x) in &terms {
            let k = self.value(c)[i];
            if k == 0.0 {
                continue;
            }
            for (y, xv) in v.iter_mut().zip(self.value(x)) {
                *y += k * xv;
            }
        }
        self.push(Op::Combine(terms), v)
    }

    pub fn sparse_matvec(&mut self, m: &'a BoolCsc, x: Var) -> Var {
        let v = m.matvec(self.value(x));
        self.push(Op::SparseMatVec(m, x), v)
    }

    pub fn rows_t(&mut self, rows: &'a SparseRows, x: Var, len: usize) -> Var {
        let xv = self.value(x);
        let mut v = vec![0.0; len];
        for (m, row) in rows {
            let k = xv[*m];
            if k == 0.0 {
                continue;
            }
            for (y, r) in v.iter_mut().zip(row) {
                *y += k * r;
            }
        }
        self.push(Op::RowsT(rows, x), v)
    }

    /// Gradient of the scalar `out` with respect to `wrt`.
    pub fn grad(&self, out: Var, wrt: Var) -> Vec<f64> {
        let mut g: Vec<Option<Vec<f64>>> = (0..=out.0).map(|_| None).collect();
        g[out.0] = Some(vec![1.0; self.nodes[out.0].value.len()]);
        for i in (wrt.0 + 1..=out.0).rev() {
            let Some(gy) = g[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                if v.0 < wrt.0 {
                    return;
                }
                let slot = g[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
                f(slot);
            };
            match &node.op {
                Op::Input => {}
                Op::Slice(x, start) => acc(*x, &mut |gx| {
                    for (a, b) in gx[*start..*start + gy.len()].iter_mut().zip(&gy) {
                        *a += b;
                    }
                }),
                Op::Add(a, b) => {
                    acc(*a, &mut |ga| add_into(ga, &gy));
                    acc(*b, &mut |gb| add_into(gb, &gy));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |ga| add_into(ga, &gy));
                    acc(*b, &mut |gb| {
                        for (x, y) in gb.iter_mut().zip(&gy) {
                            *x -= y;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(*a, &mut |ga| {
                        for k in 0..gy.len() {
                            ga[k] += gy[k] * bv[k];
                        }
                    });
                    acc(*b, &mut |gb| {
                        for k in 0..gy.len() {
                            gb[k] += gy[k] * av[k];
                        }
                    });
                }
                Op::Scale(a, s) => acc(*a, &mut |ga| {
                    for (x, y) in ga.iter_mut().zip(&gy) {
                        *x += s * y;
                    }
                }),
                Op::AddConst(a) => acc(*a, &mut |ga| add_into(ga, &gy)),
                Op::OneMinus(a) => acc(*a, &mut |ga| {
                    for (x, y) in ga.iter_mut().zip(&gy) {
                        *x -= y;
                    }
                }),
                Op::Sum(a) => acc(*a, &mut |ga| {
                    for x in ga.iter_mut() {
                        *x += gy[0];
                    }
                }),
                Op::Dot(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(*a, &mut |ga| {
                        for k in 0..ga.len() {
                            ga[k] += gy[0] * bv[k];
                        }
                    });
                    acc(*b, &mut |gb| {
                        for k in 0..gb.len() {
                            gb[k] += gy[0] * av[k];
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        acc(*p, &mut |gp| add_into(gp, &gy[off..off + n]));
                        off += n;
                    }
                }
                Op::Gather(a, idx) => acc(*a, &mut |ga| {
                    for (k, &i) in idx.iter().enumerate() {
                        ga[i] += gy[k];
                    }
                }),
                Op::Affine { w, x, b } => {
                    let (wv, xv) = (&self.nodes[w.0].value, &self.nodes[x.0].value);
                    let cols = xv.len();
                    acc(*w, &mut |gw| {
                        for (r, &gr) in gy.iter().enumerate() {
                            if gr == 0.0 {
                                continue;
                            }
                            for c in 0..cols {
                                gw[r * cols + c] += gr * xv[c];
                            }
                        }
                    });
                    acc(*x, &mut |gx| {
                        for (r, &gr) in gy.iter().enumerate() {
                            if gr == 0.0 {
                                continue;
                            }
                            for c in 0..cols {
                                gx[c] += gr * wv[r * cols + c];
                            }
                        }
                    });
                    if let Some(b) = b {
                        acc(*b, &mut |gb| add_into(gb, &gy));
                    }
                }
                Op::Sigmoid(a) => acc(*a, &mut |ga| {
                    for k in 0..gy.len() {
                        let s = node.value[k];
                        ga[k] += gy[k] * s * (1.0 - s);
                    }
                }),
                Op::Tanh(a) => acc(*a, &mut |ga| {
                    for k in 0..gy.len() {
                        let t = node.value[k];
                        ga[k] += gy[k] * (1.0 - t * t);
                    }
                }),
                Op::Softmax(a) => {
                    let p = &node.value;
                    let inner: f64 = p.iter().zip(&gy).map(|(p, g)| p * g).sum();
                    acc(*a, &mut |ga| {
                        for k in 0..p.len() {
                            ga[k] += p[k] * (gy[k] - inner);
                        }
                    });
                }
                Op::Ln(a) => {
                    let av = &self.nodes[a.0].value;
                    acc(*a, &mut |ga| {
                        for k in 0..gy.len() {
                            ga[k] += gy[k] / av[k];
                        }
                    });
                }
                Op::Combine(terms) => {
                    for &(c, i, x) in terms {
                        let k = self.nodes[c.0].value[i];
                        let xv = &self.nodes[x.0].value;
                        let d: f64 = xv.iter().zip(&gy).map(|(a, b)| a * b).sum();
                        acc(c, &mut |gc| gc[i] += d);
                        if k != 0.0 {
                            acc(x, &mut |gx| {
                                for (a, b) in gx.iter_mut().zip(&gy) {
                                    *a += k * b;
                                }
                            });
                        }
                    }
                }
                Op::SparseMatVec(m, x) => acc(*x, &mut |gx| m.matvec_transpose_into(&gy, 1.0, gx)),
                Op::RowsT(rows, x) => acc(*x, &mut |gx| {
                    for (m, row) in rows.iter() {
                        gx[*m] += row.iter().zip(&gy).map(|(a, b)| a * b).sum::<f64>();
                    }
                }),
            }
            g[i] = Some(gy);
        }
        g[wrt.0].take().unwrap_or_else(|| vec![0.0; self.nodes[wrt.0].value.len()])
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
