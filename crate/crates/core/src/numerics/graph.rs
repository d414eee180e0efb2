//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Graph`] records every operation as a node holding its value. Parameter
//! leaves borrow their data from the caller's [`Tensor`]s and are tagged with
//! a parameter id, so [`Graph::backward`] can hand back one gradient buffer
//! per id without mutating anything it borrowed.

use std::borrow::Cow;

use super::kernels;
use super::tensor::Tensor;
use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(usize),
    Embed {
        table: Var,
        ids: Vec<usize>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    MatMul(Var, Var),
    RmsNorm {
        x: Var,
        gain: Var,
        inv: Vec<f64>,
    },
    Gelu(Var),
    Attention {
        qkv: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    LogSoftmax(Var),
    SliceRows {
        x: Var,
        start: usize,
    },
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    Sum(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Softplus(Var),
    Minimum(Var, Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Stack(Vec<Var>),
}

struct Node<'a> {
    value: Cow<'a, [f64]>,
    shape: Vec<usize>,
    op: Op,
    needs_grad: bool,
}

/// Per-parameter gradients produced by [`Graph::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            grads: vec![None; n],
        }
    }

    pub fn get(&self, pid: usize) -> Option<&[f64]> {
        self.grads.get(pid).and_then(|g| g.as_deref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(Option::is_none)
    }

    pub fn add(&mut self, pid: usize, g: &[f64]) {
        if self.grads.len() <= pid {
            self.grads.resize(pid + 1, None);
        }
        match &mut self.grads[pid] {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, v)| *b += v),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    pub fn merge(&mut self, other: &Gradients) {
        for (pid, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.add(pid, g);
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_deref().map(|g| (i, g)))
    }
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Cow<'a, [f64]>, shape: Vec<usize>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>().max(1));
        self.nodes.push(Node {
            value,
            shape,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn owned(&mut self, value: Vec<f64>, shape: Vec<usize>, op: Op, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(Cow::Owned(value), shape, op, needs)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    fn rows_cols(&self, v: Var) -> (usize, usize) {
        match self.shape(v) {
            [r, c] => (*r, *c),
            [c] => (1, *c),
            s => panic!("expected a matrix, got shape {s:?}"),
        }
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Var {
        self.push(Cow::Owned(data), shape, Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(vec![], vec![v])
    }

    /// Borrowed parameter leaf tagged with `pid`.
    pub fn param(&mut self, t: &'a Tensor, pid: usize) -> Var {
        self.push(
            Cow::Borrowed(t.data()),
            t.shape().to_vec(),
            Op::Param(pid),
            t.requires_grad,
        )
    }

    /// Gathers rows `ids` of a `[vocab×d]` table.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Var {
        let (rows, d) = self.rows_cols(table);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < rows, "embedding index {id} out of range {rows}");
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        self.owned(
            out,
            vec![ids.len(), d],
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        assert_eq!(self.shape(a), self.shape(b), "elementwise shape mismatch");
        self.value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x + y);
        let s = self.shape(a).to_vec();
        self.owned(v, s, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x - y);
        let s = self.shape(a).to_vec();
        self.owned(v, s, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x * y);
        let s = self.shape(a).to_vec();
        self.owned(v, s, Op::Mul(a, b), &[a, b])
    }

    /// `x[m×n] + b[n]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (_, n) = self.rows_cols(x);
        assert_eq!(self.value(b).len(), n);
        let bv = self.value(b);
        let out: Vec<f64> = self
            .value(x)
            .chunks(n)
            .flat_map(|r| r.iter().zip(bv).map(|(a, c)| a + c))
            .collect();
        let s = self.shape(x).to_vec();
        self.owned(out, s, Op::AddBias(x, b), &[x, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.rows_cols(a);
        let (k2, n) = self.rows_cols(b);
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        let mut out = vec![0.0; m * n];
        kernels::matmul(self.value(a), self.value(b), m, k, n, &mut out);
        self.owned(out, vec![m, n], Op::MatMul(a, b), &[a, b])
    }

    pub fn rms_norm(&mut self, x: Var, gain: Var) -> Var {
        let (m, d) = self.rows_cols(x);
        let mut out = vec![0.0; m * d];
        let mut inv = Vec::with_capacity(m);
        let (xv, gv) = (self.value(x), self.value(gain));
        for i in 0..m {
            inv.push(kernels::rms_norm_row(
                &xv[i * d..(i + 1) * d],
                gv,
                &mut out[i * d..(i + 1) * d],
            ));
        }
        let s = self.shape(x).to_vec();
        self.owned(out, s, Op::RmsNorm { x, gain, inv }, &[x, gain])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| kernels::gelu(v)).collect();
        let s = self.shape(x).to_vec();
        self.owned(out, s, Op::Gelu(x), &[x])
    }

    /// Multi-head causal attention over a fused `[T×3d]` projection.
    pub fn causal_attention(&mut self, qkv: Var, heads: usize) -> Var {
        let (t_len, d3) = self.rows_cols(qkv);
        let d = d3 / 3;
        let mut out = vec![0.0; t_len * d];
        let mut probs = vec![0.0; heads * t_len * t_len];
        let v = self.value(qkv);
        let mut scratch = vec![0.0; heads * t_len];
        for t in 0..t_len {
            let len = t + 1;
            kernels::attention_row(
                &v[t * d3..t * d3 + d],
                &v[d..],
                &v[2 * d..],
                d3,
                t,
                heads,
                &mut scratch[..heads * len],
                &mut out[t * d..(t + 1) * d],
            );
            for h in 0..heads {
                let dst = &mut probs[(h * t_len + t) * t_len..(h * t_len + t) * t_len + len];
                dst.copy_from_slice(&scratch[h * len..(h + 1) * len]);
            }
        }
        self.owned(
            out,
            vec![t_len, d],
            Op::Attention { qkv, heads, probs },
            &[qkv],
        )
    }

    /// Row-wise log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let (m, n) = self.rows_cols(x);
        let mut out = vec![0.0; m * n];
        let xv = self.value(x);
        for i in 0..m {
            kernels::log_softmax_row(&xv[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
        }
        let s = self.shape(x).to_vec();
        self.owned(out, s, Op::LogSoftmax(x), &[x])
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let (m, n) = self.rows_cols(x);
        assert!(start <= end && end <= m);
        let out = self.value(x)[start * n..end * n].to_vec();
        self.owned(out, vec![end - start, n], Op::SliceRows { x, start }, &[x])
    }

    /// Picks `x[i, idx[i]]` for each row, yielding a vector.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Var {
        let (m, n) = self.rows_cols(x);
        assert_eq!(m, idx.len());
        let xv = self.value(x);
        let out = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| xv[i * n + j])
            .collect();
        self.owned(
            out,
            vec![m],
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.owned(vec![s], vec![], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * c).collect();
        let s = self.shape(x).to_vec();
        self.owned(out, s, Op::Scale(x, c), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| v + c).collect();
        let s = self.shape(x).to_vec();
        self.owned(out, s, Op::AddScalar(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.exp()).collect();
        let s = self.shape(x).to_vec();
        self.owned(out, s, Op::Exp(x), &[x])
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| softplus(v)).collect();
        let s = self.shape(x).to_vec();
        self.owned(out, s, Op::Softplus(x), &[x])
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, f64::min);
        let s = self.shape(a).to_vec();
        self.owned(v, s, Op::Minimum(a, b), &[a, b])
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(x).iter().map(|v| v.clamp(lo, hi)).collect();
        let s = self.shape(x).to_vec();
        self.owned(out, s, Op::Clamp { x, lo, hi }, &[x])
    }

    /// Stacks scalars into a vector.
    pub fn stack(&mut self, xs: &[Var]) -> Var {
        let out = xs.iter().map(|&v| self.scalar(v)).collect();
        self.owned(out, vec![xs.len()], Op::Stack(xs.to_vec()), xs)
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::Param(pid) => out.add(*pid, &g),
                Op::Embed { table, ids } => {
                    if self.needs(*table) {
                        let d = node.shape[1];
                        let acc = self.acc(&mut grads, *table);
                        for (row, &id) in ids.iter().enumerate() {
                            for (a, gv) in acc[id * d..(id + 1) * d].iter_mut().zip(&g[row * d..]) {
                                *a += gv;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.acc_add(&mut grads, *a, &g, 1.0);
                    self.acc_add(&mut grads, *b, &g, 1.0);
                }
                Op::Sub(a, b) => {
                    self.acc_add(&mut grads, *a, &g, 1.0);
                    self.acc_add(&mut grads, *b, &g, -1.0);
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let bv = self.value(*b);
                        let ga: Vec<f64> = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                        self.acc_add(&mut grads, *a, &ga, 1.0);
                    }
                    if self.needs(*b) {
                        let av = self.value(*a);
                        let gb: Vec<f64> = g.iter().zip(av).map(|(x, y)| x * y).collect();
                        self.acc_add(&mut grads, *b, &gb, 1.0);
                    }
                }
                Op::AddBias(x, b) => {
                    self.acc_add(&mut grads, *x, &g, 1.0);
                    if self.needs(*b) {
                        let n = self.value(*b).len();
                        let acc = self.acc(&mut grads, *b);
                        for row in g.chunks(n) {
                            acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.rows_cols(*a);
                    let (_, n) = self.rows_cols(*b);
                    if self.needs(*a) {
                        let bt = kernels::transpose(self.value(*b), k, n);
                        let mut ga = vec![0.0; m * k];
                        kernels::matmul(&g, &bt, m, n, k, &mut ga);
                        self.acc_add(&mut grads, *a, &ga, 1.0);
                    }
                    if self.needs(*b) {
                        let av = self.value(*a);
                        let acc = self.acc(&mut grads, *b);
                        kernels::matmul_at_acc(av, &g, m, k, n, acc);
                    }
                }
                Op::RmsNorm { x, gain, inv } => {
                    let (m, d) = self.rows_cols(*x);
                    let xv = self.value(*x);
                    let gv = self.value(*gain);
                    if self.needs(*x) {
                        let mut gx = vec![0.0; m * d];
                        for i in 0..m {
                            let r = inv[i];
                            let xr = &xv[i * d..(i + 1) * d];
                            let gr = &g[i * d..(i + 1) * d];
                            let dot: f64 = (0..d).map(|j| gr[j] * gv[j] * xr[j]).sum();
                            let c = r * r * r * dot / d as f64;
                            for j in 0..d {
                                gx[i * d + j] = gr[j] * gv[j] * r - c * xr[j];
                            }
                        }
                        self.acc_add(&mut grads, *x, &gx, 1.0);
                    }
                    if self.needs(*gain) {
                        let mut gg = vec![0.0; d];
                        for i in 0..m {
                            for j in 0..d {
                                gg[j] += g[i * d + j] * xv[i * d + j] * inv[i];
                            }
                        }
                        self.acc_add(&mut grads, *gain, &gg, 1.0);
                    }
                }
                Op::Gelu(x) => {
                    let gx: Vec<f64> = self
                        .value(*x)
                        .iter()
                        .zip(&g)
                        .map(|(&v, gv)| gv * kernels::gelu_grad(v))
                        .collect();
                    self.acc_add(&mut grads, *x, &gx, 1.0);
                }
                Op::Attention { qkv, heads, probs } => {
                    if self.needs(*qkv) {
                        let gq =
                            attention_backward(self.value(*qkv), probs, &g, node.shape[0], *heads);
                        self.acc_add(&mut grads, *qkv, &gq, 1.0);
                    }
                }
                Op::LogSoftmax(x) => {
                    let (m, n) = self.rows_cols(*x);
                    let y = &node.value;
                    let mut gx = vec![0.0; m * n];
                    for i in 0..m {
                        let gs: f64 = g[i * n..(i + 1) * n].iter().sum();
                        for j in 0..n {
                            gx[i * n + j] = g[i * n + j] - y[i * n + j].exp() * gs;
                        }
                    }
                    self.acc_add(&mut grads, *x, &gx, 1.0);
                }
                Op::SliceRows { x, start } => {
                    if self.needs(*x) {
                        let n = node.shape[1];
                        let acc = self.acc(&mut grads, *x);
                        for (a, v) in acc[start * n..start * n + g.len()].iter_mut().zip(&g) {
                            *a += v;
                        }
                    }
                }
                Op::Gather { x, idx } => {
                    if self.needs(*x) {
                        let (_, n) = self.rows_cols(*x);
                        let acc = self.acc(&mut grads, *x);
                        for (i, &j) in idx.iter().enumerate() {
                            acc[i * n + j] += g[i];
                        }
                    }
                }
                Op::Sum(x) => {
                    if self.needs(*x) {
                        let acc = self.acc(&mut grads, *x);
                        acc.iter_mut().for_each(|a| *a += g[0]);
                    }
                }
                Op::Scale(x, c) => self.acc_add(&mut grads, *x, &g, *c),
                Op::AddScalar(x) => self.acc_add(&mut grads, *x, &g, 1.0),
                Op::Exp(x) => {
                    let gx: Vec<f64> = node.value.iter().zip(&g).map(|(y, gv)| y * gv).collect();
                    self.acc_add(&mut grads, *x, &gx, 1.0);
                }
                Op::Softplus(x) => {
                    let gx: Vec<f64> = self
                        .value(*x)
                        .iter()
                        .zip(&g)
                        .map(|(&v, gv)| gv * sigmoid(v))
                        .collect();
                    self.acc_add(&mut grads, *x, &gx, 1.0);
                }
                Op::Minimum(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(i, gv)| if av[i] <= bv[i] { *gv } else { 0.0 })
                        .collect();
                    let gb: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(i, gv)| if av[i] <= bv[i] { 0.0 } else { *gv })
                        .collect();
                    self.acc_add(&mut grads, *a, &ga, 1.0);
                    self.acc_add(&mut grads, *b, &gb, 1.0);
                }
                Op::Clamp { x, lo, hi } => {
                    let gx: Vec<f64> = self
                        .value(*x)
                        .iter()
                        .zip(&g)
                        .map(|(v, gv)| if v < lo || v > hi { 0.0 } else { *gv })
                        .collect();
                    self.acc_add(&mut grads, *x, &gx, 1.0);
                }
                Op::Stack(xs) => {
                    for (i, x) in xs.iter().enumerate() {
                        self.acc_add(&mut grads, *x, &g[i..i + 1], 1.0);
                    }
                }
            }
        }
        Ok(out)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut Vec<f64> {
        let n = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }

    fn acc_add(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64], c: f64) {
        if !self.needs(v) {
            return;
        }
        let slot = &mut grads[v.0];
        match slot {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, x)| *b += c * x),
            None => {
                *slot = Some(if c == 1.0 {
                    g.to_vec()
                } else {
                    g.iter().map(|x| c * x).collect()
                })
            }
        }
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

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn attention_backward(
    qkv: &[f64],
    probs: &[f64],
    g: &[f64],
    t_len: usize,
    heads: usize,
) -> Vec<f64> {
    let d3 = qkv.len() / t_len;
    let d = d3 / 3;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut gq = vec![0.0; qkv.len()];
    let mut dp = vec![0.0; t_len];
    for h in 0..heads {
        let off = h * dh;
        for t in 0..t_len {
            let p = &probs[(h * t_len + t) * t_len..(h * t_len + t) * t_len + t + 1];
            let go = &g[t * d + off..t * d + off + dh];
            let mut dot = 0.0;
            for u in 0..=t {
                let v = &qkv[u * d3 + 2 * d + off..u * d3 + 2 * d + off + dh];
                dp[u] = go.iter().zip(v).map(|(a, b)| a * b).sum();
                dot += p[u] * dp[u];
                let gv = &mut gq[u * d3 + 2 * d + off..u * d3 + 2 * d + off + dh];
                for (a, b) in gv.iter_mut().zip(go) {
                    *a += p[u] * b;
                }
            }
            for u in 0..=t {
                let ds = p[u] * (dp[u] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                for j in 0..dh {
                    let kj = qkv[u * d3 + d + off + j];
                    let qj = qkv[t * d3 + off + j];
                    gq[t * d3 + off + j] += ds * kj;
                    gq[u * d3 + d + off + j] += ds * qj;
                }
            }
        }
    }
    gq
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let x = Tensor::new(vec![1], vec![3.0]).unwrap().with_grad();
        let mut g = Graph::new();
        let v = g.param(&x, 0);
        let sq = g.mul(v, v);
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(0).unwrap(), &[6.0]);
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let z = Tensor::new(vec![1, 4], vec![0.3, -1.2, 2.0, 0.5])
            .unwrap()
            .with_grad();
        let mut g = Graph::new();
        let v = g.param(&z, 0);
        let lp = g.log_softmax(v);
        let pick = g.gather(lp, &[2]);
        let s = g.sum(pick);
        let loss = g.neg(s);
        let grads = g.backward(loss).unwrap();
        let m = z.data().iter().cloned().fold(f64::MIN, f64::max);
        let zsum: f64 = z.data().iter().map(|v| (v - m).exp()).sum();
        for (j, gv) in grads.get(0).unwrap().iter().enumerate() {
            let p = (z.data()[j] - m).exp() / zsum;
            let want = p - if j == 2 { 1.0 } else { 0.0 };
            assert!((gv - want).abs() < 1e-12);
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad();
        let mut g = Graph::new();
        let v = g.param(&x, 0);
        assert!(matches!(g.backward(v), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn unreachable_parameter_has_no_gradient() {
        let x = Tensor::new(vec![1], vec![1.0]).unwrap().with_grad();
        let y = Tensor::new(vec![1], vec![2.0]).unwrap().with_grad();
        let mut g = Graph::new();
        let vx = g.param(&x, 0);
        let _vy = g.param(&y, 1);
        let loss = g.sum(vx);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(1).is_none());
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-12);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
