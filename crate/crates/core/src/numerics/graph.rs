//! Tape-based reverse-mode differentiation over small dense tensors.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse and returns dense gradients
//! for every parameter that was read through [`Graph::param`].
//!
//! Shape errors inside the tape are programming errors and panic; callers
//! validate user-facing inputs before building nodes.

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{dot, norm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatVec(Var, Var),
    MatTVec(Var, Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Dot(Var, Var),
    Stack(Vec<Var>),
    StackRows(Vec<Var>),
    Row(Var, usize),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    WeightedSum(Var, Vec<Var>),
    Sum(Var),
    Mean(Vec<Var>),
    Max(Var, usize),
    Nll(Var, usize),
    L2Normalize(Var, f64),
    Cosine(Var, Var, f64),
    Div(Var, Var),
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.tensor(v).data()
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let d = self.value(v);
        debug_assert_eq!(d.len(), 1);
        d[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.tensor(v).shape()
    }

    fn vec_of(&self, v: Var) -> &[f64] {
        self.value(v)
    }

    /// Reads a parameter into the tape; repeated reads share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> Var {
        self.constant(Tensor::vector(data))
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (x, y) = (self.vec_of(a), self.vec_of(b));
        assert_eq!(x.len(), y.len(), "elementwise length mismatch");
        let out: Vec<f64> = x.iter().zip(y).map(|(p, q)| f(*p, *q)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, out).expect("shape"), op)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.vec_of(a).iter().map(|x| f(*x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, out).expect("shape"), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    /// Left-to-right sum of equally shaped nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Var {
        let (&first, rest) = terms.split_first().expect("add_all of nothing");
        rest.iter().fold(first, |acc, &t| self.add(acc, t))
    }

    /// `m x` for `m: [r, c]` and `x: [c]`.
    pub fn matvec(&mut self, m: Var, x: Var) -> Var {
        let t = self.tensor(m);
        let (r, c) = (t.rows(), t.cols());
        let xv = self.vec_of(x);
        assert_eq!(c, xv.len(), "matvec: matrix has {c} columns, vector has {}", xv.len());
        let out: Vec<f64> = (0..r).map(|i| dot(t.row(i), xv)).collect();
        self.push(Tensor::vector(out), Op::MatVec(m, x))
    }

    /// `mᵀ x` for `m: [r, c]` and `x: [r]`.
    pub fn mat_t_vec(&mut self, m: Var, x: Var) -> Var {
        let t = self.tensor(m);
        let (r, c) = (t.rows(), t.cols());
        let xv = self.vec_of(x);
        assert_eq!(r, xv.len(), "mat_t_vec: matrix has {r} rows, vector has {}", xv.len());
        let mut out = vec![0.0; c];
        for (i, &xi) in xv.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(t.row(i)) {
                *o += w * xi;
            }
        }
        self.push(Tensor::vector(out), Op::MatTVec(m, x))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let out: Vec<f64> = parts.iter().flat_map(|&p| self.vec_of(p).to_vec()).collect();
        self.push(Tensor::vector(out), Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.vec_of(a)[start..start + len].to_vec();
        self.push(Tensor::vector(out), Op::Slice(a, start))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.vec_of(a), self.vec_of(b));
        assert_eq!(x.len(), y.len(), "dot length mismatch");
        let v = dot(x, y);
        self.push(Tensor::scalar(v), Op::Dot(a, b))
    }

    /// `aᵀ m b`.
    pub fn bilinear(&mut self, a: Var, m: Var, b: Var) -> Var {
        let mb = self.matvec(m, b);
        self.dot(a, mb)
    }

    /// Stacks single-element nodes into a vector.
    pub fn stack(&mut self, scalars: &[Var]) -> Var {
        let out: Vec<f64> = scalars.iter().map(|&s| self.scalar(s)).collect();
        self.push(Tensor::vector(out), Op::Stack(scalars.to_vec()))
    }

    /// Stacks equally sized vectors into a `[k, c]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        let c = self.vec_of(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            let v = self.vec_of(r);
            assert_eq!(v.len(), c, "stack_rows: ragged rows");
            data.extend_from_slice(v);
        }
        self.push(
            Tensor::new(vec![rows.len(), c], data).expect("shape"),
            Op::StackRows(rows.to_vec()),
        )
    }

    pub fn row(&mut self, m: Var, r: usize) -> Var {
        let out = self.tensor(m).row(r).to_vec();
        self.push(Tensor::vector(out), Op::Row(m, r))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = super::tensor::softmax(self.vec_of(a)).expect("softmax of empty node");
        self.push(Tensor::vector(out), Op::Softmax(a))
    }

    /// `Σ_k w[k] · vs[k]`.
    pub fn weighted_sum(&mut self, w: Var, vs: &[Var]) -> Var {
        let wv = self.vec_of(w).to_vec();
        assert_eq!(wv.len(), vs.len(), "weighted_sum: weight count");
        let d = self.vec_of(vs[0]).len();
        let mut out = vec![0.0; d];
        for (wk, &v) in wv.iter().zip(vs) {
            for (o, x) in out.iter_mut().zip(self.vec_of(v)) {
                *o += wk * x;
            }
        }
        self.push(Tensor::vector(out), Op::WeightedSum(w, vs.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.vec_of(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Elementwise average of equally sized vectors.
    pub fn mean(&mut self, vs: &[Var]) -> Var {
        let d = self.vec_of(vs[0]).len();
        let mut out = vec![0.0; d];
        for &v in vs {
            for (o, x) in out.iter_mut().zip(self.vec_of(v)) {
                *o += x;
            }
        }
        let k = vs.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
        self.push(Tensor::vector(out), Op::Mean(vs.to_vec()))
    }

    /// Largest entry; the gradient flows to the first maximiser.
    pub fn max(&mut self, a: Var) -> Var {
        let (idx, val) = argmax(self.vec_of(a));
        self.push(Tensor::scalar(val), Op::Max(a, idx))
    }

    /// `-log softmax(logits)[target]`.
    pub fn nll(&mut self, logits: Var, target: usize) -> Var {
        let x = self.vec_of(logits);
        assert!(target < x.len(), "nll target out of range");
        let v = log_sum_exp(x) - x[target];
        self.push(Tensor::scalar(v), Op::Nll(logits, target))
    }

    /// `a / max(‖a‖, eps)`.
    pub fn l2_normalize(&mut self, a: Var, eps: f64) -> Var {
        let x = self.vec_of(a);
        let n = norm(x).max(eps);
        let out = x.iter().map(|v| v / n).collect();
        self.push(Tensor::vector(out), Op::L2Normalize(a, eps))
    }

    /// Cosine similarity with norms floored at `eps`.
    pub fn cosine(&mut self, a: Var, b: Var, eps: f64) -> Var {
        let (x, y) = (self.vec_of(a), self.vec_of(b));
        assert_eq!(x.len(), y.len(), "cosine length mismatch");
        let c = dot(x, y) / (norm(x).max(eps) * norm(y).max(eps));
        self.push(Tensor::scalar(c), Op::Cosine(a, b, eps))
    }

    /// Elementwise quotient of single-element nodes.
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.scalar(a) / self.scalar(b);
        self.push(Tensor::scalar(v), Op::Div(a, b))
    }

    /// Reverse sweep from a single-element `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads = Gradients::zeros_like(self.params);
        let mut adj: Vec<Option<Vec<f64>>> = Vec::with_capacity(root.0 + 1);
        adj.resize_with(root.0 + 1, || None);
        assert_eq!(self.value(root).len(), 1, "backward root must be a scalar");
        adj[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = match &node.value {
                Value::Owned(t) => t.data(),
                Value::Param(id) => self.params.get(*id).data(),
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    for (acc, x) in grads.get_mut(*id).iter_mut().zip(&g) {
                        *acc += x;
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, &g);
                    accumulate(&mut adj, *b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                    accumulate(&mut adj, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = g.iter().zip(self.value(*b)).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(self.value(*a)).map(|(x, y)| x * y).collect();
                    accumulate(&mut adj, *a, &ga);
                    accumulate(&mut adj, *b, &gb);
                }
                Op::Scale(a, c) => {
                    let ga: Vec<f64> = g.iter().map(|x| x * c).collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::MatVec(m, x) => {
                    let t = self.tensor(*m);
                    let (r, c) = (t.rows(), t.cols());
                    let xv = self.value(*x);
                    let mut gm = vec![0.0; r * c];
                    let mut gx = vec![0.0; c];
                    for i in 0..r {
                        let gi = g[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let row = t.row(i);
                        for j in 0..c {
                            gm[i * c + j] = gi * xv[j];
                            gx[j] += gi * row[j];
                        }
                    }
                    accumulate(&mut adj, *m, &gm);
                    accumulate(&mut adj, *x, &gx);
                }
                Op::MatTVec(m, x) => {
                    let t = self.tensor(*m);
                    let (r, c) = (t.rows(), t.cols());
                    let xv = self.value(*x);
                    let mut gm = vec![0.0; r * c];
                    let mut gx = vec![0.0; r];
                    for i in 0..r {
                        let row = t.row(i);
                        gx[i] = dot(row, &g);
                        for j in 0..c {
                            gm[i * c + j] = xv[i] * g[j];
                        }
                    }
                    accumulate(&mut adj, *m, &gm);
                    accumulate(&mut adj, *x, &gx);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        accumulate(&mut adj, *p, &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Slice(a, start) => {
                    let mut ga = vec![0.0; self.value(*a).len()];
                    ga[*start..*start + g.len()].copy_from_slice(&g);
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Dot(a, b) => {
                    let ga: Vec<f64> = self.value(*b).iter().map(|y| y * g[0]).collect();
                    let gb: Vec<f64> = self.value(*a).iter().map(|x| x * g[0]).collect();
                    accumulate(&mut adj, *a, &ga);
                    accumulate(&mut adj, *b, &gb);
                }
                Op::Stack(items) => {
                    for (s, gi) in items.iter().zip(&g) {
                        accumulate(&mut adj, *s, &[*gi]);
                    }
                }
                Op::StackRows(rows) => {
                    let c = g.len() / rows.len();
                    for (k, r) in rows.iter().enumerate() {
                        accumulate(&mut adj, *r, &g[k * c..(k + 1) * c]);
                    }
                }
                Op::Row(m, r) => {
                    let t = self.tensor(*m);
                    let c = t.cols();
                    let mut gm = vec![0.0; t.len()];
                    gm[r * c..(r + 1) * c].copy_from_slice(&g);
                    accumulate(&mut adj, *m, &gm);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g.iter().zip(out).map(|(x, y)| x * (1.0 - y * y)).collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g.iter().zip(out).map(|(x, y)| x * y * (1.0 - y)).collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Relu(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(self.value(*a))
                        .map(|(x, v)| if *v > 0.0 { *x } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Softmax(a) => {
                    let inner = dot(&g, out);
                    let ga: Vec<f64> = g.iter().zip(out).map(|(x, y)| y * (x - inner)).collect();
                    accumulate(&mut adj, *a, &ga);
                }
                Op::WeightedSum(w, vs) => {
                    let wv = self.value(*w);
                    let gw: Vec<f64> = vs.iter().map(|v| dot(self.value(*v), &g)).collect();
                    accumulate(&mut adj, *w, &gw);
                    for (wk, v) in wv.iter().zip(vs) {
                        let gv: Vec<f64> = g.iter().map(|x| x * wk).collect();
                        accumulate(&mut adj, *v, &gv);
                    }
                }
                Op::Sum(a) => {
                    let ga = vec![g[0]; self.value(*a).len()];
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Mean(vs) => {
                    let k = vs.len() as f64;
                    let gv: Vec<f64> = g.iter().map(|x| x / k).collect();
                    for v in vs {
                        accumulate(&mut adj, *v, &gv);
                    }
                }
                Op::Max(a, idx) => {
                    let mut ga = vec![0.0; self.value(*a).len()];
                    ga[*idx] = g[0];
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Nll(logits, target) => {
                    let p = super::tensor::softmax(self.value(*logits)).expect("nonempty");
                    let mut ga: Vec<f64> = p.iter().map(|pi| pi * g[0]).collect();
                    ga[*target] -= g[0];
                    accumulate(&mut adj, *logits, &ga);
                }
                Op::L2Normalize(a, eps) => {
                    let x = self.value(*a);
                    let n = norm(x);
                    let ga: Vec<f64> = if n > *eps {
                        let proj = dot(out, &g);
                        g.iter().zip(out).map(|(gi, yi)| (gi - yi * proj) / n).collect()
                    } else {
                        g.iter().map(|gi| gi / eps).collect()
                    };
                    accumulate(&mut adj, *a, &ga);
                }
                Op::Cosine(a, b, eps) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let (nx, ny) = (norm(x), norm(y));
                    let (dx, dy) = (nx.max(*eps), ny.max(*eps));
                    let c = out[0];
                    let ga: Vec<f64> = x
                        .iter()
                        .zip(y)
                        .map(|(xi, yi)| {
                            let mut d = yi / (dx * dy);
                            if nx > *eps {
                                d -= c * xi / (nx * nx);
                            }
                            d * g[0]
                        })
                        .collect();
                    let gb: Vec<f64> = x
                        .iter()
                        .zip(y)
                        .map(|(xi, yi)| {
                            let mut d = xi / (dx * dy);
                            if ny > *eps {
                                d -= c * yi / (ny * ny);
                            }
                            d * g[0]
                        })
                        .collect();
                    accumulate(&mut adj, *a, &ga);
                    accumulate(&mut adj, *b, &gb);
                }
                Op::Div(a, b) => {
                    let (x, y) = (self.scalar(*a), self.scalar(*b));
                    accumulate(&mut adj, *a, &[g[0] / y]);
                    accumulate(&mut adj, *b, &[-g[0] * x / (y * y)]);
                }
            }
        }
        grads
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut adj[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, x)| *a += x),
        slot @ None => *slot = Some(g.to_vec()),
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

/// Index and value of the first maximum.
pub(crate) fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

pub(crate) fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
