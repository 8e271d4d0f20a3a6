//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass. Values
//! are computed eagerly; [`Graph::backward`] walks the tape in reverse and
//! returns the gradient of a scalar with respect to every node that depends
//! on a trainable leaf.

use std::collections::HashMap;

use crate::gemm::{self, Operand};
use crate::params::{ParamId, ParamStore};
use crate::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const NO_ROW: u32 = u32::MAX;

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Abs(Var),
    Clamp(Var, f32, f32),
    Sum(Var),
    RowSum(Var),
    ColSum(Var),
    RowNorm(Var),
    LayerNorm { a: Var, rstd: Vec<f32> },
    ConcatCols(Vec<Var>),
    SliceCols { a: Var, start: usize },
    ConcatRows(Vec<Var>),
    GatherRows { a: Var, idx: Vec<u32> },
    MixRows { a: Var, taps: Vec<[(u32, f32); 2]> },
    GroupSum { a: Var, groups: Vec<u32> },
    Reshape(Var),
    LogSoftmax(Var),
    StraightThrough(Var),
    LstmCell { gates: Var, c_prev: Var, acts: Tensor, tanh_c: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every parameter that took part in the forward pass and
    /// received one, ordered by parameter id.
    pub fn into_param_grads(mut self) -> Vec<(ParamId, Tensor)> {
        let mut params = std::mem::take(&mut self.params);
        params.sort_by_key(|(id, _)| *id);
        params.into_iter().filter_map(|(id, v)| self.grads[v.0].take().map(|g| (id, g))).collect()
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf that receives gradient (inputs under test, detached features
    /// that still need their own gradient, ...).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Trainable parameter; repeated requests for the same id share a node.
    /// A graph tracks trainable parameters of a single store; other stores
    /// must enter through [`Graph::frozen`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    /// Parameter value as a constant: used when a network must run forward
    /// without being updated.
    pub fn frozen(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.constant(store.get(id).clone())
    }

    /// Copy of `a` cut off from the tape.
    pub fn detach(&mut self, a: Var) -> Var {
        let t = self.value(a).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) · op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = Operand::new(av, ta).shape();
        let (k2, n) = Operand::new(bv, tb).shape();
        assert_eq!(k, k2, "matmul inner dimension mismatch: {k} vs {k2}");
        let mut out = Tensor::zeros(m, n);
        gemm::gemm(Operand::new(av, ta), Operand::new(bv, tb), &mut out, false);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul { a, b, ta, tb }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.shape(), (1, av.cols()), "add_row expects a 1x{} row", av.cols());
        let mut out = av.clone();
        let r = rv.data();
        for i in 0..out.rows() {
            for (x, &b) in out.row_mut(i).iter_mut().zip(r) {
                *x += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    /// Multiplies every row of `a` elementwise by a `1 × c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.shape(), (1, av.cols()), "mul_row expects a 1x{} row", av.cols());
        let mut out = av.clone();
        let r = rv.data();
        for i in 0..out.rows() {
            for (x, &b) in out.row_mut(i).iter_mut().zip(r) {
                *x *= b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::MulRow(a, row), ng)
    }

    /// Scales row `i` of `a` by `col[i]` (`col` is `r × 1`).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(col));
        assert_eq!(cv.shape(), (av.rows(), 1), "mul_col expects a {}x1 column", av.rows());
        let mut out = av.clone();
        for i in 0..out.rows() {
            let s = cv.data()[i];
            out.row_mut(i).iter_mut().for_each(|x| *x *= s);
        }
        let ng = self.ng(a) || self.ng(col);
        self.push(out, Op::MulCol(a, col), ng)
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Var {
        let out = self.value(a).map(|x| x + s);
        let ng = self.ng(a);
        self.push(out, Op::AddScalar(a), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let out = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f32::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f32::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f32::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f32::abs, Op::Abs(a))
    }

    /// Clamps into `[lo, hi]`; gradient is zero outside the range.
    pub fn clamp(&mut self, a: Var, lo: f32, hi: f32) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Sum of all entries as a `1 × 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum() as f32;
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f32)
    }

    /// Per-row sums, `r × 1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows()).map(|i| av.row(i).iter().map(|&x| x as f64).sum::<f64>() as f32).collect();
        let ng = self.ng(a);
        self.push(Tensor::column_vector(data), Op::RowSum(a), ng)
    }

    /// Per-column sums, `1 × c`.
    pub fn col_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut acc = vec![0.0f64; av.cols()];
        for i in 0..av.rows() {
            for (s, &x) in acc.iter_mut().zip(av.row(i)) {
                *s += x as f64;
            }
        }
        let ng = self.ng(a);
        self.push(Tensor::row_vector(acc.into_iter().map(|x| x as f32).collect()), Op::ColSum(a), ng)
    }

    /// Euclidean norm of every row, `r × 1`.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows()).map(|i| av.row(i).iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt() as f32).collect();
        let ng = self.ng(a);
        self.push(Tensor::column_vector(data), Op::RowNorm(a), ng)
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f32) -> Var {
        let av = self.value(a);
        let (r, c) = av.shape();
        let mut out = Tensor::zeros(r, c);
        let mut rstd = Vec::with_capacity(r);
        for i in 0..r {
            let row = av.row(i);
            let mean = row.iter().map(|&x| x as f64).sum::<f64>() / c as f64;
            let var = row.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps as f64).sqrt();
            for (o, &x) in out.row_mut(i).iter_mut().zip(row) {
                *o = ((x as f64 - mean) * rs) as f32;
            }
            rstd.push(rs as f32);
        }
        let ng = self.ng(a);
        self.push(out, Op::LayerNorm { a, rstd }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            let w = pv.cols();
            for i in 0..rows {
                out.row_mut(i)[off..off + w].copy_from_slice(pv.row(i));
            }
            off += w;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols(), "slice_cols out of range");
        let mut out = Tensor::zeros(av.rows(), len);
        for i in 0..av.rows() {
            out.row_mut(i).copy_from_slice(&av.row(i)[start..start + len]);
        }
        let ng = self.ng(a);
        self.push(out, Op::SliceCols { a, start }, ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::vstack(&vals);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Output row `i` is row `idx[i]` of `a`, or zeros for `None`.
    pub fn gather_rows(&mut self, a: Var, idx: &[Option<usize>]) -> Var {
        let av = self.value(a);
        let c = av.cols();
        let mut out = Tensor::zeros(idx.len(), c);
        let mut packed = Vec::with_capacity(idx.len());
        for (i, &j) in idx.iter().enumerate() {
            match j {
                Some(j) => {
                    assert!(j < av.rows(), "gather index {j} out of range {}", av.rows());
                    out.row_mut(i).copy_from_slice(av.row(j));
                    packed.push(j as u32);
                }
                None => packed.push(NO_ROW),
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::GatherRows { a, idx: packed }, ng)
    }

    /// Output row `i` is `w0·a[j0] + w1·a[j1]` for `taps[i] = [(j0, w0), (j1, w1)]`.
    pub fn mix_rows(&mut self, a: Var, taps: Vec<[(u32, f32); 2]>) -> Var {
        let av = self.value(a);
        let c = av.cols();
        let mut out = Tensor::zeros(taps.len(), c);
        for (i, t) in taps.iter().enumerate() {
            let o = out.row_mut(i);
            for &(j, w) in t {
                if w != 0.0 {
                    for (x, &y) in o.iter_mut().zip(av.row(j as usize)) {
                        *x += w * y;
                    }
                }
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::MixRows { a, taps }, ng)
    }

    /// Sums rows of `a` into `n_groups` buckets: output row `g` is the sum of
    /// rows `i` with `groups[i] == g`.
    pub fn group_sum(&mut self, a: Var, groups: &[usize], n_groups: usize) -> Var {
        let av = self.value(a);
        assert_eq!(groups.len(), av.rows(), "group_sum needs one group per row");
        let c = av.cols();
        let mut acc = vec![0.0f64; n_groups * c];
        for (i, &g) in groups.iter().enumerate() {
            assert!(g < n_groups, "group id out of range");
            for (s, &x) in acc[g * c..(g + 1) * c].iter_mut().zip(av.row(i)) {
                *s += x as f64;
            }
        }
        let out = Tensor::from_vec(n_groups, c, acc.into_iter().map(|x| x as f32).collect());
        let ng = self.ng(a);
        let groups = groups.iter().map(|&g| g as u32).collect();
        self.push(out, Op::GroupSum { a, groups }, ng)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let out = self.value(a).clone().reshape(rows, cols);
        let ng = self.ng(a);
        self.push(out, Op::Reshape(a), ng)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = av.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let mx = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = mx as f64 + row.iter().map(|&x| ((x - mx) as f64).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x = (*x as f64 - lse) as f32);
        }
        let ng = self.ng(a);
        self.push(out, Op::LogSoftmax(a), ng)
    }

    /// Forward value is `quantized`; the gradient is copied unchanged to `z`.
    pub fn straight_through(&mut self, z: Var, quantized: Tensor) -> Var {
        assert_eq!(self.shape(z), quantized.shape(), "straight_through shape mismatch");
        let ng = self.ng(z);
        self.push(quantized, Op::StraightThrough(z), ng)
    }

    /// One LSTM cell update. `gates` holds the `K × 4H` pre-activations in
    /// `[input, forget, cell, output]` order; returns `K × 2H` = `[h | c]`.
    pub fn lstm_cell(&mut self, gates: Var, c_prev: Var) -> Var {
        let gv = self.value(gates);
        let cv = self.value(c_prev);
        let (k, h4) = gv.shape();
        let h = h4 / 4;
        assert_eq!(h4, 4 * h, "gate width must be a multiple of 4");
        assert_eq!(cv.shape(), (k, h), "cell state shape mismatch");
        let mut acts = Tensor::zeros(k, h4);
        let mut tanh_c = Tensor::zeros(k, h);
        let mut out = Tensor::zeros(k, 2 * h);
        for r in 0..k {
            let g = gv.row(r);
            let a = acts.row_mut(r);
            for j in 0..h {
                a[j] = sigmoid(g[j]);
                a[h + j] = sigmoid(g[h + j]);
                a[2 * h + j] = g[2 * h + j].tanh();
                a[3 * h + j] = sigmoid(g[3 * h + j]);
            }
            let a = acts.row(r);
            let cp = cv.row(r);
            let o = out.row_mut(r);
            let tc = tanh_c.row_mut(r);
            for j in 0..h {
                let c = a[h + j] * cp[j] + a[j] * a[2 * h + j];
                tc[j] = c.tanh();
                o[j] = a[3 * h + j] * tc[j];
                o[h + j] = c;
            }
        }
        let ng = self.ng(gates) || self.ng(c_prev);
        self.push(out, Op::LstmCell { gates, c_prev, acts, tanh_c }, ng)
    }

    /// Gradient of the `1 × 1` node `loss` with respect to every node that
    /// needs one.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            // Interior gradients are kept so callers can inspect them.
            grads[i] = Some(g);
        }
        let params = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        Gradients { grads, params }
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let ng = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (val(*a), val(*b));
                if ng(*a) {
                    let dst = grad_slot(grads, *a, av.shape());
                    if !*ta {
                        gemm::gemm(Operand::new(g, false), Operand::new(bv, !*tb), dst, true);
                    } else {
                        gemm::gemm(Operand::new(bv, *tb), Operand::new(g, true), dst, true);
                    }
                }
                if ng(*b) {
                    let dst = grad_slot(grads, *b, bv.shape());
                    if !*tb {
                        gemm::gemm(Operand::new(av, !*ta), Operand::new(g, false), dst, true);
                    } else {
                        gemm::gemm(Operand::new(g, true), Operand::new(av, *ta), dst, true);
                    }
                }
            }
            Op::Add(a, b) => {
                if ng(*a) {
                    accumulate(grads, *a, g, 1.0);
                }
                if ng(*b) {
                    accumulate(grads, *b, g, 1.0);
                }
            }
            Op::Sub(a, b) => {
                if ng(*a) {
                    accumulate(grads, *a, g, 1.0);
                }
                if ng(*b) {
                    accumulate(grads, *b, g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                if ng(*a) {
                    let d = g.zip_map(val(*b), |x, y| x * y);
                    accumulate(grads, *a, &d, 1.0);
                }
                if ng(*b) {
                    let d = g.zip_map(val(*a), |x, y| x * y);
                    accumulate(grads, *b, &d, 1.0);
                }
            }
            Op::AddRow(a, row) => {
                if ng(*a) {
                    accumulate(grads, *a, g, 1.0);
                }
                if ng(*row) {
                    let d = col_sums(g);
                    accumulate(grads, *row, &d, 1.0);
                }
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (val(*a), val(*row));
                if ng(*a) {
                    let mut d = g.clone();
                    for i in 0..d.rows() {
                        for (x, &r) in d.row_mut(i).iter_mut().zip(rv.data()) {
                            *x *= r;
                        }
                    }
                    accumulate(grads, *a, &d, 1.0);
                }
                if ng(*row) {
                    let d = col_sums(&g.zip_map(av, |x, y| x * y));
                    accumulate(grads, *row, &d, 1.0);
                }
            }
            Op::MulCol(a, col) => {
                let (av, cv) = (val(*a), val(*col));
                if ng(*a) {
                    let mut d = g.clone();
                    for i in 0..d.rows() {
                        let s = cv.data()[i];
                        d.row_mut(i).iter_mut().for_each(|x| *x *= s);
                    }
                    accumulate(grads, *a, &d, 1.0);
                }
                if ng(*col) {
                    let data = (0..g.rows())
                        .map(|i| g.row(i).iter().zip(av.row(i)).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>() as f32)
                        .collect();
                    accumulate(grads, *col, &Tensor::column_vector(data), 1.0);
                }
            }
            Op::Scale(a, s) => accumulate(grads, *a, g, *s),
            Op::AddScalar(a) => accumulate(grads, *a, g, 1.0),
            Op::Relu(a) => {
                let d = g.zip_map(val(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                accumulate(grads, *a, &d, 1.0);
            }
            Op::Tanh(a) => {
                let d = g.zip_map(&node.value, |x, y| x * (1.0 - y * y));
                accumulate(grads, *a, &d, 1.0);
            }
            Op::Sigmoid(a) => {
                let d = g.zip_map(&node.value, |x, y| x * y * (1.0 - y));
                accumulate(grads, *a, &d, 1.0);
            }
            Op::Exp(a) => {
                let d = g.zip_map(&node.value, |x, y| x * y);
                accumulate(grads, *a, &d, 1.0);
            }
            Op::Log(a) => {
                let d = g.zip_map(val(*a), |x, y| x / y);
                accumulate(grads, *a, &d, 1.0);
            }
            Op::Square(a) => {
                let d = g.zip_map(val(*a), |x, y| 2.0 * x * y);
                accumulate(grads, *a, &d, 1.0);
            }
            Op::Abs(a) => {
                let d = g.zip_map(val(*a), |x, y| {
                    if y > 0.0 {
                        x
                    } else if y < 0.0 {
                        -x
                    } else {
                        0.0
                    }
                });
                accumulate(grads, *a, &d, 1.0);
            }
            Op::Clamp(a, lo, hi) => {
                let d = g.zip_map(val(*a), |x, y| if y >= *lo && y <= *hi { x } else { 0.0 });
                accumulate(grads, *a, &d, 1.0);
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                accumulate(grads, *a, &Tensor::full(r, c, g.data()[0]), 1.0);
            }
            Op::RowSum(a) => {
                let (r, c) = val(*a).shape();
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    let s = g.data()[i];
                    d.row_mut(i).iter_mut().for_each(|x| *x = s);
                }
                accumulate(grads, *a, &d, 1.0);
            }
            Op::ColSum(a) => {
                let (r, c) = val(*a).shape();
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    d.row_mut(i).copy_from_slice(g.data());
                }
                accumulate(grads, *a, &d, 1.0);
            }
            Op::RowNorm(a) => {
                let av = val(*a);
                let mut d = Tensor::zeros(av.rows(), av.cols());
                for i in 0..av.rows() {
                    let n = node.value.data()[i];
                    if n > 0.0 {
                        let s = g.data()[i] / n;
                        for (x, &y) in d.row_mut(i).iter_mut().zip(av.row(i)) {
                            *x = s * y;
                        }
                    }
                }
                accumulate(grads, *a, &d, 1.0);
            }
            Op::LayerNorm { a, rstd } => {
                let y = &node.value;
                let (r, c) = y.shape();
                let mut d = Tensor::zeros(r, c);
                for i in 0..r {
                    let gy = g.row(i);
                    let yr = y.row(i);
                    let mg = gy.iter().map(|&x| x as f64).sum::<f64>() / c as f64;
                    let mgy = gy.iter().zip(yr).map(|(&x, &z)| x as f64 * z as f64).sum::<f64>() / c as f64;
                    let rs = rstd[i] as f64;
                    for ((o, &x), &z) in d.row_mut(i).iter_mut().zip(gy).zip(yr) {
                        *o = (rs * (x as f64 - mg - z as f64 * mgy)) as f32;
                    }
                }
                accumulate(grads, *a, &d, 1.0);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if ng(p) {
                        let mut d = Tensor::zeros(g.rows(), w);
                        for i in 0..g.rows() {
                            d.row_mut(i).copy_from_slice(&g.row(i)[off..off + w]);
                        }
                        accumulate(grads, p, &d, 1.0);
                    }
                    off += w;
                }
            }
            Op::SliceCols { a, start } => {
                let dst = grad_slot(grads, *a, val(*a).shape());
                let w = g.cols();
                for i in 0..g.rows() {
                    for (x, &y) in dst.row_mut(i)[*start..*start + w].iter_mut().zip(g.row(i)) {
                        *x += y;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let r = val(p).rows();
                    if ng(p) {
                        let d = g.slice_rows(off, off + r);
                        accumulate(grads, p, &d, 1.0);
                    }
                    off += r;
                }
            }
            Op::GatherRows { a, idx } => {
                let dst = grad_slot(grads, *a, val(*a).shape());
                for (i, &j) in idx.iter().enumerate() {
                    if j != NO_ROW {
                        for (x, &y) in dst.row_mut(j as usize).iter_mut().zip(g.row(i)) {
                            *x += y;
                        }
                    }
                }
            }
            Op::MixRows { a, taps } => {
                let dst = grad_slot(grads, *a, val(*a).shape());
                for (i, t) in taps.iter().enumerate() {
                    for &(j, w) in t {
                        if w != 0.0 {
                            for (x, &y) in dst.row_mut(j as usize).iter_mut().zip(g.row(i)) {
                                *x += w * y;
                            }
                        }
                    }
                }
            }
            Op::GroupSum { a, groups } => {
                let dst = grad_slot(grads, *a, val(*a).shape());
                for (i, &gid) in groups.iter().enumerate() {
                    for (x, &y) in dst.row_mut(i).iter_mut().zip(g.row(gid as usize)) {
                        *x += y;
                    }
                }
            }
            Op::Reshape(a) => {
                let (r, c) = val(*a).shape();
                let d = g.clone().reshape(r, c);
                accumulate(grads, *a, &d, 1.0);
            }
            Op::LogSoftmax(a) => {
                let y = &node.value;
                let mut d = g.clone();
                for i in 0..d.rows() {
                    let s: f64 = g.row(i).iter().map(|&x| x as f64).sum();
                    for (o, &yy) in d.row_mut(i).iter_mut().zip(y.row(i)) {
                        *o = (*o as f64 - (yy as f64).exp() * s) as f32;
                    }
                }
                accumulate(grads, *a, &d, 1.0);
            }
            Op::StraightThrough(z) => accumulate(grads, *z, g, 1.0),
            Op::LstmCell { gates, c_prev, acts, tanh_c } => {
                let cp = val(*c_prev);
                let (k, h) = cp.shape();
                let mut dgates = Tensor::zeros(k, 4 * h);
                let mut dcp = Tensor::zeros(k, h);
                for r in 0..k {
                    let a = acts.row(r);
                    let tc = tanh_c.row(r);
                    let gr = g.row(r);
                    let cpr = cp.row(r);
                    let dg = dgates.row_mut(r);
                    let mut dcp_row = vec![0.0f32; h];
                    for j in 0..h {
                        let (i_g, f_g, c_g, o_g) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                        let dh = gr[j];
                        let dc = gr[h + j] + dh * o_g * (1.0 - tc[j] * tc[j]);
                        let d_o = dh * tc[j];
                        let d_i = dc * c_g;
                        let d_c = dc * i_g;
                        let d_f = dc * cpr[j];
                        dcp_row[j] = dc * f_g;
                        dg[j] = d_i * i_g * (1.0 - i_g);
                        dg[h + j] = d_f * f_g * (1.0 - f_g);
                        dg[2 * h + j] = d_c * (1.0 - c_g * c_g);
                        dg[3 * h + j] = d_o * o_g * (1.0 - o_g);
                    }
                    dcp.row_mut(r).copy_from_slice(&dcp_row);
                }
                if ng(*gates) {
                    accumulate(grads, *gates, &dgates, 1.0);
                }
                if ng(*c_prev) {
                    accumulate(grads, *c_prev, &dcp, 1.0);
                }
            }
        }
    }
}

fn grad_slot(grads: &mut [Option<Tensor>], v: Var, shape: (usize, usize)) -> &mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.0, shape.1))
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, d: &Tensor, alpha: f32) {
    match &mut grads[v.0] {
        Some(existing) => existing.axpy(alpha, d),
        slot @ None => {
            let mut t = d.clone();
            if alpha != 1.0 {
                t.scale(alpha);
            }
            *slot = Some(t);
        }
    }
}

fn col_sums(g: &Tensor) -> Tensor {
    let mut acc = vec![0.0f64; g.cols()];
    for i in 0..g.rows() {
        for (s, &x) in acc.iter_mut().zip(g.row(i)) {
            *s += x as f64;
        }
    }
    Tensor::row_vector(acc.into_iter().map(|x| x as f32).collect())
}
