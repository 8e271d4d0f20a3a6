//! Layer building blocks over [`Graph`].
//!
//! Layers only hold [`ParamId`]s; values live in a [`ParamStore`] and are
//! bound to the tape through a [`Ctx`].

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::Tensor;

/// Forward-pass context: the tape plus the store parameters are read from.
///
/// When `frozen`, parameters enter the tape as constants and receive no
/// gradient.
pub struct Ctx<'a> {
    pub g: &'a mut Graph,
    pub store: &'a ParamStore,
    pub frozen: bool,
}

impl<'a> Ctx<'a> {
    pub fn new(g: &'a mut Graph, store: &'a ParamStore) -> Self {
        Ctx { g, store, frozen: false }
    }

    pub fn frozen(g: &'a mut Graph, store: &'a ParamStore) -> Self {
        Ctx { g, store, frozen: true }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if self.frozen {
            self.g.frozen(self.store, id)
        } else {
            self.g.param(self.store, id)
        }
    }
}

fn fan_in_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
    Tensor::uniform(rows, cols, -bound, bound, rng)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let w = store.add(format!("{name}.weight"), fan_in_uniform(in_dim, out_dim, in_dim, rng));
        let b = store.add(format!("{name}.bias"), fan_in_uniform(1, out_dim, in_dim, rng));
        Linear { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Var {
        let w = ctx.p(self.w);
        let b = ctx.p(self.b);
        let y = ctx.g.matmul(x, w);
        ctx.g.add_row(y, b)
    }
}

/// Layer normalization over the channel axis with a learned affine map.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(1, dim, 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(1, dim));
        LayerNorm { gamma, beta }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Var {
        let y = ctx.g.layer_norm(x, 1e-5);
        let gamma = ctx.p(self.gamma);
        let beta = ctx.p(self.beta);
        let y = ctx.g.mul_row(y, gamma);
        ctx.g.add_row(y, beta)
    }
}

/// 1-D convolution over batched sequences stored as `(B·T) × C_in`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad_left: usize,
        pad_right: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel >= 1 && stride >= 1);
        let fan_in = in_ch * kernel;
        let w = store.add(format!("{name}.weight"), fan_in_uniform(kernel * in_ch, out_ch, fan_in, rng));
        let b = store.add(format!("{name}.bias"), fan_in_uniform(1, out_ch, fan_in, rng));
        Conv1d { w, b, in_ch, out_ch, kernel, stride, pad_left, pad_right }
    }

    /// Stride-1 convolution whose output length equals its input length.
    pub fn same<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, kernel: usize, rng: &mut R) -> Self {
        let pad_left = (kernel - 1) / 2;
        Self::new(store, name, in_ch, out_ch, kernel, 1, pad_left, kernel - 1 - pad_left, rng)
    }

    pub fn out_len(&self, t: usize) -> usize {
        let padded = t + self.pad_left + self.pad_right;
        if padded < self.kernel {
            0
        } else {
            (padded - self.kernel) / self.stride + 1
        }
    }

    /// `x` holds `batch` sequences of `seq_len` rows. Returns the output and
    /// its per-sequence length.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var, seq_len: usize) -> (Var, usize) {
        let (rows, cols) = ctx.g.shape(x);
        assert_eq!(cols, self.in_ch, "conv input channel mismatch");
        assert!(seq_len > 0 && rows % seq_len == 0, "rows must be a multiple of seq_len");
        let batch = rows / seq_len;
        let t_out = self.out_len(seq_len);
        assert!(t_out > 0, "sequence too short for kernel");
        let mut idx = Vec::with_capacity(batch * t_out * self.kernel);
        for b in 0..batch {
            for t in 0..t_out {
                for j in 0..self.kernel {
                    let src = (t * self.stride + j) as isize - self.pad_left as isize;
                    idx.push((src >= 0 && (src as usize) < seq_len).then(|| b * seq_len + src as usize));
                }
            }
        }
        let cols = if self.kernel == 1 && self.stride == 1 && self.pad_left == 0 {
            x
        } else {
            let gathered = ctx.g.gather_rows(x, &idx);
            ctx.g.reshape(gathered, batch * t_out, self.kernel * self.in_ch)
        };
        let w = ctx.p(self.w);
        let b = ctx.p(self.b);
        let y = ctx.g.matmul(cols, w);
        (ctx.g.add_row(y, b), t_out)
    }
}

/// Single-layer unidirectional LSTM over batched sequences.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let w_ih = store.add(format!("{name}.w_ih"), fan_in_uniform(in_dim, 4 * hidden, hidden, rng));
        let w_hh = store.add(format!("{name}.w_hh"), fan_in_uniform(hidden, 4 * hidden, hidden, rng));
        let b = store.add(format!("{name}.bias"), fan_in_uniform(1, 4 * hidden, hidden, rng));
        Lstm { w_ih, w_hh, b, in_dim, hidden }
    }

    /// `x` is `(B·T) × in_dim`, sequence-major. Output is `(B·T) × hidden`
    /// in the same layout. Zero initial state.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var, seq_len: usize) -> Var {
        let (rows, cols) = ctx.g.shape(x);
        assert_eq!(cols, self.in_dim, "lstm input width mismatch");
        assert!(seq_len > 0 && rows % seq_len == 0, "rows must be a multiple of seq_len");
        let batch = rows / seq_len;
        let h = self.hidden;
        let w_ih = ctx.p(self.w_ih);
        let w_hh = ctx.p(self.w_hh);
        let bias = ctx.p(self.b);
        let xp = ctx.g.matmul(x, w_ih);
        let xp = ctx.g.add_row(xp, bias);

        let mut hs = Vec::with_capacity(seq_len);
        let mut state: Option<(Var, Var)> = None;
        for t in 0..seq_len {
            let idx: Vec<Option<usize>> = (0..batch).map(|b| Some(b * seq_len + t)).collect();
            let mut gates = ctx.g.gather_rows(xp, &idx);
            let c_prev = match state {
                Some((h_prev, c_prev)) => {
                    let rec = ctx.g.matmul(h_prev, w_hh);
                    gates = ctx.g.add(gates, rec);
                    c_prev
                }
                None => ctx.g.constant(Tensor::zeros(batch, h)),
            };
            let hc = ctx.g.lstm_cell(gates, c_prev);
            let h_t = ctx.g.slice_cols(hc, 0, h);
            let c_t = ctx.g.slice_cols(hc, h, h);
            hs.push(h_t);
            state = Some((h_t, c_t));
        }
        let stacked = ctx.g.concat_rows(&hs);
        // stacked is time-major (t·B + b); restore sequence-major order.
        let order: Vec<Option<usize>> = (0..batch).flat_map(|b| (0..seq_len).map(move |t| Some(t * batch + b))).collect();
        ctx.g.gather_rows(stacked, &order)
    }
}

/// Fully connected stack with ReLU between layers and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `hidden_layers` hidden layers of width `hidden`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        hidden_layers: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden_layers + 1);
        let mut d = in_dim;
        for i in 0..hidden_layers {
            layers.push(Linear::new(store, &format!("{name}.{i}"), d, hidden, rng));
            d = hidden;
        }
        layers.push(Linear::new(store, &format!("{name}.{hidden_layers}"), d, out_dim, rng));
        Mlp { layers }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(ctx, h);
            if i < last {
                h = ctx.g.relu(h);
            }
        }
        h
    }
}
