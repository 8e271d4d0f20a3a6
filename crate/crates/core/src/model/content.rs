use autograd::nn::{Conv1d, Ctx, LayerNorm, Linear, Lstm};
use autograd::{par, Exec, ParamStore, Tensor, Var};
use rand::Rng;

use crate::config::ModelConfig;

/// Strided convolution halving the frame rate, then residual-free blocks of
/// layer norm, linear and ReLU, then a projection to the content dimension.
#[derive(Clone, Debug)]
pub struct HNet {
    pub conv: Conv1d,
    pub blocks: Vec<(LayerNorm, Linear)>,
    pub out: Linear,
}

impl HNet {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, n_mels: usize, cfg: &ModelConfig, rng: &mut R) -> Self {
        let c = cfg.hnet_channels;
        let conv = Conv1d::new(store, "content.hnet.conv", n_mels, c, 4, 2, 1, 1, rng);
        let blocks = (0..cfg.hnet_blocks)
            .map(|i| {
                (
                    LayerNorm::new(store, &format!("content.hnet.block{i}.norm"), c),
                    Linear::new(store, &format!("content.hnet.block{i}.linear"), c, c, rng),
                )
            })
            .collect();
        let out = Linear::new(store, "content.hnet.out", c, cfg.content_dim, rng);
        HNet { conv, blocks, out }
    }

    /// `(B·T) × n_mels` → `(B·T/2) × d_z`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, mel: Var, t: usize) -> (Var, usize) {
        let (mut h, f) = self.conv.forward(ctx, mel, t);
        for (norm, lin) in &self.blocks {
            h = norm.forward(ctx, h);
            h = lin.forward(ctx, h);
            h = ctx.g.relu(h);
        }
        (self.out.forward(ctx, h), f)
    }
}

/// Quantized content: codebook rows and their indices.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentCodes {
    pub vectors: Tensor,
    pub indices: Vec<usize>,
}

impl ContentCodes {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Codebook learned by exponential moving averages of assigned encoder
/// outputs; it receives no gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub vectors: Tensor,
    pub ema_count: Vec<f32>,
    pub ema_sum: Tensor,
    pub decay: f32,
    /// Assignments since the last [`Codebook::reset_usage`].
    pub usage: Vec<u64>,
}

impl Codebook {
    pub fn new<R: Rng + ?Sized>(size: usize, dim: usize, decay: f32, bound: f32, rng: &mut R) -> Self {
        Codebook {
            vectors: Tensor::uniform(size, dim, -bound, bound, rng),
            ema_count: vec![0.0; size],
            ema_sum: Tensor::zeros(size, dim),
            decay,
            usage: vec![0; size],
        }
    }

    pub fn size(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    /// Index of the nearest code by squared Euclidean distance; the lowest
    /// index wins ties.
    pub fn nearest(&self, z: &[f32]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for k in 0..self.size() {
            let d: f64 = self
                .vectors
                .row(k)
                .iter()
                .zip(z)
                .map(|(&e, &x)| {
                    let diff = x as f64 - e as f64;
                    diff * diff
                })
                .sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    pub fn quantize(&self, z: &Tensor) -> ContentCodes {
        assert_eq!(z.cols(), self.dim(), "content dimension mismatch");
        let indices = par::map_range(Exec::global(), z.rows(), |i| self.nearest(z.row(i)));
        let mut vectors = Tensor::zeros(z.rows(), self.dim());
        for (i, &k) in indices.iter().enumerate() {
            vectors.row_mut(i).copy_from_slice(self.vectors.row(k));
        }
        ContentCodes { vectors, indices }
    }

    /// Moves every used code to the running mean of the encoder outputs
    /// assigned to it. Unused codes keep their values.
    pub fn ema_update(&mut self, z: &Tensor, indices: &[usize]) {
        assert_eq!(z.rows(), indices.len());
        let (n, d) = (self.size(), self.dim());
        let mut counts = vec![0.0f32; n];
        let mut sums = Tensor::zeros(n, d);
        for (i, &k) in indices.iter().enumerate() {
            counts[k] += 1.0;
            self.usage[k] += 1;
            for (s, &x) in sums.row_mut(k).iter_mut().zip(z.row(i)) {
                *s += x;
            }
        }
        let g = self.decay;
        for k in 0..n {
            self.ema_count[k] = g * self.ema_count[k] + (1.0 - g) * counts[k];
            let count = self.ema_count[k];
            let sum_row = self.ema_sum.row_mut(k);
            for (s, &x) in sum_row.iter_mut().zip(sums.row(k)) {
                *s = g * *s + (1.0 - g) * x;
            }
            if count > 1e-12 {
                let mean: Vec<f32> = self.ema_sum.row(k).iter().map(|&s| s / count).collect();
                self.vectors.row_mut(k).copy_from_slice(&mean);
            }
        }
    }

    pub fn dead_codes(&self) -> usize {
        self.usage.iter().filter(|&&u| u == 0).count()
    }

    pub fn reset_usage(&mut self) {
        self.usage.iter_mut().for_each(|u| *u = 0);
    }
}

/// Causal aggregation of content codes.
#[derive(Clone, Debug)]
pub struct GNet {
    pub rnn: Lstm,
}

impl GNet {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        GNet { rnn: Lstm::new(store, "content.gnet.lstm", cfg.content_dim, cfg.gnet_hidden, rng) }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, codes: Var, f: usize) -> Var {
        self.rnn.forward(ctx, codes, f)
    }
}
