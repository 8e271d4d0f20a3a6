use autograd::nn::{Conv1d, Ctx, Linear};
use autograd::{ParamStore, Var};
use rand::Rng;

use crate::config::ModelConfig;

#[derive(Clone, Debug)]
struct ResBlock {
    conv_a: Conv1d,
    conv_b: Conv1d,
    stride: usize,
}

/// Convolution bank (kernel widths 1..=K) over the mel input, a 1×1
/// projection, residual convolution blocks with periodic ×2 subsampling,
/// temporal average pooling and four linear layers.
#[derive(Clone, Debug)]
pub struct SpeakerEncoder {
    bank: Vec<Conv1d>,
    proj: Conv1d,
    blocks: Vec<ResBlock>,
    dense: [Linear; 4],
}

impl SpeakerEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, n_mels: usize, cfg: &ModelConfig, rng: &mut R) -> Self {
        let bank: Vec<Conv1d> = (1..=cfg.spk_bank_layers)
            .map(|k| Conv1d::same(store, &format!("speaker.bank{k}"), n_mels, cfg.spk_bank_channels, k, rng))
            .collect();
        let c = cfg.spk_channels;
        let bank_width = cfg.spk_bank_layers * cfg.spk_bank_channels + n_mels;
        let proj = Conv1d::same(store, "speaker.proj", bank_width, c, 1, rng);
        let k = cfg.spk_kernel;
        let blocks = (0..cfg.spk_conv_blocks)
            .map(|i| {
                let stride = if i % 2 == 1 { 2 } else { 1 };
                let pad = (k - 1) / 2;
                ResBlock {
                    conv_a: Conv1d::same(store, &format!("speaker.block{i}.conv_a"), c, c, k, rng),
                    conv_b: Conv1d::new(store, &format!("speaker.block{i}.conv_b"), c, c, k, stride, pad, k - 1 - pad, rng),
                    stride,
                }
            })
            .collect();
        let d = cfg.spk_dim;
        let dense = [
            Linear::new(store, "speaker.dense0", c, c, rng),
            Linear::new(store, "speaker.dense1", c, c, rng),
            Linear::new(store, "speaker.dense2", c, c, rng),
            Linear::new(store, "speaker.dense3", c, d, rng),
        ];
        SpeakerEncoder { bank, proj, blocks, dense }
    }

    /// `(B·T) × n_mels` → `B × d_s`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, mel: Var, t: usize) -> Var {
        let batch = ctx.g.shape(mel).0 / t;
        let mut parts = Vec::with_capacity(self.bank.len() + 1);
        for conv in &self.bank {
            let (y, _) = conv.forward(ctx, mel, t);
            parts.push(ctx.g.relu(y));
        }
        parts.push(mel);
        let x = ctx.g.concat_cols(&parts);
        let (x, _) = self.proj.forward(ctx, x, t);
        let mut x = ctx.g.relu(x);
        let mut len = t;
        for block in &self.blocks {
            let (y, _) = block.conv_a.forward(ctx, x, len);
            let y = ctx.g.relu(y);
            let (y, out_len) = block.conv_b.forward(ctx, y, len);
            let y = ctx.g.relu(y);
            let skip = if block.stride == 2 { ctx.g.mix_rows(x, halve_taps(batch, len, out_len)) } else { x };
            x = ctx.g.add(y, skip);
            len = out_len;
        }
        let groups: Vec<usize> = (0..batch).flat_map(|b| std::iter::repeat_n(b, len)).collect();
        let pooled = ctx.g.group_sum(x, &groups, batch);
        let pooled = ctx.g.scale(pooled, 1.0 / len as f32);

        let h = self.dense[0].forward(ctx, pooled);
        let h = ctx.g.relu(h);
        let h = self.dense[1].forward(ctx, h);
        let h = ctx.g.relu(h);
        let h = ctx.g.add(h, pooled);
        let h = self.dense[2].forward(ctx, h);
        let h = ctx.g.relu(h);
        self.dense[3].forward(ctx, h)
    }
}

/// Averages frame pairs `(2t, 2t+1)`; a trailing odd frame passes through.
fn halve_taps(batch: usize, len: usize, out_len: usize) -> Vec<[(u32, f32); 2]> {
    let mut taps = Vec::with_capacity(batch * out_len);
    for b in 0..batch {
        for t in 0..out_len {
            let i = b * len + 2 * t;
            taps.push(if 2 * t + 1 < len { [(i as u32, 0.5), (i as u32 + 1, 0.5)] } else { [(i as u32, 1.0), (i as u32, 0.0)] });
        }
    }
    taps
}
