use autograd::nn::{Conv1d, Ctx, LayerNorm, Linear, Lstm};
use autograd::{ParamStore, Var};
use rand::Rng;

use crate::config::ModelConfig;

#[derive(Clone, Debug)]
pub struct Decoder {
    lstm1: Lstm,
    convs: Vec<(Conv1d, LayerNorm)>,
    lstm2: [Lstm; 2],
    out: Linear,
    postnet: Vec<Conv1d>,
}

/// Linear-interpolation ×2 upsampling taps (half-pixel centres, edges clamped).
pub fn upsample_taps(batch: usize, f: usize) -> Vec<[(u32, f32); 2]> {
    let t = 2 * f;
    let mut taps = Vec::with_capacity(batch * t);
    for b in 0..batch {
        for j in 0..t {
            let src = ((j as f32 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(f - 1);
            let i1 = (i0 + 1).min(f - 1);
            let w = src - i0 as f32;
            taps.push([((b * f + i0) as u32, 1.0 - w), ((b * f + i1) as u32, w)]);
        }
    }
    taps
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, n_mels: usize, cfg: &ModelConfig, rng: &mut R) -> Self {
        let in_dim = cfg.content_dim + cfg.spk_dim + 1;
        let lstm1 = Lstm::new(store, "decoder.lstm1", in_dim, cfg.dec_lstm1, rng);
        let mut convs = Vec::with_capacity(cfg.dec_conv_layers);
        let mut width = cfg.dec_lstm1;
        for i in 0..cfg.dec_conv_layers {
            convs.push((
                Conv1d::same(store, &format!("decoder.conv{i}"), width, cfg.dec_channels, cfg.dec_kernel, rng),
                LayerNorm::new(store, &format!("decoder.conv{i}.norm"), cfg.dec_channels),
            ));
            width = cfg.dec_channels;
        }
        let lstm2 = [
            Lstm::new(store, "decoder.lstm2", width, cfg.dec_lstm2, rng),
            Lstm::new(store, "decoder.lstm3", cfg.dec_lstm2, cfg.dec_lstm2, rng),
        ];
        let out = Linear::new(store, "decoder.out", cfg.dec_lstm2, n_mels, rng);
        let mut postnet = Vec::with_capacity(cfg.postnet_layers);
        for i in 0..cfg.postnet_layers {
            let cin = if i == 0 { n_mels } else { cfg.postnet_channels };
            let cout = if i + 1 == cfg.postnet_layers { n_mels } else { cfg.postnet_channels };
            postnet.push(Conv1d::same(store, &format!("postnet.conv{i}"), cin, cout, cfg.dec_kernel, rng));
        }
        Decoder { lstm1, convs, lstm2, out, postnet }
    }

    pub fn postnet_params(&self) -> impl Iterator<Item = autograd::ParamId> + '_ {
        self.postnet.iter().flat_map(|c| [c.w, c.b])
    }

    /// `codes`: `(B·F) × d_z`, `spk`: `B × d_s`, `pitch`: `(B·2F) × 1`.
    /// Returns `(pre, post)`, each `(B·2F) × n_mels`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, codes: Var, spk: Var, pitch: Var, f: usize) -> (Var, Var) {
        let batch = ctx.g.shape(spk).0;
        let t = 2 * f;
        let up = ctx.g.mix_rows(codes, upsample_taps(batch, f));
        let rep: Vec<Option<usize>> = (0..batch).flat_map(|b| std::iter::repeat_n(Some(b), t)).collect();
        let spk_rep = ctx.g.gather_rows(spk, &rep);
        let x = ctx.g.concat_cols(&[up, spk_rep, pitch]);

        let mut h = self.lstm1.forward(ctx, x, t);
        for (conv, norm) in &self.convs {
            let (y, _) = conv.forward(ctx, h, t);
            let y = norm.forward(ctx, y);
            h = ctx.g.relu(y);
        }
        for lstm in &self.lstm2 {
            h = lstm.forward(ctx, h, t);
        }
        let pre = self.out.forward(ctx, h);

        let mut r = pre;
        let last = self.postnet.len().saturating_sub(1);
        for (i, conv) in self.postnet.iter().enumerate() {
            let (y, _) = conv.forward(ctx, r, t);
            r = if i < last { ctx.g.tanh(y) } else { y };
        }
        let post = if self.postnet.is_empty() { pre } else { ctx.g.add(pre, r) };
        (pre, post)
    }
}
