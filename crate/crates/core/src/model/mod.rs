//! The learnable networks: content encoder (h-net, vector quantizer,
//! g-net, contrastive projections), speaker encoder and decoder with postnet.
//!
//! Batched sequences are `(B·T) × C` matrices with sequence `b` occupying
//! rows `b·T .. (b+1)·T`. The model works on per-bin standardized log-mel
//! features; the statistics travel with the model.

mod content;
mod decoder;
mod speaker;

use autograd::nn::Ctx;
use autograd::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use content::{Codebook, ContentCodes, GNet, HNet};
pub use decoder::{upsample_taps, Decoder};
pub use speaker::SpeakerEncoder;

use crate::config::ModelConfig;
use crate::frontend::{MelSpectrogram, PitchContour};
use crate::{ensure_contract, Result};

/// Layer structure; values live in [`VcModel::params`].
#[derive(Clone, Debug)]
pub struct Network {
    pub hnet: HNet,
    pub gnet: GNet,
    /// `W_m`, `d_r × d_z`, for prediction steps `m = 1..=M`.
    pub cpc_proj: Vec<ParamId>,
    pub speaker: SpeakerEncoder,
    pub decoder: Decoder,
}

/// Per-bin mel standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct MelNorm {
    pub mean: Tensor,
    pub std: Tensor,
}

impl MelNorm {
    pub fn identity(n_mels: usize) -> Self {
        MelNorm { mean: Tensor::zeros(1, n_mels), std: Tensor::full(1, n_mels, 1.0) }
    }

    /// Statistics over all frames of all given spectrograms.
    pub fn fit<'a>(mels: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let mut n = 0usize;
        let mut s1: Vec<f64> = Vec::new();
        let mut s2: Vec<f64> = Vec::new();
        for m in mels {
            if s1.is_empty() {
                s1 = vec![0.0; m.cols()];
                s2 = vec![0.0; m.cols()];
            }
            for r in 0..m.rows() {
                for (j, &v) in m.row(r).iter().enumerate() {
                    s1[j] += v as f64;
                    s2[j] += v as f64 * v as f64;
                }
            }
            n += m.rows();
        }
        assert!(n > 0, "no frames to fit normalization");
        let mean: Vec<f32> = s1.iter().map(|s| (s / n as f64) as f32).collect();
        let std: Vec<f32> = s1
            .iter()
            .zip(&s2)
            .map(|(a, b)| {
                let mu = a / n as f64;
                ((b / n as f64 - mu * mu).max(0.0).sqrt() as f32).max(1e-3)
            })
            .collect();
        MelNorm { mean: Tensor::row_vector(mean), std: Tensor::row_vector(std) }
    }

    pub fn apply(&self, mel: &Tensor) -> Tensor {
        let mut out = mel.clone();
        for r in 0..out.rows() {
            for ((v, &m), &s) in out.row_mut(r).iter_mut().zip(self.mean.data()).zip(self.std.data()) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    pub fn invert(&self, mel: &Tensor) -> Tensor {
        let mut out = mel.clone();
        for r in 0..out.rows() {
            for ((v, &m), &s) in out.row_mut(r).iter_mut().zip(self.mean.data()).zip(self.std.data()) {
                *v = *v * s + m;
            }
        }
        out
    }
}

/// Network parameters, codebook and feature normalization.
#[derive(Clone, Debug)]
pub struct VcModel {
    pub config: ModelConfig,
    pub n_mels: usize,
    pub params: ParamStore,
    pub net: Network,
    pub codebook: Codebook,
    pub norm: MelNorm,
}

/// Forward outputs of one batch.
pub struct Forward {
    pub z: Var,
    pub codes: ContentCodes,
    pub zq: Var,
    pub spk: Var,
    pub frames: usize,
}

/// Downsampled pitch `p̂_t = (p_{2t} + p_{2t+1}) / 2` per sequence of length `t`.
pub fn downsample_pitch(p: &[f32]) -> Vec<f32> {
    p.chunks_exact(2).map(|c| 0.5 * (c[0] + c[1])).collect()
}

impl VcModel {
    pub fn new(config: &ModelConfig, n_mels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let hnet = HNet::new(&mut params, n_mels, config, &mut rng);
        let gnet = GNet::new(&mut params, config, &mut rng);
        let bound = 1.0 / (config.gnet_hidden as f32).sqrt();
        let cpc_proj = (1..=config.cpc_steps)
            .map(|m| {
                params.add(format!("content.cpc.proj{m}"), Tensor::uniform(config.gnet_hidden, config.content_dim, -bound, bound, &mut rng))
            })
            .collect();
        let speaker = SpeakerEncoder::new(&mut params, n_mels, config, &mut rng);
        let decoder = Decoder::new(&mut params, n_mels, config, &mut rng);
        let codebook = Codebook::new(config.codebook_size, config.content_dim, config.codebook_decay, config.codebook_init, &mut rng);
        VcModel {
            config: config.clone(),
            n_mels,
            params,
            net: Network { hnet, gnet, cpc_proj, speaker, decoder },
            codebook,
            norm: MelNorm::identity(n_mels),
        }
    }

    /// Content and speaker encoders on a normalized batch. Quantized content
    /// carries the straight-through gradient to `z`.
    pub fn encode(&self, ctx: &mut Ctx<'_>, mel: Var, t: usize) -> Forward {
        let (z, frames) = self.net.hnet.forward(ctx, mel, t);
        let codes = self.codebook.quantize(ctx.g.value(z));
        let zq = ctx.g.straight_through(z, codes.vectors.clone());
        let spk = self.net.speaker.forward(ctx, mel, t);
        Forward { z, codes, zq, spk, frames }
    }

    fn inference_graph<T>(&self, f: impl FnOnce(&mut Ctx<'_>) -> T) -> T {
        let mut g = Graph::new();
        let mut ctx = Ctx::frozen(&mut g, &self.params);
        f(&mut ctx)
    }

    fn check_mel(&self, mel: &MelSpectrogram) -> Result<()> {
        ensure_contract!(mel.n_mels() == self.n_mels, "expected {} mel bins, got {}", self.n_mels, mel.n_mels());
        ensure_contract!(mel.n_frames() >= 1, "empty mel spectrogram");
        Ok(())
    }

    /// Dense content `Z` for a raw (unnormalized) log-mel input of even length.
    pub fn h_net_forward(&self, mel: &MelSpectrogram) -> Result<Tensor> {
        self.check_mel(mel)?;
        let t = mel.n_frames();
        ensure_contract!(t % 2 == 0, "content encoder needs an even number of frames, got {t}");
        let x = self.norm.apply(&mel.frames);
        Ok(self.inference_graph(|ctx| {
            let xv = ctx.g.constant(x);
            let (z, _) = self.net.hnet.forward(ctx, xv, t);
            ctx.g.value(z).clone()
        }))
    }

    pub fn quantize(&self, z: &Tensor) -> ContentCodes {
        self.codebook.quantize(z)
    }

    pub fn encode_content(&self, mel: &MelSpectrogram) -> Result<ContentCodes> {
        Ok(self.quantize(&self.h_net_forward(mel)?))
    }

    /// Aggregation sequence `R` of one utterance's codes.
    pub fn g_net_forward(&self, codes: &Tensor) -> Tensor {
        let f = codes.rows();
        assert!(f >= 1, "need at least one content frame");
        self.inference_graph(|ctx| {
            let c = ctx.g.constant(codes.clone());
            let r = self.net.gnet.forward(ctx, c, f);
            ctx.g.value(r).clone()
        })
    }

    /// `1 × d_s` speaker embedding of one utterance.
    pub fn speaker_encode(&self, mel: &MelSpectrogram) -> Result<Tensor> {
        self.check_mel(mel)?;
        Ok(self.speaker_encode_batch(&mel.frames, mel.n_frames()))
    }

    /// Embeddings for `B` equal-length raw log-mel sequences stacked as `(B·T) × n_mels`.
    pub fn speaker_encode_batch(&self, mels: &Tensor, t: usize) -> Tensor {
        let x = self.norm.apply(mels);
        self.inference_graph(|ctx| {
            let xv = ctx.g.constant(x);
            let s = self.net.speaker.forward(ctx, xv, t);
            ctx.g.value(s).clone()
        })
    }

    /// Decodes one utterance; returns raw log-mel `(pre, post)`.
    pub fn decode(&self, codes: &Tensor, spk: &Tensor, pitch: &PitchContour) -> Result<(MelSpectrogram, MelSpectrogram)> {
        let f = codes.rows();
        ensure_contract!(f >= 1, "empty content sequence");
        ensure_contract!(pitch.len() == 2 * f, "pitch length {} must be twice the content length {f}", pitch.len());
        ensure_contract!(codes.cols() == self.config.content_dim, "content dimension mismatch");
        ensure_contract!(spk.shape() == (1, self.config.spk_dim), "speaker embedding must be 1×{}", self.config.spk_dim);
        let (pre, post) = self.inference_graph(|ctx| {
            let c = ctx.g.constant(codes.clone());
            let s = ctx.g.constant(spk.clone());
            let p = ctx.g.constant(Tensor::column_vector(pitch.values.clone()));
            let (pre, post) = self.net.decoder.forward(ctx, c, s, p, f);
            (ctx.g.value(pre).clone(), ctx.g.value(post).clone())
        });
        Ok((MelSpectrogram::new(self.norm.invert(&pre)), MelSpectrogram::new(self.norm.invert(&post))))
    }

    /// Full reconstruction path: content and pitch from `mel`/`pitch`,
    /// speaker from `speaker_mel`. Odd-length inputs lose their last frame.
    pub fn convert(&self, mel: &MelSpectrogram, pitch: &PitchContour, speaker_mel: &MelSpectrogram) -> Result<MelSpectrogram> {
        let mel = mel.trim_even();
        let mut pitch = pitch.clone();
        pitch.truncate(mel.n_frames());
        let codes = self.encode_content(&mel)?;
        let spk = self.speaker_encode(speaker_mel)?;
        Ok(self.decode(&codes.vectors, &spk, &pitch)?.1)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars() + self.codebook.vectors.len()
    }

    pub fn all_finite(&self) -> bool {
        self.params.all_finite() && self.codebook.vectors.is_finite()
    }
}
