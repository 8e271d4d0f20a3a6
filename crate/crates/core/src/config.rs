//! Run configuration with `paper` and `desk` presets.
//!
//! Precedence is CLI flag > config file > preset. A config file is a TOML
//! document with optional `[features]`, `[model]`, `[train]` and `[eval]`
//! tables; any key not set falls back to the chosen preset and unknown keys
//! are rejected by name.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub fmin: f32,
    pub fmax: f32,
    pub f0_min: f32,
    pub f0_max: f32,
    /// Minimum normalized-autocorrelation peak for a frame to count as voiced.
    pub voicing_threshold: f32,
    pub segment_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hnet_channels: usize,
    pub hnet_blocks: usize,
    pub content_dim: usize,
    pub codebook_size: usize,
    pub codebook_decay: f32,
    /// Codes start uniform in `[-codebook_init, codebook_init]`.
    pub codebook_init: f32,
    pub gnet_hidden: usize,
    pub cpc_steps: usize,
    pub cpc_negatives: usize,
    pub spk_bank_layers: usize,
    pub spk_bank_channels: usize,
    pub spk_channels: usize,
    /// Residual blocks of two convolutions each.
    pub spk_conv_blocks: usize,
    pub spk_kernel: usize,
    pub spk_dim: usize,
    pub dec_lstm1: usize,
    pub dec_conv_layers: usize,
    pub dec_channels: usize,
    pub dec_lstm2: usize,
    pub dec_kernel: usize,
    pub postnet_layers: usize,
    pub postnet_channels: usize,
    pub approx_hidden: usize,
    pub approx_layers: usize,
    pub logvar_clamp: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_mi: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub base_lr: f32,
    pub floor_lr: f32,
    pub decay_start: usize,
    pub decay_every: usize,
    pub approx_lr: f32,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_eps: f32,
    pub grad_clip: f32,
    pub checkpoint_every: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub mi_rounds: usize,
    /// Adam steps used to fit fresh approximators in each measurement round.
    pub mi_fit_steps: usize,
    pub mi_fit_lr: f32,
    pub probe_epochs: usize,
    pub probe_lr: f32,
    pub probe_hidden: usize,
    pub probe_layers: usize,
    pub probe_train_fraction: f32,
    pub probe_batch: usize,
    pub vocoder: String,
    pub vocoder_iters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub preset: String,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected paper or desk)"))),
        }
    }
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sample_rate: 16_000,
            n_fft: 400,
            win_length: 400,
            hop_length: 160,
            n_mels: 80,
            fmin: 80.0,
            fmax: 7600.0,
            f0_min: 60.0,
            f0_max: 400.0,
            voicing_threshold: 0.6,
            segment_len: 128,
        }
    }
}

impl Config {
    pub fn preset(p: Preset) -> Config {
        match p {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    /// Full-size architecture and schedule.
    pub fn paper() -> Config {
        Config {
            preset: "paper".into(),
            features: FeatureConfig::default(),
            model: ModelConfig {
                hnet_channels: 512,
                hnet_blocks: 4,
                content_dim: 64,
                codebook_size: 512,
                codebook_decay: 0.999,
                codebook_init: 1.0 / 512.0,
                gnet_hidden: 256,
                cpc_steps: 6,
                cpc_negatives: 10,
                spk_bank_layers: 8,
                spk_bank_channels: 128,
                spk_channels: 512,
                spk_conv_blocks: 6,
                spk_kernel: 5,
                spk_dim: 256,
                dec_lstm1: 1024,
                dec_conv_layers: 3,
                dec_channels: 512,
                dec_lstm2: 1024,
                dec_kernel: 5,
                postnet_layers: 5,
                postnet_channels: 512,
                approx_hidden: 256,
                approx_layers: 4,
                logvar_clamp: 10.0,
            },
            train: TrainConfig {
                lambda_mi: 1e-2,
                batch_size: 256,
                epochs: 500,
                warmup_epochs: 15,
                base_lr: 1e-3,
                floor_lr: 1e-6,
                decay_start: 200,
                decay_every: 100,
                approx_lr: 3e-4,
                adam_beta1: 0.9,
                adam_beta2: 0.999,
                adam_eps: 1e-8,
                grad_clip: 5.0,
                checkpoint_every: 50,
                seed: 0,
            },
            eval: EvalConfig {
                mi_rounds: 10,
                mi_fit_steps: 500,
                mi_fit_lr: 3e-4,
                probe_epochs: 100,
                probe_lr: 1e-3,
                probe_hidden: 256,
                probe_layers: 4,
                probe_train_fraction: 0.8,
                probe_batch: 256,
                vocoder: "griffin-lim".into(),
                vocoder_iters: 64,
            },
        }
    }

    /// Laptop-scale preset: hidden widths divided by four, small batches and a
    /// short schedule.
    pub fn desk() -> Config {
        let mut c = Self::paper();
        c.preset = "desk".into();
        let m = &mut c.model;
        m.hnet_channels /= 4;
        m.content_dim /= 4;
        m.codebook_size /= 4;
        m.gnet_hidden /= 4;
        m.spk_bank_channels /= 4;
        m.spk_channels /= 4;
        m.spk_dim /= 4;
        m.dec_lstm1 /= 4;
        m.dec_channels /= 4;
        m.dec_lstm2 /= 4;
        m.postnet_channels /= 4;
        m.approx_hidden /= 4;
        let t = &mut c.train;
        t.batch_size = 16;
        t.epochs = 20;
        t.warmup_epochs = 2;
        t.checkpoint_every = 10;
        let e = &mut c.eval;
        e.probe_hidden /= 4;
        e.mi_fit_steps = 300;
        e.mi_fit_lr = 1e-3;
        c
    }

    /// Preset values overlaid with the keys present in a TOML document.
    pub fn from_toml_str(base: Preset, text: &str) -> Result<Config> {
        let overlay: toml::Value = toml::from_str(text).map_err(|e| Error::Config(format!("invalid config file: {e}")))?;
        let mut merged = toml::Value::try_from(Self::preset(base)).map_err(|e| Error::Config(format!("cannot serialize preset: {e}")))?;
        merge_toml(&mut merged, overlay, "")?;
        let cfg: Config = merged.try_into().map_err(|e: toml::de::Error| Error::Config(format!("invalid config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(base: Preset, path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(base, &text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let f = &self.features;
        let m = &self.model;
        let t = &self.train;
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if f.win_length > f.n_fft {
            return bad("features.win_length must not exceed features.n_fft");
        }
        if f.segment_len < 2 || f.segment_len % 2 != 0 {
            return bad("features.segment_len must be even and at least 2");
        }
        if f.segment_len / 2 <= m.cpc_steps {
            return bad("features.segment_len / 2 must exceed model.cpc_steps");
        }
        if f.f0_min <= 0.0 || f.f0_max <= f.f0_min {
            return bad("features.f0_min/f0_max must satisfy 0 < f0_min < f0_max");
        }
        if m.cpc_steps == 0 || m.cpc_negatives == 0 {
            return bad("model.cpc_steps and model.cpc_negatives must be at least 1");
        }
        if m.codebook_size == 0 || m.content_dim == 0 {
            return bad("model.codebook_size and model.content_dim must be positive");
        }
        if !(m.codebook_init > 0.0) {
            return bad("model.codebook_init must be positive");
        }
        if !(0.0..1.0).contains(&m.codebook_decay) {
            return bad("model.codebook_decay must be in [0, 1)");
        }
        if t.lambda_mi < 0.0 {
            return bad("train.lambda_mi must be non-negative");
        }
        if t.batch_size < 2 {
            return bad("train.batch_size must be at least 2");
        }
        if t.decay_every == 0 {
            return bad("train.decay_every must be positive");
        }
        Ok(())
    }

    /// Short stable digest of the full configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn merge_toml(base: &mut toml::Value, overlay: toml::Value, path: &str) -> Result<()> {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v, &key)?,
                    None => return Err(Error::Config(format!("unknown config key `{key}`"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            // Integers are accepted where floats are expected (`lambda_mi = 0`).
            *slot = match (&*slot, v) {
                (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
                (_, v) => v,
            };
            Ok(())
        }
    }
}
