//! One-shot conversion: content and pitch from a source utterance, speaker
//! embedding from a single target utterance, then spectral inversion.

mod vocoder;

pub use vocoder::{vocoder_by_name, GriffinLim, Vocoder};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::Config;
use crate::frontend::{analyze, load_waveform, write_wav, MelSpectrogram, Waveform};
use crate::model::VcModel;
use crate::Result;

#[derive(Clone, Debug)]
pub struct ConversionRequest {
    pub source_wav: PathBuf,
    pub target_wav: PathBuf,
    pub checkpoint: PathBuf,
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversionSidecar {
    pub source: String,
    pub target: String,
    pub checkpoint_hash: String,
    #[serde(rename = "T")]
    pub frames: usize,
    pub config_hash: String,
    pub vocoder: String,
}

/// Converted mel for in-memory waveforms. The output has the source's
/// (even-trimmed) length.
pub fn one_shot_convert(model: &VcModel, cfg: &Config, source: &Waveform, target: &Waveform) -> Result<MelSpectrogram> {
    let (src_mel, src_pitch) = analyze(source, &cfg.features)?;
    if src_pitch.voiced.iter().all(|v| !v) {
        log::warn!("source has no voiced frames; converting with a zero pitch contour");
    }
    let (tgt_mel, _) = analyze(target, &cfg.features)?;
    model.convert(&src_mel, &src_pitch, &tgt_mel)
}

/// Mean absolute per-bin difference between two mels of equal shape, over
/// the shorter length.
pub fn mel_l1(a: &MelSpectrogram, b: &MelSpectrogram) -> f64 {
    let n = a.n_frames().min(b.n_frames());
    let cols = a.n_mels();
    let mut sum = 0.0f64;
    for t in 0..n {
        for (x, y) in a.frames.row(t).iter().zip(b.frames.row(t)) {
            sum += (x - y).abs() as f64;
        }
    }
    sum / (n * cols).max(1) as f64
}

/// Loads everything named in `req`, converts, and writes the WAV plus a
/// `.json` sidecar next to it.
pub fn convert_files(req: &ConversionRequest, vocoder_override: Option<&dyn Vocoder>) -> Result<ConversionSidecar> {
    let (model, cfg) = checkpoint::load_model(&req.checkpoint)?;
    let source = load_waveform(&req.source_wav)?;
    let target = load_waveform(&req.target_wav)?;
    let mel = one_shot_convert(&model, &cfg, &source, &target)?;
    let owned;
    let vocoder: &dyn Vocoder = match vocoder_override {
        Some(v) => v,
        None => {
            owned = vocoder_by_name(&cfg.eval.vocoder, &cfg.features, cfg.eval.vocoder_iters)?;
            owned.as_ref()
        }
    };
    let wav = vocoder.vocode(&mel)?;
    if let Some(parent) = req.output.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_wav(&req.output, &wav)?;
    let sidecar = ConversionSidecar {
        source: req.source_wav.display().to_string(),
        target: req.target_wav.display().to_string(),
        checkpoint_hash: checkpoint::digest(&req.checkpoint)?,
        frames: mel.n_frames(),
        config_hash: cfg.hash(),
        vocoder: vocoder.name().to_string(),
    };
    std::fs::write(sidecar_path(&req.output), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(sidecar)
}

pub fn sidecar_path(wav: &Path) -> PathBuf {
    wav.with_extension("json")
}
