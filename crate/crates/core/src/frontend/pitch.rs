//! Frame-wise F0 by normalized square difference (McLeod pitch method) and
//! per-utterance log-F0 z-normalization.

use autograd::{par, Exec};

use super::audio::Waveform;
use crate::config::FeatureConfig;
use crate::{Error, Result};

/// Fraction of the highest key maximum a candidate must reach to be picked.
const KEY_MAX_RATIO: f32 = 0.9;
const SILENCE_RMS: f32 = 1e-4;
const STD_EPS: f64 = 1e-8;

/// Raw F0 in Hz, 0 where unvoiced.
#[derive(Clone, Debug, PartialEq)]
pub struct F0Track {
    pub hz: Vec<f32>,
    pub voiced: Vec<bool>,
}

/// Per-utterance z-normalized log-F0; unvoiced frames carry 0.
#[derive(Clone, Debug, PartialEq)]
pub struct PitchContour {
    pub values: Vec<f32>,
    pub voiced: Vec<bool>,
}

impl PitchContour {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zeros(n: usize) -> Self {
        PitchContour { values: vec![0.0; n], voiced: vec![false; n] }
    }

    pub fn truncate(&mut self, n: usize) {
        self.values.truncate(n);
        self.voiced.truncate(n);
    }
}

pub fn extract_f0(wav: &Waveform, cfg: &FeatureConfig) -> Result<F0Track> {
    let win = cfg.win_length;
    if wav.len() < cfg.n_fft {
        return Err(Error::Feature(format!("waveform has {} samples, need at least {}", wav.len(), cfg.n_fft)));
    }
    let n_frames = 1 + (wav.len() - cfg.n_fft) / cfg.hop_length;
    let offset = (cfg.n_fft - win) / 2;
    let sr = wav.sample_rate as f32;
    let tau_min = (sr / cfg.f0_max).floor().max(2.0) as usize;
    let tau_max = ((sr / cfg.f0_min).ceil() as usize).min(win - 2);
    let frames = par::map_range(Exec::global(), n_frames, |t| {
        let start = t * cfg.hop_length + offset;
        frame_f0(&wav.samples[start..start + win], sr, tau_min, tau_max, cfg)
    });
    let (hz, voiced) = frames.into_iter().map(|f| f.map_or((0.0, false), |v| (v, true))).unzip();
    Ok(F0Track { hz, voiced })
}

/// Normalized square difference function `n(τ) = 2 r(τ) / m(τ)` for `τ ≤ tau_max`.
pub fn nsdf(x: &[f32], tau_max: usize) -> Vec<f32> {
    let w = x.len();
    let mut sq_prefix = vec![0.0f64; w + 1];
    for (i, &v) in x.iter().enumerate() {
        sq_prefix[i + 1] = sq_prefix[i] + (v as f64) * (v as f64);
    }
    (0..=tau_max.min(w - 1))
        .map(|tau| {
            let r: f64 = x[..w - tau].iter().zip(&x[tau..]).map(|(&a, &b)| a as f64 * b as f64).sum();
            let m = sq_prefix[w - tau] + (sq_prefix[w] - sq_prefix[tau]);
            if m > 0.0 {
                (2.0 * r / m) as f32
            } else {
                0.0
            }
        })
        .collect()
}

fn frame_f0(x: &[f32], sr: f32, tau_min: usize, tau_max: usize, cfg: &FeatureConfig) -> Option<f32> {
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / x.len() as f64;
    let x: Vec<f32> = x.iter().map(|&v| (v as f64 - mean) as f32).collect();
    let rms = (x.iter().map(|&v| v * v).sum::<f32>() / x.len() as f32).sqrt();
    if rms < SILENCE_RMS {
        return None;
    }
    let n = nsdf(&x, tau_max + 1);

    // Key maxima: the highest point of each positive lobe after the first
    // negative-going zero crossing.
    let mut peaks: Vec<usize> = Vec::new();
    let mut tau = 1;
    while tau < n.len() && n[tau] > 0.0 {
        tau += 1;
    }
    let mut best: Option<usize> = None;
    while tau < n.len() - 1 {
        if n[tau] > 0.0 {
            if best.is_none_or(|b| n[tau] > n[b]) {
                best = Some(tau);
            }
        } else if let Some(b) = best.take() {
            peaks.push(b);
        }
        tau += 1;
    }
    if let Some(b) = best {
        peaks.push(b);
    }
    peaks.retain(|&p| p >= tau_min && p <= tau_max);
    let highest = peaks.iter().map(|&p| n[p]).fold(f32::NEG_INFINITY, f32::max);
    let &pick = peaks.iter().find(|&&p| n[p] >= KEY_MAX_RATIO * highest)?;
    if n[pick] < cfg.voicing_threshold {
        return None;
    }
    let (a, b, c) = (n[pick - 1], n[pick], n[pick + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-12 { 0.5 * (a - c) / denom } else { 0.0 };
    let f0 = sr / (pick as f32 + shift.clamp(-1.0, 1.0));
    (f0 >= cfg.f0_min && f0 <= cfg.f0_max).then_some(f0)
}

/// Z-normalizes the masked entries with population statistics; masked-out
/// entries become 0. Returns `None` when fewer than two entries are masked in.
pub fn z_normalize(values: &[f32], mask: &[bool]) -> Option<Vec<f32>> {
    assert_eq!(values.len(), mask.len());
    let sel: Vec<f64> = values.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v as f64).collect();
    if sel.len() < 2 {
        return None;
    }
    let n = sel.len() as f64;
    let mean = sel.iter().sum::<f64>() / n;
    let var = sel.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_EPS);
    Some(values.iter().zip(mask).map(|(&v, &m)| if m { ((v as f64 - mean) / std) as f32 } else { 0.0 }).collect())
}

/// Natural-log F0, z-normalized over this utterance's voiced frames.
pub fn normalize_logf0(f0: &F0Track) -> PitchContour {
    let logs: Vec<f32> = f0.hz.iter().zip(&f0.voiced).map(|(&h, &v)| if v && h > 0.0 { h.ln() } else { 0.0 }).collect();
    let mask: Vec<bool> = f0.hz.iter().zip(&f0.voiced).map(|(&h, &v)| v && h > 0.0).collect();
    match z_normalize(&logs, &mask) {
        Some(values) => PitchContour { values, voiced: mask },
        None => {
            log::warn!("fewer than two voiced frames; using an all-zero pitch contour");
            PitchContour { values: vec![0.0; logs.len()], voiced: mask }
        }
    }
}
