use autograd::Tensor;

use super::audio::Waveform;
use super::stft::Stft;
use crate::config::FeatureConfig;
use crate::{Error, Result};

pub const LOG_FLOOR: f32 = 1e-5;

/// `T × n_mels` log-mel energies of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Tensor,
}

impl MelSpectrogram {
    pub fn new(frames: Tensor) -> Self {
        MelSpectrogram { frames }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.cols()
    }

    /// Drops a trailing frame if needed so the length is even.
    pub fn trim_even(&self) -> MelSpectrogram {
        let t = self.n_frames() & !1;
        MelSpectrogram::new(self.frames.slice_rows(0, t))
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// HTK-style triangular filters, `n_mels × (n_fft/2 + 1)`, unit peak height.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize, fmin: f32, fmax: f32) -> Tensor {
    let n_bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(fmin as f64), hz_to_mel(fmax as f64));
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64)).collect();
    let mut w = Tensor::zeros(n_mels, n_bins);
    for m in 0..n_mels {
        let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let up = (f - left) / (centre - left);
            let down = (right - f) / (right - centre);
            let v = up.min(down).max(0.0);
            w.set(m, k, v as f32);
        }
    }
    w
}

/// Reusable STFT plan plus filterbank.
pub struct MelExtractor {
    stft: Stft,
    filterbank_t: Tensor,
    sample_rate: u32,
}

impl MelExtractor {
    pub fn new(cfg: &FeatureConfig) -> Self {
        let fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax);
        MelExtractor {
            stft: Stft::new(cfg.n_fft, cfg.win_length, cfg.hop_length),
            filterbank_t: fb.transpose(),
            sample_rate: cfg.sample_rate,
        }
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    /// `n_bins × n_mels`.
    pub fn filterbank_t(&self) -> &Tensor {
        &self.filterbank_t
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        self.stft.n_frames(n_samples)
    }

    pub fn compute(&self, wav: &Waveform) -> Result<MelSpectrogram> {
        if wav.sample_rate != self.sample_rate {
            return Err(Error::Feature(format!("expected {} Hz audio, got {} Hz", self.sample_rate, wav.sample_rate)));
        }
        if wav.len() < self.stft.n_fft {
            return Err(Error::Feature(format!("waveform has {} samples, need at least {}", wav.len(), self.stft.n_fft)));
        }
        let mag = self.stft.magnitude(&wav.samples);
        let mel = mag.matmul(&self.filterbank_t).map(|e| (e + LOG_FLOOR).ln());
        if !mel.is_finite() {
            return Err(Error::Feature("non-finite mel energies".into()));
        }
        Ok(MelSpectrogram::new(mel))
    }
}

pub fn mel_spectrogram(wav: &Waveform, cfg: &FeatureConfig) -> Result<MelSpectrogram> {
    MelExtractor::new(cfg).compute(wav)
}
