//! Audio ingestion and acoustic features: log-mel spectrograms, frame-wise
//! F0 with per-utterance log-F0 normalization, training crops and the
//! on-disk feature cache.

mod audio;
mod cache;
mod mel;
mod pitch;
mod segment;
mod stft;

pub use audio::{load_waveform, resample, write_wav, Waveform, SAMPLE_RATE};
pub use cache::{FeatureCache, Sidecar, UtteranceFeatures};
pub use mel::{hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz, MelExtractor, MelSpectrogram, LOG_FLOOR};
pub use pitch::{extract_f0, normalize_logf0, nsdf, z_normalize, F0Track, PitchContour};
pub use segment::{random_crop, TrainingSegment};
pub use stft::{hann, Stft};

use crate::config::FeatureConfig;
use crate::Result;

/// Mel spectrogram and aligned pitch contour for one waveform.
pub fn analyze(wav: &Waveform, cfg: &FeatureConfig) -> Result<(MelSpectrogram, PitchContour)> {
    let mel = mel_spectrogram(wav, cfg)?;
    let f0 = extract_f0(wav, cfg)?;
    let mut pitch = normalize_logf0(&f0);
    pitch.truncate(mel.n_frames());
    debug_assert_eq!(pitch.len(), mel.n_frames());
    Ok((mel, pitch))
}
