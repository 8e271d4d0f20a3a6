//! Measurement protocols over a trained model: mutual-information tables,
//! probe classifiers and pitch predictor, F0 correlation, Same/Mixed
//! generation and CER/WER scoring of external transcripts.

mod asr;
mod mi_report;
mod pcc;
mod probe;
mod same_mixed;

pub use asr::{char_error_rate, edit_distance, run_asr, word_error_rate, AsrReport, ErrorRates};
pub use mi_report::{fit_approximator, measure_mi, MiReport, PairReport};
pub use pcc::{f0_pcc, pearson};
pub use probe::{pitch_prediction_loss, probe_speaker_accuracy, ProbeResult, ProbeSample};
pub use same_mixed::{same_mixed_generate, Condition, ManifestEntry};

use autograd::Tensor;

use crate::frontend::UtteranceFeatures;
use crate::model::{downsample_pitch, VcModel};
use crate::Result;

/// Frozen representations of one utterance.
#[derive(Clone, Debug)]
pub struct UtteranceReps {
    pub utterance_id: String,
    pub speaker_id: String,
    /// `F × d_z` quantized content.
    pub codes: Tensor,
    /// `1 × d_s`.
    pub spk: Tensor,
    /// Length `2F`.
    pub pitch: Vec<f32>,
    /// Length `F`.
    pub pitch_hat: Vec<f32>,
}

/// Encodes every utterance (odd lengths lose their last frame).
pub fn extract_reps(model: &VcModel, utts: &[UtteranceFeatures]) -> Result<Vec<UtteranceReps>> {
    utts.iter()
        .map(|u| {
            let mel = u.mel.trim_even();
            let codes = model.encode_content(&mel)?;
            let spk = model.speaker_encode(&mel)?;
            let pitch = u.pitch.values[..mel.n_frames()].to_vec();
            Ok(UtteranceReps {
                utterance_id: u.utterance_id.clone(),
                speaker_id: u.speaker_id.clone(),
                codes: codes.vectors,
                spk,
                pitch_hat: downsample_pitch(&pitch),
                pitch,
            })
        })
        .collect()
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
