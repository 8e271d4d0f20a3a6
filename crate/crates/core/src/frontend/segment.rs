use autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mel::MelSpectrogram;
use super::pitch::PitchContour;

/// Fixed-length training crop. Speaker id is bookkeeping only.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSegment {
    pub mel: Tensor,
    pub pitch: PitchContour,
    pub utterance_id: String,
    pub speaker_id: String,
    pub offset: usize,
}

/// Crops `length` frames from a shared random offset. Shorter inputs are
/// padded at the end: mel by repeating the last frame, pitch with unvoiced zeros.
pub fn random_crop(mel: &MelSpectrogram, pitch: &PitchContour, length: usize, seed: u64) -> (Tensor, PitchContour, usize) {
    let t = mel.n_frames();
    assert_eq!(t, pitch.len(), "mel and pitch lengths differ");
    assert!(t > 0, "empty utterance");
    let n_mels = mel.n_mels();
    if t >= length {
        let offset = if t == length { 0 } else { ChaCha8Rng::seed_from_u64(seed).gen_range(0..=t - length) };
        let crop = mel.frames.slice_rows(offset, offset + length);
        let p =
            PitchContour { values: pitch.values[offset..offset + length].to_vec(), voiced: pitch.voiced[offset..offset + length].to_vec() };
        (crop, p, offset)
    } else {
        let mut data = mel.frames.data().to_vec();
        let last = mel.frames.row(t - 1).to_vec();
        for _ in t..length {
            data.extend_from_slice(&last);
        }
        let mut p = pitch.clone();
        p.values.resize(length, 0.0);
        p.voiced.resize(length, false);
        (Tensor::from_vec(length, n_mels, data), p, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(t: usize) -> (MelSpectrogram, PitchContour) {
        let mel = Tensor::from_vec(t, 2, (0..2 * t).map(|i| i as f32).collect());
        let p = PitchContour { values: (0..t).map(|i| i as f32).collect(), voiced: vec![true; t] };
        (MelSpectrogram::new(mel), p)
    }

    #[test]
    fn exact_length_is_identity() {
        let (m, p) = ramp(128);
        let (c, cp, off) = random_crop(&m, &p, 128, 5);
        assert_eq!(off, 0);
        assert_eq!(c, m.frames);
        assert_eq!(cp, p);
    }

    #[test]
    fn mel_and_pitch_share_offset() {
        let (m, p) = ramp(200);
        let (c, cp, off) = random_crop(&m, &p, 128, 5);
        assert_eq!(random_crop(&m, &p, 128, 5).2, off);
        assert_eq!(c.get(0, 0), (2 * off) as f32);
        assert_eq!(cp.values[0], off as f32);
    }

    #[test]
    fn short_input_is_edge_padded() {
        let (m, p) = ramp(100);
        let (c, cp, _) = random_crop(&m, &p, 128, 5);
        assert_eq!(c.shape(), (128, 2));
        for r in 99..128 {
            assert_eq!(c.row(r), m.frames.row(99));
        }
        assert!(cp.values[100..].iter().all(|&v| v == 0.0));
        assert!(cp.voiced[100..].iter().all(|&v| !v));
        assert!(cp.voiced[..100].iter().all(|&v| v));
    }
}
