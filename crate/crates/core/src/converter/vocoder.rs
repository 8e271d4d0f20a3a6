use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex32;

use crate::config::FeatureConfig;
use crate::frontend::{MelExtractor, MelSpectrogram, Waveform, LOG_FLOOR};
use crate::{Error, Result};

/// Mel in, waveform out.
pub trait Vocoder: Send + Sync {
    fn name(&self) -> &str;
    fn vocode(&self, mel: &MelSpectrogram) -> Result<Waveform>;
}

/// Resolves a vocoder by its registered name.
pub fn vocoder_by_name(name: &str, features: &FeatureConfig, iterations: usize) -> Result<Box<dyn Vocoder>> {
    match name {
        "griffin-lim" => Ok(Box::new(GriffinLim::new(features, iterations))),
        other => Err(Error::Config(format!("unknown vocoder `{other}` (available: griffin-lim)"))),
    }
}

/// Spectral inversion: non-negative least-squares mel-to-linear mapping,
/// then fast Griffin-Lim phase reconstruction.
pub struct GriffinLim {
    extractor: MelExtractor,
    sample_rate: u32,
    pub iterations: usize,
    pub momentum: f32,
    pub nnls_iterations: usize,
    pub seed: u64,
    step: f32,
}

impl GriffinLim {
    pub fn new(cfg: &FeatureConfig, iterations: usize) -> Self {
        let extractor = MelExtractor::new(cfg);
        let fb = extractor.filterbank_t();
        // largest eigenvalue of FᵀF by power iteration
        let gram = fb.transpose().matmul(fb);
        let n = gram.rows();
        let mut v = vec![1.0f64 / (n as f64).sqrt(); n];
        let mut lambda = 0.0;
        for _ in 0..100 {
            let mut w = vec![0.0f64; n];
            for i in 0..n {
                for j in 0..n {
                    w[i] += gram.get(i, j) as f64 * v[j];
                }
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            lambda = norm;
            v = w.into_iter().map(|x| x / norm).collect();
        }
        GriffinLim {
            extractor,
            sample_rate: cfg.sample_rate,
            iterations,
            momentum: 0.99,
            nnls_iterations: 200,
            seed: 0,
            step: (1.0 / lambda.max(1e-12)) as f32,
        }
    }

    /// Non-negative linear magnitudes whose mel projection best matches
    /// `exp(mel) − floor`, by projected gradient descent.
    pub fn mel_to_linear(&self, mel: &MelSpectrogram) -> autograd::Tensor {
        let fb = self.extractor.filterbank_t();
        let target = mel.frames.map(|v| (v.exp() - LOG_FLOOR).max(0.0));
        let fb_tt = fb.transpose();
        let mut s = target.matmul(&fb_tt);
        for _ in 0..self.nnls_iterations {
            let mut resid = s.matmul(fb);
            resid.axpy(-1.0, &target);
            let grad = resid.matmul(&fb_tt);
            s.axpy(-self.step, &grad);
            s = s.map(|v| v.max(0.0));
        }
        s
    }

    /// Phase reconstruction for a `T × bins` magnitude spectrogram.
    pub fn reconstruct(&self, mag: &autograd::Tensor) -> Vec<f32> {
        let stft = self.extractor.stft();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut angles: Vec<Vec<Complex32>> = (0..mag.rows())
            .map(|_| (0..mag.cols()).map(|_| Complex32::from_polar(1.0, rng.gen_range(0.0..std::f32::consts::TAU))).collect())
            .collect();
        let apply = |angles: &[Vec<Complex32>]| -> Vec<Vec<Complex32>> {
            angles.iter().enumerate().map(|(t, row)| row.iter().zip(mag.row(t)).map(|(a, &m)| a * m).collect()).collect()
        };
        let beta = self.momentum / (1.0 + self.momentum);
        let mut prev: Option<Vec<Vec<Complex32>>> = None;
        for _ in 0..self.iterations {
            let signal = stft.inverse(&apply(&angles));
            let rebuilt = stft.spectrum(&signal);
            for (t, row) in angles.iter_mut().enumerate() {
                for (k, a) in row.iter_mut().enumerate() {
                    let mut c = rebuilt[t][k];
                    if let Some(p) = &prev {
                        c -= p[t][k] * beta;
                    }
                    let n = c.norm();
                    *a = if n > 1e-12 { c / n } else { Complex32::new(1.0, 0.0) };
                }
            }
            prev = Some(rebuilt);
        }
        stft.inverse(&apply(&angles))
    }
}

impl Vocoder for GriffinLim {
    fn name(&self) -> &str {
        "griffin-lim"
    }

    fn vocode(&self, mel: &MelSpectrogram) -> Result<Waveform> {
        if mel.n_frames() == 0 {
            return Ok(Waveform::new(Vec::new(), self.sample_rate));
        }
        let mag = self.mel_to_linear(mel);
        let samples = self.reconstruct(&mag);
        Ok(Waveform::new(samples, self.sample_rate))
    }
}
