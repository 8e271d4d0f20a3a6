//! Short-time Fourier transform without centre padding: frame `t` covers
//! samples `[t·hop, t·hop + win)`.

use std::sync::Arc;

use autograd::{par, Exec, Tensor};
use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};

pub struct Stft {
    pub n_fft: usize,
    pub win_length: usize,
    pub hop: usize,
    window: Vec<f32>,
    forward: Arc<dyn Fft<f32>>,
    inverse: Arc<dyn Fft<f32>>,
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f32> {
    (0..n).map(|i| (0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()) as f32).collect()
}

impl Stft {
    pub fn new(n_fft: usize, win_length: usize, hop: usize) -> Self {
        assert!(win_length <= n_fft && hop > 0);
        let mut planner = FftPlanner::new();
        let offset = (n_fft - win_length) / 2;
        let mut window = vec![0.0; n_fft];
        window[offset..offset + win_length].copy_from_slice(&hann(win_length));
        Stft { n_fft, win_length, hop, window, forward: planner.plan_fft_forward(n_fft), inverse: planner.plan_fft_inverse(n_fft) }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.n_fft {
            0
        } else {
            1 + (n_samples - self.n_fft) / self.hop
        }
    }

    /// Number of samples an `n_frames`-frame signal spans.
    pub fn signal_len(&self, n_frames: usize) -> usize {
        if n_frames == 0 {
            0
        } else {
            (n_frames - 1) * self.hop + self.n_fft
        }
    }

    fn frame_spectrum(&self, x: &[f32], t: usize) -> Vec<Complex32> {
        let start = t * self.hop;
        let mut buf: Vec<Complex32> = (0..self.n_fft).map(|i| Complex32::new(x[start + i] * self.window[i], 0.0)).collect();
        self.forward.process(&mut buf);
        buf.truncate(self.n_bins());
        buf
    }

    pub fn spectrum(&self, x: &[f32]) -> Vec<Vec<Complex32>> {
        par::map_range(Exec::global(), self.n_frames(x.len()), |t| self.frame_spectrum(x, t))
    }

    /// `T × (n_fft/2 + 1)` magnitude spectrogram.
    pub fn magnitude(&self, x: &[f32]) -> Tensor {
        let frames = self.spectrum(x);
        let n_bins = self.n_bins();
        let mut data = Vec::with_capacity(frames.len() * n_bins);
        for f in &frames {
            data.extend(f.iter().map(|c| c.norm()));
        }
        Tensor::from_vec(frames.len(), n_bins, data)
    }

    /// Weighted overlap-add inverse; the least-squares signal estimate for a
    /// possibly inconsistent spectrogram.
    pub fn inverse(&self, frames: &[Vec<Complex32>]) -> Vec<f32> {
        let len = self.signal_len(frames.len());
        let mut out = vec![0.0f32; len];
        let mut norm = vec![0.0f32; len];
        let scale = 1.0 / self.n_fft as f32;
        let n_bins = self.n_bins();
        let segments = par::map(Exec::global(), frames, |half| {
            let mut buf = vec![Complex32::new(0.0, 0.0); self.n_fft];
            buf[..n_bins].copy_from_slice(half);
            for k in n_bins..self.n_fft {
                buf[k] = half[self.n_fft - k].conj();
            }
            self.inverse.process(&mut buf);
            buf.iter().map(|c| c.re * scale).collect::<Vec<f32>>()
        });
        for (t, seg) in segments.iter().enumerate() {
            let start = t * self.hop;
            for i in 0..self.n_fft {
                out[start + i] += seg[i] * self.window[i];
                norm[start + i] += self.window[i] * self.window[i];
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            if *n > 1e-8 {
                *o /= n;
            }
        }
        out
    }
}
