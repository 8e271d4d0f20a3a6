use std::path::Path;

use crate::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Waveform { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f32 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let ss: f64 = self.samples.iter().map(|&x| (x as f64) * (x as f64)).sum();
        (ss / self.samples.len() as f64).sqrt() as f32
    }
}

/// Reads a PCM or float WAV file, downmixes stereo to mono and resamples to
/// 16 kHz.
pub fn load_waveform(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::ingest(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(Error::ingest(path, format!("unsupported channel layout: {channels} channels")));
    }
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(|x| x.clamp(-1.0, 1.0)))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::ingest(path, e))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|x| x as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::ingest(path, e))?
        }
    };
    if interleaved.is_empty() {
        return Err(Error::ingest(path, "no audio samples"));
    }
    let mono: Vec<f32> = if channels == 1 { interleaved } else { interleaved.chunks_exact(2).map(|c| 0.5 * (c[0] + c[1])).collect() };
    if mono.iter().any(|x| !x.is_finite()) {
        return Err(Error::ingest(path, "non-finite sample"));
    }
    let wav = Waveform::new(mono, spec.sample_rate);
    Ok(resample(&wav, SAMPLE_RATE))
}

/// Writes 16-bit PCM mono.
pub fn write_wav(path: &Path, wav: &Waveform) -> Result<()> {
    let spec = hound::WavSpec { channels: 1, sample_rate: wav.sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| Error::ingest(path, e))?;
    for &x in &wav.samples {
        let v = (x.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(|e| Error::ingest(path, e))?;
    }
    w.finalize().map_err(|e| Error::ingest(path, e))?;
    Ok(())
}

const SINC_ZEROS: f64 = 16.0;

/// Band-limited resampling with a Blackman-windowed sinc kernel.
///
/// Output length is `round(len · to / from)`.
pub fn resample(wav: &Waveform, to: u32) -> Waveform {
    if wav.sample_rate == to || wav.samples.is_empty() {
        return Waveform::new(wav.samples.clone(), to);
    }
    let ratio = to as f64 / wav.sample_rate as f64;
    let cutoff = ratio.min(1.0) * 0.95;
    let half_width = SINC_ZEROS / cutoff;
    let n_in = wav.samples.len();
    let n_out = ((n_in as f64) * ratio).round() as usize;
    let x = &wav.samples;
    let out = (0..n_out)
        .map(|n| {
            let centre = n as f64 / ratio;
            let lo = ((centre - half_width).ceil().max(0.0)) as usize;
            let hi = ((centre + half_width).floor() as usize).min(n_in - 1);
            let mut acc = 0.0f64;
            for (i, &xi) in x.iter().enumerate().take(hi + 1).skip(lo) {
                let d = i as f64 - centre;
                let w = blackman(d / half_width);
                acc += xi as f64 * cutoff * sinc(cutoff * d) * w;
            }
            acc.clamp(-1.0, 1.0) as f32
        })
        .collect();
    Waveform::new(out, to)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Blackman window on `u ∈ [-1, 1]`.
fn blackman(u: f64) -> f64 {
    if u.abs() > 1.0 {
        return 0.0;
    }
    let a = std::f64::consts::PI * (u + 1.0);
    0.42 - 0.5 * a.cos() + 0.08 * (2.0 * a).cos()
}
