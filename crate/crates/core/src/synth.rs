//! Toy multi-speaker corpus: harmonic source-filter vowels with
//! speaker-specific F0 range, vocal-tract length (formant scaling) and
//! spectral tilt. Utterances are word sequences over a six-vowel inventory,
//! each with its own random intonation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::FeatureConfig;
use crate::frontend::{analyze, UtteranceFeatures, Waveform, SAMPLE_RATE};
use crate::Result;

const HOP: usize = 160;

struct Vowel {
    symbol: &'static str,
    formants: [f32; 3],
}

const VOWELS: [Vowel; 6] = [
    Vowel { symbol: "a", formants: [730.0, 1090.0, 2440.0] },
    Vowel { symbol: "i", formants: [270.0, 2290.0, 3010.0] },
    Vowel { symbol: "u", formants: [300.0, 870.0, 2240.0] },
    Vowel { symbol: "e", formants: [530.0, 1840.0, 2480.0] },
    Vowel { symbol: "o", formants: [570.0, 840.0, 2410.0] },
    Vowel { symbol: "y", formants: [660.0, 1720.0, 2410.0] },
];
const BANDWIDTHS: [f32; 3] = [90.0, 110.0, 170.0];
const FORMANT_GAINS: [f32; 3] = [1.0, 0.6, 0.3];

#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerProfile {
    pub id: String,
    pub f0_hz: f32,
    pub formant_scale: f32,
    /// Exponent of the `(1 + f/500)^-tilt` source roll-off.
    pub tilt: f32,
}

#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    pub seconds: f32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { n_speakers: 3, utterances_per_speaker: 30, seconds: 1.6, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct SynthUtterance {
    pub utterance_id: String,
    pub speaker_id: String,
    pub transcript: String,
    pub wav: Waveform,
}

pub fn speaker_profiles(n: usize) -> Vec<SpeakerProfile> {
    const BASE: [(f32, f32, f32); 6] =
        [(105.0, 0.86, 1.9), (150.0, 1.0, 1.5), (215.0, 1.16, 1.1), (125.0, 0.93, 1.7), (185.0, 1.08, 1.3), (240.0, 1.22, 1.0)];
    (0..n)
        .map(|i| {
            let (f0, scale, tilt) = BASE[i % BASE.len()];
            let round = (i / BASE.len()) as f32;
            SpeakerProfile { id: format!("spk{i}"), f0_hz: f0 * (1.0 + 0.07 * round), formant_scale: scale * (1.0 - 0.03 * round), tilt }
        })
        .collect()
}

/// Per-frame synthesis targets.
struct Frame {
    f0: f32,
    amp: f32,
    formants: [f32; 3],
}

fn plan_utterance(profile: &SpeakerProfile, n_frames: usize, rng: &mut ChaCha8Rng) -> (Vec<Frame>, String) {
    // phone plan: (vowel index or None for a pause, duration in frames)
    let mut plan: Vec<(Option<usize>, usize)> = vec![(None, rng.gen_range(4..10))];
    let mut words: Vec<String> = Vec::new();
    let mut total = plan[0].1;
    while total < n_frames {
        let n_phones = rng.gen_range(2..=3);
        let mut word = String::new();
        for _ in 0..n_phones {
            let v = rng.gen_range(0..VOWELS.len());
            let d = rng.gen_range(8..20);
            plan.push((Some(v), d));
            word.push_str(VOWELS[v].symbol);
            total += d;
        }
        let pause = rng.gen_range(3..9);
        plan.push((None, pause));
        total += pause;
        words.push(word);
    }

    let rate = rng.gen_range(1.2..3.0f32);
    let phase = rng.gen_range(0.0..std::f32::consts::TAU);
    let depth = rng.gen_range(0.06..0.16f32);
    let slope = rng.gen_range(-0.15..0.05f32);
    let offset = rng.gen_range(-0.06..0.06f32);

    let mut frames = Vec::with_capacity(total);
    let mut prev_formants = VOWELS[plan.iter().find_map(|p| p.0).unwrap_or(0)].formants;
    for &(phone, dur) in &plan {
        let target = phone.map(|v| VOWELS[v].formants).unwrap_or(prev_formants);
        for i in 0..dur {
            let t = frames.len() as f32 * HOP as f32 / SAMPLE_RATE as f32;
            let glide = ((i as f32 + 1.0) / 4.0).min(1.0);
            let mut formants = [0.0; 3];
            for k in 0..3 {
                formants[k] = (prev_formants[k] + (target[k] - prev_formants[k]) * glide) * profile.formant_scale;
            }
            let f0 = profile.f0_hz * (offset + depth * (std::f32::consts::TAU * rate * t + phase).sin() + slope * t).exp();
            let amp = if phone.is_some() {
                let edge = (i.min(dur - 1 - i) as f32 + 1.0) / 3.0;
                edge.min(1.0)
            } else {
                0.0
            };
            frames.push(Frame { f0, amp, formants });
        }
        prev_formants = target;
    }
    frames.truncate(n_frames);
    // frames cut off mid-word still carry that word in the transcript
    (frames, words.join(" "))
}

fn render(frames: &[Frame], profile: &SpeakerProfile, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = frames.len() * HOP;
    let sr = SAMPLE_RATE as f32;
    let mut out = vec![0.0f32; n];
    let mut phase = 0.0f64;
    let max_harm = (7600.0 / 60.0) as usize;
    let mut amps = vec![0.0f32; max_harm + 1];
    for (fi, fr) in frames.iter().enumerate() {
        let next = frames.get(fi + 1).unwrap_or(fr);
        let h_max = ((7600.0 / fr.f0) as usize).min(max_harm);
        for (h, a) in amps.iter_mut().enumerate().take(h_max + 1).skip(1) {
            let f = h as f32 * fr.f0;
            let mut env = 0.0;
            for k in 0..3 {
                let d = (f - fr.formants[k]) / BANDWIDTHS[k];
                env += FORMANT_GAINS[k] / (1.0 + d * d);
            }
            *a = env * (1.0 + f / 500.0).powf(-profile.tilt);
        }
        for i in 0..HOP {
            let w = i as f32 / HOP as f32;
            let f0 = fr.f0 + (next.f0 - fr.f0) * w;
            let amp = fr.amp + (next.amp - fr.amp) * w;
            phase += std::f64::consts::TAU * f0 as f64 / sr as f64;
            if amp > 0.0 {
                let mut s = 0.0f32;
                for (h, &a) in amps.iter().enumerate().take(h_max + 1).skip(1) {
                    s += a * ((h as f64 * phase).sin() as f32);
                }
                out[fi * HOP + i] = amp * s;
            }
        }
        phase %= std::f64::consts::TAU * 1e6;
    }
    let peak = out.iter().fold(0.0f32, |m, &x| m.max(x.abs())).max(1e-9);
    for x in out.iter_mut() {
        *x = 0.5 * *x / peak + rng.gen_range(-1e-3..1e-3);
    }
    out
}

/// Deterministic corpus for `spec`. Utterance order is speaker-major.
pub fn generate(spec: &SynthSpec) -> Vec<SynthUtterance> {
    let profiles = speaker_profiles(spec.n_speakers);
    let n_frames = (spec.seconds * 100.0).round() as usize + 2;
    let mut jobs = Vec::new();
    for p in &profiles {
        for u in 0..spec.utterances_per_speaker {
            jobs.push((p.clone(), u));
        }
    }
    autograd::par::map(autograd::Exec::global(), &jobs, |(p, u)| {
        let stream = (p.id.trim_start_matches("spk").parse::<u64>().unwrap_or(0) << 20) | *u as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        let (frames, transcript) = plan_utterance(p, n_frames, &mut rng);
        let samples = render(&frames, p, &mut rng);
        SynthUtterance {
            utterance_id: format!("{}_{:03}", p.id, u),
            speaker_id: p.id.clone(),
            transcript,
            wav: Waveform::new(samples, SAMPLE_RATE),
        }
    })
}

/// Mel and pitch features of every utterance.
pub fn to_features(utts: &[SynthUtterance], cfg: &FeatureConfig) -> Result<Vec<UtteranceFeatures>> {
    utts.iter()
        .map(|u| {
            let (mel, pitch) = analyze(&u.wav, cfg)?;
            Ok(UtteranceFeatures {
                utterance_id: u.utterance_id.clone(),
                speaker_id: u.speaker_id.clone(),
                mel,
                pitch,
                transcript: Some(u.transcript.clone()),
            })
        })
        .collect()
}

/// Random utterance ordering helper used by tests and tools.
pub fn shuffled_ids(utts: &[SynthUtterance], seed: u64) -> Vec<String> {
    let mut ids: Vec<String> = utts.iter().map(|u| u.utterance_id.clone()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ids
}
