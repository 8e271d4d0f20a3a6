mod common;

use autograd::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqmivc::checkpoint::store_digest;
use vqmivc::converter::Vocoder;
use vqmivc::evaluation::{
    char_error_rate, edit_distance, extract_reps, f0_pcc, measure_mi, pearson, pitch_prediction_loss, probe_speaker_accuracy, run_asr,
    same_mixed_generate, word_error_rate, Condition, ProbeSample, UtteranceReps,
};
use vqmivc::frontend::{load_waveform, write_wav, MelSpectrogram, Waveform, SAMPLE_RATE};
use vqmivc::model::{MelNorm, VcModel};
use vqmivc::synth::{self, SynthSpec};
use vqmivc::{Config, Error};

fn random_contour(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn pcc_basic_values() {
    let a = [1.0, 2.0, 3.0, 4.0];
    assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert!((pearson(&a, &[8.0, 6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-12);
    assert!(matches!(pearson(&a, &[1.0; 4]), Err(Error::Undefined(_))));
    assert!(matches!(pearson(&[1.0], &[2.0]), Err(Error::Undefined(_))));
    assert!(matches!(pearson(&a, &a[..3]), Err(Error::Undefined(_))));
}

#[test]
fn independent_contours_rarely_correlate() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 500;
    let large = (0..trials)
        .filter(|_| {
            let a = random_contour(100, &mut rng);
            let b = random_contour(100, &mut rng);
            pearson(&a, &b).unwrap().abs() >= 0.3
        })
        .count();
    // P(|r| ≥ 0.3) ≈ 0.0024 for n = 100
    assert!(large <= 5, "{large} of {trials}");
}

fn harmonic(f0: &[f32]) -> Waveform {
    let hop = 160;
    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(f0.len() * hop);
    for i in 0..f0.len() * hop {
        let k = (i / hop).min(f0.len() - 1);
        phase += std::f64::consts::TAU * f0[k] as f64 / SAMPLE_RATE as f64;
        let s: f64 = (1..=5).map(|h| (h as f64 * phase).sin() / h as f64).sum();
        out.push(0.3 * s as f32);
    }
    Waveform::new(out, SAMPLE_RATE)
}

#[test]
fn f0_pcc_identity_and_affine() {
    let cfg = Config::desk().features;
    let utt = synth::generate(&SynthSpec { n_speakers: 1, utterances_per_speaker: 1, seconds: 1.0, seed: 2 }).remove(0);
    assert!((f0_pcc(&utt.wav, &utt.wav, &cfg).unwrap() - 1.0).abs() < 1e-6);

    let contour: Vec<f32> = (0..120).map(|t| 150.0 + 25.0 * (t as f32 * 0.07).sin() + 0.2 * t as f32).collect();
    let scaled: Vec<f32> = contour.iter().map(|&f| 1.3 * f + 12.0).collect();
    let pcc = f0_pcc(&harmonic(&contour), &harmonic(&scaled), &cfg).unwrap();
    assert!(pcc > 0.98, "{pcc}");

    let silence = Waveform::new(vec![0.0; 16000], SAMPLE_RATE);
    assert!(matches!(f0_pcc(&utt.wav, &silence, &cfg), Err(Error::Undefined(_))));
}

#[test]
fn edit_distance_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let alphabet: Vec<char> = "abcde ".chars().collect();
    for _ in 0..100 {
        let mut s = || -> String { (0..rng.gen_range(0..15)).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect() };
        let (a, b) = (s(), s());
        let (ca, cb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
        assert_eq!(edit_distance(&ca, &cb), common::levenshtein(&ca, &cb), "{a:?} {b:?}");
        if !cb.is_empty() {
            assert_eq!(char_error_rate(&a, &b), common::levenshtein(&ca, &cb) as f64 / cb.len() as f64);
        }
        let (wa, wb): (Vec<&str>, Vec<&str>) = (a.split_whitespace().collect(), b.split_whitespace().collect());
        if !wb.is_empty() {
            assert_eq!(word_error_rate(&a, &b), common::levenshtein(&wa, &wb) as f64 / wb.len() as f64);
        }
    }
}

#[test]
fn error_rate_examples() {
    assert!((char_error_rate("cat", "cat")).abs() < 1e-12);
    assert!((word_error_rate("a b c", "a b c")).abs() < 1e-12);
    assert!((char_error_rate("cut", "cat") - 1.0 / 3.0).abs() < 1e-12);
    assert!((word_error_rate("the cat sat", "the cat sat down") - 0.25).abs() < 1e-12);
}

fn reps_for(n: usize, f: usize, same: bool, seed: u64) -> Vec<UtteranceReps> {
    let cfg = Config::desk().model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let one = |rng: &mut ChaCha8Rng, i: usize| UtteranceReps {
        utterance_id: format!("u{i}"),
        speaker_id: format!("s{}", i % 3),
        codes: Tensor::uniform(f, cfg.content_dim, -1.0, 1.0, rng),
        spk: Tensor::uniform(1, cfg.spk_dim, -1.0, 1.0, rng),
        pitch: (0..2 * f).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        pitch_hat: (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    let first = one(&mut rng, 0);
    (0..n).map(|i| if same { UtteranceReps { utterance_id: format!("u{i}"), ..first.clone() } } else { one(&mut rng, i) }).collect()
}

fn quick_eval() -> vqmivc::config::EvalConfig {
    let mut e = Config::desk().eval;
    e.mi_fit_steps = 30;
    e.probe_epochs = 30;
    e
}

#[test]
fn mi_report_shape_and_std() {
    let cfg = Config::desk();
    let reps = reps_for(8, 6, false, 1);
    let r = measure_mi(&reps, &cfg.model, &quick_eval(), 0.01, "abc", 4, 7).unwrap();
    assert_eq!(r.pairs.len(), 3);
    assert_eq!(r.lambda_mi, 0.01);
    for name in ["zs", "zp", "ps"] {
        let p = r.pair(name).unwrap();
        assert_eq!(p.values.len(), 4);
        let mean = p.values.iter().sum::<f64>() / 4.0;
        let std = (p.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!((p.mean - mean).abs() < 1e-12 && (p.std - std).abs() < 1e-12);
        assert!(p.values.iter().all(|v| v.is_finite()));
    }
    assert_eq!(r.to_csv().lines().count(), 4);
    assert!(matches!(measure_mi(&reps[..3], &cfg.model, &quick_eval(), 0.0, "", 4, 7), Err(Error::Config(_))));
    assert!(matches!(measure_mi(&reps, &cfg.model, &quick_eval(), 0.0, "", 1, 7), Err(Error::Config(_))));
}

#[test]
fn identical_representations_carry_no_information() {
    let cfg = Config::desk();
    let reps = reps_for(8, 6, true, 2);
    let r = measure_mi(&reps, &cfg.model, &quick_eval(), 0.0, "", 2, 7).unwrap();
    for p in &r.pairs {
        assert!(p.mean.abs() < 1e-4, "{}: {}", p.pair, p.mean);
    }
}

fn probe_samples(n_groups: usize, per_group: usize, f: impl Fn(usize, &mut ChaCha8Rng) -> (Vec<f32>, usize, f32)) -> Vec<ProbeSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut out = Vec::new();
    for g in 0..n_groups {
        for _ in 0..per_group {
            let (features, label, target) = f(g, &mut rng);
            out.push(ProbeSample { features, group: format!("g{g}"), label, target });
        }
    }
    out
}

#[test]
fn probe_oracle_and_null() {
    let cfg = quick_eval();
    let oracle = probe_samples(30, 4, |g, _| {
        let mut v = vec![0.0; 3];
        v[g % 3] = 1.0;
        (v, g % 3, 0.0)
    });
    let r = probe_speaker_accuracy(&oracle, &cfg, 1).unwrap();
    assert!(r.value > 0.99, "{}", r.value);
    assert!((r.baseline - 1.0 / 3.0).abs() < 1e-12);

    let null = probe_samples(100, 10, |g, rng| ((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(), g % 3, 0.0));
    let r = probe_speaker_accuracy(&null, &cfg, 1).unwrap();
    let sigma = (r.baseline * (1.0 - r.baseline) / r.n_test as f64).sqrt();
    assert!((r.value - r.baseline).abs() < 3.0 * sigma + 0.02, "{} vs {}", r.value, r.baseline);

    let single = probe_samples(10, 2, |_, rng| (vec![rng.gen_range(0.0..1.0)], 0, 0.0));
    assert!(matches!(probe_speaker_accuracy(&single, &cfg, 1), Err(Error::Undefined(_))));
}

#[test]
fn pitch_probe_baselines() {
    let cfg = quick_eval();
    let zero = probe_samples(40, 8, |_, rng| ((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(), 0, 0.0));
    assert!(pitch_prediction_loss(&zero, &cfg, 1).unwrap().value < 1e-3);

    let noise = probe_samples(40, 8, |_, rng| ((0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(), 0, rng.gen_range(-1.0..1.0)));
    let r = pitch_prediction_loss(&noise, &cfg, 1).unwrap();
    assert!(r.value > 0.8 * r.baseline && r.value < 1.5 * r.baseline, "{} vs {}", r.value, r.baseline);
}

/// Writes the mel values as samples, so audio equality means mel equality.
struct Dump;

impl Vocoder for Dump {
    fn name(&self) -> &str {
        "dump"
    }
    fn vocode(&self, mel: &MelSpectrogram) -> vqmivc::Result<Waveform> {
        Ok(Waveform::new(mel.frames.data().iter().map(|v| (v / 20.0).clamp(-1.0, 1.0)).collect(), SAMPLE_RATE))
    }
}

fn small_corpus() -> (VcModel, Vec<vqmivc::frontend::UtteranceFeatures>) {
    let cfg = Config::desk();
    let utts = synth::generate(&SynthSpec { n_speakers: 2, utterances_per_speaker: 3, seconds: 0.5, seed: 8 });
    let mut data = synth::to_features(&utts, &cfg.features).unwrap();
    let lone = synth::generate(&SynthSpec { n_speakers: 3, utterances_per_speaker: 1, seconds: 0.5, seed: 9 });
    data.extend(synth::to_features(&lone[2..], &cfg.features).unwrap());
    let mut model = VcModel::new(&cfg.model, 80, 3);
    model.norm = MelNorm::fit(data.iter().map(|u| &u.mel.frames));
    (model, data)
}

#[test]
fn same_mixed_manifest_and_same_condition() {
    let (model, data) = small_corpus();
    let dir = tempfile::tempdir().unwrap();
    let digest = store_digest(&model.params);
    let entries = same_mixed_generate(&model, &data, Some(&Dump), dir.path()).unwrap();
    // the lone third speaker is skipped
    assert_eq!(entries.len(), 2 * 6);
    assert_eq!(entries.iter().filter(|e| e.condition == Condition::Same).count(), 6);
    let text = std::fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 12);
    for e in &entries {
        assert!(std::path::Path::new(&e.audio).is_file());
        assert!(std::path::Path::new(&e.reference).is_file());
        match e.condition {
            Condition::Same => assert_eq!(e.content_utt, e.speaker_utt),
            Condition::Mixed => {
                assert_ne!(e.content_utt, e.speaker_utt);
                assert!(e.speaker_utt.starts_with(&e.speaker));
            }
        }
    }
    let same = entries.iter().find(|e| e.condition == Condition::Same).unwrap();
    let u = data.iter().find(|u| u.utterance_id == same.content_utt).unwrap();
    let recon = Dump.vocode(&model.convert(&u.mel, &u.pitch, &u.mel).unwrap()).unwrap();
    let path = dir.path().join("recon.wav");
    write_wav(&path, &recon).unwrap();
    assert_eq!(load_waveform(&path).unwrap(), load_waveform(std::path::Path::new(&same.audio)).unwrap());
    assert_eq!(store_digest(&model.params), digest);
}

#[test]
fn asr_hook_contract() {
    let (model, data) = small_corpus();
    let dir = tempfile::tempdir().unwrap();
    let entries = same_mixed_generate(&model, &data, Some(&Dump), dir.path()).unwrap();

    let skipped = run_asr(&entries, None).unwrap();
    assert!(skipped.skipped.is_some() && skipped.same.is_none());

    let script = dir.path().join("asr.sh");
    std::fs::write(&script, "#!/bin/sh\nfor f in \"$@\"; do echo \"ao ei\"; done\n").unwrap();
    let cmd = format!("sh {}", script.display());
    let r = run_asr(&entries, Some(&cmd)).unwrap();
    let rates = |cond: Condition| {
        let (mut ce, mut cn, mut we, mut wn) = (0, 0, 0, 0);
        for e in entries.iter().filter(|e| e.condition == cond) {
            let reference = std::fs::read_to_string(&e.reference).unwrap();
            let r: Vec<char> = reference.chars().collect();
            let h: Vec<char> = "ao ei".chars().collect();
            ce += common::levenshtein(&h, &r);
            cn += r.len();
            let rw: Vec<&str> = reference.split_whitespace().collect();
            we += common::levenshtein(&["ao", "ei"], &rw);
            wn += rw.len();
        }
        (ce as f64 / cn as f64, we as f64 / wn as f64)
    };
    let (cs, ws) = rates(Condition::Same);
    let (cm, wm) = rates(Condition::Mixed);
    let same = r.same.unwrap();
    assert!((same.cer - cs).abs() < 1e-12 && (same.wer - ws).abs() < 1e-12);
    assert!((r.delta_c.unwrap() - (cm - cs)).abs() < 1e-12);
    assert!((r.delta_w.unwrap() - (wm - ws)).abs() < 1e-12);

    std::fs::write(&script, "#!/bin/sh\necho one line only\n").unwrap();
    assert!(matches!(run_asr(&entries, Some(&cmd)), Err(Error::External(_))));
}

#[test]
fn reps_follow_the_model() {
    let (model, data) = small_corpus();
    let reps = extract_reps(&model, &data).unwrap();
    assert_eq!(reps.len(), data.len());
    for (r, u) in reps.iter().zip(&data) {
        let t = u.mel.n_frames() / 2 * 2;
        assert_eq!(r.codes.rows(), t / 2);
        assert_eq!(r.pitch.len(), t);
        assert_eq!(r.pitch_hat.len(), t / 2);
        assert_eq!(r.spk.shape(), (1, model.config.spk_dim));
    }
}

proptest! {
    #[test]
    fn pcc_symmetric_bounded_affine(
        a in prop::collection::vec(-5.0f64..5.0, 3..60),
        seed in any::<u64>(),
        scale in 0.1f64..10.0,
        shift in -50.0f64..50.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|x| x + rng.gen_range(-3.0..3.0)).collect();
        let (Ok(r), Ok(r2)) = (pearson(&a, &b), pearson(&b, &a)) else { return Ok(()) };
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert!((r - r2).abs() < 1e-12);
        prop_assert!((r - common::pearson(&a, &b)).abs() < 1e-9);
        let t: Vec<f64> = b.iter().map(|x| scale * x + shift).collect();
        prop_assert!((pearson(&a, &t).unwrap() - r).abs() < 1e-9);
    }
}
