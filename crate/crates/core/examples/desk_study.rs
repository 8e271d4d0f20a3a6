//! Paired desk-scale runs with and without the MI penalty, followed by the
//! disentanglement measurements and a cross-speaker pitch check.
//!
//! cargo run --release -p vqmivc --example desk_study -- [seeds] [epochs] [utts_per_speaker]

use std::time::Instant;

use vqmivc::converter::{one_shot_convert, vocoder_by_name};
use vqmivc::evaluation::{self, ProbeSample};
use vqmivc::synth::{self, SynthSpec};
use vqmivc::trainer::{train, TrainOptions};
use vqmivc::Config;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).map_or(Ok(3), |s| s.parse())?;
    let epochs: usize = args.get(2).map_or(Ok(20), |s| s.parse())?;
    let per_speaker: usize = args.get(3).map_or(Ok(30), |s| s.parse())?;

    let base = Config::desk();
    let train_utts = synth::generate(&SynthSpec { utterances_per_speaker: per_speaker, ..SynthSpec::default() });
    let test_utts = synth::generate(&SynthSpec { utterances_per_speaker: 10, seed: 1000, ..SynthSpec::default() });
    let train_data = synth::to_features(&train_utts, &base.features)?;
    let test_data = synth::to_features(&test_utts, &base.features)?;

    for seed in 1..=seeds {
        for lambda in [0.0f32, 1e-2] {
            let mut cfg = base.clone();
            cfg.train.epochs = epochs;
            cfg.train.lambda_mi = lambda;
            cfg.train.seed = seed;
            let t0 = Instant::now();
            let dir = std::env::temp_dir().join(format!("desk_study/e{epochs}_u{per_speaker}_s{seed}_l{lambda}"));
            let out = train(&cfg, &train_data, &TrainOptions { out_dir: Some(dir), resume: true, stop_after: None })?;
            let hist = &out.state.history;
            let first =
                hist.iter().filter(|r| r.epoch == 0).map(|r| r.l_rec).sum::<f32>() / hist.iter().filter(|r| r.epoch == 0).count() as f32;
            let last = hist.iter().filter(|r| r.epoch == epochs - 1).map(|r| r.l_rec).sum::<f32>()
                / hist.iter().filter(|r| r.epoch == epochs - 1).count() as f32;
            let t_train = t0.elapsed();

            let model = &out.state.model;
            let reps = evaluation::extract_reps(model, &test_data)?;
            let mi = evaluation::measure_mi(&reps, &cfg.model, &cfg.eval, lambda, &cfg.hash(), cfg.eval.mi_rounds, seed)?;
            let acc_z = evaluation::probe_speaker_accuracy(&ProbeSample::content_frames(&reps), &cfg.eval, seed)?;
            let acc_s = evaluation::probe_speaker_accuracy(&ProbeSample::speaker_vectors(&reps), &cfg.eval, seed)?;
            let pitch = evaluation::pitch_prediction_loss(&ProbeSample::content_frames(&reps), &cfg.eval, seed)?;

            let vocoder = vocoder_by_name("griffin-lim", &cfg.features, cfg.eval.vocoder_iters)?;
            // every test utterance converted to a speaker from the next block,
            // compared with an unrelated utterance of a third speaker
            let (mut conv, mut unrel, mut recon, mut n) = (0.0, 0.0, 0.0, 0);
            let m = test_utts.len();
            for k in 0..m {
                let src = &test_utts[k];
                let tgt = &test_utts[(k + 10) % m];
                let other = &test_utts[(k + 23) % m];
                let wav = vocoder.vocode(&one_shot_convert(model, &cfg, &src.wav, &tgt.wav)?)?;
                let own = vocoder.vocode(&one_shot_convert(model, &cfg, &src.wav, &src.wav)?)?;
                let pcc = |w: &vqmivc::frontend::Waveform| evaluation::f0_pcc(&src.wav, w, &cfg.features).unwrap_or(0.0);
                conv += pcc(&wav);
                unrel += pcc(&other.wav);
                recon += pcc(&own);
                n += 1;
            }
            println!("  pcc reconstruction {:.3}", recon / n as f64);
            println!(
                "seed {seed} λ {lambda:.0e}: rec {first:.1}->{last:.1} ({:.3}) | I_zs {:.3}±{:.3} I_zp {:.3} I_ps {:.3} | acc Z {:.3} s {:.3} | pitch mse {:.3} (var {:.3}) | pcc conv {:.3} unrel {:.3} (n {n}) | train {:.1?}",
                last / first,
                mi.pair("zs").unwrap().mean,
                mi.pair("zs").unwrap().std,
                mi.pair("zp").unwrap().mean,
                mi.pair("ps").unwrap().mean,
                acc_z.value,
                acc_s.value,
                pitch.value,
                pitch.baseline,
                conv / n.max(1) as f64,
                unrel / n.max(1) as f64,
                t_train,
            );
        }
    }
    Ok(())
}
