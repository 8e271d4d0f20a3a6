//! Trains the desk preset on a generated three-speaker corpus and prints
//! per-epoch losses and timings.
//!
//! cargo run --release -p vqmivc --example toy_train -- [epochs] [lambda] [seed]

use std::time::Instant;

use vqmivc::synth::{self, SynthSpec};
use vqmivc::trainer::{StepRecord, TrainState};
use vqmivc::Config;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map_or(Ok(20), |s| s.parse())?;
    let lambda: f32 = args.get(2).map_or(Ok(1e-2), |s| s.parse())?;
    let seed: u64 = args.get(3).map_or(Ok(1), |s| s.parse())?;

    let mut cfg = Config::desk();
    cfg.train.epochs = epochs;
    cfg.train.lambda_mi = lambda;
    cfg.train.seed = seed;

    let t0 = Instant::now();
    let utts = synth::generate(&SynthSpec { n_speakers: 3, utterances_per_speaker: 20, seconds: 1.6, seed: 0 });
    let data = synth::to_features(&utts, &cfg.features)?;
    println!("corpus: {} utterances in {:.2?}", data.len(), t0.elapsed());

    let mut state = TrainState::new(&cfg, 80);
    state.model.norm = vqmivc::model::MelNorm::fit(data.iter().map(|u| &u.mel.frames));
    println!("parameters: {}", state.model.num_parameters());
    let t1 = Instant::now();
    for _ in 0..epochs {
        let te = Instant::now();
        let mut recs: Vec<StepRecord> = Vec::new();
        let dead = state.run_epoch(&data, |r| {
            recs.push(r.clone());
            Ok(())
        })?;
        let n = recs.len() as f32;
        let mean = |f: fn(&StepRecord) -> f32| recs.iter().map(f).sum::<f32>() / n;
        println!(
            "epoch {:3} lr {:.1e} rec {:7.3} cpc {:.3} vq {:.4} mi {:7.3} zs {:7.3} zp {:7.3} ps {:7.3} ll {:8.2} dead {} ({:.2?}, {} steps)",
            state.epoch,
            recs[0].lr,
            mean(|r| r.l_rec),
            mean(|r| r.l_cpc),
            mean(|r| r.l_vq),
            mean(|r| r.l_mi),
            mean(|r| r.i_zs),
            mean(|r| r.i_zp),
            mean(|r| r.i_ps),
            mean(|r| r.l_ll),
            dead,
            te.elapsed(),
            recs.len()
        );
    }
    println!("training: {:.2?}", t1.elapsed());
    Ok(())
}
