use std::collections::BTreeSet;

use autograd::nn::{Ctx, Mlp};
use autograd::{Adam, Graph, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::UtteranceReps;
use crate::config::EvalConfig;
use crate::{Error, Result};

/// One probe input row with the utterance it came from (the split unit).
#[derive(Clone, Debug)]
pub struct ProbeSample {
    pub features: Vec<f32>,
    pub group: String,
    pub label: usize,
    pub target: f32,
}

impl ProbeSample {
    /// Content frames labelled with their speaker.
    pub fn content_frames(reps: &[UtteranceReps]) -> Vec<ProbeSample> {
        let labels = speaker_labels(reps);
        reps.iter()
            .zip(labels)
            .flat_map(|(r, label)| {
                (0..r.codes.rows()).map(move |t| ProbeSample {
                    features: r.codes.row(t).to_vec(),
                    group: r.utterance_id.clone(),
                    label,
                    target: r.pitch_hat[t],
                })
            })
            .collect()
    }

    /// One speaker embedding per utterance.
    pub fn speaker_vectors(reps: &[UtteranceReps]) -> Vec<ProbeSample> {
        let labels = speaker_labels(reps);
        reps.iter()
            .zip(labels)
            .map(|(r, label)| ProbeSample { features: r.spk.data().to_vec(), group: r.utterance_id.clone(), label, target: 0.0 })
            .collect()
    }
}

fn speaker_labels(reps: &[UtteranceReps]) -> Vec<usize> {
    let names: BTreeSet<&str> = reps.iter().map(|r| r.speaker_id.as_str()).collect();
    let names: Vec<&str> = names.into_iter().collect();
    reps.iter().map(|r| names.binary_search(&r.speaker_id.as_str()).unwrap()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// Accuracy for classifiers, mean-square error for the pitch predictor.
    pub value: f64,
    /// Chance accuracy, or the held-out target variance for regression.
    pub baseline: f64,
    pub n_train: usize,
    pub n_test: usize,
}

struct Split {
    train: Vec<usize>,
    test: Vec<usize>,
}

fn split_by_group(samples: &[ProbeSample], fraction: f32, rng: &mut ChaCha8Rng) -> Result<Split> {
    let groups: BTreeSet<&str> = samples.iter().map(|s| s.group.as_str()).collect();
    let mut groups: Vec<&str> = groups.into_iter().collect();
    if groups.len() < 2 {
        return Err(Error::Undefined("probe split needs at least two utterances".into()));
    }
    groups.shuffle(rng);
    let n_train = ((groups.len() as f32 * fraction).round() as usize).clamp(1, groups.len() - 1);
    let train_groups: BTreeSet<&str> = groups[..n_train].iter().copied().collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, s) in samples.iter().enumerate() {
        if train_groups.contains(s.group.as_str()) {
            train.push(i);
        } else {
            test.push(i);
        }
    }
    Ok(Split { train, test })
}

/// Standardizes with training-set statistics.
fn standardize(samples: &[ProbeSample], split: &Split) -> Tensor {
    let d = samples[0].features.len();
    let n = split.train.len() as f64;
    let mut mean = vec![0.0f64; d];
    let mut var = vec![0.0f64; d];
    for &i in &split.train {
        for (m, &x) in mean.iter_mut().zip(&samples[i].features) {
            *m += x as f64 / n;
        }
    }
    for &i in &split.train {
        for ((v, &x), m) in var.iter_mut().zip(&samples[i].features).zip(&mean) {
            *v += (x as f64 - m).powi(2) / n;
        }
    }
    let mut data = Vec::with_capacity(samples.len() * d);
    for s in samples {
        for ((&x, m), v) in s.features.iter().zip(&mean).zip(&var) {
            data.push(((x as f64 - m) / v.sqrt().max(1e-6)) as f32);
        }
    }
    Tensor::from_vec(samples.len(), d, data)
}

enum Task {
    Classify(usize),
    Regress,
}

fn train_and_score(samples: &[ProbeSample], task: Task, cfg: &EvalConfig, seed: u64) -> Result<ProbeResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split = split_by_group(samples, cfg.probe_train_fraction, &mut rng)?;
    let x = standardize(samples, &split);
    let out_dim = match task {
        Task::Classify(n) => n,
        Task::Regress => 1,
    };
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "probe", x.cols(), cfg.probe_hidden, cfg.probe_layers, out_dim, &mut rng);
    let mut opt = Adam::new(&store, 0.9, 0.999, 1e-8);
    let gather = |idx: &[usize]| -> (Tensor, Tensor) {
        let mut xs = Vec::with_capacity(idx.len() * x.cols());
        let mut ys = Vec::with_capacity(idx.len() * out_dim);
        for &i in idx {
            xs.extend_from_slice(x.row(i));
            match task {
                Task::Classify(n) => ys.extend((0..n).map(|c| if c == samples[i].label { 1.0 } else { 0.0 })),
                Task::Regress => ys.push(samples[i].target),
            }
        }
        (Tensor::from_vec(idx.len(), x.cols(), xs), Tensor::from_vec(idx.len(), out_dim, ys))
    };
    let mut order = split.train.clone();
    for _ in 0..cfg.probe_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.probe_batch.max(1)) {
            let (xb, yb) = gather(chunk);
            let mut g = Graph::new();
            let loss = {
                let mut ctx = Ctx::new(&mut g, &store);
                let xv = ctx.g.constant(xb);
                let yv = ctx.g.constant(yb);
                let out = mlp.forward(&mut ctx, xv);
                match task {
                    Task::Classify(_) => {
                        let lp = ctx.g.log_softmax(out);
                        let picked = ctx.g.mul(lp, yv);
                        let s = ctx.g.sum(picked);
                        ctx.g.scale(s, -1.0 / chunk.len() as f32)
                    }
                    Task::Regress => {
                        let d = ctx.g.sub(out, yv);
                        let sq = ctx.g.square(d);
                        ctx.g.mean(sq)
                    }
                }
            };
            if !g.value(loss).is_finite() {
                return Err(Error::Numeric("probe training diverged".into()));
            }
            let grads = g.backward(loss).into_param_grads();
            opt.step(&mut store, &grads, cfg.probe_lr);
        }
    }
    let (xt, yt) = gather(&split.test);
    let mut g = Graph::new();
    let pred = {
        let mut ctx = Ctx::frozen(&mut g, &store);
        let xv = ctx.g.constant(xt);
        let out = mlp.forward(&mut ctx, xv);
        ctx.g.value(out).clone()
    };
    let n_test = split.test.len();
    let (value, baseline) = match task {
        Task::Classify(n) => {
            let mut correct = 0usize;
            for (r, &i) in split.test.iter().enumerate() {
                let row = pred.row(r);
                let arg = (0..n).fold(0, |best, c| if row[c] > row[best] { c } else { best });
                correct += usize::from(arg == samples[i].label);
            }
            (correct as f64 / n_test as f64, 1.0 / n as f64)
        }
        Task::Regress => {
            let targets = yt.data();
            let mse = pred.data().iter().zip(targets).map(|(p, y)| ((p - y) as f64).powi(2)).sum::<f64>() / n_test as f64;
            let mean = targets.iter().map(|&y| y as f64).sum::<f64>() / n_test as f64;
            let var = targets.iter().map(|&y| (y as f64 - mean).powi(2)).sum::<f64>() / n_test as f64;
            (mse, var)
        }
    };
    Ok(ProbeResult { value, baseline, n_train: split.train.len(), n_test })
}

/// Held-out accuracy of an MLP speaker classifier trained on frozen inputs.
pub fn probe_speaker_accuracy(samples: &[ProbeSample], cfg: &EvalConfig, seed: u64) -> Result<ProbeResult> {
    if samples.is_empty() {
        return Err(Error::Undefined("no probe samples".into()));
    }
    let n_classes = samples.iter().map(|s| s.label).max().unwrap() + 1;
    let distinct: BTreeSet<usize> = samples.iter().map(|s| s.label).collect();
    if distinct.len() < 2 {
        return Err(Error::Undefined("speaker probe needs at least two speakers".into()));
    }
    train_and_score(samples, Task::Classify(n_classes), cfg, seed)
}

/// Held-out mean-square error of an MLP predicting each sample's `target`.
pub fn pitch_prediction_loss(samples: &[ProbeSample], cfg: &EvalConfig, seed: u64) -> Result<ProbeResult> {
    if samples.is_empty() {
        return Err(Error::Undefined("no probe samples".into()));
    }
    train_and_score(samples, Task::Regress, cfg, seed)
}
