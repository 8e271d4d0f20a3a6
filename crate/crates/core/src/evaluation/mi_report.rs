use autograd::nn::Ctx;
use autograd::{clip_grad_norm, Adam, Graph, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mean_std, UtteranceReps};
use crate::config::{EvalConfig, ModelConfig};
use crate::mi::{self, ApproxSet, Approximator};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub pair: String,
    pub mean: f64,
    pub std: f64,
    pub rounds: usize,
    pub n_utterances: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiReport {
    pub lambda_mi: f32,
    pub config_hash: String,
    pub pairs: Vec<PairReport>,
}

impl MiReport {
    pub fn pair(&self, name: &str) -> Option<&PairReport> {
        self.pairs.iter().find(|p| p.pair == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda_mi,pair,mean,std,rounds,n_utterances\n");
        for p in &self.pairs {
            s.push_str(&format!("{},{},{},{},{},{}\n", self.lambda_mi, p.pair, p.mean, p.std, p.rounds, p.n_utterances));
        }
        s
    }
}

/// Maximizes the mean matched log-likelihood of `q` on row-aligned `(u, v)`
/// with full-batch Adam. Returns the final log-likelihood.
pub fn fit_approximator(q: &Approximator, store: &mut ParamStore, u: &Tensor, v: &Tensor, steps: usize, lr: f32) -> Result<f32> {
    let mut opt = Adam::new(store, 0.9, 0.999, 1e-8);
    let mut last = f32::NAN;
    for _ in 0..steps {
        let mut g = Graph::new();
        let uv = g.constant(u.clone());
        let vv = g.constant(v.clone());
        let ll = {
            let mut ctx = Ctx::new(&mut g, store);
            mi::ll_loss(&mut ctx, q, uv, vv)?
        };
        last = g.value(ll).data()[0];
        if !last.is_finite() {
            return Err(Error::Numeric("approximator fit diverged".into()));
        }
        let loss = g.scale(ll, -1.0);
        let mut grads = g.backward(loss).into_param_grads();
        clip_grad_norm(&mut grads, 5.0);
        opt.step(store, &grads, lr);
    }
    Ok(last)
}

struct Stacked {
    codes: Tensor,
    spk: Tensor,
    spk_f: Tensor,
    pitch: Tensor,
    pitch_hat: Tensor,
    frames: usize,
}

fn stack(reps: &[&UtteranceReps], frames: usize) -> Stacked {
    let codes: Vec<Tensor> = reps.iter().map(|r| r.codes.slice_rows(0, frames)).collect();
    let codes = Tensor::vstack(&codes.iter().collect::<Vec<_>>());
    let spk = Tensor::vstack(&reps.iter().map(|r| &r.spk).collect::<Vec<_>>());
    let mut spk_f = Vec::with_capacity(reps.len() * frames * spk.cols());
    for r in reps {
        for _ in 0..frames {
            spk_f.extend_from_slice(r.spk.data());
        }
    }
    let pitch: Vec<f32> = reps.iter().flat_map(|r| r.pitch[..2 * frames].iter().copied()).collect();
    let pitch_hat: Vec<f32> = reps.iter().flat_map(|r| r.pitch_hat[..frames].iter().copied()).collect();
    Stacked {
        codes,
        spk_f: Tensor::from_vec(reps.len() * frames, spk.cols(), spk_f),
        spk,
        pitch: Tensor::column_vector(pitch),
        pitch_hat: Tensor::column_vector(pitch_hat),
        frames,
    }
}

fn spk_per_pitch_frame(s: &Stacked) -> Tensor {
    let t = 2 * s.frames;
    let mut data = Vec::with_capacity(s.spk.rows() * t * s.spk.cols());
    for k in 0..s.spk.rows() {
        for _ in 0..t {
            data.extend_from_slice(s.spk.row(k));
        }
    }
    Tensor::from_vec(s.spk.rows() * t, s.spk.cols(), data)
}

/// Per round: fresh approximators fitted on a random half of the
/// utterances, estimates evaluated on the other half. All utterances are
/// cut to the shortest content length so frames align across utterances.
pub fn measure_mi(
    reps: &[UtteranceReps],
    model_cfg: &ModelConfig,
    eval: &EvalConfig,
    lambda_mi: f32,
    config_hash: &str,
    rounds: usize,
    seed: u64,
) -> Result<MiReport> {
    if reps.len() < 4 {
        return Err(Error::Config(format!("MI measurement needs at least 4 utterances, got {}", reps.len())));
    }
    if rounds < 2 {
        return Err(Error::Config("MI measurement needs at least 2 rounds".into()));
    }
    let frames = reps.iter().map(|r| r.codes.rows()).min().unwrap_or(0);
    if frames == 0 {
        return Err(Error::Config("empty representation".into()));
    }
    let mut values = [Vec::new(), Vec::new(), Vec::new()];
    for round in 0..rounds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(round as u64);
        let mut order: Vec<&UtteranceReps> = reps.iter().collect();
        order.shuffle(&mut rng);
        let half = order.len() / 2;
        let fit = stack(&order[..half], frames);
        let test = stack(&order[half..], frames);

        let mut q = ApproxSet::new(model_cfg, seed ^ (0xA5A5 + round as u64));
        let steps = eval.mi_fit_steps;
        let lr = eval.mi_fit_lr;
        let (zs, ps, zp) = (q.zs.clone(), q.ps.clone(), q.zp.clone());
        fit_approximator(&zs, &mut q.params, &fit.codes, &fit.spk_f, steps, lr)?;
        fit_approximator(&ps, &mut q.params, &fit.pitch, &spk_per_pitch_frame(&fit), steps, lr)?;
        fit_approximator(&zp, &mut q.params, &fit.codes, &fit.pitch_hat, steps, lr)?;

        let mut g = Graph::new();
        let mut ctx = Ctx::frozen(&mut g, &q.params);
        let c = ctx.g.constant(test.codes.clone());
        let s = ctx.g.constant(test.spk.clone());
        let p = ctx.g.constant(test.pitch.clone());
        let ph = ctx.g.constant(test.pitch_hat.clone());
        let e_zs = mi::vclub_zs(&mut ctx, &zs, c, s, frames)?;
        let e_zp = mi::vclub_zp(&mut ctx, &zp, c, ph, frames)?;
        let e_ps = mi::vclub_ps(&mut ctx, &ps, p, s, 2 * frames)?;
        for (slot, v) in values.iter_mut().zip([e_zs, e_zp, e_ps]) {
            slot.push(g.value(v).data()[0] as f64);
        }
    }
    let pairs = ["zs", "zp", "ps"]
        .iter()
        .zip(values)
        .map(|(name, v)| {
            let (mean, std) = mean_std(&v);
            PairReport { pair: name.to_string(), mean, std, rounds, n_utterances: reps.len(), values: v }
        })
        .collect();
    Ok(MiReport { lambda_mi, config_hash: config_hash.into(), pairs })
}
