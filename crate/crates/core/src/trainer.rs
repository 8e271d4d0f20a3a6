//! Alternating optimization: each step first fits the three variational
//! approximators on detached representations, then updates the conversion
//! networks against the total loss with the approximators frozen, then moves
//! the codebook.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use autograd::nn::Ctx;
use autograd::{clip_grad_norm, Adam, Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{Config, TrainConfig};
use crate::frontend::{random_crop, TrainingSegment, UtteranceFeatures};
use crate::mi::{self, ApproxSet, MiEstimates};
use crate::model::{downsample_pitch, MelNorm, VcModel};
use crate::objectives::{cpc_loss, rec_loss, vq_loss, NegativeSet};
use crate::{Error, Result};

/// Learning rate for a 0-based epoch: linear warmup from the floor, a
/// plateau, then halving every `decay_every` epochs counted from `decay_start`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f32 {
    let lr = if epoch < cfg.warmup_epochs {
        cfg.floor_lr as f64 + (cfg.base_lr - cfg.floor_lr) as f64 * epoch as f64 / cfg.warmup_epochs as f64
    } else if epoch < cfg.decay_start {
        cfg.base_lr as f64
    } else {
        let halvings = (epoch - cfg.decay_start) / cfg.decay_every;
        cfg.base_lr as f64 * 0.5f64.powi(halvings as i32)
    };
    (lr as f32).max(cfg.floor_lr)
}

/// One JSON-lines training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f32,
    #[serde(rename = "L_VQ")]
    pub l_vq: f32,
    #[serde(rename = "L_CPC")]
    pub l_cpc: f32,
    #[serde(rename = "L_REC")]
    pub l_rec: f32,
    #[serde(rename = "L_MI")]
    pub l_mi: f32,
    #[serde(rename = "Î_zs")]
    pub i_zs: f32,
    #[serde(rename = "Î_zp")]
    pub i_zp: f32,
    #[serde(rename = "Î_ps")]
    pub i_ps: f32,
    /// Summed approximator log-likelihood from the first phase.
    #[serde(rename = "L_LL")]
    pub l_ll: f32,
}

/// Stacked training crops.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `(B·T) × n_mels`, normalized.
    pub mel: Tensor,
    /// `(B·T) × 1`.
    pub pitch: Tensor,
    /// `(B·T/2) × 1`.
    pub pitch_hat: Tensor,
    pub size: usize,
    pub frames: usize,
}

impl Batch {
    pub fn from_segments(segments: &[TrainingSegment], norm: &MelNorm) -> Result<Batch> {
        if segments.len() < 2 {
            return Err(Error::Contract(format!("a batch needs at least 2 segments, got {}", segments.len())));
        }
        let t = segments[0].mel.rows();
        if t % 2 != 0 || segments.iter().any(|s| s.mel.rows() != t || s.pitch.len() != t) {
            return Err(Error::Contract("segments must share one even length".into()));
        }
        let mels: Vec<&Tensor> = segments.iter().map(|s| &s.mel).collect();
        let mel = norm.apply(&Tensor::vstack(&mels));
        let p: Vec<f32> = segments.iter().flat_map(|s| s.pitch.values.iter().copied()).collect();
        let ph = downsample_pitch(&p);
        Ok(Batch { mel, pitch: Tensor::column_vector(p), pitch_hat: Tensor::column_vector(ph), size: segments.len(), frames: t })
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: Config,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub model: VcModel,
    pub approx: ApproxSet,
    pub vc_opt: Adam,
    pub mi_opt: Adam,
    pub rng: ChaCha8Rng,
    pub history: Vec<StepRecord>,
}

struct EncodedBatch {
    zq: Tensor,
    spk: Tensor,
}

fn scalar(g: &Graph, v: Var) -> f32 {
    g.value(v).data()[0]
}

impl TrainState {
    pub fn new(config: &Config, n_mels: usize) -> Self {
        let seed = config.train.seed;
        let model = VcModel::new(&config.model, n_mels, seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x11);
        let approx = ApproxSet::new(&config.model, seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x22);
        let t = &config.train;
        let vc_opt = Adam::new(&model.params, t.adam_beta1, t.adam_beta2, t.adam_eps);
        let mi_opt = Adam::new(&approx.params, t.adam_beta1, t.adam_beta2, t.adam_eps);
        TrainState {
            config: config.clone(),
            epoch: 0,
            step: 0,
            model,
            approx,
            vc_opt,
            mi_opt,
            rng: ChaCha8Rng::seed_from_u64(seed),
            history: Vec::new(),
        }
    }

    fn encode_detached(&self, batch: &Batch) -> EncodedBatch {
        let mut g = Graph::new();
        let mut ctx = Ctx::frozen(&mut g, &self.model.params);
        let x = ctx.g.constant(batch.mel.clone());
        let fwd = self.model.encode(&mut ctx, x, batch.frames);
        EncodedBatch { zq: fwd.codes.vectors, spk: g.value(fwd.spk).clone() }
    }

    /// Phase one: ascend the matched log-likelihood of all three
    /// approximators on encoder outputs computed without gradient.
    pub fn approximator_step(&mut self, batch: &Batch) -> Result<f32> {
        let enc = self.encode_detached(batch);
        let (t, f) = (batch.frames, batch.frames / 2);
        let mut g = Graph::new();
        let zq = g.constant(enc.zq);
        let spk = g.constant(enc.spk);
        let p = g.constant(batch.pitch.clone());
        let ph = g.constant(batch.pitch_hat.clone());
        let s_f = mi::repeat_rows(&mut g, spk, f);
        let s_t = mi::repeat_rows(&mut g, spk, t);
        let ll = {
            let mut ctx = Ctx::new(&mut g, &self.approx.params);
            let a = mi::ll_loss(&mut ctx, &self.approx.zs, zq, s_f)?;
            let b = mi::ll_loss(&mut ctx, &self.approx.ps, p, s_t)?;
            let c = mi::ll_loss(&mut ctx, &self.approx.zp, zq, ph)?;
            let ab = ctx.g.add(a, b);
            ctx.g.add(ab, c)
        };
        let value = scalar(&g, ll);
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite approximator log-likelihood at step {}", self.step)));
        }
        let loss = g.scale(ll, -1.0);
        let mut grads = g.backward(loss).into_param_grads();
        clip_grad_norm(&mut grads, self.config.train.grad_clip);
        self.mi_opt.step(&mut self.approx.params, &grads, self.config.train.approx_lr);
        Ok(value)
    }

    /// Phase two and three: descend the conversion loss with frozen
    /// approximators, then update the codebook. Returns
    /// `(L_VQ, L_CPC, L_REC, L_MI, estimates)`.
    pub fn vc_step(&mut self, batch: &Batch, lr: f32) -> Result<(f32, f32, f32, f32, MiEstimates)> {
        let cfg = &self.config;
        let (t, f) = (batch.frames, batch.frames / 2);
        let lambda = cfg.train.lambda_mi;
        let neg = NegativeSet::draw(batch.size, f, cfg.model.cpc_steps, cfg.model.cpc_negatives, &mut self.rng);

        let mut g = Graph::new();
        let (fwd, pre, post, x, proj, r) = {
            let mut ctx = Ctx::new(&mut g, &self.model.params);
            let x = ctx.g.constant(batch.mel.clone());
            let p = ctx.g.constant(batch.pitch.clone());
            let fwd = self.model.encode(&mut ctx, x, t);
            let r = self.model.net.gnet.forward(&mut ctx, fwd.zq, f);
            let proj: Vec<Var> = self.model.net.cpc_proj.iter().map(|&id| ctx.p(id)).collect();
            let (pre, post) = self.model.net.decoder.forward(&mut ctx, fwd.zq, fwd.spk, p, f);
            (fwd, pre, post, x, proj, r)
        };
        let l_vq = vq_loss(&mut g, fwd.z, &fwd.codes.vectors)?;
        let l_cpc = cpc_loss(&mut g, fwd.zq, r, &proj, &neg)?;
        let l_rec = rec_loss(&mut g, pre, post, x)?;

        // With λ = 0 the estimates are measurement only and see detached inputs.
        let (zq_mi, spk_mi) = if lambda > 0.0 { (fwd.zq, fwd.spk) } else { (g.detach(fwd.zq), g.detach(fwd.spk)) };
        let (i_zs, i_ps, i_zp) = {
            let mut actx = Ctx::frozen(&mut g, &self.approx.params);
            let p = actx.g.constant(batch.pitch.clone());
            let ph = actx.g.constant(batch.pitch_hat.clone());
            (
                mi::vclub_zs(&mut actx, &self.approx.zs, zq_mi, spk_mi, f)?,
                mi::vclub_ps(&mut actx, &self.approx.ps, p, spk_mi, t)?,
                mi::vclub_zp(&mut actx, &self.approx.zp, zq_mi, ph, f)?,
            )
        };
        let l_mi = mi::mi_loss(&mut g, i_zs, i_zp, i_ps);
        let a = g.add(l_vq, l_cpc);
        let mut total = g.add(a, l_rec);
        if lambda > 0.0 {
            let w = g.scale(l_mi, lambda);
            total = g.add(total, w);
        }
        let values = (scalar(&g, l_vq), scalar(&g, l_cpc), scalar(&g, l_rec), scalar(&g, l_mi));
        let est = MiEstimates { zs: scalar(&g, i_zs), zp: scalar(&g, i_zp), ps: scalar(&g, i_ps) };
        if !scalar(&g, total).is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at step {}: L_VQ={} L_CPC={} L_REC={} L_MI={}",
                self.step, values.0, values.1, values.2, values.3
            )));
        }
        let mut grads = g.backward(total).into_param_grads();
        clip_grad_norm(&mut grads, cfg.train.grad_clip);
        self.vc_opt.step(&mut self.model.params, &grads, lr);
        let z = g.value(fwd.z).clone();
        self.model.codebook.ema_update(&z, &fwd.codes.indices);
        if !self.model.all_finite() {
            return Err(Error::Numeric(format!("non-finite parameters after step {}", self.step)));
        }
        Ok((values.0, values.1, values.2, values.3, est))
    }

    pub fn train_step(&mut self, batch: &Batch) -> Result<StepRecord> {
        let lr = lr_schedule(self.epoch, &self.config.train);
        let l_ll = self.approximator_step(batch)?;
        let (l_vq, l_cpc, l_rec, l_mi, est) = self.vc_step(batch, lr)?;
        self.step += 1;
        let rec =
            StepRecord { step: self.step, epoch: self.epoch, lr, l_vq, l_cpc, l_rec, l_mi, i_zs: est.zs, i_zp: est.zp, i_ps: est.ps, l_ll };
        self.history.push(rec.clone());
        Ok(rec)
    }

    /// Random crops of the given utterances, seeded from the state RNG.
    pub fn crop_batch(&mut self, utts: &[&UtteranceFeatures]) -> Vec<TrainingSegment> {
        let len = self.config.features.segment_len;
        utts.iter()
            .map(|u| {
                let seed: u64 = self.rng.gen();
                let (mel, pitch, offset) = random_crop(&u.mel, &u.pitch, len, seed);
                TrainingSegment { mel, pitch, utterance_id: u.utterance_id.clone(), speaker_id: u.speaker_id.clone(), offset }
            })
            .collect()
    }

    /// One pass over the dataset with a fresh crop of every utterance.
    /// Returns the number of codes no frame was assigned to.
    pub fn run_epoch(&mut self, data: &[UtteranceFeatures], mut on_step: impl FnMut(&StepRecord) -> Result<()>) -> Result<usize> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        for chunk in order.chunks(self.config.train.batch_size) {
            if chunk.len() < 2 {
                log::debug!("dropping trailing batch of {}", chunk.len());
                continue;
            }
            let utts: Vec<&UtteranceFeatures> = chunk.iter().map(|&i| &data[i]).collect();
            let segments = self.crop_batch(&utts);
            let batch = Batch::from_segments(&segments, &self.model.norm)?;
            let rec = self.train_step(&batch)?;
            on_step(&rec)?;
        }
        let dead = self.model.codebook.dead_codes();
        if dead > 0 {
            log::info!("epoch {}: {dead} of {} codes unused", self.epoch, self.model.codebook.size());
        }
        self.model.codebook.reset_usage();
        self.epoch += 1;
        Ok(dead)
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Where checkpoints, the log and the config snapshot go.
    pub out_dir: Option<PathBuf>,
    /// Continue from the latest checkpoint in `out_dir`.
    pub resume: bool,
    /// Stop after this many completed epochs instead of `config.train.epochs`.
    pub stop_after: Option<usize>,
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub checkpoints: Vec<PathBuf>,
}

pub const LOG_FILE: &str = "train_log.jsonl";

fn open_log(out: &Path, history: &[StepRecord]) -> Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(out.join(LOG_FILE))?);
    for rec in history {
        writeln!(w, "{}", serde_json::to_string(rec)?)?;
    }
    w.flush()?;
    Ok(w)
}

/// Runs the configured number of epochs over `data`.
pub fn train(config: &Config, data: &[UtteranceFeatures], opts: &TrainOptions) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    if data.len() < 2 {
        return Err(Error::Config("training needs at least two utterances".into()));
    }
    let n_mels = data[0].mel.n_mels();
    let mut state = match (&opts.out_dir, opts.resume) {
        (Some(dir), true) => match checkpoint::latest(dir)? {
            Some(path) => {
                let st = checkpoint::load_state(&path)?;
                if st.config.hash() != config.hash() {
                    log::warn!("resuming with a configuration that differs from the checkpoint's");
                }
                log::info!("resuming from {} at epoch {}", path.display(), st.epoch);
                st
            }
            None => {
                log::warn!("no checkpoint found in {}; starting fresh", dir.display());
                fresh_state(config, n_mels, data)
            }
        },
        _ => fresh_state(config, n_mels, data),
    };
    state.config.train.epochs = config.train.epochs;

    let mut log_writer = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.toml"), config.to_toml_string())?;
            fs::write(dir.join("config.hash"), config.hash())?;
            Some(open_log(dir, &state.history)?)
        }
        None => None,
    };
    let mut checkpoints = Vec::new();
    let end = opts.stop_after.unwrap_or(config.train.epochs).min(config.train.epochs);
    while state.epoch < end {
        state.run_epoch(data, |rec| {
            if let Some(w) = log_writer.as_mut() {
                writeln!(w, "{}", serde_json::to_string(rec)?)?;
            }
            Ok(())
        })?;
        if let Some(w) = log_writer.as_mut() {
            w.flush()?;
        }
        let last = state.history.last();
        log::info!(
            "epoch {} done: L_REC {:.3} L_CPC {:.3} L_VQ {:.4} L_MI {:.3}",
            state.epoch,
            last.map_or(f32::NAN, |r| r.l_rec),
            last.map_or(f32::NAN, |r| r.l_cpc),
            last.map_or(f32::NAN, |r| r.l_vq),
            last.map_or(f32::NAN, |r| r.l_mi)
        );
        let every = config.train.checkpoint_every.max(1);
        if let Some(dir) = &opts.out_dir {
            if state.epoch % every == 0 || state.epoch == config.train.epochs {
                checkpoints.push(checkpoint::save_state(&state, dir)?);
            }
        }
    }
    Ok(TrainOutcome { state, checkpoints })
}

fn fresh_state(config: &Config, n_mels: usize, data: &[UtteranceFeatures]) -> TrainState {
    let mut st = TrainState::new(config, n_mels);
    st.model.norm = MelNorm::fit(data.iter().map(|u| &u.mel.frames));
    st
}

/// Reads a JSON-lines training log.
pub fn read_log(path: &Path) -> Result<Vec<StepRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}
