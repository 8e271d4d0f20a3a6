//! Variational contrastive log-ratio upper bounds on the mutual information
//! between content, speaker and pitch representations.
//!
//! Each pair `(u, v)` has a Gaussian approximator `Q(u | v)` with separate
//! mean and log-variance networks. An estimate is the mean over `(k, l, t)`
//! of `log Q(u_{k,t} | v_k) − log Q(u_{l,t} | v_k)`; the sums over `l` are
//! expanded into per-dimension first and second moments so cost stays linear
//! in the batch size.

use autograd::nn::{Ctx, Mlp};
use autograd::{Graph, ParamStore, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::{ensure_contract, Result};

const LN_2PI: f32 = 1.837_877_1;

/// Gaussian conditional `N(u; μ(v), diag σ²(v))`.
#[derive(Clone, Debug)]
pub struct Approximator {
    pub mu: Mlp,
    pub logvar: Mlp,
    pub v_dim: usize,
    pub u_dim: usize,
    pub clamp: f32,
}

impl Approximator {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: rand::Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        v_dim: usize,
        u_dim: usize,
        hidden: usize,
        layers: usize,
        clamp: f32,
        rng: &mut R,
    ) -> Self {
        Approximator {
            mu: Mlp::new(store, &format!("{name}.mu"), v_dim, hidden, layers, u_dim, rng),
            logvar: Mlp::new(store, &format!("{name}.logvar"), v_dim, hidden, layers, u_dim, rng),
            v_dim,
            u_dim,
            clamp,
        }
    }

    /// Mean and clamped log-variance for each row of `v`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, v: Var) -> Result<(Var, Var)> {
        ensure_contract!(ctx.g.shape(v).1 == self.v_dim, "approximator expects {}-dim conditioner, got {}", self.v_dim, ctx.g.shape(v).1);
        let mu = self.mu.forward(ctx, v);
        let lv = self.logvar.forward(ctx, v);
        Ok((mu, ctx.g.clamp(lv, -self.clamp, self.clamp)))
    }
}

/// The three pairwise approximators, sharing one parameter store.
#[derive(Clone, Debug)]
pub struct ApproxSet {
    pub params: ParamStore,
    pub zs: Approximator,
    pub ps: Approximator,
    pub zp: Approximator,
}

impl ApproxSet {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let (h, l, c) = (cfg.approx_hidden, cfg.approx_layers, cfg.logvar_clamp);
        let zs = Approximator::new(&mut params, "mi.zs", cfg.spk_dim, cfg.content_dim, h, l, c, &mut rng);
        let ps = Approximator::new(&mut params, "mi.ps", cfg.spk_dim, 1, h, l, c, &mut rng);
        let zp = Approximator::new(&mut params, "mi.zp", 1, cfg.content_dim, h, l, c, &mut rng);
        ApproxSet { params, zs, ps, zp }
    }
}

/// Row-wise `log N(u; μ, diag exp(logvar))`, `rows × 1`.
pub fn gaussian_cond_loglik(g: &mut Graph, u: Var, mu: Var, logvar: Var) -> Result<Var> {
    ensure_contract!(
        g.shape(u) == g.shape(mu) && g.shape(u) == g.shape(logvar),
        "log-density shape mismatch: u {:?}, mu {:?}, logvar {:?}",
        g.shape(u),
        g.shape(mu),
        g.shape(logvar)
    );
    let d = g.shape(u).1;
    let diff = g.sub(u, mu);
    let sq = g.square(diff);
    let neg_lv = g.scale(logvar, -1.0);
    let inv_var = g.exp(neg_lv);
    let maha = g.mul(sq, inv_var);
    let inner = g.add(maha, logvar);
    let per_row = g.row_sum(inner);
    let scaled = g.scale(per_row, -0.5);
    Ok(g.add_scalar(scaled, -0.5 * LN_2PI * d as f32))
}

/// Estimate when each utterance has one conditioner: `u` is `(K·F) × d`
/// (utterance-major), `mu`/`logvar` are `K × d`.
pub fn vclub_per_utterance(g: &mut Graph, u: Var, mu: Var, logvar: Var, frames: usize) -> Result<Var> {
    let (rows, d) = g.shape(u);
    let k = g.shape(mu).0;
    ensure_contract!(rows == k * frames, "expected {k}×{frames} rows, got {rows}");
    ensure_contract!(g.shape(mu) == (k, d) && g.shape(logvar) == (k, d), "conditioner shape mismatch");
    if k < 2 {
        log::warn!("mutual-information estimate needs at least two utterances; returning 0");
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let neg_lv = g.scale(logvar, -1.0);
    let iv = g.exp(neg_lv);
    let owner: Vec<Option<usize>> = (0..k).flat_map(|b| std::iter::repeat_n(Some(b), frames)).collect();
    let mu_rep = g.gather_rows(mu, &owner);
    let iv_rep = g.gather_rows(iv, &owner);
    let diff = g.sub(u, mu_rep);
    let sq = g.square(diff);
    let w = g.mul(sq, iv_rep);
    let matched = g.sum(w);

    let s1 = g.col_sum(u);
    let u2 = g.square(u);
    let s2 = g.col_sum(u2);
    let s2_rep = g.gather_rows(s2, &vec![Some(0); k]);
    let t1 = g.mul(iv, s2_rep);
    let mu_s1 = g.mul_row(mu, s1);
    let t2 = g.mul(iv, mu_s1);
    let mu2 = g.square(mu);
    let t3 = g.mul(iv, mu2);
    let n = (k * frames) as f32;
    let a = g.sum(t1);
    let b = g.sum(t2);
    let c = g.sum(t3);
    let b = g.scale(b, -2.0);
    let c = g.scale(c, n);
    let ab = g.add(a, b);
    let shuffled = g.add(ab, c);
    finish(g, matched, shuffled, k, frames)
}

/// Estimate when each frame has its own conditioner: `u`, `mu` and `logvar`
/// are all `(K·F) × d`; negatives pair frame `t` of utterance `l` with the
/// conditioner of frame `t` of utterance `k`.
pub fn vclub_per_frame(g: &mut Graph, u: Var, mu: Var, logvar: Var, frames: usize) -> Result<Var> {
    let (rows, d) = g.shape(u);
    ensure_contract!(frames > 0 && rows % frames == 0, "rows {rows} not a multiple of {frames}");
    ensure_contract!(g.shape(mu) == (rows, d) && g.shape(logvar) == (rows, d), "conditioner shape mismatch");
    let k = rows / frames;
    if k < 2 {
        log::warn!("mutual-information estimate needs at least two utterances; returning 0");
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let neg_lv = g.scale(logvar, -1.0);
    let iv = g.exp(neg_lv);
    let diff = g.sub(u, mu);
    let sq = g.square(diff);
    let w = g.mul(sq, iv);
    let matched = g.sum(w);

    let time: Vec<usize> = (0..rows).map(|i| i % frames).collect();
    let back: Vec<Option<usize>> = time.iter().map(|&t| Some(t)).collect();
    let s1 = g.group_sum(u, &time, frames);
    let u2 = g.square(u);
    let s2 = g.group_sum(u2, &time, frames);
    let s1r = g.gather_rows(s1, &back);
    let s2r = g.gather_rows(s2, &back);
    let t1 = g.mul(iv, s2r);
    let mu_s1 = g.mul(mu, s1r);
    let t2 = g.mul(iv, mu_s1);
    let mu2 = g.square(mu);
    let t3 = g.mul(iv, mu2);
    let a = g.sum(t1);
    let b = g.sum(t2);
    let c = g.sum(t3);
    let b = g.scale(b, -2.0);
    let c = g.scale(c, k as f32);
    let ab = g.add(a, b);
    let shuffled = g.add(ab, c);
    finish(g, matched, shuffled, k, frames)
}

/// `(−½ K · matched + ½ · shuffled) / (K² F)`; the log-variance terms cancel.
fn finish(g: &mut Graph, matched: Var, shuffled: Var, k: usize, frames: usize) -> Result<Var> {
    let m = g.scale(matched, -0.5 * k as f32);
    let s = g.scale(shuffled, 0.5);
    let total = g.add(m, s);
    Ok(g.scale(total, 1.0 / (k * k * frames) as f32))
}

/// Î(Ẑ, s): content frames `(K·F) × d_z` against speaker embeddings `K × d_s`.
pub fn vclub_zs(ctx: &mut Ctx<'_>, q: &Approximator, zq: Var, spk: Var, frames: usize) -> Result<Var> {
    let (mu, lv) = q.forward(ctx, spk)?;
    vclub_per_utterance(ctx.g, zq, mu, lv, frames)
}

/// Î(p, s): pitch `(K·T) × 1` against speaker embeddings `K × d_s`.
pub fn vclub_ps(ctx: &mut Ctx<'_>, q: &Approximator, pitch: Var, spk: Var, t: usize) -> Result<Var> {
    let (mu, lv) = q.forward(ctx, spk)?;
    vclub_per_utterance(ctx.g, pitch, mu, lv, t)
}

/// Î(Ẑ, p): content frames against the frame-aligned downsampled pitch `(K·F) × 1`.
pub fn vclub_zp(ctx: &mut Ctx<'_>, q: &Approximator, zq: Var, pitch_hat: Var, frames: usize) -> Result<Var> {
    let (mu, lv) = q.forward(ctx, pitch_hat)?;
    vclub_per_frame(ctx.g, zq, mu, lv, frames)
}

/// `L_MI = Î(Ẑ,s) + Î(Ẑ,p) + Î(p,s)`.
pub fn mi_loss(g: &mut Graph, zs: Var, zp: Var, ps: Var) -> Var {
    let a = g.add(zs, zp);
    g.add(a, ps)
}

/// Mean log-likelihood of matched pairs; `v` is row-aligned with `u`.
pub fn ll_loss(ctx: &mut Ctx<'_>, q: &Approximator, u: Var, v: Var) -> Result<Var> {
    ensure_contract!(ctx.g.shape(u).0 == ctx.g.shape(v).0, "ll_loss needs row-aligned pairs");
    let (mu, lv) = q.forward(ctx, v)?;
    let ll = gaussian_cond_loglik(ctx.g, u, mu, lv)?;
    Ok(ctx.g.mean(ll))
}

/// Repeats each of `K` rows `frames` times.
pub fn repeat_rows(g: &mut Graph, v: Var, frames: usize) -> Var {
    let k = g.shape(v).0;
    let idx: Vec<Option<usize>> = (0..k).flat_map(|b| std::iter::repeat_n(Some(b), frames)).collect();
    g.gather_rows(v, &idx)
}

/// Scalar MI estimate with its pair label.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MiEstimates {
    pub zs: f32,
    pub zp: f32,
    pub ps: f32,
}

impl MiEstimates {
    pub fn total(&self) -> f32 {
        self.zs + self.zp + self.ps
    }
}
