//! Representation-learning losses: VQ commitment, contrastive predictive
//! coding (InfoNCE over future content frames) and L1 + L2 reconstruction.

use autograd::{Graph, Tensor, Var};
use rand::seq::index;
use rand::Rng;

use crate::{ensure_contract, Result};

/// Mean over content frames of `‖z − sg(ẑ)‖²`; no gradient reaches the codebook.
pub fn vq_loss(g: &mut Graph, z: Var, zq: &Tensor) -> Result<Var> {
    ensure_contract!(g.shape(z) == zq.shape(), "vq_loss shape mismatch: {:?} vs {:?}", g.shape(z), zq.shape());
    let rows = zq.rows();
    let target = g.constant(zq.clone());
    let diff = g.sub(z, target);
    let sq = g.square(diff);
    let total = g.sum(sq);
    Ok(g.scale(total, 1.0 / rows as f32))
}

/// `n` distinct frame indices of an `n_frames`-frame utterance, excluding
/// `positive`, drawn uniformly without replacement. When fewer than `n`
/// frames are eligible the draw falls back to sampling with replacement.
pub fn sample_negatives<R: Rng + ?Sized>(n_frames: usize, positive: usize, n: usize, rng: &mut R) -> Vec<usize> {
    assert!(positive < n_frames && n_frames >= 2, "need an eligible negative frame");
    let eligible = n_frames - 1;
    let shift = |i: usize| if i >= positive { i + 1 } else { i };
    if eligible >= n {
        index::sample(rng, eligible, n).into_iter().map(shift).collect()
    } else {
        log::warn!("utterance has only {eligible} eligible negatives for {n} draws; sampling with replacement");
        (0..n).map(|_| shift(rng.gen_range(0..eligible))).collect()
    }
}

/// Negative frame indices (within each utterance) for every `(k, t, m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeSet {
    pub batch: usize,
    pub frames: usize,
    pub steps: usize,
    pub n: usize,
    idx: Vec<usize>,
}

impl NegativeSet {
    pub fn draw<R: Rng + ?Sized>(batch: usize, frames: usize, steps: usize, n: usize, rng: &mut R) -> Self {
        assert!(frames > steps);
        let horizon = frames - steps;
        let mut idx = Vec::with_capacity(batch * horizon * steps * n);
        for _ in 0..batch {
            for t in 0..horizon {
                for m in 1..=steps {
                    idx.extend(sample_negatives(frames, t + m, n, rng));
                }
            }
        }
        NegativeSet { batch, frames, steps, n, idx }
    }

    /// Builds a set from explicit indices laid out as `[k][t][m-1][j]`.
    pub fn from_indices(batch: usize, frames: usize, steps: usize, n: usize, idx: Vec<usize>) -> Self {
        assert_eq!(idx.len(), batch * (frames - steps) * steps * n);
        NegativeSet { batch, frames, steps, n, idx }
    }

    pub fn get(&self, k: usize, t: usize, m: usize) -> &[usize] {
        let horizon = self.frames - self.steps;
        let base = ((k * horizon + t) * self.steps + (m - 1)) * self.n;
        &self.idx[base..base + self.n]
    }
}

/// Mean of `−log softmax(scores)[0]` over rows: column 0 holds the positive.
pub fn info_nce(g: &mut Graph, scores: Var) -> Var {
    let rows = g.shape(scores).0;
    let ls = g.log_softmax(scores);
    let pos = g.slice_cols(ls, 0, 1);
    let total = g.sum(pos);
    g.scale(total, -1.0 / rows as f32)
}

/// InfoNCE over `M` future steps with bilinear scores `ẑᵀ W_m r_t`; the
/// positive is part of the softmax denominator.
///
/// `zq`: `(K·F) × d_z`, `r`: `(K·F) × d_r`, `proj[m-1]`: `d_r × d_z`.
pub fn cpc_loss(g: &mut Graph, zq: Var, r: Var, proj: &[Var], neg: &NegativeSet) -> Result<Var> {
    let (k, f, steps, n) = (neg.batch, neg.frames, neg.steps, neg.n);
    ensure_contract!(f > steps, "content length {f} must exceed prediction steps {steps}");
    ensure_contract!(proj.len() == steps, "need {steps} projections, got {}", proj.len());
    ensure_contract!(g.shape(zq).0 == k * f && g.shape(r).0 == k * f, "cpc_loss batch layout mismatch");
    let horizon = f - steps;
    let ctx_rows: Vec<Option<usize>> = (0..k).flat_map(|b| (0..horizon).map(move |t| Some(b * f + t))).collect();
    let r_sel = g.gather_rows(r, &ctx_rows);
    let rep: Vec<Option<usize>> = (0..k * horizon).flat_map(|i| std::iter::repeat_n(Some(i), n + 1)).collect();

    let mut per_step = Vec::with_capacity(steps);
    for m in 1..=steps {
        let pred = g.matmul(r_sel, proj[m - 1]);
        let mut cand = Vec::with_capacity(k * horizon * (n + 1));
        for b in 0..k {
            for t in 0..horizon {
                cand.push(Some(b * f + t + m));
                cand.extend(neg.get(b, t, m).iter().map(|&j| Some(b * f + j)));
            }
        }
        let cand = g.gather_rows(zq, &cand);
        let pred_rep = g.gather_rows(pred, &rep);
        let prod = g.mul(cand, pred_rep);
        let scores = g.row_sum(prod);
        let scores = g.reshape(scores, k * horizon, n + 1);
        per_step.push(info_nce(g, scores));
    }
    let stacked = g.concat_rows(&per_step);
    Ok(g.mean(stacked))
}

/// `(1/(K·T)) Σ_t (‖x̂_t − x_t‖₁ + ‖x̂_t − x_t‖₂)` for both decoder outputs, summed.
pub fn rec_loss(g: &mut Graph, pre: Var, post: Var, target: Var) -> Result<Var> {
    ensure_contract!(
        g.shape(pre) == g.shape(target) && g.shape(post) == g.shape(target),
        "rec_loss shape mismatch: {:?}, {:?} vs {:?}",
        g.shape(pre),
        g.shape(post),
        g.shape(target)
    );
    let rows = g.shape(target).0;
    let mut terms = Vec::with_capacity(4);
    for pred in [pre, post] {
        let diff = g.sub(pred, target);
        let a = g.abs(diff);
        terms.push(g.sum(a));
        let norms = g.row_norm(diff);
        terms.push(g.sum(norms));
    }
    let stacked = g.concat_rows(&terms);
    let total = g.sum(stacked);
    Ok(g.scale(total, 1.0 / rows as f32))
}
