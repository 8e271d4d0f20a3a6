//! Independent reference computations used across test targets. Everything
//! here is evaluated directly from the definitions in f64.
#![allow(dead_code)]

use autograd::Tensor;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).iter().map(|&x| x as f64).collect()).collect()
}

/// `log N(u; μ, diag exp(lv))`.
pub fn log_gauss(u: &[f64], mu: &[f64], lv: &[f64]) -> f64 {
    u.iter().zip(mu).zip(lv).map(|((&x, &m), &l)| -0.5 * (LN_2PI + l) - (x - m).powi(2) / (2.0 * l.exp())).sum()
}

/// Triple loop over `(k, l, t)` with one conditioner per utterance.
pub fn vclub_per_utterance(u: &[Vec<f64>], mu: &[Vec<f64>], lv: &[Vec<f64>], k: usize, f: usize) -> f64 {
    let mut total = 0.0;
    for a in 0..k {
        for b in 0..k {
            for t in 0..f {
                total += log_gauss(&u[a * f + t], &mu[a], &lv[a]) - log_gauss(&u[b * f + t], &mu[a], &lv[a]);
            }
        }
    }
    total / (k * k * f) as f64
}

/// Triple loop with a conditioner per frame: frame `t` of utterance `l` is
/// scored under the conditioner of frame `t` of utterance `k`.
pub fn vclub_per_frame(u: &[Vec<f64>], mu: &[Vec<f64>], lv: &[Vec<f64>], k: usize, f: usize) -> f64 {
    let mut total = 0.0;
    for a in 0..k {
        for b in 0..k {
            for t in 0..f {
                let c = a * f + t;
                total += log_gauss(&u[c], &mu[c], &lv[c]) - log_gauss(&u[b * f + t], &mu[c], &lv[c]);
            }
        }
    }
    total / (k * k * f) as f64
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Direct InfoNCE: `negs(k, t, m)` lists negative frame indices.
pub fn info_nce_direct(
    zq: &[Vec<f64>],
    r: &[Vec<f64>],
    w: &[Vec<Vec<f64>>],
    k: usize,
    f: usize,
    negs: impl Fn(usize, usize, usize) -> Vec<usize>,
) -> f64 {
    let m_steps = w.len();
    let horizon = f - m_steps;
    let mut total = 0.0;
    for b in 0..k {
        for t in 0..horizon {
            let rt = &r[b * f + t];
            for m in 1..=m_steps {
                // W_m r_t as a d_z vector; w[m-1] is d_r × d_z
                let pred: Vec<f64> = (0..zq[0].len()).map(|j| (0..rt.len()).map(|i| w[m - 1][i][j] * rt[i]).sum()).collect();
                let pos = dot(&zq[b * f + t + m], &pred);
                let mut denom = pos.exp();
                for j in negs(b, t, m) {
                    denom += dot(&zq[b * f + j], &pred).exp();
                }
                total += -(pos.exp() / denom).ln();
            }
        }
    }
    total / (k * horizon * m_steps) as f64
}

/// Full-matrix Levenshtein distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

/// Pearson correlation by the two-pass textbook formula.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// `n` jointly Gaussian scalar pairs with correlation `rho`, as `(u, v)`
/// column tensors.
pub fn gaussian_pairs(rho: f32, n: usize, seed: u64) -> (Tensor, Tensor) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let v = Tensor::randn(n, 1, 1.0, &mut rng);
    let e = Tensor::randn(n, 1, 1.0, &mut rng);
    let s = (1.0 - rho * rho).sqrt();
    let u = v.zip_map(&e, |a, b| rho * a + s * b);
    (u, v)
}

/// vCLUB estimate on held-out pairs after fitting `Q(u | v)` on training
/// pairs: each pair is one single-frame "utterance".
pub fn trained_vclub(rho: f32, hidden: usize, steps: usize, seed: u64) -> f64 {
    use autograd::nn::Ctx;
    use autograd::{Graph, ParamStore};
    use rand::SeedableRng;
    let (u, v) = gaussian_pairs(rho, 2_000, seed);
    let (ut, vt) = gaussian_pairs(rho, 10_000, seed + 1);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let q = vqmivc::mi::Approximator::new(&mut store, "q", 1, 1, hidden, 4, 10.0, &mut rng);
    vqmivc::evaluation::fit_approximator(&q, &mut store, &u, &v, steps, 1e-3).unwrap();
    let mut g = Graph::new();
    let mut ctx = Ctx::frozen(&mut g, &store);
    let uv = ctx.g.constant(ut);
    let vv = ctx.g.constant(vt);
    let (mu, lv) = q.forward(&mut ctx, vv).unwrap();
    let est = vqmivc::mi::vclub_per_utterance(ctx.g, uv, mu, lv, 1).unwrap();
    g.value(est).data()[0] as f64
}
