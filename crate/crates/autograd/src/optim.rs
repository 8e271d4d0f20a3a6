use crate::params::{ParamId, ParamStore};
use crate::Tensor;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, beta1: f32, beta2: f32, eps: f32) -> Self {
        let zeros = |t: &Tensor| Tensor::zeros(t.rows(), t.cols());
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: store.iter().map(|(_, _, t)| zeros(t)).collect(),
            v: store.iter().map(|(_, _, t)| zeros(t)).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient are left untouched
    /// (their moments are not decayed either).
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f32) {
        self.step += 1;
        let bc1 = 1.0 - (self.beta1 as f64).powi(self.step as i32);
        let bc2 = 1.0 - (self.beta2 as f64).powi(self.step as i32);
        let step_size = (lr as f64 / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        for (id, g) in grads {
            let i = id.index();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.get_mut(*id).data_mut();
            assert_eq!(p.len(), g.len(), "gradient shape mismatch");
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let denom = v.sqrt() / bc2_sqrt + self.eps;
                *p -= step_size * *m / denom;
            }
        }
    }

    /// Moment buffers in parameter order, for checkpointing.
    pub fn state(&self) -> (u64, &[Tensor], &[Tensor]) {
        (self.step, &self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Result<(), String> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err("optimizer state has the wrong number of slots".into());
        }
        for (new, old) in m.iter().zip(&self.m).chain(v.iter().zip(&self.v)) {
            if new.shape() != old.shape() {
                return Err("optimizer state shape mismatch".into());
            }
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [(ParamId, Tensor)], max_norm: f32) -> f32 {
    let total = grads.iter().map(|(_, g)| g.sq_norm()).sum::<f64>().sqrt() as f32;
    if total.is_finite() && total > max_norm && max_norm > 0.0 {
        let s = max_norm / (total + 1e-6);
        for (_, g) in grads.iter_mut() {
            g.scale(s);
        }
    }
    total
}
