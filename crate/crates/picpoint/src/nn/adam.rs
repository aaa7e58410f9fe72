//! Adam optimizer with per-parameter learning rates and a single-cycle
//! cosine schedule.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::{Elem, GradStore, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient (classic Adam weight decay).
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-6 }
    }
}

/// Single-cycle cosine annealing from `base` at step 0 to 0 at the final
/// step, no restarts.
pub fn cosine_lr(base: f64, step: usize, total_steps: usize) -> f64 {
    let denom = total_steps.saturating_sub(1).max(1) as f64;
    let t = (step as f64).min(denom);
    base * 0.5 * (1.0 + (std::f64::consts::PI * t / denom).cos())
}

/// Adam state: first/second moments per parameter plus the shared step
/// counter. Moments live in the working element type so checkpointed
/// state resumes bit-exactly.
#[derive(Debug, Clone)]
pub struct Adam<T: Elem> {
    pub m: Vec<ArrayD<T>>,
    pub v: Vec<ArrayD<T>>,
    pub t: u64,
    pub hyper: AdamHyper,
}

impl<T: Elem> Adam<T> {
    pub fn new(ps: &ParamStore<T>, hyper: AdamHyper) -> Self {
        let m = ps.ids().map(|id| ArrayD::zeros(ps.get(id).raw_dim())).collect::<Vec<_>>();
        let v = m.clone();
        Adam { m, v, t: 0, hyper }
    }

    /// One update. `lr_of` maps each parameter to its group learning
    /// rate. Parameters with no accumulated gradient are left untouched.
    pub fn step(
        &mut self,
        ps: &mut ParamStore<T>,
        gs: &GradStore<T>,
        lr_of: impl Fn(ParamId) -> f64,
    ) {
        self.t += 1;
        let b1 = T::from_f64(self.hyper.beta1);
        let b2 = T::from_f64(self.hyper.beta2);
        let eps = T::from_f64(self.hyper.eps);
        let wd = T::from_f64(self.hyper.weight_decay);
        let corr1 = T::from_f64(1.0 - self.hyper.beta1.powi(self.t as i32));
        let corr2 = T::from_f64(1.0 - self.hyper.beta2.powi(self.t as i32));
        let one = T::one();
        for id in ps.ids() {
            let Some(grad) = gs.get(id) else { continue };
            let lr = T::from_f64(lr_of(id));
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let theta = ps.get_mut(id);
            for (((t_ref, &g0), m_ref), v_ref) in
                theta.iter_mut().zip(grad.iter()).zip(m.iter_mut()).zip(v.iter_mut())
            {
                let g = g0 + wd * *t_ref;
                *m_ref = b1 * *m_ref + (one - b1) * g;
                *v_ref = b2 * *v_ref + (one - b2) * g * g;
                let m_hat = *m_ref / corr1;
                let v_hat = *v_ref / corr2;
                *t_ref = *t_ref - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
