//! Adaptive-moment optimizer with decoupled weight decay and two learning-rate groups.

use crate::sem::{CcgParams, ParamGroup};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr_main: f64,
    pub lr_aux: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(lr_main: f64, lr_aux: f64, weight_decay: f64) -> Self {
        Self {
            lr_main,
            lr_aux,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Clears moment estimates, e.g. after the parameter layout changes.
    pub fn reset(&mut self) {
        self.m.clear();
        self.v.clear();
        self.t = 0;
    }

    /// One update of `params` in place from `grads` (same layout).
    pub fn step(&mut self, params: &mut CcgParams, grads: &CcgParams) {
        let g = grads.to_flat();
        if self.m.len() != g.len() {
            self.m = vec![0.0; g.len()];
            self.v = vec![0.0; g.len()];
            self.t = 0;
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut idx = 0;
        params.for_each_mut(|group, p| {
            let lr = match group {
                ParamGroup::Main => self.lr_main,
                ParamGroup::Aux => self.lr_aux,
            };
            let gi = g[idx];
            self.m[idx] = self.beta1 * self.m[idx] + (1.0 - self.beta1) * gi;
            self.v[idx] = self.beta2 * self.v[idx] + (1.0 - self.beta2) * gi * gi;
            let m_hat = self.m[idx] / bc1;
            let v_hat = self.v[idx] / bc2;
            *p -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *p);
            idx += 1;
        });
    }
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut CcgParams, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    grads.for_each(|_, g| sq += g * g);
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        grads.for_each_mut(|_, g| *g *= scale);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sem::SemModel;

    fn params() -> CcgParams {
        CcgParams {
            sem: SemModel::zeros(2, 2, 1),
            encoders: Vec::new(),
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first update is lr * sign(g) (up to eps).
        let mut p = params();
        let mut g = params();
        g.sem.bias = vec![0.5, -2.0];
        let mut opt = AdamW::new(0.1, 0.01, 0.0);
        opt.step(&mut p, &g);
        assert!((p.sem.bias[0] + 0.01).abs() < 1e-9);
        assert!((p.sem.bias[1] - 0.01).abs() < 1e-9);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut p = params();
        p.sem.bias = vec![1.0, 1.0];
        let g = params();
        let mut opt = AdamW::new(0.1, 0.1, 0.5);
        opt.step(&mut p, &g);
        assert!((p.sem.bias[0] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn clipping() {
        let mut g = params();
        g.sem.bias = vec![3.0, 4.0];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g.sem.bias[0] - 0.6).abs() < 1e-12);
        let mut small = params();
        small.sem.bias = vec![0.3, 0.4];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small.sem.bias, vec![0.3, 0.4]);
    }
}
