//! Adam with global gradient-norm clipping.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Clips `grad` in place to `cfg.clip_norm`, then applies one update.
    /// Returns the pre-clip gradient norm.
    pub fn step(&mut self, cfg: &AdamConfig, params: &mut [f64], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(params.len(), self.m.len());
        let norm = clip_global_norm(grad, cfg.clip_norm);
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
        norm
    }
}

/// Rescales `grad` so its Euclidean norm is at most `max_norm`.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(3);
        let mut p = vec![1.0, 2.0, 3.0];
        let mut g = vec![0.5, -2.0, 0.0];
        st.step(&cfg, &mut p, &mut g);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (2.0 + 1e-3)).abs() < 1e-9);
        assert_eq!(p[2], 3.0);
    }

    #[test]
    fn scalar_trace_matches_reference() {
        // hand-rolled reference of the textbook update for two steps
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut st = AdamState::new(1);
        let mut p = vec![0.0];
        let grads = [1.0, 3.0];
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.0f64);
        for (t, g) in grads.iter().enumerate() {
            st.step(&cfg, &mut p, &mut vec![*g]);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let k = (t + 1) as i32;
            x -= 0.1 * (m / (1.0 - 0.9f64.powi(k))) / ((v / (1.0 - 0.999f64.powi(k))).sqrt() + 1e-8);
            assert!((p[0] - x).abs() < 1e-15);
        }
    }

    #[test]
    fn clipping() {
        let mut g = vec![30.0, 40.0];
        assert_eq!(clip_global_norm(&mut g, 10.0), 50.0);
        assert!((g[0] - 6.0).abs() < 1e-12 && (g[1] - 8.0).abs() < 1e-12);
        let mut g = vec![3.0, 4.0];
        clip_global_norm(&mut g, 10.0);
        assert_eq!(g, vec![3.0, 4.0]);
    }
}
