//! Adam with bias correction over a [`ParamSet`].

use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::nn::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Per-array gradient norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(100.0) }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    skipped: u64,
}

impl Adam {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = |b: &crate::nn::ParamBlock| vec![0.0; b.data.len()];
        Self {
            config,
            step: 0,
            first: params.blocks().iter().map(zeros).collect(),
            second: params.blocks().iter().map(zeros).collect(),
            skipped: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Arrays whose update was skipped because of a non-finite gradient.
    pub fn skipped_updates(&self) -> u64 {
        self.skipped
    }

    pub fn moments(&self, block: usize) -> (&[f64], &[f64]) {
        (&self.first[block], &self.second[block])
    }

    /// Applies one update. `grads[i]` is the gradient for block `i`;
    /// blocks with `None` still have their moments decayed.
    pub fn update(&mut self, params: &mut ParamSet, grads: &[Option<Vec<f64>>]) {
        debug_assert_eq!(grads.len(), params.len());
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, clip_norm } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(beta1, t as f64);
        let c2 = 1.0 - libm::pow(beta2, t as f64);

        for (i, block) in params.blocks_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let grad = grads.get(i).and_then(|g| g.as_deref());
            if let Some(g) = grad {
                if g.iter().any(|x| !x.is_finite()) {
                    log::warn!("non-finite gradient in {}; update skipped", block.name);
                    self.skipped += 1;
                    continue;
                }
            }
            let scale = match (grad, clip_norm) {
                (Some(g), Some(max)) => {
                    let norm = libm::sqrt(g.iter().map(|x| x * x).sum::<f64>());
                    if norm > max { max / norm } else { 1.0 }
                }
                _ => 1.0,
            };
            for j in 0..block.data.len() {
                let gj = grad.map_or(0.0, |g| g[j] * scale);
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                let delta = lr * m_hat / (libm::sqrt(v_hat) + eps);
                block.data[j] = (block.data[j] as f64 - delta) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_block(values: &[f32]) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", 1, values.len(), values.to_vec());
        p
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = one_block(&[1.0, -2.0]);
        let mut adam = Adam::new(&p, AdamConfig::with_lr(0.1));
        adam.update(&mut p, &[Some(vec![1.0, 1.0])]);
        let after_first = p.clone();
        let (m1, _) = adam.moments(0);
        let m1 = m1.to_vec();
        adam.update(&mut p, &[Some(vec![0.0, 0.0])]);
        let (m2, _) = adam.moments(0);
        assert!((m2[0] - 0.9 * m1[0]).abs() < 1e-15);
        // zero gradient from zero moments is a no-op
        let mut fresh = one_block(&[1.0, -2.0]);
        let mut adam = Adam::new(&fresh, AdamConfig::with_lr(0.1));
        adam.update(&mut fresh, &[Some(vec![0.0, 0.0])]);
        assert_eq!(fresh, one_block(&[1.0, -2.0]));
        assert_ne!(after_first, one_block(&[1.0, -2.0]));
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so Δ = −lr · g / (|g| + ε) ≈ −lr · sign(g)
        let mut p = one_block(&[0.0, 0.0]);
        let mut adam = Adam::new(&p, AdamConfig::with_lr(0.01));
        adam.update(&mut p, &[Some(vec![3.0, -0.5])]);
        assert!((p.blocks()[0].data[0] as f64 + 0.01).abs() < 1e-7);
        assert!((p.blocks()[0].data[1] as f64 - 0.01).abs() < 1e-7);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut p = one_block(&[1.0]);
        let mut adam = Adam::new(&p, AdamConfig::default());
        adam.update(&mut p, &[Some(vec![f64::NAN])]);
        assert_eq!(p.blocks()[0].data[0], 1.0);
        assert_eq!(adam.skipped_updates(), 1);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = one_block(&[0.5, 0.25, -1.0]);
            let mut adam = Adam::new(&p, AdamConfig::with_lr(0.05));
            for k in 0..20 {
                let g: Vec<f64> = (0..3).map(|j| ((k * 3 + j) as f64).sin()).collect();
                adam.update(&mut p, &[Some(g)]);
            }
            p
        };
        assert_eq!(run().fingerprint(), run().fingerprint());
    }
}
