//! Adam with per-weight masking.
//!
//! Masked-out weights are skipped entirely: neither the parameter nor its
//! moment estimates change. Biases are dense and always update (unless
//! bias updates are switched off in the config).

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mask::BinaryMask;
use crate::network::{Gradients, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// When false, biases are held fixed.
    #[serde(default = "default_true")]
    pub update_biases: bool,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_true() -> bool {
    true
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            update_biases: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Gradients,
    second: Gradients,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        Self {
            config,
            first: Gradients::zeros_like(params),
            second: Gradients::zeros_like(params),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &Gradients {
        &self.first
    }

    pub fn second_moment(&self) -> &Gradients {
        &self.second
    }
}

/// One Adam update of `θ ← θ − η · Adam(∇θ ⊙ m)`.
pub fn adam_step(params: &mut ParamSet, grads: &Gradients, mask: &BinaryMask, state: &mut AdamState) -> Result<()> {
    mask.check_congruent(params)?;
    grads.check_congruent(params)?;
    state.first.check_congruent(params)?;

    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
        update_biases,
    } = state.config;
    let t = state.step as f64;
    let c1 = 1.0 - beta1.powf(t);
    let c2 = 1.0 - beta2.powf(t);

    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };

    for (l, layer) in params.layers_mut().iter_mut().enumerate() {
        let bits = mask.layer(l);
        let (gw, m, v) = (&grads.weights[l], &mut state.first.weights[l], &mut state.second.weights[l]);
        for i in 0..layer.weight.len() {
            if bits.get(i) {
                update(&mut layer.weight[i], gw[i], &mut m[i], &mut v[i]);
            }
        }
        if update_biases {
            let (gb, m, v) = (&grads.biases[l], &mut state.first.biases[l], &mut state.second.biases[l]);
            for i in 0..layer.bias.len() {
                update(&mut layer.bias[i], gb[i], &mut m[i], &mut v[i]);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Layer;

    /// Textbook scalar Adam, written independently of `adam_step`.
    fn scalar_adam(w: f64, grads: &[f64], lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut w) = (0.0, 0.0, w);
        for (k, &g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        w
    }

    fn single_weight(w: f64) -> ParamSet {
        ParamSet::new(vec![Layer::new(1, 1, vec![w], vec![0.0]).unwrap()]).unwrap()
    }

    fn grad(w: f64) -> Gradients {
        Gradients {
            weights: vec![vec![w]],
            biases: vec![vec![0.0]],
        }
    }

    #[test]
    fn single_step_matches_scalar_oracle() {
        let mut p = single_weight(0.5);
        let mut s = AdamState::new(&p, AdamConfig::with_lr(1e-4));
        let ones = BinaryMask::ones_like(&p);
        adam_step(&mut p, &grad(1.0), &ones, &mut s).unwrap();
        let expected = scalar_adam(0.5, &[1.0], 1e-4);
        assert_eq!(p.layers()[0].weight[0], expected);
        assert!((0.5 - expected - 1e-4).abs() < 1e-11);
    }

    #[test]
    fn trajectory_matches_scalar_oracle() {
        let gs = [1.0, -0.3, 0.7, 2.5, -1.1];
        let mut p = single_weight(0.2);
        let mut s = AdamState::new(&p, AdamConfig::with_lr(1e-2));
        let ones = BinaryMask::ones_like(&p);
        for &g in &gs {
            adam_step(&mut p, &grad(g), &ones, &mut s).unwrap();
        }
        assert!((p.layers()[0].weight[0] - scalar_adam(0.2, &gs, 1e-2)).abs() < 1e-15);
        assert_eq!(s.step(), 5);
    }

    #[test]
    fn zero_gradient_changes_nothing_but_the_counter() {
        let init = ParamSet::kaiming_normal(&[3, 4, 2], 2);
        let mut p = init.clone();
        let mut s = AdamState::new(&p, AdamConfig::default());
        let (g, ones) = (Gradients::zeros_like(&p), BinaryMask::ones_like(&p));
        adam_step(&mut p, &g, &ones, &mut s).unwrap();
        assert_eq!(p, init);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn full_masking_freezes_weights_but_not_biases() {
        let init = ParamSet::kaiming_normal(&[3, 4, 2], 2);
        let mut p = init.clone();
        let mut g = Gradients::zeros_like(&p);
        g.weights.iter_mut().chain(g.biases.iter_mut()).flatten().for_each(|v| *v = 0.5);
        let mask = BinaryMask::zeros(&p.layer_shapes());
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mask, &mut s).unwrap();
        for (a, b) in p.layers().iter().zip(init.layers()) {
            assert_eq!(a.weight, b.weight);
            assert_ne!(a.bias, b.bias);
        }
        assert!(s.first_moment().weights.iter().flatten().all(|&m| m == 0.0));
    }

    #[test]
    fn frozen_biases_stay_put() {
        let init = ParamSet::kaiming_normal(&[2, 2], 2);
        let mut p = init.clone();
        let mut g = Gradients::zeros_like(&p);
        g.biases[0] = vec![1.0, 1.0];
        let cfg = AdamConfig {
            update_biases: false,
            ..AdamConfig::default()
        };
        let mut s = AdamState::new(&p, cfg);
        let ones = BinaryMask::ones_like(&p);
        adam_step(&mut p, &g, &ones, &mut s).unwrap();
        assert_eq!(p, init);
    }
}
