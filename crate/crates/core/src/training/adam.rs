//! Adam with bias correction over the network parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent_edit::{NetGrads, PhotoAppNet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
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
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates, flattened in parameter order (per block: w1, b1, w2, b2).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        Self {
            t: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn param_count(&self) -> usize {
        self.m.len()
    }
}

/// One Adam update on a flat parameter slice. `t` is the already incremented step.
fn update(params: &mut [f32], grads: &[f32], m: &mut [f32], v: &mut [f32], t: u64, cfg: &AdamConfig) {
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let c1 = (1.0 - cfg.beta1.powf(t as f64)) as f32;
    let c2 = (1.0 - cfg.beta2.powf(t as f64)) as f32;
    let (lr, eps) = (cfg.lr as f32, cfg.eps as f32);
    for i in 0..params.len() {
        let g = grads[i];
        let mi = b1 * m[i] + (1.0 - b1) * g;
        let vi = b2 * v[i] + (1.0 - b2) * g * g;
        m[i] = mi;
        v[i] = vi;
        params[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
    }
}

/// Applies one step. Non-finite gradients abort before anything changes.
pub fn adam_step(
    net: &mut PhotoAppNet<f32>,
    grads: &NetGrads<f32>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    let n = net.config().param_count();
    if state.param_count() != n || grads.blocks.len() != net.blocks().len() {
        return Err(Error::Shape(format!(
            "optimizer state holds {} parameters, network has {n}",
            state.param_count()
        )));
    }
    if !grads.all_finite() {
        return Err(Error::Numeric("non-finite gradient; step skipped".into()));
    }
    if !(cfg.lr > 0.0) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    state.t += 1;
    let t = state.t;
    let mut offset = 0;
    for (b, g) in net.blocks_mut().iter_mut().zip(&grads.blocks) {
        for (p, gt) in b.tensors_mut().into_iter().zip(g.tensors()) {
            let len = p.len();
            update(
                p,
                gt,
                &mut state.m[offset..offset + len],
                &mut state.v[offset..offset + len],
                t,
                cfg,
            );
            offset += len;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent_edit::NetConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (PhotoAppNet<f32>, NetGrads<f32>) {
        let mut cfg = NetConfig::reduced(2, 4, 3, 5, false);
        cfg.seed = seed;
        let net = PhotoAppNet::new(cfg.clone()).unwrap();
        let mut g = NetGrads::zeros(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for b in &mut g.blocks {
            for t in b.tensors_mut() {
                for v in t.iter_mut() {
                    let mag = rng.gen_range(0.01f32..1.0);
                    *v = if rng.gen() { mag } else { -mag };
                }
            }
        }
        (net, g)
    }

    fn flat(net: &PhotoAppNet<f32>) -> Vec<f32> {
        net.blocks()
            .iter()
            .flat_map(|b| b.tensors().into_iter().flat_map(|t| t.to_vec()))
            .collect()
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let (mut net, g) = setup(1);
        let before = flat(&net);
        let grads_flat: Vec<f32> = g
            .blocks
            .iter()
            .flat_map(|b| b.tensors().into_iter().flat_map(|t| t.to_vec()))
            .collect();
        let mut st = AdamState::new(before.len());
        let cfg = AdamConfig::default();
        adam_step(&mut net, &g, &mut st, &cfg).unwrap();
        assert_eq!(st.t, 1);
        for ((a, b), gr) in before.iter().zip(flat(&net)).zip(&grads_flat) {
            let expected = -cfg.lr * f64::from(gr.signum());
            assert!((f64::from(b - a) - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_grads_leave_params() {
        let (mut net, mut g) = setup(2);
        g.clear();
        let before = flat(&net);
        let mut st = AdamState::new(before.len());
        adam_step(&mut net, &g, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(st.t, 1);
        assert_eq!(before, flat(&net));
    }

    #[test]
    fn non_finite_grads_abort() {
        let (mut net, mut g) = setup(3);
        g.blocks[1].b2[0] = f32::NAN;
        let before = flat(&net);
        let mut st = AdamState::new(before.len());
        assert!(matches!(
            adam_step(&mut net, &g, &mut st, &AdamConfig::default()),
            Err(Error::Numeric(_))
        ));
        assert_eq!(st, AdamState::new(before.len()));
        assert_eq!(before, flat(&net));
    }

    #[test]
    fn deterministic() {
        let run = || {
            let (mut net, g) = setup(4);
            let mut st = AdamState::new(net.config().param_count());
            for _ in 0..5 {
                adam_step(&mut net, &g, &mut st, &AdamConfig::default()).unwrap();
            }
            flat(&net)
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn state_size_checked() {
        let (mut net, g) = setup(5);
        let mut st = AdamState::new(3);
        assert!(matches!(
            adam_step(&mut net, &g, &mut st, &AdamConfig::default()),
            Err(Error::Shape(_))
        ));
    }
}
