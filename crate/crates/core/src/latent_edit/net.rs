use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ConditionVector, EnvNormalization, LatentCode, PoseEncoding, Real};
use crate::error::{Error, Result};

/// Network dimensions and conditioning layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub blocks: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub env_dim: usize,
    pub use_q: bool,
    #[serde(default)]
    pub pose_encoding: PoseEncoding,
    #[serde(default)]
    pub env_normalization: EnvNormalization,
    pub seed: u64,
}

impl NetConfig {
    /// 18 blocks of 512, hidden 512, 450 environment values.
    pub fn standard(use_q: bool, seed: u64) -> Self {
        Self {
            blocks: super::LATENT_BLOCKS,
            latent_dim: super::LATENT_DIM,
            hidden: 512,
            env_dim: 450,
            use_q,
            pose_encoding: PoseEncoding::Radians,
            env_normalization: EnvNormalization::None,
            seed,
        }
    }

    pub fn reduced(blocks: usize, latent_dim: usize, hidden: usize, env_dim: usize, use_q: bool) -> Self {
        Self {
            blocks,
            latent_dim,
            hidden,
            env_dim,
            use_q,
            pose_encoding: PoseEncoding::Radians,
            env_normalization: EnvNormalization::None,
            seed: 0,
        }
    }

    pub fn cond_dim(&self) -> usize {
        self.env_dim + self.pose_encoding.dim() + 1 + usize::from(self.use_q)
    }

    pub fn input_dim(&self) -> usize {
        self.latent_dim + self.cond_dim()
    }

    pub fn latent_len(&self) -> usize {
        self.blocks * self.latent_dim
    }

    pub fn params_per_block(&self) -> usize {
        self.hidden * self.input_dim() + self.hidden + self.latent_dim * self.hidden + self.latent_dim
    }

    pub fn param_count(&self) -> usize {
        self.blocks * self.params_per_block()
    }

    fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.latent_dim == 0 || self.hidden == 0 || self.env_dim == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// One latent block's MLP. `w1` is `hidden x input_dim`, `w2` is `latent_dim x hidden`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

impl<T: Real> Block<T> {
    fn zeros(cfg: &NetConfig) -> Self {
        Self {
            w1: vec![T::zero(); cfg.hidden * cfg.input_dim()],
            b1: vec![T::zero(); cfg.hidden],
            w2: vec![T::zero(); cfg.latent_dim * cfg.hidden],
            b2: vec![T::zero(); cfg.latent_dim],
        }
    }

    /// Parameter tensors in checkpoint order.
    pub fn tensors(&self) -> [&[T]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

static NEXT_INSTANCE: AtomicU64 = AtomicU64::new(1);

/// The per-block residual displacement network.
#[derive(Debug)]
pub struct PhotoAppNet<T> {
    config: NetConfig,
    blocks: Vec<Block<T>>,
    instance: u64,
    version: u64,
}

impl<T: Clone> Clone for PhotoAppNet<T> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            blocks: self.blocks.clone(),
            instance: NEXT_INSTANCE.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }
}

impl<T: PartialEq> PartialEq for PhotoAppNet<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.blocks == other.blocks
    }
}

/// Activations kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    instance: u64,
    version: u64,
    latent: Vec<T>,
    cond: Vec<T>,
    pre: Vec<T>,
}

/// Gradients with respect to every parameter and, optionally, the inputs.
#[derive(Debug, Clone)]
pub struct NetGrads<T> {
    pub blocks: Vec<Block<T>>,
    pub d_latent: Vec<T>,
    pub d_cond: Vec<T>,
}

impl<T: Real> NetGrads<T> {
    pub fn zeros(cfg: &NetConfig) -> Self {
        Self {
            blocks: (0..cfg.blocks).map(|_| Block::zeros(cfg)).collect(),
            d_latent: vec![T::zero(); cfg.latent_len()],
            d_cond: vec![T::zero(); cfg.cond_dim()],
        }
    }

    pub fn clear(&mut self) {
        for b in &mut self.blocks {
            for t in b.tensors_mut() {
                t.fill(T::zero());
            }
        }
        self.d_latent.fill(T::zero());
        self.d_cond.fill(T::zero());
    }

    pub fn scale(&mut self, s: T) {
        for b in &mut self.blocks {
            for t in b.tensors_mut() {
                t.iter_mut().for_each(|v| *v = *v * s);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.tensors().iter().all(|t| t.iter().all(|v| v.is_finite())))
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s = s + *x * *y;
    }
    s
}

#[inline]
fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * *xi;
    }
}

impl<T: Real> PhotoAppNet<T> {
    /// He-uniform first layer, zero biases, zero second layer: the untrained
    /// network is the identity edit.
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let d_in = config.input_dim();
        let bound = (6.0 / d_in as f64).sqrt();
        let blocks = (0..config.blocks)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(k as u64);
                let mut b = Block::zeros(&config);
                for w in &mut b.w1 {
                    *w = T::lit(rng.gen_range(-bound..bound));
                }
                b
            })
            .collect();
        Ok(Self::from_blocks_unchecked(config, blocks))
    }

    /// All parameters zero.
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let blocks = (0..config.blocks).map(|_| Block::zeros(&config)).collect();
        Ok(Self::from_blocks_unchecked(config, blocks))
    }

    pub fn from_blocks(config: NetConfig, blocks: Vec<Block<T>>) -> Result<Self> {
        config.validate()?;
        if blocks.len() != config.blocks {
            return Err(Error::Shape(format!(
                "{} blocks given, config needs {}",
                blocks.len(),
                config.blocks
            )));
        }
        let template = Block::<T>::zeros(&config);
        for (k, b) in blocks.iter().enumerate() {
            for (t, z) in b.tensors().iter().zip(template.tensors()) {
                if t.len() != z.len() {
                    return Err(Error::Shape(format!("block {k} tensor has wrong size")));
                }
                if t.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("block {k} has non-finite weights")));
                }
            }
        }
        Ok(Self::from_blocks_unchecked(config, blocks))
    }

    fn from_blocks_unchecked(config: NetConfig, blocks: Vec<Block<T>>) -> Self {
        Self {
            config,
            blocks,
            instance: NEXT_INSTANCE.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[Block<T>] {
        &self.blocks
    }

    /// Mutable access for optimizers; invalidates outstanding forward caches.
    pub fn blocks_mut(&mut self) -> &mut [Block<T>] {
        self.version += 1;
        &mut self.blocks
    }

    pub fn cast<U: Real>(&self) -> PhotoAppNet<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::lit(x.to_f64().expect("finite"))).collect();
        let blocks = self
            .blocks
            .iter()
            .map(|b| Block {
                w1: conv(&b.w1),
                b1: conv(&b.b1),
                w2: conv(&b.w2),
                b2: conv(&b.b2),
            })
            .collect();
        PhotoAppNet::from_blocks_unchecked(self.config.clone(), blocks)
    }

    /// `out[k] = latent[k] + W2_k relu(W1_k [latent[k]; cond] + b1_k) + b2_k`.
    pub fn forward(&self, latent: &[T], cond: &[T]) -> Result<(Vec<T>, ForwardCache<T>)> {
        let cfg = &self.config;
        if latent.len() != cfg.latent_len() {
            return Err(Error::Shape(format!(
                "latent has {} values, network expects {}",
                latent.len(),
                cfg.latent_len()
            )));
        }
        if cond.len() != cfg.cond_dim() {
            return Err(Error::Shape(format!(
                "condition has {} values, network expects {}",
                cond.len(),
                cfg.cond_dim()
            )));
        }
        if latent.iter().chain(cond).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite network input".into()));
        }
        let (ld, hid, d_in) = (cfg.latent_dim, cfg.hidden, cfg.input_dim());
        let mut out = latent.to_vec();
        let mut pre = vec![T::zero(); cfg.blocks * hid];
        let mut x = vec![T::zero(); d_in];
        let mut h = vec![T::zero(); hid];
        x[ld..].copy_from_slice(cond);
        for (k, b) in self.blocks.iter().enumerate() {
            x[..ld].copy_from_slice(&latent[k * ld..(k + 1) * ld]);
            let z = &mut pre[k * hid..(k + 1) * hid];
            for j in 0..hid {
                z[j] = b.b1[j] + dot(&b.w1[j * d_in..(j + 1) * d_in], &x);
                h[j] = z[j].max(T::zero());
            }
            let o = &mut out[k * ld..(k + 1) * ld];
            for i in 0..ld {
                o[i] = o[i] + (b.b2[i] + dot(&b.w2[i * hid..(i + 1) * hid], &h));
            }
        }
        Ok((
            out,
            ForwardCache {
                instance: self.instance,
                version: self.version,
                latent: latent.to_vec(),
                cond: cond.to_vec(),
                pre,
            },
        ))
    }

    /// Reverse-mode gradients of the forward map, added into `grads`.
    ///
    /// Input gradients (`d_latent`, `d_cond`) are only computed when
    /// `input_grads` is set; training does not need them.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache<T>,
        d_out: &[T],
        grads: &mut NetGrads<T>,
        input_grads: bool,
    ) -> Result<()> {
        let cfg = &self.config;
        if cache.instance != self.instance || cache.version != self.version {
            return Err(Error::Shape("forward cache does not belong to these parameters".into()));
        }
        if d_out.len() != cfg.latent_len() || grads.blocks.len() != cfg.blocks {
            return Err(Error::Shape("gradient buffers do not match the network".into()));
        }
        let (ld, hid, d_in) = (cfg.latent_dim, cfg.hidden, cfg.input_dim());
        let mut x = vec![T::zero(); d_in];
        let mut h = vec![T::zero(); hid];
        let mut dh = vec![T::zero(); hid];
        let mut dx = vec![T::zero(); d_in];
        x[ld..].copy_from_slice(&cache.cond);
        for (k, (b, g)) in self.blocks.iter().zip(grads.blocks.iter_mut()).enumerate() {
            x[..ld].copy_from_slice(&cache.latent[k * ld..(k + 1) * ld]);
            let z = &cache.pre[k * hid..(k + 1) * hid];
            for (hj, zj) in h.iter_mut().zip(z) {
                *hj = zj.max(T::zero());
            }
            let d_delta = &d_out[k * ld..(k + 1) * ld];
            dh.fill(T::zero());
            for i in 0..ld {
                let di = d_delta[i];
                g.b2[i] = g.b2[i] + di;
                if di == T::zero() {
                    continue;
                }
                axpy(&mut g.w2[i * hid..(i + 1) * hid], di, &h);
                axpy(&mut dh, di, &b.w2[i * hid..(i + 1) * hid]);
            }
            if input_grads {
                dx.fill(T::zero());
            }
            for j in 0..hid {
                // relu'(0) = 0
                let dz = if z[j] > T::zero() { dh[j] } else { T::zero() };
                if dz == T::zero() {
                    continue;
                }
                g.b1[j] = g.b1[j] + dz;
                let row = &b.w1[j * d_in..(j + 1) * d_in];
                axpy(&mut g.w1[j * d_in..(j + 1) * d_in], dz, &x);
                if input_grads {
                    axpy(&mut dx, dz, row);
                }
            }
            if input_grads {
                let dl = &mut grads.d_latent[k * ld..(k + 1) * ld];
                for i in 0..ld {
                    dl[i] = dl[i] + d_delta[i] + dx[i];
                }
                axpy(&mut grads.d_cond, T::one(), &dx[ld..]);
            }
        }
        Ok(())
    }

    /// Fresh gradients for one forward pass, including input gradients.
    pub fn backward(&self, cache: &ForwardCache<T>, d_out: &[T]) -> Result<NetGrads<T>> {
        let mut g = NetGrads::zeros(&self.config);
        self.backward_accumulate(cache, d_out, &mut g, true)?;
        Ok(g)
    }
}

impl PhotoAppNet<f32> {
    /// Edited latent code for a condition.
    pub fn apply(&self, latent: &LatentCode, cond: &ConditionVector) -> Result<LatentCode> {
        if latent.shape() != (self.config.blocks, self.config.latent_dim) {
            return Err(Error::Shape(format!(
                "latent is {:?}, network expects {}x{}",
                latent.shape(),
                self.config.blocks,
                self.config.latent_dim
            )));
        }
        let features = cond.features(&self.config)?;
        let (out, _) = self.forward(latent.data(), &features)?;
        LatentCode::with_shape(latent.blocks(), latent.dim(), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_vec(n: usize, rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
    }

    fn random_net(cfg: &NetConfig, seed: u64) -> PhotoAppNet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (0..cfg.blocks)
            .map(|_| Block {
                w1: random_vec(cfg.hidden * cfg.input_dim(), &mut rng, 0.5),
                b1: random_vec(cfg.hidden, &mut rng, 0.5),
                w2: random_vec(cfg.latent_dim * cfg.hidden, &mut rng, 0.5),
                b2: random_vec(cfg.latent_dim, &mut rng, 0.5),
            })
            .collect();
        PhotoAppNet::from_blocks(cfg.clone(), blocks).unwrap()
    }

    #[test]
    fn zero_params_are_identity() {
        let cfg = NetConfig::reduced(3, 5, 4, 6, false);
        let net = PhotoAppNet::<f32>::zeros(cfg.clone()).unwrap();
        let latent: Vec<f32> = (0..15).map(|i| i as f32 * 0.3 - 2.0).collect();
        let cond = vec![0.7f32; cfg.cond_dim()];
        let (out, _) = net.forward(&latent, &cond).unwrap();
        assert_eq!(out, latent);
    }

    #[test]
    fn fresh_network_is_identity_edit() {
        let cfg = NetConfig::reduced(2, 4, 8, 3, true);
        let net = PhotoAppNet::<f32>::new(cfg.clone()).unwrap();
        assert!(net.blocks()[0].w1.iter().any(|w| *w != 0.0));
        let latent = vec![1.5f32; 8];
        let (out, _) = net.forward(&latent, &vec![0.2; cfg.cond_dim()]).unwrap();
        assert_eq!(out, latent);
    }

    #[test]
    fn hand_computed_two_block_net() {
        // smallest layout: latent 1 + env 1 + pose 3 + p = 6 inputs
        let cfg = NetConfig::reduced(2, 1, 2, 1, false);
        assert_eq!(cfg.input_dim(), 6);
        // x = [l, e, yaw, pitch, roll, p]
        let b0 = Block {
            w1: vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, /**/ -1.0, 2.0, 0.0, 0.0, 0.0, 0.0],
            b1: vec![0.0, 0.5],
            w2: vec![2.0, 3.0],
            b2: vec![0.25],
        };
        let b1 = Block {
            w1: vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, /**/ 0.0, 0.0, 0.0, 0.0, 0.0, -1.0],
            b1: vec![0.0, 0.0],
            w2: vec![-1.0, 4.0],
            b2: vec![0.0],
        };
        let net = PhotoAppNet::from_blocks(cfg, vec![b0, b1]).unwrap();
        let latent = [1.0f64, -3.0];
        let cond = [0.5, 0.2, 0.0, 0.0, 1.0];
        let (out, _) = net.forward(&latent, &cond).unwrap();
        // block 0: z = [1, -1 + 1 + 0.5] = [1, 0.5]; delta = 2*1 + 3*0.5 + 0.25 = 3.75
        assert!((out[0] - 4.75).abs() < 1e-12);
        // block 1: z = [0.2 + 1, -1] -> h = [1.2, 0]; delta = -1.2
        assert!((out[1] - (-4.2)).abs() < 1e-12);
    }

    #[test]
    fn blocks_are_independent() {
        let cfg = NetConfig::reduced(4, 3, 5, 2, true);
        let net = random_net(&cfg, 1).cast::<f32>();
        let latent: Vec<f32> = (0..12).map(|i| (i as f32).sin()).collect();
        let cond = vec![0.3f32; cfg.cond_dim()];
        let (base, _) = net.forward(&latent, &cond).unwrap();
        let mut bumped = latent.clone();
        bumped[2 * 3 + 1] += 0.5;
        let (out, _) = net.forward(&bumped, &cond).unwrap();
        for k in [0usize, 1, 3] {
            assert_eq!(&out[k * 3..k * 3 + 3], &base[k * 3..k * 3 + 3]);
        }
        assert_ne!(&out[6..9], &base[6..9]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let cfg = NetConfig::reduced(2, 3, 4, 2, false);
        let net = random_net(&cfg, 2);
        let (_, cache) = net.forward(&[0.1; 6], &vec![0.2; cfg.cond_dim()]).unwrap();
        let g = net.backward(&cache, &[0.0; 6]).unwrap();
        assert!(g.blocks.iter().all(|b| b.tensors().iter().all(|t| t.iter().all(|v| *v == 0.0))));
        assert!(g.d_latent.iter().chain(&g.d_cond).all(|v| *v == 0.0));
    }

    #[test]
    fn residual_path_with_zero_w2() {
        let cfg = NetConfig::reduced(2, 3, 4, 2, false);
        let mut net = random_net(&cfg, 3);
        for b in net.blocks_mut() {
            b.w2.fill(0.0);
        }
        let (_, cache) = net.forward(&[0.4; 6], &vec![0.1; cfg.cond_dim()]).unwrap();
        let upstream = [1.0, -2.0, 0.5, 3.0, 0.0, -1.0];
        let g = net.backward(&cache, &upstream).unwrap();
        assert_eq!(g.d_latent, upstream.to_vec());
    }

    #[test]
    fn stale_cache_rejected() {
        let cfg = NetConfig::reduced(1, 2, 2, 1, false);
        let mut net = random_net(&cfg, 4);
        let (_, cache) = net.forward(&[0.0; 2], &vec![0.0; cfg.cond_dim()]).unwrap();
        let other = net.clone();
        assert!(matches!(other.backward(&cache, &[1.0; 2]), Err(Error::Shape(_))));
        net.blocks_mut()[0].b2[0] = 1.0;
        assert!(matches!(net.backward(&cache, &[1.0; 2]), Err(Error::Shape(_))));
    }

    #[test]
    fn forward_input_errors() {
        let cfg = NetConfig::reduced(1, 2, 2, 1, false);
        let net = PhotoAppNet::<f32>::zeros(cfg.clone()).unwrap();
        assert!(matches!(net.forward(&[0.0; 3], &vec![0.0; cfg.cond_dim()]), Err(Error::Shape(_))));
        assert!(matches!(net.forward(&[0.0; 2], &[0.0; 1]), Err(Error::Shape(_))));
        assert!(matches!(
            net.forward(&[f32::NAN, 0.0], &vec![0.0; cfg.cond_dim()]),
            Err(Error::Numeric(_))
        ));
    }

    /// Central differences on a scalar objective `sum(c * out)`.
    fn check_grads(cfg: &NetConfig, seed: u64) -> f64 {
        let net = random_net(cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let latent = random_vec(cfg.latent_len(), &mut rng, 1.0);
        let cond = random_vec(cfg.cond_dim(), &mut rng, 1.0);
        let c = random_vec(cfg.latent_len(), &mut rng, 1.0);
        let objective = |n: &PhotoAppNet<f64>, l: &[f64], cd: &[f64]| -> f64 {
            let (o, _) = n.forward(l, cd).unwrap();
            o.iter().zip(&c).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = net.forward(&latent, &cond).unwrap();
        let g = net.backward(&cache, &c).unwrap();
        let eps = 1e-6;
        let mut worst = 0.0f64;
        let mut rel = |analytic: f64, numeric: f64| {
            let e = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(e);
        };
        for i in 0..latent.len() {
            let (mut a, mut b) = (latent.clone(), latent.clone());
            a[i] += eps;
            b[i] -= eps;
            rel(g.d_latent[i], (objective(&net, &a, &cond) - objective(&net, &b, &cond)) / (2.0 * eps));
        }
        for i in 0..cond.len() {
            let (mut a, mut b) = (cond.clone(), cond.clone());
            a[i] += eps;
            b[i] -= eps;
            rel(g.d_cond[i], (objective(&net, &latent, &a) - objective(&net, &latent, &b)) / (2.0 * eps));
        }
        for k in 0..cfg.blocks {
            for t in 0..4 {
                let len = net.blocks()[k].tensors()[t].len();
                for i in 0..len {
                    let mut plus = net.clone();
                    plus.blocks_mut()[k].tensors_mut()[t][i] += eps;
                    let mut minus = net.clone();
                    minus.blocks_mut()[k].tensors_mut()[t][i] -= eps;
                    let numeric = (objective(&plus, &latent, &cond) - objective(&minus, &latent, &cond)) / (2.0 * eps);
                    rel(g.blocks[k].tensors()[t][i], numeric);
                }
            }
        }
        worst
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn analytic_grads_match_finite_differences(seed in 0u64..10_000) {
            let cfg = NetConfig::reduced(2, 3, 8, 4, seed % 2 == 0);
            let worst = check_grads(&cfg, seed);
            prop_assert!(worst < 1e-6, "worst relative error {}", worst);
        }
    }
}
