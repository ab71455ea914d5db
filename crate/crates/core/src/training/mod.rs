//! Loss terms, feature extractors, Adam, the training loop and checkpoints.

mod adam;
mod checkpoint;
mod features;
mod loss;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint_file, save_checkpoint, write_checkpoint_file, Checkpoint};
pub use features::{pyramid, pyramid_adjoint, reduce, reduce_adjoint, FeatureExtractor, FeatureMap, PyramidFeatures};
pub use loss::{latent_loss, perceptual_loss, pyramid_total_loss, total_loss, LossGrads, LossTerms, LossWeights};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent_edit::{
    ConditionVector, EnvNormalization, Generator, LatentCode, NetConfig, NetGrads, PhotoAppNet, PoseEncoding, Real,
    ToyGenerator,
};
use crate::metrics::{clamp_unit, evaluate, EvalReport};
use crate::olat::{network_image, Dataset, TrainingPair};
use crate::radiometry_io::HdrImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub env_normalization: EnvNormalization,
    pub pose_encoding: PoseEncoding,
    pub loss_weights: LossWeights,
    pub use_q: bool,
    pub hidden: usize,
    /// Save every this many steps; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub generator_seed: u64,
    pub image_size: usize,
    pub pairs_per_identity: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 1,
            max_steps: 5000,
            seed: 0,
            env_normalization: EnvNormalization::None,
            pose_encoding: PoseEncoding::Radians,
            loss_weights: LossWeights::default(),
            use_q: false,
            hidden: 512,
            checkpoint_every: 0,
            generator_seed: 0,
            image_size: 64,
            pairs_per_identity: 300,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be at least 1".into()));
        }
        let w = self.loss_weights;
        if !(w.latent >= 0.0 && w.perceptual >= 0.0 && w.latent.is_finite() && w.perceptual.is_finite()) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Network layout for a generator's latent shape and an environment basis size.
    pub fn net_config(&self, latent_shape: (usize, usize), env_dim: usize) -> NetConfig {
        NetConfig {
            blocks: latent_shape.0,
            latent_dim: latent_shape.1,
            hidden: self.hidden,
            env_dim,
            use_q: self.use_q,
            pose_encoding: self.pose_encoding,
            env_normalization: self.env_normalization,
            seed: self.seed,
        }
    }

    /// Rejects checkpoints whose conditioning layout differs from this config.
    pub fn check_compatible(&self, net: &NetConfig) -> Result<()> {
        if net.use_q != self.use_q {
            return Err(Error::Config(format!(
                "checkpoint was trained with use_q={}, config asks for use_q={}",
                net.use_q, self.use_q
            )));
        }
        if net.pose_encoding != self.pose_encoding || net.env_normalization != self.env_normalization {
            return Err(Error::Config("checkpoint conditioning differs from the config".into()));
        }
        if net.hidden != self.hidden {
            return Err(Error::Config(format!(
                "checkpoint hidden width {} differs from config {}",
                net.hidden, self.hidden
            )));
        }
        Ok(())
    }
}

/// A pair with both ends already in latent space.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub pair: TrainingPair,
    pub source_latent: Arc<LatentCode>,
    pub target_latent: Arc<LatentCode>,
    /// Ground truth in the generator's image space.
    pub target_image: Arc<HdrImage>,
    pub cond: ConditionVector,
}

/// A relit image projected through the generator: its latent and its decoding.
#[derive(Debug, Clone)]
pub struct EncodedView {
    pub latent: Arc<LatentCode>,
    pub image: Arc<HdrImage>,
}

/// Encodes the network image of `(identity, camera, env)`.
pub fn encode_view(dataset: &Dataset, generator: &dyn Generator, identity: &str, camera: &str, env: &str) -> Result<EncodedView> {
    let img = network_image(&dataset.relit(identity, camera, env)?);
    let latent = generator.encode(&img)?;
    let image = generator.decode(&latent)?;
    Ok(EncodedView {
        latent: Arc::new(latent),
        image: Arc::new(image),
    })
}

type ViewKey = (String, String, String);

/// Resolves pairs against the dataset, encoding each distinct view once.
pub fn prepare_samples(
    dataset: &Dataset,
    pairs: &[TrainingPair],
    generator: &dyn Generator,
    use_q: bool,
) -> Result<Vec<TrainingSample>> {
    if pairs.is_empty() {
        return Err(Error::Config("no training pairs".into()));
    }
    if !generator.can_encode() {
        return Err(Error::Capability("generator has no encoder for image pairs".into()));
    }
    let mut keys: Vec<ViewKey> = pairs
        .iter()
        .flat_map(|p| {
            [&p.source, &p.target].map(|e| (p.identity.clone(), e.camera.clone(), e.env.clone()))
        })
        .collect();
    keys.sort();
    keys.dedup();
    let views: HashMap<ViewKey, EncodedView> = keys
        .par_iter()
        .map(|k| Ok((k.clone(), encode_view(dataset, generator, &k.0, &k.1, &k.2)?)))
        .collect::<Result<_>>()?;
    pairs
        .iter()
        .map(|p| {
            let src = &views[&(p.identity.clone(), p.source.camera.clone(), p.source.env.clone())];
            let tgt = &views[&(p.identity.clone(), p.target.camera.clone(), p.target.env.clone())];
            let cond = ConditionVector::new(
                dataset.env(&p.target.env)?.weights.clone(),
                dataset.camera(&p.identity, &p.target.camera)?.pose,
                p.p,
                use_q.then_some(p.q),
            )?;
            Ok(TrainingSample {
                pair: p.clone(),
                source_latent: src.latent.clone(),
                target_latent: tgt.latent.clone(),
                target_image: tgt.image.clone(),
                cond,
            })
        })
        .collect()
}

/// Loss terms recorded for one optimizer step (batch means, before the update).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub latent: f64,
    pub perceptual: f64,
    pub total: f64,
}

pub fn loss_log_csv(log: &[LossRecord]) -> String {
    let mut s = String::from("step,latent_loss,perceptual_loss,total\n");
    for r in log {
        let _ = writeln!(s, "{},{},{},{}", r.step, r.latent, r.perceptual, r.total);
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: PhotoAppNet<f32>,
    pub adam: AdamState,
    pub log: Vec<LossRecord>,
}

/// Called with `(step, params, optimizer)` every `checkpoint_every` steps.
pub type CheckpointHook<'a> = dyn FnMut(usize, &PhotoAppNet<f32>, &AdamState) -> Result<()> + 'a;

/// Loss and parameter gradients (accumulated into `grads`) for one sample.
pub fn sample_step(
    net: &PhotoAppNet<f32>,
    generator: &dyn Generator,
    phi: &dyn FeatureExtractor,
    sample: &TrainingSample,
    weights: LossWeights,
    grads: &mut NetGrads<f32>,
) -> Result<LossTerms> {
    let features = sample.cond.features(net.config())?;
    let src = &sample.source_latent;
    let (out, cache) = net.forward(src.data(), &features)?;
    let pred = LatentCode::with_shape(src.blocks(), src.dim(), out)?;
    let image = generator.decode(&pred)?;
    let (terms, lg) = total_loss(&pred, &sample.target_latent, &image, &sample.target_image, phi, weights)?;
    if !terms.total.is_finite() {
        return Err(Error::Numeric(format!("loss diverged to {}", terms.total)));
    }
    let mut d_out = lg.d_latent;
    if weights.perceptual != 0.0 {
        let back = generator.decode_pullback(&pred, &lg.d_image)?;
        for (d, b) in d_out.iter_mut().zip(back) {
            *d += b;
        }
    }
    net.backward_accumulate(&cache, &d_out, grads, false)?;
    Ok(terms)
}

/// Adam over seeded shuffles of `samples`; the generator is only read.
pub fn train(
    samples: &[TrainingSample],
    generator: &dyn Generator,
    phi: &dyn FeatureExtractor,
    config: &TrainConfig,
    init: Option<Checkpoint>,
    hook: &mut CheckpointHook<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    let env_dim = samples[0].cond.env.values().len();
    if generator.has_latent_jacobian() == false && config.loss_weights.perceptual != 0.0 {
        return Err(Error::Capability(
            "perceptual loss needs a generator with a latent Jacobian".into(),
        ));
    }
    let (mut net, mut adam) = match init {
        Some(ck) => {
            config.check_compatible(ck.net.config())?;
            let n = ck.net.config().param_count();
            let adam = ck.adam.unwrap_or_else(|| AdamState::new(n));
            (ck.net, adam)
        }
        None => {
            let net = PhotoAppNet::new(config.net_config(generator.latent_shape(), env_dim))?;
            let n = net.config().param_count();
            (net, AdamState::new(n))
        }
    };
    let opt = AdamConfig::with_lr(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut grads = NetGrads::zeros(net.config());
    let mut log = Vec::with_capacity(config.max_steps);
    let b = config.batch_size;
    for step in 0..config.max_steps {
        grads.clear();
        let mut acc = LossTerms::default();
        for _ in 0..b {
            if order.is_empty() {
                order = (0..samples.len()).collect();
                order.shuffle(&mut rng);
                order.reverse();
            }
            let idx = order.pop().expect("refilled above");
            let t = sample_step(&net, generator, phi, &samples[idx], config.loss_weights, &mut grads)
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("step {step}: {m}")),
                    other => other,
                })?;
            acc.latent += t.latent / b as f64;
            acc.perceptual += t.perceptual / b as f64;
            acc.total += t.total / b as f64;
        }
        if b > 1 {
            grads.scale(1.0 / b as f32);
        }
        adam_step(&mut net, &grads, &mut adam, &opt).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("step {step}: {m}")),
            other => other,
        })?;
        log.push(LossRecord {
            step,
            latent: acc.latent,
            perceptual: acc.perceptual,
            total: acc.total,
        });
        if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 {
            hook(step + 1, &net, &adam)?;
        }
    }
    Ok(TrainOutcome { net, adam, log })
}

/// Edited images for each sample, paired with their ground truth.
pub fn predict_samples(
    net: &PhotoAppNet<f32>,
    generator: &dyn Generator,
    samples: &[TrainingSample],
) -> Result<Vec<(HdrImage, HdrImage)>> {
    samples
        .par_iter()
        .map(|s| {
            let edited = net.apply(&s.source_latent, &s.cond)?;
            Ok((clamp_unit(&generator.decode(&edited)?), clamp_unit(&s.target_image)))
        })
        .collect()
}

/// Si-MSE and SSIM of the network's edits against ground truth.
pub fn evaluate_model(
    net: &PhotoAppNet<f32>,
    generator: &dyn Generator,
    samples: &[TrainingSample],
    label: &str,
) -> Result<EvalReport> {
    evaluate(&predict_samples(net, generator, samples)?, label)
}

/// Total loss of one sample as a function of the network parameters, with
/// its gradients, in any precision. Uses the toy generator and the pyramid
/// extractor; this is the objective the gradient checks differentiate.
#[allow(clippy::too_many_arguments)]
pub fn toy_objective<T: Real>(
    net: &PhotoAppNet<T>,
    generator: &ToyGenerator,
    source_latent: &[T],
    cond: &[T],
    target_latent: &[T],
    target_image: &[T],
    levels: usize,
    weights: LossWeights,
) -> Result<(T, NetGrads<T>)> {
    let (out, cache) = net.forward(source_latent, cond)?;
    let image = generator.decode_values(&out);
    let (w, h) = generator.image_dims();
    let (loss, mut d_out, d_image) =
        pyramid_total_loss(&out, target_latent, &image, target_image, w, h, levels, weights)?;
    for (d, b) in d_out.iter_mut().zip(generator.pullback_values(&d_image)) {
        *d = *d + b;
    }
    let grads = net.backward(&cache, &d_out)?;
    Ok((loss, grads))
}
