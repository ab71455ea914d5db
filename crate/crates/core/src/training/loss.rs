//! Latent and perceptual loss terms with analytic gradients.

use serde::{Deserialize, Serialize};

use super::features::{pyramid, pyramid_adjoint, FeatureExtractor, FeatureMap};
use crate::error::{Error, Result};
use crate::latent_edit::{LatentCode, Real};
use crate::radiometry_io::HdrImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub latent: f64,
    pub perceptual: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            latent: 1.0,
            perceptual: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub latent: f64,
    pub perceptual: f64,
    pub total: f64,
}

/// Gradients of the total loss with respect to the predicted latent and image.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub d_latent: Vec<f32>,
    pub d_image: Vec<f32>,
}

fn mean_sq_diff<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        s = s + d * d;
    }
    s / T::lit(a.len() as f64)
}

/// Mean squared difference between latent codes.
pub fn latent_loss(pred: &LatentCode, gt: &LatentCode) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "latent shapes differ: {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let a: Vec<f64> = pred.data().iter().map(|v| f64::from(*v)).collect();
    let b: Vec<f64> = gt.data().iter().map(|v| f64::from(*v)).collect();
    Ok(mean_sq_diff(&a, &b))
}

fn check_images(pred: &HdrImage, gt: &HdrImage) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::Shape(format!(
            "image sizes differ: {:?} vs {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    Ok(())
}

fn feature_mse(a: &FeatureMap, b: &FeatureMap) -> f64 {
    let n = a.data.len().max(1) as f64;
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = f64::from(*x) - f64::from(*y);
            d * d
        })
        .sum::<f64>()
        / n
}

/// Sum over feature scales of the mean squared feature difference.
pub fn perceptual_loss(pred: &HdrImage, gt: &HdrImage, phi: &dyn FeatureExtractor) -> Result<f64> {
    check_images(pred, gt)?;
    let (fp, fg) = (phi.extract(pred)?, phi.extract(gt)?);
    Ok(fp.iter().zip(&fg).map(|(a, b)| feature_mse(a, b)).sum())
}

/// Weighted sum of both terms with gradients for the predicted latent and image.
pub fn total_loss(
    pred_latent: &LatentCode,
    gt_latent: &LatentCode,
    pred_image: &HdrImage,
    gt_image: &HdrImage,
    phi: &dyn FeatureExtractor,
    weights: LossWeights,
) -> Result<(LossTerms, LossGrads)> {
    let latent = latent_loss(pred_latent, gt_latent)?;
    check_images(pred_image, gt_image)?;
    let (fp, fg) = (phi.extract(pred_image)?, phi.extract(gt_image)?);
    let perceptual: f64 = fp.iter().zip(&fg).map(|(a, b)| feature_mse(a, b)).sum();

    let n = pred_latent.data().len() as f64;
    let d_latent = pred_latent
        .data()
        .iter()
        .zip(gt_latent.data())
        .map(|(p, g)| (weights.latent * 2.0 * (f64::from(*p) - f64::from(*g)) / n) as f32)
        .collect();
    let d_features: Vec<FeatureMap> = fp
        .iter()
        .zip(&fg)
        .map(|(a, b)| {
            let n = a.data.len().max(1) as f64;
            FeatureMap {
                data: a
                    .data
                    .iter()
                    .zip(&b.data)
                    .map(|(x, y)| (weights.perceptual * 2.0 * (f64::from(*x) - f64::from(*y)) / n) as f32)
                    .collect(),
                ..a.clone()
            }
        })
        .collect();
    let d_image = phi.pullback(pred_image, &d_features)?;
    Ok((
        LossTerms {
            latent,
            perceptual,
            total: weights.latent * latent + weights.perceptual * perceptual,
        },
        LossGrads { d_latent, d_image },
    ))
}

/// [`total_loss`] with the pyramid extractor on raw interleaved buffers, in
/// any precision. Returns the loss and its gradients for latent and image.
#[allow(clippy::too_many_arguments)]
pub fn pyramid_total_loss<T: Real>(
    pred_latent: &[T],
    gt_latent: &[T],
    pred_image: &[T],
    gt_image: &[T],
    width: usize,
    height: usize,
    levels: usize,
    weights: LossWeights,
) -> Result<(T, Vec<T>, Vec<T>)> {
    if pred_latent.len() != gt_latent.len() || pred_latent.is_empty() {
        return Err(Error::Shape("latent lengths differ".into()));
    }
    if pred_image.len() != width * height * 3 || gt_image.len() != pred_image.len() {
        return Err(Error::Shape("image buffers do not match the stated size".into()));
    }
    let (wl, wp) = (T::lit(weights.latent), T::lit(weights.perceptual));
    let two = T::lit(2.0);
    let n = T::lit(pred_latent.len() as f64);
    let mut loss = wl * mean_sq_diff(pred_latent, gt_latent);
    let d_latent = pred_latent
        .iter()
        .zip(gt_latent)
        .map(|(p, g)| wl * two * (*p - *g) / n)
        .collect();
    let fp = pyramid(pred_image, width, height, 3, levels);
    let fg = pyramid(gt_image, width, height, 3, levels);
    let mut d_levels = Vec::with_capacity(levels);
    for ((a, _, _), (b, _, _)) in fp.iter().zip(&fg) {
        if a.is_empty() {
            d_levels.push(Vec::new());
            continue;
        }
        loss = loss + wp * mean_sq_diff(a, b);
        let n = T::lit(a.len() as f64);
        d_levels.push(a.iter().zip(b).map(|(x, y)| wp * two * (*x - *y) / n).collect());
    }
    let d_image = pyramid_adjoint(&d_levels, width, height, 3);
    Ok((loss, d_latent, d_image))
}
