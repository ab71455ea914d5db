//! Scale-invariant MSE and SSIM, aggregated the way the evaluation tables report them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radiometry_io::HdrImage;

fn check_same_dims(a: &HdrImage, b: &HdrImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "images differ in size: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Plain mean squared error over all values.
pub fn mse(pred: &HdrImage, gt: &HdrImage) -> Result<f64> {
    check_same_dims(pred, gt)?;
    Ok(mse_values(pred.data(), gt.data()))
}

pub fn mse_values<T: Copy + Into<f64>>(pred: &[T], gt: &[T]) -> f64 {
    let n = pred.len().max(1) as f64;
    pred.iter()
        .zip(gt)
        .map(|(p, g)| {
            let d = (*p).into() - (*g).into();
            d * d
        })
        .sum::<f64>()
        / n
}

/// MSE after the single global scale `s* = <pred, gt> / <pred, pred>` is
/// applied to `pred`. An all-zero prediction falls back to plain MSE.
pub fn si_mse(pred: &HdrImage, gt: &HdrImage) -> Result<f64> {
    check_same_dims(pred, gt)?;
    Ok(si_mse_values(pred.data(), gt.data()))
}

pub fn si_mse_values<T: Copy + Into<f64>>(pred: &[T], gt: &[T]) -> f64 {
    let (mut pg, mut pp) = (0.0f64, 0.0f64);
    for (p, g) in pred.iter().zip(gt) {
        let (p, g): (f64, f64) = ((*p).into(), (*g).into());
        pg += p * g;
        pp += p * p;
    }
    if pp == 0.0 {
        return mse_values(pred, gt);
    }
    let s = pg / pp;
    let n = pred.len() as f64;
    pred.iter()
        .zip(gt)
        .map(|(p, g)| {
            let d = s * (*p).into() - (*g).into();
            d * d
        })
        .sum::<f64>()
        / n
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - c;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable valid-mode filter of a single plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, w, h, &k);
    let mu_b = filter_valid(b, w, h, &k);
    let s_aa = filter_valid(&aa, w, h, &k);
    let s_bb = filter_valid(&bb, w, h, &k);
    let s_ab = filter_valid(&ab, w, h, &k);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = s_aa[i] - ma * ma;
        let vb = s_bb[i] - mb * mb;
        let cov = s_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5, dynamic range 1),
/// computed per channel and averaged. Inputs are expected in `[0, 1]`.
pub fn ssim(pred: &HdrImage, gt: &HdrImage) -> Result<f64> {
    check_same_dims(pred, gt)?;
    let (w, h) = pred.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Parameter(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {w}x{h}"
        )));
    }
    let plane = |img: &HdrImage, c: usize| -> Vec<f64> {
        img.data().iter().skip(c).step_by(3).map(|v| f64::from(*v)).collect()
    };
    let sum: f64 = (0..3)
        .map(|c| ssim_plane(&plane(pred, c), &plane(gt, c), w, h))
        .sum();
    Ok(sum / 3.0)
}

/// Clamps every value into `[0, 1]` for metric computation.
pub fn clamp_unit(img: &HdrImage) -> HdrImage {
    let data = img.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    HdrImage::new(img.width(), img.height(), data).expect("clamped values are valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub si_mse: f64,
    pub ssim: f64,
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sigma: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            sigma: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub pairs: Vec<PairMetrics>,
    pub si_mse: Summary,
    pub ssim: Summary,
}

impl EvalReport {
    pub fn from_pairs(label: impl Into<String>, pairs: Vec<PairMetrics>) -> Self {
        let si: Vec<f64> = pairs.iter().map(|p| p.si_mse).collect();
        let ss: Vec<f64> = pairs.iter().map(|p| p.ssim).collect();
        Self {
            label: label.into(),
            si_mse: Summary::of(&si),
            ssim: Summary::of(&ss),
            pairs,
        }
    }

    /// `metric,mean,sigma` rows, one per metric.
    pub fn to_csv(&self) -> String {
        format!(
            "set,metric,mean,sigma\n{0},si_mse,{1},{2}\n{0},ssim,{3},{4}\n",
            self.label, self.si_mse.mean, self.si_mse.sigma, self.ssim.mean, self.ssim.sigma
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Scores every `(prediction, ground truth)` pair. Pairs are processed in
/// parallel; aggregation happens afterwards in input order.
pub fn evaluate(pairs: &[(HdrImage, HdrImage)], label: &str) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Parameter("nothing to evaluate".into()));
    }
    let metrics = pairs
        .par_iter()
        .map(|(pred, gt)| {
            Ok(PairMetrics {
                si_mse: si_mse(pred, gt)?,
                ssim: ssim(pred, gt)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_pairs(label, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_image(w: usize, h: usize) -> HdrImage {
        let mut img = HdrImage::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = 0.5 + 0.3 * ((x as f32) * 0.3).sin() * ((y as f32) * 0.2).cos();
                img.set_pixel(x, y, [v, 0.8 * v, 1.0 - v]);
            }
        }
        img
    }

    fn noisy(img: &HdrImage, amp: f32, seed: u64) -> HdrImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = img
            .data()
            .iter()
            .map(|v| (v + amp * rng.gen_range(-1.0f32..1.0)).clamp(0.0, 1.0))
            .collect();
        HdrImage::new(img.width(), img.height(), data).unwrap()
    }

    #[test]
    fn si_mse_reference_values() {
        assert_eq!(si_mse_values(&[1.0, 0.0], &[1.0, 1.0]), 0.5);
        let img = smooth_image(8, 8);
        assert_eq!(si_mse(&img, &img).unwrap(), 0.0);
        assert!(si_mse(&img.scaled(2.0), &img).unwrap() < 1e-15);
        assert_eq!(si_mse_values(&[0.0, 0.0], &[1.0, 3.0]), 5.0);
        assert!(si_mse(&img, &HdrImage::zeros(4, 4)).is_err());
    }

    #[test]
    fn si_mse_scale_invariance() {
        let a = noisy(&smooth_image(16, 16), 0.2, 1);
        let b = smooth_image(16, 16);
        let base = si_mse(&a, &b).unwrap();
        let (a64, b64): (Vec<f64>, Vec<f64>) = (
            a.data().iter().map(|v| f64::from(*v)).collect(),
            b.data().iter().map(|v| f64::from(*v)).collect(),
        );
        assert_eq!(si_mse_values(&a64, &b64), base);
        for c in [0.5, 2.0, 10.0] {
            let scaled: Vec<f64> = a64.iter().map(|v| v * c).collect();
            let s = si_mse_values(&scaled, &b64);
            assert!((s - base).abs() <= 1e-12 * base, "c={c}: {s} vs {base}");
        }
        // binary scales are exact in 32-bit too
        for c in [0.5f32, 2.0] {
            assert_eq!(si_mse(&a.scaled(c), &b).unwrap(), base);
        }
    }

    #[test]
    fn ssim_self_is_one() {
        let img = smooth_image(24, 20);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_decreases_with_noise() {
        let img = smooth_image(32, 32);
        let scores: Vec<f64> = [0.02, 0.08, 0.2]
            .iter()
            .map(|&a| ssim(&noisy(&img, a, 3), &img).unwrap())
            .collect();
        assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let (a, b) = (0.3f64, 0.7f64);
        let ia = HdrImage::constant(12, 12, [a as f32; 3]);
        let ib = HdrImage::constant(12, 12, [b as f32; 3]);
        let (a, b) = (f64::from(a as f32), f64::from(b as f32));
        let c1 = 0.01f64.powi(2);
        let expected = (2.0 * a * b + c1) / (a * a + b * b + c1);
        assert!((ssim(&ia, &ib).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let img = HdrImage::zeros(10, 20);
        assert!(matches!(ssim(&img, &img), Err(Error::Parameter(_))));
    }

    #[test]
    fn report_aggregates() {
        let img = smooth_image(16, 16);
        let r = evaluate(&[(img.clone(), img.clone())], "set1").unwrap();
        assert_eq!(r.si_mse.mean, 0.0);
        assert!((r.ssim.mean - 1.0).abs() < 1e-9);
        assert_eq!(r.si_mse.sigma, 0.0);
        assert!(r.ssim.sigma.abs() < 1e-12);

        let pairs = vec![
            (noisy(&img, 0.1, 1), img.clone()),
            (noisy(&img, 0.3, 2), img.clone()),
            (noisy(&img, 0.05, 3), img.clone()),
        ];
        let r = evaluate(&pairs, "set2").unwrap();
        let mean = r.pairs.iter().map(|p| p.si_mse).sum::<f64>() / 3.0;
        assert_eq!(r.si_mse.mean, mean);
        assert!(r.to_csv().contains("set2,ssim,"));
        assert!(r.to_json().unwrap().contains("\"label\": \"set2\""));
        assert!(evaluate(&[], "x").is_err());
    }

    proptest! {
        #[test]
        fn si_mse_never_exceeds_mse(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f32> = (0..48).map(|_| rng.gen_range(0.0f32..1.0)).collect();
            let b: Vec<f32> = (0..48).map(|_| rng.gen_range(0.0f32..1.0)).collect();
            let (s, m) = (si_mse_values(&a, &b), mse_values(&a, &b));
            prop_assert!(s.is_finite() && s <= m + 1e-12);
        }

        #[test]
        fn ssim_symmetric(seed in 0u64..100) {
            let img = smooth_image(16, 16);
            let a = noisy(&img, 0.1, seed);
            let b = noisy(&img, 0.2, seed + 1);
            let (x, y) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
            prop_assert!((x - y).abs() < 1e-9 && x.is_finite());
        }
    }
}
