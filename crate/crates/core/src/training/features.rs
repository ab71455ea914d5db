//! Perceptual feature extractors.

use crate::error::{Error, Result};
use crate::latent_edit::Real;
use crate::radiometry_io::HdrImage;

/// One scale of extracted features, interleaved like the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Differentiable image features compared by the perceptual loss.
pub trait FeatureExtractor: Send + Sync {
    fn descriptor(&self) -> String;

    fn extract(&self, image: &HdrImage) -> Result<Vec<FeatureMap>>;

    /// Vector-Jacobian product at `image`: maps per-feature gradients back to
    /// a gradient over the interleaved image values.
    fn pullback(&self, image: &HdrImage, d_features: &[FeatureMap]) -> Result<Vec<f32>>;
}

pub const PYRAMID_LEVELS: usize = 4;
pub const MIN_PYRAMID_SIZE: usize = 16;
const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Binomial image pyramid: level 0 is the image, each next level is a 5-tap
/// binomial blur (edge-replicated) followed by keeping every other pixel.
#[derive(Debug, Clone, Copy)]
pub struct PyramidFeatures {
    pub levels: usize,
}

impl Default for PyramidFeatures {
    fn default() -> Self {
        Self {
            levels: PYRAMID_LEVELS,
        }
    }
}

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Blur-then-decimate of an interleaved raster.
pub fn reduce<T: Real>(src: &[T], w: usize, h: usize, ch: usize) -> (Vec<T>, usize, usize) {
    let k: [T; 5] = BINOMIAL.map(T::lit);
    let mut horiz = vec![T::zero(); w * h * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut s = T::zero();
                for (t, kt) in k.iter().enumerate() {
                    let sx = clamp_index(x as isize + t as isize - 2, w);
                    s = s + *kt * src[(y * w + sx) * ch + c];
                }
                horiz[(y * w + x) * ch + c] = s;
            }
        }
    }
    let (ow, oh) = (w / 2, h / 2);
    let mut out = vec![T::zero(); ow * oh * ch];
    for oy in 0..oh {
        let y = 2 * oy;
        for ox in 0..ow {
            let x = 2 * ox;
            for c in 0..ch {
                let mut s = T::zero();
                for (t, kt) in k.iter().enumerate() {
                    let sy = clamp_index(y as isize + t as isize - 2, h);
                    s = s + *kt * horiz[(sy * w + x) * ch + c];
                }
                out[(oy * ow + ox) * ch + c] = s;
            }
        }
    }
    (out, ow, oh)
}

/// Adjoint of [`reduce`]: scatters a gradient on the reduced raster back onto `w x h`.
pub fn reduce_adjoint<T: Real>(grad: &[T], w: usize, h: usize, ch: usize) -> Vec<T> {
    let k: [T; 5] = BINOMIAL.map(T::lit);
    let (ow, oh) = (w / 2, h / 2);
    let mut horiz = vec![T::zero(); w * h * ch];
    for oy in 0..oh {
        let y = 2 * oy;
        for ox in 0..ow {
            let x = 2 * ox;
            for c in 0..ch {
                let g = grad[(oy * ow + ox) * ch + c];
                for (t, kt) in k.iter().enumerate() {
                    let sy = clamp_index(y as isize + t as isize - 2, h);
                    let i = (sy * w + x) * ch + c;
                    horiz[i] = horiz[i] + *kt * g;
                }
            }
        }
    }
    let mut out = vec![T::zero(); w * h * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let g = horiz[(y * w + x) * ch + c];
                if g == T::zero() {
                    continue;
                }
                for (t, kt) in k.iter().enumerate() {
                    let sx = clamp_index(x as isize + t as isize - 2, w);
                    let i = (y * w + sx) * ch + c;
                    out[i] = out[i] + *kt * g;
                }
            }
        }
    }
    out
}

/// All pyramid levels of an interleaved raster, finest first.
pub fn pyramid<T: Real>(src: &[T], w: usize, h: usize, ch: usize, levels: usize) -> Vec<(Vec<T>, usize, usize)> {
    let mut out = vec![(src.to_vec(), w, h)];
    for _ in 1..levels {
        let (prev, pw, ph) = out.last().expect("level 0 present");
        let next = reduce(prev, *pw, *ph, ch);
        out.push(next);
    }
    out
}

/// Adjoint of [`pyramid`]: sums every level's gradient back onto level 0.
pub fn pyramid_adjoint<T: Real>(grads: &[Vec<T>], w: usize, h: usize, ch: usize) -> Vec<T> {
    let mut sizes = vec![(w, h)];
    for _ in 1..grads.len() {
        let (pw, ph) = *sizes.last().expect("nonempty");
        sizes.push((pw / 2, ph / 2));
    }
    let mut acc = grads.last().cloned().unwrap_or_default();
    for lvl in (1..grads.len()).rev() {
        let (pw, ph) = sizes[lvl - 1];
        let mut up = reduce_adjoint(&acc, pw, ph, ch);
        for (u, g) in up.iter_mut().zip(&grads[lvl - 1]) {
            *u = *u + *g;
        }
        acc = up;
    }
    acc
}

impl PyramidFeatures {
    fn check(&self, w: usize, h: usize) -> Result<()> {
        if w < MIN_PYRAMID_SIZE || h < MIN_PYRAMID_SIZE {
            return Err(Error::Parameter(format!(
                "pyramid features need at least {MIN_PYRAMID_SIZE}x{MIN_PYRAMID_SIZE}, got {w}x{h}"
            )));
        }
        if self.levels == 0 {
            return Err(Error::Config("pyramid needs at least one level".into()));
        }
        Ok(())
    }
}

impl FeatureExtractor for PyramidFeatures {
    fn descriptor(&self) -> String {
        format!("binomial-pyramid-{}", self.levels)
    }

    fn extract(&self, image: &HdrImage) -> Result<Vec<FeatureMap>> {
        let (w, h) = image.dims();
        self.check(w, h)?;
        Ok(pyramid(image.data(), w, h, 3, self.levels)
            .into_iter()
            .map(|(data, width, height)| FeatureMap {
                width,
                height,
                channels: 3,
                data,
            })
            .collect())
    }

    fn pullback(&self, image: &HdrImage, d_features: &[FeatureMap]) -> Result<Vec<f32>> {
        let (w, h) = image.dims();
        self.check(w, h)?;
        if d_features.len() != self.levels {
            return Err(Error::Shape(format!(
                "{} feature gradients for {} levels",
                d_features.len(),
                self.levels
            )));
        }
        let grads: Vec<Vec<f32>> = d_features.iter().map(|f| f.data.clone()).collect();
        Ok(pyramid_adjoint(&grads, w, h, 3))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_image_stays_constant() {
        let img = HdrImage::constant(20, 18, [0.25, 0.5, 0.75]);
        let feats = PyramidFeatures::default().extract(&img).unwrap();
        assert_eq!(feats.len(), 4);
        for f in &feats {
            for px in f.data.chunks_exact(3) {
                assert!((px[0] - 0.25).abs() < 1e-7);
                assert!((px[1] - 0.5).abs() < 1e-7);
                assert!((px[2] - 0.75).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn level_sizes_halve() {
        let img = HdrImage::zeros(37, 16);
        let feats = PyramidFeatures::default().extract(&img).unwrap();
        let sizes: Vec<(usize, usize)> = feats.iter().map(|f| (f.width, f.height)).collect();
        assert_eq!(sizes, vec![(37, 16), (18, 8), (9, 4), (4, 2)]);
        assert!(PyramidFeatures::default().extract(&HdrImage::zeros(15, 40)).is_err());
    }

    #[test]
    fn impulse_response_matches_direct_convolution() {
        // single channel 9x9 impulse at (4, 4); interior, so no clamping applies
        let mut src = vec![0.0f64; 81];
        src[4 * 9 + 4] = 1.0;
        let (out, ow, oh) = reduce(&src, 9, 9, 1);
        assert_eq!((ow, oh), (4, 4));
        let k = [1.0, 4.0, 6.0, 4.0, 1.0].map(|v| v / 16.0);
        for oy in 0..4 {
            for ox in 0..4 {
                // blurred value at (2ox, 2oy) = k[x - 4 + 2] * k[y - 4 + 2]
                let tap = |p: usize| {
                    let d = 4isize - 2 * p as isize + 2;
                    if (0..5).contains(&d) {
                        k[d as usize]
                    } else {
                        0.0
                    }
                };
                let expected = tap(ox) * tap(oy);
                assert!((out[oy * 4 + ox] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn adjoint_identity() {
        // <reduce(x), g> == <x, reduce^T(g)> including replicated borders
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, h, ch) = (11, 7, 3);
        let x: Vec<f64> = (0..w * h * ch).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (rx, ow, oh) = reduce(&x, w, h, ch);
        let g: Vec<f64> = (0..ow * oh * ch).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lhs: f64 = rx.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(reduce_adjoint(&g, w, h, ch)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        let levels = pyramid(&x, w, h, ch, 3);
        let gs: Vec<Vec<f64>> = levels
            .iter()
            .map(|(l, _, _)| l.iter().map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let lhs: f64 = levels
            .iter()
            .zip(&gs)
            .map(|((l, _, _), g)| l.iter().zip(g).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        let rhs: f64 = x.iter().zip(pyramid_adjoint(&gs, w, h, ch)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
