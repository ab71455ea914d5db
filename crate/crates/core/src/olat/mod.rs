//! One-light-at-a-time stacks and relighting by linear combination.

mod dataset;
mod pairs;
mod synth;

pub use dataset::{
    CameraEntry, CameraRecord, Dataset, EnvEntry, EnvRecord, IdentityEntry, IdentityRecord,
    Manifest, Split,
};
pub use pairs::{make_eval_sets, make_training_pairs, EvalSets, PairEnd, TrainingPair};
pub use synth::{
    random_sky, render_olat, synth_lambertian_world, write_toy_dataset, AlbedoTexture, SynthWorld,
    ToyWorldConfig,
};

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envmap::{LightWeights, Vec3};
use crate::error::{Error, Result};
use crate::radiometry_io::HdrImage;

/// Camera orientation as intrinsic Y-X-Z Euler angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CameraPose {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

fn wrap_angle(a: f64) -> f64 {
    // (-pi, pi]
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

impl CameraPose {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Result<Self> {
        if !(yaw.is_finite() && pitch.is_finite() && roll.is_finite()) {
            return Err(Error::Parameter("pose angles must be finite".into()));
        }
        Ok(Self {
            yaw: wrap_angle(yaw),
            pitch: wrap_angle(pitch),
            roll: wrap_angle(roll),
        })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.yaw, self.pitch, self.roll]
    }

    /// Camera-to-world rotation `Ry(yaw) * Rx(pitch) * Rz(roll)`, row-major.
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let (sr, cr) = self.roll.sin_cos();
        let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let rx = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
        let rz = [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]];
        mat_mul(mat_mul(ry, rx), rz)
    }

    pub fn to_world(&self, v: Vec3) -> Vec3 {
        let r = self.rotation();
        [
            r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
        ]
    }
}

fn mat_mul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

/// The captures of one identity from one camera, image `i` lit only by basis light `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct OlatStack {
    pub identity_id: String,
    pub camera_id: String,
    pub pose: CameraPose,
    images: Vec<HdrImage>,
}

impl OlatStack {
    pub fn new(
        identity_id: impl Into<String>,
        camera_id: impl Into<String>,
        pose: CameraPose,
        images: Vec<HdrImage>,
    ) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Shape("OLAT stack has no images".into()))?;
        let dims = first.dims();
        if let Some(i) = images.iter().position(|im| im.dims() != dims) {
            return Err(Error::Shape(format!(
                "OLAT image {i} is {:?}, expected {:?}",
                images[i].dims(),
                dims
            )));
        }
        if let Some(i) = images.iter().position(|im| !im.is_radiance()) {
            return Err(Error::Parameter(format!("OLAT image {i} has negative values")));
        }
        Ok(Self {
            identity_id: identity_id.into(),
            camera_id: camera_id.into(),
            pose,
            images,
        })
    }

    pub fn light_count(&self) -> usize {
        self.images.len()
    }

    pub fn images(&self) -> &[HdrImage] {
        &self.images
    }

    pub fn dims(&self) -> (usize, usize) {
        self.images[0].dims()
    }

    /// Reads `light_000.hdr ..` from a directory.
    pub fn load_dir(
        dir: impl AsRef<std::path::Path>,
        lights: usize,
        identity_id: &str,
        camera_id: &str,
        pose: CameraPose,
    ) -> Result<Self> {
        let dir = dir.as_ref();
        let images = (0..lights)
            .map(|i| HdrImage::read_hdr_file(dir.join(olat_file_name(i))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(identity_id, camera_id, pose, images)
    }

    pub fn write_dir(&self, dir: impl AsRef<std::path::Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, img) in self.images.iter().enumerate() {
            img.write_hdr_file(dir.join(olat_file_name(i)))?;
        }
        Ok(())
    }
}

pub fn olat_file_name(i: usize) -> String {
    format!("light_{i:03}.hdr")
}

/// Weighted sum of the OLAT images, per channel.
///
/// Accumulates in `f64` in light order and rounds once to `f32`, so the result
/// is bitwise identical to a naive per-pixel loop and independent of the worker count.
pub fn relight(stack: &OlatStack, weights: &LightWeights) -> Result<HdrImage> {
    if weights.light_count() != stack.light_count() {
        return Err(Error::Shape(format!(
            "{} weights for a {}-light stack",
            weights.light_count(),
            stack.light_count()
        )));
    }
    let (w, h) = stack.dims();
    let row_len = w * 3;
    let active: Vec<(usize, [f64; 3])> = (0..stack.light_count())
        .filter_map(|i| {
            let l = weights.light(i);
            (l != [0.0; 3]).then(|| (i, l.map(f64::from)))
        })
        .collect();
    let mut out = HdrImage::zeros(w, h);
    out.data_mut()
        .par_chunks_exact_mut(row_len)
        .enumerate()
        .for_each_init(
            || vec![0.0f64; row_len],
            |acc, (y, dst)| {
                acc.fill(0.0);
                for &(i, l) in &active {
                    let src = &stack.images[i].data()[y * row_len..(y + 1) * row_len];
                    for (a, px) in acc.chunks_exact_mut(3).zip(src.chunks_exact(3)) {
                        a[0] += l[0] * f64::from(px[0]);
                        a[1] += l[1] * f64::from(px[1]);
                        a[2] += l[2] * f64::from(px[2]);
                    }
                }
                for (d, a) in dst.iter_mut().zip(acc.iter()) {
                    *d = *a as f32;
                }
            },
        );
    Ok(out)
}

/// Percentile of luminance mapped to this value before gamma.
pub const AUTO_EXPOSURE_TARGET: f32 = 0.95;
pub const AUTO_EXPOSURE_PERCENTILE: f64 = 0.99;
pub const DISPLAY_GAMMA: f32 = 2.2;

/// Exposure that maps the 99th-percentile luminance to 0.95; 1 for black images.
pub fn auto_exposure(img: &HdrImage) -> f32 {
    let mut lum = img.luminance();
    if lum.is_empty() {
        return 1.0;
    }
    let k = ((lum.len() - 1) as f64 * AUTO_EXPOSURE_PERCENTILE).round() as usize;
    let (_, p, _) = lum.select_nth_unstable_by(k, f32::total_cmp);
    if *p > 0.0 {
        AUTO_EXPOSURE_TARGET / *p
    } else {
        1.0
    }
}

/// Display-referred `[0, 1]` float image fed to the encoder, losses and metrics:
/// auto-exposure, clamp, gamma 2.2.
pub fn network_image(hdr: &HdrImage) -> HdrImage {
    let e = auto_exposure(hdr);
    let inv_gamma = 1.0 / DISPLAY_GAMMA;
    let data = hdr
        .data()
        .iter()
        .map(|v| (e * v).clamp(0.0, 1.0).powf(inv_gamma))
        .collect();
    HdrImage::new(hdr.width(), hdr.height(), data).expect("clamped values are valid radiance")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envmap::{fibonacci_basis, resample_to_basis, LatLongEnvMap};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stack(lights: usize, w: usize, h: usize, seed: u64) -> OlatStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = (0..lights)
            .map(|_| {
                let d = (0..w * h * 3).map(|_| rng.gen_range(0.0f32..1.0)).collect();
                HdrImage::new(w, h, d).unwrap()
            })
            .collect();
        OlatStack::new("id", "cam", CameraPose::default(), images).unwrap()
    }

    fn random_weights(lights: usize, rng: &mut ChaCha8Rng) -> LightWeights {
        LightWeights::new((0..lights * 3).map(|_| rng.gen_range(0.0f32..2.0)).collect()).unwrap()
    }

    /// Independent triple loop, pixel-major.
    fn relight_oracle(stack: &OlatStack, w: &LightWeights) -> Vec<f32> {
        let n = stack.images()[0].data().len();
        (0..n)
            .map(|j| {
                let c = j % 3;
                let mut acc = 0.0f64;
                for (i, img) in stack.images().iter().enumerate() {
                    acc += f64::from(w.values()[3 * i + c]) * f64::from(img.data()[j]);
                }
                acc as f32
            })
            .collect()
    }

    #[test]
    fn indicator_reproduces_olat_image() {
        let stack = random_stack(12, 9, 7, 1);
        for k in 0..12 {
            let out = relight(&stack, &LightWeights::indicator(12, k)).unwrap();
            assert_eq!(out.data(), stack.images()[k].data());
        }
    }

    #[test]
    fn zero_weights_black() {
        let stack = random_stack(5, 4, 4, 2);
        let out = relight(&stack, &LightWeights::zeros(5)).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn matches_oracle_bitwise() {
        let stack = random_stack(20, 11, 6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random_weights(20, &mut rng);
        assert_eq!(relight(&stack, &w).unwrap().data(), &relight_oracle(&stack, &w)[..]);
    }

    #[test]
    fn weight_count_mismatch() {
        let stack = random_stack(5, 4, 4, 2);
        assert!(matches!(relight(&stack, &LightWeights::zeros(6)), Err(Error::Shape(_))));
    }

    #[test]
    fn stack_rejects_mixed_sizes() {
        let imgs = vec![HdrImage::zeros(4, 4), HdrImage::zeros(4, 5)];
        assert!(matches!(
            OlatStack::new("a", "b", CameraPose::default(), imgs),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn pose_normalization_and_rotation() {
        let p = CameraPose::new(3.0 * PI, -PI, 0.5).unwrap();
        assert!((p.yaw - PI).abs() < 1e-12);
        assert!((p.pitch - PI).abs() < 1e-12);
        assert!(CameraPose::new(f64::NAN, 0.0, 0.0).is_err());
        // yaw of 90 degrees turns the camera's +z into world +x
        let q = CameraPose::new(PI / 2.0, 0.0, 0.0).unwrap();
        let v = q.to_world([0.0, 0.0, 1.0]);
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12 && v[2].abs() < 1e-12);
        // pitch applied after yaw in the intrinsic chain
        let r = CameraPose::new(0.3, 0.2, 0.1).unwrap().rotation();
        for i in 0..3 {
            let n: f64 = (0..3).map(|k| r[i][k] * r[i][k]).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn network_image_range_and_exposure() {
        let mut img = HdrImage::zeros(10, 10);
        for y in 0..10 {
            for x in 0..10 {
                let v = (y * 10 + x) as f32;
                img.set_pixel(x, y, [v, v, v]);
            }
        }
        let e = auto_exposure(&img);
        assert!((e - 0.95 / 98.0).abs() < 1e-6);
        let n = network_image(&img);
        assert!(n.data().iter().all(|v| (0.0..=1.0).contains(v)));
        // scale invariance of the auto-exposed result
        let n2 = network_image(&img.scaled(7.0));
        for (a, b) in n.data().iter().zip(n2.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        assert_eq!(auto_exposure(&HdrImage::zeros(3, 3)), 1.0);
    }

    #[test]
    fn env_driven_relight_of_real_basis() {
        let basis = fibonacci_basis(150).unwrap();
        let stack = random_stack(150, 4, 4, 8);
        let mut img = HdrImage::zeros(32, 16);
        img.set_pixel(5, 5, [1.0, 1.0, 1.0]);
        let env = LatLongEnvMap::new(img).unwrap();
        let w = resample_to_basis(&env, &basis).unwrap();
        let k = basis.nearest(env.texel_direction(5, 5));
        let out = relight(&stack, &w).unwrap();
        let s = w.light(k)[0];
        for (a, b) in out.data().iter().zip(stack.images()[k].data()) {
            assert!((a - s * b).abs() <= 1e-6 * (s * b).max(1e-12));
        }
    }

    proptest! {
        #[test]
        fn linear_in_weights(seed in 0u64..1000, a in 0.0f32..3.0, b in 0.0f32..3.0) {
            let stack = random_stack(10, 5, 3, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
            let (w1, w2) = (random_weights(10, &mut rng), random_weights(10, &mut rng));
            let lhs = relight(&stack, &w1.combine(a, &w2, b).unwrap()).unwrap();
            let r1 = relight(&stack, &w1).unwrap();
            let r2 = relight(&stack, &w2).unwrap();
            for ((l, x), y) in lhs.data().iter().zip(r1.data()).zip(r2.data()) {
                let rhs = a * x + b * y;
                prop_assert!((l - rhs).abs() <= 1e-5 * rhs.abs().max(1e-6));
            }
        }

        #[test]
        fn monotone_in_weights(seed in 0u64..1000, k in 0usize..10, bump in 0.0f32..5.0) {
            let stack = random_stack(10, 4, 4, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_weights(10, &mut rng);
            let mut bumped = w.values().to_vec();
            bumped[3 * k + (seed as usize % 3)] += bump;
            let lo = relight(&stack, &w).unwrap();
            let hi = relight(&stack, &LightWeights::new(bumped).unwrap()).unwrap();
            prop_assert!(lo.data().iter().zip(hi.data()).all(|(a, b)| a <= b));
        }
    }
}
