//! Lat-long environment maps, the discrete light basis, and resampling of an
//! environment onto that basis.
//!
//! Direction convention (y up): `u` in `[0, 1)` maps to azimuth `phi = 2*pi*u`,
//! `v` in `[0, 1]` maps to polar angle `theta = pi*v` measured from `+Y`, and
//!
//! ```text
//! d = (sin(theta) * cos(phi), cos(theta), sin(theta) * sin(phi))
//! ```

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::radiometry_io::HdrImage;

pub type Vec3 = [f64; 3];

pub const CANONICAL_LIGHT_COUNT: usize = 150;

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Equirectangular environment map.
#[derive(Debug, Clone, PartialEq)]
pub struct LatLongEnvMap {
    image: HdrImage,
}

impl LatLongEnvMap {
    pub fn new(image: HdrImage) -> Result<Self> {
        if image.width() < 2 || image.height() < 1 {
            return Err(Error::Parameter(format!(
                "environment map must be at least 2x1, got {}x{}",
                image.width(),
                image.height()
            )));
        }
        if !image.is_radiance() {
            return Err(Error::Parameter("environment map has negative radiance".into()));
        }
        Ok(Self { image })
    }

    pub fn constant(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        Self::new(HdrImage::constant(width, height, rgb))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(HdrImage::read_hdr_file(path)?)
    }

    pub fn image(&self) -> &HdrImage {
        &self.image
    }

    pub fn into_image(self) -> HdrImage {
        self.image
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    /// Direction through the center of texel `(x, y)`.
    pub fn texel_direction(&self, x: usize, y: usize) -> Vec3 {
        let u = (x as f64 + 0.5) / self.width() as f64;
        let v = (y as f64 + 0.5) / self.height() as f64;
        uv_to_direction_unchecked(u, v)
    }

    /// Solid angle of one texel in row `y`: `(2pi/W)(pi/H) sin(theta)`.
    pub fn texel_solid_angle(&self, y: usize) -> f64 {
        texel_solid_angle(self.width(), self.height(), y)
    }

    /// Texel quadrature of the map over the sphere, per channel.
    pub fn integrate(&self) -> [f64; 3] {
        let w = self.width();
        let mut acc = [0.0f64; 3];
        for (y, row) in self.image.data().chunks_exact(w * 3).enumerate() {
            let d_omega = self.texel_solid_angle(y);
            for px in row.chunks_exact(3) {
                for c in 0..3 {
                    acc[c] += f64::from(px[c]) * d_omega;
                }
            }
        }
        acc
    }
}

fn texel_solid_angle(width: usize, height: usize, y: usize) -> f64 {
    let theta = PI * (y as f64 + 0.5) / height as f64;
    (2.0 * PI / width as f64) * (PI / height as f64) * theta.sin()
}

fn uv_to_direction_unchecked(u: f64, v: f64) -> Vec3 {
    let theta = PI * v;
    let phi = 2.0 * PI * u;
    [theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin()]
}

/// Lat-long coordinates to a unit direction.
pub fn uv_to_direction(u: f64, v: f64) -> Result<Vec3> {
    if !(0.0..1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return Err(Error::Parameter(format!("uv ({u}, {v}) outside [0,1)x[0,1]")));
    }
    Ok(uv_to_direction_unchecked(u, v))
}

/// Unit direction to lat-long coordinates; `u` is 0 at the poles.
pub fn direction_to_uv(d: Vec3) -> Result<(f64, f64)> {
    let n = norm(d);
    if (n - 1.0).abs() > 1e-4 {
        return Err(Error::Parameter(format!("direction norm {n} is not 1")));
    }
    let theta = (d[1] / n).clamp(-1.0, 1.0).acos();
    let mut phi = d[2].atan2(d[0]);
    if phi < 0.0 {
        phi += 2.0 * PI;
    }
    let mut u = phi / (2.0 * PI);
    if u >= 1.0 {
        u -= 1.0;
    }
    Ok((u, theta / PI))
}

/// Discrete set of distant lights with their solid angles.
#[derive(Debug, Clone, PartialEq)]
pub struct LightBasis {
    directions: Vec<Vec3>,
    solid_angles: Vec<f64>,
}

impl LightBasis {
    pub fn new(directions: Vec<Vec3>, solid_angles: Vec<f64>) -> Result<Self> {
        if directions.len() < 2 {
            return Err(Error::Parameter("a light basis needs at least 2 lights".into()));
        }
        if directions.len() != solid_angles.len() {
            return Err(Error::Shape(format!(
                "{} directions but {} solid angles",
                directions.len(),
                solid_angles.len()
            )));
        }
        for (i, d) in directions.iter().enumerate() {
            if (norm(*d) - 1.0).abs() > 1e-6 {
                return Err(Error::Parameter(format!("light {i} is not a unit vector")));
            }
        }
        if let Some(i) = solid_angles.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Parameter(format!("light {i} has a non-positive solid angle")));
        }
        for i in 0..directions.len() {
            for j in 0..i {
                if dot(directions[i], directions[j]) > 1.0 - 1e-12 {
                    return Err(Error::Parameter(format!("lights {j} and {i} coincide")));
                }
            }
        }
        Ok(Self {
            directions,
            solid_angles,
        })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.directions
    }

    pub fn solid_angles(&self) -> &[f64] {
        &self.solid_angles
    }

    /// Index of the light with the largest dot product against `d`; ties go to the lower index.
    pub fn nearest(&self, d: Vec3) -> usize {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, l) in self.directions.iter().enumerate() {
            let c = dot(*l, d);
            if c > best_dot {
                best_dot = c;
                best = i;
            }
        }
        best
    }

    /// Parses the plain-text basis format: one `x y z [omega]` per line, `#` comments.
    ///
    /// Directions are normalized. Either every line carries a solid angle or
    /// none does, in which case each light gets `4pi/n`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut directions = Vec::new();
        let mut omegas = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("basis line {}: {e}", lineno + 1)))?;
            if !(3..=4).contains(&vals.len()) {
                return Err(Error::Format(format!(
                    "basis line {}: expected `x y z [omega]`",
                    lineno + 1
                )));
            }
            let d = [vals[0], vals[1], vals[2]];
            let n = norm(d);
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::Format(format!("basis line {}: zero direction", lineno + 1)));
            }
            directions.push([d[0] / n, d[1] / n, d[2] / n]);
            omegas.push(vals.get(3).copied());
        }
        let n = directions.len();
        let solid_angles = if omegas.iter().all(Option::is_none) {
            vec![4.0 * PI / n.max(1) as f64; n]
        } else if omegas.iter().all(Option::is_some) {
            omegas.into_iter().flatten().collect()
        } else {
            return Err(Error::Format(
                "basis file mixes lines with and without solid angles".into(),
            ));
        };
        Self::new(directions, solid_angles)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# x y z omega_sr\n");
        for (d, w) in self.directions.iter().zip(&self.solid_angles) {
            s.push_str(&format!("{:.17} {:.17} {:.17} {:.17}\n", d[0], d[1], d[2], w));
        }
        s
    }
}

/// Spherical Fibonacci lattice with uniform solid angles `4pi/n`.
pub fn fibonacci_basis(n: usize) -> Result<LightBasis> {
    if n < 2 {
        return Err(Error::Parameter(format!("basis needs n >= 2, got {n}")));
    }
    let golden_angle = PI * (3.0 - 5f64.sqrt());
    let directions = (0..n)
        .map(|i| {
            let y = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let phi = golden_angle * i as f64;
            [r * phi.cos(), y, r * phi.sin()]
        })
        .collect();
    LightBasis::new(directions, vec![4.0 * PI / n as f64; n])
}

/// Per-light RGB intensities, light-major (`light0 r,g,b, light1 r,g,b, ...`).
#[derive(Debug, Clone, PartialEq)]
pub struct LightWeights {
    values: Vec<f32>,
}

impl LightWeights {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() || values.len() % 3 != 0 {
            return Err(Error::Shape(format!(
                "light weights need 3 values per light, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Parameter("light weights must be finite and >= 0".into()));
        }
        Ok(Self { values })
    }

    pub fn zeros(lights: usize) -> Self {
        Self {
            values: vec![0.0; lights * 3],
        }
    }

    /// White unit weight on light `k` only.
    pub fn indicator(lights: usize, k: usize) -> Self {
        let mut w = Self::zeros(lights);
        w.values[3 * k..3 * k + 3].fill(1.0);
        w
    }

    pub fn light_count(&self) -> usize {
        self.values.len() / 3
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn light(&self, i: usize) -> [f32; 3] {
        [self.values[3 * i], self.values[3 * i + 1], self.values[3 * i + 2]]
    }

    pub fn channel_sums(&self) -> [f64; 3] {
        let mut s = [0.0f64; 3];
        for px in self.values.chunks_exact(3) {
            for c in 0..3 {
                s[c] += f64::from(px[c]);
            }
        }
        s
    }

    pub fn total(&self) -> f64 {
        self.channel_sums().iter().sum()
    }

    /// Rescales so all 3n values sum to one; an all-zero vector is returned unchanged.
    pub fn normalized_unit_energy(&self) -> Self {
        let t = self.total();
        if t <= 0.0 {
            return self.clone();
        }
        Self {
            values: self.values.iter().map(|v| (f64::from(*v) / t) as f32).collect(),
        }
    }

    /// `a*self + b*other`; both coefficients must be nonnegative.
    pub fn combine(&self, a: f32, other: &Self, b: f32) -> Result<Self> {
        if self.values.len() != other.values.len() {
            return Err(Error::Shape("weight vectors differ in length".into()));
        }
        Self::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        )
    }
}

/// Precomputed nearest-light index and solid angle for every texel of a given
/// map resolution, so repeated resampling is linear in the texel count.
#[derive(Debug, Clone)]
pub struct TexelBinning {
    width: usize,
    height: usize,
    lights: usize,
    bins: Vec<u16>,
    row_solid_angle: Vec<f64>,
}

impl TexelBinning {
    pub fn new(width: usize, height: usize, basis: &LightBasis) -> Self {
        let bins = (0..height)
            .into_par_iter()
            .flat_map_iter(|y| {
                (0..width).map(move |x| {
                    let u = (x as f64 + 0.5) / width as f64;
                    let v = (y as f64 + 0.5) / height as f64;
                    basis.nearest(uv_to_direction_unchecked(u, v)) as u16
                })
            })
            .collect();
        let row_solid_angle = (0..height).map(|y| texel_solid_angle(width, height, y)).collect();
        Self {
            width,
            height,
            lights: basis.len(),
            bins,
            row_solid_angle,
        }
    }

    pub fn matches(&self, env: &LatLongEnvMap, basis: &LightBasis) -> bool {
        self.width == env.width() && self.height == env.height() && self.lights == basis.len()
    }

    /// Bins texel radiance times solid angle into lights.
    ///
    /// Rows are accumulated independently in parallel and the per-row partial
    /// sums are reduced in row order, so the result does not depend on the
    /// number of worker threads.
    pub fn resample(&self, env: &LatLongEnvMap) -> Result<LightWeights> {
        if env.width() != self.width || env.height() != self.height {
            return Err(Error::Shape(format!(
                "binning built for {}x{}, env is {}x{}",
                self.width,
                self.height,
                env.width(),
                env.height()
            )));
        }
        let w = self.width;
        let lights = self.lights;
        let partials: Vec<Vec<f64>> = env
            .image()
            .data()
            .par_chunks_exact(w * 3)
            .zip(self.bins.par_chunks_exact(w))
            .zip(self.row_solid_angle.par_iter())
            .map(|((row, bins), &d_omega)| {
                let mut acc = vec![0.0f64; lights * 3];
                for (px, &b) in row.chunks_exact(3).zip(bins) {
                    let b = usize::from(b) * 3;
                    for c in 0..3 {
                        acc[b + c] += f64::from(px[c]) * d_omega;
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![0.0f64; lights * 3];
        for p in &partials {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        LightWeights::new(total.into_iter().map(|v| v as f32).collect())
    }
}

/// Nearest-direction binning of an environment map onto a light basis.
pub fn resample_to_basis(env: &LatLongEnvMap, basis: &LightBasis) -> Result<LightWeights> {
    TexelBinning::new(env.width(), env.height(), basis).resample(env)
}

/// Rotates the map about the up axis: output azimuth `phi` samples input `phi - yaw`.
///
/// Interpolation is linear along each row with wrap-around; rows are untouched
/// because a yaw rotation keeps the polar angle.
pub fn rotate_env(env: &LatLongEnvMap, yaw: f64) -> LatLongEnvMap {
    let (w, h) = (env.width(), env.height());
    let shift = (yaw / (2.0 * PI) * w as f64).rem_euclid(w as f64);
    let src = env.image().data();
    let mut out = HdrImage::zeros(w, h);
    out.data_mut()
        .par_chunks_exact_mut(w * 3)
        .zip(src.par_chunks_exact(w * 3))
        .for_each(|(dst, row)| {
            for x in 0..w {
                let sx = (x as f64 - shift).rem_euclid(w as f64);
                let x0 = sx.floor() as usize % w;
                let x1 = (x0 + 1) % w;
                let t = sx - sx.floor();
                for c in 0..3 {
                    let a = f64::from(row[x0 * 3 + c]);
                    let b = f64::from(row[x1 * 3 + c]);
                    dst[x * 3 + c] = if t == 0.0 { a as f32 } else { (a + (b - a) * t) as f32 };
                }
            }
        });
    LatLongEnvMap { image: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_env(w: usize, h: usize, seed: u64) -> LatLongEnvMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * 3).map(|_| rng.gen_range(0.0f32..2.0)).collect();
        LatLongEnvMap::new(HdrImage::new(w, h, data).unwrap()).unwrap()
    }

    #[test]
    fn fibonacci_150_is_well_spread() {
        let b = fibonacci_basis(150).unwrap();
        assert_eq!(b.len(), 150);
        let mut min_angle = f64::INFINITY;
        for i in 0..150 {
            assert!((norm(b.directions()[i]) - 1.0).abs() < 1e-6);
            for j in 0..i {
                let c = dot(b.directions()[i], b.directions()[j]).clamp(-1.0, 1.0);
                min_angle = min_angle.min(c.acos().to_degrees());
            }
        }
        assert!(min_angle > 10.0, "min separation {min_angle}");
        let total: f64 = b.solid_angles().iter().sum();
        assert!((total - 4.0 * PI).abs() < 1e-6 * 4.0 * PI);
    }

    #[test]
    fn fibonacci_two_lights() {
        let b = fibonacci_basis(2).unwrap();
        assert_eq!(b.solid_angles(), &[2.0 * PI, 2.0 * PI]);
        assert!(dot(b.directions()[0], b.directions()[1]) < -0.5);
        assert!(matches!(fibonacci_basis(1), Err(Error::Parameter(_))));
    }

    #[test]
    fn uv_reference_directions() {
        let d = uv_to_direction(0.3, 0.0).unwrap();
        assert!((d[0]).abs() < 1e-12 && (d[1] - 1.0).abs() < 1e-12 && d[2].abs() < 1e-12);
        let d = uv_to_direction(0.0, 0.5).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12 && d[1].abs() < 1e-12 && d[2].abs() < 1e-12);
        assert!(uv_to_direction(1.0, 0.5).is_err());
        assert!(matches!(direction_to_uv([2.0, 0.0, 0.0]), Err(Error::Parameter(_))));
    }

    #[test]
    fn basis_file_parsing() {
        let b = LightBasis::parse("# stage\n0 1 0\n0 -2 0  # scaled\n").unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.directions()[1], [0.0, -1.0, 0.0]);
        assert!((b.solid_angles()[0] - 2.0 * PI).abs() < 1e-12);
        let b = LightBasis::parse("1 0 0 1.5\n-1 0 0 2.5\n").unwrap();
        assert_eq!(b.solid_angles(), &[1.5, 2.5]);
        assert!(LightBasis::parse("1 0 0 1.5\n-1 0 0\n").is_err());
        assert!(LightBasis::parse("1 0\n0 1 0\n").is_err());
        assert!(LightBasis::parse("1 0 0\n1 0 0\n").is_err());
        let fib = fibonacci_basis(150).unwrap();
        let back = LightBasis::parse(&fib.to_text()).unwrap();
        assert_eq!(back.len(), 150);
        for (a, b) in back.directions().iter().zip(fib.directions()) {
            assert!((dot(*a, *b) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_env_integrates_to_four_pi() {
        let env = LatLongEnvMap::constant(256, 128, [1.0, 2.0, 0.5]).unwrap();
        let w = resample_to_basis(&env, &fibonacci_basis(150).unwrap()).unwrap();
        let sums = w.channel_sums();
        for (c, scale) in [1.0, 2.0, 0.5].iter().enumerate() {
            let expected = 4.0 * PI * scale;
            assert!((sums[c] - expected).abs() / expected < 0.005, "{sums:?}");
        }
    }

    #[test]
    fn single_texel_hits_one_light() {
        let basis = fibonacci_basis(150).unwrap();
        let mut img = HdrImage::zeros(64, 32);
        img.set_pixel(17, 9, [3.0, 1.0, 2.0]);
        let env = LatLongEnvMap::new(img).unwrap();
        let w = resample_to_basis(&env, &basis).unwrap();
        let lit: Vec<usize> = (0..150).filter(|&i| w.light(i) != [0.0; 3]).collect();
        assert_eq!(lit, vec![basis.nearest(env.texel_direction(17, 9))]);
        let d_omega = env.texel_solid_angle(9);
        assert!((f64::from(w.light(lit[0])[0]) - 3.0 * d_omega).abs() < 1e-6);
    }

    #[test]
    fn partition_matches_texel_integral() {
        let env = random_env(48, 24, 3);
        let w = resample_to_basis(&env, &fibonacci_basis(150).unwrap()).unwrap();
        let direct = env.integrate();
        let binned = w.channel_sums();
        for c in 0..3 {
            assert!((direct[c] - binned[c]).abs() <= 1e-6 * direct[c]);
        }
    }

    #[test]
    fn resample_is_linear() {
        let basis = fibonacci_basis(150).unwrap();
        let (e1, e2) = (random_env(32, 16, 1), random_env(32, 16, 2));
        let (a, b) = (0.7f32, 2.5f32);
        let mix: Vec<f32> = e1
            .image()
            .data()
            .iter()
            .zip(e2.image().data())
            .map(|(x, y)| a * x + b * y)
            .collect();
        let mix = LatLongEnvMap::new(HdrImage::new(32, 16, mix).unwrap()).unwrap();
        let lhs = resample_to_basis(&mix, &basis).unwrap();
        let rhs = resample_to_basis(&e1, &basis)
            .unwrap()
            .combine(a, &resample_to_basis(&e2, &basis).unwrap(), b)
            .unwrap();
        for (x, y) in lhs.values().iter().zip(rhs.values()) {
            assert!((x - y).abs() <= 1e-5 * x.abs().max(1e-6), "{x} vs {y}");
        }
    }

    #[test]
    fn rotation_identities() {
        let env = random_env(40, 20, 9);
        assert_eq!(rotate_env(&env, 0.0), env);
        let full = rotate_env(&env, 2.0 * PI);
        for (a, b) in full.image().data().iter().zip(env.image().data()) {
            assert!((a - b).abs() <= 1e-4);
        }
        let c = LatLongEnvMap::constant(40, 20, [0.4, 0.5, 0.6]).unwrap();
        for yaw in [0.3, -1.7, 4.0] {
            for (a, b) in rotate_env(&c, yaw).image().data().iter().zip(c.image().data()) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn rotation_by_whole_texels_shifts_columns() {
        let env = random_env(8, 4, 5);
        let r = rotate_env(&env, 2.0 * PI * 3.0 / 8.0);
        for y in 0..4 {
            for x in 0..8 {
                let src = env.image().pixel((x + 8 - 3) % 8, y);
                let got = r.image().pixel(x, y);
                for c in 0..3 {
                    assert!((src[c] - got[c]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn binning_rejects_wrong_resolution() {
        let basis = fibonacci_basis(10).unwrap();
        let bins = TexelBinning::new(16, 8, &basis);
        let env = LatLongEnvMap::constant(8, 4, [1.0; 3]).unwrap();
        assert!(!bins.matches(&env, &basis));
        assert!(matches!(bins.resample(&env), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn uv_round_trip(u in 0.0f64..0.999_999, v in 0.05f64..0.95) {
            let (u2, v2) = direction_to_uv(uv_to_direction(u, v).unwrap()).unwrap();
            let du = (u2 - u).abs().min(1.0 - (u2 - u).abs());
            prop_assert!(du < 1e-5 && (v2 - v).abs() < 1e-5);
        }

        #[test]
        fn weights_nonnegative_and_conserve_energy(seed in 0u64..1000) {
            let env = random_env(24, 12, seed);
            let w = resample_to_basis(&env, &fibonacci_basis(20).unwrap()).unwrap();
            prop_assert!(w.values().iter().all(|v| *v >= 0.0));
            let direct: f64 = env.integrate().iter().sum();
            prop_assert!((w.total() - direct).abs() <= 1e-6 * direct);
        }

        #[test]
        fn permuting_basis_permutes_weights(seed in 0u64..200) {
            let env = random_env(24, 12, seed);
            let basis = fibonacci_basis(30).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..30).collect();
            for i in (1..30).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let permuted = LightBasis::new(
                perm.iter().map(|&i| basis.directions()[i]).collect(),
                perm.iter().map(|&i| basis.solid_angles()[i]).collect(),
            ).unwrap();
            let w = resample_to_basis(&env, &basis).unwrap();
            let wp = resample_to_basis(&env, &permuted).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                prop_assert_eq!(wp.light(j), w.light(i));
            }
        }

        #[test]
        fn rotation_preserves_energy(seed in 0u64..500, yaw in -7.0f64..7.0) {
            let env = random_env(32, 16, seed);
            let before: f64 = env.integrate().iter().sum();
            let after: f64 = rotate_env(&env, yaw).integrate().iter().sum();
            prop_assert!((before - after).abs() <= 0.005 * before);
        }
    }
}
