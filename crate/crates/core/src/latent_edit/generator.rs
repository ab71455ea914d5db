use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{LatentCode, Real};
use crate::error::{Error, Result};
use crate::radiometry_io::HdrImage;

/// Image synthesis from latent codes, with an optional projection back.
pub trait Generator: Send + Sync {
    /// `(blocks, dim)` of the codes this generator accepts.
    fn latent_shape(&self) -> (usize, usize);

    /// `(width, height)` of decoded images.
    fn image_dims(&self) -> (usize, usize);

    fn decode(&self, latent: &LatentCode) -> Result<HdrImage>;

    fn can_encode(&self) -> bool {
        false
    }

    fn encode(&self, _image: &HdrImage) -> Result<LatentCode> {
        Err(Error::Capability("generator has no encoder".into()))
    }

    fn has_latent_jacobian(&self) -> bool {
        false
    }

    /// `J^T d_image` where `J` is the Jacobian of `decode` at `latent`.
    fn decode_pullback(&self, _latent: &LatentCode, _d_image: &[f32]) -> Result<Vec<f32>> {
        Err(Error::Capability("generator has no latent Jacobian".into()))
    }
}

/// Affine decoder `decode(L) = A vec(L) + c` with an exact left inverse.
///
/// `A` is block-sparse: latent entries and image entries are each split into
/// seeded random groups, and every group pairs `n` latent entries with `m >= n`
/// image entries through a dense Gaussian `m x n` matrix (entries scaled by
/// `1/sqrt(n)`, so latents and image residuals share a scale). Each group is
/// solved independently, so `A` has full column rank and the left inverse
/// costs `O(n^3)` per group.
#[derive(Debug, Clone)]
pub struct ToyGenerator {
    seed: u64,
    width: usize,
    height: usize,
    blocks: usize,
    dim: usize,
    groups: Vec<Group>,
    bias: Vec<f32>,
}

#[derive(Debug, Clone)]
struct Group {
    latent_idx: Vec<usize>,
    pixel_idx: Vec<usize>,
    /// `m x n`, row-major.
    a: Vec<f64>,
    /// `n x m`, row-major.
    pinv: Vec<f64>,
}

/// Target latent entries per group.
const GROUP_LATENTS: usize = 36;

impl ToyGenerator {
    /// Standard 18 x 512 latent space.
    pub fn new(seed: u64, image_size: usize) -> Result<Self> {
        Self::with_latent_shape(seed, image_size, super::LATENT_BLOCKS, super::LATENT_DIM)
    }

    pub fn with_latent_shape(seed: u64, image_size: usize, blocks: usize, dim: usize) -> Result<Self> {
        let n_total = blocks * dim;
        let m_total = image_size * image_size * 3;
        if n_total == 0 || m_total < n_total {
            return Err(Error::Config(format!(
                "{image_size}x{image_size} RGB holds {m_total} values, fewer than the {n_total} latent entries"
            )));
        }
        // round-robin assignment gives every group floor(m/g) or more rows and
        // at most ceil(n/g) columns
        let mut g = n_total.div_ceil(GROUP_LATENTS).max(1);
        while g > 1 && m_total / g < n_total.div_ceil(g) {
            g -= 1;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut latent_perm: Vec<usize> = (0..n_total).collect();
        let mut pixel_perm: Vec<usize> = (0..m_total).collect();
        latent_perm.shuffle(&mut rng);
        pixel_perm.shuffle(&mut rng);
        let mut groups = Vec::with_capacity(g);
        for gi in 0..g {
            let latent_idx: Vec<usize> = latent_perm.iter().copied().skip(gi).step_by(g).collect();
            let pixel_idx: Vec<usize> = pixel_perm.iter().copied().skip(gi).step_by(g).collect();
            let (m, n) = (pixel_idx.len(), latent_idx.len());
            let scale = 1.0 / (n as f64).sqrt();
            let (a, pinv) = loop {
                let a: Vec<f64> = (0..m * n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * scale
                    })
                    .collect();
                if let Some(pinv) = left_inverse(&a, m, n) {
                    break (a, pinv);
                }
            };
            groups.push(Group {
                latent_idx,
                pixel_idx,
                a,
                pinv,
            });
        }
        let bias = (0..m_total)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (0.5 + 0.05 * z) as f32
            })
            .collect();
        Ok(Self {
            seed,
            width: image_size,
            height: image_size,
            blocks,
            dim,
            groups,
            bias,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn image_size(&self) -> usize {
        self.width
    }

    /// The image `decode(0)`.
    pub fn bias_image(&self) -> HdrImage {
        HdrImage::from_signed(self.width, self.height, self.bias.clone()).expect("finite bias")
    }

    /// `A l + c` for any scalar type.
    pub fn decode_values<T: Real>(&self, latent: &[T]) -> Vec<T> {
        let mut out: Vec<T> = self.bias.iter().map(|&b| T::lit(f64::from(b))).collect();
        for grp in &self.groups {
            let n = grp.latent_idx.len();
            let l: Vec<T> = grp.latent_idx.iter().map(|&j| latent[j]).collect();
            for (r, &pix) in grp.pixel_idx.iter().enumerate() {
                let row = &grp.a[r * n..(r + 1) * n];
                let mut s = T::zero();
                for (aj, lj) in row.iter().zip(&l) {
                    s = s + T::lit(*aj) * *lj;
                }
                out[pix] = out[pix] + s;
            }
        }
        out
    }

    /// `A^T g` for any scalar type.
    pub fn pullback_values<T: Real>(&self, d_image: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.blocks * self.dim];
        for grp in &self.groups {
            let n = grp.latent_idx.len();
            for (r, &pix) in grp.pixel_idx.iter().enumerate() {
                let g = d_image[pix];
                if g == T::zero() {
                    continue;
                }
                let row = &grp.a[r * n..(r + 1) * n];
                for (aj, &j) in row.iter().zip(&grp.latent_idx) {
                    out[j] = out[j] + T::lit(*aj) * g;
                }
            }
        }
        out
    }

    fn check_latent(&self, latent: &LatentCode) -> Result<()> {
        if latent.shape() != (self.blocks, self.dim) {
            return Err(Error::Shape(format!(
                "latent is {:?}, generator expects {}x{}",
                latent.shape(),
                self.blocks,
                self.dim
            )));
        }
        Ok(())
    }
}

/// `(A^T A)^-1 A^T` via Cholesky, or `None` when `A^T A` is numerically singular.
fn left_inverse(a: &[f64], m: usize, n: usize) -> Option<Vec<f64>> {
    let mut gram = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..m).map(|r| a[r * n + i] * a[r * n + j]).sum();
            gram[i * n + j] = s;
            gram[j * n + i] = s;
        }
    }
    // in-place lower Cholesky
    let mut chol = gram;
    for j in 0..n {
        let mut d = chol[j * n + j];
        for k in 0..j {
            d -= chol[j * n + k] * chol[j * n + k];
        }
        if d <= 1e-12 * (m as f64) / (n as f64) / (n as f64) {
            return None;
        }
        let d = d.sqrt();
        chol[j * n + j] = d;
        for i in j + 1..n {
            let mut s = chol[i * n + j];
            for k in 0..j {
                s -= chol[i * n + k] * chol[j * n + k];
            }
            chol[i * n + j] = s / d;
        }
    }
    // solve (L L^T) X = A^T column by column of A^T (i.e. per image row)
    let mut pinv = vec![0.0f64; n * m];
    let mut y = vec![0.0f64; n];
    for r in 0..m {
        for i in 0..n {
            let mut s = a[r * n + i];
            for k in 0..i {
                s -= chol[i * n + k] * y[k];
            }
            y[i] = s / chol[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= chol[k * n + i] * y[k];
            }
            y[i] = s / chol[i * n + i];
        }
        for i in 0..n {
            pinv[i * m + r] = y[i];
        }
    }
    Some(pinv)
}

impl Generator for ToyGenerator {
    fn latent_shape(&self) -> (usize, usize) {
        (self.blocks, self.dim)
    }

    fn image_dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn decode(&self, latent: &LatentCode) -> Result<HdrImage> {
        self.check_latent(latent)?;
        let values: Vec<f64> = self.decode_values(&latent.data().iter().map(|v| f64::from(*v)).collect::<Vec<_>>());
        HdrImage::from_signed(self.width, self.height, values.into_iter().map(|v| v as f32).collect())
    }

    fn can_encode(&self) -> bool {
        true
    }

    fn encode(&self, image: &HdrImage) -> Result<LatentCode> {
        if image.dims() != (self.width, self.height) {
            return Err(Error::Shape(format!(
                "image is {:?}, generator works at {}x{}",
                image.dims(),
                self.width,
                self.height
            )));
        }
        let data = image.data();
        let mut out = vec![0.0f32; self.blocks * self.dim];
        for grp in &self.groups {
            let m = grp.pixel_idx.len();
            let centered: Vec<f64> = grp
                .pixel_idx
                .iter()
                .map(|&p| f64::from(data[p]) - f64::from(self.bias[p]))
                .collect();
            for (i, &j) in grp.latent_idx.iter().enumerate() {
                let row = &grp.pinv[i * m..(i + 1) * m];
                out[j] = row.iter().zip(&centered).map(|(a, b)| a * b).sum::<f64>() as f32;
            }
        }
        LatentCode::with_shape(self.blocks, self.dim, out)
    }

    fn has_latent_jacobian(&self) -> bool {
        true
    }

    fn decode_pullback(&self, latent: &LatentCode, d_image: &[f32]) -> Result<Vec<f32>> {
        self.check_latent(latent)?;
        if d_image.len() != self.width * self.height * 3 {
            return Err(Error::Shape("image gradient has the wrong length".into()));
        }
        let g: Vec<f64> = d_image.iter().map(|v| f64::from(*v)).collect();
        Ok(self.pullback_values(&g).into_iter().map(|v| v as f32).collect())
    }
}
