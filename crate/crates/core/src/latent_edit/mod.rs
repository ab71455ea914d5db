//! Latent codes, the conditional displacement network, and the generator abstraction.
//!
//! An edit is `decode(L_s + Delta(L_s, condition))`, where `Delta` is produced
//! independently for each of the latent blocks by a one-hidden-layer ReLU MLP.

mod generator;
mod net;

pub use generator::{Generator, ToyGenerator};
pub use net::{Block, ForwardCache, NetConfig, NetGrads, PhotoAppNet};

use std::fmt::Debug;
use std::path::Path;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::envmap::LightWeights;
use crate::error::{Error, Result};
use crate::olat::CameraPose;
use crate::radiometry_io::HdrImage;

/// Scalar type the network and loss math are generic over (`f32` for
/// training, `f64` for gradient verification).
pub trait Real: Float + FromPrimitive + ToPrimitive + Default + Send + Sync + Debug + 'static {
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub const LATENT_BLOCKS: usize = 18;
pub const LATENT_DIM: usize = 512;

/// `blocks x dim` latent code, block-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    blocks: usize,
    dim: usize,
    data: Vec<f32>,
}

impl LatentCode {
    /// Standard 18 x 512 code.
    pub fn new(data: Vec<f32>) -> Result<Self> {
        Self::with_shape(LATENT_BLOCKS, LATENT_DIM, data)
    }

    pub fn with_shape(blocks: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if blocks == 0 || dim == 0 || data.len() != blocks * dim {
            return Err(Error::Shape(format!(
                "latent code {blocks}x{dim} cannot hold {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite latent value".into()));
        }
        Ok(Self { blocks, dim, data })
    }

    pub fn zeros(blocks: usize, dim: usize) -> Self {
        Self {
            blocks,
            dim,
            data: vec![0.0; blocks * dim],
        }
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.blocks, self.dim)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn block(&self, k: usize) -> &[f32] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn l2_distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = f64::from(*a) - f64::from(*b);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    const MAGIC: &'static [u8; 5] = b"LATV1";

    /// Little-endian binary: magic `LATV1`, `u32` blocks, `u32` dim, `f32` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + self.data.len() * 4);
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&(self.blocks as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 13 || &bytes[..5] != Self::MAGIC {
            return Err(Error::Format("not a latent code file".into()));
        }
        let blocks = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
        let dim = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
        let body = &bytes[13..];
        if body.len() != blocks * dim * 4 {
            return Err(Error::Truncated(format!(
                "latent file holds {} bytes, expected {}",
                body.len(),
                blocks * dim * 4
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Self::with_shape(blocks, dim, data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvNormalization {
    #[default]
    None,
    UnitEnergy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseEncoding {
    /// Raw yaw, pitch, roll in radians.
    #[default]
    Radians,
    /// `sin` and `cos` of each angle.
    SinCos,
}

impl PoseEncoding {
    pub fn dim(self) -> usize {
        match self {
            PoseEncoding::Radians => 3,
            PoseEncoding::SinCos => 6,
        }
    }
}

/// Target illumination, target pose and the change flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVector {
    pub env: LightWeights,
    pub pose: CameraPose,
    /// 1 when the target pose differs from the source.
    pub p: u8,
    /// 1 when the target illumination differs from the source; only fed to
    /// networks built with `use_q`.
    pub q: Option<u8>,
}

impl ConditionVector {
    pub fn new(env: LightWeights, pose: CameraPose, p: u8, q: Option<u8>) -> Result<Self> {
        if p > 1 || q.is_some_and(|q| q > 1) {
            return Err(Error::Parameter("condition flags must be 0 or 1".into()));
        }
        Ok(Self { env, pose, p, q })
    }

    /// Flat network input: env (optionally normalized), pose, `p`, then `q` if used.
    pub fn features(&self, config: &NetConfig) -> Result<Vec<f32>> {
        if self.env.values().len() != config.env_dim {
            return Err(Error::Shape(format!(
                "network expects {} env values, condition has {}",
                config.env_dim,
                self.env.values().len()
            )));
        }
        let env = match config.env_normalization {
            EnvNormalization::None => self.env.clone(),
            EnvNormalization::UnitEnergy => self.env.normalized_unit_energy(),
        };
        let mut f = Vec::with_capacity(config.cond_dim());
        f.extend_from_slice(env.values());
        let angles = self.pose.as_array();
        match config.pose_encoding {
            PoseEncoding::Radians => f.extend(angles.iter().map(|a| *a as f32)),
            PoseEncoding::SinCos => {
                f.extend(angles.iter().map(|a| a.sin() as f32));
                f.extend(angles.iter().map(|a| a.cos() as f32));
            }
        }
        f.push(f32::from(self.p));
        match (config.use_q, self.q) {
            (true, Some(q)) => f.push(f32::from(q)),
            (true, None) => {
                return Err(Error::Parameter("network uses q but the condition has none".into()))
            }
            (false, _) => {}
        }
        Ok(f)
    }
}

/// What an edit starts from.
#[derive(Debug, Clone)]
pub enum EditSource {
    Latent(LatentCode),
    Image(HdrImage),
}

/// Projects the source if needed, applies the network, and decodes.
pub fn edit(
    generator: &dyn Generator,
    net: &PhotoAppNet<f32>,
    source: &EditSource,
    cond: &ConditionVector,
) -> Result<HdrImage> {
    let latent = match source {
        EditSource::Latent(l) => l.clone(),
        EditSource::Image(img) => {
            if !generator.can_encode() {
                return Err(Error::Capability("generator has no encoder".into()));
            }
            generator.encode(img)?
        }
    };
    let edited = net.apply(&latent, cond)?;
    generator.decode(&edited)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_file_round_trip() {
        let l = LatentCode::with_shape(2, 3, vec![1.0, -2.0, 3.5, 0.0, 1e-7, 9.0]).unwrap();
        assert_eq!(LatentCode::from_bytes(&l.to_bytes()).unwrap(), l);
        let bytes = l.to_bytes();
        assert!(matches!(
            LatentCode::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(LatentCode::from_bytes(b"nope"), Err(Error::Format(_))));
    }

    #[test]
    fn latent_shape_checks() {
        assert!(LatentCode::new(vec![0.0; 18 * 512]).is_ok());
        assert!(matches!(LatentCode::new(vec![0.0; 10]), Err(Error::Shape(_))));
        assert!(matches!(
            LatentCode::with_shape(1, 1, vec![f32::NAN]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn condition_features_layout() {
        let env = LightWeights::new(vec![1.0, 2.0, 3.0, 0.0, 0.0, 2.0]).unwrap();
        let pose = CameraPose::new(0.1, 0.2, 0.3).unwrap();
        let mut cfg = NetConfig::reduced(1, 2, 2, 6, true);
        let c = ConditionVector::new(env.clone(), pose, 1, Some(0)).unwrap();
        let f = c.features(&cfg).unwrap();
        assert_eq!(f.len(), cfg.cond_dim());
        assert_eq!(&f[..6], env.values());
        assert_eq!(&f[6..], &[0.1, 0.2, 0.3, 1.0, 0.0]);

        cfg.env_normalization = EnvNormalization::UnitEnergy;
        let f = c.features(&cfg).unwrap();
        let s: f32 = f[..6].iter().sum();
        assert!((s - 1.0).abs() < 1e-6);

        cfg.pose_encoding = PoseEncoding::SinCos;
        assert_eq!(c.features(&cfg).unwrap().len(), 6 + 6 + 2);

        let no_q = ConditionVector::new(env, pose, 0, None).unwrap();
        assert!(no_q.features(&cfg).is_err());
        assert!(ConditionVector::new(LightWeights::zeros(1), pose, 2, None).is_err());
    }
}
