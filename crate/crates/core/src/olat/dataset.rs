//! Dataset manifests and their in-memory form.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{relight, CameraPose, OlatStack};
use crate::envmap::{fibonacci_basis, resample_to_basis, LatLongEnvMap, LightBasis, LightWeights, CANONICAL_LIGHT_COUNT};
use crate::error::{Error, Result};
use crate::radiometry_io::HdrImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub id: String,
    pub pose: CameraPose,
    pub olat_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub id: String,
    pub cameras: Vec<CameraRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvRecord {
    pub id: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// On-disk dataset description. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Light basis text file; absent means the canonical 150-light Fibonacci basis.
    #[serde(default)]
    pub basis_file: Option<String>,
    pub identities: Vec<IdentityRecord>,
    pub envmaps: Vec<EnvRecord>,
    pub split: Split,
}

impl Manifest {
    pub fn parse(json: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(json)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Structural checks that do not touch the filesystem.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for ident in &self.identities {
            if !ids.insert(ident.id.as_str()) {
                return Err(Error::Config(format!("duplicate identity {}", ident.id)));
            }
            let mut cams = HashSet::new();
            for cam in &ident.cameras {
                if !cams.insert(cam.id.as_str()) {
                    return Err(Error::Config(format!(
                        "duplicate camera {} for identity {}",
                        cam.id, ident.id
                    )));
                }
            }
        }
        let mut envs = HashSet::new();
        for env in &self.envmaps {
            if !envs.insert(env.id.as_str()) {
                return Err(Error::Config(format!("duplicate envmap {}", env.id)));
            }
        }
        let train: HashSet<&str> = self.split.train.iter().map(String::as_str).collect();
        for id in self.split.train.iter().chain(&self.split.test) {
            if !ids.contains(id.as_str()) {
                return Err(Error::Config(format!("split names unknown identity {id}")));
            }
        }
        if let Some(id) = self.split.test.iter().find(|id| train.contains(id.as_str())) {
            return Err(Error::Config(format!("identity {id} is in both train and test")));
        }
        Ok(())
    }

    pub fn identity(&self, id: &str) -> Option<&IdentityRecord> {
        self.identities.iter().find(|i| i.id == id)
    }

    pub fn env_ids(&self) -> Vec<&str> {
        self.envmaps.iter().map(|e| e.id.as_str()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct CameraEntry {
    pub id: String,
    pub pose: CameraPose,
    pub stack: Arc<OlatStack>,
}

#[derive(Debug, Clone)]
pub struct IdentityEntry {
    pub id: String,
    pub cameras: Vec<CameraEntry>,
}

#[derive(Debug, Clone)]
pub struct EnvEntry {
    pub id: String,
    pub map: Arc<LatLongEnvMap>,
    pub weights: LightWeights,
}

/// Fully loaded dataset: every stack in memory, every environment resampled.
#[derive(Debug, Clone)]
pub struct Dataset {
    basis: LightBasis,
    identities: Vec<IdentityEntry>,
    envmaps: Vec<EnvEntry>,
    split: Split,
    manifest: Manifest,
}

impl Dataset {
    pub(crate) fn from_parts(
        basis: LightBasis,
        identities: Vec<IdentityEntry>,
        envmaps: Vec<EnvEntry>,
        split: Split,
    ) -> Result<Self> {
        let manifest = Manifest {
            basis_file: None,
            identities: identities
                .iter()
                .map(|i| IdentityRecord {
                    id: i.id.clone(),
                    cameras: i
                        .cameras
                        .iter()
                        .map(|c| CameraRecord {
                            id: c.id.clone(),
                            pose: c.pose,
                            olat_dir: String::new(),
                        })
                        .collect(),
                })
                .collect(),
            envmaps: envmaps
                .iter()
                .map(|e| EnvRecord {
                    id: e.id.clone(),
                    path: String::new(),
                })
                .collect(),
            split,
        };
        manifest.validate()?;
        Ok(Self {
            basis,
            identities,
            envmaps,
            split: manifest.split.clone(),
            manifest,
        })
    }

    /// Loads every file the manifest references.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = Manifest::load(manifest_path)?;
        let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::load_with_root(manifest, &root)
    }

    pub fn load_with_root(manifest: Manifest, root: &Path) -> Result<Self> {
        manifest.validate()?;
        let resolve = |p: &str| -> PathBuf {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                root.join(p)
            }
        };
        let basis = match &manifest.basis_file {
            Some(f) => LightBasis::load(resolve(f))?,
            None => fibonacci_basis(CANONICAL_LIGHT_COUNT)?,
        };
        let identities = manifest
            .identities
            .iter()
            .map(|ident| {
                let cameras = ident
                    .cameras
                    .iter()
                    .map(|cam| {
                        let stack = OlatStack::load_dir(
                            resolve(&cam.olat_dir),
                            basis.len(),
                            &ident.id,
                            &cam.id,
                            cam.pose,
                        )?;
                        Ok(CameraEntry {
                            id: cam.id.clone(),
                            pose: cam.pose,
                            stack: Arc::new(stack),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(IdentityEntry {
                    id: ident.id.clone(),
                    cameras,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let envmaps = manifest
            .envmaps
            .iter()
            .map(|env| {
                let map = LatLongEnvMap::load(resolve(&env.path))?;
                let weights = resample_to_basis(&map, &basis)?;
                Ok(EnvEntry {
                    id: env.id.clone(),
                    map: Arc::new(map),
                    weights,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let split = manifest.split.clone();
        Ok(Self {
            basis,
            identities,
            envmaps,
            split,
            manifest,
        })
    }

    pub fn basis(&self) -> &LightBasis {
        &self.basis
    }

    pub fn identities(&self) -> &[IdentityEntry] {
        &self.identities
    }

    pub fn envmaps(&self) -> &[EnvEntry] {
        &self.envmaps
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn camera(&self, identity: &str, camera: &str) -> Result<&CameraEntry> {
        self.identities
            .iter()
            .find(|i| i.id == identity)
            .ok_or_else(|| Error::Config(format!("unknown identity {identity}")))?
            .cameras
            .iter()
            .find(|c| c.id == camera)
            .ok_or_else(|| Error::Config(format!("unknown camera {camera} for {identity}")))
    }

    pub fn env(&self, id: &str) -> Result<&EnvEntry> {
        self.envmaps
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::Config(format!("unknown envmap {id}")))
    }

    /// HDR relit image of `identity` seen from `camera` under environment `env`.
    pub fn relit(&self, identity: &str, camera: &str, env: &str) -> Result<HdrImage> {
        relight(&self.camera(identity, camera)?.stack, &self.env(env)?.weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "basis_file": "basis.txt",
        "identities": [
            {"id": "a", "cameras": [{"id": "c0", "pose": {"yaw": 0.1, "pitch": 0.0, "roll": 0.0}, "olat_dir": "olat/a/c0"}]},
            {"id": "b", "cameras": [{"id": "c0", "pose": {"yaw": 0.1, "pitch": 0.0, "roll": 0.0}, "olat_dir": "olat/b/c0"}]}
        ],
        "envmaps": [{"id": "sky", "path": "envmaps/sky.hdr"}],
        "split": {"train": ["a"], "test": ["b"]}
    }"#;

    #[test]
    fn parses_manifest_shape() {
        let m = Manifest::parse(SAMPLE).unwrap();
        assert_eq!(m.identities.len(), 2);
        assert_eq!(m.identities[0].cameras[0].pose.yaw, 0.1);
        assert_eq!(m.env_ids(), vec!["sky"]);
        assert_eq!(m.basis_file.as_deref(), Some("basis.txt"));
    }

    #[test]
    fn overlapping_split_rejected() {
        let bad = SAMPLE.replace(r#""test": ["b"]"#, r#""test": ["a"]"#);
        assert!(matches!(Manifest::parse(&bad), Err(Error::Config(_))));
        let unknown = SAMPLE.replace(r#""test": ["b"]"#, r#""test": ["z"]"#);
        assert!(matches!(Manifest::parse(&unknown), Err(Error::Config(_))));
    }

    #[test]
    fn missing_files_fail_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, SAMPLE).unwrap();
        assert!(matches!(Dataset::load(&path), Err(Error::Io { .. })));
    }
}
