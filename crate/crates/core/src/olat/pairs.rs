//! Source/target pair synthesis for training and evaluation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Manifest;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairEnd {
    pub camera: String,
    pub env: String,
}

/// Source and target renders of one identity plus the change flags.
///
/// `p` is 1 when the cameras differ, `q` is 1 when the environments differ.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingPair {
    pub identity: String,
    pub source: PairEnd,
    pub target: PairEnd,
    pub p: u8,
    pub q: u8,
}

impl TrainingPair {
    pub fn new(identity: &str, source: PairEnd, target: PairEnd) -> Self {
        let p = u8::from(source.camera != target.camera);
        let q = u8::from(source.env != target.env);
        Self {
            identity: identity.to_string(),
            source,
            target,
            p,
            q,
        }
    }

    /// True when `p` and `q` agree with the camera/env equality of the endpoints.
    pub fn flags_consistent(&self) -> bool {
        self.p == u8::from(self.source.camera != self.target.camera)
            && self.q == u8::from(self.source.env != self.target.env)
    }
}

/// `count` pairs per training identity.
///
/// Exactly `ceil(count / 4)` of them keep the source camera. The rest move to a
/// camera drawn uniformly from the identity's other cameras; an identity with a
/// single camera can only produce same-view pairs. Environments are drawn
/// uniformly for both ends.
pub fn make_training_pairs(manifest: &Manifest, count: usize, seed: u64) -> Result<Vec<TrainingPair>> {
    if manifest.split.train.is_empty() {
        return Err(Error::Config("manifest has no training identities".into()));
    }
    if manifest.envmaps.is_empty() {
        return Err(Error::Config("manifest has no environment maps".into()));
    }
    let envs = manifest.env_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let same_view = count.div_ceil(4);
    let mut pairs = Vec::with_capacity(count * manifest.split.train.len());
    for id in &manifest.split.train {
        let ident = manifest
            .identity(id)
            .ok_or_else(|| Error::Config(format!("unknown identity {id}")))?;
        if ident.cameras.is_empty() {
            return Err(Error::Config(format!("identity {id} has no cameras")));
        }
        let cams: Vec<&str> = ident.cameras.iter().map(|c| c.id.as_str()).collect();
        let mut keep_view: Vec<bool> = (0..count).map(|k| k < same_view).collect();
        keep_view.shuffle(&mut rng);
        for keep in keep_view {
            let src_cam = cams[rng.gen_range(0..cams.len())];
            let src_env = envs[rng.gen_range(0..envs.len())];
            let tgt_env = envs[rng.gen_range(0..envs.len())];
            let tgt_cam = if keep || cams.len() == 1 {
                src_cam
            } else {
                let others: Vec<&str> = cams.iter().copied().filter(|c| *c != src_cam).collect();
                others[rng.gen_range(0..others.len())]
            };
            pairs.push(TrainingPair::new(
                id,
                PairEnd {
                    camera: src_cam.into(),
                    env: src_env.into(),
                },
                PairEnd {
                    camera: tgt_cam.into(),
                    env: tgt_env.into(),
                },
            ));
        }
    }
    Ok(pairs)
}

/// Test pairs: `set1` changes only the environment, `set2` only the camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSets {
    pub set1: Vec<TrainingPair>,
    pub set2: Vec<TrainingPair>,
}

/// For every test identity, camera and environment: one Set1 pair towards a
/// random other environment and one Set2 pair towards a random other camera.
pub fn make_eval_sets(manifest: &Manifest, seed: u64) -> Result<EvalSets> {
    if manifest.split.test.is_empty() {
        return Err(Error::Config("manifest has no test identities".into()));
    }
    if manifest.envmaps.is_empty() {
        return Err(Error::Config("manifest has no environment maps".into()));
    }
    let envs = manifest.env_ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sets = EvalSets {
        set1: Vec::new(),
        set2: Vec::new(),
    };
    for id in &manifest.split.test {
        let ident = manifest
            .identity(id)
            .ok_or_else(|| Error::Config(format!("unknown identity {id}")))?;
        let cams: Vec<&str> = ident.cameras.iter().map(|c| c.id.as_str()).collect();
        for &cam in &cams {
            for &env in &envs {
                if envs.len() > 1 {
                    let others: Vec<&str> = envs.iter().copied().filter(|e| *e != env).collect();
                    let tgt = others[rng.gen_range(0..others.len())];
                    sets.set1.push(TrainingPair::new(
                        id,
                        PairEnd { camera: cam.into(), env: env.into() },
                        PairEnd { camera: cam.into(), env: tgt.into() },
                    ));
                }
                if cams.len() > 1 {
                    let others: Vec<&str> = cams.iter().copied().filter(|c| *c != cam).collect();
                    let tgt = others[rng.gen_range(0..others.len())];
                    sets.set2.push(TrainingPair::new(
                        id,
                        PairEnd { camera: cam.into(), env: env.into() },
                        PairEnd { camera: tgt.into(), env: env.into() },
                    ));
                }
            }
        }
    }
    if sets.set1.is_empty() && sets.set2.is_empty() {
        return Err(Error::Config(
            "test identities need two environments or two cameras to form pairs".into(),
        ));
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::olat::dataset::{CameraRecord, EnvRecord, IdentityRecord, Split};
    use crate::olat::CameraPose;

    fn manifest(ids: usize, cams: usize, envs: usize, test: usize) -> Manifest {
        let identities: Vec<IdentityRecord> = (0..ids)
            .map(|i| IdentityRecord {
                id: format!("id{i}"),
                cameras: (0..cams)
                    .map(|c| CameraRecord {
                        id: format!("cam{c}"),
                        pose: CameraPose::default(),
                        olat_dir: String::new(),
                    })
                    .collect(),
            })
            .collect();
        let names: Vec<String> = identities.iter().map(|i| i.id.clone()).collect();
        Manifest {
            basis_file: None,
            identities,
            envmaps: (0..envs)
                .map(|e| EnvRecord {
                    id: format!("env{e}"),
                    path: String::new(),
                })
                .collect(),
            split: Split {
                train: names[..ids - test].to_vec(),
                test: names[ids - test..].to_vec(),
            },
        }
    }

    #[test]
    fn quarter_rule_small_count() {
        let pairs = make_training_pairs(&manifest(1, 4, 5, 0), 4, 1).unwrap();
        assert_eq!(pairs.len(), 4);
        assert_eq!(pairs.iter().filter(|p| p.p == 0).count(), 1);
    }

    #[test]
    fn quarter_rule_full_count() {
        let pairs = make_training_pairs(&manifest(3, 8, 16, 0), 300, 9).unwrap();
        for id in ["id0", "id1", "id2"] {
            let same = pairs.iter().filter(|p| p.identity == id && p.p == 0).count();
            assert_eq!(same, 75);
        }
        assert!(pairs.iter().all(TrainingPair::flags_consistent));
        assert!(pairs.iter().all(|p| p.identity.starts_with("id")));
    }

    #[test]
    fn odd_counts_round_up() {
        let pairs = make_training_pairs(&manifest(1, 3, 2, 0), 5, 2).unwrap();
        assert_eq!(pairs.iter().filter(|p| p.p == 0).count(), 2);
    }

    #[test]
    fn seeded_determinism() {
        let m = manifest(2, 4, 6, 0);
        assert_eq!(
            make_training_pairs(&m, 50, 3).unwrap(),
            make_training_pairs(&m, 50, 3).unwrap()
        );
        assert_ne!(
            make_training_pairs(&m, 50, 3).unwrap(),
            make_training_pairs(&m, 50, 4).unwrap()
        );
    }

    #[test]
    fn empty_sections_are_config_errors() {
        let mut m = manifest(1, 2, 2, 0);
        m.envmaps.clear();
        assert!(matches!(make_training_pairs(&m, 4, 0), Err(Error::Config(_))));
        let m = manifest(1, 2, 2, 1);
        assert!(matches!(make_training_pairs(&m, 4, 0), Err(Error::Config(_))));
        let m = manifest(2, 2, 2, 0);
        assert!(matches!(make_eval_sets(&m, 0), Err(Error::Config(_))));
    }

    #[test]
    fn eval_set_constraints() {
        let m = manifest(5, 4, 6, 2);
        let sets = make_eval_sets(&m, 7).unwrap();
        assert_eq!(sets.set1.len(), 2 * 4 * 6);
        assert_eq!(sets.set2.len(), 2 * 4 * 6);
        for p in &sets.set1 {
            assert_eq!(p.source.camera, p.target.camera);
            assert_ne!(p.source.env, p.target.env);
            assert_eq!((p.p, p.q), (0, 1));
        }
        for p in &sets.set2 {
            assert_eq!(p.source.env, p.target.env);
            assert_ne!(p.source.camera, p.target.camera);
            assert_eq!((p.p, p.q), (1, 0));
        }
        for p in sets.set1.iter().chain(&sets.set2) {
            assert!(m.split.test.contains(&p.identity));
            assert!(!m.split.train.contains(&p.identity));
        }
    }
}
