//! Seeded Lambertian-sphere stand-in for light-stage captures.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{
    CameraEntry, CameraRecord, Dataset, EnvEntry, EnvRecord, IdentityEntry, IdentityRecord,
    Manifest, Split,
};
use super::{olat_file_name, CameraPose, OlatStack};
use crate::envmap::{
    dot, fibonacci_basis, resample_to_basis, LatLongEnvMap, LightBasis, Vec3,
};
use crate::error::{Error, Result};
use crate::radiometry_io::HdrImage;

/// Smooth random albedo defined on the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct AlbedoTexture {
    base: [f64; 3],
    waves: Vec<Wave>,
}

#[derive(Debug, Clone, PartialEq)]
struct Wave {
    dir: Vec3,
    freq: f64,
    phase: f64,
    amp: [f64; 3],
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    let y: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..2.0 * PI);
    let r = (1.0 - y * y).sqrt();
    [r * phi.cos(), y, r * phi.sin()]
}

impl AlbedoTexture {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = [
            rng.gen_range(0.3..0.8),
            rng.gen_range(0.3..0.8),
            rng.gen_range(0.3..0.8),
        ];
        let waves = (0..6)
            .map(|_| Wave {
                dir: random_unit(&mut rng),
                freq: rng.gen_range(2.0..6.0),
                phase: rng.gen_range(0.0..2.0 * PI),
                amp: [
                    rng.gen_range(-0.25..0.25),
                    rng.gen_range(-0.25..0.25),
                    rng.gen_range(-0.25..0.25),
                ],
            })
            .collect();
        Self { base, waves }
    }

    /// Albedo at a world-space unit normal, in `[0.05, 0.95]`.
    pub fn at(&self, n: Vec3) -> [f64; 3] {
        let mut a = self.base;
        for w in &self.waves {
            let s = (w.freq * dot(n, w.dir) + w.phase).sin();
            for c in 0..3 {
                a[c] += w.amp[c] * s;
            }
        }
        a.map(|v| v.clamp(0.05, 0.95))
    }
}

/// Camera-space normal of the orthographic unit sphere at pixel `(x, y)`, if covered.
fn sphere_normal(x: usize, y: usize, res: usize) -> Option<Vec3> {
    let sx = 2.0 * (x as f64 + 0.5) / res as f64 - 1.0;
    let sy = 1.0 - 2.0 * (y as f64 + 0.5) / res as f64;
    let r2 = sx * sx + sy * sy;
    (r2 <= 1.0).then(|| [sx, sy, (1.0 - r2).sqrt()])
}

/// Renders one OLAT stack: image `i` is `albedo * max(0, n . d_i) * omega_i`.
pub fn render_olat(
    texture: &AlbedoTexture,
    pose: CameraPose,
    resolution: usize,
    basis: &LightBasis,
    identity_id: &str,
    camera_id: &str,
) -> Result<OlatStack> {
    let (albedo, normals) = surface_maps(texture, pose, resolution);
    let images = basis
        .directions()
        .par_iter()
        .zip(basis.solid_angles().par_iter())
        .map(|(&d, &omega)| {
            let mut img = HdrImage::zeros(resolution, resolution);
            for (px, (a, n)) in img
                .data_mut()
                .chunks_exact_mut(3)
                .zip(albedo.chunks_exact(3).zip(&normals))
            {
                if let Some(n) = n {
                    let shade = dot(*n, d).max(0.0) * omega;
                    for c in 0..3 {
                        px[c] = (f64::from(a[c]) * shade) as f32;
                    }
                }
            }
            img
        })
        .collect();
    OlatStack::new(identity_id, camera_id, pose, images)
}

fn surface_maps(
    texture: &AlbedoTexture,
    pose: CameraPose,
    res: usize,
) -> (Vec<f32>, Vec<Option<Vec3>>) {
    let mut albedo = vec![0.0f32; res * res * 3];
    let mut normals = vec![None; res * res];
    for y in 0..res {
        for x in 0..res {
            if let Some(nc) = sphere_normal(x, y, res) {
                let n = pose.to_world(nc);
                let a = texture.at(n);
                let i = y * res + x;
                for c in 0..3 {
                    albedo[3 * i + c] = a[c] as f32;
                }
                normals[i] = Some(n);
            }
        }
    }
    (albedo, normals)
}

/// Rendered stack plus the scene that produced it.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub stack: OlatStack,
    pub albedo: HdrImage,
    /// World-space normals, `None` on background pixels.
    pub normals: Vec<Option<Vec3>>,
    pub texture: AlbedoTexture,
}

/// A single seeded sphere seen from the canonical (identity) pose.
pub fn synth_lambertian_world(seed: u64, resolution: usize, basis: &LightBasis) -> Result<SynthWorld> {
    if resolution < 16 {
        return Err(Error::Parameter(format!("resolution must be >= 16, got {resolution}")));
    }
    let texture = AlbedoTexture::random(seed);
    let pose = CameraPose::default();
    let stack = render_olat(&texture, pose, resolution, basis, &format!("sphere{seed}"), "front")?;
    let (albedo, normals) = surface_maps(&texture, pose, resolution);
    Ok(SynthWorld {
        stack,
        albedo: HdrImage::new(resolution, resolution, albedo)?,
        normals,
        texture,
    })
}

/// Shape of a generated toy dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyWorldConfig {
    pub seed: u64,
    pub resolution: usize,
    pub identities: usize,
    pub cameras: usize,
    pub envmaps: usize,
    /// Trailing identities placed in the test split.
    pub test_identities: usize,
    pub env_width: usize,
    pub env_height: usize,
    pub lights: usize,
}

impl Default for ToyWorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            resolution: 64,
            identities: 3,
            cameras: 4,
            envmaps: 16,
            test_identities: 0,
            env_width: 64,
            env_height: 32,
            lights: 150,
        }
    }
}

impl ToyWorldConfig {
    fn validate(&self) -> Result<()> {
        if self.resolution < 16 {
            return Err(Error::Config("resolution must be >= 16".into()));
        }
        if self.identities == 0 || self.cameras == 0 || self.envmaps == 0 {
            return Err(Error::Config("need at least one identity, camera and envmap".into()));
        }
        if self.test_identities > self.identities {
            return Err(Error::Config("more test identities than identities".into()));
        }
        if self.env_width < 2 || self.env_height < 1 {
            return Err(Error::Config("environment maps must be at least 2x1".into()));
        }
        Ok(())
    }

    /// Cameras spread over +-60 degrees of yaw with small seeded pitch.
    pub fn camera_poses(&self) -> Vec<CameraPose> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xca3e_7a5e);
        (0..self.cameras)
            .map(|c| {
                let t = if self.cameras == 1 {
                    0.5
                } else {
                    c as f64 / (self.cameras - 1) as f64
                };
                let yaw = (-60.0 + 120.0 * t).to_radians();
                let pitch = rng.gen_range(-10.0f64..10.0).to_radians();
                CameraPose::new(yaw, pitch, 0.0).expect("finite")
            })
            .collect()
    }
}

/// Outdoor-like map: sky gradient, ground, and a small bright sun.
pub fn random_sky(seed: u64, width: usize, height: usize) -> LatLongEnvMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sun_theta = rng.gen_range(0.1 * PI..0.45 * PI);
    let sun_phi = rng.gen_range(0.0..2.0 * PI);
    let sun_dir = [
        sun_theta.sin() * sun_phi.cos(),
        sun_theta.cos(),
        sun_theta.sin() * sun_phi.sin(),
    ];
    let sun_radius = rng.gen_range(6.0f64..12.0).to_radians();
    let sun_strength: f64 = rng.gen_range(5.0..40.0);
    let sun_color = [1.0, rng.gen_range(0.75..1.0), rng.gen_range(0.5..0.95)];
    let zenith = [rng.gen_range(0.1..0.4), rng.gen_range(0.2..0.5), rng.gen_range(0.5..1.0)];
    let horizon = [rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0)];
    let ground = [rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.25), rng.gen_range(0.02..0.2)];
    let sky_gain: f64 = rng.gen_range(0.3..2.0);
    let cos_radius = sun_radius.cos();

    let mut img = HdrImage::zeros(width, height);
    for y in 0..height {
        for x in 0..width {
            let u = (x as f64 + 0.5) / width as f64;
            let v = (y as f64 + 0.5) / height as f64;
            let theta = PI * v;
            let phi = 2.0 * PI * u;
            let d = [theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin()];
            let mut rgb = [0.0f64; 3];
            if d[1] >= 0.0 {
                let t = d[1];
                for c in 0..3 {
                    rgb[c] = sky_gain * (horizon[c] * (1.0 - t) + zenith[c] * t);
                }
            } else {
                rgb = ground;
            }
            if dot(d, sun_dir) >= cos_radius {
                for c in 0..3 {
                    rgb[c] += sun_strength * sun_color[c];
                }
            }
            img.set_pixel(x, y, rgb.map(|v| v as f32));
        }
    }
    LatLongEnvMap::new(img).expect("sky radiance is nonnegative")
}

fn identity_id(i: usize) -> String {
    format!("id{i}")
}

fn camera_id(c: usize) -> String {
    format!("cam{c}")
}

fn env_id(e: usize) -> String {
    format!("env{e:02}")
}

fn split_for(config: &ToyWorldConfig) -> Split {
    let ids: Vec<String> = (0..config.identities).map(identity_id).collect();
    let cut = config.identities - config.test_identities;
    Split {
        train: ids[..cut].to_vec(),
        test: ids[cut..].to_vec(),
    }
}

impl Dataset {
    /// Renders a complete toy dataset in memory.
    pub fn synthesize(config: &ToyWorldConfig) -> Result<Self> {
        config.validate()?;
        let basis = fibonacci_basis(config.lights)?;
        let poses = config.camera_poses();
        let mut identities = Vec::with_capacity(config.identities);
        for i in 0..config.identities {
            let texture = AlbedoTexture::random(config.seed.wrapping_mul(1000).wrapping_add(i as u64));
            let cameras = poses
                .iter()
                .enumerate()
                .map(|(c, &pose)| {
                    let stack = render_olat(
                        &texture,
                        pose,
                        config.resolution,
                        &basis,
                        &identity_id(i),
                        &camera_id(c),
                    )?;
                    Ok(CameraEntry {
                        id: camera_id(c),
                        pose,
                        stack: Arc::new(stack),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            identities.push(IdentityEntry {
                id: identity_id(i),
                cameras,
            });
        }
        let envmaps = (0..config.envmaps)
            .map(|e| {
                let map = random_sky(
                    config.seed.wrapping_mul(7919).wrapping_add(e as u64 + 1),
                    config.env_width,
                    config.env_height,
                );
                let weights = resample_to_basis(&map, &basis)?;
                Ok(EnvEntry {
                    id: env_id(e),
                    map: Arc::new(map),
                    weights,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::from_parts(basis, identities, envmaps, split_for(config))
    }
}

/// Writes a toy dataset to `dir`: basis file, environment maps, OLAT
/// directories and `manifest.json`.
pub fn write_toy_dataset(dir: impl AsRef<Path>, config: &ToyWorldConfig) -> Result<Manifest> {
    let dir = dir.as_ref();
    let data = Dataset::synthesize(config)?;
    std::fs::create_dir_all(dir.join("envmaps")).map_err(|e| Error::io(dir, e))?;
    let basis_path = dir.join("basis.txt");
    std::fs::write(&basis_path, data.basis().to_text()).map_err(|e| Error::io(&basis_path, e))?;

    let mut envmaps = Vec::new();
    for env in data.envmaps() {
        let rel = format!("envmaps/{}.hdr", env.id);
        env.map.image().write_hdr_file(dir.join(&rel))?;
        envmaps.push(EnvRecord {
            id: env.id.clone(),
            path: rel,
        });
    }
    let mut identities = Vec::new();
    for ident in data.identities() {
        let mut cameras = Vec::new();
        for cam in &ident.cameras {
            let rel = format!("olat/{}/{}", ident.id, cam.id);
            cam.stack.write_dir(dir.join(&rel))?;
            cameras.push(CameraRecord {
                id: cam.id.clone(),
                pose: cam.pose,
                olat_dir: rel,
            });
        }
        identities.push(IdentityRecord {
            id: ident.id.clone(),
            cameras,
        });
    }
    let manifest = Manifest {
        basis_file: Some("basis.txt".into()),
        identities,
        envmaps,
        split: data.split().clone(),
    };
    manifest.save(dir.join("manifest.json"))?;
    debug_assert!(dir.join("olat").join("id0").join("cam0").join(olat_file_name(0)).exists());
    Ok(manifest)
}
