//! Command-line front end. Every subcommand composes library operations.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use crate::envmap::{fibonacci_basis, resample_to_basis, LatLongEnvMap, LightBasis, CANONICAL_LIGHT_COUNT};
use crate::error::{Error, Result};
use crate::latent_edit::{edit, ConditionVector, EditSource, Generator, LatentCode, PhotoAppNet, ToyGenerator};
use crate::metrics::EvalReport;
use crate::olat::{
    make_eval_sets, make_training_pairs, network_image, relight, write_toy_dataset, CameraPose, Dataset, OlatStack,
    ToyWorldConfig, TrainingPair,
};
use crate::radiometry_io::{read_png, tonemap, write_png, HdrImage};
use crate::service::{AppState, ServiceConfig};
use crate::training::{
    evaluate_model, loss_log_csv, prepare_samples, read_checkpoint_file, save_checkpoint, train, write_checkpoint_file,
    PyramidFeatures, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "photoapp", version, about = "OLAT relighting and latent appearance editing")]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalSet {
    Set1,
    Set2,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Relight an OLAT stack with an environment map.
    Relight {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        basis: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        exposure: f32,
        #[arg(long, default_value_t = 2.2)]
        gamma: f32,
    },
    /// Resample an environment map onto a light basis (JSON weights).
    Resample {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a synthetic Lambertian dataset.
    SynthWorld {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        identities: usize,
        #[arg(long, default_value_t = 4)]
        cameras: usize,
        #[arg(long, default_value_t = 16)]
        envmaps: usize,
        #[arg(long, default_value_t = 0)]
        test_identities: usize,
        #[arg(long, default_value_t = CANONICAL_LIGHT_COUNT)]
        lights: usize,
    },
    /// Generate training pairs, or evaluation sets with --eval.
    MakePairs {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 300, conflicts_with = "eval")]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        eval: bool,
    },
    /// Train the editing network.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// JSON training configuration; omitted fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Edit an image or latent code towards a target environment and pose.
    Edit {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A `.png`/`.hdr` image or a latent code file.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        basis: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        yaw: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        pitch: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        roll: f64,
        #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
        p: u8,
        #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=1))]
        q: u8,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        generator_seed: u64,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
    },
    /// Score a checkpoint on a held-out evaluation set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        set: EvalSet,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        generator_seed: u64,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
    },
    /// Run the HTTP editing service.
    Serve {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Dataset whose basis and environment maps the service offers.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        generator_seed: u64,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
    },
}

fn extension(path: &Path) -> String {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default()
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// `.hdr` keeps radiance; `.png` is tonemapped.
fn save_image(path: &Path, img: &HdrImage, exposure: f32, gamma: f32) -> Result<()> {
    match extension(path).as_str() {
        "hdr" => img.write_hdr_file(path),
        "png" => write_file(path, write_png(&tonemap(img, exposure, gamma)?)?),
        other => Err(Error::Unsupported(format!("output extension .{other}; use .hdr or .png"))),
    }
}

fn load_basis(path: Option<&Path>) -> Result<LightBasis> {
    match path {
        Some(p) => LightBasis::load(p),
        None => fibonacci_basis(CANONICAL_LIGHT_COUNT),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value)? + "\n")
}

fn load_net(path: &Path) -> Result<PhotoAppNet<f32>> {
    Ok(read_checkpoint_file(path)?.net)
}

fn toy_generator(net: &PhotoAppNet<f32>, seed: u64, size: usize) -> Result<ToyGenerator> {
    let cfg = net.config();
    ToyGenerator::with_latent_shape(seed, size, cfg.blocks, cfg.latent_dim)
}

fn run_command(command: Command) -> Result<()> {
    match command {
        Command::Relight {
            stack,
            env,
            basis,
            out,
            exposure,
            gamma,
        } => {
            let basis = load_basis(basis.as_deref())?;
            let stack = OlatStack::load_dir(&stack, basis.len(), "stack", "camera", CameraPose::default())?;
            let weights = resample_to_basis(&LatLongEnvMap::load(&env)?, &basis)?;
            save_image(&out, &relight(&stack, &weights)?, exposure, gamma)
        }
        Command::Resample { env, basis, out } => {
            let weights = resample_to_basis(&LatLongEnvMap::load(&env)?, &LightBasis::load(&basis)?)?;
            write_json(&out, &weights.values())
        }
        Command::SynthWorld {
            seed,
            size,
            out,
            identities,
            cameras,
            envmaps,
            test_identities,
            lights,
        } => {
            let config = ToyWorldConfig {
                seed,
                resolution: size,
                identities,
                cameras,
                envmaps,
                test_identities,
                lights,
                ..ToyWorldConfig::default()
            };
            write_toy_dataset(&out, &config).map(|_| ())
        }
        Command::MakePairs {
            manifest,
            count,
            seed,
            out,
            eval,
        } => {
            let manifest = crate::olat::Manifest::load(&manifest)?;
            if eval {
                write_json(&out, &make_eval_sets(&manifest, seed)?)
            } else {
                write_json(&out, &make_training_pairs(&manifest, count, seed)?)
            }
        }
        Command::Train {
            manifest,
            pairs,
            config,
            out,
        } => {
            let config: TrainConfig = match config {
                Some(p) => read_json(&p)?,
                None => TrainConfig::default(),
            };
            config.validate()?;
            let dataset = Dataset::load(&manifest)?;
            let pairs: Vec<TrainingPair> = read_json(&pairs)?;
            let generator = ToyGenerator::new(config.generator_seed, config.image_size)?;
            let samples = prepare_samples(&dataset, &pairs, &generator, config.use_q)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_json(&out.join("config.json"), &config)?;
            let dir = out.clone();
            let outcome = train(
                &samples,
                &generator,
                &PyramidFeatures::default(),
                &config,
                None,
                &mut |step, net, adam| {
                    write_checkpoint_file(dir.join(format!("step_{step:06}.pan")), &save_checkpoint(net, Some(adam))?)
                },
            )?;
            write_checkpoint_file(out.join("checkpoint.pan"), &save_checkpoint(&outcome.net, Some(&outcome.adam))?)?;
            write_file(&out.join("loss_log.csv"), loss_log_csv(&outcome.log))
        }
        Command::Edit {
            checkpoint,
            input,
            env,
            basis,
            yaw,
            pitch,
            roll,
            p,
            q,
            out,
            generator_seed,
            image_size,
        } => {
            let net = load_net(&checkpoint)?;
            let generator = toy_generator(&net, generator_seed, image_size)?;
            let basis = match basis {
                Some(b) => LightBasis::load(&b)?,
                None => fibonacci_basis(net.config().env_dim / 3)?,
            };
            let weights = resample_to_basis(&LatLongEnvMap::load(&env)?, &basis)?;
            let source = match extension(&input).as_str() {
                "png" => {
                    let bytes = std::fs::read(&input).map_err(|e| Error::io(&input, e))?;
                    EditSource::Image(read_png(&bytes)?.to_unit_float())
                }
                "hdr" => EditSource::Image(network_image(&HdrImage::read_hdr_file(&input)?)),
                _ => EditSource::Latent(LatentCode::load(&input)?),
            };
            let cond = ConditionVector::new(
                weights,
                CameraPose::new(yaw, pitch, roll)?,
                p,
                net.config().use_q.then_some(q),
            )?;
            let result = edit(&generator, &net, &source, &cond)?;
            save_image(&out, &result, 1.0, 1.0)
        }
        Command::Eval {
            checkpoint,
            manifest,
            set,
            out,
            seed,
            generator_seed,
            image_size,
        } => {
            let net = load_net(&checkpoint)?;
            let generator = toy_generator(&net, generator_seed, image_size)?;
            let dataset = Dataset::load(&manifest)?;
            let sets = make_eval_sets(dataset.manifest(), seed)?;
            let (pairs, label) = match set {
                EvalSet::Set1 => (sets.set1, "Set1"),
                EvalSet::Set2 => (sets.set2, "Set2"),
            };
            if pairs.is_empty() {
                return Err(Error::Config(format!("{label} is empty for this manifest")));
            }
            let samples = prepare_samples(&dataset, &pairs, &generator, net.config().use_q)?;
            let report: EvalReport = evaluate_model(&net, &generator, &samples, label)?;
            match extension(&out).as_str() {
                "csv" => write_file(&out, report.to_csv()),
                _ => write_file(&out, report.to_json()? + "\n"),
            }
        }
        Command::Serve {
            checkpoint,
            port,
            host,
            manifest,
            generator_seed,
            image_size,
        } => {
            let mut config = match &manifest {
                Some(m) => ServiceConfig::from_dataset(&Dataset::load(m)?),
                None => ServiceConfig {
                    basis: fibonacci_basis(CANONICAL_LIGHT_COUNT)?,
                    envmaps: Vec::new(),
                    generator: None,
                    net: None,
                },
            };
            if let Some(ck) = checkpoint {
                let net = load_net(&ck)?;
                let generator: Arc<dyn Generator> = Arc::new(toy_generator(&net, generator_seed, image_size)?);
                config.generator = Some(generator);
                config.net = Some(Arc::new(net));
            }
            let state = AppState::new(config)?;
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| Error::Parameter(format!("bad address {host}:{port}: {e}")))?;
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| Error::io(PathBuf::from("tokio runtime"), e))?;
            eprintln!("listening on http://{addr}/api/v1/");
            runtime.block_on(crate::service::serve(state, addr))
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code: 0 success, 1 runtime failure, 2 usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 2;
        }
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run_command(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
