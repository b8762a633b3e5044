//! The `byoc` command line: data generation, training, registration,
//! evaluation and report tables.
//!
//! Every subcommand prints its result as JSON on stdout; progress and
//! warnings go to stderr. Exit codes are 0 on success, 1 for input or
//! configuration errors and 2 when a fit degenerates.
//!
//! Options can also come from a TOML file given with `--config`, whose keys
//! are the long flag names with dashes replaced by underscores. Flags on the
//! command line take precedence over the file, which takes precedence over
//! the built-in defaults.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::alignment::{icp, IcpVariant, RandomizedConfig, RansacConfig};
use crate::correspondence::{CorrespondenceSet, DEFAULT_TOP_K};
use crate::data::{
    generate_scene_pair, load_manifest, ply_read, ply_write, GeneratorParams, ManifestEntry, PairManifest, PairPaths,
    PairSeed, Split,
};
use crate::error::{Error, Result};
use crate::evaluation::{feature_match_recall, summarize, FmrConfig, FmrPair, PairMetrics, Report, Thresholds};
use crate::features::{context_dim, encoder_shapes, fpfh_descriptor, EncoderParams, FeatureCloud, Modality};
use crate::geometry::{apply_transform, estimate_normals, voxel_downsample, PointCloud, RigidTransform};
use crate::learning::{
    fit_features, prepare, register, train, FitMode, JsonLines, RegisterConfig, TrainConfig, TrainSink, TrainState,
    Variant,
};

#[derive(Debug, Parser)]
#[command(name = "byoc", version, about = "Self-supervised point cloud registration")]
pub struct Cli {
    /// More log output on stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic view pairs as PLY files plus a manifest.
    GenData(GenDataArgs),
    /// Train the encoders on a manifest's train split.
    Train(TrainArgs),
    /// Register two PLY clouds.
    Register(RegisterArgs),
    /// Register every pair of a manifest split and report the errors.
    Evaluate(EvaluateArgs),
    /// Summarize per-pair results written by `evaluate`.
    Report(ReportArgs),
}

fn read_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::param(format!("{}: {e}", p.display())))
        }
        None => Ok(T::default()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value serializes"));
}

// ---------------------------------------------------------------- gen-data

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output directory for PLY files and `manifest.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of pairs to generate.
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// View pairs drawn from each scene.
    #[arg(long)]
    pub views_per_scene: Option<u64>,
    /// Fractions of scenes assigned to train and valid; the rest is test.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub valid_fraction: Option<f64>,
    /// Use the large-motion preset as the base parameters.
    #[arg(long)]
    pub large_motion: bool,
    /// Write seeds only; pairs are regenerated when loaded.
    #[arg(long)]
    pub seeds_only: bool,
    /// TOML file with generator parameters and any of the options above.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenDataFile {
    pairs: Option<usize>,
    seed: Option<u64>,
    views_per_scene: Option<u64>,
    train_fraction: Option<f64>,
    valid_fraction: Option<f64>,
    seeds_only: Option<bool>,
    generator: Option<GeneratorParams>,
}

/// Attempts per pair slot before giving up; each attempt uses a fresh view
/// of the same scene.
const VIEW_ATTEMPTS: u64 = 10;

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<serde_json::Value> {
    let file: GenDataFile = read_config(args.config.as_deref())?;
    let pairs = args.pairs.or(file.pairs).unwrap_or(100);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let per_scene = args.views_per_scene.or(file.views_per_scene).unwrap_or(1);
    let train_fraction = args.train_fraction.or(file.train_fraction).unwrap_or(0.8);
    let valid_fraction = args.valid_fraction.or(file.valid_fraction).unwrap_or(0.1);
    let seeds_only = args.seeds_only || file.seeds_only.unwrap_or(false);
    let params = match (args.large_motion, file.generator) {
        (true, _) => GeneratorParams::large_motion(),
        (false, Some(g)) => g,
        (false, None) => GeneratorParams::default(),
    };
    params.validate()?;
    if pairs == 0 || per_scene == 0 {
        return Err(Error::param("--pairs and --views-per-scene must be at least 1"));
    }
    if !(0.0..=1.0).contains(&train_fraction) || !(0.0..=1.0).contains(&valid_fraction) || train_fraction + valid_fraction > 1.0 {
        return Err(Error::param("split fractions must lie in [0, 1] and sum to at most 1"));
    }

    let scenes = pairs.div_ceil(per_scene as usize);
    let split_of = |scene_index: usize| {
        let f = scene_index as f64 / scenes as f64;
        if f < train_fraction {
            Split::Train
        } else if f < train_fraction + valid_fraction {
            Split::Valid
        } else {
            Split::Test
        }
    };
    let base = seed.wrapping_mul(1_000_003);
    let generated: Vec<Result<(ManifestEntry, crate::data::ScenePair)>> = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let scene_index = i / per_scene as usize;
            let scene = base.wrapping_add(scene_index as u64);
            let slot = i as u64 % per_scene;
            let mut last = None;
            for attempt in 0..VIEW_ATTEMPTS {
                let s = PairSeed {
                    scene,
                    view: slot + attempt * per_scene,
                };
                match generate_scene_pair(s, &params) {
                    Ok(pair) => {
                        let entry = ManifestEntry {
                            scene_id: scene,
                            split: split_of(scene_index),
                            seed: Some(s),
                            paths: None,
                            transform: Some(pair.transform),
                            overlap: Some(pair.overlap),
                        };
                        return Ok((entry, pair));
                    }
                    Err(e) => {
                        log::warn!("scene {scene} view {}: {e}", s.view);
                        last = Some(e);
                    }
                }
            }
            Err(last.expect("at least one attempt"))
        })
        .collect();
    let generated: Vec<_> = generated.into_iter().collect::<Result<_>>()?;

    create_dir(&args.out)?;
    let mut entries = Vec::with_capacity(generated.len());
    if !seeds_only {
        create_dir(&args.out.join("pairs"))?;
    }
    for (mut entry, pair) in generated.iter().cloned() {
        if !seeds_only {
            let s = entry.seed.expect("generated entries carry seeds");
            let name = |k: u8| PathBuf::from("pairs").join(format!("{}_{}_{k}.ply", s.scene, s.view));
            let paths = PairPaths {
                cloud0: name(0),
                cloud1: name(1),
            };
            ply_write(&args.out.join(&paths.cloud0), &pair.cloud0)?;
            ply_write(&args.out.join(&paths.cloud1), &pair.cloud1)?;
            entry.paths = Some(paths);
        }
        entries.push(entry);
    }
    let manifest = PairManifest {
        entries,
        base_dir: args.out.clone(),
    };
    manifest.validate()?;
    let manifest_path = args.out.join("manifest.jsonl");
    fs::write(&manifest_path, manifest.to_jsonl()).map_err(|e| Error::io(&manifest_path, e))?;
    let gen_path = args.out.join("generator.toml");
    fs::write(&gen_path, params.to_toml()).map_err(|e| Error::io(&gen_path, e))?;

    let n = generated.len() as f64;
    let mean = |f: &dyn Fn(&crate::data::ScenePair) -> f64| generated.iter().map(|(_, p)| f(p)).sum::<f64>() / n;
    let count = |s: Split| manifest.split(s).count();
    Ok(json!({
        "pairs": generated.len(),
        "manifest": manifest_path,
        "mean_rotation_deg": mean(&|p| p.transform.rotation_angle().to_degrees()),
        "mean_translation_cm": mean(&|p| p.transform.translation.norm() * 100.0),
        "mean_overlap": mean(&|p| p.overlap),
        "mean_points": mean(&|p| p.cloud0.len() as f64),
        "splits": { "train": count(Split::Train), "valid": count(Split::Valid), "test": count(Split::Test) },
    }))
}

/// Generator parameters for seed-only entries: the given file, else the
/// `generator.toml` written next to the manifest, else the defaults.
fn generator_for(manifest: &Path, explicit: Option<&Path>) -> Result<GeneratorParams> {
    let sibling = manifest.parent().map(|d| d.join("generator.toml"));
    let path = explicit.map(Path::to_path_buf).or(sibling.filter(|p| p.exists()));
    match path {
        Some(p) => GeneratorParams::from_toml(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?),
        None => Ok(GeneratorParams::default()),
    }
}

// ------------------------------------------------------------------- train

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for the log, checkpoints and final model.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda_vis: Option<f64>,
    #[arg(long)]
    pub lambda_geo: Option<f64>,
    #[arg(long)]
    pub lambda_v2g: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub validate_every: Option<usize>,
    /// Record elapsed time in the log (logs then differ between runs).
    #[arg(long)]
    pub log_wall_time: bool,
    /// Continue from a training state written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Generator parameters for seed-only manifest entries.
    #[arg(long)]
    pub generator_config: Option<PathBuf>,
    /// TOML file with training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

struct TrainFiles {
    log: JsonLines<BufWriter<fs::File>>,
    checkpoints: PathBuf,
}

impl TrainSink for TrainFiles {
    fn log(&mut self, record: &serde_json::Value) -> Result<()> {
        self.log.log(record)
    }

    fn checkpoint(&mut self, state: &TrainState) -> Result<()> {
        self.log.0.flush().map_err(|e| Error::io(&self.checkpoints, e))?;
        state.save(&self.checkpoints.join(format!("state-{:06}.bin", state.iteration)))
    }
}

pub fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = read_config(args.config.as_deref())?;
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = args.$flag {
                cfg.$field = v;
            }
        )*};
    }
    set!(variant => variant, iters => iterations, lr => lr, batch_size => batch_size, seed => seed,
        lambda_vis => lambda_vis, lambda_geo => lambda_geo, lambda_v2g => lambda_v2g,
        checkpoint_every => checkpoint_every, validate_every => validate_every);
    cfg.log_wall_time |= args.log_wall_time;
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(args: &TrainArgs) -> Result<serde_json::Value> {
    let cfg = train_config(args)?;
    let manifest = load_manifest(&args.manifest)?;
    let gen = generator_for(&args.manifest, args.generator_config.as_deref())?;
    let resume = args.resume.as_deref().map(|p| TrainState::load(p, cfg.adam())).transpose()?;
    let checkpoints = args.out.join("checkpoints");
    create_dir(&checkpoints)?;
    let log_path = args.out.join("log.jsonl");
    let log_file = fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut sink = TrainFiles {
        log: JsonLines(BufWriter::new(log_file)),
        checkpoints,
    };
    let state = train(&manifest, &gen, &cfg, resume, &mut sink)?;
    sink.log.0.flush().map_err(|e| Error::io(&log_path, e))?;
    let state_path = args.out.join("final.state");
    state.save(&state_path)?;
    let model = &state.model;
    let files = [("visual", &model.visual), ("geometric", &model.geometric), ("head", &model.head)];
    for (name, params) in files {
        params.save(&args.out.join(format!("{name}.bin")))?;
    }
    let (l_vis, l_geo, l_v2g) = cfg.effective_weights();
    Ok(json!({
        "iterations": state.iteration,
        "variant": cfg.variant,
        "lambda_vis": l_vis,
        "lambda_geo": l_geo,
        "lambda_v2g": l_v2g,
        "log": log_path,
        "state": state_path,
        "geometric": args.out.join("geometric.bin"),
    }))
}

// ---------------------------------------------------------------- register

#[derive(Debug, Args)]
pub struct RegisterArgs {
    pub cloud0: PathBuf,
    pub cloud1: PathBuf,
    /// Encoder checkpoint for the chosen modality; random weights if absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub modality: Option<ModalityArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub voxel_size: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Write cloud 0 moved by the estimated transform to this PLY file.
    #[arg(long)]
    pub aligned_out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Procrustes,
    Randomized,
    Ransac,
}

impl From<ModeArg> for FitMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Procrustes => FitMode::Procrustes,
            ModeArg::Randomized => FitMode::Randomized,
            ModeArg::Ransac => FitMode::Ransac,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityArg {
    Visual,
    Geometric,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Visual => Modality::Visual,
            ModalityArg::Geometric => Modality::Geometric,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegisterFile {
    checkpoint: Option<PathBuf>,
    mode: Option<ModeArg>,
    modality: Option<ModalityArg>,
    seed: Option<u64>,
    voxel_size: Option<f64>,
    top_k: Option<usize>,
}

fn encoder_for(checkpoint: Option<&Path>, modality: Modality, seed: u64) -> Result<EncoderParams> {
    let params = match checkpoint {
        Some(p) => EncoderParams::load(p)?,
        None => EncoderParams::random_init(seed, &encoder_shapes(context_dim(modality))),
    };
    if params.input_dim() != context_dim(modality) {
        return Err(Error::param(format!(
            "checkpoint expects {}-dimensional input, {modality} contexts have {}",
            params.input_dim(),
            context_dim(modality)
        )));
    }
    Ok(params)
}

fn register_config(mode: FitMode, modality: Modality, seed: u64, voxel_size: f64, top_k: usize) -> RegisterConfig {
    RegisterConfig {
        mode,
        modality,
        voxel_size,
        top_k,
        randomized: RandomizedConfig {
            seed,
            ..Default::default()
        },
        ransac: RansacConfig {
            seed,
            ..Default::default()
        },
    }
}

pub fn cmd_register(args: &RegisterArgs) -> Result<serde_json::Value> {
    let file: RegisterFile = read_config(args.config.as_deref())?;
    let modality: Modality = args.modality.or(file.modality).unwrap_or(ModalityArg::Geometric).into();
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let cfg = register_config(
        args.mode.or(file.mode).unwrap_or(ModeArg::Randomized).into(),
        modality,
        seed,
        args.voxel_size.or(file.voxel_size).unwrap_or(0.025),
        args.top_k.or(file.top_k).unwrap_or(DEFAULT_TOP_K),
    );
    let checkpoint = args.checkpoint.clone().or(file.checkpoint);
    if checkpoint.is_none() {
        log::warn!("no checkpoint given, using randomly initialized {modality} encoder (seed {seed})");
    }
    let params = encoder_for(checkpoint.as_deref(), modality, seed)?;
    let p0 = ply_read(&args.cloud0)?;
    let p1 = ply_read(&args.cloud1)?;
    let fit = register(&p0, &p1, &params, &cfg)?;
    if let Some(out) = &args.aligned_out {
        ply_write(out, &apply_transform(&fit.transform, &p0))?;
    }
    Ok(fit.to_json())
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    /// Encoder weights from `--checkpoint`.
    Learned,
    /// Randomly initialized encoder.
    Random,
    /// Hand-crafted histogram descriptors.
    Fpfh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Procrustes,
    Randomized,
    Ransac,
    IcpP2p,
    IcpP2pl,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Encoder checkpoint; implies `--features learned`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub features: Option<FeatureSource>,
    #[arg(long, value_enum)]
    pub modality: Option<ModalityArg>,
    #[arg(long, value_enum)]
    pub estimator: Option<Estimator>,
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub voxel_size: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Worker threads; pairs are processed in parallel and merged in order.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Write one JSON record per pair to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub generator_config: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateFile {
    checkpoint: Option<PathBuf>,
    features: Option<FeatureSource>,
    modality: Option<ModalityArg>,
    estimator: Option<Estimator>,
    split: Option<Split>,
    seed: Option<u64>,
    voxel_size: Option<f64>,
    top_k: Option<usize>,
    workers: Option<usize>,
}

/// Resolved evaluation settings.
#[derive(Debug, Clone, Serialize)]
pub struct EvalSettings {
    pub features: FeatureSource,
    pub modality: Modality,
    pub estimator: Estimator,
    pub split: Split,
    pub seed: u64,
    pub voxel_size: f64,
    pub top_k: usize,
    pub workers: usize,
}

/// One evaluated pair as written by `evaluate --out`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub scene_id: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<PairSeed>,
    #[serde(flatten)]
    pub metrics: PairMetrics,
    #[serde(default)]
    pub within: std::collections::BTreeMap<String, bool>,
    /// True when the fit failed and the identity was scored instead.
    pub failed: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub feature_match: Option<bool>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub diagnostics: Vec<String>,
}

struct Evaluated {
    record: PairRecord,
    fmr_input: Option<(CorrespondenceSet, PointCloud, PointCloud, RigidTransform)>,
}

fn fpfh_features(cloud: &PointCloud, voxel_size: f64) -> Result<FeatureCloud> {
    let down = voxel_downsample(cloud, voxel_size)?.cloud;
    let (with_normals, _) = estimate_normals(&down, 16, nalgebra::Vector3::zeros())?;
    let d = fpfh_descriptor(&with_normals, 16)?;
    FeatureCloud::new(with_normals, d.descriptors, Modality::Geometric)
}

fn evaluate_entry(
    manifest: &PairManifest,
    entry: &ManifestEntry,
    gen: &GeneratorParams,
    s: &EvalSettings,
    params: Option<&EncoderParams>,
) -> Result<Evaluated> {
    let pair = manifest.load_pair(entry, gen)?;
    let truth = entry.transform.unwrap_or(pair.transform);
    let mut diagnostics = Vec::new();
    let reg = register_config(FitMode::Randomized, s.modality, s.seed, s.voxel_size, s.top_k);
    let outcome: Result<(RigidTransform, Option<(CorrespondenceSet, PointCloud, PointCloud)>)> = match s.estimator {
        Estimator::IcpP2p | Estimator::IcpP2pl => (|| {
            let a = voxel_downsample(&pair.cloud0, s.voxel_size)?.cloud;
            let b = voxel_downsample(&pair.cloud1, s.voxel_size)?.cloud;
            let (variant, b) = if s.estimator == Estimator::IcpP2pl {
                (IcpVariant::PointToPlane, estimate_normals(&b, 16, nalgebra::Vector3::zeros())?.0)
            } else {
                (IcpVariant::PointToPoint, b)
            };
            let fit = icp(&a, &b, variant, &RigidTransform::identity(), 50, 1e-6)?;
            Ok((fit.transform, None))
        })(),
        Estimator::Procrustes | Estimator::Randomized | Estimator::Ransac => (|| {
            let (f0, f1) = match (s.features, params) {
                (FeatureSource::Fpfh, _) => (fpfh_features(&pair.cloud0, s.voxel_size)?, fpfh_features(&pair.cloud1, s.voxel_size)?),
                (_, Some(p)) => (
                    prepare(&pair.cloud0, s.modality, s.voxel_size)?.encode(p)?,
                    prepare(&pair.cloud1, s.modality, s.voxel_size)?.encode(p)?,
                ),
                (_, None) => return Err(Error::param("learned features need a checkpoint")),
            };
            let mode = match s.estimator {
                Estimator::Procrustes => FitMode::Procrustes,
                Estimator::Ransac => FitMode::Ransac,
                _ => FitMode::Randomized,
            };
            let (fit, c) = fit_features(&f0, &f1, &RegisterConfig { mode, ..reg })?;
            Ok((fit.transform, Some((c, f0.cloud, f1.cloud))))
        })(),
    };
    let (predicted, fmr_input, failed) = match outcome {
        Ok((t, c)) => (t, c, false),
        Err(e) if e.is_degenerate() => {
            diagnostics.push(format!("fit failed: {e}"));
            (RigidTransform::identity(), None, true)
        }
        Err(e) => return Err(e),
    };
    let metrics = PairMetrics::compute(&predicted, &truth, Some(&pair.cloud0))?;
    Ok(Evaluated {
        record: PairRecord {
            scene_id: entry.scene_id,
            seed: entry.seed,
            metrics,
            within: metrics.flags(&Thresholds::default()),
            failed,
            feature_match: None,
            diagnostics,
        },
        fmr_input: fmr_input.map(|(c, a, b)| (c, a, b, truth)),
    })
}

fn eval_settings(args: &EvaluateArgs, file: &EvaluateFile) -> Result<EvalSettings> {
    let has_checkpoint = args.checkpoint.is_some() || file.checkpoint.is_some();
    let default_features = if has_checkpoint { FeatureSource::Learned } else { FeatureSource::Random };
    let s = EvalSettings {
        features: args.features.or(file.features).unwrap_or(default_features),
        modality: args.modality.or(file.modality).unwrap_or(ModalityArg::Geometric).into(),
        estimator: args.estimator.or(file.estimator).unwrap_or(Estimator::Randomized),
        split: args.split.or(file.split).unwrap_or(Split::Test),
        seed: args.seed.or(file.seed).unwrap_or(0),
        voxel_size: args.voxel_size.or(file.voxel_size).unwrap_or(0.025),
        top_k: args.top_k.or(file.top_k).unwrap_or(DEFAULT_TOP_K),
        workers: args.workers.or(file.workers).unwrap_or(1),
    };
    if s.workers == 0 || s.top_k == 0 || !(s.voxel_size > 0.0) {
        return Err(Error::param("workers and top-k must be at least 1 and voxel size positive"));
    }
    if s.features == FeatureSource::Learned && !has_checkpoint {
        return Err(Error::param("--features learned needs --checkpoint"));
    }
    if s.features == FeatureSource::Fpfh && s.modality == Modality::Visual {
        return Err(Error::param("fpfh descriptors are geometric"));
    }
    Ok(s)
}

/// The summary document printed by `evaluate` and `report`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub report: Report,
    pub failures: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub feature_match_recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub feature_match_std: Option<f64>,
}

pub fn evaluate_manifest(
    manifest: &PairManifest,
    gen: &GeneratorParams,
    s: &EvalSettings,
    checkpoint: Option<&Path>,
) -> Result<(Vec<PairRecord>, EvalSummary)> {
    let params = match s.features {
        FeatureSource::Learned => Some(encoder_for(checkpoint, s.modality, s.seed)?),
        FeatureSource::Random => Some(encoder_for(None, s.modality, s.seed)?),
        FeatureSource::Fpfh => None,
    };
    let entries: Vec<&ManifestEntry> = manifest.split(s.split).collect();
    if entries.is_empty() {
        return Err(Error::Input(format!("manifest has no {} pairs", s.split)));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(s.workers)
        .build()
        .map_err(|e| Error::param(format!("worker pool: {e}")))?;
    let results: Vec<Result<Evaluated>> =
        pool.install(|| entries.par_iter().map(|e| evaluate_entry(manifest, e, gen, s, params.as_ref())).collect());
    let mut evaluated: Vec<Evaluated> = results.into_iter().collect::<Result<_>>()?;

    let fmr = {
        let inputs: Vec<_> = evaluated.iter().filter_map(|e| e.fmr_input.as_ref().map(|i| (e.record.scene_id, i))).collect();
        let inverse: Vec<RigidTransform> = inputs.iter().map(|(_, i)| i.3.inverse()).collect();
        let pairs: Vec<FmrPair<'_>> = inputs
            .iter()
            .zip(&inverse)
            .map(|((scene, (c, a, b, _)), t)| FmrPair {
                correspondences: c,
                cloud0: a,
                cloud1: b,
                transform: t,
                group: *scene,
            })
            .collect();
        if pairs.is_empty() {
            None
        } else {
            Some(feature_match_recall(&pairs, &FmrConfig::default())?)
        }
    };
    if let Some(f) = &fmr {
        let mut matched = f.matched.iter();
        for e in evaluated.iter_mut().filter(|e| e.fmr_input.is_some()) {
            e.record.feature_match = matched.next().copied();
        }
    }
    let records: Vec<PairRecord> = evaluated.into_iter().map(|e| e.record).collect();
    let summary = summary_of(&records)?;
    Ok((records, summary))
}

fn summary_of(records: &[PairRecord]) -> Result<EvalSummary> {
    let metrics: Vec<PairMetrics> = records.iter().map(|r| r.metrics).collect();
    let fm: Vec<(u64, bool)> = records.iter().filter_map(|r| r.feature_match.map(|m| (r.scene_id, m))).collect();
    let (recall, std) = if fm.is_empty() {
        (None, None)
    } else {
        let mut groups: std::collections::BTreeMap<u64, (usize, usize)> = Default::default();
        for &(g, m) in &fm {
            let e = groups.entry(g).or_default();
            e.0 += m as usize;
            e.1 += 1;
        }
        let rates: Vec<f64> = groups.values().map(|&(k, n)| k as f64 / n as f64).collect();
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        let std = (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rates.len() as f64).sqrt();
        (Some(fm.iter().filter(|f| f.1).count() as f64 / fm.len() as f64), Some(std))
    };
    Ok(EvalSummary {
        report: summarize(&metrics, &Thresholds::default())?,
        failures: records.iter().filter(|r| r.failed).count(),
        feature_match_recall: recall,
        feature_match_std: std,
    })
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<serde_json::Value> {
    let file: EvaluateFile = read_config(args.config.as_deref())?;
    let settings = eval_settings(args, &file)?;
    let manifest = load_manifest(&args.manifest)?;
    let gen = generator_for(&args.manifest, args.generator_config.as_deref())?;
    let checkpoint = args.checkpoint.clone().or(file.checkpoint);
    let (records, summary) = evaluate_manifest(&manifest, &gen, &settings, checkpoint.as_deref())?;
    if let Some(out) = &args.out {
        let mut text = String::new();
        for r in &records {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        fs::write(out, text).map_err(|e| Error::io(out, e))?;
    }
    Ok(json!({ "settings": settings, "summary": summary }))
}

// ------------------------------------------------------------------ report

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Per-pair records written by `evaluate --out`.
    pub input: PathBuf,
    /// Print the aligned text table instead of JSON.
    #[arg(long)]
    pub text: bool,
}

pub fn read_records(path: &Path) -> Result<Vec<PairRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn cmd_report(args: &ReportArgs) -> Result<Option<serde_json::Value>> {
    let records = read_records(&args.input)?;
    let summary = summary_of(&records)?;
    if args.text {
        print!("{}", summary.report.to_text());
        if let Some(r) = summary.feature_match_recall {
            println!("feature-match recall: {:.3} (std {:.3})", r, summary.feature_match_std.unwrap_or(0.0));
        }
        println!("failures: {}", summary.failures);
        return Ok(None);
    }
    Ok(Some(serde_json::to_value(summary)?))
}

// -------------------------------------------------------------------- main

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let result = match &cli.command {
        Command::GenData(a) => cmd_gen_data(a).map(Some),
        Command::Train(a) => cmd_train(a).map(Some),
        Command::Register(a) => cmd_register(a).map(Some),
        Command::Evaluate(a) => cmd_evaluate(a).map(Some),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(Some(v)) => {
            print_json(&v);
            0
        }
        Ok(None) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_degenerate() {
                2
            } else {
                1
            }
        }
    }
}

pub fn main() -> i32 {
    run(Cli::parse())
}
