use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::rotation_augment;
use super::loss::{registration_loss, simsiam_loss};
use super::optim::{Adam, AdamConfig};
use super::register::{fit_features, RegisterConfig};
use crate::autodiff::{Tape, Var};
use crate::correspondence::{match_ratio_test, top_k_filter, CorrespondenceSet, DEFAULT_TOP_K};
use crate::data::{GeneratorParams, PairManifest, ScenePair, Split};
use crate::error::{Error, Result};
use crate::evaluation::{mean, median, rotation_error, translation_error};
use crate::features::{
    build_context, context_dim, encoder_shapes, forward_on_tape, head_shapes, ByteReader, Contexts,
    EncoderParams, FeatureCloud, Modality, TapeParams, DEFAULT_CONTEXT_K,
};
use crate::geometry::{voxel_downsample, PointCloud, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Visual and geometric registration losses plus the visual-to-geometric
    /// similarity loss, on colored pairs.
    Byoc,
    /// Weighted geometric registration loss only, on depth.
    ByocGeo,
    /// `Byoc` with a random rotation of the second cloud before geometric
    /// encoding.
    ByocRot,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Byoc => "byoc",
            Variant::ByocGeo => "byoc-geo",
            Variant::ByocRot => "byoc-rot",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "byoc" => Ok(Variant::Byoc),
            "byoc-geo" => Ok(Variant::ByocGeo),
            "byoc-rot" => Ok(Variant::ByocRot),
            other => Err(Error::param(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub variant: Variant,
    pub lambda_vis: f64,
    pub lambda_geo: f64,
    pub lambda_v2g: f64,
    pub top_k: usize,
    pub voxel_size: f64,
    pub seed: u64,
    /// Iterations between validation runs; 0 disables them.
    pub validate_every: usize,
    /// Iterations between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    /// Adds elapsed milliseconds to log records, which makes logs differ
    /// between runs.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            iterations: 1000,
            batch_size: 8,
            variant: Variant::Byoc,
            lambda_vis: 1.0,
            lambda_geo: 1.0,
            lambda_v2g: 1.0,
            top_k: DEFAULT_TOP_K,
            voxel_size: 0.025,
            seed: 0,
            validate_every: 0,
            checkpoint_every: 0,
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.batch_size == 0 || self.top_k == 0 {
            return Err(Error::param("batch size and top-k must be at least 1"));
        }
        if !(self.voxel_size > 0.0) {
            return Err(Error::param("voxel size must be positive"));
        }
        let ok = |l: f64| l.is_finite() && l >= 0.0;
        if !(ok(self.lambda_vis) && ok(self.lambda_geo) && ok(self.lambda_v2g)) {
            return Err(Error::param("loss weights must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
        }
    }

    /// Loss weights after the variant's overrides, as `(vis, geo, v2g)`.
    pub fn effective_weights(&self) -> (f64, f64, f64) {
        match self.variant {
            Variant::ByocGeo => (0.0, self.lambda_geo, 0.0),
            Variant::Byoc | Variant::ByocRot => (self.lambda_vis, self.lambda_geo, self.lambda_v2g),
        }
    }

    fn needs_visual(&self) -> bool {
        let (v, _, g) = self.effective_weights();
        v > 0.0 || g > 0.0
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::param(format!("train config: {e}")))?;
        c.validate()?;
        Ok(c)
    }
}

/// The three networks trained together.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub visual: EncoderParams,
    pub geometric: EncoderParams,
    pub head: EncoderParams,
}

impl Model {
    pub fn random_init(seed: u64) -> Self {
        let base = seed.wrapping_mul(3);
        Self {
            visual: EncoderParams::random_init(base, &encoder_shapes(context_dim(Modality::Visual))),
            geometric: EncoderParams::random_init(base.wrapping_add(1), &encoder_shapes(context_dim(Modality::Geometric))),
            head: EncoderParams::random_init(base.wrapping_add(2), &head_shapes()),
        }
    }

    pub fn encoder(&self, modality: Modality) -> &EncoderParams {
        match modality {
            Modality::Visual => &self.visual,
            Modality::Geometric => &self.geometric,
        }
    }
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub iteration: usize,
    pub model: Model,
    pub optimizers: [Adam; 3],
}

const STATE_MAGIC: &[u8; 8] = b"BYOCSTA1";

impl TrainState {
    pub fn new(model: Model, adam: AdamConfig) -> Self {
        let optimizers = [&model.visual, &model.geometric, &model.head].map(|p| Adam::new(adam, p.values.len()));
        Self {
            iteration: 0,
            model,
            optimizers,
        }
    }

    fn nets(&self) -> [&EncoderParams; 3] {
        [&self.model.visual, &self.model.geometric, &self.model.head]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = STATE_MAGIC.to_vec();
        out.extend_from_slice(&(self.iteration as u64).to_le_bytes());
        for (net, opt) in self.nets().into_iter().zip(&self.optimizers) {
            out.extend_from_slice(&net.to_bytes());
            out.extend_from_slice(&opt.step.to_le_bytes());
            for v in opt.m.iter().chain(&opt.v) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a state; optimizer hyperparameters come from `adam`.
    pub fn from_bytes(bytes: &[u8], adam: AdamConfig) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != STATE_MAGIC {
            return Err(Error::Input("not a training state (bad magic)".into()));
        }
        let iteration = r.u64()? as usize;
        let mut nets = Vec::new();
        let mut optimizers = Vec::new();
        for _ in 0..3 {
            let (net, used) = EncoderParams::from_bytes(&bytes[r.pos..])?;
            r.pos += used;
            let n = net.values.len();
            let mut opt = Adam::new(adam, n);
            opt.step = r.u64()?;
            for slot in opt.m.iter_mut().chain(opt.v.iter_mut()) {
                *slot = r.f64()?;
            }
            nets.push(net);
            optimizers.push(opt);
        }
        if r.pos != bytes.len() {
            return Err(Error::Input("trailing bytes after training state".into()));
        }
        let [visual, geometric, head]: [EncoderParams; 3] = nets.try_into().expect("three networks");
        let model = Model { visual, geometric, head };
        if model.visual.input_dim() != context_dim(Modality::Visual)
            || model.geometric.input_dim() != context_dim(Modality::Geometric)
        {
            return Err(Error::Input("training state networks have the wrong input sizes".into()));
        }
        Ok(Self {
            iteration,
            model,
            optimizers: optimizers.try_into().expect("three optimizers"),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, adam: AdamConfig) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, adam)
    }
}

/// A voxelized pair with its cached encoder inputs. Both modalities share the
/// point order, so visual correspondences index geometric features.
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub cloud0: PointCloud,
    pub cloud1: PointCloud,
    pub visual: Option<(Contexts, Contexts)>,
    pub geometric: (Contexts, Contexts),
    /// Ground truth, for diagnostics only.
    pub transform: RigidTransform,
}

impl TrainPair {
    pub fn new(pair: &ScenePair, voxel_size: f64, with_visual: bool) -> Result<Self> {
        let cloud0 = voxel_downsample(&pair.cloud0, voxel_size)?.cloud;
        let cloud1 = voxel_downsample(&pair.cloud1, voxel_size)?.cloud;
        let ctx = |c: &PointCloud, m| build_context(c, m, DEFAULT_CONTEXT_K);
        let visual = if with_visual {
            Some((ctx(&cloud0, Modality::Visual)?, ctx(&cloud1, Modality::Visual)?))
        } else {
            None
        };
        let geometric = (ctx(&cloud0, Modality::Geometric)?, ctx(&cloud1, Modality::Geometric)?);
        Ok(Self {
            cloud0,
            cloud1,
            visual,
            geometric,
            transform: pair.transform,
        })
    }
}

/// Per-iteration losses and diagnostics, averaged over the usable batch
/// items. Losses that the variant switches off are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: usize,
    pub lambda_vis: f64,
    pub lambda_geo: f64,
    pub lambda_v2g: f64,
    pub loss_vis: Option<f64>,
    pub loss_geo: Option<f64>,
    pub loss_v2g: Option<f64>,
    pub total: f64,
    pub items: usize,
    pub skipped: usize,
    pub rotation_error_vis: Option<f64>,
    pub rotation_error_geo: f64,
    pub translation_error_vis: Option<f64>,
    pub translation_error_geo: f64,
    /// Seeds of the per-item rotations applied to the second cloud, in batch
    /// order.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub augment_seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub diagnostics: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub iteration: usize,
    pub pairs: usize,
    pub failures: usize,
    pub median_rotation_deg: f64,
    pub mean_rotation_deg: f64,
    pub median_translation_cm: f64,
}

struct ItemResult {
    grads: [Vec<f64>; 3],
    losses: [Option<f64>; 3],
    errors_vis: Option<(f64, f64)>,
    errors_geo: (f64, f64),
}

fn errors(fit: &RigidTransform, truth: &RigidTransform) -> (f64, f64) {
    (
        rotation_error(&fit.rotation, &truth.rotation).unwrap_or(180.0),
        translation_error(&fit.translation, &truth.translation),
    )
}

fn matches(values0: &DMatrix<f64>, values1: &DMatrix<f64>, c0: &PointCloud, c1: &PointCloud, modality: Modality, top_k: usize) -> Result<CorrespondenceSet> {
    let f0 = FeatureCloud::new(c0.clone(), values0.clone(), modality)?;
    let f1 = FeatureCloud::new(c1.clone(), values1.clone(), modality)?;
    top_k_filter(&match_ratio_test(&f0, &f1)?, top_k)
}

struct Branch {
    f0: Var,
    f1: Var,
    set: CorrespondenceSet,
}

fn branch(
    tape: &mut Tape,
    params: &TapeParams,
    contexts: (&Contexts, &Contexts),
    clouds: (&PointCloud, &PointCloud),
    top_k: usize,
) -> Result<Branch> {
    let x0 = tape.constant(contexts.0.data.clone());
    let x1 = tape.constant(contexts.1.data.clone());
    let f0 = forward_on_tape(tape, params, x0);
    let f1 = forward_on_tape(tape, params, x1);
    let set = matches(tape.value(f0), tape.value(f1), clouds.0, clouds.1, contexts.0.modality, top_k)?;
    Ok(Branch { f0, f1, set })
}

fn weighted_sum(tape: &mut Tape, terms: &[(f64, Var)]) -> Var {
    let mut acc: Option<Var> = None;
    for &(l, v) in terms {
        let s = tape.affine(v, l, 0.0);
        acc = Some(match acc {
            Some(a) => tape.add(a, s),
            None => s,
        });
    }
    acc.unwrap_or_else(|| tape.constant(DMatrix::zeros(1, 1)))
}

/// Forward and backward pass for one pair; errors mean the item is skipped.
fn train_item(model: &Model, cfg: &TrainConfig, pair: &TrainPair, rot_seed: Option<u64>) -> Result<ItemResult> {
    let (l_vis, l_geo, l_v2g) = cfg.effective_weights();
    let mut tape = Tape::new();
    let vis_p = model.visual.to_tape(&mut tape);
    let geo_p = model.geometric.to_tape(&mut tape);
    let head_p = model.head.to_tape(&mut tape);

    let (geo_cloud1, geo_ctx1, geo_truth) = match rot_seed {
        Some(seed) => {
            let (rotated, r) = rotation_augment(&pair.cloud1, seed);
            let ctx = build_context(&rotated, Modality::Geometric, DEFAULT_CONTEXT_K)?;
            (rotated, ctx, r.compose(&pair.transform))
        }
        None => (pair.cloud1.clone(), pair.geometric.1.clone(), pair.transform),
    };

    let mut terms = Vec::new();
    let mut losses = [None; 3];
    let mut errors_vis = None;

    let vis = if cfg.needs_visual() {
        let (c0, c1) = pair
            .visual
            .as_ref()
            .ok_or_else(|| Error::Input("variant needs colors but the pair has no visual contexts".into()))?;
        Some(branch(&mut tape, &vis_p, (c0, c1), (&pair.cloud0, &pair.cloud1), cfg.top_k)?)
    } else {
        None
    };
    if let Some(v) = &vis {
        let (var, loss) = registration_loss(&mut tape, &v.set, &pair.cloud0, &pair.cloud1, Some((v.f0, v.f1)))?;
        errors_vis = Some(errors(&loss.fit.transform, &pair.transform));
        if l_vis > 0.0 {
            losses[0] = Some(loss.value);
            terms.push((l_vis, var));
        }
    }

    let geo = branch(&mut tape, &geo_p, (&pair.geometric.0, &geo_ctx1), (&pair.cloud0, &geo_cloud1), cfg.top_k)?;
    let weighted = cfg.variant == Variant::ByocGeo;
    let (var, loss) = registration_loss(
        &mut tape,
        &geo.set,
        &pair.cloud0,
        &geo_cloud1,
        weighted.then_some((geo.f0, geo.f1)),
    )?;
    let errors_geo = errors(&loss.fit.transform, &geo_truth);
    if l_geo > 0.0 {
        losses[1] = Some(loss.value);
        terms.push((l_geo, var));
    }

    if let (Some(v), true) = (&vis, l_v2g > 0.0) {
        let ps: Vec<usize> = v.set.iter().map(|k| k.p).collect();
        let qs: Vec<usize> = v.set.iter().map(|k| k.q).collect();
        let gp = tape.gather_rows(geo.f0, &ps);
        let gq = tape.gather_rows(geo.f1, &qs);
        let var = simsiam_loss(&mut tape, gp, gq, &head_p)?;
        losses[2] = Some(tape.scalar(var));
        terms.push((l_v2g, var));
    }

    let total = weighted_sum(&mut tape, &terms);
    let g = tape.backward(total);
    Ok(ItemResult {
        grads: [vis_p.flat_gradient(&g), geo_p.flat_gradient(&g), head_p.flat_gradient(&g)],
        losses,
        errors_vis,
        errors_geo,
    })
}

fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

/// Runs one batch and applies the averaged gradient; the state's iteration
/// counter advances even when every item is skipped.
pub fn train_step(state: &mut TrainState, cfg: &TrainConfig, data: &[TrainPair]) -> Result<LossReport> {
    if data.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut rng = iteration_rng(cfg.seed, state.iteration);
    let batch = index::sample(&mut rng, data.len(), cfg.batch_size.min(data.len())).into_vec();
    let mut sums: [Vec<f64>; 3] = [&state.model.visual, &state.model.geometric, &state.model.head]
        .map(|p| vec![0.0; p.values.len()]);
    let mut loss_sums = [0.0; 3];
    let mut vis_err = (0.0, 0.0);
    let mut geo_err = (0.0, 0.0);
    let mut items = 0;
    let mut diagnostics = Vec::new();
    let mut augment_seeds = Vec::new();
    for &i in &batch {
        let rot_seed = (cfg.variant == Variant::ByocRot).then(|| rng.next_u64());
        augment_seeds.extend(rot_seed);
        match train_item(&state.model, cfg, &data[i], rot_seed) {
            Ok(r) => {
                items += 1;
                for (s, g) in sums.iter_mut().zip(&r.grads) {
                    for (a, b) in s.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                for (s, l) in loss_sums.iter_mut().zip(r.losses) {
                    *s += l.unwrap_or(0.0);
                }
                if let Some((a, b)) = r.errors_vis {
                    vis_err.0 += a;
                    vis_err.1 += b;
                }
                geo_err.0 += r.errors_geo.0;
                geo_err.1 += r.errors_geo.1;
            }
            Err(e) => diagnostics.push(format!("pair {i} skipped: {e}")),
        }
    }
    if items > 0 {
        let nets = [&mut state.model.visual, &mut state.model.geometric, &mut state.model.head];
        for ((net, opt), s) in nets.into_iter().zip(state.optimizers.iter_mut()).zip(&mut sums) {
            s.iter_mut().for_each(|g| *g /= items as f64);
            opt.update(&mut net.values, s);
        }
    }
    let n = items.max(1) as f64;
    let (l_vis, l_geo, l_v2g) = cfg.effective_weights();
    let avg = |i: usize, lambda: f64| (lambda > 0.0 && items > 0).then(|| loss_sums[i] / n);
    let loss_vis = avg(0, l_vis);
    let loss_geo = avg(1, l_geo);
    let loss_v2g = avg(2, l_v2g);
    let total = l_vis * loss_vis.unwrap_or(0.0) + l_geo * loss_geo.unwrap_or(0.0) + l_v2g * loss_v2g.unwrap_or(0.0);
    let visual = cfg.needs_visual() && items > 0;
    let report = LossReport {
        iteration: state.iteration,
        lambda_vis: l_vis,
        lambda_geo: l_geo,
        lambda_v2g: l_v2g,
        loss_vis,
        loss_geo,
        loss_v2g,
        total,
        items,
        skipped: batch.len() - items,
        rotation_error_vis: visual.then(|| vis_err.0 / n),
        rotation_error_geo: geo_err.0 / n,
        translation_error_vis: visual.then(|| vis_err.1 / n),
        translation_error_geo: geo_err.1 / n,
        augment_seeds,
        diagnostics,
        wall_ms: None,
    };
    state.iteration += 1;
    Ok(report)
}

/// Geometric-branch registration errors on held-out pairs.
pub fn validate(model: &Model, cfg: &TrainConfig, data: &[TrainPair], iteration: usize) -> ValidationReport {
    let reg = RegisterConfig {
        top_k: cfg.top_k,
        voxel_size: cfg.voxel_size,
        ..Default::default()
    };
    let mut rot = Vec::new();
    let mut tr = Vec::new();
    let mut failures = 0;
    for pair in data {
        let fit = crate::features::encode(&model.geometric, &pair.geometric.0).and_then(|a| {
            let b = crate::features::encode(&model.geometric, &pair.geometric.1)?;
            let f0 = FeatureCloud::new(pair.cloud0.clone(), a, Modality::Geometric)?;
            let f1 = FeatureCloud::new(pair.cloud1.clone(), b, Modality::Geometric)?;
            fit_features(&f0, &f1, &reg)
        });
        let (r, t) = match fit {
            Ok((f, _)) => errors(&f.transform, &pair.transform),
            Err(_) => {
                failures += 1;
                (180.0, f64::INFINITY)
            }
        };
        rot.push(r);
        tr.push(t);
    }
    ValidationReport {
        iteration,
        pairs: data.len(),
        failures,
        median_rotation_deg: median(&rot),
        mean_rotation_deg: mean(&rot),
        median_translation_cm: median(&tr),
    }
}

/// Training output hooks: log lines and checkpoints.
pub trait TrainSink {
    fn log(&mut self, record: &serde_json::Value) -> Result<()>;
    fn checkpoint(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

/// Writes one JSON record per line.
pub struct JsonLines<W: Write>(pub W);

impl<W: Write> TrainSink for JsonLines<W> {
    fn log(&mut self, record: &serde_json::Value) -> Result<()> {
        writeln!(self.0, "{record}").map_err(|e| Error::io("<training log>", e))
    }
}

/// Trains from `state` until `cfg.iterations` batches have run.
pub fn train_pairs(
    mut state: TrainState,
    cfg: &TrainConfig,
    data: &[TrainPair],
    valid: &[TrainPair],
    sink: &mut dyn TrainSink,
) -> Result<TrainState> {
    cfg.validate()?;
    let start = Instant::now();
    while state.iteration < cfg.iterations {
        let mut report = train_step(&mut state, cfg, data)?;
        if cfg.log_wall_time {
            report.wall_ms = Some(start.elapsed().as_secs_f64() * 1e3);
        }
        for d in &report.diagnostics {
            log::warn!("iteration {}: {d}", report.iteration);
        }
        sink.log(&serde_json::to_value(&report)?)?;
        let done = state.iteration;
        if cfg.validate_every > 0 && done.is_multiple_of(cfg.validate_every) && !valid.is_empty() {
            let v = validate(&state.model, cfg, valid, done);
            sink.log(&serde_json::json!({ "validation": v }))?;
        }
        if cfg.checkpoint_every > 0 && done.is_multiple_of(cfg.checkpoint_every) {
            sink.checkpoint(&state)?;
        }
    }
    Ok(state)
}

fn load_split(manifest: &PairManifest, split: Split, gen: &GeneratorParams, cfg: &TrainConfig) -> Result<Vec<TrainPair>> {
    manifest
        .split(split)
        .map(|e| TrainPair::new(&manifest.load_pair(e, gen)?, cfg.voxel_size, cfg.needs_visual()))
        .collect()
}

/// Loads the manifest's train and valid splits and trains a fresh model, or
/// continues `resume`.
pub fn train(
    manifest: &PairManifest,
    gen: &GeneratorParams,
    cfg: &TrainConfig,
    resume: Option<TrainState>,
    sink: &mut dyn TrainSink,
) -> Result<TrainState> {
    cfg.validate()?;
    let data = load_split(manifest, Split::Train, gen, cfg)?;
    if data.is_empty() {
        return Err(Error::Input("manifest has no training pairs".into()));
    }
    let valid = if cfg.validate_every > 0 {
        load_split(manifest, Split::Valid, gen, cfg)?
    } else {
        Vec::new()
    };
    let state = resume.unwrap_or_else(|| TrainState::new(Model::random_init(cfg.seed), cfg.adam()));
    train_pairs(state, cfg, &data, &valid, sink)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_scene_pair, PairSeed};

    fn pairs(n: usize) -> Vec<TrainPair> {
        let gen = GeneratorParams::default();
        (0..)
            .filter_map(|scene| generate_scene_pair(PairSeed { scene, view: 0 }, &gen).ok())
            .take(n)
            .map(|p| TrainPair::new(&p, 0.025, true).unwrap())
            .collect()
    }

    fn config(variant: Variant) -> TrainConfig {
        TrainConfig {
            variant,
            iterations: 2,
            batch_size: 2,
            lr: 1e-3,
            seed: 7,
            ..Default::default()
        }
    }

    struct Records(Vec<serde_json::Value>);

    impl TrainSink for Records {
        fn log(&mut self, record: &serde_json::Value) -> Result<()> {
            self.0.push(record.clone());
            Ok(())
        }
    }

    #[test]
    fn state_round_trip() {
        let cfg = config(Variant::Byoc);
        let mut state = TrainState::new(Model::random_init(3), cfg.adam());
        train_step(&mut state, &cfg, &pairs(2)).unwrap();
        let back = TrainState::from_bytes(&state.to_bytes(), cfg.adam()).unwrap();
        assert_eq!(back.iteration, 1);
        assert_eq!(back.model, state.model);
        for (a, b) in back.optimizers.iter().zip(&state.optimizers) {
            assert_eq!((a.step, &a.m, &a.v), (b.step, &b.m, &b.v));
        }
        assert!(TrainState::from_bytes(b"nonsense", cfg.adam()).is_err());
    }

    #[test]
    fn geometric_variant_leaves_visual_and_head_untouched() {
        let cfg = config(Variant::ByocGeo);
        let model = Model::random_init(cfg.seed);
        let mut state = TrainState::new(model.clone(), cfg.adam());
        let report = train_step(&mut state, &cfg, &pairs(2)).unwrap();
        assert_eq!((report.lambda_vis, report.lambda_v2g), (0.0, 0.0));
        assert!(report.loss_vis.is_none() && report.loss_v2g.is_none());
        assert_eq!(state.model.visual, model.visual);
        assert_eq!(state.model.head, model.head);
        assert_ne!(state.model.geometric, model.geometric);
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let data = pairs(3);
        let mut cfg = config(Variant::ByocRot);
        cfg.iterations = 3;
        let run = |cfg: &TrainConfig, state: TrainState| {
            let mut sink = Records(Vec::new());
            let s = train_pairs(state, cfg, &data, &[], &mut sink).unwrap();
            (s, sink.0)
        };
        let fresh = || TrainState::new(Model::random_init(cfg.seed), cfg.adam());
        let (a, log_a) = run(&cfg, fresh());
        let (b, log_b) = run(&cfg, fresh());
        assert_eq!(a.model, b.model);
        assert_eq!(log_a, log_b);
        assert_eq!(log_a[0]["augment_seeds"].as_array().unwrap().len(), 2);

        let mut short = cfg.clone();
        short.iterations = 1;
        let (mid, _) = run(&short, fresh());
        let mid = TrainState::from_bytes(&mid.to_bytes(), cfg.adam()).unwrap();
        let (resumed, log_r) = run(&cfg, mid);
        assert_eq!(resumed.model, a.model);
        assert_eq!(log_r[..], log_a[1..]);
    }
}
