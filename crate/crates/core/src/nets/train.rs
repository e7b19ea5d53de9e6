use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deform::{deform_canonical, deform_in_scene, sample_deformation, BoxCage, DeformationRanges};
use crate::error::{Error, Result};
use crate::geom::{centroid, PointCloud, PoseRecord, SymmetryKind, SymmetrySpec, Vec3};
use crate::io::Sample;
use crate::nets::dense::{adam_step, AdamState};
use crate::nets::loss::{chamfer_loss, residual_loss, segmentation_loss, total_loss, LossParts, LossWeights};
use crate::nets::model::{ModelConfig, OutputGrads, ToyModel};
use crate::rotation::{
    canonicalize_rotation, rotation_from_axis, rotation_from_vectors, rotation_vector_loss, vectors_from_rotation,
    RotationLossConfig,
};
use crate::tensor::Tensor;

/// Mean ground-truth size of one category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub mean_size: Vec3,
    pub count: usize,
}

pub fn compute_category_stats(poses: &[PoseRecord]) -> Result<BTreeMap<String, CategoryStats>> {
    if poses.is_empty() {
        return Err(Error::EmptyInput("no poses for category statistics"));
    }
    let mut sums: BTreeMap<String, (Vec3, usize)> = BTreeMap::new();
    for p in poses {
        let e = sums.entry(p.category.clone()).or_insert((Vec3::ZERO, 0));
        e.0 += p.size();
        e.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(k, (s, n))| {
            (
                k,
                CategoryStats {
                    mean_size: s / n as f64,
                    count: n,
                },
            )
        })
        .collect())
}

/// `(T − mean(points), size − stats.mean)`.
pub fn residual_targets(object_points: &[Vec3], gt: &PoseRecord, stats: &CategoryStats) -> Result<(Vec3, Vec3)> {
    let mean = centroid(object_points)?;
    Ok((gt.translation - mean, gt.size() - stats.mean_size))
}

/// What the reconstruction branch is trained to reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionTarget {
    /// The observed, partial object points.
    #[default]
    Observed,
    /// Points on the complete object surface.
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// The learning rate halves every this many epochs.
    pub halving_period: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lambda_r: f64,
    pub reconstruction_target: ReconstructionTarget,
    pub deformation: DeformationRanges,
    /// With augmentation on, the chance that a sample is deformed in a given
    /// epoch; otherwise it is used as is.
    pub augment_probability: f64,
    /// Worker threads for per-sample gradients; results do not depend on it.
    pub threads: usize,
    pub model: Option<ModelConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            halving_period: 10,
            epochs: 20,
            batch_size: 1,
            seed: 0,
            lambda_r: 1.0,
            reconstruction_target: ReconstructionTarget::Observed,
            deformation: DeformationRanges::default(),
            augment_probability: 0.5,
            threads: 1,
            model: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.halving_period == 0 || self.epochs == 0 || self.batch_size == 0 || self.threads == 0 {
            return Err(Error::InvalidParameter(
                "halving_period, epochs, batch_size and threads must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.augment_probability) {
            return Err(Error::InvalidParameter(format!(
                "augment_probability must lie in [0, 1], got {}",
                self.augment_probability
            )));
        }
        RotationLossConfig::new(self.lambda_r)?;
        self.deformation.validate()
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * 0.5f64.powi((epoch / self.halving_period) as i32)
    }
}

/// Category name, symmetry and size statistics, indexed by the one-hot position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryInfo {
    pub name: String,
    pub symmetry: SymmetrySpec,
    pub stats: CategoryStats,
}

/// One training instance after optional augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainInstance {
    pub points: Vec<Vec3>,
    pub labels: Vec<u8>,
    pub pose: PoseRecord,
    /// Complete-surface points in the scene frame.
    pub complete: Vec<Vec3>,
    pub category: usize,
}

impl TrainInstance {
    pub fn from_sample(sample: &Sample, category: usize) -> Result<TrainInstance> {
        let labels = sample.cloud.labels().ok_or(Error::LabelRequired)?.to_vec();
        Ok(TrainInstance {
            points: sample.cloud.points.clone(),
            labels,
            pose: sample.pose.clone(),
            complete: sample.complete.clone(),
            category,
        })
    }

    /// Applies a fresh random box-cage deformation to the object and its complete surface.
    pub fn deformed(&self, rng: &mut ChaCha8Rng, ranges: &DeformationRanges) -> Result<TrainInstance> {
        let spec = sample_deformation(rng, ranges)?;
        let cage = BoxCage::new(self.pose.size())?;
        let cloud = PointCloud::with_labels(self.points.clone(), self.labels.clone())?;
        let (cloud, size) = deform_in_scene(&cloud, &self.pose, &cage, &spec)?;
        let mut pose = self.pose.clone();
        pose.set_size(size)?;
        let (r, t) = (&pose.rotation, pose.translation);
        let complete = self
            .complete
            .iter()
            .map(|&p| r.apply(deform_canonical(r.apply_transpose(p - t), &cage, &spec)) + t)
            .collect();
        let (points, labels) = cloud.into_parts();
        Ok(TrainInstance {
            points,
            labels: labels.expect("labels kept"),
            pose,
            complete,
            category: self.category,
        })
    }
}

/// Per-instance loss; with `grads` the weighted gradient (times `grad_scale`) is accumulated.
pub fn instance_loss(
    model: &ToyModel,
    inst: &TrainInstance,
    categories: &[CategoryInfo],
    weights: &LossWeights,
    lambda_r: f64,
    target: ReconstructionTarget,
    grads: Option<(&mut ToyModel, f64)>,
) -> Result<LossParts> {
    let info = categories
        .get(inst.category)
        .ok_or_else(|| Error::InvalidParameter(format!("category index {} out of range", inst.category)))?;
    let mask: Vec<bool> = inst.labels.iter().map(|&l| l != 0).collect();
    let (out, cache) = model.forward(&inst.points, inst.category, Some(&mask))?;

    let (seg, gseg) = segmentation_loss(&out.seg_logits, &inst.labels)?;

    let rec_target: Vec<Vec3> = match target {
        ReconstructionTarget::Observed => out.object_rows.iter().map(|&p| inst.points[p] - out.object_mean).collect(),
        ReconstructionTarget::Complete => inst.complete.iter().map(|&p| p - out.object_mean).collect(),
    };
    let rec = chamfer_loss(&out.reconstruction, &rec_target)?;

    let gt_rot = canonicalize_rotation(&inst.pose.rotation, &inst.pose.symmetry);
    let rot_cfg = RotationLossConfig::for_symmetry(&inst.pose.symmetry, lambda_r)?;
    let rot = rotation_vector_loss((out.v1, out.v2), &vectors_from_rotation(&gt_rot), &rot_cfg)?;

    let object_points: Vec<Vec3> = out.object_rows.iter().map(|&p| inst.points[p]).collect();
    let (t_target, s_target) = residual_targets(&object_points, &inst.pose, &info.stats)?;
    let res = residual_loss(out.t_residual, out.s_residual, t_target, s_target);

    if let Some((acc, scale)) = grads {
        let w = weights;
        let g = OutputGrads {
            seg_logits: gseg.iter().map(|v| v * w.lambda_seg * scale).collect(),
            reconstruction: rec.grad.iter().map(|v| *v * (w.lambda_rec * scale)).collect(),
            v1: rot.grad_p1 * (w.lambda_rot * scale),
            v2: rot.grad_p2 * (w.lambda_rot * scale),
            t_residual: res.grad_t * (w.lambda_res * scale),
            s_residual: res.grad_s * (w.lambda_res * scale),
        };
        model.backward(&out, &cache, &g, acc)?;
    }
    Ok(LossParts {
        seg,
        rec: rec.value,
        rot: rot.objective,
        res: res.value,
    })
}

/// Mean loss terms of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub parts: LossParts,
    pub total: f64,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,lr,L_seg,L_rec,L_rot,L_res,total";

pub fn train_log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from(TRAIN_LOG_HEADER);
    s.push('\n');
    for e in log {
        let p = &e.parts;
        let _ = writeln!(s, "{},{:e},{:e},{:e},{:e},{:e},{:e}", e.epoch, e.lr, p.seg, p.rec, p.rot, p.res, e.total);
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Mean loss of the untrained model over the (unaugmented) training set.
    pub initial: EpochLog,
    pub log: Vec<EpochLog>,
}

/// Category list of a dataset: sorted names with their symmetry and mean size.
pub fn dataset_categories(samples: &[Sample]) -> Result<Vec<CategoryInfo>> {
    let poses: Vec<PoseRecord> = samples.iter().map(|s| s.pose.clone()).collect();
    let stats = compute_category_stats(&poses)?;
    let names: BTreeSet<&str> = samples.iter().map(|s| s.pose.category.as_str()).collect();
    names
        .into_iter()
        .map(|name| {
            let first = samples.iter().find(|s| s.pose.category == name).expect("name from samples");
            if let Some(other) = samples
                .iter()
                .find(|s| s.pose.category == name && s.pose.symmetry != first.pose.symmetry)
            {
                return Err(Error::InvalidParameter(format!(
                    "category `{name}` has inconsistent symmetry ({} and {})",
                    first.id, other.id
                )));
            }
            Ok(CategoryInfo {
                name: name.to_string(),
                symmetry: first.pose.symmetry,
                stats: stats[name],
            })
        })
        .collect()
}

fn category_index(categories: &[CategoryInfo], name: &str) -> Result<usize> {
    categories
        .iter()
        .position(|c| c.name == name)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown category `{name}`")))
}

fn mean_parts(parts: &[LossParts]) -> LossParts {
    let mut acc = LossParts::default();
    parts.iter().for_each(|p| acc.add(p));
    acc.scaled(1.0 / parts.len() as f64)
}

fn augment_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

/// Trains a fresh model with Adam on minibatches; deterministic under `cfg.seed`.
///
/// Per-sample gradients may be computed on several threads; they are always
/// summed in sample order, so the result does not depend on `cfg.threads`.
pub fn train_toy(samples: &[Sample], cfg: &TrainConfig, weights: &LossWeights, augment: bool) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("empty training set"));
    }
    cfg.validate()?;
    weights.validate()?;
    let categories = dataset_categories(samples)?;
    let instances: Vec<TrainInstance> = samples
        .iter()
        .map(|s| TrainInstance::from_sample(s, category_index(&categories, &s.pose.category)?))
        .collect::<Result<_>>()?;
    let model_cfg = ModelConfig {
        n_categories: categories.len(),
        ..cfg.model.unwrap_or_else(|| ModelConfig::new(categories.len()))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ToyModel::random(model_cfg, &mut rng)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;

    let eval_all = |model: &ToyModel| -> Result<Vec<LossParts>> {
        pool.install(|| {
            instances
                .par_iter()
                .map(|inst| instance_loss(model, inst, &categories, weights, cfg.lambda_r, cfg.reconstruction_target, None))
                .collect()
        })
    };
    let initial_parts = mean_parts(&eval_all(&model)?);
    let initial = EpochLog {
        epoch: 0,
        lr: cfg.learning_rate_at(0),
        parts: initial_parts,
        total: total_loss(&initial_parts, weights),
    };

    let mut states: Vec<AdamState> = model.tensors().iter().map(|t| AdamState::new(t.len())).collect();
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut epoch_parts = Vec::with_capacity(instances.len());
        for batch in order.chunks(cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let results: Vec<Result<(LossParts, ToyModel)>> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| {
                        let mut rng = augment_rng(cfg.seed, epoch, i);
                        let inst = if augment && rng.random_bool(cfg.augment_probability) {
                            instances[i].deformed(&mut rng, &cfg.deformation)?
                        } else {
                            instances[i].clone()
                        };
                        let mut g = model.zeros_like();
                        let parts = instance_loss(
                            &model,
                            &inst,
                            &categories,
                            weights,
                            cfg.lambda_r,
                            cfg.reconstruction_target,
                            Some((&mut g, scale)),
                        )?;
                        Ok((parts, g))
                    })
                    .collect()
            });
            let mut grads: Option<ToyModel> = None;
            for r in results {
                let (parts, g) = r?;
                epoch_parts.push(parts);
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => acc.axpy(1.0, &g),
                }
            }
            let grads = grads.expect("non-empty batch");
            step += 1;
            for ((p, g), s) in model.tensors_mut().into_iter().zip(grads.tensors()).zip(states.iter_mut()) {
                adam_step(&mut p.data, &g.data, s, step, lr)?;
            }
            model.renormalize();
        }
        let parts = mean_parts(&epoch_parts);
        let total = total_loss(&parts, weights);
        if !total.is_finite() {
            return Err(Error::State("training diverged (non-finite loss)"));
        }
        log.push(EpochLog { epoch, lr, parts, total });
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint { model, categories },
        initial,
        log,
    })
}

/// A pose estimate, flagged when the two rotation vectors were degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub pose: PoseRecord,
    pub object_rows: Vec<usize>,
    /// Reconstructed object points in the scene frame.
    pub reconstruction: Vec<Vec3>,
    /// The rotation was rebuilt from `v1` alone.
    pub degenerate_rotation: bool,
}

/// Smallest size component reported for a prediction (m).
const MIN_PREDICTED_SIZE: f64 = 1e-4;

/// Pose from the predicted segmentation, rotation vectors and residuals.
pub fn predict_pose(model: &ToyModel, points: &[Vec3], category: &CategoryInfo, index: usize) -> Result<Prediction> {
    let (out, _) = model.forward(points, index, None)?;
    let translation = out.object_mean + out.t_residual;
    let size = category.stats.mean_size + out.s_residual;
    let size = Vec3::new(
        size.x.max(MIN_PREDICTED_SIZE),
        size.y.max(MIN_PREDICTED_SIZE),
        size.z.max(MIN_PREDICTED_SIZE),
    );
    let (rotation, degenerate_rotation) = if category.symmetry.kind() == SymmetryKind::Circular {
        (rotation_from_axis(out.v1)?, false)
    } else {
        match rotation_from_vectors(out.v1, out.v2) {
            Ok(r) => (r, false),
            Err(Error::DegenerateVectors(_)) => (rotation_from_axis(out.v1)?, true),
            Err(e) => return Err(e),
        }
    };
    Ok(Prediction {
        pose: PoseRecord::new(rotation, translation, size, category.name.clone(), category.symmetry)?,
        reconstruction: out.reconstruction.iter().map(|&p| p + out.object_mean).collect(),
        object_rows: out.object_rows,
        degenerate_rotation,
    })
}

/// Trained parameters plus the category table they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ToyModel,
    pub categories: Vec<CategoryInfo>,
}

const CHECKPOINT_FORMAT: &str = "posekit-toy-checkpoint/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointJson {
    format: String,
    config: ModelConfig,
    categories: Vec<CategoryInfo>,
    tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn category_index(&self, name: &str) -> Result<usize> {
        category_index(&self.categories, name)
    }

    pub fn to_json(&self) -> String {
        let tensors = ToyModel::tensor_names()
            .iter()
            .zip(self.model.tensors())
            .map(|(n, t)| NamedTensor {
                name: n.to_string(),
                shape: t.shape.clone(),
                data: t.data.clone(),
            })
            .collect();
        let j = CheckpointJson {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.model.config,
            categories: self.categories.clone(),
            tensors,
        };
        serde_json::to_string(&j).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Checkpoint> {
        let j: CheckpointJson = serde_json::from_str(text).map_err(|e| Error::parse(origin, e.line(), e.to_string()))?;
        if j.format != CHECKPOINT_FORMAT {
            return Err(Error::parse(origin, 1, format!("unsupported checkpoint format `{}`", j.format)));
        }
        if j.categories.len() != j.config.n_categories {
            return Err(Error::parse(origin, 1, "category table does not match the model config"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = ToyModel::random(j.config, &mut rng)?;
        let names = ToyModel::tensor_names();
        if j.tensors.len() != names.len() {
            return Err(Error::parse(origin, 1, format!("expected {} tensors, found {}", names.len(), j.tensors.len())));
        }
        for ((slot, saved), name) in model.tensors_mut().into_iter().zip(j.tensors).zip(names) {
            if saved.name != name || saved.shape != slot.shape {
                return Err(Error::parse(
                    origin,
                    1,
                    format!("tensor `{}` {:?} does not match `{name}` {:?}", saved.name, saved.shape, slot.shape),
                ));
            }
            *slot = Tensor::from_vec(&saved.shape, saved.data)?;
        }
        Ok(Checkpoint {
            model,
            categories: j.categories,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json(&text, path)
    }
}
