//! Central finite-difference audits shared by the gradient and acceptance tests.

use posekit::gcn3d::{Aggregation, GcnLayer, GcnLayerConfig, NeighborGraph};
use posekit::geom::{PoseRecord, RotationMatrix, SymmetrySpec, Vec3};
use posekit::nets::{
    chamfer_loss, instance_loss, residual_loss, segmentation_loss, total_loss, CategoryInfo, CategoryStats,
    LossWeights, ModelConfig, ReconstructionTarget, ToyModel, TrainInstance,
};
use posekit::rotation::{rotation_vector_loss, vectors_from_rotation, RotationLossConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const MODULE_TOLERANCE: f64 = 1e-4;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
pub const SEEDS: u64 = 5;

/// Outcome of one audit.
#[derive(Debug, Default)]
pub struct Audit {
    pub checked: usize,
    /// Worst relative error among coordinates accepted by the central check.
    pub worst: f64,
    /// Coordinates where a ReLU or max switches inside the stencil.
    pub kinks: usize,
    pub failures: Vec<String>,
}

impl Audit {
    fn record(&mut self, err: f64, tolerance: f64, what: impl FnOnce() -> String) {
        self.checked += 1;
        if err <= tolerance {
            self.worst = self.worst.max(err);
        } else {
            self.failures.push(what());
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0 && self.kinks * 100 <= self.checked
    }

    pub fn summary(&self) -> String {
        format!(
            "{} coordinates, worst {:.2e}, {} kinks, {} failures",
            self.checked,
            self.worst,
            self.kinks,
            self.failures.len()
        )
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn rand_vec(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
    Vec3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
}

fn unit(k: usize) -> Vec3 {
    [Vec3::X, Vec3::Y, Vec3::Z][k]
}

pub fn chamfer_audit() -> Audit {
    let mut audit = Audit::default();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred: Vec<Vec3> = (0..5).map(|_| rand_vec(&mut rng, 1.0)).collect();
        let gt: Vec<Vec3> = (0..7).map(|_| rand_vec(&mut rng, 1.0)).collect();
        let c = chamfer_loss(&pred, &gt).unwrap();
        for i in 0..pred.len() {
            for k in 0..3 {
                let mut p = pred.clone();
                let mut m = pred.clone();
                p[i] += unit(k) * EPS;
                m[i] -= unit(k) * EPS;
                let n = (chamfer_loss(&p, &gt).unwrap().value - chamfer_loss(&m, &gt).unwrap().value) / (2.0 * EPS);
                audit.record(rel_err(c.grad[i][k], n), MODULE_TOLERANCE, || format!("seed {seed} point {i} axis {k}"));
            }
        }
    }
    audit
}

pub fn cross_entropy_audit() -> Audit {
    let mut audit = Audit::default();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits: Vec<f64> = (0..40).map(|_| rng.random_range(-3.0..3.0)).collect();
        let labels: Vec<u8> = (0..20).map(|_| rng.random_range(0..2)).collect();
        let (_, g) = segmentation_loss(&logits, &labels).unwrap();
        for i in 0..logits.len() {
            let mut p = logits.clone();
            let mut m = logits.clone();
            p[i] += EPS;
            m[i] -= EPS;
            let n = (segmentation_loss(&p, &labels).unwrap().0 - segmentation_loss(&m, &labels).unwrap().0) / (2.0 * EPS);
            audit.record(rel_err(g[i], n), MODULE_TOLERANCE, || format!("seed {seed} logit {i}: {} vs {n}", g[i]));
        }
    }
    audit
}

pub fn residual_mse_audit() -> Audit {
    let mut audit = Audit::default();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (pt, ps, tt, ts) = (rand_vec(&mut rng, 1.0), rand_vec(&mut rng, 1.0), rand_vec(&mut rng, 1.0), rand_vec(&mut rng, 1.0));
        let r = residual_loss(pt, ps, tt, ts);
        for k in 0..3 {
            let e = unit(k) * EPS;
            let nt = (residual_loss(pt + e, ps, tt, ts).value - residual_loss(pt - e, ps, tt, ts).value) / (2.0 * EPS);
            let ns = (residual_loss(pt, ps + e, tt, ts).value - residual_loss(pt, ps - e, tt, ts).value) / (2.0 * EPS);
            audit.record(rel_err(r.grad_t[k], nt), MODULE_TOLERANCE, || format!("seed {seed} t[{k}]"));
            audit.record(rel_err(r.grad_s[k], ns), MODULE_TOLERANCE, || format!("seed {seed} s[{k}]"));
        }
    }
    audit
}

pub fn rotation_loss_audit() -> Audit {
    let mut audit = Audit::default();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = vectors_from_rotation(&RotationMatrix::random(&mut rng));
        let cfg = RotationLossConfig::new(rng.random_range(0.0..2.0)).unwrap();
        let p1 = rand_vec(&mut rng, 1.0);
        let p2 = rand_vec(&mut rng, 1.0);
        let l = rotation_vector_loss((p1, p2), &gt, &cfg).unwrap();
        let f = |a: Vec3, b: Vec3| rotation_vector_loss((a, b), &gt, &cfg).unwrap().objective;
        for k in 0..3 {
            let e = unit(k) * EPS;
            let n1 = (f(p1 + e, p2) - f(p1 - e, p2)) / (2.0 * EPS);
            let n2 = (f(p1, p2 + e) - f(p1, p2 - e)) / (2.0 * EPS);
            audit.record(rel_err(l.grad_p1[k], n1), MODULE_TOLERANCE, || format!("seed {seed} p1[{k}]"));
            audit.record(rel_err(l.grad_p2[k], n2), MODULE_TOLERANCE, || format!("seed {seed} p2[{k}]"));
        }
    }
    audit
}

fn gcn_layer_check(aggregation: Aggregation, seed: u64, audit: &mut Audit) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = GcnLayerConfig {
        n_neighbors: 5,
        in_channels: 3,
        out_channels: 4,
        kernel_size: 3,
        aggregation,
    };
    let layer = GcnLayer::random(cfg, &mut rng).unwrap();
    let points: Vec<Vec3> = (0..16).map(|_| rand_vec(&mut rng, 1.0)).collect();
    let graph = NeighborGraph::build(&points, 5).unwrap();
    let x: Vec<f64> = (0..16 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let up: Vec<f64> = (0..16 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |l: &GcnLayer, x: &[f64]| -> f64 {
        let (y, _) = l.forward(&graph, x).unwrap();
        y.iter().zip(&up).map(|(a, b)| a * b).sum()
    };
    let (_, cache) = layer.forward(&graph, &x).unwrap();
    let mut grads = GcnLayer::zeros(cfg).unwrap();
    let gx = layer.backward(&graph, &cache, &up, &mut grads).unwrap();
    for i in 0..x.len() {
        let mut p = x.clone();
        let mut m = x.clone();
        p[i] += EPS;
        m[i] -= EPS;
        let n = (loss(&layer, &p) - loss(&layer, &m)) / (2.0 * EPS);
        audit.record(rel_err(gx[i], n), MODULE_TOLERANCE, || format!("{aggregation:?} seed {seed} input {i}: {} vs {n}", gx[i]));
    }
    for which in 0..3 {
        let analytic = [&grads.directions, &grads.weights, &grads.center][which].data.clone();
        for i in 0..analytic.len() {
            let mut p = layer.clone();
            let mut m = layer.clone();
            [&mut p.directions, &mut p.weights, &mut p.center][which].data[i] += EPS;
            [&mut m.directions, &mut m.weights, &mut m.center][which].data[i] -= EPS;
            let n = (loss(&p, &x) - loss(&m, &x)) / (2.0 * EPS);
            audit.record(rel_err(analytic[i], n), MODULE_TOLERANCE, || {
                format!("{aggregation:?} seed {seed} tensor {which} index {i}: {} vs {n}", analytic[i])
            });
        }
    }
}

/// One 3DGC layer with both aggregations: inputs, kernel directions, weights and centre weights.
pub fn gcn_layer_audit() -> Audit {
    let mut audit = Audit::default();
    for seed in 0..SEEDS {
        gcn_layer_check(Aggregation::Max, seed, &mut audit);
        gcn_layer_check(Aggregation::Sum, seed, &mut audit);
    }
    audit
}

fn toy_instance(rng: &mut ChaCha8Rng, symmetry: SymmetrySpec) -> TrainInstance {
    let rotation = RotationMatrix::random(rng);
    let translation = rand_vec(rng, 0.3) + Vec3::new(0.0, 0.0, 1.0);
    let size = Vec3::new(0.12, 0.1, 0.08);
    let pose = PoseRecord::new(rotation, translation, size, "obj", symmetry).unwrap();
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for i in 0..32 {
        if i < 24 {
            let local = Vec3::new(rng.random_range(-0.06..0.06), rng.random_range(-0.05..0.05), 0.04);
            points.push(rotation.apply(local) + translation);
            labels.push(1);
        } else {
            points.push(translation + rand_vec(rng, 0.2));
            labels.push(0);
        }
    }
    let complete = (0..10).map(|_| translation + rand_vec(rng, 0.05)).collect();
    TrainInstance {
        points,
        labels,
        pose,
        complete,
        category: 0,
    }
}

/// Perturbs every parameter of a small model and compares with the backward pass.
///
/// A ReLU or max switching inside [-ε, ε] makes the two one-sided slopes
/// disagree; such a coordinate counts as a kink when the analytic value
/// matches one of them, and at most 1% of coordinates may be kinks.
pub fn toy_model_audit() -> Audit {
    let config = ModelConfig {
        n_neighbors: 5,
        kernel_size: 2,
        conv1_channels: 3,
        conv2_channels: 6,
        rec_hidden: 8,
        rec_points: 12,
        rot_hidden: 5,
        res_point_hidden: 4,
        res_hidden: 5,
        ..ModelConfig::new(1)
    };
    // heavier than the default weights so every head contributes visibly
    let weights = LossWeights {
        lambda_seg: 0.5,
        lambda_rec: 1.0,
        lambda_rot: 0.3,
        lambda_res: 2.0,
    };
    let mut audit = Audit::default();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let symmetry = if seed % 2 == 0 { SymmetrySpec::none() } else { SymmetrySpec::n_fold(2, Vec3::Z).unwrap() };
        let inst = toy_instance(&mut rng, symmetry);
        let cats = [CategoryInfo {
            name: "obj".into(),
            symmetry,
            stats: CategoryStats {
                mean_size: Vec3::new(0.1, 0.1, 0.1),
                count: 1,
            },
        }];
        let model = ToyModel::random(config, &mut rng).unwrap();
        let eval = |m: &ToyModel| -> f64 {
            let p = instance_loss(m, &inst, &cats, &weights, 1.0, ReconstructionTarget::Observed, None).unwrap();
            total_loss(&p, &weights)
        };
        let mut grads = model.zeros_like();
        instance_loss(&model, &inst, &cats, &weights, 1.0, ReconstructionTarget::Observed, Some((&mut grads, 1.0))).unwrap();
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data.clone()).collect();
        let names = ToyModel::tensor_names();
        let f0 = eval(&model);
        for (ti, g) in analytic.iter().enumerate() {
            for i in 0..g.len() {
                let mut p = model.clone();
                let mut m = model.clone();
                p.tensors_mut()[ti].data[i] += EPS;
                m.tensors_mut()[ti].data[i] -= EPS;
                let (fp, fm) = (eval(&p), eval(&m));
                let central = (fp - fm) / (2.0 * EPS);
                let e = rel_err(g[i], central);
                if e <= END_TO_END_TOLERANCE {
                    audit.record(e, END_TO_END_TOLERANCE, String::new);
                    continue;
                }
                let right = (fp - f0) / EPS;
                let left = (f0 - fm) / EPS;
                let kink = rel_err(right, left) > END_TO_END_TOLERANCE;
                audit.checked += 1;
                if kink && (rel_err(g[i], right) <= END_TO_END_TOLERANCE || rel_err(g[i], left) <= END_TO_END_TOLERANCE) {
                    audit.kinks += 1;
                } else {
                    audit.failures.push(format!(
                        "seed {seed} {}[{i}]: analytic {} central {central} left {left} right {right}",
                        names[ti], g[i]
                    ));
                }
            }
        }
    }
    audit
}
