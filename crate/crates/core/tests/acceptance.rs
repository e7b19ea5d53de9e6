//! End-to-end acceptance run: one PASS/FAIL line per criterion, then a single assertion.
//!
//! Lines go straight to the stderr handle so they show up even when the
//! harness captures test output.

mod common;

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use posekit::deform::{
    axis_scale, deform_in_scene, sample_deformation, taper, Axis, BoxCage, DeformationRanges, DeformationSpec,
};
use posekit::gcn3d::{Aggregation, GcnLayer, GcnLayerConfig, NeighborGraph};
use posekit::geom::{geodesic_rotation_distance, OrientedBox, PointCloud, PoseRecord, RotationMatrix, SymmetrySpec, Vec3};
use posekit::io::{generate_dataset, read_dataset, DatasetOptions, PoseEntry, Sample};
use posekit::metrics::{add_metric, evaluate, iou_3d, iou_3d_sampled, pose_accuracy, EvalOptions, EvalReport};
use posekit::nets::{
    chamfer_distance, predict_pose, train_toy, Checkpoint, LossWeights, ReconstructionTarget, TrainConfig, TrainOutcome,
};
use posekit::rotation::{
    canonical_group_index, rotation_from_vectors, symmetry_aware_rotation_error, symmetry_group, vectors_from_rotation,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seed the end-to-end thresholds were calibrated with.
const PILOT_SEED: u64 = 7;
const TRAIN_COUNT: usize = 500;
const TEST_COUNT: usize = 200;
const MAX_ROT_DEG: f64 = 15.0;
const MAX_TRANS_M: f64 = 0.02;
const TRAIN_BUDGET_S: f64 = 900.0;

type Outcome = Result<(bool, String), String>;

fn report(lines: &mut Vec<(usize, bool)>, n: usize, outcome: Outcome) {
    let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    let tag = if ok { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    writeln!(err, "{tag} criterion {n}: {detail}").unwrap();
    lines.push((n, ok));
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_rotation(rng: &mut ChaCha8Rng) -> RotationMatrix {
    RotationMatrix::random(rng)
}

fn random_axis(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if let Some(u) = v.normalized() {
            return u;
        }
    }
}

fn rotation_roundtrip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rotations: Vec<RotationMatrix> = (0..10_000).map(|_| random_rotation(&mut rng)).collect();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for r in &rotations {
        let v = vectors_from_rotation(r);
        let back = rotation_from_vectors(v.v1(), v.v2()).map_err(err)?;
        worst = worst.max(geodesic_rotation_distance(r, &back));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst < 1e-6 && secs < 5.0,
        format!("10000 rotations, worst {worst:.2e} deg, {secs:.3} s"),
    ))
}

fn canonicalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut mismatches, mut worst_member) = (0usize, 0.0f64);
    for n in [2u32, 3, 4, 6] {
        for _ in 0..1000 {
            let sym = SymmetrySpec::n_fold(n, random_axis(&mut rng)).map_err(err)?;
            let r = random_rotation(&mut rng);
            let group = symmetry_group(&r, &sym).map_err(err)?;
            let identity = RotationMatrix::rot_z_deg(0.0);
            let brute = group
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    geodesic_rotation_distance(a.1, &identity).total_cmp(&geodesic_rotation_distance(b.1, &identity))
                })
                .map(|(i, _)| i)
                .expect("non-empty group");
            if canonical_group_index(&r, &sym).map_err(err)? != brute {
                mismatches += 1;
            }
            for g in &group {
                worst_member = worst_member.max(symmetry_aware_rotation_error(g, &r, &sym));
            }
        }
    }
    Ok((
        mismatches == 0 && worst_member <= 1e-9,
        format!("4000 rotations, {mismatches} index mismatches, worst member error {worst_member:.2e} deg"),
    ))
}

fn gcn_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = rng.random_range(12..40);
        let points: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let config = GcnLayerConfig {
            n_neighbors: 6,
            in_channels: 2,
            out_channels: 4,
            kernel_size: 3,
            aggregation: if case % 2 == 0 { Aggregation::Max } else { Aggregation::Sum },
        };
        let layer = GcnLayer::random(config, &mut rng).map_err(err)?;
        let features: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let run = |pts: &[Vec3]| -> Result<Vec<f64>, String> {
            let graph = NeighborGraph::build(pts, 6).map_err(err)?;
            Ok(layer.forward(&graph, &features).map_err(err)?.0)
        };
        let t = random_axis(&mut rng) * rng.random_range(0.0..=10.0);
        let s = rng.random_range(0.1..=10.0);
        let base = run(&points)?;
        let moved = run(&points.iter().map(|&p| p + t).collect::<Vec<_>>())?;
        let scaled = run(&points.iter().map(|&p| p * s).collect::<Vec<_>>())?;
        for (a, (b, c)) in base.iter().zip(moved.iter().zip(&scaled)) {
            worst = worst.max((a - b).abs()).max((a - c).abs());
        }
    }
    Ok((worst <= 1e-9, format!("100 clouds, worst output change {worst:.2e}")))
}

fn gradient_audit() -> Outcome {
    let audits = [
        ("chamfer", common::chamfer_audit()),
        ("cross-entropy", common::cross_entropy_audit()),
        ("residual mse", common::residual_mse_audit()),
        ("rotation", common::rotation_loss_audit()),
        ("3dgc layer", common::gcn_layer_audit()),
        ("toy model", common::toy_model_audit()),
    ];
    let ok = audits.iter().all(|(_, a)| a.passed());
    let detail = audits
        .iter()
        .map(|(name, a)| format!("{name} [{}]", a.summary()))
        .collect::<Vec<_>>()
        .join("; ");
    Ok((ok, detail))
}

/// Scale then taper about y, written out independently of the library.
fn reference_deform(p: Vec3, extents: Vec3, spec: &DeformationSpec) -> Vec3 {
    let q = p.hadamard(spec.scale());
    let Some(axis) = spec.taper_axis() else { return q };
    let height = extents.y * spec.scale().y;
    let l = (height / 2.0 - q.y).clamp(0.0, height);
    let f = 1.0 + (spec.taper_factor() - 1.0) * l / height;
    match axis {
        Axis::X => Vec3::new(q.x * f, q.y, q.z),
        _ => Vec3::new(q.x, q.y, q.z * f),
    }
}

fn deformation() -> Outcome {
    let mut failures = Vec::new();
    let cage = BoxCage::new(Vec3::new(0.2, 0.4, 0.2)).map_err(err)?;
    let fixture = PointCloud::new(vec![
        Vec3::new(0.1, -0.2, 0.05),
        Vec3::new(0.1, 0.2, 0.05),
        Vec3::new(-0.08, 0.0, 0.1),
    ]);
    let tx = taper(&fixture, &cage, Axis::X, 2.0).map_err(err)?;
    if tx.points != [Vec3::new(0.1 * 2.0, -0.2, 0.05), Vec3::new(0.1, 0.2, 0.05), Vec3::new(-0.08 * 1.5, 0.0, 0.1)] {
        failures.push(format!("taper x: {:?}", tx.points));
    }
    let tz = taper(&fixture, &cage, Axis::Z, 0.5).map_err(err)?;
    if tz.points != [Vec3::new(0.1, -0.2, 0.05 * 0.5), Vec3::new(0.1, 0.2, 0.05), Vec3::new(-0.08, 0.0, 0.1 * 0.75)] {
        failures.push(format!("taper z: {:?}", tz.points));
    }
    let sy = axis_scale(&fixture, Axis::Y, 1.5).map_err(err)?;
    if sy.points != [Vec3::new(0.1, -0.2 * 1.5, 0.05), Vec3::new(0.1, 0.2 * 1.5, 0.05), Vec3::new(-0.08, 0.0, 0.1)] {
        failures.push(format!("axis_scale y: {:?}", sy.points));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ranges = DeformationRanges::default();
    let (mut worst, mut background_moved) = (0.0f64, 0usize);
    for _ in 0..100 {
        let extents = Vec3::new(rng.random_range(0.05..0.4), rng.random_range(0.05..0.4), rng.random_range(0.05..0.4));
        let cage = BoxCage::new(extents).map_err(err)?;
        let t = random_axis(&mut rng) * rng.random_range(0.0..3.0);
        let pose = PoseRecord::new(random_rotation(&mut rng), t, extents, "box", SymmetrySpec::none()).map_err(err)?;
        let spec = sample_deformation(&mut rng, &ranges).map_err(err)?;
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let c = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let object = i % 3 != 0;
            let local = if object { c.hadamard(extents) } else { c * 4.0 };
            points.push(pose.rotation.apply(local) + t);
            labels.push(u8::from(object));
        }
        let scene = PointCloud::with_labels(points.clone(), labels.clone()).map_err(err)?;
        let (out, _) = deform_in_scene(&scene, &pose, &cage, &spec).map_err(err)?;
        for ((&p, &q), &l) in points.iter().zip(&out.points).zip(&labels) {
            if l == 0 {
                if p.to_array().map(f64::to_bits) != q.to_array().map(f64::to_bits) {
                    background_moved += 1;
                }
            } else {
                let expect = pose.rotation.apply(reference_deform(pose.rotation.apply_transpose(p - t), extents, &spec)) + t;
                worst = worst.max(expect.distance(q));
            }
        }
    }
    if worst > 1e-9 {
        failures.push(format!("conjugation error {worst:.2e}"));
    }
    if background_moved > 0 {
        failures.push(format!("{background_moved} background points changed"));
    }
    Ok((
        failures.is_empty(),
        if failures.is_empty() {
            format!("fixtures exact, conjugation worst {worst:.2e} on 100 poses, background bitwise unchanged")
        } else {
            failures.join("; ")
        },
    ))
}

fn metric_fixtures() -> Outcome {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let identity = RotationMatrix::rot_z_deg(0.0);
    let mut worst_iou = 0.0f64;
    for _ in 0..200 {
        let r = random_rotation(&mut rng);
        let ea = Vec3::new(rng.random_range(0.1..1.0), rng.random_range(0.1..1.0), rng.random_range(0.1..1.0));
        let eb = Vec3::new(rng.random_range(0.1..1.0), rng.random_range(0.1..1.0), rng.random_range(0.1..1.0));
        let d = Vec3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6));
        let ca = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let a = OrientedBox::new(r, ca, ea).map_err(err)?;
        let b = OrientedBox::new(r, ca + r.apply(d), eb).map_err(err)?;
        let overlap: f64 = (0..3).map(|k| ((ea[k] + eb[k]) / 2.0 - d[k].abs()).clamp(0.0, ea[k].min(eb[k]))).product();
        let oracle = overlap / (a.volume() + b.volume() - overlap);
        worst_iou = worst_iou.max((iou_3d(&a, &b, 32).map_err(err)? - oracle).abs());
    }
    if worst_iou > 1e-12 {
        failures.push(format!("aligned IoU off by {worst_iou:.2e}"));
    }
    let unit = Vec3::new(1.0, 1.0, 1.0);
    let a = OrientedBox::new(identity, Vec3::new(0.0, 0.0, 0.0), unit).map_err(err)?;
    let b = OrientedBox::new(identity, Vec3::new(0.5, 0.0, 0.0), unit).map_err(err)?;
    let sampled = iou_3d_sampled(&a, &b, 64).map_err(err)?;
    let exact = iou_3d(&a, &b, 64).map_err(err)?;
    for v in [sampled, exact] {
        if (v - 1.0 / 3.0).abs() > 0.01 {
            failures.push(format!("offset cube IoU {v}"));
        }
    }

    let model: Vec<Vec3> = (0..50)
        .map(|_| Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
        .collect();
    let (mut monotone_breaks, mut adds_breaks) = (0usize, 0usize);
    for _ in 0..20 {
        let (mut a55, mut a105, mut a1010) = (0, 0, 0);
        for _ in 0..50 {
            let gt = PoseRecord::new(random_rotation(&mut rng), random_axis(&mut rng), unit * 0.2, "box", SymmetrySpec::none())
                .map_err(err)?;
            let tilt = RotationMatrix::from_axis_angle(random_axis(&mut rng), rng.random_range(0.0..15f64).to_radians())
                .map_err(err)?;
            let mut pred = gt.clone();
            pred.rotation = tilt * gt.rotation;
            pred.translation = gt.translation + random_axis(&mut rng) * rng.random_range(0.0..0.12);
            a55 += usize::from(pose_accuracy(&pred, &gt, 5.0, 5.0).map_err(err)?);
            a105 += usize::from(pose_accuracy(&pred, &gt, 10.0, 5.0).map_err(err)?);
            a1010 += usize::from(pose_accuracy(&pred, &gt, 10.0, 10.0).map_err(err)?);
            let add = add_metric(&model, &pred, &gt, false).map_err(err)?;
            let adds = add_metric(&model, &pred, &gt, true).map_err(err)?;
            if adds > add {
                adds_breaks += 1;
            }
        }
        if !(a1010 >= a105 && a105 >= a55) {
            monotone_breaks += 1;
        }
    }
    if monotone_breaks > 0 {
        failures.push(format!("{monotone_breaks} sets break accuracy monotonicity"));
    }
    if adds_breaks > 0 {
        failures.push(format!("{adds_breaks} cases with ADD-S > ADD"));
    }
    Ok((
        failures.is_empty(),
        if failures.is_empty() {
            format!("aligned IoU worst {worst_iou:.1e}, offset cube {sampled:.4} sampled, 20 sets monotone, ADD-S <= ADD on 1000 poses")
        } else {
            failures.join("; ")
        },
    ))
}

struct Splits {
    train: Vec<Sample>,
    test: Vec<Sample>,
    deformed: Vec<Sample>,
}

fn splits() -> posekit::Result<Splits> {
    let opts = |count, seed, deformation| DatasetOptions {
        count,
        seed,
        deformation,
        ..DatasetOptions::default()
    };
    Ok(Splits {
        train: generate_dataset(&opts(TRAIN_COUNT, PILOT_SEED, None))?,
        test: generate_dataset(&opts(TEST_COUNT, PILOT_SEED + 1000, None))?,
        deformed: generate_dataset(&opts(TEST_COUNT, PILOT_SEED + 2000, Some(DeformationRanges::default())))?,
    })
}

fn train(samples: &[Sample], augment: bool, target: ReconstructionTarget) -> posekit::Result<TrainOutcome> {
    let cfg = TrainConfig {
        seed: PILOT_SEED,
        reconstruction_target: target,
        ..TrainConfig::default()
    };
    train_toy(samples, &cfg, &LossWeights::default(), augment)
}

fn evaluate_split(ck: &Checkpoint, split: &[Sample]) -> posekit::Result<(EvalReport, usize)> {
    let mut preds = Vec::new();
    for s in split {
        let idx = ck.category_index(&s.pose.category)?;
        if let Ok(p) = predict_pose(&ck.model, &s.cloud.points, &ck.categories[idx], idx) {
            preds.push(PoseEntry { id: s.id.clone(), pose: p.pose });
        }
    }
    let gt: Vec<PoseEntry> = split.iter().map(|s| PoseEntry { id: s.id.clone(), pose: s.pose.clone() }).collect();
    let n = preds.len();
    Ok((evaluate(&preds, &gt, &EvalOptions::default())?, n))
}

/// Mean chamfer between the predicted reconstruction and the observed object points.
fn reconstruction_chamfer(ck: &Checkpoint, split: &[Sample]) -> posekit::Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for s in split {
        let idx = ck.category_index(&s.pose.category)?;
        let Ok(p) = predict_pose(&ck.model, &s.cloud.points, &ck.categories[idx], idx) else { continue };
        let observed = s.cloud.points_with_label(1)?;
        total += chamfer_distance(&p.reconstruction, &observed)?;
        n += 1;
    }
    Ok(total / n.max(1) as f64)
}

struct EndToEnd {
    plain: TrainOutcome,
    c7: [Outcome; 4],
}

fn end_to_end(data: &Splits) -> posekit::Result<EndToEnd> {
    let start = Instant::now();
    let plain = train(&data.train, false, ReconstructionTarget::Observed)?;
    let augmented = train(&data.train, true, ReconstructionTarget::Observed)?;
    let (held_out, n_held) = evaluate_split(&plain.checkpoint, &data.test)?;
    let (def_plain, _) = evaluate_split(&plain.checkpoint, &data.deformed)?;
    let (def_aug, _) = evaluate_split(&augmented.checkpoint, &data.deformed)?;
    let secs = start.elapsed().as_secs_f64();
    let avg = &held_out.average;
    let initial = plain.initial.total;
    let last = plain.log.last().map_or(f64::NAN, |e| e.total);
    let budget = format!("{secs:.0} s for two trainings");
    Ok(EndToEnd {
        c7: [
            Ok((
                avg.mean_rot_deg <= MAX_ROT_DEG && n_held == data.test.len(),
                format!("(a) mean rotation error {:.2} deg <= {MAX_ROT_DEG} on {n_held}/{} predictions", avg.mean_rot_deg, data.test.len()),
            )),
            Ok((
                avg.mean_trans_m <= MAX_TRANS_M,
                format!("(b) mean translation error {:.4} m <= {MAX_TRANS_M}", avg.mean_trans_m),
            )),
            Ok((
                def_aug.average.acc_10d10cm >= def_plain.average.acc_10d10cm,
                format!(
                    "(c) deformed split 10deg10cm {:.3} with augmentation vs {:.3} without",
                    def_aug.average.acc_10d10cm, def_plain.average.acc_10d10cm
                ),
            )),
            Ok((
                last < 0.5 * initial && secs <= TRAIN_BUDGET_S,
                format!("(d) final loss {last:.4} vs initial {initial:.4}; {budget}"),
            )),
        ],
        plain,
    })
}

fn reconstruction_contrast(data: &Splits, observed: &TrainOutcome) -> Outcome {
    let complete = train(&data.train, false, ReconstructionTarget::Complete).map_err(err)?;
    let obs = reconstruction_chamfer(&observed.checkpoint, &data.test).map_err(err)?;
    let comp = reconstruction_chamfer(&complete.checkpoint, &data.test).map_err(err)?;
    Ok((
        obs <= comp,
        format!("held-out chamfer to observed points: observed target {obs:.5}, complete target {comp:.5}"),
    ))
}

fn posekit(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_posekit"))
        .args(args)
        .env_remove("POSEKIT_SEED")
        .output()
        .map_err(err)?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)))
    }
}

fn cli_run(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let p = |n: &str| dir.join(n).to_str().expect("utf-8 path").to_string();
    std::fs::create_dir_all(dir).map_err(err)?;
    std::fs::write(p("cfg.json"), r#"{"train": {"epochs": 3, "halving_period": 2}}"#).map_err(err)?;
    posekit(&["--seed", "11", "--threads", "1", "gen-synthetic", "--count", "18", "--out", &p("train")])?;
    posekit(&["--seed", "12", "--threads", "1", "gen-synthetic", "--count", "9", "--out", &p("test"), "--deform"])?;
    let (manifest, _) = read_dataset(dir.join("train")).map_err(err)?;
    let first = &manifest.samples[0];
    let cloud = dir.join("train").join(&first.cloud);
    posekit(&[
        "--seed", "13", "--threads", "1", "augment", "--in", cloud.to_str().expect("utf-8 path"), "--pose",
        &p("train/poses.json"), "--id", &first.id, "--random", "--out", &p("aug.ply"),
    ])?;
    posekit(&[
        "--seed", "14", "--threads", "1", "train", "--data", &p("train"), "--config", &p("cfg.json"), "--checkpoint",
        &p("ck.json"), "--augment",
    ])?;
    posekit(&["--threads", "1", "infer", "--data", &p("test"), "--checkpoint", &p("ck.json"), "--out", &p("pred.json")])?;
    posekit(&["--threads", "1", "eval", "--pred", &p("pred.json"), "--gt", &p("test/poses.json"), "--out", &p("report.csv")])?;
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(err)? {
            let path = entry.map_err(err)?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).map_err(err)?.to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&path).map_err(err)?));
            }
        }
    }
    files.sort();
    Ok(files)
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let a = cli_run(&tmp.path().join("a"))?;
    let b = cli_run(&tmp.path().join("b"))?;
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let same_names = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.0 == y.0);
    Ok((
        same_names && differing.is_empty() && a.iter().any(|f| f.0 == "report.csv"),
        format!("gen, augment, train, infer, eval twice: {} files, {} differ", a.len(), differing.len()),
    ))
}

#[test]
fn acceptance_criteria() {
    let mut results = Vec::new();
    report(&mut results, 1, rotation_roundtrip());
    report(&mut results, 2, canonicalization());
    report(&mut results, 3, gcn_invariance());
    report(&mut results, 4, gradient_audit());
    report(&mut results, 5, deformation());
    report(&mut results, 6, metric_fixtures());
    match splits().and_then(|d| end_to_end(&d).map(|e| (d, e))) {
        Ok((data, e2e)) => {
            let [a, b, c, d] = e2e.c7;
            let parts: Vec<(bool, String)> = [a, b, c, d].into_iter().map(|o| o.expect("built as Ok")).collect();
            let ok = parts.iter().all(|p| p.0);
            let detail = parts
                .iter()
                .map(|(ok, s)| if *ok { s.clone() } else { format!("{s} [failed]") })
                .collect::<Vec<_>>()
                .join("; ");
            report(&mut results, 7, Ok((ok, format!("pilot seed {PILOT_SEED}: {detail}"))));
            report(&mut results, 8, reconstruction_contrast(&data, &e2e.plain));
        }
        Err(e) => {
            report(&mut results, 7, Err(e.to_string()));
            report(&mut results, 8, Err("end-to-end training failed".into()));
        }
    }
    report(&mut results, 9, cli_determinism());
    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
