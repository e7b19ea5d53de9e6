//! Pose-estimation metrics: 3D IoU, n° m cm accuracy, ADD(-S) and Chamfer reports.
//!
//! All thresholds are strict: a pose passes 10°5cm only if its rotation error
//! is below 10° and its translation error below 5 cm.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{OrientedBox, PoseRecord, RotationMatrix, SymmetryKind, Vec3};
use crate::io::{read_poses, PoseEntry};
use crate::nets::chamfer_distance;
use crate::rotation::{symmetry_aware_rotation_error, symmetry_group};

/// Minimum sampling resolution per axis for oriented-box IoU.
pub const MIN_IOU_RESOLUTION: usize = 32;
pub const DEFAULT_IOU_RESOLUTION: usize = 64;

fn same_rotation(a: &RotationMatrix, b: &RotationMatrix) -> bool {
    a.as_array().iter().zip(b.as_array()).all(|(x, y)| (x - y).abs() <= 1e-12)
}

/// Exact IoU of two boxes with the same orientation.
fn iou_aligned(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let d = a.rotation.apply_transpose(b.center - a.center);
    let (ha, hb) = (a.extents() / 2.0, b.extents() / 2.0);
    let overlap = |c: f64, x: f64, y: f64| ((x.min(c + y)) - ((-x).max(c - y))).max(0.0);
    let inter = overlap(d.x, ha.x, hb.x) * overlap(d.y, ha.y, hb.y) * overlap(d.z, ha.z, hb.z);
    inter / (a.volume() + b.volume() - inter)
}

/// IoU by counting cell centres of a `res³` grid over the smaller box that fall inside the other.
///
/// The intersection lies inside either box, so sampling the smaller one covers
/// it; the estimate converges as O(1/res).
fn iou_sampled(a: &OrientedBox, b: &OrientedBox, res: usize) -> f64 {
    let (small, other) = if a.volume() <= b.volume() { (a, b) } else { (b, a) };
    let e = small.extents();
    let step = e / res as f64;
    let mut hits = 0usize;
    for i in 0..res {
        let x = -e.x / 2.0 + (i as f64 + 0.5) * step.x;
        for j in 0..res {
            let y = -e.y / 2.0 + (j as f64 + 0.5) * step.y;
            for k in 0..res {
                let z = -e.z / 2.0 + (k as f64 + 0.5) * step.z;
                let p = small.rotation.apply(Vec3::new(x, y, z)) + small.center;
                if other.contains(p) {
                    hits += 1;
                }
            }
        }
    }
    let inter = small.volume() * hits as f64 / (res * res * res) as f64;
    inter / (a.volume() + b.volume() - inter)
}

fn check_resolution(resolution: usize) -> Result<()> {
    if resolution < MIN_IOU_RESOLUTION {
        return Err(Error::InvalidParameter(format!(
            "IoU resolution must be >= {MIN_IOU_RESOLUTION}, got {resolution}"
        )));
    }
    Ok(())
}

/// Volume IoU; exact when both boxes share a rotation, sampled otherwise.
pub fn iou_3d(a: &OrientedBox, b: &OrientedBox, resolution: usize) -> Result<f64> {
    check_resolution(resolution)?;
    if same_rotation(&a.rotation, &b.rotation) {
        Ok(iou_aligned(a, b))
    } else {
        Ok(iou_sampled(a, b, resolution))
    }
}

/// [`iou_3d`] without the closed-form shortcut.
pub fn iou_3d_sampled(a: &OrientedBox, b: &OrientedBox, resolution: usize) -> Result<f64> {
    check_resolution(resolution)?;
    Ok(iou_sampled(a, b, resolution))
}

/// The member of `pred`'s symmetry set that is closest to `gt`, used to compare boxes.
fn aligned_prediction(pred: &PoseRecord, gt: &PoseRecord) -> RotationMatrix {
    let sym = &gt.symmetry;
    match sym.kind() {
        SymmetryKind::None => pred.rotation,
        SymmetryKind::NFold => symmetry_group(&pred.rotation, sym)
            .expect("n-fold group is finite")
            .into_iter()
            .min_by(|x, y| {
                crate::geom::geodesic_rotation_distance(x, &gt.rotation)
                    .total_cmp(&crate::geom::geodesic_rotation_distance(y, &gt.rotation))
            })
            .expect("non-empty group"),
        SymmetryKind::Circular => {
            // turn gt's axis onto pred's axis by the smallest rotation
            let a = gt.rotation.apply(sym.axis());
            let b = pred.rotation.apply(sym.axis());
            let axis = a.cross(b);
            let angle = axis.norm().atan2(a.dot(b));
            match axis.normalized() {
                Some(u) => RotationMatrix::from_axis_angle(u, angle).expect("unit axis") * gt.rotation,
                None if a.dot(b) > 0.0 => gt.rotation,
                None => pred.rotation,
            }
        }
    }
}

/// Rotation error (deg, symmetry-aware) and translation error (m).
pub fn pose_errors(pred: &PoseRecord, gt: &PoseRecord) -> Result<(f64, f64)> {
    if pred.category != gt.category {
        return Err(Error::CategoryMismatch {
            pred: pred.category.clone(),
            gt: gt.category.clone(),
        });
    }
    Ok((
        symmetry_aware_rotation_error(&pred.rotation, &gt.rotation, &gt.symmetry),
        (pred.translation - gt.translation).norm(),
    ))
}

/// Whether rotation error < `n_deg` and translation error < `m_cm` centimetres.
pub fn pose_accuracy(pred: &PoseRecord, gt: &PoseRecord, n_deg: f64, m_cm: f64) -> Result<bool> {
    let (r, t) = pose_errors(pred, gt)?;
    Ok(r < n_deg && t < m_cm / 100.0)
}

/// ADD, or ADD-S when `symmetric`, over canonical-frame model points.
pub fn add_metric(model_points: &[Vec3], pred: &PoseRecord, gt: &PoseRecord, symmetric: bool) -> Result<f64> {
    if model_points.is_empty() {
        return Err(Error::EmptyInput("ADD over an empty model"));
    }
    let tp: Vec<Vec3> = model_points.iter().map(|&p| pred.rotation.apply(p) + pred.translation).collect();
    let tg: Vec<Vec3> = model_points.iter().map(|&p| gt.rotation.apply(p) + gt.translation).collect();
    let sum: f64 = if symmetric {
        tp.iter()
            .map(|&a| tg.iter().map(|&b| a.distance_squared(b)).fold(f64::INFINITY, f64::min).sqrt())
            .sum()
    } else {
        tp.iter().zip(&tg).map(|(&a, &b)| a.distance(b)).sum()
    };
    Ok(sum / model_points.len() as f64)
}

/// Largest distance between two model points.
pub fn model_diameter(model_points: &[Vec3]) -> f64 {
    let mut d2 = 0.0f64;
    for (i, &a) in model_points.iter().enumerate() {
        for &b in &model_points[i + 1..] {
            d2 = d2.max(a.distance_squared(b));
        }
    }
    d2.sqrt()
}

/// The usual ADD(-S) acceptance threshold: 10% of the model diameter.
pub fn add_threshold(model_points: &[Vec3]) -> f64 {
    0.1 * model_diameter(model_points)
}

/// Chamfer distance scaled by 10³ (reported in units of 10⁻³ m²).
pub fn chamfer_e3(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    Ok(chamfer_distance(pred, gt)? * 1e3)
}

/// Mean Chamfer ×10³ per category over paired clouds.
pub fn chamfer_report(categories: &[String], pred: &[Vec<Vec3>], gt: &[Vec<Vec3>]) -> Result<BTreeMap<String, f64>> {
    if categories.len() != pred.len() || pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "chamfer report needs paired lists, got {} categories, {} predictions, {} targets",
            categories.len(),
            pred.len(),
            gt.len()
        )));
    }
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for ((c, p), g) in categories.iter().zip(pred).zip(gt) {
        let e = acc.entry(c.clone()).or_insert((0.0, 0));
        e.0 += chamfer_e3(p, g)?;
        e.1 += 1;
    }
    Ok(acc.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect())
}

/// One row of an [`EvalReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryMetrics {
    pub category: String,
    pub count: usize,
    pub iou25: f64,
    pub iou50: f64,
    pub iou75: f64,
    pub acc_5d5cm: f64,
    pub acc_10d5cm: f64,
    pub acc_10d10cm: f64,
    pub mean_rot_deg: f64,
    pub mean_trans_m: f64,
    /// `None` when no reconstructions were evaluated.
    pub chamfer_e3: Option<f64>,
}

impl CategoryMetrics {
    fn values(&self) -> [f64; 9] {
        [
            self.iou25,
            self.iou50,
            self.iou75,
            self.acc_5d5cm,
            self.acc_10d5cm,
            self.acc_10d10cm,
            self.mean_rot_deg,
            self.mean_trans_m,
            self.chamfer_e3.unwrap_or(f64::NAN),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Sorted by category name.
    pub categories: Vec<CategoryMetrics>,
    /// Unweighted mean over the category rows.
    pub average: CategoryMetrics,
}

pub const REPORT_HEADER: [&str; 10] = [
    "category",
    "iou25",
    "iou50",
    "iou75",
    "acc_5d5cm",
    "acc_10d5cm",
    "acc_10d10cm",
    "mean_rot_deg",
    "mean_trans_m",
    "chamfer_e3",
];

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.6}")
    }
}

impl EvalReport {
    fn rows(&self) -> impl Iterator<Item = &CategoryMetrics> {
        self.categories.iter().chain(std::iter::once(&self.average))
    }

    /// Header, one row per category, then the `average` row; six decimals, `nan` when absent.
    pub fn to_csv(&self) -> String {
        let mut s = REPORT_HEADER.join(",");
        s.push('\n');
        for r in self.rows() {
            s.push_str(&r.category);
            for v in r.values() {
                s.push(',');
                s.push_str(&fmt_value(v));
            }
            s.push('\n');
        }
        s
    }

    pub fn to_table(&self) -> String {
        let cells: Vec<Vec<String>> = std::iter::once(REPORT_HEADER.iter().map(|h| h.to_string()).collect())
            .chain(self.rows().map(|r| {
                std::iter::once(r.category.clone())
                    .chain(r.values().iter().map(|&v| fmt_value(v)))
                    .collect()
            }))
            .collect();
        let widths: Vec<usize> = (0..REPORT_HEADER.len())
            .map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for row in &cells {
            for (c, cell) in row.iter().enumerate() {
                if c == 0 {
                    let _ = write!(s, "{cell:<w$}", w = widths[c]);
                } else {
                    let _ = write!(s, "  {cell:>w$}", w = widths[c]);
                }
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub iou_resolution: usize,
    /// Per-instance Chamfer ×10³ by id, when reconstructions were scored.
    pub chamfer_e3: HashMap<String, f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            iou_resolution: DEFAULT_IOU_RESOLUTION,
            chamfer_e3: HashMap::new(),
        }
    }
}

/// Per-instance scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceScore {
    pub iou: f64,
    pub rot_deg: f64,
    pub trans_m: f64,
}

pub fn score_instance(pred: &PoseRecord, gt: &PoseRecord, iou_resolution: usize) -> Result<InstanceScore> {
    let (rot_deg, trans_m) = pose_errors(pred, gt)?;
    let aligned = OrientedBox::new(aligned_prediction(pred, gt), pred.translation, pred.size())?;
    Ok(InstanceScore {
        iou: iou_3d(&aligned, &gt.bounding_box(), iou_resolution)?,
        rot_deg,
        trans_m,
    })
}

fn frac(flags: impl Iterator<Item = bool>, n: usize) -> f64 {
    flags.filter(|&b| b).count() as f64 / n as f64
}

/// Scores every prediction against the ground truth with the same id.
pub fn evaluate(pred: &[PoseEntry], gt: &[PoseEntry], options: &EvalOptions) -> Result<EvalReport> {
    if pred.is_empty() {
        return Err(Error::EmptyInput("no predictions to evaluate"));
    }
    let by_id: HashMap<&str, &PoseRecord> = gt.iter().map(|e| (e.id.as_str(), &e.pose)).collect();
    let missing: Vec<String> = pred
        .iter()
        .filter(|e| !by_id.contains_key(e.id.as_str()))
        .map(|e| e.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingGroundTruth(missing));
    }
    let mut groups: BTreeMap<String, Vec<(InstanceScore, Option<f64>)>> = BTreeMap::new();
    for e in pred {
        let g = by_id[e.id.as_str()];
        let score = score_instance(&e.pose, g, options.iou_resolution)?;
        groups
            .entry(g.category.clone())
            .or_default()
            .push((score, options.chamfer_e3.get(&e.id).copied()));
    }
    let categories: Vec<CategoryMetrics> = groups
        .into_iter()
        .map(|(category, scores)| {
            let n = scores.len();
            let s = || scores.iter().map(|(s, _)| s);
            let acc = |deg: f64, cm: f64| frac(s().map(|x| x.rot_deg < deg && x.trans_m < cm / 100.0), n);
            let chamfers: Vec<f64> = scores.iter().filter_map(|(_, c)| *c).collect();
            CategoryMetrics {
                category,
                count: n,
                iou25: frac(s().map(|x| x.iou > 0.25), n),
                iou50: frac(s().map(|x| x.iou > 0.50), n),
                iou75: frac(s().map(|x| x.iou > 0.75), n),
                acc_5d5cm: acc(5.0, 5.0),
                acc_10d5cm: acc(10.0, 5.0),
                acc_10d10cm: acc(10.0, 10.0),
                mean_rot_deg: s().map(|x| x.rot_deg).sum::<f64>() / n as f64,
                mean_trans_m: s().map(|x| x.trans_m).sum::<f64>() / n as f64,
                chamfer_e3: (!chamfers.is_empty()).then(|| chamfers.iter().sum::<f64>() / chamfers.len() as f64),
            }
        })
        .collect();
    let k = categories.len() as f64;
    let mean = |f: fn(&CategoryMetrics) -> f64| categories.iter().map(f).sum::<f64>() / k;
    let chamfer_rows: Vec<f64> = categories.iter().filter_map(|c| c.chamfer_e3).collect();
    let average = CategoryMetrics {
        category: "average".to_string(),
        count: categories.iter().map(|c| c.count).sum(),
        iou25: mean(|c| c.iou25),
        iou50: mean(|c| c.iou50),
        iou75: mean(|c| c.iou75),
        acc_5d5cm: mean(|c| c.acc_5d5cm),
        acc_10d5cm: mean(|c| c.acc_10d5cm),
        acc_10d10cm: mean(|c| c.acc_10d10cm),
        mean_rot_deg: mean(|c| c.mean_rot_deg),
        mean_trans_m: mean(|c| c.mean_trans_m),
        chamfer_e3: (chamfer_rows.len() == categories.len())
            .then(|| chamfer_rows.iter().sum::<f64>() / chamfer_rows.len() as f64),
    };
    Ok(EvalReport { categories, average })
}

pub fn evaluate_files(pred: impl AsRef<Path>, gt: impl AsRef<Path>, options: &EvalOptions) -> Result<EvalReport> {
    evaluate(&read_poses(pred)?, &read_poses(gt)?, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::SymmetrySpec;

    fn cube(center: Vec3) -> OrientedBox {
        OrientedBox::new(RotationMatrix::IDENTITY, center, Vec3::new(1.0, 1.0, 1.0)).unwrap()
    }

    fn pose(r: RotationMatrix, t: Vec3, sym: SymmetrySpec) -> PoseRecord {
        PoseRecord::new(r, t, Vec3::new(0.1, 0.1, 0.2), "bottle", sym).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = cube(Vec3::ZERO);
        assert_eq!(iou_3d(&a, &a, 32).unwrap(), 1.0);
        assert_eq!(iou_3d(&a, &cube(Vec3::new(2.0, 0.0, 0.0)), 32).unwrap(), 0.0);
        let b = cube(Vec3::new(0.5, 0.0, 0.0));
        assert!((iou_3d(&a, &b, 64).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou_3d_sampled(&a, &b, 64).unwrap() - 1.0 / 3.0).abs() < 0.01);
        assert!(matches!(iou_3d(&a, &b, 8), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn accuracy_boundaries_are_strict() {
        let gt = pose(RotationMatrix::IDENTITY, Vec3::ZERO, SymmetrySpec::none());
        let pred = pose(RotationMatrix::rot_x_deg(10.0), Vec3::new(0.04, 0.0, 0.0), SymmetrySpec::none());
        assert!(!pose_accuracy(&pred, &gt, 5.0, 5.0).unwrap());
        assert!(pose_accuracy(&pred, &gt, 10.0 + 1e-9, 5.0).unwrap());
        let exact = pose(RotationMatrix::rot_x_deg(9.0), Vec3::new(0.05, 0.0, 0.0), SymmetrySpec::none());
        assert!(!pose_accuracy(&exact, &gt, 10.0, 5.0).unwrap());
        assert!(pose_accuracy(&gt, &gt, 5.0, 5.0).unwrap());
    }

    #[test]
    fn circular_spin_is_free() {
        let sym = SymmetrySpec::circular(Vec3::Z).unwrap();
        let gt = pose(RotationMatrix::rot_x_deg(20.0), Vec3::ZERO, sym);
        let pred = pose(RotationMatrix::rot_x_deg(20.0) * RotationMatrix::rot_z_deg(90.0), Vec3::ZERO, sym);
        assert!(pose_accuracy(&pred, &gt, 5.0, 5.0).unwrap());
        let s = score_instance(&pred, &gt, 64).unwrap();
        assert!((s.iou - 1.0).abs() < 1e-9);
    }

    #[test]
    fn category_mismatch() {
        let a = pose(RotationMatrix::IDENTITY, Vec3::ZERO, SymmetrySpec::none());
        let mut b = a.clone();
        b.category = "mug".into();
        assert!(matches!(pose_accuracy(&a, &b, 5.0, 5.0), Err(Error::CategoryMismatch { .. })));
    }

    #[test]
    fn add_examples() {
        let pts = vec![Vec3::X, Vec3::Y, Vec3::Z * 0.5];
        let gt = pose(RotationMatrix::IDENTITY, Vec3::ZERO, SymmetrySpec::none());
        assert_eq!(add_metric(&pts, &gt, &gt, false).unwrap(), 0.0);
        let shifted = pose(RotationMatrix::IDENTITY, Vec3::new(0.3, 0.4, 0.0), SymmetrySpec::none());
        assert!((add_metric(&pts, &shifted, &gt, false).unwrap() - 0.5).abs() < 1e-15);
        assert!(add_metric(&[], &gt, &gt, true).is_err());
    }

    #[test]
    fn chamfer_report_examples() {
        let r = chamfer_report(&["a".into()], &[vec![Vec3::new(0.1, 0.0, 0.0)]], &[vec![Vec3::ZERO]]).unwrap();
        assert!((r["a"] - 20.0).abs() < 1e-12);
        assert!(matches!(chamfer_report(&["a".into()], &[], &[]), Err(Error::Shape(_))));
    }

    #[test]
    fn evaluate_self_is_perfect() {
        let e = PoseEntry {
            id: "x".into(),
            pose: pose(RotationMatrix::rot_y_deg(30.0), Vec3::new(0.0, 0.0, 1.0), SymmetrySpec::none()),
        };
        let r = evaluate(std::slice::from_ref(&e), std::slice::from_ref(&e), &EvalOptions::default()).unwrap();
        let a = &r.average;
        assert_eq!([a.iou25, a.iou50, a.iou75, a.acc_5d5cm, a.acc_10d5cm, a.acc_10d10cm], [1.0; 6]);
        let other = PoseEntry { id: "y".into(), ..e.clone() };
        assert!(matches!(evaluate(&[other], &[e], &EvalOptions::default()), Err(Error::MissingGroundTruth(ids)) if ids == ["y"]));
    }
}
