//! Labelled partial-view samples of simple shapes.
//!
//! Single-view visibility is approximated by keeping only the part of the
//! surface in the canonical upper half-space `z >= 0` (the top face plus the
//! upper half of the sides), i.e. the object seen from above along `+Z`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::deform::{deform_canonical, sample_deformation, BoxCage, DeformationRanges};
use crate::error::{Error, Result};
use crate::geom::{PointCloud, PoseRecord, RotationMatrix, SymmetrySpec, Vec3};

/// Top cross-section of a tapered box relative to its bottom.
const TAPER_TOP_RATIO: f64 = 0.6;
/// Noise is truncated at this many standard deviations.
const NOISE_TRUNCATION: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeBase {
    Box,
    Cylinder,
    TaperedBox,
}

impl ShapeBase {
    pub const ALL: [ShapeBase; 3] = [ShapeBase::Box, ShapeBase::Cylinder, ShapeBase::TaperedBox];

    pub fn name(self) -> &'static str {
        match self {
            ShapeBase::Box => "box",
            ShapeBase::Cylinder => "cylinder",
            ShapeBase::TaperedBox => "tapered_box",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ShapeBase::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown shape base `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticShapeSpec {
    pub base: ShapeBase,
    /// Full bounding-box extents in the canonical frame (m).
    pub extents: Vec3,
    pub points_per_sample: usize,
    pub background_points: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticShapeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.points_per_sample < 64 {
            return Err(Error::InvalidParameter(format!(
                "points_per_sample must be >= 64, got {}",
                self.points_per_sample
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        BoxCage::new(self.extents)?;
        Ok(())
    }
}

/// Cross-section scale of the tapered box at height `z` in `[-h/2, h/2]`.
fn taper_scale(z: f64, h: f64) -> f64 {
    1.0 - (1.0 - TAPER_TOP_RATIO) * (z / h + 0.5)
}

fn pick_weighted<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn sym(rng: &mut (impl Rng + ?Sized)) -> f64 {
    rng.random_range(-1.0..=1.0)
}

/// Area-weighted surface points of `base` in its canonical frame.
///
/// With `visible_only` the surface is restricted to `z >= 0`.
pub fn sample_surface<R: Rng + ?Sized>(
    base: ShapeBase,
    extents: Vec3,
    count: usize,
    visible_only: bool,
    rng: &mut R,
) -> Vec<Vec3> {
    let h = extents / 2.0;
    let z_lo = if visible_only { 0.0 } else { -h.z };
    let side_h = h.z - z_lo;
    (0..count)
        .map(|_| match base {
            ShapeBase::Box => {
                // top, bottom, +x, -x, +y, -y
                let bottom = if visible_only { 0.0 } else { extents.x * extents.y };
                let w = [
                    extents.x * extents.y,
                    bottom,
                    extents.y * side_h,
                    extents.y * side_h,
                    extents.x * side_h,
                    extents.x * side_h,
                ];
                let z = rng.random_range(z_lo..=h.z);
                match pick_weighted(rng, &w) {
                    0 => Vec3::new(h.x * sym(rng), h.y * sym(rng), h.z),
                    1 => Vec3::new(h.x * sym(rng), h.y * sym(rng), -h.z),
                    2 => Vec3::new(h.x, h.y * sym(rng), z),
                    3 => Vec3::new(-h.x, h.y * sym(rng), z),
                    4 => Vec3::new(h.x * sym(rng), h.y, z),
                    _ => Vec3::new(h.x * sym(rng), -h.y, z),
                }
            }
            ShapeBase::Cylinder => {
                // elliptic cylinder with semi-axes h.x, h.y; side sampled uniformly in angle
                let cap = std::f64::consts::PI * h.x * h.y;
                let perimeter = std::f64::consts::PI
                    * (3.0 * (h.x + h.y) - ((3.0 * h.x + h.y) * (h.x + 3.0 * h.y)).sqrt());
                let w = [cap, if visible_only { 0.0 } else { cap }, perimeter * side_h];
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let (s, c) = theta.sin_cos();
                match pick_weighted(rng, &w) {
                    i @ (0 | 1) => {
                        let r = rng.random_range(0.0f64..=1.0).sqrt();
                        let z = if i == 0 { h.z } else { -h.z };
                        Vec3::new(h.x * r * c, h.y * r * s, z)
                    }
                    _ => Vec3::new(h.x * c, h.y * s, rng.random_range(z_lo..=h.z)),
                }
            }
            ShapeBase::TaperedBox => {
                let s_top = TAPER_TOP_RATIO;
                let s_lo = taper_scale(z_lo, extents.z);
                let s_mid = 0.5 * (s_top + s_lo);
                let slant = |half: f64| (side_h * side_h + (half * (s_lo - s_top)).powi(2)).sqrt();
                let bottom = if visible_only { 0.0 } else { extents.x * extents.y };
                let w = [
                    extents.x * extents.y * s_top * s_top,
                    bottom,
                    extents.y * s_mid * slant(h.x),
                    extents.y * s_mid * slant(h.x),
                    extents.x * s_mid * slant(h.y),
                    extents.x * s_mid * slant(h.y),
                ];
                let face = pick_weighted(rng, &w);
                // height on a trapezoidal side, density proportional to its width
                let mut side_z = || loop {
                    let z = rng.random_range(z_lo..=h.z);
                    if rng.random_range(0.0..=s_lo) <= taper_scale(z, extents.z) {
                        return z;
                    }
                };
                match face {
                    0 => Vec3::new(h.x * s_top * sym(rng), h.y * s_top * sym(rng), h.z),
                    1 => Vec3::new(h.x * sym(rng), h.y * sym(rng), -h.z),
                    2..=5 => {
                        let z = side_z();
                        let s = taper_scale(z, extents.z);
                        let t = sym(rng);
                        match face {
                            2 => Vec3::new(h.x * s, h.y * s * t, z),
                            3 => Vec3::new(-h.x * s, h.y * s * t, z),
                            4 => Vec3::new(h.x * s * t, h.y * s, z),
                            _ => Vec3::new(h.x * s * t, -h.y * s, z),
                        }
                    }
                    _ => unreachable!(),
                }
            }
        })
        .collect()
}

fn truncated_noise<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma >= 0");
    loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= NOISE_TRUNCATION * sigma {
            return v;
        }
    }
}

/// Uniform point in the ball of radius `r` around `c`.
fn in_ball<R: Rng + ?Sized>(rng: &mut R, c: Vec3, r: f64) -> Vec3 {
    let dir = loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if let Some(u) = v.normalized() {
            break u;
        }
    };
    c + dir * (r * rng.random_range(0.0f64..=1.0).cbrt())
}

/// Object points (label 1) on the visible surface followed by uniform clutter (label 0).
///
/// Returns the cloud and the ground-truth pose, whose size is `spec.extents`.
pub fn generate_synthetic_sample(spec: &SyntheticShapeSpec, pose: &PoseRecord) -> Result<(PointCloud, PoseRecord)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let surface = sample_surface(spec.base, spec.extents, spec.points_per_sample, true, &mut rng);
    let mut points = Vec::with_capacity(spec.points_per_sample + spec.background_points);
    for p in surface {
        let noise = Vec3::new(
            truncated_noise(&mut rng, spec.noise_sigma),
            truncated_noise(&mut rng, spec.noise_sigma),
            truncated_noise(&mut rng, spec.noise_sigma),
        );
        points.push(pose.rotation.apply(p + noise) + pose.translation);
    }
    let radius = 2.0 * spec.extents.max_element();
    for _ in 0..spec.background_points {
        points.push(in_ball(&mut rng, pose.translation, radius));
    }
    let mut labels = vec![1u8; spec.points_per_sample];
    labels.resize(points.len(), 0);
    let mut gt = pose.clone();
    gt.set_size(spec.extents)?;
    Ok((PointCloud::with_labels(points, labels)?, gt))
}

/// A named pseudo-category: base shape, mean extents and symmetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub base: ShapeBase,
    pub mean_extents: Vec3,
    pub symmetry: SymmetrySpec,
}

impl Category {
    /// The default category of each base shape.
    pub fn for_base(base: ShapeBase) -> Category {
        let (mean_extents, symmetry) = match base {
            ShapeBase::Box => (Vec3::new(0.16, 0.10, 0.08), SymmetrySpec::n_fold(2, Vec3::Z)),
            ShapeBase::Cylinder => (Vec3::new(0.08, 0.08, 0.16), SymmetrySpec::circular(Vec3::Z)),
            ShapeBase::TaperedBox => (Vec3::new(0.14, 0.10, 0.12), SymmetrySpec::n_fold(2, Vec3::Z)),
        };
        Category {
            name: base.name().to_string(),
            base,
            mean_extents,
            symmetry: symmetry.expect("valid default symmetry"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub count: usize,
    pub categories: Vec<Category>,
    pub points_per_sample: usize,
    pub background_points: usize,
    pub noise_sigma: f64,
    /// Per-axis extents are the category mean times a factor in `1 ± extent_jitter`.
    pub extent_jitter: f64,
    /// Maximum tilt of the object's up axis away from the camera-facing direction (deg).
    pub max_tilt_deg: f64,
    /// Points sampled on the complete (unculled) surface of every object.
    pub complete_points: usize,
    /// When set, every sample is shape-deformed with factors from these ranges.
    pub deformation: Option<DeformationRanges>,
    pub seed: u64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            count: 100,
            categories: ShapeBase::ALL.into_iter().map(Category::for_base).collect(),
            points_per_sample: 128,
            background_points: 32,
            noise_sigma: 0.002,
            extent_jitter: 0.15,
            max_tilt_deg: 40.0,
            complete_points: 128,
            deformation: None,
            seed: 0,
        }
    }
}

/// One generated instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Labelled scene points (object 1, clutter 0).
    pub cloud: PointCloud,
    pub pose: PoseRecord,
    /// Noiseless points on the complete object surface, in the scene frame.
    pub complete: Vec<Vec3>,
}

/// Round-robin over the categories; every sample gets its own derived seed.
pub fn generate_dataset(opts: &DatasetOptions) -> Result<Vec<Sample>> {
    if opts.categories.is_empty() {
        return Err(Error::EmptyInput("no categories"));
    }
    if !(0.0..1.0).contains(&opts.extent_jitter) {
        return Err(Error::InvalidParameter("extent_jitter must be in [0, 1)".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(opts.seed);
    (0..opts.count)
        .map(|i| {
            let cat = &opts.categories[i % opts.categories.len()];
            let sample_seed: u64 = master.random();
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
            let jitter = |rng: &mut ChaCha8Rng| 1.0 + rng.random_range(-opts.extent_jitter..=opts.extent_jitter);
            let mut extents = cat.mean_extents.hadamard(Vec3::new(jitter(&mut rng), jitter(&mut rng), jitter(&mut rng)));
            if cat.base == ShapeBase::Cylinder {
                extents.y = extents.x;
            }
            let yaw = RotationMatrix::rot_z_deg(rng.random_range(0.0..360.0));
            let tilt_axis = RotationMatrix::rot_z_deg(rng.random_range(0.0..360.0)).apply(Vec3::X);
            let tilt = RotationMatrix::from_axis_angle(tilt_axis, rng.random_range(0.0..=opts.max_tilt_deg).to_radians())?;
            let translation = Vec3::new(
                rng.random_range(-0.3..=0.3),
                rng.random_range(-0.3..=0.3),
                rng.random_range(0.6..=1.2),
            );
            let pose = PoseRecord::new(tilt * yaw, translation, extents, cat.name.clone(), cat.symmetry)?;
            let spec = SyntheticShapeSpec {
                base: cat.base,
                extents,
                points_per_sample: opts.points_per_sample,
                background_points: opts.background_points,
                noise_sigma: opts.noise_sigma,
                seed: rng.random(),
            };
            let (mut cloud, mut gt) = generate_synthetic_sample(&spec, &pose)?;
            let mut complete: Vec<Vec3> = sample_surface(cat.base, extents, opts.complete_points, false, &mut rng);
            if let Some(ranges) = &opts.deformation {
                let deformation = sample_deformation(&mut rng, ranges)?;
                let cage = BoxCage::new(extents)?;
                let (deformed, size) = crate::deform::deform_in_scene(&cloud, &gt, &cage, &deformation)?;
                cloud = deformed;
                gt.set_size(size)?;
                for p in complete.iter_mut() {
                    *p = deform_canonical(*p, &cage, &deformation);
                }
            }
            let complete = complete.into_iter().map(|p| gt.rotation.apply(p) + gt.translation).collect();
            Ok(Sample {
                id: format!("{i:05}_{}", cat.name),
                cloud,
                pose: gt,
                complete,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::inverse_transform_points;

    fn pose() -> PoseRecord {
        PoseRecord::new(
            RotationMatrix::rot_x_deg(25.0) * RotationMatrix::rot_z_deg(110.0),
            Vec3::new(0.1, -0.2, 0.8),
            Vec3::new(1.0, 1.0, 1.0),
            "box",
            SymmetrySpec::none(),
        )
        .unwrap()
    }

    fn spec(base: ShapeBase, noise: f64, background: usize) -> SyntheticShapeSpec {
        SyntheticShapeSpec {
            base,
            extents: Vec3::new(0.2, 0.12, 0.1),
            points_per_sample: 200,
            background_points: background,
            noise_sigma: noise,
            seed: 99,
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let s = spec(ShapeBase::TaperedBox, 0.003, 20);
        assert_eq!(generate_synthetic_sample(&s, &pose()).unwrap(), generate_synthetic_sample(&s, &pose()).unwrap());
    }

    #[test]
    fn noiseless_box_points_lie_on_visible_faces() {
        let s = spec(ShapeBase::Box, 0.0, 0);
        let (cloud, gt) = generate_synthetic_sample(&s, &pose()).unwrap();
        assert_eq!(gt.size(), s.extents);
        let canon = inverse_transform_points(&cloud, &gt.rotation, gt.translation).unwrap();
        let h = s.extents / 2.0;
        for p in &canon.points {
            let tol = 1e-9;
            let inside = p.x.abs() <= h.x + tol && p.y.abs() <= h.y + tol && p.z <= h.z + tol && p.z >= -tol;
            let on_face = (p.x.abs() - h.x).abs() <= tol || (p.y.abs() - h.y).abs() <= tol || (p.z - h.z).abs() <= tol;
            assert!(inside && on_face, "{p:?}");
        }
    }

    #[test]
    fn no_background_means_all_object_labels() {
        let (cloud, _) = generate_synthetic_sample(&spec(ShapeBase::Cylinder, 0.001, 0), &pose()).unwrap();
        assert!(cloud.labels().unwrap().iter().all(|&l| l == 1));
        let (cloud, _) = generate_synthetic_sample(&spec(ShapeBase::Cylinder, 0.001, 7), &pose()).unwrap();
        assert_eq!(cloud.labels().unwrap().iter().filter(|&&l| l == 0).count(), 7);
        assert_eq!(cloud.len(), 207);
    }

    #[test]
    fn object_points_stay_within_noisy_extents() {
        for base in ShapeBase::ALL {
            let s = spec(base, 0.004, 0);
            let (cloud, gt) = generate_synthetic_sample(&s, &pose()).unwrap();
            let canon = inverse_transform_points(&cloud, &gt.rotation, gt.translation).unwrap();
            let bound = s.extents / 2.0 + Vec3::new(1.0, 1.0, 1.0) * (3.0 * s.noise_sigma + 1e-12);
            for p in &canon.points {
                assert!(p.x.abs() <= bound.x && p.y.abs() <= bound.y && p.z.abs() <= bound.z, "{base:?} {p:?}");
            }
        }
    }

    #[test]
    fn background_lies_in_sphere() {
        let s = spec(ShapeBase::Box, 0.0, 100);
        let (cloud, gt) = generate_synthetic_sample(&s, &pose()).unwrap();
        let r = 2.0 * 0.2;
        for (p, l) in cloud.points.iter().zip(cloud.labels().unwrap()) {
            if *l == 0 {
                assert!(p.distance(gt.translation) <= r + 1e-12);
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec(ShapeBase::Box, 0.0, 0);
        s.points_per_sample = 10;
        assert!(matches!(generate_synthetic_sample(&s, &pose()), Err(Error::InvalidParameter(_))));
        let mut s = spec(ShapeBase::Box, -1.0, 0);
        s.points_per_sample = 64;
        assert!(generate_synthetic_sample(&s, &pose()).is_err());
    }

    #[test]
    fn complete_surface_covers_both_halves() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for base in ShapeBase::ALL {
            let pts = sample_surface(base, Vec3::new(0.2, 0.2, 0.2), 400, false, &mut rng);
            assert!(pts.iter().any(|p| p.z < -0.05) && pts.iter().any(|p| p.z > 0.05));
            let vis = sample_surface(base, Vec3::new(0.2, 0.2, 0.2), 400, true, &mut rng);
            assert!(vis.iter().all(|p| p.z >= 0.0));
        }
    }

    #[test]
    fn dataset_ids_unique_and_round_robin() {
        let opts = DatasetOptions {
            count: 9,
            ..DatasetOptions::default()
        };
        let data = generate_dataset(&opts).unwrap();
        let ids: std::collections::HashSet<_> = data.iter().map(|s| s.id.clone()).collect();
        assert_eq!(ids.len(), 9);
        assert_eq!(data[4].pose.category, "cylinder");
        assert_eq!(data, generate_dataset(&opts).unwrap());
    }
}
