//! Box-cage shape augmentation.
//!
//! Object points are moved into the canonical frame of their pose, deformed
//! there by axis scaling followed by an optional taper, and moved back:
//! `R·F(Rᵀ(p − T)) + T`. The cage is the object's axis-aligned bounding box
//! centred at the origin. Tapering widens (or narrows) one horizontal axis
//! linearly from the top face (`y = +h/2`, unchanged) to the bottom face
//! (`y = −h/2`, scaled by the taper factor), which keeps cage edges straight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{PointCloud, PoseRecord, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

fn with_component(v: Vec3, axis: Axis, value: f64) -> Vec3 {
    match axis {
        Axis::X => Vec3::new(value, v.y, v.z),
        Axis::Y => Vec3::new(v.x, value, v.z),
        Axis::Z => Vec3::new(v.x, v.y, value),
    }
}

/// Axis-aligned cage centred at the origin of the canonical frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxCage {
    extents: Vec3,
}

impl BoxCage {
    pub fn new(extents: Vec3) -> Result<Self> {
        if !(extents.is_finite() && extents.min_element() > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "cage extents must be strictly positive, got {extents:?}"
            )));
        }
        Ok(BoxCage { extents })
    }

    pub fn extents(&self) -> Vec3 {
        self.extents
    }
}

/// Inclusive ranges deformation factors are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeformationRanges {
    pub scale: (f64, f64),
    pub taper: (f64, f64),
    /// Probability that a sampled spec has no taper.
    pub no_taper_probability: f64,
}

impl Default for DeformationRanges {
    fn default() -> Self {
        DeformationRanges {
            scale: (0.5, 2.0),
            taper: (0.5, 2.0),
            no_taper_probability: 0.5,
        }
    }
}

impl DeformationRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo > 0.0 && hi >= lo && hi.is_finite();
        if !(ok(self.scale) && ok(self.taper) && (0.0..=1.0).contains(&self.no_taper_probability)) {
            return Err(Error::InvalidParameter(format!("invalid deformation ranges {self:?}")));
        }
        Ok(())
    }
}

fn in_range(range: (f64, f64), v: f64) -> bool {
    v >= range.0 && v <= range.1
}

/// Deformation parameters: per-axis scale, then an optional taper about the height (y) axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct DeformationSpec {
    scale: Vec3,
    taper_axis: Option<Axis>,
    taper_factor: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    scale: [f64; 3],
    taper_axis: Option<Axis>,
    #[serde(default = "unit")]
    taper_factor: f64,
}

fn unit() -> f64 {
    1.0
}

impl TryFrom<RawSpec> for DeformationSpec {
    type Error = Error;
    fn try_from(r: RawSpec) -> Result<Self> {
        DeformationSpec::new(r.scale.into(), r.taper_axis, r.taper_factor, &DeformationRanges::default())
    }
}

impl From<DeformationSpec> for RawSpec {
    fn from(s: DeformationSpec) -> Self {
        RawSpec {
            scale: s.scale.to_array(),
            taper_axis: s.taper_axis,
            taper_factor: s.taper_factor,
        }
    }
}

impl DeformationSpec {
    pub const IDENTITY: DeformationSpec = DeformationSpec {
        scale: Vec3::new(1.0, 1.0, 1.0),
        taper_axis: None,
        taper_factor: 1.0,
    };

    pub fn new(scale: Vec3, taper_axis: Option<Axis>, taper_factor: f64, ranges: &DeformationRanges) -> Result<Self> {
        ranges.validate()?;
        if !scale.to_array().iter().all(|&s| in_range(ranges.scale, s)) {
            return Err(Error::InvalidParameter(format!(
                "scale {scale:?} outside {:?}",
                ranges.scale
            )));
        }
        if taper_axis == Some(Axis::Y) {
            return Err(Error::InvalidParameter("taper axis must be x or z".into()));
        }
        if taper_axis.is_some() && !in_range(ranges.taper, taper_factor) {
            return Err(Error::InvalidParameter(format!(
                "taper factor {taper_factor} outside {:?}",
                ranges.taper
            )));
        }
        Ok(DeformationSpec {
            scale,
            taper_axis,
            taper_factor: if taper_axis.is_some() { taper_factor } else { 1.0 },
        })
    }

    pub fn scale(&self) -> Vec3 {
        self.scale
    }

    pub fn taper_axis(&self) -> Option<Axis> {
        self.taper_axis
    }

    pub fn taper_factor(&self) -> f64 {
        self.taper_factor
    }

    /// Bounding-box extents of a cage after this deformation.
    ///
    /// The taper axis takes the larger of its top and bottom cross-sections.
    pub fn deformed_extents(&self, extents: Vec3) -> Vec3 {
        let e = extents.hadamard(self.scale);
        match self.taper_axis {
            Some(axis) => {
                let i = axis.index();
                with_component(e, axis, e[i] * self.taper_factor.max(1.0))
            }
            None => e,
        }
    }
}

/// Multiplies one coordinate by `n`.
pub fn axis_scale(cloud: &PointCloud, axis: Axis, n: f64) -> Result<PointCloud> {
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidParameter(format!("scale factor must be > 0, got {n}")));
    }
    let mut out = cloud.clone();
    for p in out.points.iter_mut() {
        *p = with_component(*p, axis, p[axis.index()] * n);
    }
    Ok(out)
}

fn taper_point(p: Vec3, height: f64, axis: Axis, n: f64) -> Vec3 {
    let l = (height / 2.0 - p.y).clamp(0.0, height);
    let f = 1.0 + (n - 1.0) * l / height;
    with_component(p, axis, p[axis.index()] * f)
}

/// Scales `axis` (x or z) by `1 + (n − 1)·l/L`, `l` being the distance below the top face.
pub fn taper(cloud: &PointCloud, cage: &BoxCage, axis: Axis, n: f64) -> Result<PointCloud> {
    if axis == Axis::Y {
        return Err(Error::InvalidParameter("taper axis must be x or z".into()));
    }
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidParameter(format!("taper factor must be > 0, got {n}")));
    }
    let height = cage.extents.y;
    let mut out = cloud.clone();
    for p in out.points.iter_mut() {
        *p = taper_point(*p, height, axis, n);
    }
    Ok(out)
}

/// Cage faces in tie-break order; `id()` numbers them 1 to 6.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl Face {
    pub const ALL: [Face; 6] = [Face::PosX, Face::NegX, Face::PosY, Face::NegY, Face::PosZ, Face::NegZ];

    pub fn id(self) -> u8 {
        self as u8 + 1
    }
}

/// Distance from `p` to the rectangle of `face`.
fn face_distance(p: Vec3, h: Vec3, face: Face) -> f64 {
    let (axis, sign) = match face {
        Face::PosX => (0, 1.0),
        Face::NegX => (0, -1.0),
        Face::PosY => (1, 1.0),
        Face::NegY => (1, -1.0),
        Face::PosZ => (2, 1.0),
        Face::NegZ => (2, -1.0),
    };
    let mut d2 = 0.0;
    for k in 0..3 {
        let diff = if k == axis {
            p[k] - sign * h[k]
        } else {
            p[k] - p[k].clamp(-h[k], h[k])
        };
        d2 += diff * diff;
    }
    d2.sqrt()
}

/// Nearest cage face of every point; ties go to the earlier face in [`Face::ALL`].
pub fn assign_points_to_surfaces(cloud: &PointCloud, cage: &BoxCage) -> Vec<Face> {
    let h = cage.extents / 2.0;
    cloud
        .points
        .iter()
        .map(|&p| {
            let mut best = Face::PosX;
            let mut best_d = f64::INFINITY;
            for face in Face::ALL {
                let d = face_distance(p, h, face);
                if d < best_d {
                    best = face;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

/// The canonical-frame map: scale first, then taper against the scaled cage.
pub fn deform_canonical(p: Vec3, cage: &BoxCage, spec: &DeformationSpec) -> Vec3 {
    let q = p.hadamard(spec.scale);
    match spec.taper_axis {
        Some(axis) => taper_point(q, cage.extents.y * spec.scale.y, axis, spec.taper_factor),
        None => q,
    }
}

/// Deforms the object-labelled points (label != 0) of a scene; background passes through.
///
/// Returns the new cloud and the deformed ground-truth size. Rotation and
/// translation of the object are unchanged.
pub fn deform_in_scene(
    scene: &PointCloud,
    pose: &PoseRecord,
    cage: &BoxCage,
    spec: &DeformationSpec,
) -> Result<(PointCloud, Vec3)> {
    let labels = scene.labels().ok_or(Error::LabelRequired)?;
    let r = &pose.rotation;
    let t = pose.translation;
    let points = scene
        .points
        .iter()
        .zip(labels)
        .map(|(&p, &l)| {
            if l == 0 {
                p
            } else {
                r.apply(deform_canonical(r.apply_transpose(p - t), cage, spec)) + t
            }
        })
        .collect();
    Ok((
        PointCloud::with_labels(points, labels.to_vec())?,
        spec.deformed_extents(cage.extents),
    ))
}

/// Draws a deformation from `ranges` using the caller's generator.
pub fn sample_deformation<R: Rng + ?Sized>(rng: &mut R, ranges: &DeformationRanges) -> Result<DeformationSpec> {
    ranges.validate()?;
    let (lo, hi) = ranges.scale;
    let scale = Vec3::new(
        rng.random_range(lo..=hi),
        rng.random_range(lo..=hi),
        rng.random_range(lo..=hi),
    );
    let (taper_axis, taper_factor) = if rng.random_bool(ranges.no_taper_probability) {
        (None, 1.0)
    } else {
        let axis = if rng.random_bool(0.5) { Axis::X } else { Axis::Z };
        (Some(axis), rng.random_range(ranges.taper.0..=ranges.taper.1))
    };
    DeformationSpec::new(scale, taper_axis, taper_factor, ranges)
}

/// Deterministic deformation for a seed.
pub fn sample_random_deformation(seed: u64, ranges: &DeformationRanges) -> Result<DeformationSpec> {
    sample_deformation(&mut ChaCha8Rng::seed_from_u64(seed), ranges)
}
