//! Geometric primitives shared by every other module.
//!
//! Rotations are stored as raw row-major 3×3 matrices. Points are in meters.
//! All types are plain values; every operation here is a pure function.

use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub, SubAssign};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `‖RᵀR − I‖∞` and `|det R − 1|` for a matrix to count as a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    /// Unchecked constructor for values computed from already-finite data.
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    /// Checked constructor; rejects NaN and infinities.
    pub fn try_new(x: f64, y: f64, z: f64) -> Result<Self> {
        let v = Vec3::new(x, y, z);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::InvalidParameter(format!("non-finite vector {v:?}")))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector, or `None` for the zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self / n)
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn distance_squared(self, o: Vec3) -> f64 {
        (self - o).norm_squared()
    }

    /// Componentwise product.
    pub fn hadamard(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn max_abs(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    pub fn max_element(self) -> f64 {
        self.x.max(self.y).max(self.z)
    }

    pub fn min_element(self) -> f64 {
        self.x.min(self.y).min(self.z)
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

/// Proper rotation stored as a row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix {
    m: [f64; 9],
}

impl RotationMatrix {
    pub const IDENTITY: RotationMatrix = RotationMatrix {
        m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
    };

    /// Validates orthonormality and `det = +1` within [`ROTATION_TOLERANCE`].
    pub fn new(m: [f64; 9]) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRotation("non-finite entry".into()));
        }
        let err = orthonormality_error(&m);
        if err > ROTATION_TOLERANCE {
            return Err(Error::InvalidRotation(format!(
                "not orthonormal (|RᵀR - I|∞ = {err:.3e})"
            )));
        }
        let det = det3(&m);
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::InvalidRotation(format!("determinant {det:.6} != 1")));
        }
        Ok(RotationMatrix { m })
    }

    /// Matrix whose columns are `c0, c1, c2`. The caller guarantees orthonormality.
    pub(crate) fn from_columns_unchecked(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        RotationMatrix {
            m: [c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z],
        }
    }

    /// Rotation by `angle` radians about `axis` (Rodrigues).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        let u = axis
            .normalized()
            .ok_or_else(|| Error::InvalidParameter("zero rotation axis".into()))?;
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Ok(RotationMatrix {
            m: [
                c + u.x * u.x * t,
                u.x * u.y * t - u.z * s,
                u.x * u.z * t + u.y * s,
                u.y * u.x * t + u.z * s,
                c + u.y * u.y * t,
                u.y * u.z * t - u.x * s,
                u.z * u.x * t - u.y * s,
                u.z * u.y * t + u.x * s,
                c + u.z * u.z * t,
            ],
        })
    }

    pub fn rot_x_deg(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        RotationMatrix {
            m: [1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c],
        }
    }

    pub fn rot_y_deg(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        RotationMatrix {
            m: [c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c],
        }
    }

    pub fn rot_z_deg(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        RotationMatrix {
            m: [c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0],
        }
    }

    /// Rotation of a (not necessarily normalized) quaternion `w + xi + yj + zk`.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n > 1e-12 && n.is_finite()) {
            return Err(Error::InvalidParameter("degenerate quaternion".into()));
        }
        let (w, x, y, z) = (w / n, x / n, y / n, z / n);
        Ok(RotationMatrix {
            m: [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        })
    }

    /// Uniformly distributed rotation (normalized Gaussian quaternion).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
            if let Ok(r) = Self::from_quaternion(q[0], q[1], q[2], q[3]) {
                return r;
            }
        }
    }

    pub fn as_array(&self) -> &[f64; 9] {
        &self.m
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.m[row * 3 + col]
    }

    pub fn col(&self, j: usize) -> Vec3 {
        Vec3::new(self.m[j], self.m[3 + j], self.m[6 + j])
    }

    pub fn transpose(&self) -> RotationMatrix {
        let m = &self.m;
        RotationMatrix {
            m: [m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]],
        }
    }

    pub fn trace(&self) -> f64 {
        self.m[0] + self.m[4] + self.m[8]
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.m;
        Vec3::new(
            m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z,
        )
    }

    /// `Rᵀ·v`.
    pub fn apply_transpose(&self, v: Vec3) -> Vec3 {
        let m = &self.m;
        Vec3::new(
            m[0] * v.x + m[3] * v.y + m[6] * v.z,
            m[1] * v.x + m[4] * v.y + m[7] * v.z,
            m[2] * v.x + m[5] * v.y + m[8] * v.z,
        )
    }

    pub fn determinant(&self) -> f64 {
        det3(&self.m)
    }
}

impl Mul for RotationMatrix {
    type Output = RotationMatrix;
    fn mul(self, o: RotationMatrix) -> RotationMatrix {
        RotationMatrix {
            m: matmul3(&self.m, &o.m),
        }
    }
}

pub(crate) fn matmul3(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
    std::array::from_fn(|k| {
        let (i, j) = (k / 3, k % 3);
        a[i * 3] * b[j] + a[i * 3 + 1] * b[3 + j] + a[i * 3 + 2] * b[6 + j]
    })
}

pub(crate) fn det3(m: &[f64; 9]) -> f64 {
    m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6])
}

/// `‖MᵀM − I‖∞` (max absolute entry).
pub(crate) fn orthonormality_error(m: &[f64; 9]) -> f64 {
    let mut err = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let dot = m[i] * m[j] + m[3 + i] * m[3 + j] + m[6 + i] * m[6 + j];
            let target = if i == j { 1.0 } else { 0.0 };
            err = err.max((dot - target).abs());
        }
    }
    err
}

/// Ordered 3D points with optional per-point class labels (0 background, 1 object).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    labels: Option<Vec<u8>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        PointCloud {
            points,
            labels: None,
        }
    }

    pub fn with_labels(points: Vec<Vec3>, labels: Vec<u8>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        Ok(PointCloud {
            points,
            labels: Some(labels),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn into_parts(self) -> (Vec<Vec3>, Option<Vec<u8>>) {
        (self.points, self.labels)
    }

    /// Points whose label equals `label`.
    pub fn points_with_label(&self, label: u8) -> Result<Vec<Vec3>> {
        let labels = self.labels.as_ref().ok_or(Error::LabelRequired)?;
        Ok(self
            .points
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == label)
            .map(|(p, _)| *p)
            .collect())
    }

    pub fn centroid(&self) -> Result<Vec3> {
        centroid(&self.points)
    }

    fn map_points(&self, f: impl Fn(Vec3) -> Vec3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|&p| f(p)).collect(),
            labels: self.labels.clone(),
        }
    }
}

pub fn centroid(points: &[Vec3]) -> Result<Vec3> {
    if points.is_empty() {
        return Err(Error::EmptyInput("centroid of empty point set"));
    }
    let sum = points.iter().fold(Vec3::ZERO, |acc, &p| acc + p);
    Ok(sum / points.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetryKind {
    None,
    Circular,
    NFold,
}

/// Rotational symmetry of an object about a canonical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSymmetry", into = "RawSymmetry")]
pub struct SymmetrySpec {
    kind: SymmetryKind,
    n: u32,
    axis: Vec3,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSymmetry {
    kind: SymmetryKind,
    #[serde(default = "one")]
    n: u32,
    #[serde(default = "z_axis")]
    axis: [f64; 3],
}

fn one() -> u32 {
    1
}

fn z_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

impl TryFrom<RawSymmetry> for SymmetrySpec {
    type Error = Error;
    fn try_from(raw: RawSymmetry) -> Result<Self> {
        let axis = Vec3::try_new(raw.axis[0], raw.axis[1], raw.axis[2])?;
        match raw.kind {
            SymmetryKind::None => Ok(SymmetrySpec::none()),
            SymmetryKind::Circular => SymmetrySpec::circular(axis),
            SymmetryKind::NFold => SymmetrySpec::n_fold(raw.n, axis),
        }
    }
}

impl From<SymmetrySpec> for RawSymmetry {
    fn from(s: SymmetrySpec) -> Self {
        RawSymmetry {
            kind: s.kind,
            n: s.n,
            axis: s.axis.to_array(),
        }
    }
}

fn check_axis(axis: Vec3) -> Result<Vec3> {
    if (axis.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "symmetry axis must be unit length, got norm {}",
            axis.norm()
        )));
    }
    Ok(axis)
}

impl SymmetrySpec {
    pub fn none() -> Self {
        SymmetrySpec {
            kind: SymmetryKind::None,
            n: 1,
            axis: Vec3::Z,
        }
    }

    pub fn circular(axis: Vec3) -> Result<Self> {
        Ok(SymmetrySpec {
            kind: SymmetryKind::Circular,
            n: 1,
            axis: check_axis(axis)?,
        })
    }

    pub fn n_fold(n: u32, axis: Vec3) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("n-fold symmetry needs n >= 2, got {n}")));
        }
        Ok(SymmetrySpec {
            kind: SymmetryKind::NFold,
            n,
            axis: check_axis(axis)?,
        })
    }

    pub fn kind(&self) -> SymmetryKind {
        self.kind
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn axis(&self) -> Vec3 {
        self.axis
    }
}

/// Rotation, translation and size of one object instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseRecord {
    pub rotation: RotationMatrix,
    pub translation: Vec3,
    size: Vec3,
    pub category: String,
    pub symmetry: SymmetrySpec,
}

impl PoseRecord {
    pub fn new(
        rotation: RotationMatrix,
        translation: Vec3,
        size: Vec3,
        category: impl Into<String>,
        symmetry: SymmetrySpec,
    ) -> Result<Self> {
        if !translation.is_finite() {
            return Err(Error::InvalidParameter("non-finite translation".into()));
        }
        check_extents(size)?;
        Ok(PoseRecord {
            rotation,
            translation,
            size,
            category: category.into(),
            symmetry,
        })
    }

    pub fn size(&self) -> Vec3 {
        self.size
    }

    pub fn set_size(&mut self, size: Vec3) -> Result<()> {
        self.size = check_extents(size)?;
        Ok(())
    }

    pub fn bounding_box(&self) -> OrientedBox {
        OrientedBox {
            rotation: self.rotation,
            center: self.translation,
            extents: self.size,
        }
    }
}

fn check_extents(e: Vec3) -> Result<Vec3> {
    if !(e.is_finite() && e.x > 0.0 && e.y > 0.0 && e.z > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "extents must be strictly positive, got {e:?}"
        )));
    }
    Ok(e)
}

/// Box with full side lengths `extents`, rotated by `rotation` about its `center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub rotation: RotationMatrix,
    pub center: Vec3,
    extents: Vec3,
}

impl OrientedBox {
    pub fn new(rotation: RotationMatrix, center: Vec3, extents: Vec3) -> Result<Self> {
        if !center.is_finite() {
            return Err(Error::InvalidParameter("non-finite box center".into()));
        }
        Ok(OrientedBox {
            rotation,
            center,
            extents: check_extents(extents)?,
        })
    }

    pub fn extents(&self) -> Vec3 {
        self.extents
    }

    pub fn volume(&self) -> f64 {
        self.extents.x * self.extents.y * self.extents.z
    }

    /// Whether `p` lies inside the closed box.
    pub fn contains(&self, p: Vec3) -> bool {
        let q = self.rotation.apply_transpose(p - self.center);
        let h = self.extents / 2.0;
        q.x.abs() <= h.x && q.y.abs() <= h.y && q.z.abs() <= h.z
    }
}

pub fn transform_points(cloud: &PointCloud, r: &RotationMatrix, t: Vec3) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("transform of empty cloud"));
    }
    Ok(cloud.map_points(|p| r.apply(p) + t))
}

/// `Rᵀ·(p − T)` for every point.
pub fn inverse_transform_points(
    cloud: &PointCloud,
    r: &RotationMatrix,
    t: Vec3,
) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("transform of empty cloud"));
    }
    Ok(cloud.map_points(|p| r.apply_transpose(p - t)))
}

/// Points within `radius` of `center` (boundary inclusive), labels carried along.
pub fn crop_sphere(cloud: &PointCloud, center: Vec3, radius: f64) -> Result<PointCloud> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "crop radius must be positive, got {radius}"
        )));
    }
    let r2 = radius * radius;
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| cloud.points[i].distance_squared(center) <= r2)
        .collect();
    let points = keep.iter().map(|&i| cloud.points[i]).collect();
    Ok(match cloud.labels() {
        Some(l) => PointCloud {
            points,
            labels: Some(keep.iter().map(|&i| l[i]).collect()),
        },
        None => PointCloud::new(points),
    })
}

/// Indices of the `k` nearest points to `points[query]`, excluding the query itself.
///
/// Sorted by distance, ties broken by the smaller index.
pub fn k_nearest_neighbors(points: &[Vec3], query: usize, k: usize) -> Result<Vec<usize>> {
    if query >= points.len() {
        return Err(Error::InvalidParameter(format!(
            "query index {query} out of range for {} points",
            points.len()
        )));
    }
    if k == 0 || k + 1 > points.len() {
        return Err(Error::InvalidParameter(format!(
            "k = {k} must be in 1..={}",
            points.len().saturating_sub(1)
        )));
    }
    let q = points[query];
    let mut cand: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != query)
        .map(|(i, p)| (p.distance_squared(q), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    Ok(cand.into_iter().map(|(_, i)| i).collect())
}

/// The 8 corners of `b`.
///
/// Corner `i` takes the sign of each half-extent from bit `i & 1` (x), `i & 2` (y) and
/// `i & 4` (z), a set bit meaning `+`. Corner 0 is `(-,-,-)`, corner 7 is `(+,+,+)`.
pub fn oriented_box_corners(b: &OrientedBox) -> [Vec3; 8] {
    let h = b.extents / 2.0;
    std::array::from_fn(|i| {
        let sign = |bit: usize| if i & bit != 0 { 1.0 } else { -1.0 };
        let local = Vec3::new(sign(1) * h.x, sign(2) * h.y, sign(4) * h.z);
        b.center + b.rotation.apply(local)
    })
}

/// Geodesic angle between two rotations in degrees, in `[0, 180]`.
pub fn geodesic_rotation_distance(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    // ‖A − B‖²_F = 8 sin²(θ/2); acos of the trace is ill-conditioned near zero.
    let d2: f64 = a.m.iter().zip(&b.m).map(|(x, y)| (x - y) * (x - y)).sum();
    let s = (d2 / 8.0).sqrt();
    if s < 0.7 {
        return (2.0 * s.asin()).to_degrees();
    }
    // trace(AᵀB) = Σ A_ij B_ij
    let tr: f64 = a.m.iter().zip(&b.m).map(|(x, y)| x * y).sum();
    ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
}
