//! Two-vector rotation representation and symmetry handling.
//!
//! A rotation `R` is encoded by `v1 = R·e_z` (the symmetry / "up" axis) and
//! `v2 = R·e_x`. For circularly symmetric objects only `v1` is observable, so the
//! loss weight on `v2` is zero. Objects with a finite rotational symmetry are
//! handled by mapping every ambiguous rotation onto the group member closest
//! to the identity before encoding.

use crate::error::{Error, Result};
use crate::geom::{geodesic_rotation_distance, RotationMatrix, SymmetryKind, SymmetrySpec, Vec3};

/// Minimum norm accepted for a raw predicted vector.
const MIN_VECTOR_NORM: f64 = 1e-6;
/// Minimum angle (radians) between the two raw vectors.
const MIN_PAIR_ANGLE: f64 = 1e-3;

/// Pair of perpendicular unit vectors encoding a rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoupledRotation {
    v1: Vec3,
    v2: Vec3,
}

impl DecoupledRotation {
    pub fn new(v1: Vec3, v2: Vec3) -> Result<Self> {
        let unit = |v: Vec3| (v.norm() - 1.0).abs() <= 1e-9;
        if !(unit(v1) && unit(v2) && v1.dot(v2).abs() <= 1e-9) {
            return Err(Error::InvalidParameter(
                "decoupled rotation needs two perpendicular unit vectors".into(),
            ));
        }
        Ok(DecoupledRotation { v1, v2 })
    }

    /// Image of the canonical `+Z` axis.
    pub fn v1(&self) -> Vec3 {
        self.v1
    }

    /// Image of the canonical `+X` axis.
    pub fn v2(&self) -> Vec3 {
        self.v2
    }
}

/// Balance parameter `λ_r` of the two cosine terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationLossConfig {
    lambda_r: f64,
}

impl Default for RotationLossConfig {
    fn default() -> Self {
        RotationLossConfig { lambda_r: 1.0 }
    }
}

impl RotationLossConfig {
    pub fn new(lambda_r: f64) -> Result<Self> {
        if !(lambda_r >= 0.0 && lambda_r.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda_r must be >= 0, got {lambda_r}")));
        }
        Ok(RotationLossConfig { lambda_r })
    }

    /// `λ_r = 0` for circular symmetry, `default_lambda` otherwise.
    pub fn for_symmetry(sym: &SymmetrySpec, default_lambda: f64) -> Result<Self> {
        match sym.kind() {
            SymmetryKind::Circular => Ok(RotationLossConfig { lambda_r: 0.0 }),
            _ => Self::new(default_lambda),
        }
    }

    pub fn lambda_r(&self) -> f64 {
        self.lambda_r
    }
}

pub fn vectors_from_rotation(r: &RotationMatrix) -> DecoupledRotation {
    DecoupledRotation {
        v1: r.col(2),
        v2: r.col(0),
    }
}

/// Gram-Schmidt with `v1` trusted and `v2` corrected; columns are `[b, a×b, a]`.
pub fn rotation_from_vectors(v1_raw: Vec3, v2_raw: Vec3) -> Result<RotationMatrix> {
    if !(v1_raw.is_finite() && v2_raw.is_finite()) {
        return Err(Error::DegenerateVectors("non-finite vector"));
    }
    let n1 = v1_raw.norm();
    let n2 = v2_raw.norm();
    if n1 <= MIN_VECTOR_NORM || n2 <= MIN_VECTOR_NORM {
        return Err(Error::DegenerateVectors("zero-length vector"));
    }
    let a = v1_raw / n1;
    let sin = a.cross(v2_raw / n2).norm();
    if sin.asin() <= MIN_PAIR_ANGLE {
        return Err(Error::DegenerateVectors("parallel vectors"));
    }
    let b = (v2_raw - a * v2_raw.dot(a))
        .normalized()
        .ok_or(Error::DegenerateVectors("parallel vectors"))?;
    let c = a.cross(b);
    Ok(RotationMatrix::from_columns_unchecked(b, c, a))
}

/// Rotation with `R·e_z = v1` and an arbitrary but deterministic spin.
///
/// Used when only the symmetry axis is meaningful.
pub fn rotation_from_axis(v1_raw: Vec3) -> Result<RotationMatrix> {
    let a = v1_raw
        .normalized()
        .filter(|_| v1_raw.norm() > MIN_VECTOR_NORM)
        .ok_or(Error::DegenerateVectors("zero-length vector"))?;
    let helper = if a.x.abs() < 0.9 { Vec3::X } else { Vec3::Y };
    rotation_from_vectors(a, helper)
}

/// Value and gradients of the cosine-similarity rotation loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationLoss {
    /// Similarity `cos(p1, v1) + λ_r·cos(p2, v2)`, in `[-(1+λ_r), 1+λ_r]`.
    pub similarity: f64,
    /// Minimized objective `(1 + λ_r) − similarity`.
    pub objective: f64,
    /// d objective / d p1.
    pub grad_p1: Vec3,
    /// d objective / d p2.
    pub grad_p2: Vec3,
}

fn cosine_with_grad(p: Vec3, v: Vec3) -> (f64, Vec3) {
    let np = p.norm();
    let nv = v.norm();
    let c = p.dot(v) / (np * nv);
    // d/dp of <p,v>/(|p||v|) = v/(|p||v|) - c p/|p|^2
    let g = v / (np * nv) - p * (c / (np * np));
    (c, g)
}

pub fn rotation_vector_loss(
    pred: (Vec3, Vec3),
    gt: &DecoupledRotation,
    cfg: &RotationLossConfig,
) -> Result<RotationLoss> {
    let (p1, p2) = pred;
    if !(p1.norm() > 0.0 && p1.is_finite()) {
        return Err(Error::DegenerateVectors("zero-norm predicted v1"));
    }
    let lambda = cfg.lambda_r;
    let (c1, g1) = cosine_with_grad(p1, gt.v1);
    let (c2, g2) = if lambda == 0.0 {
        (0.0, Vec3::ZERO)
    } else {
        if !(p2.norm() > 0.0 && p2.is_finite()) {
            return Err(Error::DegenerateVectors("zero-norm predicted v2"));
        }
        cosine_with_grad(p2, gt.v2)
    };
    let similarity = c1 + lambda * c2;
    Ok(RotationLoss {
        similarity,
        objective: (1.0 + lambda) - similarity,
        grad_p1: -g1,
        grad_p2: g2 * -lambda,
    })
}

/// `R·Rot(axis, k·360°/n)` for `k = 0..n`; a singleton for no symmetry.
pub fn symmetry_group(r: &RotationMatrix, sym: &SymmetrySpec) -> Result<Vec<RotationMatrix>> {
    match sym.kind() {
        SymmetryKind::None => Ok(vec![*r]),
        SymmetryKind::Circular => Err(Error::UnsupportedForFiniteGroup),
        SymmetryKind::NFold => {
            let n = sym.n();
            (0..n)
                .map(|k| {
                    let angle = std::f64::consts::TAU * k as f64 / n as f64;
                    Ok(*r * RotationMatrix::from_axis_angle(sym.axis(), angle)?)
                })
                .collect()
        }
    }
}

/// Index of the group member closest to the identity (smallest index on ties).
pub fn canonical_group_index(r: &RotationMatrix, sym: &SymmetrySpec) -> Result<usize> {
    let group = symmetry_group(r, sym)?;
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, g) in group.iter().enumerate() {
        let d = geodesic_rotation_distance(g, &RotationMatrix::IDENTITY);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    Ok(best)
}

/// Smallest rotation taking unit vector `from` onto unit vector `to`.
fn minimal_alignment(from: Vec3, to: Vec3) -> RotationMatrix {
    let c = from.dot(to).clamp(-1.0, 1.0);
    let axis = from.cross(to);
    let s = axis.norm();
    if s < 1e-12 {
        if c > 0.0 {
            return RotationMatrix::IDENTITY;
        }
        // Antipodal: half-turn about a fixed axis perpendicular to `from`.
        let helper = if from.x.abs() < 0.9 { Vec3::X } else { Vec3::Y };
        let perp = (helper - from * helper.dot(from)).normalized().unwrap_or(Vec3::X);
        return RotationMatrix::from_axis_angle(perp, std::f64::consts::PI)
            .unwrap_or(RotationMatrix::IDENTITY);
    }
    RotationMatrix::from_axis_angle(axis, s.atan2(c)).unwrap_or(RotationMatrix::IDENTITY)
}

/// Unique representative of `r` under the object's symmetry.
///
/// * none: `r` itself.
/// * n-fold: the member of [`symmetry_group`] nearest to the identity.
/// * circular: the minimal rotation taking the symmetry axis onto `r·axis`, which
///   removes all spin about the axis.
pub fn canonicalize_rotation(r: &RotationMatrix, sym: &SymmetrySpec) -> RotationMatrix {
    match sym.kind() {
        SymmetryKind::None => *r,
        SymmetryKind::Circular => minimal_alignment(sym.axis(), r.apply(sym.axis())),
        SymmetryKind::NFold => {
            let group = symmetry_group(r, sym).expect("n-fold group is finite");
            let k = canonical_group_index(r, sym).expect("n-fold group is finite");
            group[k]
        }
    }
}

/// Rotation error in degrees that ignores differences explained by the symmetry of `gt`.
pub fn symmetry_aware_rotation_error(
    pred: &RotationMatrix,
    gt: &RotationMatrix,
    sym: &SymmetrySpec,
) -> f64 {
    match sym.kind() {
        SymmetryKind::None => geodesic_rotation_distance(pred, gt),
        SymmetryKind::Circular => {
            let a = pred.apply(sym.axis());
            let b = gt.apply(sym.axis());
            a.cross(b).norm().atan2(a.dot(b)).to_degrees()
        }
        SymmetryKind::NFold => symmetry_group(gt, sym)
            .expect("n-fold group is finite")
            .iter()
            .map(|g| geodesic_rotation_distance(pred, g))
            .fold(f64::INFINITY, f64::min),
    }
}
