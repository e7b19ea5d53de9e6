use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{det3, orthonormality_error, PoseRecord, RotationMatrix, SymmetrySpec, Vec3};

/// Looser inputs than this are rejected rather than repaired.
const REPAIR_TOLERANCE: f64 = 1e-4;

/// A pose record with its identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEntry {
    pub id: String,
    pub pose: PoseRecord,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseJson {
    id: String,
    category: String,
    rotation: [f64; 9],
    translation: [f64; 3],
    size: [f64; 3],
    symmetry: SymmetrySpec,
}

/// Nearest proper rotation to `m` (polar factor), by Newton iteration `X ← (X + X⁻ᵀ)/2`.
pub fn nearest_rotation(m: &[f64; 9]) -> Result<RotationMatrix> {
    let mut x = *m;
    for _ in 0..100 {
        let det = det3(&x);
        if !(det > 0.0) {
            return Err(Error::InvalidRotation(format!("determinant {det} is not positive")));
        }
        // X⁻ᵀ = cofactor(X) / det
        let cof = [
            x[4] * x[8] - x[5] * x[7],
            x[5] * x[6] - x[3] * x[8],
            x[3] * x[7] - x[4] * x[6],
            x[2] * x[7] - x[1] * x[8],
            x[0] * x[8] - x[2] * x[6],
            x[1] * x[6] - x[0] * x[7],
            x[1] * x[5] - x[2] * x[4],
            x[2] * x[3] - x[0] * x[5],
            x[0] * x[4] - x[1] * x[3],
        ];
        let next: [f64; 9] = std::array::from_fn(|i| 0.5 * (x[i] + cof[i] / det));
        let change = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = next;
        if change < 1e-15 {
            break;
        }
    }
    RotationMatrix::new(x)
}

/// Accepts a row-major rotation as is; a matrix that is a rotation only up to
/// small noise is replaced by the nearest exact rotation. Reflections are rejected.
pub fn validate_rotation(m: &[f64; 9]) -> Result<RotationMatrix> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidRotation("non-finite entry".into()));
    }
    let det = det3(m);
    if det < 0.0 {
        return Err(Error::InvalidRotation(format!("determinant {det:.6} < 0 (reflection)")));
    }
    if let Ok(r) = RotationMatrix::new(*m) {
        return Ok(r);
    }
    let err = orthonormality_error(m);
    if err > REPAIR_TOLERANCE {
        return Err(Error::InvalidRotation(format!(
            "|RᵀR - I|∞ = {err:.3e} exceeds {REPAIR_TOLERANCE:e}"
        )));
    }
    nearest_rotation(m)
}

fn finite3(v: [f64; 3], what: &str) -> Result<Vec3> {
    Vec3::try_new(v[0], v[1], v[2]).map_err(|_| Error::InvalidParameter(format!("non-finite {what}")))
}

/// Parses the JSON pose dialect; `origin` is only used in error messages.
pub fn parse_poses(text: &str, origin: &Path) -> Result<Vec<PoseEntry>> {
    let raw: Vec<PoseJson> = serde_json::from_str(text).map_err(|e| Error::parse(origin, e.line(), e.to_string()))?;
    let mut seen = HashSet::new();
    raw.into_iter()
        .map(|r| {
            if !seen.insert(r.id.clone()) {
                return Err(Error::DuplicateId(r.id));
            }
            let pose = PoseRecord::new(
                validate_rotation(&r.rotation)?,
                finite3(r.translation, "translation")?,
                finite3(r.size, "size")?,
                r.category,
                r.symmetry,
            )?;
            Ok(PoseEntry { id: r.id, pose })
        })
        .collect()
}

pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<PoseEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text, path)
}

pub fn poses_to_json(entries: &[PoseEntry]) -> Result<String> {
    let mut seen = HashSet::new();
    let raw: Vec<PoseJson> = entries
        .iter()
        .map(|e| {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
            Ok(PoseJson {
                id: e.id.clone(),
                category: e.pose.category.clone(),
                rotation: *e.pose.rotation.as_array(),
                translation: e.pose.translation.to_array(),
                size: e.pose.size().to_array(),
                symmetry: e.pose.symmetry,
            })
        })
        .collect::<Result<_>>()?;
    let mut s = serde_json::to_string_pretty(&raw).expect("pose records serialize");
    s.push('\n');
    Ok(s)
}

pub fn write_poses(entries: &[PoseEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, poses_to_json(entries)?).map_err(|e| Error::io(path, e))
}
