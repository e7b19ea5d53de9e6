use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::io::{read_pointcloud, read_poses, write_pointcloud, write_poses, PoseEntry, Sample};

pub const DATASET_FORMAT: &str = "posekit-dataset/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub category: String,
    /// Labelled scene cloud, relative to the dataset directory.
    pub cloud: String,
    /// Complete-surface points, relative to the dataset directory.
    pub complete: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub seed: u64,
    pub samples: Vec<ManifestEntry>,
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Ids become file names, so they are kept to a safe alphabet.
fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.');
    if ok && !id.starts_with('.') {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("id `{id}` is not usable as a file name")))
    }
}

/// Writes the samples under `dir` and returns the manifest.
pub fn write_dataset(samples: &[Sample], seed: u64, dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    create_dir(&dir.join("clouds"))?;
    create_dir(&dir.join("complete"))?;
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        check_id(&s.id)?;
        if !seen.insert(s.id.as_str()) {
            return Err(Error::DuplicateId(s.id.clone()));
        }
        let entry = ManifestEntry {
            id: s.id.clone(),
            category: s.pose.category.clone(),
            cloud: format!("clouds/{}.ply", s.id),
            complete: format!("complete/{}.xyz", s.id),
        };
        write_pointcloud(&s.cloud, dir.join(&entry.cloud))?;
        write_pointcloud(&PointCloud::new(s.complete.clone()), dir.join(&entry.complete))?;
        entries.push(entry);
    }
    let poses: Vec<PoseEntry> = samples.iter().map(|s| PoseEntry { id: s.id.clone(), pose: s.pose.clone() }).collect();
    write_poses(&poses, dir.join("poses.json"))?;
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.to_string(),
        seed,
        samples: entries,
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

/// Reads a directory written by [`write_dataset`], in manifest order.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<(DatasetManifest, Vec<Sample>)> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.line(), e.to_string()))?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::parse(&path, 0, format!("unsupported format `{}`", manifest.format)));
    }
    let mut poses: HashMap<String, PoseEntry> =
        read_poses(dir.join("poses.json"))?.into_iter().map(|e| (e.id.clone(), e)).collect();
    let samples = manifest
        .samples
        .iter()
        .map(|m| {
            check_id(&m.id)?;
            let pose = poses
                .remove(&m.id)
                .ok_or_else(|| Error::parse(&path, 0, format!("no pose for `{}`", m.id)))?
                .pose;
            if pose.category != m.category {
                return Err(Error::CategoryMismatch {
                    pred: m.category.clone(),
                    gt: pose.category,
                });
            }
            let cloud = read_pointcloud(resolve(dir, &m.cloud)?)?;
            let complete = read_pointcloud(resolve(dir, &m.complete)?)?.points;
            Ok(Sample {
                id: m.id.clone(),
                cloud,
                pose,
                complete,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}

/// Manifest paths must stay inside the dataset directory.
fn resolve(dir: &Path, rel: &str) -> Result<PathBuf> {
    let p = Path::new(rel);
    if p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        return Err(Error::InvalidParameter(format!("manifest path `{rel}` leaves the dataset directory")));
    }
    Ok(dir.join(p))
}
