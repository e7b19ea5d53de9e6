//! File formats and synthetic data.
//!
//! * Point clouds: ASCII PLY (`x y z [label]`) or whitespace-separated XYZ text,
//!   chosen by the `.ply` / `.xyz` extension.
//! * Poses: a JSON array of records with exactly the keys `id`, `category`,
//!   `rotation` (9 numbers, row-major), `translation` (3), `size` (3) and
//!   `symmetry` (`{kind, n, axis}`).
//! * Synthetic labelled partial-view samples of simple shapes.
//! * Dataset directories: `manifest.json`, `poses.json`, `clouds/<id>.ply` and
//!   `complete/<id>.xyz`.

mod dataset;
mod pointcloud;
mod poses;
mod synthetic;

pub use dataset::{read_dataset, write_dataset, DatasetManifest, ManifestEntry, DATASET_FORMAT};
pub use pointcloud::{read_pointcloud, write_pointcloud};
pub use poses::{nearest_rotation, parse_poses, poses_to_json, read_poses, validate_rotation, write_poses, PoseEntry};
pub use synthetic::{
    generate_dataset, generate_synthetic_sample, sample_surface, Category, DatasetOptions, Sample,
    ShapeBase, SyntheticShapeSpec,
};
