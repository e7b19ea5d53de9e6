//! The `posekit` command line.
//!
//! Exit codes: 0 success, 2 input error (bad flags, unreadable or malformed
//! files), 3 numerical failure (degenerate vectors, empty segmentation,
//! diverged training).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::deform::{deform_in_scene, sample_deformation, BoxCage, DeformationRanges, DeformationSpec};
use crate::error::{Error, Result};
use crate::geom::{geodesic_rotation_distance, RotationMatrix, SymmetrySpec, Vec3};
use crate::io::{
    generate_dataset, read_dataset, read_pointcloud, read_poses, validate_rotation, write_dataset,
    write_pointcloud, write_poses, Category, DatasetOptions, PoseEntry, ShapeBase,
};
use crate::metrics::{evaluate_files, EvalOptions, DEFAULT_IOU_RESOLUTION};
use crate::nets::{predict_pose, train_log_csv, train_toy, Checkpoint, LossWeights, TrainConfig};
use crate::rotation::{canonical_group_index, canonicalize_rotation, vectors_from_rotation};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

const EXIT_HELP: &str = "Exit codes: 0 success, 2 input error, 3 numerical failure.";

#[derive(Debug, Parser)]
#[command(name = "posekit", version, about = "Category-level 6D pose toolkit", after_help = EXIT_HELP)]
pub struct Cli {
    /// Seed for every random choice; falls back to POSEKIT_SEED.
    #[arg(long, global = true, env = "POSEKIT_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for training; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score predicted poses against ground truth.
    Eval(EvalArgs),
    /// Apply a box-cage deformation to a labelled cloud.
    Augment(AugmentArgs),
    /// Map a rotation to the representative of its symmetry group.
    Canonicalize(CanonicalizeArgs),
    /// Write a synthetic dataset directory.
    GenSynthetic(GenArgs),
    /// Train the toy network on a dataset directory.
    Train(TrainArgs),
    /// Predict poses for a dataset directory.
    Infer(InferArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Report CSV to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_IOU_RESOLUTION)]
    pub iou_res: usize,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Labelled input cloud (.ply or .xyz).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Pose file holding the object's ground truth.
    #[arg(long)]
    pub pose: PathBuf,
    /// Record to use when the pose file holds several.
    #[arg(long)]
    pub id: Option<String>,
    /// Deformation spec as JSON: {"scale": [x, y, z], "taper_axis": "x"|"z"|null, "taper_factor": n}.
    #[arg(long, conflicts_with = "random", required_unless_present = "random")]
    pub spec: Option<PathBuf>,
    /// Draw the deformation from the default ranges using --seed.
    #[arg(long)]
    pub random: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the updated pose; defaults to the output cloud path with a .json extension.
    #[arg(long)]
    pub pose_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CanonicalizeArgs {
    /// Nine numbers, row-major, separated by spaces or commas.
    #[arg(long, allow_hyphen_values = true)]
    pub rotation: String,
    /// none, circular[:axis] or n_fold:n[:axis], with axis x, y or z (default z).
    #[arg(long, default_value = "none")]
    pub symmetry: String,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub count: usize,
    /// Shape bases to cycle through.
    #[arg(long, value_delimiter = ',', default_value = "box,cylinder,tapered_box")]
    pub base: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Deform every sample with factors from the default ranges.
    #[arg(long)]
    pub deform: bool,
    /// Object points per sample.
    #[arg(long, default_value_t = 128)]
    pub points: usize,
    /// Clutter points per sample.
    #[arg(long, default_value_t = 32)]
    pub background: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON training config; every key is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Loss log CSV; defaults to the checkpoint path with a .csv extension.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Apply online box-cage deformation.
    #[arg(long)]
    pub augment: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Predicted pose file.
    #[arg(long)]
    pub out: PathBuf,
}

/// Contents of a training config file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainFile {
    pub train: TrainConfig,
    pub weights: LossWeights,
}

impl TrainFile {
    pub fn read(path: &Path) -> Result<TrainFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }
}

/// Parses the arguments and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                EXIT_INPUT
            } else {
                EXIT_NUMERICAL
            }
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::InvalidParameter("--threads must be at least 1".into()));
    }
    match &cli.command {
        Command::Eval(a) => cmd_eval(a),
        Command::Augment(a) => cmd_augment(cli, a),
        Command::Canonicalize(a) => cmd_canonicalize(a),
        Command::GenSynthetic(a) => cmd_gen_synthetic(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Infer(a) => cmd_infer(cli, a),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let options = EvalOptions {
        iou_resolution: a.iou_res,
        ..EvalOptions::default()
    };
    let report = evaluate_files(&a.pred, &a.gt, &options)?;
    if let Some(out) = &a.out {
        write_file(out, &report.to_csv())?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn select_pose(entries: Vec<PoseEntry>, id: Option<&str>, path: &Path) -> Result<PoseEntry> {
    match id {
        Some(id) => entries
            .into_iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::InvalidParameter(format!("{}: no record `{id}`", path.display()))),
        None if entries.len() == 1 => Ok(entries.into_iter().next().expect("one entry")),
        None => Err(Error::InvalidParameter(format!(
            "{} holds {} records; pick one with --id",
            path.display(),
            entries.len()
        ))),
    }
}

fn cmd_augment(cli: &Cli, a: &AugmentArgs) -> Result<()> {
    let cloud = read_pointcloud(&a.input)?;
    if cloud.labels().is_none() {
        return Err(Error::LabelRequired);
    }
    let mut entry = select_pose(read_poses(&a.pose)?, a.id.as_deref(), &a.pose)?;
    let spec: DeformationSpec = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?
        }
        None => sample_deformation(
            &mut ChaCha8Rng::seed_from_u64(cli.seed.unwrap_or(0)),
            &DeformationRanges::default(),
        )?,
    };
    let cage = BoxCage::new(entry.pose.size())?;
    let (deformed, size) = deform_in_scene(&cloud, &entry.pose, &cage, &spec)?;
    entry.pose.set_size(size)?;
    write_pointcloud(&deformed, &a.out)?;
    let pose_out = a.pose_out.clone().unwrap_or_else(|| a.out.with_extension("json"));
    write_poses(std::slice::from_ref(&entry), &pose_out)?;
    if cli.verbose {
        eprintln!("deformation {}", serde_json::to_string(&spec).expect("spec serializes"));
    }
    Ok(())
}

fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("`{t}` is not a number")))
        })
        .collect()
}

fn parse_axis(s: &str) -> Result<Vec3> {
    match s {
        "x" => Ok(Vec3::X),
        "y" => Ok(Vec3::Y),
        "z" => Ok(Vec3::Z),
        _ => Err(Error::InvalidParameter(format!("axis must be x, y or z, got `{s}`"))),
    }
}

/// Parses `none`, `circular[:axis]` or `n_fold:n[:axis]`.
pub fn parse_symmetry(s: &str) -> Result<SymmetrySpec> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::InvalidParameter(format!("cannot parse symmetry `{s}`"));
    match parts.as_slice() {
        ["none"] => Ok(SymmetrySpec::none()),
        ["circular"] => SymmetrySpec::circular(Vec3::Z),
        ["circular", axis] => SymmetrySpec::circular(parse_axis(axis)?),
        ["n_fold" | "nfold", n, rest @ ..] if rest.len() <= 1 => {
            let n: u32 = n.parse().map_err(|_| bad())?;
            let axis = rest.first().map_or(Ok(Vec3::Z), |a| parse_axis(a))?;
            SymmetrySpec::n_fold(n, axis)
        }
        _ => Err(bad()),
    }
}

/// Fixed-point text without negative zeros.
fn fmt_num(v: f64) -> String {
    let s = format!("{v:.9}");
    if s.trim_start_matches('-').bytes().all(|b| b == b'0' || b == b'.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn fmt_vec(v: Vec3) -> String {
    [v.x, v.y, v.z].map(fmt_num).join(" ")
}

fn cmd_canonicalize(a: &CanonicalizeArgs) -> Result<()> {
    let values = parse_floats(&a.rotation)?;
    let m: [f64; 9] = values
        .as_slice()
        .try_into()
        .map_err(|_| Error::InvalidParameter(format!("--rotation needs 9 numbers, got {}", values.len())))?;
    let r = validate_rotation(&m)?;
    let sym = parse_symmetry(&a.symmetry)?;
    let canon = canonicalize_rotation(&r, &sym);
    let m = canon.as_array();
    println!("rotation {}", m.map(fmt_num).join(" "));
    if let Ok(index) = canonical_group_index(&r, &sym) {
        println!("group_index {index}");
    }
    let vectors = vectors_from_rotation(&canon);
    println!("v1 {}", fmt_vec(vectors.v1()));
    println!("v2 {}", fmt_vec(vectors.v2()));
    println!(
        "distance_to_identity_deg {}",
        fmt_num(geodesic_rotation_distance(&canon, &RotationMatrix::IDENTITY))
    );
    Ok(())
}

fn cmd_gen_synthetic(cli: &Cli, a: &GenArgs) -> Result<()> {
    let categories = a
        .base
        .iter()
        .map(|b| ShapeBase::parse(b).map(Category::for_base))
        .collect::<Result<Vec<_>>>()?;
    let seed = cli.seed.unwrap_or(0);
    let samples = generate_dataset(&DatasetOptions {
        count: a.count,
        categories,
        points_per_sample: a.points,
        background_points: a.background,
        deformation: a.deform.then(DeformationRanges::default),
        seed,
        ..DatasetOptions::default()
    })?;
    write_dataset(&samples, seed, &a.out)?;
    if cli.verbose {
        eprintln!("wrote {} samples to {}", samples.len(), a.out.display());
    }
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let file = match &a.config {
        Some(path) => TrainFile::read(path)?,
        None => TrainFile::default(),
    };
    let mut cfg = file.train;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.threads = cli.threads;
    let (_, samples) = read_dataset(&a.data)?;
    let outcome = train_toy(&samples, &cfg, &file.weights, a.augment)?;
    if cli.verbose {
        eprintln!("initial loss {:.6}", outcome.initial.total);
        for e in &outcome.log {
            eprintln!("epoch {} lr {} loss {:.6}", e.epoch, e.lr, e.total);
        }
    }
    outcome.checkpoint.save(&a.checkpoint)?;
    let log = a.log.clone().unwrap_or_else(|| a.checkpoint.with_extension("csv"));
    write_file(&log, &train_log_csv(&outcome.log))
}

fn cmd_infer(cli: &Cli, a: &InferArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&a.checkpoint)?;
    let (_, samples) = read_dataset(&a.data)?;
    let mut preds = Vec::with_capacity(samples.len());
    let mut failures = 0;
    for s in &samples {
        let index = checkpoint.category_index(&s.pose.category)?;
        match predict_pose(&checkpoint.model, &s.cloud.points, &checkpoint.categories[index], index) {
            Ok(p) => {
                if p.degenerate_rotation && cli.verbose {
                    eprintln!("{}: parallel rotation vectors, recovered from v1 only", s.id);
                }
                preds.push(PoseEntry { id: s.id.clone(), pose: p.pose });
            }
            Err(e) if !e.is_input_error() => {
                failures += 1;
                eprintln!("{}: {e}", s.id);
            }
            Err(e) => return Err(e),
        }
    }
    if preds.is_empty() && failures > 0 {
        return Err(Error::State("no instance could be predicted"));
    }
    if failures > 0 {
        eprintln!("{failures} of {} instances had no prediction", samples.len());
    }
    write_poses(&preds, &a.out)
}
