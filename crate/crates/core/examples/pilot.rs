//! Trains the toy network on synthetic data and prints held-out metrics.
//!
//! cargo run --release --example pilot -- [seed] [train] [test] [epochs] [augment]

use std::time::Instant;

use posekit::deform::DeformationRanges;
use posekit::io::{generate_dataset, DatasetOptions, PoseEntry};
use posekit::metrics::{evaluate, EvalOptions};
use posekit::nets::{predict_pose, train_toy, LossWeights, TrainConfig};

fn main() -> posekit::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: u64| args.get(i).map_or(d, |s| s.parse().expect("integer argument"));
    let seed = arg(0, 7);
    let augment = arg(4, 0) != 0;
    let train = generate_dataset(&DatasetOptions {
        count: arg(1, 500) as usize,
        seed,
        ..DatasetOptions::default()
    })?;
    let test = generate_dataset(&DatasetOptions {
        count: arg(2, 200) as usize,
        seed: seed + 1000,
        ..DatasetOptions::default()
    })?;
    let env = |k: &str, d: usize| std::env::var(k).ok().map_or(d, |v| v.parse().expect("integer"));
    let cfg = TrainConfig {
        epochs: arg(3, 20) as usize,
        seed,
        batch_size: env("BATCH", 1),
        model: Some(posekit::nets::ModelConfig {
            conv1_channels: env("C1", 8),
            kernel_size: env("KS", 3),
            conv2_channels: env("LAT", 32),
            n_neighbors: env("NN", 8),
            rot_hidden: env("RH", 128),
            ..posekit::nets::ModelConfig::new(3)
        }),
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let fenv = |k: &str, d: f64| std::env::var(k).ok().map_or(d, |v| v.parse().expect("number"));
    let weights = LossWeights {
        lambda_rot: fenv("LROT", 0.001),
        lambda_seg: fenv("LSEG", 0.001),
        ..LossWeights::default()
    };
    let out = train_toy(&train, &cfg, &weights, augment)?;
    eprintln!("trained in {:.1}s", start.elapsed().as_secs_f64());
    eprintln!("initial {:?} total {:.5}", out.initial.parts, out.initial.total);
    for e in &out.log {
        eprintln!("epoch {:2} lr {:.5} {:?} total {:.5}", e.epoch, e.lr, e.parts, e.total);
    }
    let deformed = generate_dataset(&DatasetOptions {
        count: arg(2, 200) as usize,
        seed: seed + 2000,
        deformation: Some(DeformationRanges::default()),
        ..DatasetOptions::default()
    })?;
    let ck = &out.checkpoint;
    for (name, split) in [("held-out", &test), ("deformed", &deformed)] {
        let mut preds = Vec::new();
        for s in split {
            let idx = ck.category_index(&s.pose.category)?;
            match predict_pose(&ck.model, &s.cloud.points, &ck.categories[idx], idx) {
                Ok(p) => preds.push(PoseEntry { id: s.id.clone(), pose: p.pose }),
                Err(e) => eprintln!("{}: {e}", s.id),
            }
        }
        let gt: Vec<PoseEntry> = split.iter().map(|s| PoseEntry { id: s.id.clone(), pose: s.pose.clone() }).collect();
        let report = evaluate(&preds, &gt, &EvalOptions::default())?;
        println!("{name}: {} predictions", preds.len());
        print!("{}", report.to_table());
    }
    eprintln!("total {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
