//! Steering-error metrics on a held-out set: MSE, the least-squares fit
//! between predictions and ground truth, and the exported time series.
//!
//! Run with: cargo run --release --example evaluate_checkpoint -- [out_dir]

use std::path::PathBuf;

use steerlab::autodiff::Activation;
use steerlab::dataset::{load_frames, synth_generate, Handedness, SyntheticConfig};
use steerlab::evaluation::{export_timeseries, linear_fit, mse, predict_frames};
use steerlab::models::build_pilotnet;
use steerlab::training::{train, TrainingConfig};

fn main() -> steerlab::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("steerlab_eval_demo"));

    let config = SyntheticConfig {
        image_size: (320, 200),
        ..SyntheticConfig::new(Handedness::Right, 240, 17)
    };
    let manifest = synth_generate(&config, &out)?;
    let frames = load_frames(&manifest, &out.join("manifest.jsonl"), false)?;
    let (train_set, test_set) = frames.split_at(200);

    eprintln!("training a small model ({} frames)...", train_set.len());
    let cfg = TrainingConfig {
        epochs: 10,
        ..TrainingConfig::desk_pretrain(1)
    };
    let result = train(build_pilotnet(1, Activation::Elu), train_set, test_set, &cfg)?;
    println!(
        "val mse per epoch: {:?}",
        result
            .val_mse
            .iter()
            .map(|v| (v * 100.0).round() / 100.0)
            .collect::<Vec<_>>()
    );

    let (truth, pred) = predict_frames(&result.params, test_set)?;
    let (slope, bias, r) = linear_fit(&truth, &pred)?;
    println!(
        "test: mse {:.2} deg^2 | fit pred = {slope:.3} * truth {bias:+.3} | r = {r:.3}",
        mse(&truth, &pred)?
    );

    let csv = out.join("timeseries.csv");
    export_timeseries(&truth, &pred, &csv)?;
    println!("per-frame series -> {}", csv.display());
    Ok(())
}
