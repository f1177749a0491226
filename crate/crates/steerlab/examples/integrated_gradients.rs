//! Integrated-gradients attribution on a steering model: completeness
//! check, mean saliency map export, and the left/center/right spread.
//!
//! Run with: cargo run --release --example integrated_gradients -- [out_dir]

use std::path::PathBuf;

use steerlab::dataset::{load_frames, synth_generate, Handedness, SyntheticConfig};
use steerlab::imaging::ModelInput;
use steerlab::models::{build_pilotnet, forward};
use steerlab::saliency::{
    aggregate_spread, export_saliency_pgm, integrated_gradients, mean_saliency, reduce_channels,
    SaliencyConfig,
};
use steerlab::autodiff::Activation;

fn main() -> steerlab::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("steerlab_ig_demo"));

    let config = SyntheticConfig {
        image_size: (320, 200),
        ..SyntheticConfig::new(Handedness::Left, 24, 5)
    };
    let manifest = synth_generate(&config, &out)?;
    let manifest_path = out.join("manifest.jsonl");

    // An untrained model still attributes; training sharpens the map.
    let model = build_pilotnet(3, Activation::Elu);
    let frames = load_frames(&manifest, &manifest_path, false)?;

    // Completeness: attributions sum to F(x) - F(baseline).
    let x = &frames[0].input;
    let baseline = ModelInput::black();
    let attr = integrated_gradients(&model, x, &baseline, 256)?;
    let total: f64 = attr.data().iter().map(|&v| v as f64).sum();
    let delta = forward(&model, x)? as f64 - forward(&model, &baseline)? as f64;
    println!("sum of attributions {total:+.5}  vs  F(x) - F(baseline) {delta:+.5}");

    let map = reduce_channels(&attr)?;
    let peak = map.values.iter().cloned().fold(0.0f32, f32::max);
    println!("single-frame attribution peak magnitude {peak:.3e}");

    let mean = mean_saliency(&model, &manifest, &manifest_path, 12, 0, 32)?;
    export_saliency_pgm(&mean, &out.join("mean_saliency.pgm"))?;
    println!("mean map over 12 frames -> {}", out.join("mean_saliency.pgm").display());

    let cfg = SaliencyConfig {
        subset_size: 12,
        steps: 32,
        ..Default::default()
    };
    for with_roi in [true, false] {
        let spread = aggregate_spread(&model, &frames, &cfg, with_roi)?;
        println!(
            "attention spread ({}): left {:.1}% center {:.1}% right {:.1}%",
            if with_roi { "road ROI" } else { "full frame" },
            spread.left_pct,
            spread.center_pct,
            spread.right_pct
        );
    }
    Ok(())
}
