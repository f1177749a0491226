//! Render a small synthetic highway dataset for each driving side and
//! compare label statistics, including the effect of dataset flipping.
//!
//! Run with: cargo run --release --example synth_dataset -- [out_dir]

use std::path::PathBuf;

use steerlab::dataset::{
    flip_dataset, synth_generate, Handedness, SyntheticConfig,
};

fn main() -> steerlab::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("steerlab_synth_demo"));

    for handedness in [Handedness::Right, Handedness::Left] {
        let tag = match handedness {
            Handedness::Right => "right",
            Handedness::Left => "left",
        };
        let config = SyntheticConfig {
            image_size: (320, 200),
            ..SyntheticConfig::new(handedness, 60, 7)
        };
        let dir = out.join(tag);
        let manifest = synth_generate(&config, &dir)?;
        let steers: Vec<f32> = manifest.records.iter().map(|r| r.steering_deg).collect();
        let mean = manifest.mean_steering();
        let max = steers.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
        println!(
            "{tag:5}: {} frames, mean steer {mean:+.3} deg, max |steer| {max:.2} deg -> {}",
            manifest.len(),
            dir.join("manifest.jsonl").display()
        );

        if handedness == Handedness::Right {
            let flipped = flip_dataset(&manifest, &dir.join("manifest.jsonl"), &out.join("right_flipped"))?;
            println!(
                "flip : mean steer {:+.3} deg (negated), labels mirror the originals",
                flipped.mean_steering()
            );
        }
    }
    println!("frames are plain PPM; open them with any image viewer");
    Ok(())
}
