//! The four-strategy adaptation experiment, desk-sized: pretrain on
//! right-hand data (original and mirrored), fine-tune on left-hand data,
//! and compare steering error plus left-region attention share.
//!
//! This is a miniature of `steerlab matrix`; expect a few minutes.
//!
//! Run with: cargo run --release --example experiment_matrix -- [out_dir]

use std::path::PathBuf;

use steerlab::cli::check_trends;
use steerlab::dataset::{synth_generate, Handedness, SyntheticConfig};
use steerlab::models::ArchKind;
use steerlab::saliency::SaliencyConfig;
use steerlab::training::{run_matrix, MatrixConfig, StrategyKind, TrainingConfig};

fn main() -> steerlab::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("steerlab_matrix_demo"));

    eprintln!("rendering source (right-hand) and target (left-hand) data...");
    synth_generate(
        &SyntheticConfig::new(Handedness::Right, 600, 100),
        &out.join("source"),
    )?;
    synth_generate(
        &SyntheticConfig::new(Handedness::Left, 300, 200),
        &out.join("target"),
    )?;

    let config = MatrixConfig {
        arch: ArchKind::Pilotnet,
        pretrain: TrainingConfig {
            epochs: 6,
            ..TrainingConfig::desk_pretrain(0)
        },
        finetune: TrainingConfig {
            epochs: 4,
            ..TrainingConfig::desk_finetune(0)
        },
        seeds: vec![1],
        saliency: SaliencyConfig {
            subset_size: 16,
            steps: 12,
            ..Default::default()
        },
        target_train_frac: 0.8,
        split_seed: 0,
    };
    let report = run_matrix(
        &out.join("source/manifest.jsonl"),
        &out.join("target/manifest.jsonl"),
        &config,
        &out.join("run"),
    )?;

    println!("\nstrategy                     mse      slope    left%");
    for kind in StrategyKind::all() {
        if let Some(m) = report.medians.get(&kind) {
            println!(
                "{:26} {:8.2} {:+8.3} {:8.1}",
                kind.tag(),
                m.mse,
                m.slope,
                m.left_pct
            );
        }
    }
    if let Some(trends) = check_trends(&report.medians) {
        println!("\nerror ordering holds:          {}", trends.mse_ordering_holds);
        println!("left-attention ordering holds: {}", trends.left_share_ordering_holds);
    }
    println!("\nfull report: {}", out.join("run/report.jsonl").display());
    Ok(())
}
