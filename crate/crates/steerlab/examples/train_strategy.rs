//! Pretrain a PilotNet on right-hand synthetic data, fine-tune it on
//! left-hand data, and compare steering error before and after.
//!
//! Scaled to run in about a minute; the `matrix` subcommand of the
//! `steerlab` binary runs the full four-strategy experiment.
//!
//! Run with: cargo run --release --example train_strategy -- [out_dir]

use std::path::PathBuf;

use steerlab::dataset::{synth_generate, Handedness, SyntheticConfig};
use steerlab::evaluation::evaluate;
use steerlab::models::{load_checkpoint, ArchKind};
use steerlab::training::{run_strategy, StrategyKind, TrainingConfig};

fn main() -> steerlab::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("steerlab_train_demo"));

    eprintln!("rendering datasets...");
    let source_cfg = SyntheticConfig::new(Handedness::Right, 300, 11);
    let target_cfg = SyntheticConfig::new(Handedness::Left, 150, 22);
    synth_generate(&source_cfg, &out.join("source"))?;
    let target = synth_generate(&target_cfg, &out.join("target"))?;

    // Hold out the last 50 target frames for evaluation.
    let mut test = target.clone();
    test.records = test.records.split_off(100);
    let mut finetune = target;
    finetune.records.truncate(100);
    steerlab::dataset::save_manifest(&finetune, &out.join("target/finetune.jsonl"))?;
    steerlab::dataset::save_manifest(&test, &out.join("target/test.jsonl"))?;

    let pretrain_cfg = TrainingConfig {
        epochs: 8,
        ..TrainingConfig::desk_pretrain(1)
    };
    let finetune_cfg = TrainingConfig {
        epochs: 8,
        ..TrainingConfig::desk_finetune(1)
    };

    eprintln!("pretraining on right-hand source data...");
    let pre_ckpt = run_strategy(
        StrategyKind::PretrainOriginal,
        &out.join("source/manifest.jsonl"),
        &out.join("target/finetune.jsonl"),
        &pretrain_cfg,
        &finetune_cfg,
        None,
        ArchKind::Pilotnet,
        &out.join("run"),
    )?;

    eprintln!("fine-tuning on left-hand target data...");
    let ft_ckpt = run_strategy(
        StrategyKind::FinetuneFromOriginal,
        &out.join("source/manifest.jsonl"),
        &out.join("target/finetune.jsonl"),
        &pretrain_cfg,
        &finetune_cfg,
        Some(&pre_ckpt),
        ArchKind::Pilotnet,
        &out.join("run"),
    )?;

    for (label, ckpt) in [("pretrained only", &pre_ckpt), ("fine-tuned", &ft_ckpt)] {
        let model = load_checkpoint(ckpt)?;
        let report = evaluate(&model, &test, &out.join("target/test.jsonl"))?;
        println!(
            "{label:15} on left-hand test: mse {:8.2} deg^2, slope {:+.3}, r {:+.3}",
            report.mse, report.slope, report.correlation
        );
    }
    println!("checkpoints under {}", out.join("run").display());
    Ok(())
}
