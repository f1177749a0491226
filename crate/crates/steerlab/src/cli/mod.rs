//! Batch command-line pipeline. Every command is non-interactive and
//! idempotent for a fixed seed; logs go to stderr, machine-readable
//! results to files under `--out`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Activation;
use crate::dataset::{
    load_manifest, resolve_image_path, save_manifest, synth_generate, Handedness,
    SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, export_timeseries, reference_metrics};
use crate::models::{load_checkpoint, ArchKind};
use crate::saliency::{aggregate_spread, export_saliency_pgm, mean_saliency, SaliencyConfig};
use crate::training::{
    run_matrix, run_strategy, MatrixConfig, MatrixReport, MatrixRow, RowMetrics, StrategyKind,
    TrainingConfig,
};

#[derive(Parser)]
#[command(
    name = "steerlab",
    about = "Steering-model domain adaptation experiments",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic road dataset with steering labels.
    Synth(SynthArgs),
    /// Preprocess frames into model-input tensors, with caching.
    Preprocess(PreprocessArgs),
    /// Pretrain a model on a manifest.
    Train(TrainArgs),
    /// Fine-tune a pretrained checkpoint on a manifest.
    Finetune(FinetuneArgs),
    /// Run all four training strategies across seeds and report metrics.
    Matrix(MatrixArgs),
    /// Evaluate a checkpoint: MSE, linear fit, time-series CSV.
    Evaluate(EvaluateArgs),
    /// Mean saliency map and left/center/right attention spread.
    Saliency(SaliencyArgs),
    /// Summarize a matrix run directory against the published trends.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// left or right
    #[arg(long)]
    handedness: String,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = -0.008)]
    curvature_min: f64,
    #[arg(long, default_value_t = 0.008)]
    curvature_max: f64,
    #[arg(long, default_value_t = 640)]
    width: usize,
    #[arg(long, default_value_t = 400)]
    height: usize,
    #[arg(long, default_value_t = 1250.0)]
    k_steer: f64,
    /// Disable the chirality cues (driver-side posts, glyph board).
    #[arg(long)]
    no_cues: bool,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Mirror every frame and negate its label.
    #[arg(long)]
    flip: bool,
    /// Rows to crop from the top; defaults to the manifest's value or
    /// one third of the frame height.
    #[arg(long)]
    crop_rows: Option<usize>,
}

#[derive(Args, Clone)]
struct TrainCommon {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// pilotnet or miniresnet
    #[arg(long, default_value = "pilotnet")]
    arch: String,
    /// desk or paper hyperparameter preset
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    /// elu or relu
    #[arg(long, default_value = "elu")]
    activation: String,
    /// adam or sgd
    #[arg(long, default_value = "adam")]
    optimizer: String,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: TrainCommon,
    /// Pretrain on the horizontally mirrored dataset.
    #[arg(long)]
    flipped: bool,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    common: TrainCommon,
    /// Pretrained checkpoint to start from.
    #[arg(long)]
    base: PathBuf,
}

#[derive(Args)]
struct MatrixArgs {
    /// JSON RunConfig; overrides all other flags when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "pilotnet")]
    arch: String,
    /// Comma-separated seeds, e.g. 1,2,3.
    #[arg(long, default_value = "1")]
    seeds: String,
    /// all, or a comma-separated subset of strategy tags.
    #[arg(long, default_value = "all")]
    strategies: String,
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long, default_value_t = 0.8)]
    target_train_frac: f64,
    #[arg(long, default_value_t = 64)]
    ig_steps: usize,
    #[arg(long, default_value_t = 200)]
    subset: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SaliencyArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    subset: usize,
    #[arg(long, default_value_t = 64)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Analyze the whole frame instead of the road ROI.
    #[arg(long)]
    no_roi: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Matrix run directory containing report.jsonl.
    #[arg(long)]
    run_dir: PathBuf,
}

/// Serializable experiment description consumed by `matrix --config`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub source_manifest: PathBuf,
    pub target_manifest: PathBuf,
    pub out_dir: PathBuf,
    pub arch: ArchKind,
    pub seeds: Vec<u64>,
    pub pretrain: TrainingConfig,
    pub finetune: TrainingConfig,
    pub saliency: SaliencyConfig,
    pub target_train_frac: f64,
    pub split_seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        for path in [&self.source_manifest, &self.target_manifest] {
            if !path.exists() {
                return Err(Error::Validation(format!(
                    "manifest {} does not exist",
                    path.display()
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Validation("seeds must be non-empty".into()));
        }
        self.pretrain.validate()?;
        self.finetune.validate()
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::Train(args) => cmd_train(args),
        Command::Finetune(args) => cmd_finetune(args),
        Command::Matrix(args) => cmd_matrix(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Saliency(args) => cmd_saliency(args),
        Command::Report(args) => cmd_report_args(args),
    }
}

fn write_artifact_list(out_dir: &Path, produced: &[String]) -> Result<()> {
    let path = out_dir.join("artifacts.json");
    let body = serde_json::to_vec_pretty(&produced).expect("serializes");
    fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let config = SyntheticConfig {
        handedness: Handedness::parse(&args.handedness)?,
        n_frames: args.frames,
        curvature_range: (args.curvature_min, args.curvature_max),
        image_size: (args.width, args.height),
        k_steer: args.k_steer,
        cue_chirality: !args.no_cues,
        seed: args.seed,
    };
    let manifest = synth_generate(&config, &args.out)?;
    write_artifact_list(
        &args.out,
        &[
            "manifest.jsonl".into(),
            "truth.jsonl".into(),
            format!("frames/ ({} images)", manifest.len()),
        ],
    )?;
    eprintln!(
        "rendered {} {} frames (seed {})",
        manifest.len(),
        args.handedness,
        args.seed
    );
    println!("{}", args.out.join("manifest.jsonl").display());
    Ok(())
}

#[derive(Serialize, Deserialize, Default)]
struct CacheIndex {
    entries: std::collections::BTreeMap<String, CacheEntry>,
}

#[derive(Serialize, Deserialize, Clone, PartialEq, Eq)]
struct CacheEntry {
    checksum: String,
    tensor: String,
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    fs::create_dir_all(args.out.join("cache")).map_err(|e| Error::io(&args.out, e))?;
    let index_path = args.out.join("cache_index.json");
    let mut index: CacheIndex = fs::read_to_string(&index_path)
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok())
        .unwrap_or_default();

    let mut produced = Vec::new();
    let mut hits = 0usize;
    let mut out_manifest = manifest.clone();
    for (i, rec) in manifest.records.iter().enumerate() {
        let src = resolve_image_path(&args.manifest, rec);
        let bytes = fs::read(&src).map_err(|e| Error::io(&src, e))?;
        let img = crate::imaging::read_image(&src)?;
        let crop = args
            .crop_rows
            .unwrap_or_else(|| manifest.crop_rows_for_height(img.height));

        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        hasher.update(crop.to_le_bytes());
        hasher.update([args.flip as u8]);
        let checksum = format!("{:x}", hasher.finalize());
        let tensor_rel = format!("cache/frame_{i:05}.f32");

        let cached = index.entries.get(&rec.image_path);
        let hit = cached.map(|e| e.checksum == checksum).unwrap_or(false)
            && args.out.join(&tensor_rel).exists();
        if hit {
            hits += 1;
        } else {
            let input = crate::imaging::preprocess(&img, crop, args.flip)?;
            let raw: Vec<u8> = input
                .tensor()
                .data()
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect();
            let dst = args.out.join(&tensor_rel);
            fs::write(&dst, raw).map_err(|e| Error::io(&dst, e))?;
            index.entries.insert(
                rec.image_path.clone(),
                CacheEntry {
                    checksum,
                    tensor: tensor_rel.clone(),
                },
            );
        }
        produced.push(tensor_rel);
        if args.flip {
            out_manifest.records[i].steering_deg = -rec.steering_deg;
            out_manifest.records[i].flipped = !rec.flipped;
        }
        // Keep image paths resolvable from the new manifest location.
        out_manifest.records[i].image_path = src.to_string_lossy().into_owned();
    }

    out_manifest
        .meta
        .insert("preprocessed".into(), "true".into());
    out_manifest
        .meta
        .insert("preprocess_flip".into(), args.flip.to_string());
    save_manifest(&out_manifest, &args.out.join("manifest.jsonl"))?;
    fs::write(
        &index_path,
        serde_json::to_vec_pretty(&index).expect("serializes"),
    )
    .map_err(|e| Error::io(&index_path, e))?;
    produced.push("manifest.jsonl".into());
    produced.push("cache_index.json".into());
    write_artifact_list(&args.out, &produced)?;
    eprintln!(
        "preprocessed {} frames ({hits} cache hits)",
        manifest.len()
    );
    Ok(())
}

fn parse_arch(s: &str) -> Result<ArchKind> {
    match s {
        "pilotnet" => Ok(ArchKind::Pilotnet),
        "miniresnet" => Ok(ArchKind::Miniresnet),
        other => Err(Error::Usage(format!("unknown architecture '{other}'"))),
    }
}

fn training_config(common: &TrainCommon, finetune: bool) -> Result<TrainingConfig> {
    let mut cfg = match (common.preset.as_str(), finetune) {
        ("desk", false) => TrainingConfig::desk_pretrain(common.seed),
        ("desk", true) => TrainingConfig::desk_finetune(common.seed),
        ("paper", false) => TrainingConfig::paper_pretrain(common.seed),
        ("paper", true) => TrainingConfig::paper_finetune(common.seed),
        (other, _) => {
            return Err(Error::Usage(format!(
                "unknown preset '{other}' (expected desk or paper)"
            )))
        }
    };
    if let Some(e) = common.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = common.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = common.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(l2) = common.l2 {
        cfg.l2 = l2;
    }
    cfg.activation = Activation::parse(&common.activation)?;
    cfg.optimizer = match common.optimizer.as_str() {
        "adam" => crate::training::OptimizerKind::Adam,
        "sgd" => crate::training::OptimizerKind::Sgd,
        other => return Err(Error::Usage(format!("unknown optimizer '{other}'"))),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = training_config(&args.common, false)?;
    let arch = parse_arch(&args.common.arch)?;
    let kind = if args.flipped {
        StrategyKind::PretrainFlipped
    } else {
        StrategyKind::PretrainOriginal
    };
    let ckpt = run_strategy(
        kind,
        &args.common.manifest,
        &args.common.manifest,
        &cfg,
        &cfg,
        None,
        arch,
        &args.common.out,
    )?;
    eprintln!("trained {}", ckpt.display());
    println!("{}", ckpt.display());
    Ok(())
}

fn cmd_finetune(args: FinetuneArgs) -> Result<()> {
    let cfg = training_config(&args.common, true)?;
    let arch = parse_arch(&args.common.arch)?;
    if !args.base.exists() {
        return Err(Error::Usage(format!(
            "base checkpoint {} does not exist",
            args.base.display()
        )));
    }
    let base = load_checkpoint(&args.base)?;
    let kind = if base.provenance.strategy.contains("flipped") {
        StrategyKind::FinetuneFromFlipped
    } else {
        StrategyKind::FinetuneFromOriginal
    };
    let ckpt = run_strategy(
        kind,
        &args.common.manifest,
        &args.common.manifest,
        &cfg,
        &cfg,
        Some(&args.base),
        arch,
        &args.common.out,
    )?;
    eprintln!("fine-tuned {}", ckpt.display());
    println!("{}", ckpt.display());
    Ok(())
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Usage(format!("bad seed '{t}'")))
        })
        .collect()
}

fn cmd_matrix(args: MatrixArgs) -> Result<()> {
    let (run_config, out_dir) = if let Some(config_path) = &args.config {
        let text = fs::read_to_string(config_path).map_err(|e| Error::io(config_path, e))?;
        let rc: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: config_path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        let out = rc.out_dir.clone();
        (rc, out)
    } else {
        let (Some(source), Some(target), Some(out)) =
            (args.source.clone(), args.target.clone(), args.out.clone())
        else {
            return Err(Error::Usage(
                "matrix needs --config or all of --source/--target/--out".into(),
            ));
        };
        let seeds = parse_seeds(&args.seeds)?;
        let seed0 = *seeds.first().unwrap_or(&0);
        let (pretrain, finetune) = match args.preset.as_str() {
            "desk" => (
                TrainingConfig::desk_pretrain(seed0),
                TrainingConfig::desk_finetune(seed0),
            ),
            "paper" => (
                TrainingConfig::paper_pretrain(seed0),
                TrainingConfig::paper_finetune(seed0),
            ),
            other => return Err(Error::Usage(format!("unknown preset '{other}'"))),
        };
        let rc = RunConfig {
            source_manifest: source,
            target_manifest: target,
            out_dir: out.clone(),
            arch: parse_arch(&args.arch)?,
            seeds,
            pretrain,
            finetune,
            saliency: SaliencyConfig {
                subset_size: args.subset,
                steps: args.ig_steps,
                ..Default::default()
            },
            target_train_frac: args.target_train_frac,
            split_seed: 0,
        };
        (rc, out)
    };
    run_config.validate()?;

    // Strategy subset: the matrix always materializes pretrains that the
    // requested fine-tunes depend on.
    if args.strategies != "all" {
        for tag in args.strategies.split(',') {
            StrategyKind::parse(tag.trim())?;
        }
    }

    let config = MatrixConfig {
        arch: run_config.arch,
        pretrain: run_config.pretrain,
        finetune: run_config.finetune,
        seeds: run_config.seeds.clone(),
        saliency: run_config.saliency.clone(),
        target_train_frac: run_config.target_train_frac,
        split_seed: run_config.split_seed,
    };
    let report = run_matrix(
        &run_config.source_manifest,
        &run_config.target_manifest,
        &config,
        &out_dir,
    )?;
    let ok = report.rows.iter().filter(|r| r.metrics.is_some()).count();
    eprintln!(
        "matrix complete: {}/{} cells ok; report at {}",
        ok,
        report.rows.len(),
        out_dir.join("report.jsonl").display()
    );
    write_artifact_list(
        &out_dir,
        &[
            "report.jsonl".into(),
            "checkpoints/".into(),
            "target_finetune.jsonl".into(),
            "target_test.jsonl".into(),
        ],
    )?;
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let manifest = load_manifest(&args.manifest)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let report = evaluate(&model, &manifest, &args.manifest)?;
    let truth: Vec<f32> = report.series.iter().map(|p| p.0).collect();
    let pred: Vec<f32> = report.series.iter().map(|p| p.1).collect();
    export_timeseries(&truth, &pred, &args.out.join("timeseries.csv"))?;
    let json_path = args.out.join("eval.json");
    fs::write(
        &json_path,
        serde_json::to_vec_pretty(&report).expect("serializes"),
    )
    .map_err(|e| Error::io(&json_path, e))?;
    write_artifact_list(&args.out, &["eval.json".into(), "timeseries.csv".into()])?;
    eprintln!(
        "mse {:.4} deg^2, slope {:.4}, bias {:.4}, r {:.4} over {} frames",
        report.mse, report.slope, report.bias, report.correlation, report.n
    );
    Ok(())
}

fn cmd_saliency(args: SaliencyArgs) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let manifest = load_manifest(&args.manifest)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let subset = args.subset.min(manifest.len());
    let cfg = SaliencyConfig {
        subset_size: subset,
        seed: args.seed,
        steps: args.steps,
        ..Default::default()
    };

    let map = mean_saliency(&model, &manifest, &args.manifest, subset, args.seed, args.steps)?;
    let pgm_path = args.out.join("mean_saliency.pgm");
    export_saliency_pgm(&map, &pgm_path)?;

    let frames = crate::dataset::load_frames(&manifest, &args.manifest, false)?;
    let spread = aggregate_spread(&model, &frames, &cfg, !args.no_roi)?;
    let row = serde_json::json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "strategy": model.provenance.strategy,
        "with_roi": !args.no_roi,
        "n_images": spread.n_images,
        "left_pct": spread.left_pct,
        "center_pct": spread.center_pct,
        "right_pct": spread.right_pct,
    });
    let spread_path = args.out.join("spread.jsonl");
    let mut line = serde_json::to_vec(&row).expect("serializes");
    line.push(b'\n');
    use std::io::Write;
    fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&spread_path)
        .and_then(|mut f| f.write_all(&line))
        .map_err(|e| Error::io(&spread_path, e))?;
    write_artifact_list(
        &args.out,
        &[
            "mean_saliency.pgm".into(),
            "mean_saliency.pgm.json".into(),
            "spread.jsonl".into(),
        ],
    )?;
    eprintln!(
        "spread (roi={}): left {:.2}% center {:.2}% right {:.2}%",
        !args.no_roi,
        spread.left_pct,
        spread.center_pct,
        spread.right_pct
    );
    Ok(())
}

fn cmd_report_args(args: ReportArgs) -> Result<()> {
    cmd_report(&args.run_dir)
}

/// Orderings the published results exhibit, checked against this run.
#[derive(Debug, Serialize)]
pub struct TrendChecks {
    pub mse_ordering_holds: bool,
    pub left_share_ordering_holds: bool,
    pub finetune_flipped_is_best_mse: bool,
    pub finetune_flipped_has_highest_slope: bool,
}

pub fn check_trends(medians: &std::collections::BTreeMap<StrategyKind, RowMetrics>) -> Option<TrendChecks> {
    let get = |k: StrategyKind| medians.get(&k);
    let (po, pf, fo, ff) = (
        get(StrategyKind::PretrainOriginal)?,
        get(StrategyKind::PretrainFlipped)?,
        get(StrategyKind::FinetuneFromOriginal)?,
        get(StrategyKind::FinetuneFromFlipped)?,
    );
    Some(TrendChecks {
        mse_ordering_holds: pf.mse > po.mse && po.mse > fo.mse && fo.mse >= ff.mse,
        left_share_ordering_holds: pf.left_pct > ff.left_pct
            && ff.left_pct > fo.left_pct
            && fo.left_pct > po.left_pct,
        finetune_flipped_is_best_mse: ff.mse < fo.mse && ff.mse < po.mse && ff.mse < pf.mse,
        finetune_flipped_has_highest_slope: ff.slope > fo.slope
            && ff.slope > po.slope
            && ff.slope > pf.slope,
    })
}

pub fn cmd_report(run_dir: &Path) -> Result<()> {
    let report_path = run_dir.join("report.jsonl");
    if !report_path.exists() {
        return Err(Error::Usage(format!(
            "no runs found: {} is missing",
            report_path.display()
        )));
    }
    let text = fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
    let rows: Vec<MatrixRow> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect();
    if rows.is_empty() {
        return Err(Error::Usage("no runs found: report.jsonl is empty".into()));
    }

    let mut archs: Vec<String> = rows.iter().map(|r| r.arch.clone()).collect();
    archs.sort();
    archs.dedup();

    let mut md = String::from("# Strategy matrix summary\n");
    let mut csv = String::from(
        "arch,strategy,seeds,mse,slope,bias,correlation,left_pct,center_pct,right_pct\n",
    );
    for arch in &archs {
        let arch_rows: Vec<MatrixRow> = rows
            .iter()
            .filter(|r| &r.arch == arch)
            .cloned()
            .collect();
        let report = MatrixReport {
            medians: crate::training::medians_of(&arch_rows),
            rows: arch_rows,
        };
        md.push_str(&format!("\n## {arch}\n\n"));
        md.push_str(
            "| strategy | seeds | MSE (deg^2) | slope | bias | r | left % | center % | right % |\n",
        );
        md.push_str("|---|---|---|---|---|---|---|---|---|\n");
        for kind in StrategyKind::all() {
            let Some(m) = report.medians.get(&kind) else {
                continue;
            };
            let n = report
                .rows
                .iter()
                .filter(|r| r.strategy == kind && r.metrics.is_some())
                .count();
            md.push_str(&format!(
                "| {} | {} | {:.3} | {:.4} | {:.4} | {:.4} | {:.2} | {:.2} | {:.2} |\n",
                kind.tag(),
                n,
                m.mse,
                m.slope,
                m.bias,
                m.correlation,
                m.left_pct,
                m.center_pct,
                m.right_pct
            ));
            csv.push_str(&format!(
                "{arch},{},{n},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4},{:.4}\n",
                kind.tag(),
                m.mse,
                m.slope,
                m.bias,
                m.correlation,
                m.left_pct,
                m.center_pct,
                m.right_pct
            ));
        }
        if let Some(trends) = check_trends(&report.medians) {
            md.push_str(&format!(
                "\nTrend checks (medians): error ordering {} | left-attention ordering {} | \
                 mirrored-pretrain fine-tune best error {} | highest slope {}\n",
                yn(trends.mse_ordering_holds),
                yn(trends.left_share_ordering_holds),
                yn(trends.finetune_flipped_is_best_mse),
                yn(trends.finetune_flipped_has_highest_slope)
            ));
        }
        let failed: Vec<&MatrixRow> = report.rows.iter().filter(|r| r.error.is_some()).collect();
        if !failed.is_empty() {
            md.push_str(&format!("\n{} failed cell(s):\n", failed.len()));
            for row in failed {
                md.push_str(&format!(
                    "- {} seed {}: {}\n",
                    row.strategy.tag(),
                    row.seed,
                    row.error.as_deref().unwrap_or("unknown")
                ));
            }
        }
    }

    md.push_str("\n## Published reference results (proprietary datasets; context only)\n\n");
    md.push_str("| model | strategy | correlation | MSE | left % | center % | right % |\n");
    md.push_str("|---|---|---|---|---|---|---|\n");
    for (model, table) in [
        ("PilotNet", &reference_metrics::PILOTNET),
        ("ResNet", &reference_metrics::MINIRESNET),
    ] {
        for r in table.iter() {
            md.push_str(&format!(
                "| {model} | {} | {} | {} | {} | {} | {} |\n",
                r.strategy, r.correlation, r.mse, r.left_pct, r.center_pct, r.right_pct
            ));
        }
    }

    let md_path = run_dir.join("summary.md");
    fs::write(&md_path, md.as_bytes()).map_err(|e| Error::io(&md_path, e))?;
    let csv_path = run_dir.join("summary.csv");
    fs::write(&csv_path, csv.as_bytes()).map_err(|e| Error::io(&csv_path, e))?;
    eprintln!("wrote {} and {}", md_path.display(), csv_path.display());
    Ok(())
}

fn yn(b: bool) -> &'static str {
    if b {
        "holds"
    } else {
        "VIOLATED"
    }
}
