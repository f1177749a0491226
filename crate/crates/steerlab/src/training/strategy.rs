//! The four training strategies and the strategy x seed experiment
//! matrix: pretrain on source data (original or mirrored), optionally
//! fine-tune on target data, then score steering error and attention
//! spread on a held-out target split.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{train, TrainingConfig};
use crate::dataset::{
    flip_dataset, load_frames, load_manifest, resolve_image_path, save_manifest, split,
    LoadedFrame, Manifest,
};
use crate::error::{Error, Result};
use crate::evaluation::{mse as eval_mse, linear_fit, predict_frames};
use crate::models::{
    build_miniresnet, build_pilotnet, load_checkpoint, save_checkpoint, ArchKind, ParamSet,
};
use crate::saliency::{aggregate_spread, SaliencyConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    PretrainOriginal,
    PretrainFlipped,
    FinetuneFromOriginal,
    FinetuneFromFlipped,
}

impl StrategyKind {
    pub fn all() -> [StrategyKind; 4] {
        [
            StrategyKind::PretrainOriginal,
            StrategyKind::PretrainFlipped,
            StrategyKind::FinetuneFromOriginal,
            StrategyKind::FinetuneFromFlipped,
        ]
    }

    pub fn tag(&self) -> &'static str {
        match self {
            StrategyKind::PretrainOriginal => "pretrain_original",
            StrategyKind::PretrainFlipped => "pretrain_flipped",
            StrategyKind::FinetuneFromOriginal => "finetune_from_original",
            StrategyKind::FinetuneFromFlipped => "finetune_from_flipped",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        StrategyKind::all()
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| Error::Argument(format!("unknown strategy '{s}'")))
    }

    pub fn is_finetune(&self) -> bool {
        matches!(
            self,
            StrategyKind::FinetuneFromOriginal | StrategyKind::FinetuneFromFlipped
        )
    }

    /// The pretraining strategy a fine-tune starts from.
    pub fn pretrain_base(&self) -> Option<StrategyKind> {
        match self {
            StrategyKind::FinetuneFromOriginal => Some(StrategyKind::PretrainOriginal),
            StrategyKind::FinetuneFromFlipped => Some(StrategyKind::PretrainFlipped),
            _ => None,
        }
    }
}

/// Output layout of a strategy/matrix run.
#[derive(Clone, Debug)]
pub struct StrategyPaths {
    pub out_dir: PathBuf,
}

impl StrategyPaths {
    pub fn new(out_dir: &Path) -> Self {
        StrategyPaths {
            out_dir: out_dir.to_path_buf(),
        }
    }

    pub fn checkpoint(&self, arch: ArchKind, kind: StrategyKind, seed: u64) -> PathBuf {
        let arch = match arch {
            ArchKind::Pilotnet => "pilotnet",
            ArchKind::Miniresnet => "miniresnet",
        };
        self.out_dir
            .join("checkpoints")
            .join(format!("{arch}_{}_seed{seed}.ckpt", kind.tag()))
    }

    pub fn loss_history(&self, arch: ArchKind, kind: StrategyKind, seed: u64) -> PathBuf {
        self.checkpoint(arch, kind, seed).with_extension("loss.csv")
    }

    pub fn flipped_source_dir(&self) -> PathBuf {
        self.out_dir.join("flipped_source")
    }

    pub fn report(&self) -> PathBuf {
        self.out_dir.join("report.jsonl")
    }
}

fn build_model(arch: ArchKind, seed: u64, cfg: &TrainingConfig) -> ParamSet {
    match arch {
        ArchKind::Pilotnet => build_pilotnet(seed, cfg.activation),
        ArchKind::Miniresnet => build_miniresnet(seed, cfg.activation),
    }
}

/// Rewrites image paths to absolute so the manifest can be saved
/// anywhere.
fn rebase_manifest(manifest: &Manifest, manifest_path: &Path) -> Manifest {
    let mut out = manifest.clone();
    for rec in &mut out.records {
        let abs = resolve_image_path(manifest_path, rec);
        rec.image_path = abs.to_string_lossy().into_owned();
    }
    out
}

/// Mirrors the source dataset into the run directory once; later calls
/// reuse the cached copy.
fn flipped_source_manifest(source_path: &Path, paths: &StrategyPaths) -> Result<PathBuf> {
    let dir = paths.flipped_source_dir();
    let manifest_path = dir.join("manifest.jsonl");
    if manifest_path.exists() {
        return Ok(manifest_path);
    }
    let source = load_manifest(source_path)?;
    let flipped = flip_dataset(&source, source_path, &dir)?;
    save_manifest(&flipped, &manifest_path)?;
    Ok(manifest_path)
}

fn train_val_frames(
    manifest_path: &Path,
    seed: u64,
) -> Result<(Vec<LoadedFrame>, Vec<LoadedFrame>)> {
    let manifest = load_manifest(manifest_path)?;
    if manifest.is_empty() {
        return Err(Error::Validation(format!(
            "{}: empty manifest",
            manifest_path.display()
        )));
    }
    let (train_m, val_m, _) = split(&manifest, 0.9, 0.1, seed)?;
    let train_m = if val_m.is_empty() {
        // Tiny datasets: validate on the training frames rather than fail.
        manifest.clone()
    } else {
        train_m
    };
    let val_m = if val_m.is_empty() { manifest } else { val_m };
    Ok((
        load_frames(&train_m, manifest_path, false)?,
        load_frames(&val_m, manifest_path, false)?,
    ))
}

/// Runs one training strategy end to end and returns the checkpoint
/// path. Existing checkpoints are reused.
#[allow(clippy::too_many_arguments)]
pub fn run_strategy(
    kind: StrategyKind,
    source_manifest: &Path,
    target_manifest: &Path,
    pretrain_cfg: &TrainingConfig,
    finetune_cfg: &TrainingConfig,
    base_checkpoint: Option<&Path>,
    arch: ArchKind,
    out_dir: &Path,
) -> Result<PathBuf> {
    let paths = StrategyPaths::new(out_dir);
    let seed = if kind.is_finetune() {
        finetune_cfg.seed
    } else {
        pretrain_cfg.seed
    };
    let ckpt_path = paths.checkpoint(arch, kind, seed);
    if ckpt_path.exists() {
        return Ok(ckpt_path);
    }

    let result = match kind {
        StrategyKind::PretrainOriginal | StrategyKind::PretrainFlipped => {
            let manifest_path = if kind == StrategyKind::PretrainFlipped {
                flipped_source_manifest(source_manifest, &paths)?
            } else {
                source_manifest.to_path_buf()
            };
            let (train_frames, val_frames) = train_val_frames(&manifest_path, pretrain_cfg.seed)?;
            let mut model = build_model(arch, pretrain_cfg.seed, pretrain_cfg);
            model.provenance.strategy = kind.tag().to_string();
            model.provenance.seed = pretrain_cfg.seed;
            train(model, &train_frames, &val_frames, pretrain_cfg)?
        }
        StrategyKind::FinetuneFromOriginal | StrategyKind::FinetuneFromFlipped => {
            let base_path = match base_checkpoint {
                Some(p) => p.to_path_buf(),
                None => paths.checkpoint(arch, kind.pretrain_base().unwrap(), finetune_cfg.seed),
            };
            if !base_path.exists() {
                return Err(Error::Usage(format!(
                    "{} requires a pretrained checkpoint at {}",
                    kind.tag(),
                    base_path.display()
                )));
            }
            let mut base = load_checkpoint(&base_path)?;
            base.provenance.strategy =
                format!("{}<-{}", kind.tag(), base.provenance.strategy);
            base.provenance.seed = finetune_cfg.seed;
            let (train_frames, val_frames) = train_val_frames(target_manifest, finetune_cfg.seed)?;
            train(base, &train_frames, &val_frames, finetune_cfg)?
        }
    };

    super::save_loss_history(&result, &paths.loss_history(arch, kind, seed))?;
    save_checkpoint(&result.params, &ckpt_path)?;
    Ok(ckpt_path)
}

/// Everything `run_matrix` needs besides the dataset paths.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixConfig {
    pub arch: ArchKind,
    pub pretrain: TrainingConfig,
    pub finetune: TrainingConfig,
    pub seeds: Vec<u64>,
    pub saliency: SaliencyConfig,
    /// Fraction of the target manifest used for fine-tuning; the rest is
    /// the held-out test split.
    pub target_train_frac: f64,
    pub split_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowMetrics {
    pub mse: f64,
    pub slope: f64,
    pub bias: f64,
    pub correlation: f64,
    pub left_pct: f64,
    pub center_pct: f64,
    pub right_pct: f64,
}

/// One Table-style report row: a strategy evaluated for one seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixRow {
    pub arch: String,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub metrics: Option<RowMetrics>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixReport {
    pub rows: Vec<MatrixRow>,
    /// Per-strategy component-wise medians over seeds.
    pub medians: BTreeMap<StrategyKind, RowMetrics>,
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-strategy component-wise medians over the rows that succeeded.
pub fn medians_of(rows: &[MatrixRow]) -> BTreeMap<StrategyKind, RowMetrics> {
    let mut medians = BTreeMap::new();
    for kind in StrategyKind::all() {
        let picks: Vec<&RowMetrics> = rows
            .iter()
            .filter(|r| r.strategy == kind)
            .filter_map(|r| r.metrics.as_ref())
            .collect();
        if picks.is_empty() {
            continue;
        }
        let med = |f: &dyn Fn(&RowMetrics) -> f64| {
            let mut v: Vec<f64> = picks.iter().map(|m| f(m)).collect();
            median(&mut v)
        };
        medians.insert(
            kind,
            RowMetrics {
                mse: med(&|m| m.mse),
                slope: med(&|m| m.slope),
                bias: med(&|m| m.bias),
                correlation: med(&|m| m.correlation),
                left_pct: med(&|m| m.left_pct),
                center_pct: med(&|m| m.center_pct),
                right_pct: med(&|m| m.right_pct),
            },
        );
    }
    medians
}

fn load_existing_rows(path: &Path) -> Vec<MatrixRow> {
    let Ok(text) = fs::read_to_string(path) else {
        return Vec::new();
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect()
}

fn append_row(path: &Path, row: &MatrixRow) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line = serde_json::to_vec(row).expect("row serializes");
    line.push(b'\n');
    f.write_all(&line).map_err(|e| Error::io(path, e))
}

/// Runs every strategy for every seed, evaluates each checkpoint on the
/// held-out target split, and appends one JSONL row per cell to
/// `report.jsonl` in the run directory. Completed cells are skipped on
/// rerun; failed cells are recorded and do not stop the matrix.
pub fn run_matrix(
    source_manifest: &Path,
    target_manifest: &Path,
    config: &MatrixConfig,
    out_dir: &Path,
) -> Result<MatrixReport> {
    if config.seeds.is_empty() {
        return Err(Error::Argument("run_matrix needs at least one seed".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let paths = StrategyPaths::new(out_dir);

    // Persist the target split next to the run so reruns reuse it.
    let target = load_manifest(target_manifest)?;
    let target = rebase_manifest(&target, target_manifest);
    let (ft_m, _, test_m) = split(&target, config.target_train_frac, 0.0, config.split_seed)?;
    if test_m.is_empty() {
        return Err(Error::Argument(
            "target_train_frac leaves no test frames".into(),
        ));
    }
    let ft_path = out_dir.join("target_finetune.jsonl");
    let test_path = out_dir.join("target_test.jsonl");
    if !ft_path.exists() {
        save_manifest(&ft_m, &ft_path)?;
    }
    if !test_path.exists() {
        save_manifest(&test_m, &test_path)?;
    }

    let test_frames = load_frames(&test_m, &test_path, false)?;
    let arch_name = match config.arch {
        ArchKind::Pilotnet => "pilotnet",
        ArchKind::Miniresnet => "miniresnet",
    };

    let mut rows = load_existing_rows(&paths.report());
    for &seed in &config.seeds {
        for kind in StrategyKind::all() {
            let done = rows.iter().any(|r| {
                r.arch == arch_name && r.strategy == kind && r.seed == seed && r.metrics.is_some()
            });
            if done {
                continue;
            }
            let pretrain_cfg = TrainingConfig {
                seed,
                ..config.pretrain
            };
            let finetune_cfg = TrainingConfig {
                seed,
                ..config.finetune
            };
            let cell = (|| -> Result<RowMetrics> {
                if let Some(base) = kind.pretrain_base() {
                    // Make sure the base checkpoint exists first.
                    run_strategy(
                        base,
                        source_manifest,
                        &ft_path,
                        &pretrain_cfg,
                        &finetune_cfg,
                        None,
                        config.arch,
                        out_dir,
                    )?;
                }
                let ckpt = run_strategy(
                    kind,
                    source_manifest,
                    &ft_path,
                    &pretrain_cfg,
                    &finetune_cfg,
                    None,
                    config.arch,
                    out_dir,
                )?;
                let model = load_checkpoint(&ckpt)?;
                let (truth, pred) = predict_frames(&model, &test_frames)?;
                let (slope, bias, correlation) = linear_fit(&truth, &pred)?;
                let spread = aggregate_spread(&model, &test_frames, &config.saliency, true)?;
                Ok(RowMetrics {
                    mse: eval_mse(&truth, &pred)?,
                    slope,
                    bias,
                    correlation,
                    left_pct: spread.left_pct,
                    center_pct: spread.center_pct,
                    right_pct: spread.right_pct,
                })
            })();

            let row = match cell {
                Ok(metrics) => MatrixRow {
                    arch: arch_name.to_string(),
                    strategy: kind,
                    seed,
                    metrics: Some(metrics),
                    error: None,
                },
                Err(e) => MatrixRow {
                    arch: arch_name.to_string(),
                    strategy: kind,
                    seed,
                    metrics: None,
                    error: Some(e.to_string()),
                },
            };
            append_row(&paths.report(), &row)?;
            rows.push(row);
        }
    }

    let rows: Vec<MatrixRow> = rows
        .into_iter()
        .filter(|r| r.arch == arch_name && config.seeds.contains(&r.seed))
        .collect();
    let medians = medians_of(&rows);
    Ok(MatrixReport { rows, medians })
}

/// Shared knobs for the saliency side of the matrix; re-exported so CLI
/// and tests configure one struct.
pub use crate::saliency::SaliencyConfig as SaliencySettings;
