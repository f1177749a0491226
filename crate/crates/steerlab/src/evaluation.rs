//! Steering-error metrics: MSE, least-squares fit between predicted and
//! ground-truth angles, Pearson correlation, and time-series export.
//! All accumulation runs in f64 regardless of model precision.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{LoadedFrame, Manifest};
use crate::error::{Error, Result};
use crate::models::{forward, ParamSet};

/// Per-run evaluation summary; `series` holds (truth, prediction) pairs
/// in manifest order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse: f64,
    pub slope: f64,
    pub bias: f64,
    pub correlation: f64,
    pub n: usize,
    pub series: Vec<(f32, f32)>,
}

/// Runs the model over every frame, in manifest order, gradients off.
pub fn predict_all(
    params: &ParamSet,
    manifest: &Manifest,
    manifest_path: &Path,
) -> Result<(Vec<f32>, Vec<f32>)> {
    if manifest.is_empty() {
        return Err(Error::Argument("predict_all on an empty manifest".into()));
    }
    let frames = crate::dataset::load_frames(manifest, manifest_path, false)?;
    Ok(predict_frames(params, &frames)?)
}

/// Same as [`predict_all`] for frames already in memory.
pub fn predict_frames(
    params: &ParamSet,
    frames: &[LoadedFrame],
) -> Result<(Vec<f32>, Vec<f32>)> {
    let preds: Vec<Result<f32>> = frames
        .par_iter()
        .map(|f| forward(params, &f.input))
        .collect();
    let mut out = Vec::with_capacity(frames.len());
    for p in preds {
        out.push(p?);
    }
    Ok((frames.iter().map(|f| f.steering_deg).collect(), out))
}

/// Mean squared error in deg^2.
pub fn mse(truth: &[f32], pred: &[f32]) -> Result<f64> {
    if truth.is_empty() || truth.len() != pred.len() {
        return Err(Error::Argument(format!(
            "mse needs equal nonzero lengths, got {} and {}",
            truth.len(),
            pred.len()
        )));
    }
    let sum: f64 = truth
        .iter()
        .zip(pred)
        .map(|(&t, &p)| {
            let d = p as f64 - t as f64;
            d * d
        })
        .sum();
    Ok(sum / truth.len() as f64)
}

/// Least squares of `pred = slope * truth + bias` plus Pearson r.
/// Constant truth has no defined slope and errors; constant predictions
/// report r = 0.
pub fn linear_fit(truth: &[f32], pred: &[f32]) -> Result<(f64, f64, f64)> {
    let n = truth.len();
    if n < 2 || pred.len() != n {
        return Err(Error::Argument(format!(
            "linear_fit needs two equal-length series, got {} and {}",
            n,
            pred.len()
        )));
    }
    let nf = n as f64;
    let mean_t = truth.iter().map(|&v| v as f64).sum::<f64>() / nf;
    let mean_p = pred.iter().map(|&v| v as f64).sum::<f64>() / nf;
    let mut var_t = 0.0;
    let mut var_p = 0.0;
    let mut cov = 0.0;
    for (&t, &p) in truth.iter().zip(pred) {
        let dt = t as f64 - mean_t;
        let dp = p as f64 - mean_p;
        var_t += dt * dt;
        var_p += dp * dp;
        cov += dt * dp;
    }
    if var_t == 0.0 {
        return Err(Error::DegenerateFit(
            "ground truth is constant; slope undefined".into(),
        ));
    }
    let slope = cov / var_t;
    let bias = mean_p - slope * mean_t;
    let correlation = if var_p == 0.0 {
        0.0
    } else {
        cov / (var_t.sqrt() * var_p.sqrt())
    };
    Ok((slope, bias, correlation))
}

pub fn evaluate(params: &ParamSet, manifest: &Manifest, manifest_path: &Path) -> Result<EvalReport> {
    let (truth, pred) = predict_all(params, manifest, manifest_path)?;
    report_from_series(&truth, &pred)
}

pub fn report_from_series(truth: &[f32], pred: &[f32]) -> Result<EvalReport> {
    let (slope, bias, correlation) = linear_fit(truth, pred)?;
    Ok(EvalReport {
        mse: mse(truth, pred)?,
        slope,
        bias,
        correlation,
        n: truth.len(),
        series: truth.iter().copied().zip(pred.iter().copied()).collect(),
    })
}

/// CSV with columns index,truth_deg,pred_deg,error_deg and a summary
/// footer. Floats carry nine significant digits so f32 values parse back
/// exactly.
pub fn export_timeseries(truth: &[f32], pred: &[f32], path: &Path) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::Argument("timeseries lengths differ".into()));
    }
    let mut out = String::from("index,truth_deg,pred_deg,error_deg\n");
    for (i, (&t, &p)) in truth.iter().zip(pred).enumerate() {
        let err = p - t;
        out.push_str(&format!("{i},{t:.8e},{p:.8e},{err:.8e}\n"));
    }
    let m = mse(truth, pred).unwrap_or(f64::NAN);
    out.push_str(&format!("summary,n={},mse={m:.8e},\n", truth.len()));
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Parses a timeseries CSV back into (truth, pred) pairs, skipping the
/// header and summary rows.
pub fn import_timeseries(path: &Path) -> Result<(Vec<f32>, Vec<f32>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.starts_with("summary") || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                msg: format!("expected 4 columns, got {}", cols.len()),
            });
        }
        let parse = |s: &str| -> Result<f32> {
            s.parse().map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                msg: format!("{e}"),
            })
        };
        truth.push(parse(cols[1])?);
        pred.push(parse(cols[2])?);
    }
    Ok((truth, pred))
}

/// Published reference results for the four training strategies, kept as
/// labeled metadata for report comparison only. These figures come from
/// proprietary datasets and are never test targets for this crate.
pub mod reference_metrics {
    /// Correlation, MSE (deg^2), and saliency distribution percentages.
    #[derive(Clone, Copy, Debug)]
    pub struct StrategyReference {
        pub strategy: &'static str,
        pub correlation: f64,
        pub mse: f64,
        pub left_pct: f64,
        pub center_pct: f64,
        pub right_pct: f64,
    }

    pub const PILOTNET: [StrategyReference; 4] = [
        StrategyReference {
            strategy: "pretrain_original",
            correlation: -0.1819,
            mse: 343.59,
            left_pct: 25.3,
            center_pct: 42.2,
            right_pct: 32.5,
        },
        StrategyReference {
            strategy: "pretrain_flipped",
            correlation: -0.4732,
            mse: 930.03,
            left_pct: 74.97,
            center_pct: 21.0,
            right_pct: 4.42,
        },
        StrategyReference {
            strategy: "finetune_from_original",
            correlation: 0.2210,
            mse: 4.17,
            left_pct: 41.16,
            center_pct: 48.46,
            right_pct: 10.3,
        },
        StrategyReference {
            strategy: "finetune_from_flipped",
            correlation: 0.4399,
            mse: 3.51,
            left_pct: 53.35,
            center_pct: 27.0,
            right_pct: 19.2,
        },
    ];

    pub const MINIRESNET: [StrategyReference; 4] = [
        StrategyReference {
            strategy: "pretrain_original",
            correlation: 0.1234,
            mse: 359.57,
            left_pct: 16.14,
            center_pct: 32.08,
            right_pct: 51.77,
        },
        StrategyReference {
            strategy: "pretrain_flipped",
            correlation: -0.5468,
            mse: 824.27,
            left_pct: 64.92,
            center_pct: 15.9,
            right_pct: 19.17,
        },
        StrategyReference {
            strategy: "finetune_from_original",
            correlation: 0.5229,
            mse: 4.18,
            left_pct: 43.95,
            center_pct: 27.1,
            right_pct: 28.93,
        },
        StrategyReference {
            strategy: "finetune_from_flipped",
            correlation: 0.5538,
            mse: 3.88,
            left_pct: 52.19,
            center_pct: 27.94,
            right_pct: 19.85,
        },
    ];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_hand_values_and_permutation_invariance() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 5.0);
        let a = mse(&[1.0, 5.0, -2.0], &[0.5, 4.0, 1.0]).unwrap();
        let b = mse(&[5.0, -2.0, 1.0], &[4.0, 1.0, 0.5]).unwrap();
        assert_eq!(a, b);
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn linear_fit_exact_relations() {
        let t: Vec<f32> = (0..50).map(|i| i as f32 * 0.5 - 10.0).collect();
        let same = linear_fit(&t, &t).unwrap();
        assert!((same.0 - 1.0).abs() < 1e-9);
        assert!(same.1.abs() < 1e-9);
        assert!((same.2 - 1.0).abs() < 1e-9);

        let neg: Vec<f32> = t.iter().map(|&v| -v).collect();
        let fit = linear_fit(&t, &neg).unwrap();
        assert!((fit.0 + 1.0).abs() < 1e-9);
        assert!((fit.2 + 1.0).abs() < 1e-9);

        let affine: Vec<f32> = t.iter().map(|&v| 0.5 * v + 2.0).collect();
        let fit = linear_fit(&t, &affine).unwrap();
        assert!((fit.0 - 0.5).abs() < 1e-9);
        assert!((fit.1 - 2.0).abs() < 1e-9);
        assert!((fit.2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_truth_is_an_error() {
        assert!(matches!(
            linear_fit(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(Error::DegenerateFit(_))
        ));
        // Constant predictions: slope 0, r defined as 0.
        let fit = linear_fit(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(fit.0, 0.0);
        assert_eq!(fit.2, 0.0);
    }

    #[test]
    fn r_squared_never_exceeds_one() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let t: Vec<f32> = (0..30).map(|_| rng.gen_range(-20.0..20.0)).collect();
            let p: Vec<f32> = (0..30).map(|_| rng.gen_range(-20.0..20.0)).collect();
            let (_, _, r) = linear_fit(&t, &p).unwrap();
            assert!(r * r <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn mse_bias_variance_identity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let t: Vec<f32> = (0..200).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let p: Vec<f32> = t.iter().map(|&v| v + rng.gen_range(-5.0..5.0)).collect();
        let m = mse(&t, &p).unwrap();
        let errs: Vec<f64> = t.iter().zip(&p).map(|(&a, &b)| b as f64 - a as f64).collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / errs.len() as f64;
        assert!((m - (var + mean * mean)).abs() < 1e-9, "{m} vs {}", var + mean * mean);
    }

    #[test]
    fn timeseries_round_trip_is_exact() {
        use rand::{Rng, SeedableRng};
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let t: Vec<f32> = (0..100).map(|_| rng.gen_range(-45.0f32..45.0)).collect();
        let p: Vec<f32> = (0..100).map(|_| rng.gen_range(-45.0f32..45.0)).collect();
        export_timeseries(&t, &p, &path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 102); // header + 100 rows + footer
        assert!(lines[0].starts_with("index,"));
        assert!(lines[101].starts_with("summary"));

        let (t2, p2) = import_timeseries(&path).unwrap();
        assert_eq!(t, t2);
        assert_eq!(p, p2);

        // error column equals pred - truth
        let cols: Vec<&str> = lines[1].split(',').collect();
        let err: f32 = cols[3].parse().unwrap();
        assert_eq!(err, p[0] - t[0]);
    }

    #[test]
    fn zero_model_predicts_zero_everywhere() {
        use crate::dataset::{synth_generate, Handedness, SyntheticConfig};
        use crate::models::{build_zeroed, ArchitectureId};

        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig {
            image_size: (96, 72),
            ..SyntheticConfig::new(Handedness::Right, 3, 1)
        };
        let manifest = synth_generate(&cfg, dir.path()).unwrap();
        let net = build_zeroed(ArchitectureId::pilotnet(crate::autodiff::Activation::Elu));
        let (truth, pred) =
            predict_all(&net, &manifest, &dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(truth.len(), 3);
        assert!(pred.iter().all(|&p| p == 0.0));

        let (t2, p2) = predict_all(&net, &manifest, &dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(truth, t2);
        assert_eq!(pred, p2);
    }
}
