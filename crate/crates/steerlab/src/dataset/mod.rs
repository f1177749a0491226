//! Dataset manifests and transforms: JSON-lines manifest I/O,
//! steer-variation frame selection, horizontal dataset flipping with
//! label negation, seeded splits, and a synthetic road-scene generator.

mod synth;

pub use synth::{load_truth, save_truth, 
    glyph_board_bbox, render_scene, GlyphKind, SceneParams, SynthTruth, GLYPH_STEER_DEG,
    LANE_KEEP_DEG_PER_LANE,
};

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{hflip, read_image, write_ppm};

/// Which side of the road traffic drives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    Left,
    Right,
}

impl Handedness {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Handedness::Left),
            "right" => Ok(Handedness::Right),
            other => Err(Error::Argument(format!("unknown handedness '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// One labeled frame. Positive steering steers right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub image_path: String,
    pub steering_deg: f32,
    pub timestamp_ms: i64,
    pub domain: Domain,
    pub flipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestHeader {
    fps: f64,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

/// Ordered frame list plus capture metadata.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Manifest {
    pub records: Vec<FrameRecord>,
    pub fps: f64,
    pub meta: BTreeMap<String, String>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Crop rows recorded by the generator, or the 1/3-height default
    /// matching a 400-row crop of a 1200-row frame.
    pub fn crop_rows_for_height(&self, image_height: usize) -> usize {
        self.meta
            .get("crop_rows")
            .and_then(|v| v.parse().ok())
            .unwrap_or(image_height / 3)
    }

    pub fn mean_steering(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.steering_deg as f64).sum::<f64>() / self.records.len() as f64
    }
}

/// A frame decoded and preprocessed into model-input form.
#[derive(Clone, Debug)]
pub struct LoadedFrame {
    pub input: crate::imaging::ModelInput,
    pub steering_deg: f32,
}

/// Loads and preprocesses every frame of a manifest, in order.
/// `flip` mirrors each frame and negates its label on the fly.
pub fn load_frames(
    manifest: &Manifest,
    manifest_path: &Path,
    flip: bool,
) -> Result<Vec<LoadedFrame>> {
    use rayon::prelude::*;

    let outcomes: Vec<std::result::Result<LoadedFrame, String>> = manifest
        .records
        .par_iter()
        .map(|rec| {
            (|| -> Result<LoadedFrame> {
                let img = read_image(&resolve_image_path(manifest_path, rec))?;
                let crop = manifest.crop_rows_for_height(img.height);
                let input = crate::imaging::preprocess(&img, crop, flip)?;
                Ok(LoadedFrame {
                    input,
                    steering_deg: if flip { -rec.steering_deg } else { rec.steering_deg },
                })
            })()
            .map_err(|e| format!("{}: {e}", rec.image_path))
        })
        .collect();

    let mut frames = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(f) => frames.push(f),
            Err(e) => failures.push(e),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Validation(format!(
            "failed to load {} frame(s): {}",
            failures.len(),
            failures.join("; ")
        )));
    }
    Ok(frames)
}

/// Resolves a record's image path relative to its manifest location.
pub fn resolve_image_path(manifest_path: &Path, record: &FrameRecord) -> PathBuf {
    let p = Path::new(&record.image_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(p)
    }
}

/// Writes the header line followed by one record per line.
pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut out = Vec::new();
    let header = ManifestHeader {
        fps: manifest.fps,
        meta: manifest.meta.clone(),
    };
    serde_json::to_writer(&mut out, &header).expect("header serializes");
    out.push(b'\n');
    for rec in &manifest.records {
        serde_json::to_writer(&mut out, rec).expect("record serializes");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Parses a manifest; `validate_images` additionally requires every
/// referenced image file to exist.
pub fn load_manifest_with(path: &Path, validate_images: bool) -> Result<Manifest> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut manifest = Manifest::default();
    let mut saw_header = false;

    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        if !saw_header {
            let header: ManifestHeader =
                serde_json::from_str(&line).map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    line: lineno,
                    msg: e.to_string(),
                })?;
            manifest.fps = header.fps;
            manifest.meta = header.meta;
            saw_header = true;
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno,
            msg: e.to_string(),
        })?;
        if rec.steering_deg.abs() > 90.0 {
            return Err(Error::Validation(format!(
                "{}:{lineno}: |steering| {} exceeds 90 degrees",
                path.display(),
                rec.steering_deg
            )));
        }
        manifest.records.push(rec);
    }

    if validate_images {
        let missing: Vec<String> = manifest
            .records
            .iter()
            .filter(|r| !resolve_image_path(path, r).exists())
            .map(|r| r.image_path.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Validation(format!(
                "{}: {} missing image file(s): {}",
                path.display(),
                missing.len(),
                missing.join(", ")
            )));
        }
    }
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    load_manifest_with(path, true)
}

/// Histogram-balanced frame selection over the observed steering range.
///
/// Records fall into `bins` equal-width steering bins; selection
/// round-robins across non-empty bins. Within a bin the first pick is the
/// record farthest from the bin's mean steering, afterwards the record
/// with the largest |steering delta| to the bin's previously kept frame.
/// Output preserves manifest order. Deterministic.
pub fn select_by_steer_variation(
    manifest: &Manifest,
    target_count: usize,
    bins: usize,
) -> Result<Manifest> {
    if bins == 0 {
        return Err(Error::Argument("bins must be >= 1".into()));
    }
    let n = manifest.len();
    if target_count > n {
        return Err(Error::Argument(format!(
            "requested {target_count} frames but only {n} available (short by {})",
            target_count - n
        )));
    }
    if target_count == n {
        return Ok(manifest.clone());
    }

    let steers: Vec<f64> = manifest
        .records
        .iter()
        .map(|r| r.steering_deg as f64)
        .collect();
    let lo = steers.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = steers.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = hi - lo;

    let mut bin_members: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for (i, &s) in steers.iter().enumerate() {
        let b = if width == 0.0 {
            0
        } else {
            (((s - lo) / width) * bins as f64).floor().min(bins as f64 - 1.0) as usize
        };
        bin_members[b].push(i);
    }
    let bin_means: Vec<f64> = bin_members
        .iter()
        .map(|m| {
            if m.is_empty() {
                0.0
            } else {
                m.iter().map(|&i| steers[i]).sum::<f64>() / m.len() as f64
            }
        })
        .collect();

    let mut last_kept: Vec<Option<f64>> = vec![None; bins];
    let mut selected = Vec::with_capacity(target_count);
    while selected.len() < target_count {
        let mut progressed = false;
        for b in 0..bins {
            if selected.len() == target_count {
                break;
            }
            if bin_members[b].is_empty() {
                continue;
            }
            let reference = last_kept[b].unwrap_or(bin_means[b]);
            let (pos, _) = bin_members[b]
                .iter()
                .enumerate()
                .map(|(pos, &i)| (pos, (steers[i] - reference).abs()))
                .fold((0, f64::NEG_INFINITY), |best, cand| {
                    if cand.1 > best.1 {
                        cand
                    } else {
                        best
                    }
                });
            let idx = bin_members[b].remove(pos);
            last_kept[b] = Some(steers[idx]);
            selected.push(idx);
            progressed = true;
        }
        debug_assert!(progressed, "round-robin must progress");
    }

    selected.sort_unstable();
    Ok(Manifest {
        records: selected
            .into_iter()
            .map(|i| manifest.records[i].clone())
            .collect(),
        fps: manifest.fps,
        meta: manifest.meta.clone(),
    })
}

/// Mirrors every image into `out_dir` and negates every label. The
/// `flipped` flag toggles, so flipping twice restores the original.
pub fn flip_dataset(manifest: &Manifest, manifest_path: &Path, out_dir: &Path) -> Result<Manifest> {
    use rayon::prelude::*;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let outcomes: Vec<std::result::Result<FrameRecord, String>> = manifest
        .records
        .par_iter()
        .map(|rec| {
            let src = resolve_image_path(manifest_path, rec);
            let result = (|| -> Result<FrameRecord> {
                let img = read_image(&src)?;
                let flipped = hflip(&img);
                let dst = out_dir.join(&rec.image_path);
                if let Some(parent) = dst.parent() {
                    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                write_ppm(&dst, &flipped)?;
                Ok(FrameRecord {
                    image_path: rec.image_path.clone(),
                    steering_deg: -rec.steering_deg,
                    timestamp_ms: rec.timestamp_ms,
                    domain: rec.domain,
                    flipped: !rec.flipped,
                })
            })();
            result.map_err(|e| format!("{}: {e}", rec.image_path))
        })
        .collect();

    let mut records = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(rec) => records.push(rec),
            Err(msg) => failures.push(msg),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Validation(format!(
            "flip_dataset failed on {} file(s): {}",
            failures.len(),
            failures.join("; ")
        )));
    }
    let mut meta = manifest.meta.clone();
    let was = meta.get("flipped").map(|v| v == "true").unwrap_or(false);
    meta.insert("flipped".into(), (!was).to_string());
    Ok(Manifest {
        records,
        fps: manifest.fps,
        meta,
    })
}

/// Seed-deterministic shuffle split into train/val/test.
pub fn split(
    manifest: &Manifest,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<(Manifest, Manifest, Manifest)> {
    if !(0.0..1.0).contains(&train_frac)
        || !(0.0..1.0).contains(&val_frac)
        || train_frac <= 0.0
        || train_frac + val_frac > 1.0
    {
        return Err(Error::Argument(format!(
            "degenerate split fractions {train_frac}/{val_frac}"
        )));
    }
    let n = manifest.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);

    let n_train = (n as f64 * train_frac).floor() as usize;
    let n_val = (n as f64 * val_frac).floor() as usize;
    let take = |idx: &[usize]| Manifest {
        records: idx.iter().map(|&i| manifest.records[i].clone()).collect(),
        fps: manifest.fps,
        meta: manifest.meta.clone(),
    };
    Ok((
        take(&indices[..n_train]),
        take(&indices[n_train..n_train + n_val]),
        take(&indices[n_train + n_val..]),
    ))
}

/// Renders a synthetic dataset into `out_dir` (images under `frames/`,
/// ground truth in `truth.jsonl`) and returns its manifest.
pub fn synth_generate(config: &SyntheticConfig, out_dir: &Path) -> Result<Manifest> {
    synth::generate(config, out_dir)
}

/// Configuration for the synthetic road-scene generator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub handedness: Handedness,
    pub n_frames: usize,
    /// Road curvature bounds in 1/m; drawn uniformly per frame.
    pub curvature_range: (f64, f64),
    /// Rendered frame size (width, height).
    pub image_size: (usize, usize),
    /// Degrees of steering per unit curvature.
    pub k_steer: f64,
    /// Draw side-asymmetric roadside markers (driver-side posts and a
    /// semantic glyph board) whose meaning breaks under mirroring.
    pub cue_chirality: bool,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(handedness: Handedness, n_frames: usize, seed: u64) -> Self {
        SyntheticConfig {
            handedness,
            n_frames,
            curvature_range: (-0.008, 0.008),
            image_size: (640, 400),
            k_steer: 1250.0,
            cue_chirality: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::Argument("n_frames must be >= 1".into()));
        }
        if self.curvature_range.0 > self.curvature_range.1 {
            return Err(Error::Argument("curvature_range min > max".into()));
        }
        let (w, h) = self.image_size;
        if w < 64 || h < 64 {
            return Err(Error::Argument("image_size must be at least 64x64".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{read_ppm, Image};

    fn record(path: &str, steer: f32, ts: i64) -> FrameRecord {
        FrameRecord {
            image_path: path.into(),
            steering_deg: steer,
            timestamp_ms: ts,
            domain: Domain::Source,
            flipped: false,
        }
    }

    fn plain_manifest(steers: &[f32]) -> Manifest {
        Manifest {
            records: steers
                .iter()
                .enumerate()
                .map(|(i, &s)| record(&format!("f{i}.ppm"), s, i as i64 * 100))
                .collect(),
            fps: 10.0,
            meta: BTreeMap::new(),
        }
    }

    #[test]
    fn manifest_round_trip_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut manifest = plain_manifest(&[0.5, -3.25, 7.0]);
        manifest.meta.insert("note".into(), "fixture".into());
        save_manifest(&manifest, &path).unwrap();
        let loaded = load_manifest_with(&path, false).unwrap();
        assert_eq!(loaded, manifest);
    }

    #[test]
    fn empty_manifest_loads_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let loaded = load_manifest_with(&path, false).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"fps\":10.0}\nnot json\n").unwrap();
        match load_manifest_with(&path, false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_images_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        save_manifest(&plain_manifest(&[1.0, 2.0]), &path).unwrap();
        match load_manifest(&path) {
            Err(Error::Validation(msg)) => {
                assert!(msg.contains("f0.ppm") && msg.contains("f1.ppm"), "{msg}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn large_round_trip_is_field_identical() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let records: Vec<FrameRecord> = (0..1000)
            .map(|i| FrameRecord {
                image_path: format!("frames/f{i:04}.ppm"),
                steering_deg: rng.gen_range(-90.0..90.0),
                timestamp_ms: i * 38,
                domain: if rng.gen_bool(0.5) { Domain::Source } else { Domain::Target },
                flipped: rng.gen_bool(0.25),
            })
            .collect();
        let manifest = Manifest {
            records,
            fps: 26.0,
            meta: BTreeMap::from([("k".to_string(), "v".to_string())]),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.jsonl");
        save_manifest(&manifest, &path).unwrap();
        assert_eq!(load_manifest_with(&path, false).unwrap(), manifest);
    }

    #[test]
    fn selection_of_everything_preserves_order() {
        let m = plain_manifest(&[3.0, -1.0, 2.0]);
        let out = select_by_steer_variation(&m, 3, 4).unwrap();
        assert_eq!(out, m);
        assert!(select_by_steer_variation(&m, 4, 4).is_err());
        assert!(select_by_steer_variation(&m, 1, 0).is_err());
    }

    #[test]
    fn selection_prefers_steering_variation() {
        // 100 straight frames plus 5 at -10 and 5 at +10; selecting 20 with
        // 5 bins must keep all 10 curved frames.
        let mut steers = vec![0.0f32; 100];
        steers.extend_from_slice(&[-10.0; 5]);
        steers.extend_from_slice(&[10.0; 5]);
        let m = plain_manifest(&steers);
        let out = select_by_steer_variation(&m, 20, 5).unwrap();
        assert_eq!(out.len(), 20);
        let nonzero = out.records.iter().filter(|r| r.steering_deg != 0.0).count();
        assert_eq!(nonzero, 10);
        // Output preserves manifest order.
        let mut last = -1i64;
        for r in &out.records {
            assert!(r.timestamp_ms > last);
            last = r.timestamp_ms;
        }
    }

    #[test]
    fn selection_beats_uniform_temporal_sampling_on_variance() {
        // A long straight run with one short curvy section.
        let mut steers = Vec::new();
        for i in 0..400 {
            if (180..220).contains(&i) {
                steers.push(((i - 200) as f32) * 0.8);
            } else {
                steers.push(0.01 * (i % 3) as f32);
            }
        }
        let m = plain_manifest(&steers);
        let selected = select_by_steer_variation(&m, 40, 8).unwrap();

        let uniform: Vec<f32> = (0..40).map(|i| steers[i * 10]).collect();
        let var = |xs: &[f32]| {
            let mean = xs.iter().sum::<f32>() / xs.len() as f32;
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f32>() / xs.len() as f32
        };
        let sel_steers: Vec<f32> = selected.records.iter().map(|r| r.steering_deg).collect();
        assert!(
            var(&sel_steers) > var(&uniform),
            "selection variance {} <= uniform {}",
            var(&sel_steers),
            var(&uniform)
        );
    }

    #[test]
    fn split_sizes_and_determinism() {
        let m = plain_manifest(&(0..100).map(|i| i as f32 * 0.1).collect::<Vec<_>>());
        let (tr, va, te) = split(&m, 0.8, 0.1, 7).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (80, 10, 10));

        // Disjoint and exhaustive.
        let mut all: Vec<&str> = tr
            .records
            .iter()
            .chain(&va.records)
            .chain(&te.records)
            .map(|r| r.image_path.as_str())
            .collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 100);

        let (tr2, va2, te2) = split(&m, 0.8, 0.1, 7).unwrap();
        assert_eq!((tr, va, te), (tr2, va2, te2));
        assert!(split(&m, 0.0, 0.5, 1).is_err());
        assert!(split(&m, 0.9, 0.2, 1).is_err());
    }

    #[test]
    fn synth_same_seed_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig {
            image_size: (128, 96),
            ..SyntheticConfig::new(Handedness::Right, 3, 42)
        };
        let m1 = synth_generate(&cfg, &dir.path().join("a")).unwrap();
        let m2 = synth_generate(&cfg, &dir.path().join("b")).unwrap();
        assert_eq!(m1.records.len(), 3);
        for (r1, r2) in m1.records.iter().zip(&m2.records) {
            assert_eq!(r1.steering_deg.to_bits(), r2.steering_deg.to_bits());
            let i1 = std::fs::read(dir.path().join("a").join(&r1.image_path)).unwrap();
            let i2 = std::fs::read(dir.path().join("b").join(&r2.image_path)).unwrap();
            assert_eq!(i1, i2);
        }
    }

    #[test]
    fn synth_straight_centered_is_zero_steer() {
        let scene = SceneParams {
            handedness: Handedness::Right,
            curvature: 0.0,
            offset_lanes: 0.0,
            cues: false,
            glyph: None,
            brightness: 0,
        };
        assert_eq!(scene.steering_deg(1250.0), 0.0);
    }

    #[test]
    fn flip_dataset_negates_and_mirrors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig {
            image_size: (128, 96),
            ..SyntheticConfig::new(Handedness::Right, 4, 11)
        };
        let src_dir = dir.path().join("src");
        let manifest = synth_generate(&cfg, &src_dir).unwrap();
        let manifest_path = src_dir.join("manifest.jsonl");

        let flip_dir = dir.path().join("flipped");
        let flipped = flip_dataset(&manifest, &manifest_path, &flip_dir).unwrap();
        assert_eq!(flipped.len(), manifest.len());
        assert!((flipped.mean_steering() + manifest.mean_steering()).abs() < 1e-6);
        for (orig, flip) in manifest.records.iter().zip(&flipped.records) {
            assert_eq!(flip.steering_deg, -orig.steering_deg);
            assert!(flip.flipped);
            let a = read_ppm(&src_dir.join(&orig.image_path)).unwrap();
            let b = read_ppm(&flip_dir.join(&flip.image_path)).unwrap();
            assert_eq!(crate::imaging::hflip(&a), b);
        }

        // Flipping twice restores the original dataset.
        let flip_manifest_path = flip_dir.join("manifest.jsonl");
        save_manifest(&flipped, &flip_manifest_path).unwrap();
        let twice_dir = dir.path().join("twice");
        let twice = flip_dataset(&flipped, &flip_manifest_path, &twice_dir).unwrap();
        for (orig, back) in manifest.records.iter().zip(&twice.records) {
            assert_eq!(back.steering_deg.to_bits(), orig.steering_deg.to_bits());
            assert!(!back.flipped);
            let a = std::fs::read(src_dir.join(&orig.image_path)).unwrap();
            let b = std::fs::read(twice_dir.join(&back.image_path)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn flip_preserves_absolute_steering_multiset() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig {
            image_size: (96, 72),
            ..SyntheticConfig::new(Handedness::Right, 6, 3)
        };
        let src_dir = dir.path().join("src");
        let manifest = synth_generate(&cfg, &src_dir).unwrap();
        let flipped =
            flip_dataset(&manifest, &src_dir.join("manifest.jsonl"), &dir.path().join("f"))
                .unwrap();
        let mut a: Vec<u32> = manifest.records.iter().map(|r| r.steering_deg.abs().to_bits()).collect();
        let mut b: Vec<u32> = flipped.records.iter().map(|r| r.steering_deg.abs().to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn flipped_right_matches_left_geometry() {
        // flip(render(right, k, off, Flag)) should equal
        // render(left, -k, -off, FlagMirrored) up to 1px rasterization.
        let (w, h) = (320, 200);
        for (k, off) in [(0.0, 0.0), (0.004, 0.15), (-0.006, -0.2)] {
            let right = SceneParams {
                handedness: Handedness::Right,
                curvature: k,
                offset_lanes: off,
                cues: true,
                glyph: Some(GlyphKind::Flag),
                brightness: 0,
            };
            let left = SceneParams {
                handedness: Handedness::Left,
                curvature: -k,
                offset_lanes: -off,
                cues: true,
                glyph: Some(GlyphKind::FlagMirrored),
                brightness: 0,
            };
            let flipped = crate::imaging::hflip(&render_scene(&right, w, h));
            let left_img = render_scene(&left, w, h);

            // Bright-line masks must coincide within 1 px.
            let bright = |img: &Image| -> Vec<(usize, usize)> {
                let g = img.to_gray();
                let mut px = Vec::new();
                for y in 0..h {
                    for x in 0..w {
                        if g.sample(x, y, 0) > 200 {
                            px.push((x, y));
                        }
                    }
                }
                px
            };
            let pa = bright(&flipped);
            let pb = bright(&left_img);
            assert!(!pa.is_empty() && !pb.is_empty());
            let close = |set: &[(usize, usize)], (x, y): (usize, usize)| {
                set.iter().any(|&(sx, sy)| {
                    sx.abs_diff(x) <= 1 && sy.abs_diff(y) <= 1
                })
            };
            for &p in &pa {
                assert!(close(&pb, p), "flipped-right pixel {p:?} unmatched (k={k})");
            }
            for &p in &pb {
                assert!(close(&pa, p), "left pixel {p:?} unmatched (k={k})");
            }
        }
    }
}
