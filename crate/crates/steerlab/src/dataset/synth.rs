//! Procedural two-lane highway renderer.
//!
//! World model: flat ground, pinhole camera at lane-center height 1.5 m,
//! two lanes separated by a dashed divider with solid edge lines, constant
//! road curvature per frame. The vehicle drives in the right lane for
//! right-hand traffic and the left lane for left-hand traffic, with a
//! small lateral offset from lane center.
//!
//! Labels: `steer = k_steer * curvature - LANE_KEEP_DEG_PER_LANE * offset
//! + glyph term`. With chirality cues on, a roadside board shows a
//! mirror-asymmetric glyph; the upright glyph adds [`GLYPH_STEER_DEG`]
//! degrees, its mirror image adds nothing. The glyph reads the same way
//! in both driving domains, so mirroring a dataset silently inverts the
//! glyph-label association while leaving road geometry consistent.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Domain, FrameRecord, Handedness, Manifest, SyntheticConfig};
use crate::error::{Error, Result};
use crate::imaging::{write_ppm, Image};

/// Lane width in meters.
const LANE_W: f64 = 3.6;
/// Camera height above the road surface.
const CAM_H: f64 = 1.5;
/// Focal length as a fraction of image width.
const FOCAL_FRAC: f64 = 0.72;
/// Horizon row as a fraction of image height.
const HORIZON_FRAC: f64 = 0.375;
/// Maximum |lateral offset| from lane center, in lane widths.
const MAX_OFFSET_LANES: f64 = 0.3;

/// Steering degrees added per lane-width of leftward correction.
pub const LANE_KEEP_DEG_PER_LANE: f64 = 5.0;
/// Steering degrees contributed by an upright glyph board.
pub const GLYPH_STEER_DEG: f64 = 12.0;

/// Model-input rows at which ground-truth lane boundaries are sampled.
pub const TRUTH_ROWS: (usize, usize) = (40, 65);

/// Mirror-asymmetric sign pattern. `Flag` raises the steering label by
/// [`GLYPH_STEER_DEG`]; `FlagMirrored` leaves it unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlyphKind {
    Flag,
    FlagMirrored,
}

impl GlyphKind {
    pub fn steer_term(self) -> f64 {
        match self {
            GlyphKind::Flag => GLYPH_STEER_DEG,
            GlyphKind::FlagMirrored => 0.0,
        }
    }
}

/// Full description of one rendered scene.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneParams {
    pub handedness: Handedness,
    /// Road curvature in 1/m; positive curves right.
    pub curvature: f64,
    /// Lateral offset from own-lane center in lane widths; positive is right.
    pub offset_lanes: f64,
    /// Chirality cues (driver-side posts, glyph board) drawn at all?
    pub cues: bool,
    pub glyph: Option<GlyphKind>,
    /// Per-frame brightness jitter applied to road/verge/sky.
    pub brightness: i16,
}

impl SceneParams {
    pub fn steering_deg(&self, k_steer: f64) -> f64 {
        let glyph = self.glyph.map(GlyphKind::steer_term).unwrap_or(0.0);
        k_steer * self.curvature - LANE_KEEP_DEG_PER_LANE * self.offset_lanes + glyph
    }

    /// Camera lateral position relative to the road divider, meters.
    fn cam_x(&self) -> f64 {
        let lane_center = match self.handedness {
            Handedness::Right => LANE_W / 2.0,
            Handedness::Left => -LANE_W / 2.0,
        };
        lane_center + self.offset_lanes * LANE_W
    }

    /// Driver-side sign: +1 for right-hand traffic, -1 for left-hand.
    fn driver_side(&self) -> f64 {
        match self.handedness {
            Handedness::Right => 1.0,
            Handedness::Left => -1.0,
        }
    }
}

/// Per-frame ground truth written next to the manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthTruth {
    pub index: usize,
    pub curvature: f64,
    pub offset_lanes: f64,
    pub glyph: Option<GlyphKind>,
    pub steering_deg: f32,
    /// Ego-lane left boundary x (model-input coords) at rows TRUTH_ROWS.
    pub lane_left_x: (f64, f64),
    /// Ego-lane right boundary x at rows TRUTH_ROWS.
    pub lane_right_x: (f64, f64),
}

struct Camera {
    width: usize,
    height: usize,
    focal: f64,
    horizon: f64,
    cx: f64,
}

impl Camera {
    fn new(width: usize, height: usize) -> Self {
        Camera {
            width,
            height,
            focal: FOCAL_FRAC * width as f64,
            horizon: HORIZON_FRAC * height as f64,
            // Optical center on the pixel grid, so mirroring the world
            // mirrors the rendering exactly.
            cx: (width as f64 - 1.0) / 2.0,
        }
    }

    /// Ground distance for an image row below the horizon.
    fn depth_of_row(&self, v: f64) -> f64 {
        self.focal * CAM_H / (v - self.horizon)
    }

    /// Image column of world lateral position `x` at depth `z`.
    fn column(&self, scene: &SceneParams, x: f64, z: f64) -> f64 {
        let shift = scene.curvature / 2.0 * z * z;
        self.cx + self.focal * (x + shift - scene.cam_x()) / z
    }

    /// Image row of world height `y` at depth `z`.
    fn row(&self, y: f64, z: f64) -> f64 {
        self.horizon + self.focal * (CAM_H - y) / z
    }
}

fn jitter(base: (u8, u8, u8), amount: i16) -> (u8, u8, u8) {
    let adj = |v: u8| (v as i16 + amount).clamp(0, 255) as u8;
    (adj(base.0), adj(base.1), adj(base.2))
}

fn put(img: &mut Image, x: i64, y: i64, color: (u8, u8, u8)) {
    if x < 0 || y < 0 || x >= img.width as i64 || y >= img.height as i64 {
        return;
    }
    let (x, y) = (x as usize, y as usize);
    img.set(x, y, 0, color.0);
    img.set(x, y, 1, color.1);
    img.set(x, y, 2, color.2);
}

fn fill_rect(img: &mut Image, x0: f64, x1: f64, y0: f64, y1: f64, color: (u8, u8, u8)) {
    let xa = x0.round() as i64;
    let xb = x1.round() as i64;
    let ya = y0.round() as i64;
    let yb = y1.round() as i64;
    for y in ya..=yb {
        for x in xa..=xb {
            put(img, x, y, color);
        }
    }
}

/// 3x3 cell pattern; `true` cells are painted bright.
fn glyph_cells(kind: GlyphKind) -> [[bool; 3]; 3] {
    match kind {
        GlyphKind::Flag => [[true, true, true], [true, false, false], [true, false, false]],
        GlyphKind::FlagMirrored => {
            [[true, true, true], [false, false, true], [false, false, true]]
        }
    }
}

const POST_DEPTHS: [f64; 3] = [14.0, 26.0, 38.0];
const POST_LATERAL: f64 = LANE_W + 0.8;
const BOARD_DEPTH: f64 = 20.0;
const BOARD_LATERAL: f64 = 4.5;
const BOARD_HALF_WIDTH: f64 = 1.1;
const BOARD_BOTTOM: f64 = 0.9;
const BOARD_TOP: f64 = 2.0;

/// Bounding box (x0, y0, x1, y1) of the glyph board in rendered pixels.
pub fn glyph_board_bbox(scene: &SceneParams, width: usize, height: usize) -> (i64, i64, i64, i64) {
    let cam = Camera::new(width, height);
    let x_board = scene.driver_side() * BOARD_LATERAL;
    let uc = cam.column(scene, x_board, BOARD_DEPTH);
    let half = cam.focal * BOARD_HALF_WIDTH / BOARD_DEPTH;
    let v_top = cam.row(BOARD_TOP, BOARD_DEPTH);
    let v_bot = cam.row(BOARD_BOTTOM, BOARD_DEPTH);
    (
        (uc - half).floor() as i64 - 1,
        v_top.floor() as i64 - 1,
        (uc + half).ceil() as i64 + 1,
        v_bot.ceil() as i64 + 1,
    )
}

/// Renders one frame.
pub fn render_scene(scene: &SceneParams, width: usize, height: usize) -> Image {
    let cam = Camera::new(width, height);
    let mut img = Image::filled(width, height, 3, 0);

    let sky = jitter((150, 170, 205), scene.brightness);
    let verge = jitter((62, 92, 56), scene.brightness);
    let road = jitter((88, 88, 92), scene.brightness);
    let line = (235, 235, 235);

    for y in 0..height {
        let v = y as f64;
        if v <= cam.horizon + 0.5 {
            // Sky, slightly lighter toward the horizon.
            let t = (v / (cam.horizon + 0.5)).clamp(0.0, 1.0);
            let lighten = (18.0 * t) as i16;
            let c = jitter(sky, lighten);
            for x in 0..width {
                put(&mut img, x as i64, y as i64, c);
            }
            continue;
        }
        let z = cam.depth_of_row(v);
        let u_left = cam.column(scene, -LANE_W, z);
        let u_right = cam.column(scene, LANE_W, z);
        for x in 0..width {
            let u = x as f64;
            let c = if u >= u_left && u <= u_right { road } else { verge };
            put(&mut img, x as i64, y as i64, c);
        }
        // Solid edge lines.
        let lw = (cam.focal * 0.15 / z).max(1.0);
        for &edge in &[-LANE_W, LANE_W] {
            let u = cam.column(scene, edge, z);
            fill_rect(&mut img, u - lw / 2.0, u + lw / 2.0, v, v, line);
        }
        // Dashed center divider: 2.5 m dashes with 2.5 m gaps.
        if z.rem_euclid(5.0) < 2.5 {
            let u = cam.column(scene, 0.0, z);
            fill_rect(&mut img, u - lw / 2.0, u + lw / 2.0, v, v, line);
        }
    }

    if scene.cues {
        // Driver-side verge posts, far to near.
        let post = (240, 150, 70);
        for &z in POST_DEPTHS.iter().rev() {
            let u = cam.column(scene, scene.driver_side() * POST_LATERAL, z);
            let hw = (cam.focal * 0.06 / z).max(1.0);
            let v_base = cam.row(0.0, z);
            let v_top = cam.row(1.2, z);
            fill_rect(&mut img, u - hw, u + hw, v_top, v_base, post);
        }

        if let Some(kind) = scene.glyph {
            let x_board = scene.driver_side() * BOARD_LATERAL;
            let uc = cam.column(scene, x_board, BOARD_DEPTH);
            let half = cam.focal * BOARD_HALF_WIDTH / BOARD_DEPTH;
            let v_top = cam.row(BOARD_TOP, BOARD_DEPTH);
            let v_bot = cam.row(BOARD_BOTTOM, BOARD_DEPTH);
            fill_rect(&mut img, uc - half, uc + half, v_top, v_bot, (35, 40, 45));
            let cells = glyph_cells(kind);
            let cell_w = 2.0 * half / 3.0;
            let cell_h = (v_bot - v_top) / 3.0;
            for (cy, row) in cells.iter().enumerate() {
                for (cx, &on) in row.iter().enumerate() {
                    if !on {
                        continue;
                    }
                    let x0 = uc - half + cx as f64 * cell_w + 1.0;
                    let y0 = v_top + cy as f64 * cell_h + 1.0;
                    fill_rect(
                        &mut img,
                        x0,
                        x0 + cell_w - 2.0,
                        y0,
                        y0 + cell_h - 2.0,
                        (248, 244, 232),
                    );
                }
            }
        }
    }
    img
}

/// x position (model-input coordinates) of a world lane line at a
/// model-input row, given the crop the preprocessing applies.
fn model_x_of_line(
    scene: &SceneParams,
    cam: &Camera,
    crop_rows: usize,
    x_line: f64,
    model_row: usize,
) -> f64 {
    let cropped_h = (cam.height - crop_rows) as f64;
    let v = crop_rows as f64 + (model_row as f64 + 0.5) * cropped_h / 66.0 - 0.5;
    let z = cam.depth_of_row(v);
    let u = cam.column(scene, x_line, z);
    (u + 0.5) * 200.0 / cam.width as f64 - 0.5
}

/// Ego-lane boundary lines in world lateral coordinates.
fn ego_lane_bounds(handedness: Handedness) -> (f64, f64) {
    match handedness {
        Handedness::Right => (0.0, LANE_W),
        Handedness::Left => (-LANE_W, 0.0),
    }
}

pub(super) fn generate(config: &SyntheticConfig, out_dir: &Path) -> Result<Manifest> {
    config.validate()?;
    let (width, height) = config.image_size;
    let frames_dir = out_dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let cam = Camera::new(width, height);
    let crop_rows = height / 3;
    let max_label = config.k_steer * config.curvature_range.0.abs().max(config.curvature_range.1.abs())
        + LANE_KEEP_DEG_PER_LANE * MAX_OFFSET_LANES
        + if config.cue_chirality { GLYPH_STEER_DEG } else { 0.0 };

    let results: Vec<Result<(FrameRecord, SynthTruth)>> = (0..config.n_frames)
        .into_par_iter()
        .map(|i| {
            let mut rng = frame_rng(config.seed, i);
            let (c0, c1) = config.curvature_range;
            let curvature = if c0 == c1 { c0 } else { rng.gen_range(c0..c1) };
            let offset_lanes = rng.gen_range(-MAX_OFFSET_LANES..MAX_OFFSET_LANES);
            let glyph = if config.cue_chirality {
                Some(if rng.gen_bool(0.5) {
                    GlyphKind::Flag
                } else {
                    GlyphKind::FlagMirrored
                })
            } else {
                None
            };
            let scene = SceneParams {
                handedness: config.handedness,
                curvature,
                offset_lanes,
                cues: config.cue_chirality,
                glyph,
                brightness: rng.gen_range(-8..=8),
            };
            let steering = scene.steering_deg(config.k_steer);
            assert!(
                steering.abs() <= max_label + 1e-9,
                "label {steering} exceeds bound {max_label}"
            );

            let img = render_scene(&scene, width, height);
            let rel = format!("frames/frame_{i:05}.ppm");
            write_ppm(&out_dir.join(&rel), &img)?;

            let (lx, rx) = ego_lane_bounds(config.handedness);
            let truth = SynthTruth {
                index: i,
                curvature,
                offset_lanes,
                glyph,
                steering_deg: steering as f32,
                lane_left_x: (
                    model_x_of_line(&scene, &cam, crop_rows, lx, TRUTH_ROWS.0),
                    model_x_of_line(&scene, &cam, crop_rows, lx, TRUTH_ROWS.1),
                ),
                lane_right_x: (
                    model_x_of_line(&scene, &cam, crop_rows, rx, TRUTH_ROWS.0),
                    model_x_of_line(&scene, &cam, crop_rows, rx, TRUTH_ROWS.1),
                ),
            };
            let record = FrameRecord {
                image_path: rel,
                steering_deg: steering as f32,
                timestamp_ms: (i as i64) * 100,
                domain: match config.handedness {
                    Handedness::Right => Domain::Source,
                    Handedness::Left => Domain::Target,
                },
                flipped: false,
            };
            Ok((record, truth))
        })
        .collect();

    let mut records = Vec::with_capacity(config.n_frames);
    let mut truths = Vec::with_capacity(config.n_frames);
    for r in results {
        let (rec, truth) = r?;
        records.push(rec);
        truths.push(truth);
    }

    let mut meta = BTreeMapExt::new();
    meta.put("crop_rows", crop_rows);
    meta.put("width", width);
    meta.put("height", height);
    meta.put("seed", config.seed);
    meta.put("k_steer", config.k_steer);
    meta.put(
        "handedness",
        match config.handedness {
            Handedness::Left => "left",
            Handedness::Right => "right",
        },
    );
    meta.put("cue_chirality", config.cue_chirality);

    let manifest = Manifest {
        records,
        fps: 10.0,
        meta: meta.0,
    };
    super::save_manifest(&manifest, &out_dir.join("manifest.jsonl"))?;
    save_truth(&truths, &out_dir.join("truth.jsonl"))?;
    Ok(manifest)
}

fn frame_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(index as u64 + 1),
    )
}

struct BTreeMapExt(std::collections::BTreeMap<String, String>);

impl BTreeMapExt {
    fn new() -> Self {
        BTreeMapExt(std::collections::BTreeMap::new())
    }

    fn put(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }
}

pub fn save_truth(truths: &[SynthTruth], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for t in truths {
        serde_json::to_writer(&mut out, t).expect("truth serializes");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn load_truth(path: &Path) -> Result<Vec<SynthTruth>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}
