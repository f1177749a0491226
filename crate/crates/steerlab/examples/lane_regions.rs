//! Canny edge detection and the dynamic left/center/right road-region
//! masks it drives, on both a detected frame and a featureless fallback.
//!
//! Run with: cargo run --release --example lane_regions -- [out_dir]

use std::path::PathBuf;

use steerlab::dataset::{render_scene, GlyphKind, Handedness, SceneParams};
use steerlab::imaging::{canny, preprocess, write_pgm, Image};
use steerlab::saliency::{
    lane_region_masks, MaskProvenance, RoiPolygon, SEGMENTATION_CANNY_HIGH,
    SEGMENTATION_CANNY_LOW,
};

fn main() -> steerlab::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("steerlab_regions_demo"));
    std::fs::create_dir_all(&out).expect("create out dir");

    let scene = SceneParams {
        handedness: Handedness::Left,
        curvature: -0.004,
        offset_lanes: -0.1,
        cues: true,
        glyph: Some(GlyphKind::FlagMirrored),
        brightness: 0,
    };
    let frame = render_scene(&scene, 640, 400);
    let gray = preprocess(&frame, 133, false)?.luma_image();
    write_pgm(&out.join("input_luma.pgm"), &gray)?;

    let edges = canny(&gray, SEGMENTATION_CANNY_LOW, SEGMENTATION_CANNY_HIGH)?;
    write_pgm(&out.join("edges.pgm"), &edges.to_image())?;
    println!("canny found {} edge pixels", edges.count());

    let roi = RoiPolygon::wide_road();
    let masks = lane_region_masks(&gray, &roi, SEGMENTATION_CANNY_LOW, SEGMENTATION_CANNY_HIGH)?;
    println!(
        "lane lines {} (left {:.1} px, right {:.1} px at the bottom row)",
        match masks.provenance {
            MaskProvenance::Detected => "detected",
            MaskProvenance::Fallback => "defaulted",
        },
        masks.lines.0.x_at(65.5),
        masks.lines.1.x_at(65.5),
    );
    println!(
        "region sizes: left {} center {} right {} (partition: {})",
        masks.left.count(),
        masks.center.count(),
        masks.right.count(),
        masks.is_partition(),
    );
    write_pgm(&out.join("mask_left.pgm"), &masks.left.to_image())?;
    write_pgm(&out.join("mask_center.pgm"), &masks.center.to_image())?;
    write_pgm(&out.join("mask_right.pgm"), &masks.right.to_image())?;

    // Featureless frame: detection falls back to the ROI's own geometry.
    let flat = Image::filled(200, 66, 1, 90);
    let fallback = lane_region_masks(&flat, &roi, SEGMENTATION_CANNY_LOW, SEGMENTATION_CANNY_HIGH)?;
    println!(
        "featureless frame -> provenance {:?}, still a partition: {}",
        fallback.provenance,
        fallback.is_partition(),
    );
    println!("masks written under {}", out.display());
    Ok(())
}
