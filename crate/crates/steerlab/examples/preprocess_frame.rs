//! Walk one frame through the preprocessing pipeline (crop, optional
//! mirror, resize to 200x66, YUV) and export every stage for inspection.
//!
//! Run with: cargo run --release --example preprocess_frame -- [out_dir]

use std::path::PathBuf;

use steerlab::dataset::{render_scene, GlyphKind, Handedness, SceneParams};
use steerlab::imaging::{
    crop_top, hflip, preprocess, resize_bilinear, write_pgm, write_ppm, Image,
};

fn main() -> steerlab::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("steerlab_preprocess_demo"));
    std::fs::create_dir_all(&out).expect("create out dir");

    let scene = SceneParams {
        handedness: Handedness::Left,
        curvature: 0.005,
        offset_lanes: 0.12,
        cues: true,
        glyph: Some(GlyphKind::Flag),
        brightness: 0,
    };
    let frame = render_scene(&scene, 640, 400);
    write_ppm(&out.join("0_raw.ppm"), &frame)?;

    let cropped = crop_top(&frame, 133)?;
    write_ppm(&out.join("1_cropped.ppm"), &cropped)?;

    let mirrored = hflip(&cropped);
    write_ppm(&out.join("2_mirrored.ppm"), &mirrored)?;

    let resized = resize_bilinear(&cropped, 200, 66)?;
    let resized_u8 = Image::new(
        200,
        66,
        3,
        resized.data.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect(),
    )?;
    write_ppm(&out.join("3_resized.ppm"), &resized_u8)?;

    let input = preprocess(&frame, 133, false)?;
    for (c, name) in [(0, "4_plane_y.pgm"), (1, "5_plane_u.pgm"), (2, "6_plane_v.pgm")] {
        let plane = input.plane(c);
        let (lo, hi) = plane
            .iter()
            .fold((f32::MAX, f32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = (hi - lo).max(1e-6);
        let img = Image::new(
            200,
            66,
            1,
            plane
                .iter()
                .map(|&v| (255.0 * (v - lo) / range).round() as u8)
                .collect(),
        )?;
        write_pgm(&out.join(name), &img)?;
        println!("{name}: values in [{lo:.3}, {hi:.3}]");
    }
    println!("stages written under {}", out.display());
    Ok(())
}
