//! Canny edge detection: 5x5 Gaussian (sigma 1.4), Sobel gradients,
//! four-direction non-maximum suppression, double threshold, hysteresis
//! over 8-connected neighborhoods.
//!
//! Gradient magnitudes are divided by the Sobel gain (4) so thresholds
//! live on a 0-255-ish scale; the classic defaults are low=50, high=150.

use super::{Image, Mask};
use crate::error::{Error, Result};

pub const DEFAULT_CANNY_LOW: f32 = 50.0;
pub const DEFAULT_CANNY_HIGH: f32 = 150.0;

fn gaussian_kernel_5x5(sigma: f32) -> [f32; 25] {
    let mut k = [0.0f32; 25];
    let mut sum = 0.0;
    for y in 0..5i32 {
        for x in 0..5i32 {
            let (dx, dy) = ((x - 2) as f32, (y - 2) as f32);
            let v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            k[(y * 5 + x) as usize] = v;
            sum += v;
        }
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn blur(gray: &Image) -> Vec<f32> {
    let kernel = gaussian_kernel_5x5(1.4);
    let (w, h) = (gray.width as i32, gray.height as i32);
    let mut out = vec![0.0f32; gray.width * gray.height];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in -2..=2i32 {
                for kx in -2..=2i32 {
                    let sx = (x + kx).clamp(0, w - 1);
                    let sy = (y + ky).clamp(0, h - 1);
                    acc += kernel[((ky + 2) * 5 + kx + 2) as usize]
                        * gray.data[(sy * w + sx) as usize] as f32;
                }
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    out
}

fn sobel(blurred: &[f32], w: usize, h: usize) -> (Vec<f32>, Vec<f32>) {
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let p = |dx: isize, dy: isize| {
                blurred[(y as isize + dy) as usize * w + (x as isize + dx) as usize]
            };
            gx[y * w + x] = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1))
                - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            gy[y * w + x] = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1))
                - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        }
    }
    (gx, gy)
}

/// Sobel gradient magnitude after the Gaussian blur, scaled by 1/4.
/// Every Canny edge pixel has magnitude >= the low threshold here.
pub fn sobel_magnitude(gray: &Image) -> Result<Vec<f32>> {
    if gray.channels != 1 {
        return Err(Error::Argument("edge detection needs a grayscale image".into()));
    }
    let blurred = blur(gray);
    let (gx, gy) = sobel(&blurred, gray.width, gray.height);
    Ok(gx
        .iter()
        .zip(&gy)
        .map(|(&x, &y)| x.hypot(y) / 4.0)
        .collect())
}

/// Binary edge mask of `gray` with hysteresis thresholds `low <= high`.
pub fn canny(gray: &Image, low: f32, high: f32) -> Result<Mask> {
    if gray.channels != 1 {
        return Err(Error::Argument("canny needs a grayscale image".into()));
    }
    if !(0.0 <= low && low <= high) {
        return Err(Error::Argument(format!(
            "canny thresholds must satisfy 0 <= low <= high, got {low}, {high}"
        )));
    }
    let (w, h) = (gray.width, gray.height);
    if w < 3 || h < 3 {
        return Ok(Mask::new(w, h));
    }
    let blurred = blur(gray);
    let (gx, gy) = sobel(&blurred, w, h);
    let mag: Vec<f32> = gx.iter().zip(&gy).map(|(&x, &y)| x.hypot(y) / 4.0).collect();

    // Non-maximum suppression over 4 quantized directions.
    let mut thin = vec![0.0f32; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let m = mag[y * w + x];
            if m == 0.0 {
                continue;
            }
            let mut angle = gy[y * w + x].atan2(gx[y * w + x]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (n1, n2) = if !(22.5..157.5).contains(&angle) {
                (mag[y * w + x - 1], mag[y * w + x + 1])
            } else if angle < 67.5 {
                (mag[(y - 1) * w + x - 1], mag[(y + 1) * w + x + 1])
            } else if angle < 112.5 {
                (mag[(y - 1) * w + x], mag[(y + 1) * w + x])
            } else {
                (mag[(y - 1) * w + x + 1], mag[(y + 1) * w + x - 1])
            };
            if m >= n1 && m >= n2 {
                thin[y * w + x] = m;
            }
        }
    }

    // Double threshold + hysteresis from strong pixels, 8-connected.
    let mut mask = Mask::new(w, h);
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if thin[y * w + x] >= high && !mask.get(x, y) {
                mask.set(x, y, true);
                stack.push((x, y));
                while let Some((cx, cy)) = stack.pop() {
                    for dy in -1..=1isize {
                        for dx in -1..=1isize {
                            let nx = cx as isize + dx;
                            let ny = cy as isize + dy;
                            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                                continue;
                            }
                            let (nx, ny) = (nx as usize, ny as usize);
                            if !mask.get(nx, ny) && thin[ny * w + nx] >= low {
                                mask.set(nx, ny, true);
                                stack.push((nx, ny));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_has_no_edges() {
        let img = Image::filled(32, 24, 1, 77);
        let mask = canny(&img, 50.0, 150.0).unwrap();
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn vertical_step_yields_thin_vertical_line() {
        let mut img = Image::filled(40, 20, 1, 0);
        for y in 0..20 {
            for x in 20..40 {
                img.set(x, y, 0, 255);
            }
        }
        let mask = canny(&img, 20.0, 60.0).unwrap();
        assert!(mask.count() > 0);
        // All edge pixels sit in a narrow band around the step at x=20.
        let mut cols = std::collections::BTreeSet::new();
        for y in 0..20 {
            for x in 0..40 {
                if mask.get(x, y) {
                    cols.insert(x);
                    assert!((18..=22).contains(&x), "edge at x={x}");
                }
            }
        }
        assert!(cols.len() <= 2, "line too wide: {cols:?}");
        // Interior rows are all marked (continuous line).
        for y in 3..17 {
            assert!((0..40).any(|x| mask.get(x, y)), "gap at row {y}");
        }
    }

    #[test]
    fn two_lane_lines_make_two_components() {
        // Dark road, two bright lane-line dashes ending inside the frame,
        // so each dash contributes one closed edge loop.
        let mut img = Image::filled(60, 30, 1, 40);
        for y in 4..26 {
            for x in 14..18 {
                img.set(x, y, 0, 230);
            }
            for x in 44..48 {
                img.set(x, y, 0, 230);
            }
        }
        let mask = canny(&img, 20.0, 60.0).unwrap();
        let comps = connected_components(&mask);
        assert_eq!(comps, 2, "expected two edge components");
        // Components straddle each line: edge pixels on both sides of the
        // stripe centers (15.5 and 45.5).
        for y in 8..22 {
            assert!((12..=15).any(|x| mask.get(x, y)), "left of line 1, row {y}");
            assert!((16..=20).any(|x| mask.get(x, y)), "right of line 1, row {y}");
            assert!((42..=45).any(|x| mask.get(x, y)), "left of line 2, row {y}");
            assert!((46..=50).any(|x| mask.get(x, y)), "right of line 2, row {y}");
        }
    }

    #[test]
    fn edges_are_subset_of_low_threshold_magnitude() {
        let mut img = Image::filled(50, 30, 1, 10);
        for y in 0..30 {
            for x in 0..50 {
                if (x + 2 * y) % 9 < 3 {
                    img.set(x, y, 0, 200);
                }
            }
        }
        let low = 30.0;
        let mask = canny(&img, low, 90.0).unwrap();
        let mag = sobel_magnitude(&img).unwrap();
        for y in 0..30 {
            for x in 0..50 {
                if mask.get(x, y) {
                    assert!(mag[y * 50 + x] >= low);
                }
            }
        }
    }

    fn connected_components(mask: &Mask) -> usize {
        let mut seen = vec![false; mask.width * mask.height];
        let mut count = 0;
        for y in 0..mask.height {
            for x in 0..mask.width {
                if mask.get(x, y) && !seen[y * mask.width + x] {
                    count += 1;
                    let mut stack = vec![(x, y)];
                    seen[y * mask.width + x] = true;
                    while let Some((cx, cy)) = stack.pop() {
                        for dy in -1..=1isize {
                            for dx in -1..=1isize {
                                let nx = cx as isize + dx;
                                let ny = cy as isize + dy;
                                if nx < 0
                                    || ny < 0
                                    || nx >= mask.width as isize
                                    || ny >= mask.height as isize
                                {
                                    continue;
                                }
                                let (nx, ny) = (nx as usize, ny as usize);
                                if mask.get(nx, ny) && !seen[ny * mask.width + nx] {
                                    seen[ny * mask.width + nx] = true;
                                    stack.push((nx, ny));
                                }
                            }
                        }
                    }
                }
            }
        }
        count
    }
}
