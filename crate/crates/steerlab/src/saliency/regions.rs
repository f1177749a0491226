//! Dynamic left/center/right road-region segmentation.
//!
//! Edges come from Canny inside the ROI; each half of the ROI (split at
//! its vertical midline) contributes one least-squares lane line
//! `x = a*y + b`. Region masks partition the ROI: left of the left line,
//! between the lines, right of the right line. Degenerate detections
//! fall back to default lines through the ROI centroid at the slopes of
//! the ROI's side edges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{canny, Image, Mask, MODEL_INPUT_HEIGHT, MODEL_INPUT_WIDTH};

/// Minimum edge pixels per side for a trusted fit.
const MIN_EDGE_PIXELS: usize = 20;

/// Polygon in fractional image coordinates (x and y in [0,1]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiPolygon {
    pub vertices: Vec<(f64, f64)>,
}

impl RoiPolygon {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Argument("ROI polygon needs at least 3 vertices".into()));
        }
        let poly = RoiPolygon { vertices };
        if poly.self_intersects() {
            return Err(Error::Argument("ROI polygon must be simple".into()));
        }
        Ok(poly)
    }

    /// Road-covering trapezoid: wide at the bottom, narrow just below
    /// the horizon.
    pub fn default_road() -> Self {
        RoiPolygon {
            vertices: vec![(0.05, 1.0), (0.40, 0.45), (0.60, 0.45), (0.95, 1.0)],
        }
    }

    /// Wider trapezoid for short-focal footage where the ego lane splays
    /// toward the frame edges (the synthetic camera does).
    pub fn wide_road() -> Self {
        RoiPolygon {
            vertices: vec![(0.02, 1.0), (0.15, 0.45), (0.85, 0.45), (0.98, 1.0)],
        }
    }

    fn self_intersects(&self) -> bool {
        let n = self.vertices.len();
        let seg = |i: usize| (self.vertices[i], self.vertices[(i + 1) % n]);
        for i in 0..n {
            for j in i + 1..n {
                // Adjacent segments share an endpoint; skip them.
                if j == i || (j + 1) % n == i || (i + 1) % n == j {
                    continue;
                }
                let (a, b) = seg(i);
                let (c, d) = seg(j);
                if segments_intersect(a, b, c, d) {
                    return true;
                }
            }
        }
        false
    }

    pub fn contains(&self, x_frac: f64, y_frac: f64) -> bool {
        // Even-odd ray cast.
        let mut inside = false;
        let n = self.vertices.len();
        let mut j = n - 1;
        for i in 0..n {
            let (xi, yi) = self.vertices[i];
            let (xj, yj) = self.vertices[j];
            if ((yi > y_frac) != (yj > y_frac))
                && x_frac < (xj - xi) * (y_frac - yi) / (yj - yi) + xi
            {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    pub fn rasterize(&self, width: usize, height: usize) -> Mask {
        let mut mask = Mask::new(width, height);
        for y in 0..height {
            let yf = (y as f64 + 0.5) / height as f64;
            for x in 0..width {
                let xf = (x as f64 + 0.5) / width as f64;
                mask.set(x, y, self.contains(xf, yf));
            }
        }
        mask
    }

    /// Area centroid in fractional coordinates.
    pub fn centroid(&self) -> (f64, f64) {
        let n = self.vertices.len();
        let mut area2 = 0.0;
        let (mut cx, mut cy) = (0.0, 0.0);
        for i in 0..n {
            let (x0, y0) = self.vertices[i];
            let (x1, y1) = self.vertices[(i + 1) % n];
            let cross = x0 * y1 - x1 * y0;
            area2 += cross;
            cx += (x0 + x1) * cross;
            cy += (y0 + y1) * cross;
        }
        if area2.abs() < 1e-12 {
            let inv = 1.0 / n as f64;
            return (
                self.vertices.iter().map(|v| v.0).sum::<f64>() * inv,
                self.vertices.iter().map(|v| v.1).sum::<f64>() * inv,
            );
        }
        (cx / (3.0 * area2), cy / (3.0 * area2))
    }

    /// Slope dx/dy (fractional coords) of the polygon edge whose midpoint
    /// is leftmost / rightmost; used for fallback lane lines.
    fn side_slopes(&self) -> (f64, f64) {
        let n = self.vertices.len();
        let mut left = (f64::INFINITY, 0.0);
        let mut right = (f64::NEG_INFINITY, 0.0);
        for i in 0..n {
            let (x0, y0) = self.vertices[i];
            let (x1, y1) = self.vertices[(i + 1) % n];
            if (y1 - y0).abs() < 1e-9 {
                continue; // horizontal edge
            }
            let mid_x = (x0 + x1) / 2.0;
            let slope = (x1 - x0) / (y1 - y0);
            if mid_x < left.0 {
                left = (mid_x, slope);
            }
            if mid_x > right.0 {
                right = (mid_x, slope);
            }
        }
        (left.1, right.1)
    }
}

fn segments_intersect(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let orient = |p: (f64, f64), q: (f64, f64), r: (f64, f64)| {
        (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0)
    };
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    (o1 * o2 < 0.0) && (o3 * o4 < 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskProvenance {
    Detected,
    Fallback,
}

/// Lane line as `x = slope * y + intercept`, pixel coordinates.
#[derive(Clone, Copy, Debug)]
pub struct LaneLine {
    pub slope: f64,
    pub intercept: f64,
}

impl LaneLine {
    pub fn x_at(&self, y: f64) -> f64 {
        self.slope * y + self.intercept
    }
}

/// Left/center/right partition of the analysis footprint.
#[derive(Clone, Debug)]
pub struct RegionMasks {
    pub left: Mask,
    pub center: Mask,
    pub right: Mask,
    pub roi: Mask,
    pub provenance: MaskProvenance,
    pub lines: (LaneLine, LaneLine),
}

fn fit_line(points: &[(f64, f64)]) -> Option<LaneLine> {
    // Least squares of x on y; lane lines are near-vertical in image space.
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mut var_y = 0.0;
    let mut cov = 0.0;
    for &(x, y) in points {
        var_y += (y - mean_y) * (y - mean_y);
        cov += (y - mean_y) * (x - mean_x);
    }
    if var_y < 1e-9 {
        return None;
    }
    let slope = cov / var_y;
    Some(LaneLine {
        slope,
        intercept: mean_x - slope * mean_y,
    })
}

/// Canny-based lane-line detection inside the ROI. Returns the two lines
/// and whether they were detected or defaulted.
pub fn detect_lane_lines(
    gray: &Image,
    roi: &RoiPolygon,
    canny_low: f32,
    canny_high: f32,
) -> Result<((LaneLine, LaneLine), MaskProvenance)> {
    let (w, h) = (gray.width, gray.height);
    let roi_mask = roi.rasterize(w, h);
    let edges = canny(gray, canny_low, canny_high)?;

    // ROI bounding-box vertical midline.
    let xs: Vec<f64> = roi.vertices.iter().map(|v| v.0 * w as f64).collect();
    let x_mid = (xs.iter().cloned().fold(f64::INFINITY, f64::min)
        + xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        / 2.0;

    let mut left_pts = Vec::new();
    let mut right_pts = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if edges.get(x, y) && roi_mask.get(x, y) {
                let p = (x as f64 + 0.5, y as f64 + 0.5);
                if p.0 < x_mid {
                    left_pts.push(p);
                } else {
                    right_pts.push(p);
                }
            }
        }
    }

    let fitted = if left_pts.len() >= MIN_EDGE_PIXELS && right_pts.len() >= MIN_EDGE_PIXELS {
        match (fit_line(&left_pts), fit_line(&right_pts)) {
            (Some(l), Some(r)) => {
                // Lines crossing inside the ROI mean the fit is nonsense.
                let crossing = if (l.slope - r.slope).abs() > 1e-9 {
                    let y_cross = (r.intercept - l.intercept) / (l.slope - r.slope);
                    let x_cross = l.x_at(y_cross);
                    roi.contains(x_cross / w as f64, y_cross / h as f64)
                } else {
                    false
                };
                if crossing {
                    None
                } else {
                    Some((l, r))
                }
            }
            _ => None,
        }
    } else {
        None
    };

    match fitted {
        Some(lines) => Ok((lines, MaskProvenance::Detected)),
        None => {
            let (cx_f, cy_f) = roi.centroid();
            let (cx, cy) = (cx_f * w as f64, cy_f * h as f64);
            let (slope_l, slope_r) = roi.side_slopes();
            let mk = |slope: f64| LaneLine {
                slope,
                intercept: cx - slope * cy,
            };
            Ok(((mk(slope_l), mk(slope_r)), MaskProvenance::Fallback))
        }
    }
}

fn partition(
    footprint: &Mask,
    lines: (LaneLine, LaneLine),
    provenance: MaskProvenance,
) -> RegionMasks {
    let (w, h) = (footprint.width, footprint.height);
    let mut left = Mask::new(w, h);
    let mut center = Mask::new(w, h);
    let mut right = Mask::new(w, h);
    for y in 0..h {
        let yc = y as f64 + 0.5;
        let xl = lines.0.x_at(yc);
        let xr = lines.1.x_at(yc);
        for x in 0..w {
            if !footprint.get(x, y) {
                continue;
            }
            let xc = x as f64 + 0.5;
            if xc < xl {
                left.set(x, y, true);
            } else if xc > xr {
                right.set(x, y, true);
            } else {
                center.set(x, y, true);
            }
        }
    }
    RegionMasks {
        left,
        center,
        right,
        roi: footprint.clone(),
        provenance,
        lines,
    }
}

/// Region masks over the ROI footprint at model-input resolution.
/// Inputs at other sizes are grayscale-resized first.
pub fn lane_region_masks(
    img: &Image,
    roi: &RoiPolygon,
    canny_low: f32,
    canny_high: f32,
) -> Result<RegionMasks> {
    let gray = normalize_to_model_gray(img)?;
    let (lines, provenance) = detect_lane_lines(&gray, roi, canny_low, canny_high)?;
    let footprint = roi.rasterize(gray.width, gray.height);
    Ok(partition(&footprint, lines, provenance))
}

/// Like [`lane_region_masks`] but the footprint is the whole image; the
/// fitted lane lines are extended to the borders.
pub fn lane_region_masks_full_frame(
    img: &Image,
    roi: &RoiPolygon,
    canny_low: f32,
    canny_high: f32,
) -> Result<RegionMasks> {
    let gray = normalize_to_model_gray(img)?;
    let (lines, provenance) = detect_lane_lines(&gray, roi, canny_low, canny_high)?;
    let mut all = Mask::new(gray.width, gray.height);
    all.data.fill(true);
    Ok(partition(&all, lines, provenance))
}

fn normalize_to_model_gray(img: &Image) -> Result<Image> {
    let gray = img.to_gray();
    if gray.width == MODEL_INPUT_WIDTH && gray.height == MODEL_INPUT_HEIGHT {
        return Ok(gray);
    }
    let resized =
        crate::imaging::resize_bilinear(&gray, MODEL_INPUT_WIDTH, MODEL_INPUT_HEIGHT)?;
    Image::new(
        MODEL_INPUT_WIDTH,
        MODEL_INPUT_HEIGHT,
        1,
        resized
            .data
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect(),
    )
}

impl RegionMasks {
    /// Partition invariant: left/center/right are pairwise disjoint and
    /// their union is exactly the footprint.
    pub fn is_partition(&self) -> bool {
        for i in 0..self.roi.data.len() {
            let l = self.left.data[i] as u8;
            let c = self.center.data[i] as u8;
            let r = self.right.data[i] as u8;
            if l + c + r != self.roi.data[i] as u8 {
                return false;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saliency::SEGMENTATION_CANNY_HIGH as HIGH;
    use crate::saliency::SEGMENTATION_CANNY_LOW as LOW;

    #[test]
    fn roi_polygon_validation() {
        assert!(RoiPolygon::new(vec![(0.0, 0.0), (1.0, 1.0)]).is_err());
        // Bowtie self-intersects.
        assert!(RoiPolygon::new(vec![(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)]).is_err());
        assert!(RoiPolygon::new(vec![(0.0, 0.0), (1.0, 0.0), (0.5, 1.0)]).is_ok());
    }

    #[test]
    fn default_roi_rasterizes_to_trapezoid() {
        let roi = RoiPolygon::default_road();
        let mask = roi.rasterize(200, 66);
        assert!(mask.count() > 0);
        // Nothing above the 0.45 line.
        for y in 0..29 {
            for x in 0..200 {
                assert!(!mask.get(x, y), "unexpected ROI at ({x},{y})");
            }
        }
        // Bottom row spans roughly 5%..95%.
        let bottom: Vec<usize> = (0..200).filter(|&x| mask.get(x, 65)).collect();
        assert!(*bottom.first().unwrap() >= 9 && *bottom.first().unwrap() <= 12);
        assert!(*bottom.last().unwrap() >= 187 && *bottom.last().unwrap() <= 190);
    }

    #[test]
    fn featureless_image_falls_back_and_partitions() {
        let img = Image::filled(200, 66, 1, 90);
        let masks = lane_region_masks(&img, &RoiPolygon::default_road(), LOW, HIGH).unwrap();
        assert_eq!(masks.provenance, MaskProvenance::Fallback);
        assert!(masks.is_partition());
        assert!(masks.left.count() > 0);
        assert!(masks.center.count() > 0);
        assert!(masks.right.count() > 0);
    }

    #[test]
    fn painted_lane_lines_are_detected() {
        // Bright lane lines converging toward the top of the frame, as
        // perspective projects them. True lines: x = 70 - 40t and
        // x = 130 + 40t with t = (y-30)/35.
        let mut img = Image::filled(200, 66, 1, 70);
        for y in 28..66 {
            let t = (y as f64 - 30.0) / 35.0;
            for (base, sign) in [(70.0, -1.0), (130.0, 1.0)] {
                let x = (base + sign * 40.0 * t).round() as i64;
                for dx in -1..=1 {
                    let xx = x + dx;
                    if (0..200).contains(&xx) {
                        img.set(xx as usize, y, 0, 240);
                    }
                }
            }
        }
        let roi = RoiPolygon::wide_road();
        let masks = lane_region_masks(&img, &roi, LOW, HIGH).unwrap();
        assert_eq!(masks.provenance, MaskProvenance::Detected);
        assert!(masks.is_partition());

        // The fitted boundaries track the painted lines within 2 px.
        for y in [35usize, 45, 55, 64] {
            let t = (y as f64 + 0.5 - 30.0) / 35.0;
            let true_left = 70.0 - 40.0 * t;
            let true_right = 130.0 + 40.0 * t;
            let fit_left = masks.lines.0.x_at(y as f64 + 0.5);
            let fit_right = masks.lines.1.x_at(y as f64 + 0.5);
            assert!(
                (fit_left - true_left).abs() <= 2.0,
                "row {y}: left fit {fit_left} vs {true_left}"
            );
            assert!(
                (fit_right - true_right).abs() <= 2.0,
                "row {y}: right fit {fit_right} vs {true_right}"
            );
        }
    }

    #[test]
    fn mirrored_image_swaps_left_and_right_spread() {
        use crate::dataset::{render_scene, GlyphKind, Handedness, SceneParams};
        use crate::saliency::{saliency_spread, SaliencyMap};

        let scene = SceneParams {
            handedness: Handedness::Left,
            curvature: 0.004,
            offset_lanes: 0.15,
            cues: true,
            glyph: Some(GlyphKind::Flag),
            brightness: 0,
        };
        let img = render_scene(&scene, 640, 400);
        let a_in = crate::imaging::preprocess(&img, 133, false).unwrap();
        let b_in = crate::imaging::preprocess(&crate::imaging::hflip(&img), 133, false).unwrap();
        let roi = RoiPolygon::wide_road();
        let a = lane_region_masks(&a_in.luma_image(), &roi, LOW, HIGH).unwrap();
        let b = lane_region_masks(&b_in.luma_image(), &roi, LOW, HIGH).unwrap();
        assert_eq!(a.provenance, MaskProvenance::Detected);
        assert_eq!(b.provenance, MaskProvenance::Detected);
        assert!(a.is_partition() && b.is_partition());

        // An asymmetric saliency map, mirrored alongside the image, must
        // swap the left/right spread within half a percentage point.
        let map = SaliencyMap {
            values: (0..200 * 66)
                .map(|i| {
                    let x = (i % 200) as f32;
                    let y = (i / 200) as f32;
                    (x * 0.01 + y * 0.002).exp()
                })
                .collect(),
            source: "fixture".into(),
            model_tag: String::new(),
        };
        let sa = saliency_spread(&map, &a).unwrap();
        let sb = saliency_spread(&map.mirrored(), &b).unwrap();
        assert!(
            (sa.left_pct - sb.right_pct).abs() < 0.5,
            "left {} vs mirrored right {}",
            sa.left_pct,
            sb.right_pct
        );
        assert!(
            (sa.right_pct - sb.left_pct).abs() < 0.5,
            "right {} vs mirrored left {}",
            sa.right_pct,
            sb.left_pct
        );
    }
}
