use super::{FloatImage, Image, ModelInput, MODEL_INPUT_HEIGHT, MODEL_INPUT_WIDTH};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Removes `rows` rows from the top of the image.
pub fn crop_top(img: &Image, rows: usize) -> Result<Image> {
    if rows >= img.height {
        return Err(Error::Argument(format!(
            "cannot crop {rows} rows from a {}-row image",
            img.height
        )));
    }
    let stride = img.width * img.channels;
    Image::new(
        img.width,
        img.height - rows,
        img.channels,
        img.data[rows * stride..].to_vec(),
    )
}

/// Mirrors columns: `out[y, x] = in[y, width-1-x]`.
pub fn hflip(img: &Image) -> Image {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..img.channels {
                out.set(x, y, c, img.sample(img.width - 1 - x, y, c));
            }
        }
    }
    out
}

/// Bilinear resize with half-pixel-center source mapping
/// `src = (dst + 0.5) * scale - 0.5`, clamped to borders.
/// Coordinate and blend math run in f64.
pub fn resize_bilinear(img: &Image, out_w: usize, out_h: usize) -> Result<FloatImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Argument("resize target must be positive".into()));
    }
    let scale_x = img.width as f64 / out_w as f64;
    let scale_y = img.height as f64 / out_h as f64;
    let mut data = vec![0.0f32; out_w * out_h * img.channels];

    for dy in 0..out_h {
        let sy = ((dy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (img.height - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let wy = sy - y0 as f64;
        for dx in 0..out_w {
            let sx = ((dx as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (img.width - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            let wx = sx - x0 as f64;
            for c in 0..img.channels {
                let p00 = img.sample(x0, y0, c) as f64;
                let p10 = img.sample(x1, y0, c) as f64;
                let p01 = img.sample(x0, y1, c) as f64;
                let p11 = img.sample(x1, y1, c) as f64;
                let top = p00 + (p10 - p00) * wx;
                let bottom = p01 + (p11 - p01) * wx;
                data[(dy * out_w + dx) * img.channels + c] = (top + (bottom - top) * wy) as f32;
            }
        }
    }
    Ok(FloatImage {
        width: out_w,
        height: out_h,
        channels: img.channels,
        data,
    })
}

/// Full-range BT.601 analog conversion on unit-range RGB:
/// `Y = 0.299r + 0.587g + 0.114b`, `U = 0.492(b - Y)`, `V = 0.877(r - Y)`.
/// Values are returned unclamped; [`ModelInput`] applies the chroma clamp.
pub fn rgb_to_yuv(rgb: &FloatImage) -> Result<FloatImage> {
    if rgb.channels != 3 {
        return Err(Error::Argument(format!(
            "rgb_to_yuv needs 3 channels, got {}",
            rgb.channels
        )));
    }
    let mut data = vec![0.0f32; rgb.data.len()];
    for (dst, px) in data.chunks_exact_mut(3).zip(rgb.data.chunks_exact(3)) {
        let (r, g, b) = (px[0], px[1], px[2]);
        let y = 0.299 * r + 0.587 * g + 0.114 * b;
        dst[0] = y;
        dst[1] = 0.492 * (b - y);
        dst[2] = 0.877 * (r - y);
    }
    Ok(FloatImage {
        width: rgb.width,
        height: rgb.height,
        channels: 3,
        data,
    })
}

/// Full pipeline: crop_top -> optional hflip -> resize to 200x66 ->
/// scale to [0,1] -> YUV -> planar tensor with chroma clamped to [-0.5, 0.5].
pub fn preprocess(img: &Image, crop_rows: usize, flip: bool) -> Result<ModelInput> {
    if img.channels != 3 {
        return Err(Error::Argument("preprocess expects an RGB frame".into()));
    }
    let cropped = crop_top(img, crop_rows)?;
    let oriented = if flip { hflip(&cropped) } else { cropped };
    let resized = resize_bilinear(&oriented, MODEL_INPUT_WIDTH, MODEL_INPUT_HEIGHT)?;
    let unit = FloatImage {
        width: resized.width,
        height: resized.height,
        channels: 3,
        data: resized.data.iter().map(|&v| v / 255.0).collect(),
    };
    let yuv = rgb_to_yuv(&unit)?;

    let (h, w) = (MODEL_INPUT_HEIGHT, MODEL_INPUT_WIDTH);
    let mut planes = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * 3;
            planes[y * w + x] = yuv.data[base].clamp(0.0, 1.0);
            planes[(h + y) * w + x] = yuv.data[base + 1].clamp(-0.5, 0.5);
            planes[(2 * h + y) * w + x] = yuv.data[base + 2].clamp(-0.5, 0.5);
        }
    }
    ModelInput::from_tensor(Tensor::new(vec![3, h, w], planes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(w: usize, h: usize) -> Image {
        let mut data = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                data.push((x * 7 + y * 13) as u8);
                data.push((x * 3 + y * 5) as u8);
                data.push((x + y) as u8);
            }
        }
        Image::new(w, h, 3, data).unwrap()
    }

    #[test]
    fn crop_zero_rows_is_identity() {
        let img = gradient_image(4, 4);
        assert_eq!(crop_top(&img, 0).unwrap(), img);
    }

    #[test]
    fn crop_keeps_bottom_rows_verbatim() {
        let img = gradient_image(4, 4);
        let out = crop_top(&img, 1).unwrap();
        assert_eq!(out.height, 3);
        for y in 0..3 {
            for x in 0..4 {
                for c in 0..3 {
                    assert_eq!(out.sample(x, y, c), img.sample(x, y + 1, c));
                }
            }
        }
        assert!(crop_top(&img, 4).is_err());
    }

    #[test]
    fn crop_full_frame_dimensions() {
        let img = Image::filled(1920, 1200, 3, 90);
        let out = crop_top(&img, 400).unwrap();
        assert_eq!((out.width, out.height), (1920, 800));
    }

    #[test]
    fn hflip_row_and_involution() {
        let img = Image::new(3, 1, 1, vec![1, 2, 3]).unwrap();
        assert_eq!(hflip(&img).data, vec![3, 2, 1]);

        let img = gradient_image(7, 5);
        assert_eq!(hflip(&hflip(&img)), img);

        let sym = Image::new(3, 1, 1, vec![4, 9, 4]).unwrap();
        assert_eq!(hflip(&sym), sym);
    }

    #[test]
    fn resize_same_size_is_identity() {
        let img = gradient_image(6, 5);
        let out = resize_bilinear(&img, 6, 5).unwrap();
        for (i, &v) in out.data.iter().enumerate() {
            assert!((v - img.data[i] as f32).abs() < 1e-6);
        }
    }

    #[test]
    fn resize_checkerboard_average() {
        let img = Image::new(2, 2, 1, vec![0, 255, 255, 0]).unwrap();
        let out = resize_bilinear(&img, 1, 1).unwrap();
        assert!((out.data[0] - 127.5).abs() < 1e-6);
    }

    #[test]
    fn resize_matches_independent_scalar_oracle() {
        // Per-pixel reference written from the mapping definition alone.
        let img = gradient_image(37, 23);
        let (ow, oh) = (11, 7);
        let out = resize_bilinear(&img, ow, oh).unwrap();
        for dy in 0..oh {
            for dx in 0..ow {
                for c in 0..3 {
                    let sx = ((dx as f64 + 0.5) * (37.0 / ow as f64) - 0.5).clamp(0.0, 36.0);
                    let sy = ((dy as f64 + 0.5) * (23.0 / oh as f64) - 0.5).clamp(0.0, 22.0);
                    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                    let (x1, y1) = ((x0 + 1).min(36), (y0 + 1).min(22));
                    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                    let expect = img.sample(x0, y0, c) as f64 * (1.0 - fx) * (1.0 - fy)
                        + img.sample(x1, y0, c) as f64 * fx * (1.0 - fy)
                        + img.sample(x0, y1, c) as f64 * (1.0 - fx) * fy
                        + img.sample(x1, y1, c) as f64 * fx * fy;
                    let got = out.sample(dx, dy, c) as f64;
                    assert!((got - expect).abs() < 0.5 / 255.0, "{got} vs {expect}");
                }
            }
        }
    }

    #[test]
    fn yuv_primaries() {
        let px = |r: f32, g: f32, b: f32| FloatImage {
            width: 1,
            height: 1,
            channels: 3,
            data: vec![r, g, b],
        };
        let black = rgb_to_yuv(&px(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(black.data, vec![0.0, 0.0, 0.0]);

        let white = rgb_to_yuv(&px(1.0, 1.0, 1.0)).unwrap();
        assert!((white.data[0] - 1.0).abs() < 1e-6);
        assert!(white.data[1].abs() < 1e-6);
        assert!(white.data[2].abs() < 1e-6);

        let red = rgb_to_yuv(&px(1.0, 0.0, 0.0)).unwrap();
        assert!((red.data[0] - 0.299).abs() < 1e-6);
        assert!((red.data[1] - (-0.147_108)).abs() < 1e-6);
        assert!((red.data[2] - 0.614_777).abs() < 1e-6);
    }

    #[test]
    fn preprocess_shape_and_gray_frame() {
        let img = Image::filled(1920, 1200, 3, 128);
        let out = preprocess(&img, 400, false).unwrap();
        assert_eq!(out.tensor().shape(), &[3, 66, 200]);
        let y0 = out.plane(0)[0];
        for &v in out.plane(0) {
            assert!((v - y0).abs() < 1e-6);
        }
        for c in 1..3 {
            for &v in out.plane(c) {
                assert!(v.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn preprocess_flip_commutes_with_mirroring() {
        let img = gradient_image(64, 40);
        let flipped = preprocess(&img, 10, true).unwrap();
        let plain = preprocess(&img, 10, false).unwrap();
        let mirrored = plain.mirrored();
        for c in 0..3 {
            for (a, b) in flipped.plane(c).iter().zip(mirrored.plane(c)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn preprocess_output_ranges() {
        let img = gradient_image(100, 60);
        let out = preprocess(&img, 5, false).unwrap();
        for &v in out.plane(0) {
            assert!((0.0..=1.0).contains(&v));
        }
        for c in 1..3 {
            for &v in out.plane(c) {
                assert!((-0.5..=0.5).contains(&v));
            }
        }
    }
}
