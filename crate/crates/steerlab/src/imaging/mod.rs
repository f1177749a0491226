//! Frame preprocessing and edge detection.
//!
//! The model consumes 3x66x200 YUV tensors produced by `preprocess`:
//! crop the sky off the top, optionally mirror, bilinear-resize to
//! 200x66, scale to unit range, convert to full-range BT.601 YUV.

mod canny;
mod io;
mod ops;

pub use canny::{canny, sobel_magnitude, DEFAULT_CANNY_HIGH, DEFAULT_CANNY_LOW};
pub use io::{read_image, read_pgm, read_ppm, write_pgm, write_ppm};
pub use ops::{crop_top, hflip, preprocess, resize_bilinear, rgb_to_yuv};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MODEL_INPUT_WIDTH: usize = 200;
pub const MODEL_INPUT_HEIGHT: usize = 66;

/// 8-bit image, row-major, interleaved channels (1 = gray, 3 = RGB).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument("image dimensions must be positive".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Argument(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "{width}x{height}x{channels} image needs {} bytes, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    #[inline]
    pub fn sample(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Rec. 601 luma; identity for single-channel images.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.width * self.height);
        for px in self.data.chunks_exact(3) {
            let y = 0.299 * px[0] as f32 + 0.587 * px[1] as f32 + 0.114 * px[2] as f32;
            data.push(y.round().clamp(0.0, 255.0) as u8);
        }
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }
}

/// Float image with the same interleaved layout as [`Image`].
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    #[inline]
    pub fn sample(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

/// Boolean pixel mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// 0/255 grayscale rendering for PGM export.
    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        }
    }

    pub fn mirrored(&self) -> Mask {
        let mut out = Mask::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(x, y, self.get(self.width - 1 - x, y));
            }
        }
        out
    }
}

/// Network input: planar YUV tensor, shape 3x66x200.
/// Y is in [0,1]; U and V are clamped to [-0.5, 0.5].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    tensor: Tensor,
}

impl ModelInput {
    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        if tensor.shape() != [3, MODEL_INPUT_HEIGHT, MODEL_INPUT_WIDTH] {
            return Err(Error::Dimension(format!(
                "model input must be 3x{MODEL_INPUT_HEIGHT}x{MODEL_INPUT_WIDTH}, got {:?}",
                tensor.shape()
            )));
        }
        Ok(ModelInput { tensor })
    }

    /// All-black frame (Y=0, U=0, V=0); the attribution baseline.
    pub fn black() -> Self {
        ModelInput {
            tensor: Tensor::zeros(vec![3, MODEL_INPUT_HEIGHT, MODEL_INPUT_WIDTH]),
        }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = MODEL_INPUT_HEIGHT * MODEL_INPUT_WIDTH;
        &self.tensor.data()[c * n..(c + 1) * n]
    }

    /// Columns mirrored in every plane.
    pub fn mirrored(&self) -> ModelInput {
        let (h, w) = (MODEL_INPUT_HEIGHT, MODEL_INPUT_WIDTH);
        let src = self.tensor.data();
        let mut out = vec![0.0f32; 3 * h * w];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    out[(c * h + y) * w + x] = src[(c * h + y) * w + (w - 1 - x)];
                }
            }
        }
        ModelInput {
            tensor: Tensor::new(vec![3, h, w], out).unwrap(),
        }
    }

    /// Y plane quantized to 8 bits, for edge detection aligned with the
    /// model's view of the frame.
    pub fn luma_image(&self) -> Image {
        let data = self
            .plane(0)
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        Image {
            width: MODEL_INPUT_WIDTH,
            height: MODEL_INPUT_HEIGHT,
            channels: 1,
            data,
        }
    }
}
