//! Pixel-domain primitives.
//!
//! Every image is carried as normalized `f64` samples in `[0, 1]`, row-major,
//! interleaved by channel. Conversions to and from integer sample formats only
//! happen at the I/O boundary (`load_image`, `save_png`, `encode_png`).

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Tile repetitions per axis used to lift a 7x7 digit to a 128x128 input.
pub const MNIST_REPEATS: usize = 18;
/// Output side length of [`tile_mnist`].
pub const MNIST_TARGET_SIDE: usize = 128;
/// Expected side length of the low-resolution digit.
pub const MNIST_DIGIT_SIDE: usize = 7;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported or undecodable image: {0}")]
    Format(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid image data: {0}")]
    InvalidData(String),
}

/// Output bit depth for PNG encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// An `H x W x C` image with samples in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image, clamping every sample into `[0, 1]`.
    ///
    /// Fails if `channels` is not 1 or 3, if the buffer length disagrees with
    /// the dimensions, or if any sample is NaN.
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        mut data: Vec<f64>,
    ) -> Result<Self, ImageError> {
        if channels != 1 && channels != 3 {
            return Err(ImageError::InvalidData(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidData("zero-sized image".into()));
        }
        if data.len() != width * height * channels {
            return Err(ImageError::InvalidData(format!(
                "buffer holds {} samples, expected {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        for v in data.iter_mut() {
            if v.is_nan() {
                return Err(ImageError::InvalidData("NaN sample".into()));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// A single-channel image filled with `value`.
    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::filled(width, height, 1, value)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(channels == 1 || channels == 3);
        assert!(width > 0 && height > 0);
        Self {
            width,
            height,
            channels,
            data: vec![value.clamp(0.0, 1.0); width * height * channels],
        }
    }

    /// Single-channel image sampled from `f(x, y)`; results are clamped.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0);
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_gray(&self) -> bool {
        self.channels == 1
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Shorthand for channel 0.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.get(x, y, 0)
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn check_same_shape(&self, other: &Image) -> Result<(), ImageError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(ImageError::ShapeMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// Applies `f` to every sample; the result is clamped into `[0, 1]`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        }
    }

    /// SHA-256 over the dimensions and the exact bit patterns of every sample.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update((self.width as u64).to_le_bytes());
        hasher.update((self.height as u64).to_le_bytes());
        hasher.update((self.channels as u64).to_le_bytes());
        for v in &self.data {
            hasher.update(v.to_bits().to_le_bytes());
        }
        hasher.finalize().into()
    }

    pub fn content_hash_hex(&self) -> String {
        hex::encode(self.content_hash())
    }
}

/// Loads an 8- or 16-bit PNG or binary PNM file, scaling samples into `[0, 1]`.
///
/// Alpha channels are dropped. 8-bit value `v` maps to `v / 255`, 16-bit to
/// `v / 65535`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_image(&bytes)
}

/// Decodes an in-memory PNG/PNM file. See [`load_image`].
pub fn decode_image(bytes: &[u8]) -> Result<Image, ImageError> {
    let format = image::guess_format(bytes).map_err(|e| ImageError::Format(e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(ImageError::Format(format!("unsupported format {format:?}")));
    }
    let decoded = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| ImageError::Format(e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, data): (usize, Vec<f64>) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, scale8(buf.as_raw())),
        DynamicImage::ImageLumaA8(_) => (1, scale8(decoded.to_luma8().as_raw())),
        DynamicImage::ImageRgb8(buf) => (3, scale8(buf.as_raw())),
        DynamicImage::ImageRgba8(_) => (3, scale8(decoded.to_rgb8().as_raw())),
        DynamicImage::ImageLuma16(buf) => (1, scale16(buf.as_raw())),
        DynamicImage::ImageLumaA16(_) => (1, scale16(decoded.to_luma16().as_raw())),
        DynamicImage::ImageRgb16(buf) => (3, scale16(buf.as_raw())),
        DynamicImage::ImageRgba16(_) => (3, scale16(decoded.to_rgb16().as_raw())),
        other => {
            return Err(ImageError::Format(format!(
                "unsupported sample type {:?}",
                other.color()
            )))
        }
    };
    Image::new(w, h, channels, data)
}

fn scale8(raw: &[u8]) -> Vec<f64> {
    raw.iter().map(|&v| f64::from(v) / 255.0).collect()
}

fn scale16(raw: &[u16]) -> Vec<f64> {
    raw.iter().map(|&v| f64::from(v) / 65535.0).collect()
}

/// Encodes `img` as PNG bytes.
pub fn encode_png(img: &Image, depth: BitDepth) -> Result<Vec<u8>, ImageError> {
    let (w, h) = (img.width as u32, img.height as u32);
    let dynamic = match (depth, img.channels) {
        (BitDepth::Eight, 1) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, quantize8(&img.data)).expect("sized"),
        ),
        (BitDepth::Eight, _) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, quantize8(&img.data)).expect("sized"),
        ),
        (BitDepth::Sixteen, 1) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, quantize16(&img.data)).expect("sized"),
        ),
        (BitDepth::Sixteen, _) => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, quantize16(&img.data)).expect("sized"),
        ),
    };
    let mut out = Cursor::new(Vec::new());
    dynamic
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| ImageError::Format(e.to_string()))?;
    Ok(out.into_inner())
}

/// Writes `img` as a PNG file.
pub fn save_png(img: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<(), ImageError> {
    let path = path.as_ref();
    let bytes = encode_png(img, depth)?;
    std::fs::write(path, bytes).map_err(|source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn quantize8(data: &[f64]) -> Vec<u8> {
    data.iter().map(|&v| (v * 255.0).round() as u8).collect()
}

fn quantize16(data: &[f64]) -> Vec<u16> {
    data.iter().map(|&v| (v * 65535.0).round() as u16).collect()
}

/// Reduces a 3-channel image to luma; single-channel input is returned as is.
pub fn to_grayscale(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|px| {
            (LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2])
                .clamp(0.0, 1.0)
        })
        .collect();
    Image {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    }
}

/// Peak signal-to-noise ratio with peak value 1.0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Psnr {
    Decibels(f64),
    /// The images are identical (MSE = 0).
    PerfectMatch,
}

impl Psnr {
    pub fn decibels(self) -> Option<f64> {
        match self {
            Psnr::Decibels(db) => Some(db),
            Psnr::PerfectMatch => None,
        }
    }
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, ImageError> {
    a.check_same_shape(b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.data.len() as f64)
}

pub fn psnr(a: &Image, b: &Image) -> Result<Psnr, ImageError> {
    let mse = mse(a, b)?;
    if mse == 0.0 {
        Ok(Psnr::PerfectMatch)
    } else {
        Ok(Psnr::Decibels(10.0 * (1.0 / mse).log10()))
    }
}

/// Per-pixel arithmetic mean of same-shaped images.
pub fn ensemble_average<I: AsRef<Image>>(candidates: &[I]) -> Result<Image, ImageError> {
    let first = candidates.first().ok_or(ImageError::EmptyInput)?.as_ref();
    for c in &candidates[1..] {
        first.check_same_shape(c.as_ref())?;
    }
    let n = candidates.len() as f64;
    let mut acc = vec![0.0; first.data.len()];
    for c in candidates {
        for (a, v) in acc.iter_mut().zip(&c.as_ref().data) {
            *a += v;
        }
    }
    for a in acc.iter_mut() {
        *a = (*a / n).clamp(0.0, 1.0);
    }
    Ok(Image {
        width: first.width,
        height: first.height,
        channels: first.channels,
        data: acc,
    })
}

impl AsRef<Image> for Image {
    fn as_ref(&self) -> &Image {
        self
    }
}

/// Tiles a 7x7 single-channel digit `repeats` times per axis, then replicates
/// the trailing rows and columns of the tiled grid until the output reaches
/// `target x target`.
///
/// With the defaults (18 repeats, target 128) the grid is 126x126 and output
/// rows/columns 126 and 127 copy grid rows/columns 124 and 125.
pub fn tile_mnist(digit: &Image, repeats: usize, target: usize) -> Result<Image, ImageError> {
    if digit.width != MNIST_DIGIT_SIDE || digit.height != MNIST_DIGIT_SIDE || digit.channels != 1 {
        return Err(ImageError::ShapeMismatch(format!(
            "expected a 7x7 single-channel digit, got {}x{}x{}",
            digit.width, digit.height, digit.channels
        )));
    }
    let tiled = MNIST_DIGIT_SIDE * repeats;
    if repeats == 0 || target < tiled || target - tiled > tiled {
        return Err(ImageError::ShapeMismatch(format!(
            "cannot lift a {tiled}x{tiled} grid to {target}x{target}"
        )));
    }
    let extra = target - tiled;
    // Output coordinate -> grid coordinate; the trailing `extra` grid lines repeat.
    let grid = |i: usize| if i < tiled { i } else { i - extra };
    Ok(Image::from_fn(target, target, |x, y| {
        digit.at(grid(x) % MNIST_DIGIT_SIDE, grid(y) % MNIST_DIGIT_SIDE)
    }))
}
