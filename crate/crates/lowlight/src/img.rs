//! Image representation, file I/O, color conversion and patch extraction.
//!
//! All pixel data is 32-bit floating point in `[0,1]`, stored row-major.
//! Inputs are 8-bit PNG or binary PPM (P6); outputs are always PNG.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// BT.601 luma weights.
const LUMA_R: f32 = 0.299;
const LUMA_G: f32 = 0.587;
const LUMA_B: f32 = 0.114;

/// A single-channel image: row-major samples in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ImagePlane {
    /// Builds a plane from raw samples, clamping every sample to `[0,1]`.
    pub fn new(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension);
        }
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "plane data length {} != {}x{}",
                data.len(),
                width,
                height
            )));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    pub fn mean(&self) -> f32 {
        let sum: f64 = self.data.iter().map(|&v| v as f64).sum();
        (sum / self.data.len() as f64) as f32
    }
}

/// A three-channel image; all channels share dimensions, samples in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    /// Channel-major: `channels[c][y * width + x]`.
    channels: [Vec<f32>; 3],
}

impl RgbImage {
    /// Builds an image from three channel buffers, clamping samples to `[0,1]`.
    pub fn new(width: usize, height: usize, mut channels: [Vec<f32>; 3]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension);
        }
        for ch in &mut channels {
            if ch.len() != width * height {
                return Err(Error::ShapeMismatch(format!(
                    "channel length {} != {}x{}",
                    ch.len(),
                    width,
                    height
                )));
            }
            for v in ch.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
        Ok(Self {
            width,
            height,
            channels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        let n = width * height;
        Self::new(width, height, [vec![0.0; n], vec![0.0; n], vec![0.0; n]])
    }

    /// Constant-valued image, one value per channel.
    pub fn splat(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        let n = width * height;
        Self::new(
            width,
            height,
            [vec![rgb[0]; n], vec![rgb[1]; n], vec![rgb[2]; n]],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.channels[c]
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = y * self.width + x;
        [self.channels[0][i], self.channels[1][i], self.channels[2][i]]
    }

    /// Applies `f` to every sample, clamping the result to `[0,1]`.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        let channels = [
            self.channels[0].iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
            self.channels[1].iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
            self.channels[2].iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        ];
        Self {
            width: self.width,
            height: self.height,
            channels,
        }
    }
}

/// Per-pixel BT.601 luma: `0.299 R + 0.587 G + 0.114 B`.
pub fn luminance(img: &RgbImage) -> ImagePlane {
    let n = img.width * img.height;
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        data.push(
            LUMA_R * img.channels[0][i] + LUMA_G * img.channels[1][i] + LUMA_B * img.channels[2][i],
        );
    }
    // Weights sum to 1, inputs are in [0,1]; no clamp needed beyond rounding.
    ImagePlane {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Copies the `size`x`size` sub-image with top-left corner `(x, y)`.
pub fn crop_patch(img: &RgbImage, x: usize, y: usize, size: usize) -> Result<RgbImage> {
    if size == 0 {
        return Err(Error::ZeroDimension);
    }
    if x + size > img.width || y + size > img.height {
        return Err(Error::OutOfBounds {
            x,
            y,
            size,
            width: img.width,
            height: img.height,
        });
    }
    let mut channels = [
        Vec::with_capacity(size * size),
        Vec::with_capacity(size * size),
        Vec::with_capacity(size * size),
    ];
    for (c, out) in channels.iter_mut().enumerate() {
        for row in 0..size {
            let start = (y + row) * img.width + x;
            out.extend_from_slice(&img.channels[c][start..start + size]);
        }
    }
    Ok(RgbImage {
        width: size,
        height: size,
        channels,
    })
}

/// Loads an 8-bit PNG or binary PPM (P6) image; samples map to `[0,1]` by
/// `value / 255`. Grayscale sources are replicated to three channels, alpha
/// is discarded.
pub fn load_image(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::ImageFormat {
        path: path.to_path_buf(),
        reason: format!("unreadable: {e}"),
    })?;
    if bytes.starts_with(b"P6") {
        decode_ppm(path, &bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(path, &bytes)
    } else {
        Err(Error::ImageFormat {
            path: path.to_path_buf(),
            reason: "unsupported format (expected PNG or binary PPM P6)".into(),
        })
    }
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<RgbImage> {
    let decoded = ::image::load_from_memory_with_format(bytes, ::image::ImageFormat::Png)
        .map_err(|e| Error::ImageFormat {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::ZeroDimension);
    }
    from_rgb8(w, h, rgb.as_raw())
}

fn decode_ppm(path: &Path, bytes: &[u8]) -> Result<RgbImage> {
    let bad = |reason: &str| Error::ImageFormat {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut pos = 2; // past "P6"
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and '#' comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(bad("malformed header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| bad("header field out of range"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(bad("only 8-bit PPM (maxval 255) is supported"));
    }
    if w == 0 || h == 0 {
        return Err(Error::ZeroDimension);
    }
    // single whitespace byte after maxval
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(bad("missing whitespace after maxval")),
    }
    let need = w * h * 3;
    let raster = bytes.get(pos..pos + need).ok_or_else(|| bad("truncated pixel data"))?;
    from_rgb8(w, h, raster)
}

fn from_rgb8(w: usize, h: usize, raster: &[u8]) -> Result<RgbImage> {
    let n = w * h;
    let mut channels = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for px in raster.chunks_exact(3) {
        channels[0].push(px[0] as f32 / 255.0);
        channels[1].push(px[1] as f32 / 255.0);
        channels[2].push(px[2] as f32 / 255.0);
    }
    Ok(RgbImage {
        width: w,
        height: h,
        channels,
    })
}

/// Writes the image as an 8-bit RGB PNG. Samples are clamped to `[0,1]` and
/// quantized by `round(v * 255)`.
pub fn save_image(img: &RgbImage, path: &Path) -> Result<()> {
    let n = img.width * img.height;
    let mut raster = Vec::with_capacity(n * 3);
    for i in 0..n {
        for c in 0..3 {
            let v = img.channels[c][i].clamp(0.0, 1.0);
            raster.push((v * 255.0).round() as u8);
        }
    }
    let buf: ::image::RgbImage =
        ::image::ImageBuffer::from_raw(img.width as u32, img.height as u32, raster)
            .expect("raster length matches dimensions");
    buf.save_with_format(path, ::image::ImageFormat::Png)
        .map_err(|e| match e {
            ::image::ImageError::IoError(io) => Error::Io(io),
            other => Error::ImageFormat {
                path: path.to_path_buf(),
                reason: other.to_string(),
            },
        })
}

/// Packs an image into a `[3, H, W]` tensor.
pub fn image_to_tensor(img: &RgbImage) -> Tensor {
    let mut data = Vec::with_capacity(3 * img.width * img.height);
    for c in 0..3 {
        data.extend_from_slice(&img.channels[c]);
    }
    Tensor::from_vec(vec![3, img.height, img.width], data).expect("consistent dimensions")
}

/// Stacks same-sized images into a `[N, 3, H, W]` tensor.
pub fn batch_to_tensor(imgs: &[RgbImage]) -> Result<Tensor> {
    let first = imgs.first().ok_or_else(|| Error::Config("empty batch".into()))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(imgs.len() * 3 * w * h);
    for img in imgs {
        if img.width != w || img.height != h {
            return Err(Error::ShapeMismatch(format!(
                "batch images disagree: {}x{} vs {}x{}",
                img.width, img.height, w, h
            )));
        }
        for c in 0..3 {
            data.extend_from_slice(&img.channels[c]);
        }
    }
    Tensor::from_vec(vec![imgs.len(), 3, h, w], data)
}

/// Unpacks a `[3, H, W]` (or `[1, 3, H, W]`) tensor into an image, clamping
/// samples to `[0,1]`.
pub fn tensor_to_image(t: &Tensor) -> Result<RgbImage> {
    let shape = t.shape();
    let (c, h, w) = match shape {
        [3, h, w] => (3, *h, *w),
        [1, 3, h, w] => (3, *h, *w),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "expected [3,H,W] or [1,3,H,W], got {other:?}"
            )))
        }
    };
    let _ = c;
    let plane = h * w;
    let data = t.data();
    let channels = [
        data[0..plane].to_vec(),
        data[plane..2 * plane].to_vec(),
        data[2 * plane..3 * plane].to_vec(),
    ];
    RgbImage::new(w, h, channels)
}
