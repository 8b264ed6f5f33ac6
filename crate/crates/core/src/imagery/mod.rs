//! Image containers, development pipelines and crop selection.
//!
//! Images are single-channel (luminance) grids of real intensities in
//! [0, 255]. Development applies a sequence of spatial operations with
//! valid-region convolutions only: no padding, so every kernel pass shrinks
//! the image by its margin. JPEG compression is a separate stage handled by
//! [`crate::jpegcodec`].

mod catalog;
mod pgm;
mod synth;

pub use catalog::{builtin_kernel, default_catalog, parse_catalog, write_catalog, CatalogEntry};
pub use pgm::{read_pgm, write_pgm, PgmDepth};
pub use synth::{generate_synthetic_raw, heteroscedastic_noise};

use crate::error::{Error, Result};

/// Single-channel image with real-valued intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    /// Builds an image from row-major pixel data. Dimensions must be positive
    /// and every value finite.
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if pixels.len() != height * width {
            return Err(Error::dims(format!(
                "pixel buffer has {} values, expected {}",
                pixels.len(),
                height * width
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        Ok(GrayImage {
            height,
            width,
            pixels,
        })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        GrayImage::new(height, width, vec![value; height * width]).expect("constant image")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.pixels[r * self.width + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.pixels[r * self.width..(r + 1) * self.width]
    }

    /// Clamp all intensities into [0, 255] in place.
    pub fn clip(&mut self) {
        for v in &mut self.pixels {
            *v = v.clamp(0.0, 255.0);
        }
    }

    /// Fraction of pixels sitting exactly at the clip bounds.
    pub fn saturation_fraction(&self) -> f64 {
        let sat = self
            .pixels
            .iter()
            .filter(|&&v| v <= 0.0 || v >= 255.0)
            .count();
        sat as f64 / self.pixels.len() as f64
    }

    /// Crop with top-left corner `(r0, c0)`.
    pub fn crop(&self, r0: usize, c0: usize, height: usize, width: usize) -> Result<GrayImage> {
        if r0 + height > self.height || c0 + width > self.width {
            return Err(Error::dims(format!(
                "crop {height}x{width} at ({r0},{c0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(height * width);
        for r in r0..r0 + height {
            pixels.extend_from_slice(&self.row(r)[c0..c0 + width]);
        }
        GrayImage::new(height, width, pixels)
    }

    /// Valid-region cross-correlation with `kernel` (applied as written, no
    /// flip). Output shrinks by the kernel margins.
    pub fn convolve_valid(&self, kernel: &Kernel) -> Result<GrayImage> {
        let k = kernel.size();
        if k > self.height || k > self.width {
            return Err(Error::dims(format!(
                "kernel {k}x{k} larger than image {}x{}",
                self.height, self.width
            )));
        }
        let oh = self.height - k + 1;
        let ow = self.width - k + 1;
        let mut out = vec![0.0; oh * ow];
        for r in 0..oh {
            for c in 0..ow {
                let mut acc = 0.0;
                for u in 0..k {
                    let img_row = &self.row(r + u)[c..c + k];
                    let ker_row = kernel.row(u);
                    for (iv, kv) in img_row.iter().zip(ker_row) {
                        acc += iv * kv;
                    }
                }
                out[r * ow + c] = acc;
            }
        }
        GrayImage::new(oh, ow, out)
    }

    /// Mean of per-block sample variances on the 8x8 partition grid.
    /// Used as the texture score for crop selection.
    pub fn block_variance_score(&self) -> f64 {
        let bh = self.height / 8;
        let bw = self.width / 8;
        if bh == 0 || bw == 0 {
            // Degenerate, fall back to global variance.
            return sample_variance(&self.pixels);
        }
        let mut total = 0.0;
        for br in 0..bh {
            for bc in 0..bw {
                let mut vals = [0.0; 64];
                for u in 0..8 {
                    let row = &self.row(br * 8 + u)[bc * 8..bc * 8 + 8];
                    vals[u * 8..u * 8 + 8].copy_from_slice(row);
                }
                total += sample_variance(&vals);
            }
        }
        total / (bh * bw) as f64
    }
}

pub(crate) fn sample_variance(vals: &[f64]) -> f64 {
    let n = vals.len();
    if n < 2 {
        return 0.0;
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0)
}

/// Odd-sized square convolution kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    data: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, data: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 || size == 0 {
            return Err(Error::invalid(format!("kernel size {size} must be odd")));
        }
        if data.len() != size * size {
            return Err(Error::dims(format!(
                "kernel data has {} values, expected {}",
                data.len(),
                size * size
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("kernel contains non-finite values"));
        }
        Ok(Kernel { size, data })
    }

    pub fn identity(size: usize) -> Result<Self> {
        let mut data = vec![0.0; size * size];
        data[(size / 2) * size + size / 2] = 1.0;
        Kernel::new(size, data)
    }

    /// Truncated, renormalized Gaussian kernel with standard deviation
    /// `sigma`, radius `ceil(3 sigma)`.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::invalid("gaussian sigma must be positive"));
        }
        let radius = (3.0 * sigma).ceil() as usize;
        let size = 2 * radius + 1;
        let mut data = vec![0.0; size * size];
        let two_s2 = 2.0 * sigma * sigma;
        let mut sum = 0.0;
        for r in 0..size {
            for c in 0..size {
                let dy = r as f64 - radius as f64;
                let dx = c as f64 - radius as f64;
                let v = (-(dy * dy + dx * dx) / two_s2).exp();
                data[r * size + c] = v;
                sum += v;
            }
        }
        for v in &mut data {
            *v /= sum;
        }
        Kernel::new(size, data)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn margin(&self) -> usize {
        self.size / 2
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.size..(r + 1) * self.size]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn scale(&self, s: f64) -> Kernel {
        Kernel {
            size: self.size,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }
}

/// One development operation.
#[derive(Debug, Clone, PartialEq)]
pub enum DevOp {
    /// Apply a fixed convolution kernel.
    Convolve(Kernel),
    /// Unsharp masking: `img + amount * (img - gaussian_blur(img, radius))`.
    UnsharpMask { radius: f64, amount: f64 },
    /// Gaussian blur with the given radius (standard deviation).
    Blur { radius: f64 },
}

/// A concrete development pipeline: ordered spatial operations plus the
/// quantization table used for the JPEG stage downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub ops: Vec<DevOp>,
    pub quant_table: [[u16; 8]; 8],
    pub identifier: String,
}

impl PipelineConfig {
    pub fn new(identifier: impl Into<String>, ops: Vec<DevOp>, quant_table: [[u16; 8]; 8]) -> Result<Self> {
        if quant_table.iter().flatten().any(|&q| q == 0) {
            return Err(Error::invalid("quantization steps must be >= 1"));
        }
        Ok(PipelineConfig {
            ops,
            quant_table,
            identifier: identifier.into(),
        })
    }

    /// Total margin the spatial ops remove from each border.
    pub fn total_margin(&self) -> usize {
        self.ops
            .iter()
            .map(|op| match op {
                DevOp::Convolve(k) => k.margin(),
                DevOp::UnsharpMask { radius, .. } | DevOp::Blur { radius } => {
                    (3.0 * radius).ceil() as usize
                }
            })
            .sum()
    }
}

/// Raw image pool shared by every candidate pipeline.
#[derive(Debug, Clone)]
pub struct RawPool {
    pub images: Vec<GrayImage>,
    pub seed: u64,
    pub provenance: String,
}

impl RawPool {
    pub fn new(images: Vec<GrayImage>, seed: u64, provenance: impl Into<String>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::invalid("raw pool must be non-empty"));
        }
        let (h, w) = (images[0].height(), images[0].width());
        if images.iter().any(|im| im.height() != h || im.width() != w) {
            return Err(Error::dims("raw pool images must share dimensions"));
        }
        Ok(RawPool {
            images,
            seed,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Crop scoring mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    MostUniform,
    MostTextured,
}

/// Selects the `crop` x `crop` window, on an 8-pixel candidate grid, that
/// minimizes (most-uniform) or maximizes (most-textured) the mean local
/// variance. Ties resolve to the smallest (row, col).
pub fn crop_by_uniformity(image: &GrayImage, crop: usize, mode: CropMode) -> Result<GrayImage> {
    if crop == 0 || crop % 8 != 0 {
        return Err(Error::invalid(format!(
            "crop size {crop} must be a positive multiple of 8"
        )));
    }
    if crop > image.height() || crop > image.width() {
        return Err(Error::dims(format!(
            "crop {crop} larger than image {}x{}",
            image.height(),
            image.width()
        )));
    }
    let mut best: Option<(f64, usize, usize)> = None;
    let mut r0 = 0;
    while r0 + crop <= image.height() {
        let mut c0 = 0;
        while c0 + crop <= image.width() {
            let candidate = image.crop(r0, c0, crop, crop)?;
            let score = candidate.block_variance_score();
            let better = match (&best, mode) {
                (None, _) => true,
                (Some((s, _, _)), CropMode::MostUniform) => score < *s,
                (Some((s, _, _)), CropMode::MostTextured) => score > *s,
            };
            if better {
                best = Some((score, r0, c0));
            }
            c0 += 8;
        }
        r0 += 8;
    }
    let (_, r0, c0) = best.expect("at least one candidate crop");
    image.crop(r0, c0, crop, crop)
}

/// Applies the pipeline's spatial operations in order, clipping to [0, 255]
/// after each one. JPEG compression is not applied here.
pub fn develop(image: &GrayImage, pipeline: &PipelineConfig) -> Result<GrayImage> {
    let mut current = image.clone();
    for op in &pipeline.ops {
        current = apply_dev_op(&current, op)?;
        current.clip();
    }
    Ok(current)
}

fn apply_dev_op(image: &GrayImage, op: &DevOp) -> Result<GrayImage> {
    match op {
        DevOp::Convolve(kernel) => image.convolve_valid(kernel),
        DevOp::Blur { radius } => image.convolve_valid(&Kernel::gaussian(*radius)?),
        DevOp::UnsharpMask { radius, amount } => {
            let blur_kernel = Kernel::gaussian(*radius)?;
            let m = blur_kernel.margin();
            let blurred = image.convolve_valid(&blur_kernel)?;
            let center = image.crop(m, m, image.height() - 2 * m, image.width() - 2 * m)?;
            let mut pixels = Vec::with_capacity(center.pixels().len());
            for (c, b) in center.pixels().iter().zip(blurred.pixels()) {
                pixels.push(c + amount * (c - b));
            }
            GrayImage::new(center.height(), center.width(), pixels)
        }
    }
}
