//! Grayscale JPEG machinery: quantization tables, hard and soft (smoothly
//! rounded) compression, decompression, nzAC counting, a minimal baseline
//! JFIF reader/writer and a bit-exact coefficient container.
//!
//! Hard compression rounds half away from zero. Soft compression replaces
//! rounding with `r(x) = round(x) + (x - round(x))^3`, which agrees with hard
//! rounding at integers and deviates by at most 0.125.

mod container;
pub mod dct;
mod jfif;

pub use container::{read_container, write_container};
pub use jfif::{parse_jpeg_grayscale, write_jpeg_grayscale};

pub use dct::{dct_basis_1d, dct_block, idct_block};

use crate::error::{Error, Result};
use crate::imagery::GrayImage;

/// Annex-K luminance quantization table (quality 50 base).
const ANNEX_K_LUMA: [[u16; 8]; 8] = [
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
];

/// 8x8 quantization step table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantTable {
    steps: [[u16; 8]; 8],
    quality_hint: Option<u8>,
}

impl QuantTable {
    pub fn new(steps: [[u16; 8]; 8], quality_hint: Option<u8>) -> Result<Self> {
        if steps.iter().flatten().any(|&s| s == 0) {
            return Err(Error::invalid("quantization steps must be >= 1"));
        }
        Ok(QuantTable { steps, quality_hint })
    }

    /// Annex-K luminance table scaled with the conventional quality formula.
    pub fn from_quality(quality: u8) -> Result<Self> {
        if quality == 0 || quality > 100 {
            return Err(Error::invalid(format!("quality {quality} outside 1..=100")));
        }
        let scale: u32 = if quality < 50 {
            5000 / quality as u32
        } else {
            200 - 2 * quality as u32
        };
        let mut steps = [[0u16; 8]; 8];
        for r in 0..8 {
            for c in 0..8 {
                let q = (ANNEX_K_LUMA[r][c] as u32 * scale + 50) / 100;
                steps[r][c] = q.clamp(1, 255) as u16;
            }
        }
        QuantTable::new(steps, Some(quality))
    }

    pub fn steps(&self) -> [[u16; 8]; 8] {
        self.steps
    }

    pub fn step(&self, k: usize, l: usize) -> u16 {
        self.steps[k][l]
    }

    pub fn quality_hint(&self) -> Option<u8> {
        self.quality_hint
    }

    /// Median ratio of this table's steps to the Annex-K base, an estimate
    /// of the quality scale factor used by DCTR-style feature quantizers.
    pub fn scale_estimate(&self) -> f64 {
        let mut ratios: Vec<f64> = (0..8)
            .flat_map(|r| (0..8).map(move |c| (r, c)))
            .map(|(r, c)| self.steps[r][c] as f64 / ANNEX_K_LUMA[r][c] as f64)
            .collect();
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        0.5 * (ratios[31] + ratios[32])
    }
}

/// Hard-quantized JPEG coefficients for a grayscale image.
///
/// Blocks are stored block-major: block (br, bc) occupies the 64 values at
/// offset `(br * blocks_w + bc) * 64`, row-major within the block.
#[derive(Debug, Clone, PartialEq)]
pub struct JpegCoeffs {
    blocks_h: usize,
    blocks_w: usize,
    coeffs: Vec<i32>,
    quant: QuantTable,
}

impl JpegCoeffs {
    pub fn new(blocks_h: usize, blocks_w: usize, coeffs: Vec<i32>, quant: QuantTable) -> Result<Self> {
        if blocks_h == 0 || blocks_w == 0 {
            return Err(Error::invalid("block counts must be positive"));
        }
        if coeffs.len() != blocks_h * blocks_w * 64 {
            return Err(Error::dims(format!(
                "coefficient buffer has {} values, expected {}",
                coeffs.len(),
                blocks_h * blocks_w * 64
            )));
        }
        Ok(JpegCoeffs {
            blocks_h,
            blocks_w,
            coeffs,
            quant,
        })
    }

    pub fn blocks_h(&self) -> usize {
        self.blocks_h
    }

    pub fn blocks_w(&self) -> usize {
        self.blocks_w
    }

    pub fn coeffs(&self) -> &[i32] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [i32] {
        &mut self.coeffs
    }

    pub fn quant(&self) -> &QuantTable {
        &self.quant
    }

    pub fn block(&self, br: usize, bc: usize) -> &[i32] {
        let off = (br * self.blocks_w + bc) * 64;
        &self.coeffs[off..off + 64]
    }

    pub fn pixel_dims(&self) -> (usize, usize) {
        (self.blocks_h * 8, self.blocks_w * 8)
    }
}

/// Real-valued coefficients produced by the soft quantizer.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftCoeffs {
    blocks_h: usize,
    blocks_w: usize,
    values: Vec<f64>,
    quant: QuantTable,
}

impl SoftCoeffs {
    pub fn blocks_h(&self) -> usize {
        self.blocks_h
    }

    pub fn blocks_w(&self) -> usize {
        self.blocks_w
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn quant(&self) -> &QuantTable {
        &self.quant
    }
}

fn check_dims(image: &GrayImage) -> Result<(usize, usize)> {
    if image.height() % 8 != 0 || image.width() % 8 != 0 {
        return Err(Error::dims(format!(
            "image {}x{} is not a multiple of 8",
            image.height(),
            image.width()
        )));
    }
    Ok((image.height() / 8, image.width() / 8))
}

fn for_each_block_dct(image: &GrayImage, mut f: impl FnMut(usize, usize, &[f64; 64])) {
    let blocks_h = image.height() / 8;
    let blocks_w = image.width() / 8;
    let mut block = [0.0; 64];
    for br in 0..blocks_h {
        for bc in 0..blocks_w {
            for u in 0..8 {
                let row = &image.row(br * 8 + u)[bc * 8..bc * 8 + 8];
                block[u * 8..u * 8 + 8].copy_from_slice(row);
            }
            let freq = dct_block(&block);
            f(br, bc, &freq);
        }
    }
}

/// Blockwise DCT, quantization and round-half-away-from-zero.
pub fn compress_hard(image: &GrayImage, quant: &QuantTable) -> Result<JpegCoeffs> {
    let (blocks_h, blocks_w) = check_dims(image)?;
    let mut coeffs = vec![0i32; blocks_h * blocks_w * 64];
    for_each_block_dct(image, |br, bc, freq| {
        let off = (br * blocks_w + bc) * 64;
        for k in 0..8 {
            for l in 0..8 {
                let q = quant.step(k, l) as f64;
                coeffs[off + k * 8 + l] = (freq[k * 8 + l] / q).round() as i32;
            }
        }
    });
    JpegCoeffs::new(blocks_h, blocks_w, coeffs, quant.clone())
}

/// Smooth rounding surrogate: identical to hard rounding at integers,
/// within 0.125 of it everywhere.
pub fn soft_round(x: f64) -> f64 {
    let r = x.round();
    let d = x - r;
    r + d * d * d
}

/// Same as [`compress_hard`] with the rounding replaced by [`soft_round`].
pub fn compress_soft(image: &GrayImage, quant: &QuantTable) -> Result<SoftCoeffs> {
    let (blocks_h, blocks_w) = check_dims(image)?;
    let mut values = vec![0f64; blocks_h * blocks_w * 64];
    for_each_block_dct(image, |br, bc, freq| {
        let off = (br * blocks_w + bc) * 64;
        for k in 0..8 {
            for l in 0..8 {
                let q = quant.step(k, l) as f64;
                values[off + k * 8 + l] = soft_round(freq[k * 8 + l] / q);
            }
        }
    });
    Ok(SoftCoeffs {
        blocks_h,
        blocks_w,
        values,
        quant: quant.clone(),
    })
}

fn decompress_values(
    blocks_h: usize,
    blocks_w: usize,
    values: impl Fn(usize) -> f64,
    quant: &QuantTable,
) -> GrayImage {
    let mut pixels = vec![0.0; blocks_h * 8 * blocks_w * 8];
    let width = blocks_w * 8;
    let mut freq = [0.0; 64];
    for br in 0..blocks_h {
        for bc in 0..blocks_w {
            let off = (br * blocks_w + bc) * 64;
            for k in 0..8 {
                for l in 0..8 {
                    freq[k * 8 + l] = values(off + k * 8 + l) * quant.step(k, l) as f64;
                }
            }
            let spatial = idct_block(&freq);
            for u in 0..8 {
                let dst = (br * 8 + u) * width + bc * 8;
                pixels[dst..dst + 8].copy_from_slice(&spatial[u * 8..u * 8 + 8]);
            }
        }
    }
    GrayImage::new(blocks_h * 8, blocks_w * 8, pixels).expect("decompressed image")
}

/// Dequantize and inverse-transform. Values are not clipped so that residual
/// filters see the codec output exactly.
pub fn decompress(coeffs: &JpegCoeffs) -> GrayImage {
    decompress_values(
        coeffs.blocks_h,
        coeffs.blocks_w,
        |i| coeffs.coeffs[i] as f64,
        &coeffs.quant,
    )
}

/// Decompression of soft (real-valued) coefficients, unclipped.
pub fn decompress_soft(coeffs: &SoftCoeffs) -> GrayImage {
    decompress_values(
        coeffs.blocks_h,
        coeffs.blocks_w,
        |i| coeffs.values[i],
        &coeffs.quant,
    )
}

/// 8-bit variant for file output: clipped to [0, 255] and rounded.
pub fn decompress_clipped(coeffs: &JpegCoeffs) -> GrayImage {
    let img = decompress(coeffs);
    let pixels = img
        .pixels()
        .iter()
        .map(|v| v.clamp(0.0, 255.0).round())
        .collect();
    GrayImage::new(img.height(), img.width(), pixels).expect("clipped image")
}

/// Number of nonzero coefficients excluding each block's DC.
pub fn count_nzac(coeffs: &JpegCoeffs) -> usize {
    let mut count = 0;
    for b in 0..coeffs.blocks_h * coeffs.blocks_w {
        let block = &coeffs.coeffs[b * 64..(b + 1) * 64];
        count += block[1..].iter().filter(|&&c| c != 0).count();
    }
    count
}
