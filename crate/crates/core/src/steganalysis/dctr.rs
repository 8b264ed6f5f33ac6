//! DCTR-style features: histograms of quantized magnitudes of the 64
//! undecimated DCT-basis residuals, accumulated per subsampling phase.
//!
//! The full schema merges the 64 phases into 25 symmetry classes per kernel
//! (length 64 * 25 * (T+1)); the lite schema pools all phases into a single
//! histogram per kernel (length 64 * (T+1)), which keeps downstream
//! covariance work cheap.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::jpegcodec::{dct_basis_1d, decompress, JpegCoeffs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseMode {
    /// 25 phase classes from the (a, 8-a) folding.
    Merged25,
    /// All 64 phases pooled into one histogram per kernel.
    Single,
}

/// Extractor configuration; fixes the feature length and identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct DctrSchema {
    pub threshold: usize,
    pub phase_mode: PhaseMode,
}

impl DctrSchema {
    pub fn full() -> Self {
        DctrSchema {
            threshold: 4,
            phase_mode: PhaseMode::Merged25,
        }
    }

    pub fn lite() -> Self {
        DctrSchema {
            threshold: 4,
            phase_mode: PhaseMode::Single,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "dctr" | "full" => Ok(DctrSchema::full()),
            "dctr-lite" | "lite" => Ok(DctrSchema::lite()),
            other => Err(Error::invalid(format!("unknown feature schema `{other}`"))),
        }
    }

    pub fn phase_classes(&self) -> usize {
        match self.phase_mode {
            PhaseMode::Merged25 => 25,
            PhaseMode::Single => 1,
        }
    }

    pub fn len(&self) -> usize {
        64 * self.phase_classes() * (self.threshold + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self) -> String {
        format!(
            "dctr-t{}-p{}",
            self.threshold,
            self.phase_classes()
        )
    }
}

/// A fixed-length feature vector tagged with its extractor schema.
#[derive(Debug, Clone)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema_id: String,
}

/// Quantization step for residual magnitudes, tied to the quality scaling
/// of the quantization table.
fn residual_quantizer(coeffs: &JpegCoeffs) -> f64 {
    (8.0 * coeffs.quant().scale_estimate()).max(0.2)
}

fn phase_class(a: usize) -> usize {
    a.min(8 - a)
}

/// DCTR features of one image.
pub fn dctr_features(coeffs: &JpegCoeffs, schema: &DctrSchema) -> Result<FeatureVector> {
    let img = decompress(coeffs);
    let h = img.height();
    let w = img.width();
    if h < 16 || w < 16 {
        return Err(Error::invalid(format!(
            "image {h}x{w} too small for every residual phase"
        )));
    }
    let basis = dct_basis_1d();
    let q = residual_quantizer(coeffs);
    let t = schema.threshold;
    let bins = t + 1;
    let classes = schema.phase_classes();
    let rw = w - 7;
    let rh = h - 7;

    // Horizontal passes, one per basis filter, on the level-shifted image so
    // the DC-mode kernel responds with zero on flat content.
    let horiz: Vec<Vec<f64>> = (0..8)
        .into_par_iter()
        .map(|l| {
            let filt = &basis[l];
            let mut out = vec![0.0; h * rw];
            for r in 0..h {
                let row = img.row(r);
                for c in 0..rw {
                    let mut acc = 0.0;
                    for (n, fv) in filt.iter().enumerate() {
                        acc += (row[c + n] - 128.0) * fv;
                    }
                    out[r * rw + c] = acc;
                }
            }
            out
        })
        .collect();

    // Vertical passes and histogram accumulation per (k, l) kernel.
    let histograms: Vec<Vec<f64>> = (0..64)
        .into_par_iter()
        .map(|kl| {
            let k = kl / 8;
            let l = kl % 8;
            let filt = &basis[k];
            let hsrc = &horiz[l];
            let mut hist = vec![0.0; classes * bins];
            for r in 0..rh {
                for c in 0..rw {
                    let mut acc = 0.0;
                    for (m, fv) in filt.iter().enumerate() {
                        acc += hsrc[(r + m) * rw + c] * fv;
                    }
                    let bin = ((acc.abs() / q).round() as usize).min(t);
                    let class = match schema.phase_mode {
                        PhaseMode::Single => 0,
                        PhaseMode::Merged25 => phase_class(r % 8) * 5 + phase_class(c % 8),
                    };
                    hist[class * bins + bin] += 1.0;
                }
            }
            // Normalize each phase-class histogram to a distribution.
            for class in 0..classes {
                let s: f64 = hist[class * bins..(class + 1) * bins].iter().sum();
                if s > 0.0 {
                    for v in &mut hist[class * bins..(class + 1) * bins] {
                        *v /= s;
                    }
                }
            }
            hist
        })
        .collect();

    let mut values = Vec::with_capacity(schema.len());
    for hist in histograms {
        values.extend_from_slice(&hist);
    }
    Ok(FeatureVector {
        values,
        schema_id: schema.id(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::GrayImage;
    use crate::jpegcodec::{compress_hard, QuantTable};

    fn cover(h: usize, w: usize) -> JpegCoeffs {
        let mut img = GrayImage::constant(h, w, 0.0);
        for r in 0..h {
            for c in 0..w {
                img.set(
                    r,
                    c,
                    (128.0 + 50.0 * ((r as f64 * 0.31).sin() + (c as f64 * 0.17).cos()))
                        .clamp(0.0, 255.0),
                );
            }
        }
        compress_hard(&img, &QuantTable::from_quality(85).unwrap()).unwrap()
    }

    #[test]
    fn constant_image_concentrates_in_zero_bins() {
        let img = GrayImage::constant(32, 32, 128.0);
        let coeffs = compress_hard(&img, &QuantTable::from_quality(85).unwrap()).unwrap();
        let schema = DctrSchema::lite();
        let f = dctr_features(&coeffs, &schema).unwrap();
        // Every histogram puts all mass in bin 0.
        for kernel in 0..64 {
            let hist = &f.values[kernel * 5..kernel * 5 + 5];
            assert!((hist[0] - 1.0).abs() < 1e-12);
            assert!(hist[1..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn schema_lengths_match_arithmetic() {
        assert_eq!(DctrSchema::full().len(), 64 * 25 * 5);
        assert_eq!(DctrSchema::lite().len(), 64 * 5);
        let c = cover(32, 32);
        let f = dctr_features(&c, &DctrSchema::full()).unwrap();
        assert_eq!(f.values.len(), 8000);
        assert_eq!(f.schema_id, "dctr-t4-p25");
    }

    #[test]
    fn single_coefficient_change_moves_features_slightly() {
        let c = cover(32, 32);
        let mut stego = c.clone();
        stego.coeffs_mut()[10] += 1;
        let schema = DctrSchema::lite();
        let fc = dctr_features(&c, &schema).unwrap();
        let fs = dctr_features(&stego, &schema).unwrap();
        let l1: f64 = fc
            .values
            .iter()
            .zip(&fs.values)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(l1 > 0.0, "features identical after a coefficient change");
        assert!(l1 < 1.0, "feature shift {l1} implausibly large");
    }

    #[test]
    fn features_deterministic_and_serialization_invariant() {
        let c = cover(24, 40);
        let schema = DctrSchema::full();
        let a = dctr_features(&c, &schema).unwrap();
        let mut buf = Vec::new();
        crate::jpegcodec::write_container(&c, &mut buf).unwrap();
        let c2 = crate::jpegcodec::read_container(buf.as_slice()).unwrap();
        let b = dctr_features(&c2, &schema).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn too_small_image_rejected() {
        let img = GrayImage::constant(8, 8, 128.0);
        let coeffs = compress_hard(&img, &QuantTable::from_quality(85).unwrap()).unwrap();
        assert!(dctr_features(&coeffs, &DctrSchema::lite()).is_err());
    }
}
