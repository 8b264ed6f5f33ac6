//! Synthetic RAW-like image generation.
//!
//! Each image is smooth random content (low-pass-filtered white noise,
//! rescaled to [30, 225]) plus heteroscedastic sensor-style noise whose
//! per-pixel variance is `alpha * intensity + beta`, clipped to [0, 255].
//! Generation is bit-reproducible from the seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imagery::{GrayImage, Kernel, RawPool};

/// Generates `count` synthetic RAW-like images of `size` x `size` pixels.
///
/// `smoothness` is the standard deviation of the Gaussian low-pass applied
/// to the white-noise content (0 keeps the raw white noise). `noise_alpha`
/// and `noise_beta` control the signal-dependent and constant parts of the
/// noise variance.
pub fn generate_synthetic_raw(
    count: usize,
    size: usize,
    noise_alpha: f64,
    noise_beta: f64,
    smoothness: f64,
    seed: u64,
) -> Result<RawPool> {
    if count == 0 {
        return Err(Error::invalid("count must be >= 1"));
    }
    if size == 0 || size % 8 != 0 {
        return Err(Error::invalid(format!(
            "size {size} must be a positive multiple of 8"
        )));
    }
    if noise_alpha < 0.0 || noise_beta < 0.0 || smoothness < 0.0 {
        return Err(Error::invalid(
            "noise_alpha, noise_beta and smoothness must be non-negative",
        ));
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        let content = smooth_content(size, smoothness, &mut rng)?;
        let noisy = heteroscedastic_noise(&content, noise_alpha, noise_beta, &mut rng)?;
        images.push(noisy);
    }
    RawPool::new(
        images,
        seed,
        format!(
            "synthetic(count={count}, size={size}, alpha={noise_alpha}, beta={noise_beta}, smooth={smoothness})"
        ),
    )
}

fn smooth_content(size: usize, smoothness: f64, rng: &mut ChaCha12Rng) -> Result<GrayImage> {
    // Oversample so the valid-region blur still yields `size` pixels.
    let margin = if smoothness > 0.0 {
        (3.0 * smoothness).ceil() as usize
    } else {
        0
    };
    let big = size + 2 * margin;
    let mut noise = Vec::with_capacity(big * big);
    for _ in 0..big * big {
        noise.push(rng.random::<f64>());
    }
    let raw = GrayImage::new(big, big, noise)?;
    let filtered = if smoothness > 0.0 {
        raw.convolve_valid(&Kernel::gaussian(smoothness)?)?
    } else {
        raw
    };
    debug_assert_eq!(filtered.height(), size);

    let lo = filtered.pixels().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = filtered
        .pixels()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    let rescaled: Vec<f64> = filtered
        .pixels()
        .iter()
        .map(|v| 30.0 + (v - lo) / span * 195.0)
        .collect();
    GrayImage::new(size, size, rescaled)
}

/// Adds noise of variance `alpha * intensity + beta` per pixel and clips the
/// result to [0, 255].
pub fn heteroscedastic_noise(
    content: &GrayImage,
    alpha: f64,
    beta: f64,
    rng: &mut ChaCha12Rng,
) -> Result<GrayImage> {
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::invalid("noise parameters must be non-negative"));
    }
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut pixels = Vec::with_capacity(content.pixels().len());
    for &v in content.pixels() {
        let sd = (alpha * v.max(0.0) + beta).sqrt();
        let noisy = v + sd * unit.sample(rng);
        pixels.push(noisy.clamp(0.0, 255.0));
    }
    let mut img = GrayImage::new(content.height(), content.width(), pixels)?;
    img.clip();
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::sample_variance;

    #[test]
    fn regeneration_is_bit_identical() {
        let a = generate_synthetic_raw(2, 64, 0.2, 1.0, 2.0, 42).unwrap();
        let b = generate_synthetic_raw(2, 64, 0.2, 1.0, 2.0, 42).unwrap();
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x.pixels(), y.pixels());
        }
        let c = generate_synthetic_raw(2, 64, 0.2, 1.0, 2.0, 43).unwrap();
        assert_ne!(a.images[0].pixels(), c.images[0].pixels());
    }

    #[test]
    fn pool_count_and_dims() {
        let pool = generate_synthetic_raw(3, 64, 0.0, 0.5, 1.5, 7).unwrap();
        assert_eq!(pool.len(), 3);
        for im in &pool.images {
            assert_eq!((im.height(), im.width()), (64, 64));
        }
    }

    #[test]
    fn constant_content_noise_variance_matches_beta() {
        // Direct sampling check: variance of the added noise on constant
        // content should land near beta = 4 for a 512x512 image.
        let content = GrayImage::constant(512, 512, 128.0);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let noisy = heteroscedastic_noise(&content, 0.0, 4.0, &mut rng).unwrap();
        let var = sample_variance(noisy.pixels());
        assert!(
            (var - 4.0).abs() < 0.4,
            "sample variance {var} not within 10% of 4"
        );
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(generate_synthetic_raw(0, 64, 0.0, 0.0, 1.0, 0).is_err());
        assert!(generate_synthetic_raw(1, 63, 0.0, 0.0, 1.0, 0).is_err());
        assert!(generate_synthetic_raw(1, 64, -1.0, 0.0, 1.0, 0).is_err());
        assert!(generate_synthetic_raw(1, 64, 0.0, -1.0, 1.0, 0).is_err());
    }
}
