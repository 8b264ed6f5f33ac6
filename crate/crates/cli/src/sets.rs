//! Data-set construction stages: pools, development, compression,
//! embedding and feature extraction.

use rayon::prelude::*;

use tada_core::emulator::{develop_pool_hard, KernelParams};
use tada_core::imagery::{
    crop_by_uniformity, develop, generate_synthetic_raw, CropMode, GrayImage, PipelineConfig,
};
use tada_core::jpegcodec::{compress_hard, JpegCoeffs, QuantTable};
use tada_core::steganalysis::{dctr_features, DctrSchema, FeatureVector};
use tada_core::stego::{simulate_embedding, EmbeddingConfig, EmbeddingScheme};

use crate::config::{EmbeddingConfigToml, RawConfig};
use crate::{stage, HarnessError};

/// Splitmix-style seed mixing for independent sub-streams.
pub fn mix_seed(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a
        ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ c.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable tags for the independent raw pools of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolRole {
    SourceTrain,
    TargetTrain,
    Eval,
    Operational,
    TadaLearn,
}

impl PoolRole {
    fn tag(&self) -> u64 {
        match self {
            PoolRole::SourceTrain => 0x501,
            PoolRole::TargetTrain => 0x502,
            PoolRole::Eval => 0x503,
            PoolRole::Operational => 0x504,
            PoolRole::TadaLearn => 0x505,
        }
    }
}

/// Synthesizes `count` raws and crops each to `raw.size` by local-variance
/// scoring: textured crops for detector material, uniform crops for the
/// kernel-learning pool.
pub fn build_pool(
    raw: &RawConfig,
    count: usize,
    seed: u64,
    role: PoolRole,
) -> Result<Vec<GrayImage>, HarnessError> {
    let gen_size = raw.size + raw.gen_margin;
    let pool = generate_synthetic_raw(
        count,
        gen_size,
        raw.noise_alpha,
        raw.noise_beta,
        raw.smoothness,
        mix_seed(seed, role.tag(), 0),
    )
    .map_err(|e| stage("synthesize", e))?;
    let mode = match role {
        PoolRole::TadaLearn => CropMode::MostUniform,
        _ => CropMode::MostTextured,
    };
    pool.images
        .par_iter()
        .map(|img| crop_by_uniformity(img, raw.size, mode).map_err(|e| stage("crop", e)))
        .collect()
}

/// Develops raws through a pipeline's spatial ops and compresses with the
/// pipeline's quantization table.
pub fn develop_and_compress(
    raws: &[GrayImage],
    pipeline: &PipelineConfig,
) -> Result<Vec<JpegCoeffs>, HarnessError> {
    let quant = QuantTable::new(pipeline.quant_table, None).map_err(|e| stage("develop", e))?;
    raws.par_iter()
        .map(|raw| {
            let dev = develop(raw, pipeline).map_err(|e| stage("develop", e))?;
            let h8 = dev.height() / 8 * 8;
            let w8 = dev.width() / 8 * 8;
            let cropped = dev.crop(0, 0, h8, w8).map_err(|e| stage("develop", e))?;
            compress_hard(&cropped, &quant).map_err(|e| stage("compress", e))
        })
        .collect()
}

/// Develops raws with a learned emulation kernel (hard compression).
pub fn develop_with_kernel(
    raws: &[GrayImage],
    kernel: &KernelParams,
    quant: &QuantTable,
) -> Result<Vec<JpegCoeffs>, HarnessError> {
    develop_pool_hard(raws, kernel, quant).map_err(|e| stage("develop-kernel", e))
}

pub fn embedding_config(
    toml_cfg: &EmbeddingConfigToml,
    seed: u64,
) -> Result<EmbeddingConfig, HarnessError> {
    let scheme = match toml_cfg.scheme.as_str() {
        "uerd" => EmbeddingScheme::Uerd,
        "uniform-cost" => EmbeddingScheme::UniformCost,
        other => return Err(HarnessError::Config(format!("unknown scheme `{other}`"))),
    };
    EmbeddingConfig::new(scheme, toml_cfg.payload_bpnzac, seed).map_err(|e| stage("embed", e))
}

/// Embeds every cover with a per-image seed derived from the base seed.
pub fn embed_covers(
    covers: &[JpegCoeffs],
    toml_cfg: &EmbeddingConfigToml,
    base_seed: u64,
) -> Result<Vec<JpegCoeffs>, HarnessError> {
    covers
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let cfg = embedding_config(toml_cfg, mix_seed(base_seed, 0xe, i as u64))?;
            simulate_embedding(c, &cfg).map_err(|e| stage("embed", e))
        })
        .collect()
}

pub fn features_of(
    images: &[JpegCoeffs],
    schema: &DctrSchema,
) -> Result<Vec<FeatureVector>, HarnessError> {
    images
        .par_iter()
        .map(|c| dctr_features(c, schema).map_err(|e| stage("features", e)))
        .collect()
}

/// One developed cover/stego set with features.
pub struct PairedSet {
    pub covers: Vec<JpegCoeffs>,
    pub stegos: Vec<JpegCoeffs>,
    pub cover_features: Vec<FeatureVector>,
    pub stego_features: Vec<FeatureVector>,
}

pub fn paired_set(
    covers: Vec<JpegCoeffs>,
    embedding: &EmbeddingConfigToml,
    embed_seed: u64,
    schema: &DctrSchema,
) -> Result<PairedSet, HarnessError> {
    let stegos = embed_covers(&covers, embedding, embed_seed)?;
    let cover_features = features_of(&covers, schema)?;
    let stego_features = features_of(&stegos, schema)?;
    Ok(PairedSet {
        covers,
        stegos,
        cover_features,
        stego_features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pools_are_deterministic_and_role_independent() {
        let raw = RawConfig {
            size: 64,
            gen_margin: 16,
            ..RawConfig::default()
        };
        let a = build_pool(&raw, 2, 7, PoolRole::Eval).unwrap();
        let b = build_pool(&raw, 2, 7, PoolRole::Eval).unwrap();
        assert_eq!(a[0].pixels(), b[0].pixels());
        let c = build_pool(&raw, 2, 7, PoolRole::SourceTrain).unwrap();
        assert_ne!(a[0].pixels(), c[0].pixels());
    }

    #[test]
    fn develop_and_compress_shapes() {
        let raw = RawConfig {
            size: 64,
            gen_margin: 16,
            ..RawConfig::default()
        };
        let pool = build_pool(&raw, 1, 3, PoolRole::Eval).unwrap();
        let catalog = tada_core::imagery::default_catalog(85).unwrap();
        let sharpen = &catalog[1].pipeline;
        let coeffs = develop_and_compress(&pool, sharpen).unwrap();
        // 64 - 2 margin -> 62 -> cropped to 56 = 7 blocks.
        assert_eq!(coeffs[0].blocks_h(), 7);
    }
}
