//! Scratch loss-landscape probe (ignored by default).

use tada_core::emulator::{
    compute_loss, develop_pool_hard, forward_develop, CompressionMode, ConstraintSet,
    KernelParams, LossConfig,
};
use tada_core::imagery::{builtin_kernel, generate_synthetic_raw, GrayImage};
use tada_core::jpegcodec::QuantTable;
use tada_core::residual::{
    apply_filter, extract_patches_for, select_by_variance, ResidualFilter, ResidualPatchSet,
};

fn patch_sets_for(
    images: &[GrayImage],
    filters: &[ResidualFilter],
    q: Option<(f64, f64)>,
) -> Vec<ResidualPatchSet> {
    let mut per_filter = vec![Vec::new(), Vec::new()];
    for img in images {
        for (fi, f) in filters.iter().enumerate() {
            let r = apply_filter(img, f).unwrap();
            per_filter[fi].push(extract_patches_for(&r, 8, 16, f).unwrap());
        }
    }
    per_filter
        .iter()
        .map(|sets| {
            let pooled = ResidualPatchSet::concat(sets).unwrap();
            match q {
                Some((lo, hi)) => select_by_variance(&pooled, lo, hi).unwrap(),
                None => pooled,
            }
        })
        .collect()
}

#[test]
#[ignore]
fn probe_landscape() {
    let pool = generate_synthetic_raw(64, 256, 0.1, 2.0, 1.5, 101).unwrap();
    let target_pool = generate_synthetic_raw(64, 256, 0.1, 2.0, 1.5, 202).unwrap();
    let quant = QuantTable::from_quality(85).unwrap();
    let s = builtin_kernel("sharpen-s").unwrap();
    let dev_kernel = KernelParams::new(3, s.data().to_vec(), ConstraintSet::Both).unwrap();
    let target_coeffs = develop_pool_hard(&target_pool.images, &dev_kernel, &quant).unwrap();
    let filters = [ResidualFilter::kb(), ResidualFilter::l4()];
    let target_spatial: Vec<GrayImage> = target_coeffs
        .iter()
        .map(tada_core::jpegcodec::decompress)
        .collect();
    let target_sets = patch_sets_for(&target_spatial, &filters, Some((0.3, 0.6)));

    let eval_cfg = LossConfig {
        nu_corr: 0.0,
        corr_enabled: false,
        wass_subsample: 256,
        ..LossConfig::default()
    };

    let mk = |params: &[f64]| -> KernelParams {
        let template = KernelParams::new(3, vec![0.0; 9], ConstraintSet::Both).unwrap();
        template.with_params(params).unwrap()
    };
    let candidates = [
        ("identity", mk(&[1.0, 0.0, 0.0])),
        ("plateau", mk(&[1.2085510687908263, -0.2806524319103243, 0.22851466471261778])),
        ("half-way", mk(&[1.5, -0.125, 0.0])),
        ("sharpen-s", mk(&[2.0, -0.25, 0.0])),
        ("overshoot", mk(&[2.5, -0.375, 0.0])),
    ];
    for frac in [0.05, 0.5, 2.0, 8.0] {
        eprintln!("=== epsilon fraction {frac} ===");
        for (name, k) in &candidates {
            let cfg = LossConfig {
                wass_epsilon_fraction: frac,
                ..eval_cfg.clone()
            };
            let dev = forward_develop(&pool.images, k, &quant, CompressionMode::Hard).unwrap();
            let src = patch_sets_for(&dev, &filters, Some((0.3, 0.6)));
            let loss = compute_loss(&src, &target_sets, &cfg, 424242).unwrap();
            eprintln!(
                "{name:>10}: cov {:.4e} wass {:.4e} (converged {})",
                loss.raw.cov, loss.raw.wass, loss.wass_converged
            );
        }
    }
}
