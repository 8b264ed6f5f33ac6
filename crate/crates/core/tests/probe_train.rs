//! Scratch probe for training dynamics (ignored by default).

use tada_core::emulator::{
    develop_pool_hard, train, ConstraintSet, KernelParams, LossConfig, TrainHyper,
};
use tada_core::imagery::{builtin_kernel, generate_synthetic_raw};
use tada_core::jpegcodec::QuantTable;

#[test]
#[ignore]
fn probe_kernel_recovery() {
    let t0 = std::time::Instant::now();
    let pool = generate_synthetic_raw(64, 256, 0.1, 2.0, 1.5, 101).unwrap();
    let target_pool = generate_synthetic_raw(64, 256, 0.1, 2.0, 1.5, 202).unwrap();
    let quant = QuantTable::from_quality(85).unwrap();
    let s = builtin_kernel("sharpen-s").unwrap();
    let dev_kernel = KernelParams::new(3, s.data().to_vec(), ConstraintSet::Both).unwrap();
    let target = develop_pool_hard(&target_pool.images, &dev_kernel, &quant).unwrap();
    eprintln!("setup: {:?}", t0.elapsed());

    let hyper = TrainHyper {
        max_epochs: 150,
        lr: 0.01,
        eval_target: Some(9.5e7),
        eval_subsample: 256,
        ..TrainHyper::default()
    };
    let cfg = LossConfig {
        wass_subsample: 256,
        ..LossConfig::default()
    }
    .with_terms(&["cov", "corr"])
    .unwrap();
    let t1 = std::time::Instant::now();
    let state = train(&pool, &target, &cfg, &hyper).unwrap();
    let dt = t1.elapsed();
    eprintln!(
        "trained {} epochs in {:?} ({:?}/epoch), stop {:?}",
        state.epoch,
        dt,
        dt / state.epoch.max(1) as u32,
        state.stop
    );
    eprintln!("init_eval {:.6e}, best_eval {:.6e}, ratio {:.4}",
        state.init_eval, state.best_eval, state.best_eval / state.init_eval);
    for r in state.history.iter() {
        if r.epoch % 5 == 0 || r.epoch <= 3 {
            eprintln!(
                "  ep {:3} lr {:.5} total {:.4} l_eval {:.5e} best {} descent {}",
                r.epoch, r.lr, r.total, r.l_eval, r.best, r.descent_fraction
            );
        }
    }
    eprintln!("final kernel params: {:?}", state.best_kernel.params());
    eprintln!("target kernel orbit values: [2, -0.25, 0]");
}
