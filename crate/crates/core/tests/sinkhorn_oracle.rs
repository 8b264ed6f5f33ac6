//! Entropic solver against the exact transport oracle on small instances.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use tada_core::alignmetrics::{exact_ot_small, median_cost, sinkhorn_divergence};
use tada_core::linalg::Matrix;

fn random_set(rng: &mut ChaCha12Rng, n: usize, d: usize, spread: f64) -> Matrix {
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        rows.push((0..d).map(|_| rng.random::<f64>() * spread).collect());
    }
    Matrix::from_rows(&rows)
}

#[test]
fn sinkhorn_matches_exact_ot_on_small_instances() {
    let mut rng = ChaCha12Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let n = rng.random_range(2..=8usize);
        let m = rng.random_range(2..=8usize);
        let d = rng.random_range(1..=4usize);
        let x = random_set(&mut rng, n, d, 3.0);
        let y = random_set(&mut rng, m, d, 3.0);

        let exact = exact_ot_small(&x, &y).unwrap();
        let eps = 1e-3 * median_cost(&x, &y);
        let approx = sinkhorn_divergence(&x, &y, eps, 200_000, 1e-9).unwrap();
        assert!(approx.converged, "case {case} did not converge");

        let rel = (approx.value - exact).abs() / exact.abs().max(1e-12);
        worst = worst.max(rel);
        assert!(
            rel <= 0.02,
            "case {case}: exact {exact:.6e}, sinkhorn {:.6e}, rel err {rel:.4}",
            approx.value
        );
    }
    eprintln!("worst relative error over 50 instances: {worst:.3e}");
}
