//! Orthonormal 8x8 type-II DCT with the JPEG -128 level shift.

/// 1D orthonormal DCT-II basis: `BASIS[k][m] = a_k cos(pi (2m+1) k / 16)`
/// with `a_0 = sqrt(1/8)` and `a_k = sqrt(2/8)` otherwise.
pub fn dct_basis_1d() -> [[f64; 8]; 8] {
    let mut basis = [[0.0; 8]; 8];
    for (k, row) in basis.iter_mut().enumerate() {
        let alpha = if k == 0 {
            (1.0f64 / 8.0).sqrt()
        } else {
            (2.0f64 / 8.0).sqrt()
        };
        for (m, v) in row.iter_mut().enumerate() {
            *v = alpha * (std::f64::consts::PI * (2.0 * m as f64 + 1.0) * k as f64 / 16.0).cos();
        }
    }
    basis
}

fn basis() -> &'static [[f64; 8]; 8] {
    use std::sync::OnceLock;
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(dct_basis_1d)
}

/// Forward DCT of a level-shifted 8x8 block (row-major, 64 values).
pub fn dct_block(block: &[f64; 64]) -> [f64; 64] {
    let c = basis();
    let mut shifted = [0.0; 64];
    for (s, &v) in shifted.iter_mut().zip(block.iter()) {
        *s = v - 128.0;
    }
    let mut tmp = [0.0; 64];
    // Rows: tmp[m][l] = sum_n C[l][n] shifted[m][n]
    for m in 0..8 {
        for l in 0..8 {
            let mut acc = 0.0;
            for n in 0..8 {
                acc += c[l][n] * shifted[m * 8 + n];
            }
            tmp[m * 8 + l] = acc;
        }
    }
    let mut out = [0.0; 64];
    // Columns: out[k][l] = sum_m C[k][m] tmp[m][l]
    for k in 0..8 {
        for l in 0..8 {
            let mut acc = 0.0;
            for m in 0..8 {
                acc += c[k][m] * tmp[m * 8 + l];
            }
            out[k * 8 + l] = acc;
        }
    }
    out
}

/// Inverse DCT returning spatial values with the +128 shift restored.
pub fn idct_block(coeffs: &[f64; 64]) -> [f64; 64] {
    let c = basis();
    let mut tmp = [0.0; 64];
    // Columns first: tmp[m][l] = sum_k C[k][m] coeffs[k][l]
    for m in 0..8 {
        for l in 0..8 {
            let mut acc = 0.0;
            for k in 0..8 {
                acc += c[k][m] * coeffs[k * 8 + l];
            }
            tmp[m * 8 + l] = acc;
        }
    }
    let mut out = [0.0; 64];
    for m in 0..8 {
        for n in 0..8 {
            let mut acc = 0.0;
            for l in 0..8 {
                acc += c[l][n] * tmp[m * 8 + l];
            }
            out[m * 8 + n] = acc + 128.0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_128_block_is_all_zero() {
        let block = [128.0; 64];
        let f = dct_block(&block);
        assert!(f.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn constant_136_block_has_dc_64() {
        // DC = 8 * mean of the shifted block = 8 * 8 = 64.
        let block = [136.0; 64];
        let f = dct_block(&block);
        assert!((f[0] - 64.0).abs() < 1e-12);
        assert!(f[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn round_trip_random_block() {
        let mut block = [0.0; 64];
        let mut state = 12345u64;
        for v in &mut block {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = (state >> 11) as f64 / (1u64 << 53) as f64 * 255.0;
        }
        let back = idct_block(&dct_block(&block));
        for (a, b) in block.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10, "round trip error {}", (a - b).abs());
        }
    }

    #[test]
    fn orthonormality_preserves_inner_products() {
        let mut a = [0.0; 64];
        let mut b = [0.0; 64];
        let mut state = 99u64;
        for i in 0..64 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            a[i] = 128.0 + ((state >> 40) as f64 / 16777216.0 - 0.5) * 50.0;
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            b[i] = 128.0 + ((state >> 40) as f64 / 16777216.0 - 0.5) * 50.0;
        }
        let fa = dct_block(&a);
        let fb = dct_block(&b);
        let spatial: f64 = a.iter().zip(&b).map(|(x, y)| (x - 128.0) * (y - 128.0)).sum();
        let freq: f64 = fa.iter().zip(&fb).map(|(x, y)| x * y).sum();
        assert!((spatial - freq).abs() < 1e-9);
    }
}
