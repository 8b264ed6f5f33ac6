//! Covariance/correlation statistics and distribution distances used for
//! pipeline alignment and source selection.

mod exact_ot;
mod sinkhorn;

pub use exact_ot::exact_ot_small;
pub use sinkhorn::{
    median_cost, sinkhorn_divergence, sinkhorn_divergence_cached, TransportCache,
    SinkhornResult,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{pca_basis, Matrix};
use crate::residual::ResidualPatchSet;

/// Mean, covariance and correlation of a sample set.
#[derive(Debug, Clone)]
pub struct SecondOrderStats {
    pub mean: Vec<f64>,
    pub cov: Matrix,
    pub corr: Matrix,
    pub n: usize,
}

/// Second-order statistics over the selected patches of a set.
pub fn second_order(patches: &ResidualPatchSet) -> Result<SecondOrderStats> {
    let selected = patches.selected_matrix();
    second_order_of(&selected)
}

/// Second-order statistics of a row-sample matrix (unbiased covariance).
pub fn second_order_of(samples: &Matrix) -> Result<SecondOrderStats> {
    let n = samples.rows();
    let d = samples.cols();
    if n < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 samples for covariance, got {n}"
        )));
    }
    let mean = samples.col_means();

    // Accumulate the upper triangle over fixed-size chunks, then reduce in
    // chunk order so the result does not depend on thread scheduling.
    let chunk = 2048usize;
    let n_chunks = n.div_ceil(chunk);
    let partials: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * chunk;
            let hi = ((ci + 1) * chunk).min(n);
            let mut acc = vec![0.0; d * d];
            let mut centered = vec![0.0; d];
            for r in lo..hi {
                let row = samples.row(r);
                for j in 0..d {
                    centered[j] = row[j] - mean[j];
                }
                for i in 0..d {
                    let ci_v = centered[i];
                    if ci_v == 0.0 {
                        continue;
                    }
                    let dst = &mut acc[i * d..(i + 1) * d];
                    for j in i..d {
                        dst[j] += ci_v * centered[j];
                    }
                }
            }
            acc
        })
        .collect();

    let mut cov = Matrix::zeros(d, d);
    for acc in partials {
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += acc[i * d + j];
            }
        }
    }
    let denom = n as f64 - 1.0;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let mut corr = Matrix::zeros(d, d);
    let sds: Vec<f64> = (0..d).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    for i in 0..d {
        if sds[i] > 0.0 {
            corr[(i, i)] = 1.0;
        }
        for j in (i + 1)..d {
            let denom = sds[i] * sds[j];
            let v = if denom > 0.0 { cov[(i, j)] / denom } else { 0.0 };
            corr[(i, j)] = v;
            corr[(j, i)] = v;
        }
    }

    Ok(SecondOrderStats { mean, cov, corr, n })
}

/// Squared Frobenius norm of the difference of two equal-sized matrices.
pub fn frobenius_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::dims(format!(
            "frobenius distance between {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(a.sub(b).frob_sq())
}

/// Bandwidth choice for the Gaussian-kernel MMD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise distance over the pooled samples.
    Median,
}

/// MMD estimate with the bandwidth that was actually used.
#[derive(Debug, Clone, Copy)]
pub struct MmdEstimate {
    /// Unbiased squared-MMD estimate; may be slightly negative.
    pub raw: f64,
    pub bandwidth: f64,
}

impl MmdEstimate {
    pub fn clamped(&self) -> f64 {
        self.raw.max(0.0)
    }
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn median_pairwise_distance(x: &Matrix, y: &Matrix) -> f64 {
    let mut dists = Vec::new();
    let total = x.rows() + y.rows();
    let row = |i: usize| -> &[f64] {
        if i < x.rows() {
            x.row(i)
        } else {
            y.row(i - x.rows())
        }
    };
    for i in 0..total {
        for j in (i + 1)..total {
            dists.push(sq_dist(row(i), row(j)).sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    let med = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Unbiased squared MMD with a Gaussian kernel.
pub fn mmd(x: &Matrix, y: &Matrix, bandwidth: Bandwidth) -> Result<MmdEstimate> {
    if x.cols() != y.cols() {
        return Err(Error::dims("mmd sample dimensions differ"));
    }
    if x.rows() < 2 || y.rows() < 2 {
        return Err(Error::invalid(
            "unbiased MMD needs at least 2 samples per set",
        ));
    }
    let bw = resolve_bandwidth(x, y, bandwidth)?;
    let two_bw2 = 2.0 * bw * bw;
    let kernel = |a: &[f64], b: &[f64]| (-sq_dist(a, b) / two_bw2).exp();

    let n = x.rows();
    let m = y.rows();
    let mut kxx = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kxx += kernel(x.row(i), x.row(j));
            }
        }
    }
    let mut kyy = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                kyy += kernel(y.row(i), y.row(j));
            }
        }
    }
    let mut kxy = 0.0;
    for i in 0..n {
        for j in 0..m {
            kxy += kernel(x.row(i), y.row(j));
        }
    }
    let raw = kxx / (n as f64 * (n as f64 - 1.0)) + kyy / (m as f64 * (m as f64 - 1.0))
        - 2.0 * kxy / (n as f64 * m as f64);
    Ok(MmdEstimate { raw, bandwidth: bw })
}

/// Biased squared MMD (includes diagonal kernel terms); zero for identical
/// multisets.
pub fn mmd_biased(x: &Matrix, y: &Matrix, bandwidth: Bandwidth) -> Result<MmdEstimate> {
    if x.cols() != y.cols() {
        return Err(Error::dims("mmd sample dimensions differ"));
    }
    let bw = resolve_bandwidth(x, y, bandwidth)?;
    let two_bw2 = 2.0 * bw * bw;
    let kernel = |a: &[f64], b: &[f64]| (-sq_dist(a, b) / two_bw2).exp();
    let n = x.rows() as f64;
    let m = y.rows() as f64;
    let mut kxx = 0.0;
    for i in 0..x.rows() {
        for j in 0..x.rows() {
            kxx += kernel(x.row(i), x.row(j));
        }
    }
    let mut kyy = 0.0;
    for i in 0..y.rows() {
        for j in 0..y.rows() {
            kyy += kernel(y.row(i), y.row(j));
        }
    }
    let mut kxy = 0.0;
    for i in 0..x.rows() {
        for j in 0..y.rows() {
            kxy += kernel(x.row(i), y.row(j));
        }
    }
    Ok(MmdEstimate {
        raw: kxx / (n * n) + kyy / (m * m) - 2.0 * kxy / (n * m),
        bandwidth: bw,
    })
}

fn resolve_bandwidth(x: &Matrix, y: &Matrix, bandwidth: Bandwidth) -> Result<f64> {
    match bandwidth {
        Bandwidth::Fixed(b) if b > 0.0 => Ok(b),
        Bandwidth::Fixed(b) => Err(Error::invalid(format!("bandwidth {b} must be positive"))),
        Bandwidth::Median => Ok(median_pairwise_distance(x, y)),
    }
}

/// Normalized chordal distance between the top-`k` principal subspaces of
/// two sample sets; lies in [0, 1].
pub fn chordal_distance(x: &Matrix, y: &Matrix, k: usize) -> Result<f64> {
    if x.cols() != y.cols() {
        return Err(Error::dims("chordal distance sample dimensions differ"));
    }
    let ux = pca_basis(x, k)?;
    let uy = pca_basis(y, k)?;
    let cross = ux.transpose().matmul(&uy);
    let overlap = cross.frob_sq();
    Ok(((k as f64 - overlap).max(0.0) / k as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn second_order_hand_example() {
        // Patches (0,0), (1,1), (2,2): cov = [[1,1],[1,1]], corr likewise.
        let m = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]);
        let stats = second_order_of(&m).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(stats.cov[(i, j)], 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(stats.corr[(i, j)], 1.0, epsilon = 1e-12);
            }
        }
        assert_eq!(stats.mean, vec![1.0, 1.0]);
    }

    #[test]
    fn identical_samples_give_zero_covariance() {
        let m = Matrix::from_rows(&[vec![3.0, -1.0], vec![3.0, -1.0]]);
        let stats = second_order_of(&m).unwrap();
        assert_eq!(stats.cov.frob_sq(), 0.0);
        // Zero variance: correlations stay at zero.
        assert_eq!(stats.corr[(0, 1)], 0.0);
    }

    #[test]
    fn covariance_scales_quadratically() {
        let m = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, -1.0], vec![1.0, 5.0]]);
        let scaled = m.scale(3.0);
        let a = second_order_of(&m).unwrap();
        let b = second_order_of(&scaled).unwrap();
        assert!(b.cov.max_abs_diff(&a.cov.scale(9.0)) < 1e-12);
    }

    #[test]
    fn frobenius_distance_basics() {
        let a = Matrix::identity(2);
        let z = Matrix::zeros(2, 2);
        assert_eq!(frobenius_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(frobenius_distance(&a, &z).unwrap(), 2.0);
        // A = 4S, B = S differ by 3S: squared norm scales by 9.
        let s = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 5.0]]);
        let d = frobenius_distance(&s.scale(4.0), &s).unwrap();
        assert_abs_diff_eq!(d, 9.0 * s.frob_sq(), epsilon = 1e-12);
        assert!(frobenius_distance(&a, &Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn mmd_identical_multisets_biased_zero() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0], vec![-1.0, 0.5]]);
        let est = mmd_biased(&x, &x, Bandwidth::Median).unwrap();
        assert!(est.raw.abs() <= 1e-9);
    }

    #[test]
    fn mmd_separated_clusters_approach_two() {
        // Two tight clusters far apart: unbiased MMD^2 -> 2.
        let x = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.01, 0.0],
            vec![0.0, 0.01],
            vec![0.01, 0.01],
        ]);
        let y = Matrix::from_rows(&[
            vec![100.0, 100.0],
            vec![100.01, 100.0],
            vec![100.0, 100.01],
            vec![100.01, 100.01],
        ]);
        let est = mmd(&x, &y, Bandwidth::Fixed(0.05)).unwrap();

        // Independent check by direct kernel summation.
        let kern = |a: &[f64], b: &[f64]| (-sq_dist(a, b) / (2.0 * 0.05f64 * 0.05)).exp();
        let mut direct = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    direct += kern(x.row(i), x.row(j)) / 12.0 + kern(y.row(i), y.row(j)) / 12.0;
                }
                direct -= 2.0 * kern(x.row(i), y.row(j)) / 16.0;
            }
        }
        assert_abs_diff_eq!(est.raw, direct, epsilon = 1e-12);
        assert!((est.raw - 2.0).abs() < 0.15);
    }

    #[test]
    fn mmd_median_heuristic_reported_and_permutation_invariant() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]);
        let y = Matrix::from_rows(&[vec![0.5], vec![1.5]]);
        let a = mmd(&x, &y, Bandwidth::Median).unwrap();
        let xp = Matrix::from_rows(&[vec![2.0], vec![0.0], vec![1.0]]);
        let b = mmd(&xp, &y, Bandwidth::Median).unwrap();
        assert_abs_diff_eq!(a.raw, b.raw, epsilon = 1e-12);
        assert_eq!(a.bandwidth, b.bandwidth);
        assert!(a.bandwidth > 0.0);
    }

    #[test]
    fn chordal_same_data_zero() {
        let x = Matrix::from_rows(&[
            vec![1.0, 0.2, 0.0],
            vec![2.0, -0.1, 0.1],
            vec![-1.0, 0.3, -0.1],
            vec![0.5, -0.4, 0.05],
        ]);
        let d = chordal_distance(&x, &x, 2).unwrap();
        assert!(d < 1e-7, "distance {d}");
    }

    #[test]
    fn chordal_orthogonal_subspaces_is_one() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![2.0, 0.0]]);
        let y = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, -1.0], vec![0.0, 2.0]]);
        let d = chordal_distance(&x, &y, 1).unwrap();
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn chordal_shared_axis_closed_form() {
        // X spans {e1, e2}, Y spans {e1, e3}; one zero angle and one right
        // angle give sqrt((2-1)/2).
        let x = Matrix::from_rows(&[
            vec![2.0, 0.0, 0.0],
            vec![-2.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, -1.0, 0.0],
        ]);
        let y = Matrix::from_rows(&[
            vec![2.0, 0.0, 0.0],
            vec![-2.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, -1.0],
        ]);
        let d = chordal_distance(&x, &y, 2).unwrap();
        assert_abs_diff_eq!(d, (0.5f64).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn chordal_rotation_invariance() {
        let x = Matrix::from_rows(&[
            vec![1.0, 0.1],
            vec![2.0, -0.2],
            vec![-1.5, 0.15],
            vec![0.5, 0.3],
        ]);
        let y = Matrix::from_rows(&[
            vec![0.2, 1.1],
            vec![1.9, -0.4],
            vec![-1.0, 0.6],
            vec![0.1, 0.9],
        ]);
        let rotate = |m: &Matrix, t: f64| -> Matrix {
            let (c, s) = (t.cos(), t.sin());
            let mut out = Matrix::zeros(m.rows(), 2);
            for r in 0..m.rows() {
                out[(r, 0)] = c * m[(r, 0)] - s * m[(r, 1)];
                out[(r, 1)] = s * m[(r, 0)] + c * m[(r, 1)];
            }
            out
        };
        let d0 = chordal_distance(&x, &y, 1).unwrap();
        let d1 = chordal_distance(&rotate(&x, 0.7), &rotate(&y, 0.7), 1).unwrap();
        assert_abs_diff_eq!(d0, d1, epsilon = 1e-9);
    }
}
