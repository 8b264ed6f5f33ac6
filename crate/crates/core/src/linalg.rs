//! Dense row-major matrices and the small amount of linear algebra the rest
//! of the crate needs: products, symmetric eigendecomposition (cyclic Jacobi)
//! and PCA bases computed through the covariance or the Gram matrix,
//! whichever is smaller.

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "matrix needs at least one row");
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for j in 0..other.cols {
                    out_row[j] += a * b_row[j];
                }
            }
        }
        out
    }

    /// Column means.
    pub fn col_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (j, v) in self.row(r).iter().enumerate() {
                m[j] += v;
            }
        }
        let n = self.rows as f64;
        for v in &mut m {
            *v /= n;
        }
        m
    }

    /// Squared Frobenius norm.
    pub fn frob_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Column `k` of `vectors` is the eigenvector for `values[k]`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigendecomposition for symmetric matrices.
///
/// Converges to machine precision for the sizes used here (D up to a few
/// hundred). Panics if the input is not square.
pub fn sym_eigen(mat: &Matrix) -> SymEigen {
    assert_eq!(mat.rows, mat.cols, "sym_eigen needs a square matrix");
    let n = mat.rows;
    let mut a = mat.clone();
    let mut v = Matrix::identity(n);

    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + a.frob_sq().sqrt()) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, new_col)] = v[(r, old_col)];
        }
    }
    SymEigen { values, vectors }
}

/// Apply `f` to the eigenvalues of a symmetric matrix and recompose.
pub fn sym_func(mat: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let eig = sym_eigen(mat);
    let n = mat.rows;
    let mut out = Matrix::zeros(n, n);
    for k in 0..n {
        let fv = f(eig.values[k]);
        if fv == 0.0 {
            continue;
        }
        for i in 0..n {
            let vik = eig.vectors[(i, k)];
            if vik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[(i, j)] += fv * vik * eig.vectors[(j, k)];
            }
        }
    }
    out
}

/// Top-`k` PCA basis (D x k, orthonormal columns) of the row-sample matrix.
///
/// Centers the rows, then decomposes either the D x D covariance or the
/// N x N Gram matrix, whichever is smaller. Errors when the data have rank
/// below `k`.
pub fn pca_basis(samples: &Matrix, k: usize) -> Result<Matrix> {
    let n = samples.rows;
    let d = samples.cols;
    if k == 0 || k > d.min(n) {
        return Err(Error::invalid(format!(
            "pca rank k={k} outside 1..=min(n={n}, d={d})"
        )));
    }
    let means = samples.col_means();
    let mut centered = samples.clone();
    for r in 0..n {
        for (j, v) in centered.row_mut(r).iter_mut().enumerate() {
            *v -= means[j];
        }
    }

    let rank_tol = 1e-10;
    if d <= n {
        // Covariance route.
        let mut cov = Matrix::zeros(d, d);
        for r in 0..n {
            let row = centered.row(r);
            for i in 0..d {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                for j in i..d {
                    cov[(i, j)] += ri * row[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[(i, j)] / (n as f64 - 1.0);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let eig = sym_eigen(&cov);
        let scale = eig.values[0].max(1e-300);
        if eig.values[k - 1] <= rank_tol * scale {
            return Err(Error::RankDeficient(format!(
                "requested k={k} principal directions but eigenvalue {} is {:.3e}",
                k, eig.values[k - 1]
            )));
        }
        let mut basis = Matrix::zeros(d, k);
        for c in 0..k {
            for r in 0..d {
                basis[(r, c)] = eig.vectors[(r, c)];
            }
        }
        Ok(basis)
    } else {
        // Gram route: eigenvectors of the covariance from A^T u with u an
        // eigenvector of A A^T.
        let mut gram = Matrix::zeros(n, n);
        for i in 0..n {
            let ri = centered.row(i);
            for j in i..n {
                let rj = centered.row(j);
                let dot: f64 = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
                gram[(i, j)] = dot;
                gram[(j, i)] = dot;
            }
        }
        let eig = sym_eigen(&gram);
        let scale = eig.values[0].max(1e-300);
        if eig.values[k - 1] <= rank_tol * scale {
            return Err(Error::RankDeficient(format!(
                "requested k={k} principal directions but gram eigenvalue {} is {:.3e}",
                k, eig.values[k - 1]
            )));
        }
        let mut basis = Matrix::zeros(d, k);
        for c in 0..k {
            let mut col = vec![0.0; d];
            for r in 0..n {
                let w = eig.vectors[(r, c)];
                if w == 0.0 {
                    continue;
                }
                for (j, v) in centered.row(r).iter().enumerate() {
                    col[j] += w * v;
                }
            }
            let norm: f64 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            for r in 0..d {
                basis[(r, c)] = col[r] / norm;
            }
        }
        Ok(basis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn jacobi_recovers_diagonal() {
        let mut m = Matrix::zeros(3, 3);
        m[(0, 0)] = 3.0;
        m[(1, 1)] = 1.0;
        m[(2, 2)] = 2.0;
        let eig = sym_eigen(&m);
        assert_abs_diff_eq!(eig.values[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.values[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.values[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn jacobi_2x2_known() {
        // [[2,1],[1,2]] has eigenvalues 3 and 1.
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let eig = sym_eigen(&m);
        assert_abs_diff_eq!(eig.values[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.values[1], 1.0, epsilon = 1e-12);
        // Eigenvector for 3 is (1,1)/sqrt(2) up to sign.
        let v0 = (eig.vectors[(0, 0)], eig.vectors[(1, 0)]);
        assert_abs_diff_eq!((v0.0.abs() - v0.1.abs()).abs(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        let m = Matrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, -0.2],
            vec![0.5, -0.2, 1.0],
        ]);
        let recon = sym_func(&m, |x| x);
        assert!(m.max_abs_diff(&recon) < 1e-10);
    }

    #[test]
    fn sym_func_sqrt_squares_back() {
        let m = Matrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 2.0]]);
        let root = sym_func(&m, |x| x.max(0.0).sqrt());
        let back = root.matmul(&root);
        assert!(m.max_abs_diff(&back) < 1e-10);
    }

    #[test]
    fn pca_gram_and_cov_routes_agree() {
        // 5 samples in 3 dims (cov route), then transposed shape check via
        // a thin sample set (gram route).
        let samples = Matrix::from_rows(&[
            vec![1.0, 0.1, 0.0],
            vec![2.0, -0.1, 0.0],
            vec![3.0, 0.05, 0.0],
            vec![4.0, 0.0, 0.0],
            vec![5.0, -0.05, 0.0],
        ]);
        let basis = pca_basis(&samples, 1).unwrap();
        // Dominant direction is close to e1.
        assert!(basis[(0, 0)].abs() > 0.99);

        let thin = Matrix::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![2.0, 0.0, 0.0, 0.1]]);
        let b2 = pca_basis(&thin, 1).unwrap();
        assert!(b2[(0, 0)].abs() > 0.99);
    }

    #[test]
    fn pca_rank_deficiency_detected() {
        let samples = Matrix::from_rows(&[
            vec![1.0, 2.0],
            vec![2.0, 4.0],
            vec![3.0, 6.0],
        ]);
        assert!(matches!(
            pca_basis(&samples, 2),
            Err(crate::error::Error::RankDeficient(_))
        ));
    }
}
