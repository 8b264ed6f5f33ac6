//! Deterministic L2-regularized logistic regression (binary and multinomial)
//! trained by full-batch gradient descent with backtracking line search.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Per-feature standardization fitted on training data.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(samples: &Matrix) -> Standardizer {
        let d = samples.cols();
        let n = samples.rows() as f64;
        let means = samples.col_means();
        let mut scales = vec![0.0; d];
        for r in 0..samples.rows() {
            let row = samples.row(r);
            for j in 0..d {
                let c = row[j] - means[j];
                scales[j] += c * c;
            }
        }
        for s in &mut scales {
            let var = *s / (n - 1.0).max(1.0);
            let sd = var.sqrt();
            *s = if sd > 1e-12 { sd } else { 1.0 };
        }
        Standardizer { means, scales }
    }

    pub fn apply_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, samples: &Matrix) -> Matrix {
        let mut out = samples.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for j in 0..row.len() {
                row[j] = (row[j] - self.means[j]) / self.scales[j];
            }
        }
        out
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(x)) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        (1.0 + x.exp()).ln()
    }
}

/// Binary logistic model on standardized features.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Loss and gradient of the regularized logistic objective.
/// Labels are 0/1; `reg` multiplies half the squared weight norm.
fn objective(
    x: &Matrix,
    labels: &[f64],
    w: &[f64],
    b: f64,
    reg: f64,
) -> (f64, Vec<f64>, f64) {
    let n = x.rows();
    let d = x.cols();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; d];
    let mut grad_b = 0.0;
    for r in 0..n {
        let row = x.row(r);
        let z: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
        let y = labels[r];
        loss += softplus(z) - y * z;
        let resid = sigmoid(z) - y;
        for j in 0..d {
            grad_w[j] += resid * row[j];
        }
        grad_b += resid;
    }
    loss *= inv_n;
    for j in 0..d {
        grad_w[j] = grad_w[j] * inv_n + reg * w[j];
        loss += 0.5 * reg * w[j] * w[j];
    }
    grad_b *= inv_n;
    (loss, grad_w, grad_b)
}

/// Trains weights by gradient descent with Armijo backtracking until the
/// gradient norm drops below `grad_tol` or `max_iter` steps.
pub fn fit_logistic(
    x: &Matrix,
    labels: &[f64],
    reg: f64,
    grad_tol: f64,
    max_iter: usize,
) -> Result<LogisticModel> {
    if x.rows() != labels.len() {
        return Err(Error::dims("label count differs from sample count"));
    }
    if reg < 0.0 {
        return Err(Error::invalid("regularization must be non-negative"));
    }
    let d = x.cols();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut step = 1.0f64;
    let (mut loss, mut gw, mut gb) = objective(x, labels, &w, b, reg);
    for _ in 0..max_iter {
        let gnorm = (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
        if gnorm < grad_tol {
            break;
        }
        // Backtracking line search on the descent direction -grad.
        step = (step * 2.0).min(1e6);
        let mut accepted = false;
        for _ in 0..60 {
            let wt: Vec<f64> = w.iter().zip(&gw).map(|(wi, gi)| wi - step * gi).collect();
            let bt = b - step * gb;
            let (lt, gwt, gbt) = objective(x, labels, &wt, bt, reg);
            if lt <= loss - 1e-4 * step * gnorm * gnorm {
                w = wt;
                b = bt;
                loss = lt;
                gw = gwt;
                gb = gbt;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break; // step underflow: converged as far as f64 allows
        }
    }
    Ok(LogisticModel { weights: w, bias: b })
}

/// Multinomial logistic (softmax) classifier for source routing.
#[derive(Debug, Clone)]
pub struct MultinomialModel {
    /// One weight row per class.
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl MultinomialModel {
    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn scores(&self, row: &[f64]) -> Vec<f64> {
        (0..self.classes())
            .map(|c| {
                self.weights
                    .row(c)
                    .iter()
                    .zip(row)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + self.biases[c]
            })
            .collect()
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let scores = self.scores(row);
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        best
    }
}

fn softmax_objective(
    x: &Matrix,
    labels: &[usize],
    classes: usize,
    w: &Matrix,
    b: &[f64],
    reg: f64,
) -> (f64, Matrix, Vec<f64>) {
    let n = x.rows();
    let d = x.cols();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad_w = Matrix::zeros(classes, d);
    let mut grad_b = vec![0.0; classes];
    let mut logits = vec![0.0; classes];
    for r in 0..n {
        let row = x.row(r);
        for c in 0..classes {
            logits[c] = w.row(c).iter().zip(row).map(|(a, v)| a * v).sum::<f64>() + b[c];
        }
        let hi = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = hi + logits.iter().map(|l| (l - hi).exp()).sum::<f64>().ln();
        loss += lse - logits[labels[r]];
        for c in 0..classes {
            let p = (logits[c] - lse).exp();
            let resid = p - if labels[r] == c { 1.0 } else { 0.0 };
            let gr = grad_w.row_mut(c);
            for j in 0..d {
                gr[j] += resid * row[j];
            }
            grad_b[c] += resid;
        }
    }
    loss *= inv_n;
    for c in 0..classes {
        let gr = grad_w.row_mut(c);
        let wr = w.row(c);
        for j in 0..d {
            gr[j] = gr[j] * inv_n + reg * wr[j];
            loss += 0.5 * reg * wr[j] * wr[j];
        }
        grad_b[c] *= inv_n;
    }
    (loss, grad_w, grad_b)
}

pub fn fit_multinomial(
    x: &Matrix,
    labels: &[usize],
    classes: usize,
    reg: f64,
    grad_tol: f64,
    max_iter: usize,
) -> Result<MultinomialModel> {
    if x.rows() != labels.len() {
        return Err(Error::dims("label count differs from sample count"));
    }
    if labels.iter().any(|&l| l >= classes) {
        return Err(Error::invalid("label outside class range"));
    }
    let d = x.cols();
    let mut w = Matrix::zeros(classes, d);
    let mut b = vec![0.0; classes];
    let mut step = 1.0f64;
    let (mut loss, mut gw, mut gb) = softmax_objective(x, labels, classes, &w, &b, reg);
    for _ in 0..max_iter {
        let gnorm = (gw.frob_sq() + gb.iter().map(|g| g * g).sum::<f64>()).sqrt();
        if gnorm < grad_tol {
            break;
        }
        step = (step * 2.0).min(1e6);
        let mut accepted = false;
        for _ in 0..60 {
            let wt = w.sub(&gw.scale(step));
            let bt: Vec<f64> = b.iter().zip(&gb).map(|(bi, gi)| bi - step * gi).collect();
            let (lt, gwt, gbt) = softmax_objective(x, labels, classes, &wt, &bt, reg);
            if lt <= loss - 1e-4 * step * gnorm * gnorm {
                w = wt;
                b = bt;
                loss = lt;
                gw = gwt;
                gb = gbt;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(MultinomialModel { weights: w, biases: b })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_toy_reaches_full_training_accuracy() {
        let x = Matrix::from_rows(&[
            vec![-2.0, 0.1],
            vec![-1.5, -0.2],
            vec![-1.0, 0.3],
            vec![1.0, -0.1],
            vec![1.5, 0.2],
            vec![2.0, 0.0],
        ]);
        let y = vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let model = fit_logistic(&x, &y, 1e-4, 1e-8, 2000).unwrap();
        for (r, &label) in y.iter().enumerate() {
            let z: f64 = x
                .row(r)
                .iter()
                .zip(&model.weights)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + model.bias;
            assert_eq!(z > 0.0, label > 0.5);
        }
    }

    #[test]
    fn flipped_labels_negate_the_model() {
        let x = Matrix::from_rows(&[
            vec![-1.0, 0.4],
            vec![-0.5, -0.2],
            vec![0.7, 0.1],
            vec![1.2, -0.4],
        ]);
        let y = vec![0.0, 0.0, 1.0, 1.0];
        let flipped: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
        let a = fit_logistic(&x, &y, 1e-3, 1e-10, 4000).unwrap();
        let b = fit_logistic(&x, &flipped, 1e-3, 1e-10, 4000).unwrap();
        for (wa, wb) in a.weights.iter().zip(&b.weights) {
            assert!((wa + wb).abs() < 1e-6, "weights {wa} vs {wb}");
        }
        assert!((a.bias + b.bias).abs() < 1e-6);
    }

    #[test]
    fn huge_regularization_zeroes_weights() {
        let x = Matrix::from_rows(&[vec![-1.0], vec![-0.5], vec![0.5], vec![1.0]]);
        let y = vec![0.0, 0.0, 1.0, 1.0];
        let model = fit_logistic(&x, &y, 1e9, 1e-12, 2000).unwrap();
        assert!(model.weights[0].abs() < 1e-6);
    }

    #[test]
    fn multinomial_separates_three_clusters() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..6 {
            let jitter = (i as f64 - 2.5) * 0.05;
            rows.push(vec![0.0 + jitter, 2.0]);
            labels.push(0usize);
            rows.push(vec![2.0, -1.0 + jitter]);
            labels.push(1);
            rows.push(vec![-2.0 + jitter, -1.0]);
            labels.push(2);
        }
        let x = Matrix::from_rows(&rows);
        let model = fit_multinomial(&x, &labels, 3, 1e-4, 1e-8, 2000).unwrap();
        for (r, &l) in labels.iter().enumerate() {
            assert_eq!(model.predict(x.row(r)), l);
        }
    }
}
