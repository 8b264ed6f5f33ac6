//! Comparison strategies: closest-source selection under four metrics,
//! per-image multiclassifier routing, subspace alignment, correlation
//! alignment (CORAL) and the balanced source mixture.

use crate::alignmetrics::{
    chordal_distance, frobenius_distance, mmd, second_order_of, sinkhorn_divergence, median_cost,
    Bandwidth,
};
use crate::error::{Error, Result};
use crate::imagery::PipelineConfig;
use crate::jpegcodec::{JpegCoeffs, QuantTable};
use crate::linalg::{pca_basis, sym_func, Matrix};
use crate::steganalysis::{
    dctr_features, features_matrix, fit_multinomial, DctrSchema, Detector, FeatureVector,
    Standardizer,
};

/// One catalog source: its pipeline, developed material, features and the
/// detector trained on it.
#[derive(Debug, Clone)]
pub struct CatalogSource {
    pub pipeline: PipelineConfig,
    pub covers: Vec<JpegCoeffs>,
    pub stegos: Vec<JpegCoeffs>,
    pub cover_features: Vec<FeatureVector>,
    pub stego_features: Vec<FeatureVector>,
    pub detector: Detector,
}

/// The representative source set available to the analyst.
#[derive(Debug, Clone)]
pub struct SourceCatalog {
    entries: Vec<CatalogSource>,
    schema_id: String,
}

impl SourceCatalog {
    pub fn new(entries: Vec<CatalogSource>) -> Result<SourceCatalog> {
        let first = entries
            .first()
            .ok_or_else(|| Error::invalid("catalog must be non-empty"))?;
        let schema_id = first.detector.schema_id.clone();
        for e in &entries {
            let all_match = e.detector.schema_id == schema_id
                && e.cover_features.iter().all(|f| f.schema_id == schema_id)
                && e.stego_features.iter().all(|f| f.schema_id == schema_id);
            if !all_match {
                return Err(Error::SchemaMismatch {
                    expected: schema_id,
                    got: "mixed catalog schemas".into(),
                });
            }
        }
        Ok(SourceCatalog { entries, schema_id })
    }

    pub fn entries(&self) -> &[CatalogSource] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn schema_id(&self) -> &str {
        &self.schema_id
    }
}

/// The unlabeled operational set. Carries no class information by
/// construction, so no strategy can peek at labels.
#[derive(Debug, Clone)]
pub struct TargetBundle {
    pub images: Vec<JpegCoeffs>,
    pub quant: QuantTable,
}

impl TargetBundle {
    pub fn new(images: Vec<JpegCoeffs>) -> Result<TargetBundle> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("target bundle must be non-empty"))?;
        let quant = first.quant().clone();
        if images.iter().any(|c| c.quant().steps() != quant.steps()) {
            return Err(Error::invalid(
                "target bundle must share one quantization table",
            ));
        }
        Ok(TargetBundle { images, quant })
    }

    pub fn features(&self, schema: &DctrSchema) -> Result<Vec<FeatureVector>> {
        self.images.iter().map(|c| dctr_features(c, schema)).collect()
    }
}

/// Closeness metric for source selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClosenessMetric {
    /// Normalized chordal distance between top-`k` principal subspaces.
    Nscd { k: usize },
    /// Squared Frobenius distance between feature covariances.
    CovFrobenius,
    /// Unbiased Gaussian MMD with the median-heuristic bandwidth.
    Mmd,
    /// Debiased entropic transport distance.
    Wasserstein,
}

impl ClosenessMetric {
    pub fn name(&self) -> &'static str {
        match self {
            ClosenessMetric::Nscd { .. } => "nscd",
            ClosenessMetric::CovFrobenius => "cov-frobenius",
            ClosenessMetric::Mmd => "mmd",
            ClosenessMetric::Wasserstein => "wasserstein",
        }
    }
}

fn metric_value(metric: ClosenessMetric, source: &Matrix, target: &Matrix) -> Result<f64> {
    match metric {
        ClosenessMetric::Nscd { k } => chordal_distance(source, target, k),
        ClosenessMetric::CovFrobenius => {
            let cs = second_order_of(source)?.cov;
            let ct = second_order_of(target)?.cov;
            frobenius_distance(&cs, &ct)
        }
        ClosenessMetric::Mmd => Ok(mmd(source, target, Bandwidth::Median)?.raw),
        ClosenessMetric::Wasserstein => {
            let eps = 0.05 * median_cost(source, target);
            Ok(sinkhorn_divergence(source, target, eps.max(1e-12), 500, 1e-6)?.value)
        }
    }
}

/// Picks the catalog source whose cover features are closest to the target
/// features under the metric. Returns the argmin index and the full metric
/// table. Ties resolve to the lowest index.
pub fn select_closest_source(
    catalog: &SourceCatalog,
    target: &TargetBundle,
    metric: ClosenessMetric,
    schema: &DctrSchema,
) -> Result<(usize, Vec<f64>)> {
    if schema.id() != catalog.schema_id {
        return Err(Error::SchemaMismatch {
            expected: catalog.schema_id.clone(),
            got: schema.id(),
        });
    }
    let (target_m, _) = features_matrix(&target.features(schema)?)?;
    let mut table = Vec::with_capacity(catalog.len());
    for entry in catalog.entries() {
        let (source_m, _) = features_matrix(&entry.cover_features)?;
        table.push(metric_value(metric, &source_m, &target_m)?);
    }
    let mut best = 0;
    for (i, &v) in table.iter().enumerate() {
        if v < table[best] {
            best = i;
        }
    }
    Ok((best, table))
}

/// Trains a linear multinomial classifier on the catalog's cover features
/// (one class per pipeline) and routes each target image to a source.
pub fn multiclassifier_route(
    catalog: &SourceCatalog,
    target: &TargetBundle,
    schema: &DctrSchema,
) -> Result<Vec<usize>> {
    if catalog.len() < 2 {
        return Err(Error::invalid(
            "multiclassifier routing needs at least 2 catalog sources",
        ));
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (idx, entry) in catalog.entries().iter().enumerate() {
        for f in &entry.cover_features {
            rows.push(f.values.clone());
            labels.push(idx);
        }
    }
    let x = Matrix::from_rows(&rows);
    let standardizer = Standardizer::fit(&x);
    let xs = standardizer.apply(&x);
    let model = fit_multinomial(&xs, &labels, catalog.len(), 1.0 / labels.len() as f64, 1e-6, 300)?;

    let target_features = target.features(schema)?;
    Ok(target_features
        .iter()
        .map(|f| model.predict(&standardizer.apply_row(&f.values)))
        .collect())
}

/// Result of aligning the source PCA subspace onto the target's.
#[derive(Debug, Clone)]
pub struct SubspaceAlignment {
    /// Source samples expressed in the aligned space (`X_s U_s M`).
    pub source_aligned: Matrix,
    /// Target samples in their own PCA space (`X_t U_t`).
    pub target_projected: Matrix,
    /// The alignment map `U_s^T U_t`.
    pub alignment: Matrix,
    pub source_basis: Matrix,
    pub target_basis: Matrix,
}

impl SubspaceAlignment {
    /// Projects new source-domain samples into the aligned space.
    pub fn project_source(&self, samples: &Matrix) -> Matrix {
        samples.matmul(&self.source_basis).matmul(&self.alignment)
    }

    /// Projects new target-domain samples into the target PCA space.
    pub fn project_target(&self, samples: &Matrix) -> Matrix {
        samples.matmul(&self.target_basis)
    }
}

/// Aligns the top-`d` source PCA basis onto the target basis with the
/// closed-form map `M = U_s^T U_t`.
pub fn subspace_align(
    source_features: &Matrix,
    target_features: &Matrix,
    d: usize,
) -> Result<SubspaceAlignment> {
    let u_s = pca_basis(source_features, d)?;
    let u_t = pca_basis(target_features, d)?;
    let alignment = u_s.transpose().matmul(&u_t);
    Ok(SubspaceAlignment {
        source_aligned: source_features.matmul(&u_s).matmul(&alignment),
        target_projected: target_features.matmul(&u_t),
        alignment,
        source_basis: u_s,
        target_basis: u_t,
    })
}

/// The CORAL recoloring operator `(C_s + eta I)^(-1/2) (C_t + eta I)^(1/2)`.
pub fn coral_operator(
    source_features: &Matrix,
    target_features: &Matrix,
    eta: f64,
) -> Result<Matrix> {
    if !(eta > 0.0) {
        return Err(Error::invalid("coral eta must be positive"));
    }
    if source_features.cols() != target_features.cols() {
        return Err(Error::dims("coral feature dimensions differ"));
    }
    let cs = second_order_of(source_features)?.cov;
    let ct = second_order_of(target_features)?.cov;
    if cs.data().iter().any(|v| !v.is_finite()) || ct.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("coral covariance".into()));
    }
    let d = cs.rows();
    let mut cs_r = cs;
    let mut ct_r = ct;
    for i in 0..d {
        cs_r[(i, i)] += eta;
        ct_r[(i, i)] += eta;
    }
    let whiten = sym_func(&cs_r, |x| 1.0 / x.max(1e-300).sqrt());
    let recolor = sym_func(&ct_r, |x| x.max(0.0).sqrt());
    Ok(whiten.matmul(&recolor))
}

/// Whitens the source features and recolors them with the target
/// covariance: `X_s' = X_s (C_s + eta I)^(-1/2) (C_t + eta I)^(1/2)`.
pub fn coral_transform(
    source_features: &Matrix,
    target_features: &Matrix,
    eta: f64,
) -> Result<Matrix> {
    let op = coral_operator(source_features, target_features, eta)?;
    Ok(source_features.matmul(&op))
}

/// Balanced union of catalog sources: each pipeline contributes an equal
/// share (within one) of `total_budget` cover/stego feature pairs, in
/// catalog order.
pub fn build_all_mixture(
    catalog: &SourceCatalog,
    total_budget: usize,
) -> Result<(Vec<FeatureVector>, Vec<FeatureVector>)> {
    if total_budget == 0 {
        return Err(Error::invalid("mixture budget must be positive"));
    }
    let k = catalog.len();
    let base = total_budget / k;
    let extra = total_budget % k;
    let mut covers = Vec::new();
    let mut stegos = Vec::new();
    for (i, entry) in catalog.entries().iter().enumerate() {
        let want = base + usize::from(i < extra);
        let have = entry.cover_features.len().min(entry.stego_features.len());
        if want > have {
            return Err(Error::invalid(format!(
                "source `{}` has only {have} pairs, mixture asks for {want}",
                entry.pipeline.identifier
            )));
        }
        covers.extend(entry.cover_features[..want].iter().cloned());
        stegos.extend(entry.stego_features[..want].iter().cloned());
    }
    Ok((covers, stegos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn gaussian_cloud(
        rng: &mut ChaCha12Rng,
        n: usize,
        d: usize,
        scales: &[f64],
    ) -> Matrix {
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            rows.push(
                (0..d)
                    .map(|j| {
                        let u1: f64 = rng.random::<f64>().max(1e-12);
                        let u2: f64 = rng.random();
                        let g = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                        g * scales[j]
                    })
                    .collect(),
            );
        }
        Matrix::from_rows(&rows)
    }

    #[test]
    fn coral_covariance_matches_recolored_target() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let xs = gaussian_cloud(&mut rng, 400, 4, &[3.0, 1.0, 0.5, 0.2]);
        let xt = gaussian_cloud(&mut rng, 400, 4, &[0.5, 2.0, 1.0, 0.8]);
        let eta = 0.1;
        let transformed = coral_transform(&xs, &xt, eta).unwrap();

        let cs = second_order_of(&xs).unwrap().cov;
        let ct = second_order_of(&xt).unwrap().cov;
        let cov_out = second_order_of(&transformed).unwrap().cov;

        // Closed form: (Ct + eta I)^(1/2) (Cs + eta I)^(-1) restricted to Cs
        // ... i.e. A^T Cs A with A the coral operator.
        let a = coral_operator(&xs, &xt, eta).unwrap();
        let expected = a.transpose().matmul(&cs).matmul(&a);
        assert!(cov_out.max_abs_diff(&expected) < 1e-6);

        // And the recolored form: Ct + eta I - eta * whitened correction.
        let d = cs.rows();
        let mut ct_r = ct.clone();
        let mut cs_r = cs.clone();
        for i in 0..d {
            ct_r[(i, i)] += eta;
            cs_r[(i, i)] += eta;
        }
        let half_t = sym_func(&ct_r, |x| x.max(0.0).sqrt());
        let inv_s = sym_func(&cs_r, |x| 1.0 / x.max(1e-300));
        let correction = half_t.matmul(&inv_s).matmul(&half_t);
        let recolored = ct_r.sub(&correction.scale(eta));
        assert!(
            expected.max_abs_diff(&recolored) < 1e-8,
            "identity check {}",
            expected.max_abs_diff(&recolored)
        );
    }

    #[test]
    fn coral_whitened_intermediate_is_identity_for_tiny_eta() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let xs = gaussian_cloud(&mut rng, 500, 3, &[2.0, 1.0, 0.5]);
        let cs = second_order_of(&xs).unwrap().cov;
        let eta = 1e-9;
        let mut cs_r = cs.clone();
        for i in 0..3 {
            cs_r[(i, i)] += eta;
        }
        let whiten = sym_func(&cs_r, |x| 1.0 / x.max(1e-300).sqrt());
        let whitened = xs.matmul(&whiten);
        let cov_w = second_order_of(&whitened).unwrap().cov;
        assert!(cov_w.max_abs_diff(&Matrix::identity(3)) < 1e-6);
    }

    #[test]
    fn coral_with_huge_eta_is_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let xs = gaussian_cloud(&mut rng, 200, 3, &[2.0, 1.0, 0.5]);
        let xt = gaussian_cloud(&mut rng, 200, 3, &[0.3, 3.0, 1.0]);
        let a = coral_operator(&xs, &xt, 1e12).unwrap();
        assert!(a.max_abs_diff(&Matrix::identity(3)) < 1e-6);
    }

    #[test]
    fn coral_source_equals_target_keeps_covariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let xs = gaussian_cloud(&mut rng, 600, 3, &[1.5, 0.8, 0.4]);
        let transformed = coral_transform(&xs, &xs, 1e-6).unwrap();
        let before = second_order_of(&xs).unwrap().cov;
        let after = second_order_of(&transformed).unwrap().cov;
        assert!(before.max_abs_diff(&after) < 1e-6);
    }

    #[test]
    fn subspace_identity_case_recovers_target_projection() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let x = gaussian_cloud(&mut rng, 300, 3, &[3.0, 1.0, 0.2]);
        let a = subspace_align(&x, &x, 2).unwrap();
        assert!(a.source_aligned.max_abs_diff(&a.target_projected) < 1e-9);
        // M is orthogonal (here: identity up to sign conventions).
        let mtm = a.alignment.transpose().matmul(&a.alignment);
        assert!(mtm.max_abs_diff(&Matrix::identity(2)) < 1e-9);
    }

    #[test]
    fn closed_form_alignment_beats_random_rotations() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let xs = gaussian_cloud(&mut rng, 300, 4, &[3.0, 2.0, 0.5, 0.1]);
        let xt = gaussian_cloud(&mut rng, 300, 4, &[2.0, 3.0, 0.4, 0.2]);
        let d = 2;
        let a = subspace_align(&xs, &xt, d).unwrap();
        let objective = |m: &Matrix| -> f64 {
            a.source_basis.matmul(m).sub(&a.target_basis).frob_sq()
        };
        let best = objective(&a.alignment);
        for trial in 0..20 {
            // Random rotation in the d-dimensional aligned space.
            let t = (trial as f64 + 1.0) * 0.37;
            let rot = Matrix::from_rows(&[
                vec![t.cos(), -t.sin()],
                vec![t.sin(), t.cos()],
            ]);
            let m = a.alignment.matmul(&rot);
            assert!(objective(&m) >= best - 1e-9);
        }
    }

    #[test]
    fn huge_eta_rejected_dimensions_checked() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.5]]);
        let y = Matrix::from_rows(&[vec![0.0], vec![1.0]]);
        assert!(coral_operator(&x, &y, 1.0).is_err());
        assert!(coral_operator(&x, &x, 0.0).is_err());
    }
}
