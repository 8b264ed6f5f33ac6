//! DCTR-style feature extraction, linear detector training and accuracy
//! evaluation.

mod dctr;
mod logistic;

pub use dctr::{dctr_features, DctrSchema, FeatureVector, PhaseMode};
pub use logistic::{
    fit_logistic, fit_multinomial, LogisticModel, MultinomialModel, Standardizer,
};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Trained linear detector: logistic weights over standardized features.
/// Scores above zero classify as stego.
#[derive(Debug, Clone)]
pub struct Detector {
    pub model: LogisticModel,
    pub standardizer: Standardizer,
    pub schema_id: String,
    pub reg_strength: f64,
}

impl Detector {
    pub fn score(&self, features: &FeatureVector) -> Result<f64> {
        if features.schema_id != self.schema_id {
            return Err(Error::SchemaMismatch {
                expected: self.schema_id.clone(),
                got: features.schema_id.clone(),
            });
        }
        let row = self.standardizer.apply_row(&features.values);
        Ok(row
            .iter()
            .zip(&self.model.weights)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + self.model.bias)
    }

    /// Serializes the detector as a versioned text record.
    pub fn to_text(&self) -> String {
        let mut out = String::from("tada-detector v1\n");
        out.push_str(&format!("schema = {}\n", self.schema_id));
        out.push_str(&format!("reg = {:e}\n", self.reg_strength));
        out.push_str(&format!("bias = {:e}\n", self.model.bias));
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:e}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        out.push_str(&format!("weights = {}\n", join(&self.model.weights)));
        out.push_str(&format!("means = {}\n", join(&self.standardizer.means)));
        out.push_str(&format!("scales = {}\n", join(&self.standardizer.scales)));
        out
    }

    pub fn from_text(text: &str) -> Result<Detector> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header.trim() != "tada-detector v1" {
            return Err(Error::Parse(format!("bad detector header `{header}`")));
        }
        let mut schema = None;
        let mut reg = None;
        let mut bias = None;
        let mut weights = None;
        let mut means = None;
        let mut scales = None;
        for line in lines {
            let Some((key, value)) = line.split_once('=') else {
                continue;
            };
            let key = key.trim();
            let value = value.trim();
            let parse_list = |v: &str| -> Result<Vec<f64>> {
                v.split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::Parse(format!("detector float: {e}")))
                    })
                    .collect()
            };
            match key {
                "schema" => schema = Some(value.to_string()),
                "reg" => reg = Some(value.parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?),
                "bias" => bias = Some(value.parse::<f64>().map_err(|e| Error::Parse(e.to_string()))?),
                "weights" => weights = Some(parse_list(value)?),
                "means" => means = Some(parse_list(value)?),
                "scales" => scales = Some(parse_list(value)?),
                _ => {}
            }
        }
        Ok(Detector {
            model: LogisticModel {
                weights: weights.ok_or_else(|| Error::Parse("missing weights".into()))?,
                bias: bias.ok_or_else(|| Error::Parse("missing bias".into()))?,
            },
            standardizer: Standardizer {
                means: means.ok_or_else(|| Error::Parse("missing means".into()))?,
                scales: scales.ok_or_else(|| Error::Parse("missing scales".into()))?,
            },
            schema_id: schema.ok_or_else(|| Error::Parse("missing schema".into()))?,
            reg_strength: reg.ok_or_else(|| Error::Parse("missing reg".into()))?,
        })
    }
}

/// Stacks feature vectors into a row matrix, validating schema consistency.
pub fn features_matrix(features: &[FeatureVector]) -> Result<(Matrix, String)> {
    let first = features
        .first()
        .ok_or_else(|| Error::invalid("no feature vectors"))?;
    let d = first.values.len();
    let mut data = Vec::with_capacity(features.len() * d);
    for f in features {
        if f.schema_id != first.schema_id {
            return Err(Error::SchemaMismatch {
                expected: first.schema_id.clone(),
                got: f.schema_id.clone(),
            });
        }
        data.extend_from_slice(&f.values);
    }
    Ok((
        Matrix::from_vec(features.len(), d, data),
        first.schema_id.clone(),
    ))
}

/// Trains a logistic detector on cover (label 0) and stego (label 1)
/// features. The `seed` parameter is part of the interface for symmetry
/// with the stochastic stages; the solver itself is deterministic.
pub fn train_detector(
    covers: &[FeatureVector],
    stegos: &[FeatureVector],
    reg: f64,
    _seed: u64,
) -> Result<Detector> {
    if covers.len() < 2 || stegos.len() < 2 {
        return Err(Error::invalid(
            "need at least 2 examples per class to train a detector",
        ));
    }
    let (cover_m, schema_c) = features_matrix(covers)?;
    let (stego_m, schema_s) = features_matrix(stegos)?;
    if schema_c != schema_s {
        return Err(Error::SchemaMismatch {
            expected: schema_c,
            got: schema_s,
        });
    }
    let n = cover_m.rows() + stego_m.rows();
    let d = cover_m.cols();
    let mut data = Vec::with_capacity(n * d);
    data.extend_from_slice(cover_m.data());
    data.extend_from_slice(stego_m.data());
    let all = Matrix::from_vec(n, d, data);
    let labels: Vec<f64> = std::iter::repeat_n(0.0, cover_m.rows())
        .chain(std::iter::repeat_n(1.0, stego_m.rows()))
        .collect();

    let standardizer = Standardizer::fit(&all);
    let std_all = standardizer.apply(&all);
    let model = fit_logistic(&std_all, &labels, reg, 1e-6, 500)?;
    Ok(Detector {
        model,
        standardizer,
        schema_id: schema_c,
        reg_strength: reg,
    })
}

/// Balanced accuracy (mean of the per-class rates) at the 0.5 threshold.
pub fn evaluate(detector: &Detector, covers: &[FeatureVector], stegos: &[FeatureVector]) -> Result<f64> {
    if covers.is_empty() || stegos.is_empty() {
        return Err(Error::invalid("evaluation sets must be non-empty"));
    }
    let mut tnr = 0.0;
    for f in covers {
        if detector.score(f)? <= 0.0 {
            tnr += 1.0;
        }
    }
    tnr /= covers.len() as f64;
    let mut tpr = 0.0;
    for f in stegos {
        if detector.score(f)? > 0.0 {
            tpr += 1.0;
        }
    }
    tpr /= stegos.len() as f64;
    Ok(0.5 * (tpr + tnr))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(values: Vec<f64>) -> FeatureVector {
        FeatureVector {
            values,
            schema_id: "toy".into(),
        }
    }

    fn toy_sets() -> (Vec<FeatureVector>, Vec<FeatureVector>) {
        let covers = vec![
            fv(vec![-1.0, 0.2]),
            fv(vec![-1.5, -0.1]),
            fv(vec![-0.8, 0.0]),
        ];
        let stegos = vec![
            fv(vec![1.0, 0.1]),
            fv(vec![1.4, -0.2]),
            fv(vec![0.9, 0.3]),
        ];
        (covers, stegos)
    }

    #[test]
    fn separable_toy_evaluates_to_one() {
        let (covers, stegos) = toy_sets();
        let det = train_detector(&covers, &stegos, 1e-4, 0).unwrap();
        let acc = evaluate(&det, &covers, &stegos).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn extreme_regularization_kills_the_weights() {
        let (covers, stegos) = toy_sets();
        let det = train_detector(&covers, &stegos, 1e9, 0).unwrap();
        let wnorm: f64 = det.model.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(wnorm < 1e-6, "weight norm {wnorm}");
        // On balanced sets with identical class distributions any detector
        // lands at chance exactly.
        let acc = evaluate(&det, &covers, &covers).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn evaluation_symmetric_under_label_swap() {
        let (covers, stegos) = toy_sets();
        let det = train_detector(&covers, &stegos, 1e-4, 0).unwrap();
        let flipped = train_detector(&stegos, &covers, 1e-4, 0).unwrap();
        let a = evaluate(&det, &covers, &stegos).unwrap();
        let b = evaluate(&flipped, &stegos, &covers).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn schema_mismatch_rejected() {
        let (covers, stegos) = toy_sets();
        let det = train_detector(&covers, &stegos, 1e-4, 0).unwrap();
        let alien = FeatureVector {
            values: vec![0.0, 0.0],
            schema_id: "other".into(),
        };
        assert!(det.score(&alien).is_err());
        let mut bad = stegos.clone();
        bad[0].schema_id = "other".into();
        assert!(train_detector(&covers, &bad, 1e-4, 0).is_err());
    }

    #[test]
    fn detector_text_round_trip() {
        let (covers, stegos) = toy_sets();
        let det = train_detector(&covers, &stegos, 1e-4, 0).unwrap();
        let text = det.to_text();
        let back = Detector::from_text(&text).unwrap();
        assert_eq!(back.model.weights, det.model.weights);
        assert_eq!(back.model.bias, det.model.bias);
        assert_eq!(back.schema_id, det.schema_id);
        let s1 = det.score(&covers[0]).unwrap();
        let s2 = back.score(&covers[0]).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn rescaled_features_keep_decisions() {
        // Positive rescaling is absorbed by standardization: decisions match.
        let (covers, stegos) = toy_sets();
        let scale = |fs: &[FeatureVector], s: f64| -> Vec<FeatureVector> {
            fs.iter()
                .map(|f| fv(f.values.iter().map(|v| v * s).collect()))
                .collect()
        };
        let det = train_detector(&covers, &stegos, 1e-4, 0).unwrap();
        let det2 = train_detector(&scale(&covers, 7.0), &scale(&stegos, 7.0), 1e-4, 0).unwrap();
        for f in covers.iter().chain(&stegos) {
            let z1 = det.score(f).unwrap();
            let f2 = fv(f.values.iter().map(|v| v * 7.0).collect());
            let z2 = det2.score(&f2).unwrap();
            assert!((z1 - z2).abs() < 1e-6);
        }
    }
}
