//! Linear discriminant classifier with a shared (pooled) covariance.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LdaModel {
    classes: Vec<String>,
    means: Vec<DVector<f64>>,
    cov_inverse: DMatrix<f64>,
    log_priors: Vec<f64>,
}

impl LdaModel {
    pub fn classes(&self) -> &[String] {
        &self.classes
    }
}

/// Fits the discriminant on `n x m` points: class means, frequency priors,
/// and a pooled covariance jittered like the geometry metric
/// (`1e-6 * trace / m` on the diagonal).
pub fn lda_fit(points: &DMatrix<f64>, labels: &[String]) -> Result<LdaModel> {
    let (n, dim) = (points.nrows(), points.ncols());
    if labels.len() != n {
        return Err(Error::shape(format!(
            "{} labels for {} points",
            labels.len(),
            n
        )));
    }
    let mut by_class: BTreeMap<&String, Vec<usize>> = BTreeMap::new();
    for (i, label) in labels.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    if by_class.len() < 2 {
        return Err(Error::domain("lda needs at least two classes"));
    }
    let k = by_class.len();
    let mut classes = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut log_priors = Vec::with_capacity(k);
    let mut pooled = DMatrix::<f64>::zeros(dim, dim);
    for (label, rows) in &by_class {
        let mut mean = DVector::<f64>::zeros(dim);
        for &i in rows {
            mean += points.row(i).transpose();
        }
        mean /= rows.len() as f64;
        for &i in rows {
            let d = points.row(i).transpose() - &mean;
            pooled += &d * d.transpose();
        }
        classes.push((*label).clone());
        means.push(mean);
        log_priors.push((rows.len() as f64 / n as f64).ln());
    }
    let denom = (n - k).max(1) as f64;
    pooled /= denom;
    let jitter = 1e-6 * pooled.trace() / dim as f64;
    for i in 0..dim {
        pooled[(i, i)] += jitter;
    }
    let cov_inverse = Cholesky::new(pooled)
        .ok_or_else(|| Error::domain("singular pooled covariance after jitter"))?
        .inverse();
    Ok(LdaModel {
        classes,
        means,
        cov_inverse,
        log_priors,
    })
}

/// Maximum-discriminant-score prediction.
pub fn lda_predict(model: &LdaModel, points: &DMatrix<f64>) -> Result<Vec<String>> {
    if points.ncols() != model.means[0].len() {
        return Err(Error::shape(format!(
            "points have {} dims, model has {}",
            points.ncols(),
            model.means[0].len()
        )));
    }
    let mut out = Vec::with_capacity(points.nrows());
    for i in 0..points.nrows() {
        let x = points.row(i).transpose();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (kk, mean) in model.means.iter().enumerate() {
            let sigma_mu = &model.cov_inverse * mean;
            let score = x.dot(&sigma_mu) - 0.5 * mean.dot(&sigma_mu) + model.log_priors[kk];
            if score > best_score {
                best_score = score;
                best = kk;
            }
        }
        out.push(model.classes[best].clone());
    }
    Ok(out)
}

/// Fraction of agreeing entries.
pub fn accuracy(predicted: &[String], truth: &[String]) -> f64 {
    assert_eq!(predicted.len(), truth.len(), "accuracy needs equal lengths");
    if predicted.is_empty() {
        return 0.0;
    }
    let hits = predicted
        .iter()
        .zip(truth)
        .filter(|(p, t)| p == t)
        .count();
    hits as f64 / predicted.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn midpoint_rule_in_one_dimension() {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..50 {
            points.push(-3.0 + rng.sample::<f64, _>(StandardNormal));
            labels.push("neg".to_string());
            points.push(3.0 + rng.sample::<f64, _>(StandardNormal));
            labels.push("pos".to_string());
        }
        let matrix = DMatrix::from_column_slice(points.len(), 1, &points);
        let model = lda_fit(&matrix, &labels).unwrap();
        let probe = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert_eq!(lda_predict(&model, &probe).unwrap(), strings(&["pos"]));
        let probe = DMatrix::from_row_slice(1, 1, &[-0.5]);
        assert_eq!(lda_predict(&model, &probe).unwrap(), strings(&["neg"]));
    }

    #[test]
    fn separable_clusters_reach_perfect_training_accuracy() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 40;
            let mut matrix = DMatrix::zeros(2 * n, 2);
            for i in 0..n {
                // Centers 12 sigma apart with unit noise.
                matrix[(i, 0)] = rng.sample::<f64, _>(StandardNormal);
                matrix[(i, 1)] = rng.sample::<f64, _>(StandardNormal);
                matrix[(n + i, 0)] = 12.0 + rng.sample::<f64, _>(StandardNormal);
                matrix[(n + i, 1)] = rng.sample::<f64, _>(StandardNormal);
            }
            let labels: Vec<String> = (0..2 * n)
                .map(|i| if i < n { "a".into() } else { "b".into() })
                .collect();
            let model = lda_fit(&matrix, &labels).unwrap();
            let pred = lda_predict(&model, &matrix).unwrap();
            assert_eq!(accuracy(&pred, &labels), 1.0, "seed {seed}");
        }
    }

    #[test]
    fn hand_computed_four_point_case() {
        // Two classes with means (0,0) and (2,0), isotropic spread.
        let matrix = DMatrix::from_row_slice(
            4,
            2,
            &[-0.5, 0.0, 0.5, 0.0, 1.5, 0.0, 2.5, 0.0],
        );
        let labels = strings(&["l", "l", "r", "r"]);
        let model = lda_fit(&matrix, &labels).unwrap();
        // Boundary at x = 1: discriminants tie there, so probes on either
        // side classify by sign.
        let probes = DMatrix::from_row_slice(3, 2, &[0.9, 5.0, 1.1, -5.0, -10.0, 0.0]);
        let pred = lda_predict(&model, &probes).unwrap();
        assert_eq!(pred, strings(&["l", "r", "l"]));
    }

    #[test]
    fn single_class_is_rejected() {
        let matrix = DMatrix::zeros(3, 2);
        let labels = strings(&["x", "x", "x"]);
        assert!(lda_fit(&matrix, &labels).is_err());
    }
}
