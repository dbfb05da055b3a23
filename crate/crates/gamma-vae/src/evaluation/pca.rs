//! PCA baseline via eigendecomposition of the covariance matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Linear projection model: centered data projected onto the top-k
/// eigenvectors of the covariance.
#[derive(Debug, Clone)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `k x N`, row-orthonormal, ordered by decreasing explained variance.
    pub components: DMatrix<f64>,
    pub explained_variance: Vec<f64>,
}

/// Fits PCA on an `n x N` matrix (population covariance). The sign of each
/// component is fixed so its largest-magnitude entry is positive.
pub fn pca_fit(data: &DMatrix<f64>, k: usize) -> Result<PcaModel> {
    let (n, dim) = (data.nrows(), data.ncols());
    if n == 0 {
        return Err(Error::shape("pca_fit needs at least one sample"));
    }
    if k == 0 || k > n.min(dim) {
        return Err(Error::domain(format!(
            "pca components k={k} must satisfy 1 <= k <= min(n, N) = {}",
            n.min(dim)
        )));
    }
    let mean = data.row_mean().transpose();
    let mut cov = DMatrix::zeros(dim, dim);
    for i in 0..n {
        let d = data.row(i).transpose() - &mean;
        cov += &d * d.transpose();
    }
    cov /= n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut components = DMatrix::zeros(k, dim);
    let mut explained = Vec::with_capacity(k);
    for (row, &idx) in order.iter().take(k).enumerate() {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        // Deterministic sign: largest-magnitude entry positive.
        let mut max_abs = 0.0;
        let mut max_idx = 0;
        for (i, &x) in v.iter().enumerate() {
            if x.abs() > max_abs {
                max_abs = x.abs();
                max_idx = i;
            }
        }
        if v[max_idx] < 0.0 {
            v = -v;
        }
        components.set_row(row, &v.transpose());
        explained.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance: explained,
    })
}

/// Projects `r x N` points into the `r x k` component space.
pub fn pca_project(model: &PcaModel, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if points.ncols() != model.mean.len() {
        return Err(Error::shape(format!(
            "points have {} features, model expects {}",
            points.ncols(),
            model.mean.len()
        )));
    }
    let mut centered = points.clone();
    for i in 0..centered.nrows() {
        for j in 0..centered.ncols() {
            centered[(i, j)] -= model.mean[j];
        }
    }
    Ok(centered * model.components.transpose())
}

/// Maps component-space points back into data space.
pub fn pca_reconstruct(model: &PcaModel, projected: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if projected.ncols() != model.components.nrows() {
        return Err(Error::shape(format!(
            "projected points have {} components, model has {}",
            projected.ncols(),
            model.components.nrows()
        )));
    }
    let mut out = projected * &model.components;
    for i in 0..out.nrows() {
        for j in 0..out.ncols() {
            out[(i, j)] += model.mean[j];
        }
    }
    Ok(out)
}
