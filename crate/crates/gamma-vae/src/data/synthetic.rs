//! Synthetic benchmark manifolds: desk-scale stand-ins for the expression
//! atlases, with known intrinsic structure.

use nalgebra::{DMatrix, DVector, QR};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::error::{Error, Result};

/// Cluster centers of the curved sheet sit on a ring of this radius in
/// sheet parameters.
const LAYOUT_RADIUS: f64 = 2.0;
/// In-sheet Gaussian spread of each cluster.
const CLUSTER_SPREAD: f64 = 0.55;
/// Coefficient of the quadratic terms; large enough that the quadratic
/// directions carry as much variance as the linear ones.
const SHEET_CURVATURE: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticKind {
    /// `x = A z + b + noise` with orthonormal columns of `A` and standard
    /// normal `z`.
    LinearSubspace { n_features: usize, latent_dim: usize },
    /// Classic 3-D roll `(t cos t, h, t sin t)` rotated into `n_features`
    /// dimensions.
    SwissRoll { n_features: usize },
    /// Gaussian clusters centered on a quadratic 2-D sheet whose linear and
    /// quadratic directions span five ambient dimensions; groups and labels
    /// carry the cluster id.
    CurvedSheetClusters { n_features: usize, clusters: usize },
    /// Uniform points on a 2-sphere of the given radius, embedded in
    /// `n_features` dimensions.
    Sphere { n_features: usize, radius: f64 },
}

/// Random matrix with orthonormal columns.
fn orthonormal_frame(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let gauss = DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
    QR::new(gauss).q()
}

fn standard_normal_vec(len: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Deterministically generates `n` samples of the requested manifold with
/// i.i.d. `N(0, noise_sigma^2)` ambient noise.
pub fn gen_synthetic(
    kind: &SyntheticKind,
    n: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::domain("sample count must be positive"));
    }
    if noise_sigma < 0.0 {
        return Err(Error::domain("noise_sigma must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        SyntheticKind::LinearSubspace {
            n_features,
            latent_dim,
        } => {
            let (nf, m) = (*n_features, *latent_dim);
            if m == 0 || nf < m {
                return Err(Error::domain(format!(
                    "linear_subspace needs 1 <= latent_dim <= n_features, got {m}/{nf}"
                )));
            }
            let a = orthonormal_frame(nf, m, &mut rng);
            let b = standard_normal_vec(nf, &mut rng) * 0.5;
            let mut matrix = DMatrix::zeros(n, nf);
            for i in 0..n {
                let z = standard_normal_vec(m, &mut rng);
                let mut x = &a * z + &b;
                add_noise(&mut x, noise_sigma, &mut rng);
                matrix.set_row(i, &x.transpose());
            }
            Dataset::new(matrix, feature_names(nf), None, None)
        }
        SyntheticKind::SwissRoll { n_features } => {
            let nf = *n_features;
            if nf < 3 {
                return Err(Error::domain("swiss_roll needs at least 3 features"));
            }
            let frame = orthonormal_frame(nf, 3, &mut rng);
            let mut matrix = DMatrix::zeros(n, nf);
            for i in 0..n {
                let t = 1.5 * std::f64::consts::PI * (1.0 + 2.0 * rng.random_range(0.0..1.0));
                let h = rng.random_range(0.0..21.0);
                let p3 = DVector::from_vec(vec![t * t.cos(), h, t * t.sin()]);
                let mut x = &frame * p3;
                add_noise(&mut x, noise_sigma, &mut rng);
                matrix.set_row(i, &x.transpose());
            }
            Dataset::new(matrix, feature_names(nf), None, None)
        }
        SyntheticKind::CurvedSheetClusters {
            n_features,
            clusters,
        } => {
            let (nf, k) = (*n_features, *clusters);
            if nf < 5 {
                return Err(Error::domain(
                    "curved_sheet_clusters needs at least 5 features",
                ));
            }
            if k < 2 {
                return Err(Error::domain("curved_sheet_clusters needs >= 2 clusters"));
            }
            let frame = orthonormal_frame(nf, 5, &mut rng);
            let centers: Vec<(f64, f64)> = (0..k)
                .map(|c| {
                    let phi = 2.0 * std::f64::consts::PI * c as f64 / k as f64;
                    (LAYOUT_RADIUS * phi.cos(), LAYOUT_RADIUS * phi.sin())
                })
                .collect();
            let mut matrix = DMatrix::zeros(n, nf);
            let mut tags = Vec::with_capacity(n);
            for i in 0..n {
                let c = i % k;
                let a = centers[c].0 + CLUSTER_SPREAD * rng.sample::<f64, _>(StandardNormal);
                let b = centers[c].1 + CLUSTER_SPREAD * rng.sample::<f64, _>(StandardNormal);
                let sheet = DVector::from_vec(vec![
                    a,
                    b,
                    SHEET_CURVATURE * a * a,
                    SHEET_CURVATURE * b * b,
                    SHEET_CURVATURE * a * b,
                ]);
                let mut x = &frame * sheet;
                add_noise(&mut x, noise_sigma, &mut rng);
                matrix.set_row(i, &x.transpose());
                tags.push(format!("c{c}"));
            }
            Dataset::new(
                matrix,
                feature_names(nf),
                Some(tags.clone()),
                Some(tags),
            )
        }
        SyntheticKind::Sphere { n_features, radius } => {
            let (nf, r) = (*n_features, *radius);
            if nf < 3 {
                return Err(Error::domain("sphere needs at least 3 features"));
            }
            if r <= 0.0 {
                return Err(Error::domain("sphere radius must be positive"));
            }
            let frame = orthonormal_frame(nf, 3, &mut rng);
            let mut matrix = DMatrix::zeros(n, nf);
            for i in 0..n {
                let mut dir = standard_normal_vec(3, &mut rng);
                while dir.norm() < 1e-12 {
                    dir = standard_normal_vec(3, &mut rng);
                }
                dir /= dir.norm();
                let mut x = &frame * (dir * r);
                add_noise(&mut x, noise_sigma, &mut rng);
                matrix.set_row(i, &x.transpose());
            }
            Dataset::new(matrix, feature_names(nf), None, None)
        }
    }
}

fn add_noise(x: &mut DVector<f64>, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma > 0.0 {
        for v in x.iter_mut() {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

fn feature_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("f{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_subspace_lies_in_affine_span() {
        let kind = SyntheticKind::LinearSubspace {
            n_features: 10,
            latent_dim: 2,
        };
        let ds = gen_synthetic(&kind, 40, 0.0, 5).unwrap();
        // Projecting centered rows onto the top-2 singular subspace must be
        // lossless when noise is zero.
        let mean = ds.matrix.row_mean();
        let centered = DMatrix::from_fn(40, 10, |i, j| ds.matrix[(i, j)] - mean[j]);
        let svd = nalgebra::SVD::new(centered.clone(), true, true);
        let residual: f64 = svd.singular_values.iter().skip(2).map(|s| s * s).sum();
        assert!(residual < 1e-18, "residual {residual}");
    }

    #[test]
    fn curved_sheet_has_exact_cluster_tags() {
        let kind = SyntheticKind::CurvedSheetClusters {
            n_features: 8,
            clusters: 6,
        };
        let ds = gen_synthetic(&kind, 60, 0.05, 1).unwrap();
        let groups = ds.distinct_groups();
        assert_eq!(groups.len(), 6);
        assert_eq!(ds.labels.as_ref().unwrap().len(), 60);
    }

    #[test]
    fn sphere_radius_is_exact_without_noise() {
        let kind = SyntheticKind::Sphere {
            n_features: 7,
            radius: 3.0,
        };
        let ds = gen_synthetic(&kind, 25, 0.0, 9).unwrap();
        for i in 0..25 {
            let norm = ds.matrix.row(i).norm();
            assert!((norm - 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let kind = SyntheticKind::SwissRoll { n_features: 6 };
        let a = gen_synthetic(&kind, 30, 0.1, 42).unwrap();
        let b = gen_synthetic(&kind, 30, 0.1, 42).unwrap();
        let c = gen_synthetic(&kind, 30, 0.1, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
