//! Induced metric, Christoffel symbols, and the two curvature scalars of a
//! decoder manifold, all computed exactly from a [`Jet`].
//!
//! The second derivative of the map splits into a component tangent to the
//! manifold (whose contracted squared norm is the parameter-effects
//! curvature) and a normal component (the extrinsic curvature). Both
//! contractions use the inverse induced metric, so a trace-scaled jitter is
//! always added before inversion and reported back to the caller.

use nalgebra::{Cholesky, DMatrix, DVector, QR, SVD};

use crate::error::{Error, Result};
use crate::jets::{decoder_jet, Jet, MlpModel};

/// Default relative jitter for metric inversion.
pub const DEFAULT_JITTER_SCALE: f64 = 1e-6;

/// Induced metric at one latent point plus the jittered inverse.
#[derive(Debug, Clone)]
pub struct PointMetric {
    /// `g = J^T J`, without jitter.
    pub metric: DMatrix<f64>,
    /// `(g + jitter I)^-1`.
    pub inverse: DMatrix<f64>,
    /// The diagonal shift that was applied before inversion.
    pub jitter_used: f64,
}

/// Christoffel symbols of the second kind, `Gamma^kappa_{mu nu}`, stored
/// flat as an `m x m^2` matrix (row `kappa`, column `mu*m + nu`).
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    latent_dim: usize,
    flat: DMatrix<f64>,
}

impl Christoffel {
    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn get(&self, kappa: usize, mu: usize, nu: usize) -> f64 {
        self.flat[(kappa, mu * self.latent_dim + nu)]
    }

    pub(crate) fn flat(&self) -> &DMatrix<f64> {
        &self.flat
    }
}

/// Everything the geometry of one point provides: metric, inverse,
/// connection, and the two curvature scalars.
#[derive(Debug, Clone)]
pub struct GeometryAtPoint {
    pub metric: DMatrix<f64>,
    pub metric_inverse: DMatrix<f64>,
    pub christoffel: Christoffel,
    pub pe_curvature: f64,
    pub ex_curvature: f64,
    pub jitter_used: f64,
}

/// Induced metric `g = J^T J` and its jittered inverse.
///
/// The jitter is relative: `jitter_scale * trace(g) / m` is added to the
/// diagonal before the symmetric positive-definite factorization.
pub fn metric_from_jet(jet: &Jet, jitter_scale: f64) -> Result<PointMetric> {
    if jitter_scale < 0.0 {
        return Err(Error::domain("jitter_scale must be nonnegative"));
    }
    let j = jet.jacobian();
    let m = jet.latent_dim();
    let metric = j.transpose() * j;
    let jitter_used = jitter_scale * metric.trace() / m as f64;
    let mut shifted = metric.clone();
    for i in 0..m {
        shifted[(i, i)] += jitter_used;
    }
    let inverse = Cholesky::new(shifted)
        .ok_or(Error::SingularMetric {
            point: Vec::new(),
            jitter: jitter_used,
        })?
        .inverse();
    Ok(PointMetric {
        metric,
        inverse,
        jitter_used,
    })
}

/// Christoffel symbols of the induced metric:
/// `Gamma^kappa_{mu nu} = g^{kappa lambda} sum_a J^a_lambda H^a_{mu nu}`.
pub fn christoffel(jet: &Jet, g_inverse: &DMatrix<f64>) -> Result<Christoffel> {
    let m = jet.latent_dim();
    if g_inverse.nrows() != m || g_inverse.ncols() != m {
        return Err(Error::shape(format!(
            "metric inverse is {}x{}, expected {}x{}",
            g_inverse.nrows(),
            g_inverse.ncols(),
            m,
            m
        )));
    }
    let a_mat = jet.jacobian().transpose() * jet.hessian_flat();
    Ok(Christoffel {
        latent_dim: m,
        flat: g_inverse * a_mat,
    })
}

/// `Ginv (x) Ginv` as an `m^2 x m^2` matrix acting on row-major vectorized
/// symmetric forms.
fn kron_sym(g_inverse: &DMatrix<f64>) -> DMatrix<f64> {
    let m = g_inverse.nrows();
    DMatrix::from_fn(m * m, m * m, |row, col| {
        let (mu, nu) = (row / m, row % m);
        let (mub, nub) = (col / m, col % m);
        g_inverse[(mu, mub)] * g_inverse[(nu, nub)]
    })
}

/// Parameter-effects and extrinsic curvature scalars from a jet and the
/// point's metric inverse and connection. Raw contractions, no
/// normalization by data or latent dimension.
pub fn curvatures(
    jet: &Jet,
    metric_inverse: &DMatrix<f64>,
    christoffel: &Christoffel,
) -> Result<(f64, f64)> {
    let m = jet.latent_dim();
    if christoffel.latent_dim() != m || metric_inverse.nrows() != m {
        return Err(Error::shape(
            "curvature inputs disagree on latent dimension",
        ));
    }
    let tangential = jet.jacobian() * christoffel.flat();
    let normal = jet.hessian_flat() - &tangential;
    let kron = kron_sym(metric_inverse);
    let l_pe = (&tangential * &kron).dot(&tangential);
    let l_ex = (&normal * &kron).dot(&normal);
    Ok((l_pe, l_ex))
}

/// Full geometry of one point.
pub fn geometry_at(jet: &Jet, jitter_scale: f64) -> Result<GeometryAtPoint> {
    let parts = curvature_parts(jet, jitter_scale)?;
    Ok(GeometryAtPoint {
        christoffel: Christoffel {
            latent_dim: jet.latent_dim(),
            flat: parts.gamma,
        },
        metric: parts.metric,
        metric_inverse: parts.inverse,
        pe_curvature: parts.l_pe,
        ex_curvature: parts.l_ex,
        jitter_used: parts.jitter,
    })
}

/// Intermediates of the curvature computation at one point, kept so the
/// training code can push adjoints back through the same contraction.
pub(crate) struct CurvatureParts {
    pub metric: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
    pub jitter: f64,
    /// `A = J^T H`, `m x m^2`.
    pub a_mat: DMatrix<f64>,
    /// `Gamma = Ginv A`, `m x m^2`.
    pub gamma: DMatrix<f64>,
    /// Tangential component `T = J Gamma`, `N x m^2`.
    pub t_flat: DMatrix<f64>,
    /// Normal component `P = H - T`, `N x m^2`.
    pub p_flat: DMatrix<f64>,
    /// `T K` with `K = Ginv (x) Ginv`.
    pub t_weighted: DMatrix<f64>,
    /// `P K`.
    pub p_weighted: DMatrix<f64>,
    pub l_pe: f64,
    pub l_ex: f64,
}

pub(crate) fn curvature_parts(jet: &Jet, jitter_scale: f64) -> Result<CurvatureParts> {
    let pm = metric_from_jet(jet, jitter_scale)?;
    let a_mat = jet.jacobian().transpose() * jet.hessian_flat();
    let gamma = &pm.inverse * &a_mat;
    let t_flat = jet.jacobian() * &gamma;
    let p_flat = jet.hessian_flat() - &t_flat;
    let kron = kron_sym(&pm.inverse);
    let t_weighted = &t_flat * &kron;
    let p_weighted = &p_flat * &kron;
    let l_pe = t_weighted.dot(&t_flat);
    let l_ex = p_weighted.dot(&p_flat);
    Ok(CurvatureParts {
        metric: pm.metric,
        inverse: pm.inverse,
        jitter: pm.jitter_used,
        a_mat,
        gamma,
        t_flat,
        p_flat,
        t_weighted,
        p_weighted,
        l_pe,
        l_ex,
    })
}

fn orthonormal_basis(jet: &Jet, label: &str) -> Result<DMatrix<f64>> {
    let j = jet.jacobian().clone();
    let scale = j.norm();
    let qr = QR::new(j);
    let r = qr.r();
    let tol = 1e-12 * scale.max(1e-300);
    for i in 0..r.nrows().min(r.ncols()) {
        if r[(i, i)].abs() < tol {
            return Err(Error::DegenerateTangent(format!(
                "{label} jacobian is rank-deficient (column {i})"
            )));
        }
    }
    Ok(qr.q())
}

/// Principal angles (radians, ascending) between the tangent spaces of two
/// jets: orthonormalize each Jacobian, then take `arccos` of the singular
/// values of `Q_a^T Q_b`.
pub fn tangent_angles(jet_a: &Jet, jet_b: &Jet) -> Result<Vec<f64>> {
    if jet_a.latent_dim() != jet_b.latent_dim() || jet_a.data_dim() != jet_b.data_dim() {
        return Err(Error::shape(
            "tangent_angles requires jets of matching dimensions",
        ));
    }
    let qa = orthonormal_basis(jet_a, "first")?;
    let qb = orthonormal_basis(jet_b, "second")?;
    let overlap = qa.transpose() * qb;
    let svd = SVD::new(overlap, false, false);
    // Singular values come out descending, so angles come out ascending.
    Ok(svd
        .singular_values
        .iter()
        .map(|&s| s.clamp(-1.0, 1.0).acos())
        .collect())
}

/// One row of a curvature map over a latent grid.
#[derive(Debug, Clone)]
pub struct CurvatureMapRow {
    pub point: Vec<f64>,
    pub pe: f64,
    pub ex: f64,
    /// Largest principal angle between this point's tangent space and the
    /// reference point's.
    pub max_tangent_angle: f64,
}

/// Evaluates curvature scalars and tangent angles (relative to
/// `reference_z`) for every row of `points`.
pub fn curvature_map(
    decoder: &MlpModel,
    points: &DMatrix<f64>,
    jitter_scale: f64,
    reference_z: &DVector<f64>,
) -> Result<Vec<CurvatureMapRow>> {
    let reference = decoder_jet(decoder, reference_z)?;
    use rayon::prelude::*;
    let rows: Vec<Result<CurvatureMapRow>> = (0..points.nrows())
        .into_par_iter()
        .map(|i| {
            let z = points.row(i).transpose();
            let jet = decoder_jet(decoder, &z)?;
            let geo = geometry_at(&jet, jitter_scale).map_err(|e| at_point(e, &z))?;
            let angles = tangent_angles(&jet, &reference)?;
            Ok(CurvatureMapRow {
                point: z.iter().copied().collect(),
                pe: geo.pe_curvature,
                ex: geo.ex_curvature,
                max_tangent_angle: angles.last().copied().unwrap_or(0.0),
            })
        })
        .collect();
    rows.into_iter().collect()
}

/// Fills the offending latent point into a singular-metric error.
pub(crate) fn at_point(err: Error, z: &DVector<f64>) -> Error {
    match err {
        Error::SingularMetric { point, jitter } if point.is_empty() => Error::SingularMetric {
            point: z.iter().copied().collect(),
            jitter,
        },
        other => other,
    }
}

/// Writes a curvature map as CSV with header `z1,...,zm,pe,ex,max_tangent_angle`.
pub fn write_curvature_map_csv(path: impl AsRef<std::path::Path>, rows: &[CurvatureMapRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path.as_ref()).map_err(csv_io)?;
    let m = rows.first().map_or(0, |r| r.point.len());
    let mut header: Vec<String> = (1..=m).map(|i| format!("z{i}")).collect();
    header.extend(["pe".into(), "ex".into(), "max_tangent_angle".into()]);
    wtr.write_record(&header).map_err(csv_io)?;
    for row in rows {
        let mut rec: Vec<String> = row.point.iter().map(|v| v.to_string()).collect();
        rec.push(row.pe.to_string());
        rec.push(row.ex.to_string());
        rec.push(row.max_tangent_angle.to_string());
        wtr.write_record(&rec).map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

pub(crate) fn csv_io(err: csv::Error) -> Error {
    Error::Parse {
        path: String::new(),
        line: 0,
        message: err.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jets::{AnalyticManifold, Role};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn polar_jet(r: f64, theta: f64) -> Jet {
        AnalyticManifold::PolarSheet
            .jet(&DVector::from_vec(vec![r, theta]))
            .unwrap()
    }

    #[test]
    fn polar_sheet_metric() {
        let jet = polar_jet(2.0, 0.0);
        let pm = metric_from_jet(&jet, 0.0).unwrap();
        assert_relative_eq!(pm.metric[(0, 0)], 1.0, max_relative = 1e-12);
        assert_relative_eq!(pm.metric[(1, 1)], 4.0, max_relative = 1e-12);
        assert_relative_eq!(pm.inverse[(1, 1)], 0.25, max_relative = 1e-12);
        assert!(pm.metric[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn orthonormal_plane_metric_is_identity() {
        // Columns of A orthonormal in R^3.
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let plane = AnalyticManifold::Plane {
            a,
            b: DVector::zeros(3),
        };
        let jet = plane.jet(&DVector::from_vec(vec![0.2, 0.8])).unwrap();
        let pm = metric_from_jet(&jet, 0.0).unwrap();
        assert_relative_eq!(pm.metric, DMatrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn rank_deficient_jacobian_inverts_with_jitter() {
        // Duplicated columns: rank 1.
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 0.5, 0.5]);
        let plane = AnalyticManifold::Plane {
            a,
            b: DVector::zeros(3),
        };
        let jet = plane.jet(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let pm = metric_from_jet(&jet, DEFAULT_JITTER_SCALE).unwrap();
        assert!(pm.jitter_used > 0.0);
        // (metric + jitter I) * inverse = identity.
        let mut shifted = pm.metric.clone();
        for i in 0..2 {
            shifted[(i, i)] += pm.jitter_used;
        }
        assert_relative_eq!(&shifted * &pm.inverse, DMatrix::identity(2, 2), epsilon = 1e-8);
    }

    #[test]
    fn polar_christoffel_symbols() {
        for theta in [0.0, 0.7, 2.1] {
            let jet = polar_jet(2.0, theta);
            let pm = metric_from_jet(&jet, 0.0).unwrap();
            let gamma = christoffel(&jet, &pm.inverse).unwrap();
            assert_relative_eq!(gamma.get(0, 1, 1), -2.0, max_relative = 1e-10);
            assert_relative_eq!(gamma.get(1, 0, 1), 0.5, max_relative = 1e-10);
            assert_relative_eq!(gamma.get(1, 1, 0), 0.5, max_relative = 1e-10);
            assert!(gamma.get(0, 0, 0).abs() < 1e-10);
            assert!(gamma.get(0, 0, 1).abs() < 1e-10);
            assert!(gamma.get(1, 1, 1).abs() < 1e-10);
        }
    }

    #[test]
    fn plane_christoffel_is_zero() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 1.0, 3.0, 0.0]);
        let plane = AnalyticManifold::Plane {
            a,
            b: DVector::zeros(3),
        };
        let jet = plane.jet(&DVector::from_vec(vec![0.5, -0.5])).unwrap();
        let pm = metric_from_jet(&jet, 0.0).unwrap();
        let gamma = christoffel(&jet, &pm.inverse).unwrap();
        assert!(gamma.flat().iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn sphere_equator_christoffel() {
        let jet = AnalyticManifold::Sphere { radius: 1.0 }
            .jet(&DVector::from_vec(vec![std::f64::consts::FRAC_PI_2, 0.3]))
            .unwrap();
        let pm = metric_from_jet(&jet, 0.0).unwrap();
        let gamma = christoffel(&jet, &pm.inverse).unwrap();
        // Gamma^u_vv = -sin u cos u = 0 and Gamma^v_uv = cot u = 0 at the equator.
        assert!(gamma.get(0, 1, 1).abs() < 1e-12);
        assert!(gamma.get(1, 0, 1).abs() < 1e-12);
    }

    /// Independent route: Gamma^k_mn = g^{kl} (d_mu g_{nl} + d_nu g_{ml} - d_l g_{mn}) / 2
    /// with the metric derivatives taken by central differences.
    fn christoffel_metric_derivative_oracle(
        manifold: &AnalyticManifold,
        z: &DVector<f64>,
        h: f64,
    ) -> Vec<f64> {
        let m = z.len();
        let metric_at = |p: &DVector<f64>| {
            metric_from_jet(&manifold.jet(p).unwrap(), 0.0)
                .unwrap()
                .metric
        };
        let g_inv = metric_from_jet(&manifold.jet(z).unwrap(), 0.0)
            .unwrap()
            .inverse;
        let mut dg = vec![DMatrix::<f64>::zeros(m, m); m];
        for k in 0..m {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            dg[k] = (metric_at(&zp) - metric_at(&zm)) / (2.0 * h);
        }
        let mut out = vec![0.0; m * m * m];
        for kappa in 0..m {
            for mu in 0..m {
                for nu in 0..m {
                    let mut sum = 0.0;
                    for lambda in 0..m {
                        sum += g_inv[(kappa, lambda)]
                            * (dg[mu][(nu, lambda)] + dg[nu][(mu, lambda)] - dg[lambda][(mu, nu)]);
                    }
                    out[(kappa * m + mu) * m + nu] = 0.5 * sum;
                }
            }
        }
        out
    }

    #[test]
    fn christoffel_agrees_with_metric_derivative_route() {
        for (manifold, z) in [
            (AnalyticManifold::PolarSheet, vec![1.6, 0.8]),
            (AnalyticManifold::PolarSheet, vec![0.5, -1.2]),
            (AnalyticManifold::Sphere { radius: 1.0 }, vec![1.0, 0.4]),
            (AnalyticManifold::Sphere { radius: 2.0 }, vec![2.0, -0.9]),
        ] {
            let z = DVector::from_vec(z);
            let jet = manifold.jet(&z).unwrap();
            let pm = metric_from_jet(&jet, 0.0).unwrap();
            let gamma = christoffel(&jet, &pm.inverse).unwrap();
            let oracle = christoffel_metric_derivative_oracle(&manifold, &z, 1e-5);
            let m = z.len();
            for kappa in 0..m {
                for mu in 0..m {
                    for nu in 0..m {
                        let got = gamma.get(kappa, mu, nu);
                        let want = oracle[(kappa * m + mu) * m + nu];
                        assert!(
                            (got - want).abs() < 1e-5,
                            "Gamma^{kappa}_{mu}{nu}: {got} vs oracle {want}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn polar_sheet_curvatures() {
        for r in [0.5, 1.0, 2.0, 5.0] {
            let jet = polar_jet(r, 0.4);
            let geo = geometry_at(&jet, 0.0).unwrap();
            assert_relative_eq!(geo.pe_curvature, 3.0 / (r * r), max_relative = 1e-10);
            assert!(geo.ex_curvature.abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_extrinsic_curvature() {
        for radius in [1.0, 2.0] {
            for (u, v) in [(1.0, 0.0), (0.7, 1.3), (2.0, -0.5), (1.5707, 2.0), (0.4, 0.0)] {
                let jet = AnalyticManifold::Sphere { radius }
                    .jet(&DVector::from_vec(vec![u, v]))
                    .unwrap();
                let geo = geometry_at(&jet, 0.0).unwrap();
                assert_relative_eq!(
                    geo.ex_curvature,
                    2.0 / (radius * radius),
                    max_relative = 1e-9
                );
            }
        }
    }

    #[test]
    fn plane_curvatures_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
        let plane = AnalyticManifold::Plane {
            a,
            b: DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0)),
        };
        let jet = plane.jet(&DVector::from_vec(vec![0.3, 0.9])).unwrap();
        let geo = geometry_at(&jet, DEFAULT_JITTER_SCALE).unwrap();
        assert!(geo.pe_curvature.abs() < 1e-10);
        assert!(geo.ex_curvature.abs() < 1e-10);
    }

    /// Tangential plus normal contraction equals the full Hessian
    /// contraction (Pythagoras in the jittered metric).
    fn full_hessian_contraction(jet: &Jet, inverse: &DMatrix<f64>) -> f64 {
        let kron = kron_sym(inverse);
        (jet.hessian_flat() * kron).dot(jet.hessian_flat())
    }

    #[test]
    fn pythagoras_decomposition_on_random_decoders() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut checked = 0;
        for _ in 0..10 {
            let m = rng.random_range(2..4usize);
            let model =
                MlpModel::random(vec![m, 12, 8], Role::Decoder, &mut rng).unwrap();
            for _ in 0..10 {
                let z = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
                let jet = decoder_jet(&model, &z).unwrap();
                // Exact decomposition needs the unjittered inverse; the
                // cross term is O(jitter) relative otherwise.
                let geo = geometry_at(&jet, 0.0).unwrap();
                let full = full_hessian_contraction(&jet, &geo.metric_inverse);
                let sum = geo.pe_curvature + geo.ex_curvature;
                assert_relative_eq!(sum, full, max_relative = 1e-8);
                assert!(geo.pe_curvature >= 0.0);
                assert!(geo.ex_curvature >= 0.0);
                checked += 1;
            }
        }
        assert_eq!(checked, 100);
    }

    #[test]
    fn curvatures_invariant_under_data_space_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let model = MlpModel::random(vec![2, 10, 7], Role::Decoder, &mut rng).unwrap();
        let z = DVector::from_vec(vec![0.6, -0.2]);
        let geo = geometry_at(&decoder_jet(&model, &z).unwrap(), DEFAULT_JITTER_SCALE).unwrap();

        let q = QR::new(DMatrix::from_fn(7, 7, |_, _| rng.random_range(-1.0..1.0))).q();
        let mut rotated = model.clone();
        let last = rotated.num_layers() - 1;
        *rotated.weight_mut(last) = &q * model.weight(last);
        *rotated.bias_mut(last) = &q * model.bias(last);
        let geo_rot =
            geometry_at(&decoder_jet(&rotated, &z).unwrap(), DEFAULT_JITTER_SCALE).unwrap();

        assert_relative_eq!(geo.pe_curvature, geo_rot.pe_curvature, max_relative = 1e-8);
        assert_relative_eq!(geo.ex_curvature, geo_rot.ex_curvature, max_relative = 1e-8);
    }

    #[test]
    fn tangent_angles_identical_jets_are_zero() {
        let jet = polar_jet(1.5, 0.3);
        let angles = tangent_angles(&jet, &jet).unwrap();
        assert!(angles.iter().all(|&a| a.abs() < 1e-7));
    }

    #[test]
    fn tangent_angles_constant_for_plane() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, 0.0, 1.0, 2.0, 0.0, 0.3, 0.3]);
        let plane = AnalyticManifold::Plane {
            a,
            b: DVector::zeros(4),
        };
        let ja = plane.jet(&DVector::from_vec(vec![0.0, 0.0])).unwrap();
        let jb = plane.jet(&DVector::from_vec(vec![3.0, -2.0])).unwrap();
        let angles = tangent_angles(&ja, &jb).unwrap();
        assert!(angles.iter().all(|&a| a.abs() < 1e-7));
    }

    #[test]
    fn sphere_orthogonal_equator_points() {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let sphere = AnalyticManifold::Sphere { radius: 1.0 };
        let ja = sphere.jet(&DVector::from_vec(vec![half_pi, 0.0])).unwrap();
        let jb = sphere
            .jet(&DVector::from_vec(vec![half_pi, half_pi]))
            .unwrap();
        let angles = tangent_angles(&ja, &jb).unwrap();
        assert_relative_eq!(*angles.last().unwrap(), half_pi, epsilon = 1e-10);
        assert!(angles[0].abs() < 1e-7);
    }

    #[test]
    fn tangent_angles_symmetric_in_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let model = MlpModel::random(vec![3, 9, 8], Role::Decoder, &mut rng).unwrap();
        for _ in 0..5 {
            let za = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let zb = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let ja = decoder_jet(&model, &za).unwrap();
            let jb = decoder_jet(&model, &zb).unwrap();
            let ab = tangent_angles(&ja, &jb).unwrap();
            let ba = tangent_angles(&jb, &ja).unwrap();
            for (x, y) in ab.iter().zip(&ba) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn degenerate_jacobian_is_tangent_error() {
        let jet = Jet::new(
            DVector::zeros(3),
            DMatrix::zeros(3, 2),
            DMatrix::zeros(3, 4),
        )
        .unwrap();
        assert!(matches!(
            tangent_angles(&jet, &jet),
            Err(Error::DegenerateTangent(_))
        ));
    }
}
