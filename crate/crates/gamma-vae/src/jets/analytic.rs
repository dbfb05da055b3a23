//! Closed-form jets for analytic test manifolds.
//!
//! These fixtures exercise the geometry layer against hand-derivable
//! answers: a plane has zero curvature of both kinds, the polar sheet is
//! flat but has parameter-effects curvature `3/r^2`, and the sphere has
//! extrinsic curvature `2/R^2` everywhere.

use nalgebra::{DMatrix, DVector};

use super::Jet;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub enum AnalyticManifold {
    /// Affine map `f(z) = A z + b`.
    Plane { a: DMatrix<f64>, b: DVector<f64> },
    /// `f(r, theta) = (r cos theta, r sin theta)`, valid for `r > 0`.
    PolarSheet,
    /// Round 2-sphere chart `f(u, v) = R (sin u cos v, sin u sin v, cos u)`,
    /// valid for `0 < u < pi`.
    Sphere { radius: f64 },
}

impl AnalyticManifold {
    pub fn latent_dim(&self) -> usize {
        match self {
            AnalyticManifold::Plane { a, .. } => a.ncols(),
            AnalyticManifold::PolarSheet | AnalyticManifold::Sphere { .. } => 2,
        }
    }

    pub fn data_dim(&self) -> usize {
        match self {
            AnalyticManifold::Plane { a, .. } => a.nrows(),
            AnalyticManifold::PolarSheet => 2,
            AnalyticManifold::Sphere { .. } => 3,
        }
    }

    /// Exact jet of the chart at `z`.
    pub fn jet(&self, z: &DVector<f64>) -> Result<Jet> {
        if z.len() != self.latent_dim() {
            return Err(Error::shape(format!(
                "chart point has length {}, expected {}",
                z.len(),
                self.latent_dim()
            )));
        }
        match self {
            AnalyticManifold::Plane { a, b } => {
                let value = a * z + b;
                let m = a.ncols();
                Ok(Jet::from_parts_unchecked(
                    value,
                    a.clone(),
                    DMatrix::zeros(a.nrows(), m * m),
                ))
            }
            AnalyticManifold::PolarSheet => {
                let (r, theta) = (z[0], z[1]);
                if r <= 0.0 {
                    return Err(Error::domain(format!(
                        "polar sheet chart requires r > 0, got r = {r}"
                    )));
                }
                let (s, c) = theta.sin_cos();
                let value = DVector::from_vec(vec![r * c, r * s]);
                let jacobian = DMatrix::from_row_slice(2, 2, &[c, -r * s, s, r * c]);
                // Rows are (f_rr, f_rtheta, f_thetar, f_thetatheta) per output.
                let hessian =
                    DMatrix::from_row_slice(2, 4, &[0.0, -s, -s, -r * c, 0.0, c, c, -r * s]);
                Ok(Jet::from_parts_unchecked(value, jacobian, hessian))
            }
            AnalyticManifold::Sphere { radius } => {
                let rr = *radius;
                let (u, v) = (z[0], z[1]);
                if u <= 0.0 || u >= std::f64::consts::PI {
                    return Err(Error::domain(format!(
                        "sphere chart requires 0 < u < pi, got u = {u}"
                    )));
                }
                let (su, cu) = u.sin_cos();
                let (sv, cv) = v.sin_cos();
                let value = DVector::from_vec(vec![rr * su * cv, rr * su * sv, rr * cu]);
                let jacobian = DMatrix::from_row_slice(
                    3,
                    2,
                    &[
                        rr * cu * cv,
                        -rr * su * sv,
                        rr * cu * sv,
                        rr * su * cv,
                        -rr * su,
                        0.0,
                    ],
                );
                let hessian = DMatrix::from_row_slice(
                    3,
                    4,
                    &[
                        -rr * su * cv,
                        -rr * cu * sv,
                        -rr * cu * sv,
                        -rr * su * cv,
                        -rr * su * sv,
                        rr * cu * cv,
                        rr * cu * cv,
                        -rr * su * sv,
                        -rr * cu,
                        0.0,
                        0.0,
                        0.0,
                    ],
                );
                Ok(Jet::from_parts_unchecked(value, jacobian, hessian))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polar_sheet_jacobian_at_r2() {
        let jet = AnalyticManifold::PolarSheet
            .jet(&DVector::from_vec(vec![2.0, 0.0]))
            .unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        assert_eq!(jet.jacobian(), &expected);
    }

    #[test]
    fn plane_hessian_is_zero() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let plane = AnalyticManifold::Plane {
            a,
            b: DVector::zeros(3),
        };
        let jet = plane.jet(&DVector::from_vec(vec![0.4, -1.2])).unwrap();
        assert!(jet.hessian_flat().iter().all(|&h| h == 0.0));
    }

    #[test]
    fn sphere_equator_point() {
        let jet = AnalyticManifold::Sphere { radius: 1.0 }
            .jet(&DVector::from_vec(vec![std::f64::consts::FRAC_PI_2, 0.0]))
            .unwrap();
        assert_relative_eq!(jet.value()[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(jet.value()[1], 0.0, epsilon = 1e-15);
        assert!(jet.value()[2].abs() < 1e-15);
    }

    #[test]
    fn chart_domain_errors() {
        assert!(matches!(
            AnalyticManifold::PolarSheet.jet(&DVector::from_vec(vec![0.0, 1.0])),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            AnalyticManifold::Sphere { radius: 1.0 }.jet(&DVector::from_vec(vec![0.0, 1.0])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn analytic_jets_match_finite_differences() {
        for (manifold, z) in [
            (AnalyticManifold::PolarSheet, vec![1.7, 0.9]),
            (AnalyticManifold::Sphere { radius: 2.0 }, vec![1.1, -0.4]),
        ] {
            let z = DVector::from_vec(z);
            let jet = manifold.jet(&z).unwrap();
            let f = |p: &DVector<f64>| manifold.jet(p).unwrap().value().clone();
            let jac_fd = crate::validate::jacobian_fd(&f, &z, 1e-6);
            let hess_fd = crate::validate::hessian_fd(&f, &z, 1e-4);
            assert!(
                crate::validate::max_relative_error(jet.jacobian().as_slice(), jac_fd.as_slice())
                    < 1e-7
            );
            assert!(
                crate::validate::max_relative_error(
                    jet.hessian_flat().as_slice(),
                    hess_fd.as_slice()
                ) < 1e-5
            );
        }
    }
}
