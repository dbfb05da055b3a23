//! Finite-difference oracles and error metrics used to validate the exact
//! derivative paths.
//!
//! Everything here goes through plain forward evaluations only, so it stays
//! independent of the jet propagation and the hand-written backward passes
//! it is used to check.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::jets::MlpModel;
use crate::training::{total_loss, TrainingConfig};

/// Central-difference Jacobian of `f` at `z`.
pub fn jacobian_fd(f: impl Fn(&DVector<f64>) -> DVector<f64>, z: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let m = z.len();
    let n = f(z).len();
    let mut jac = DMatrix::zeros(n, m);
    for mu in 0..m {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[mu] += h;
        zm[mu] -= h;
        let col = (f(&zp) - f(&zm)) / (2.0 * h);
        jac.set_column(mu, &col);
    }
    jac
}

/// Second-order central-difference Hessian of `f` at `z`, flat `N x m^2`
/// (row-major in the two latent indices, symmetric by construction).
pub fn hessian_fd(f: impl Fn(&DVector<f64>) -> DVector<f64>, z: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let m = z.len();
    let n = f(z).len();
    let mut hess = DMatrix::zeros(n, m * m);
    for mu in 0..m {
        for nu in mu..m {
            let mut zpp = z.clone();
            let mut zpm = z.clone();
            let mut zmp = z.clone();
            let mut zmm = z.clone();
            zpp[mu] += h;
            zpp[nu] += h;
            zpm[mu] += h;
            zpm[nu] -= h;
            zmp[mu] -= h;
            zmp[nu] += h;
            zmm[mu] -= h;
            zmm[nu] -= h;
            let second = (f(&zpp) - f(&zpm) - f(&zmp) + f(&zmm)) / (4.0 * h * h);
            for a in 0..n {
                hess[(a, mu * m + nu)] = second[a];
                hess[(a, nu * m + mu)] = second[a];
            }
        }
    }
    hess
}

/// Central-difference gradient of the total loss with respect to every
/// encoder and decoder parameter (encoder first, both in canonical flat
/// parameter order).
///
/// The RNG is cloned for every evaluation so each one sees identical noise.
#[allow(clippy::too_many_arguments)]
pub fn loss_gradient_fd(
    encoder: &MlpModel,
    decoder: &MlpModel,
    batch: &DMatrix<f64>,
    curvature_points: &DMatrix<f64>,
    config: &TrainingConfig,
    rng: &ChaCha8Rng,
    h: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let eval = |enc: &MlpModel, dec: &MlpModel| -> Result<f64> {
        let mut stream = rng.clone();
        let (loss, _) = total_loss(enc, dec, batch, curvature_points, config, &mut stream)?;
        Ok(loss)
    };

    let mut enc_grad = Vec::with_capacity(encoder.param_count());
    for i in 0..encoder.param_count() {
        let base = encoder.get_param(i);
        let mut plus = encoder.clone();
        let mut minus = encoder.clone();
        plus.set_param(i, base + h);
        minus.set_param(i, base - h);
        enc_grad.push((eval(&plus, decoder)? - eval(&minus, decoder)?) / (2.0 * h));
    }
    let mut dec_grad = Vec::with_capacity(decoder.param_count());
    for i in 0..decoder.param_count() {
        let base = decoder.get_param(i);
        let mut plus = decoder.clone();
        let mut minus = decoder.clone();
        plus.set_param(i, base + h);
        minus.set_param(i, base - h);
        dec_grad.push((eval(encoder, &plus)? - eval(encoder, &minus)?) / (2.0 * h));
    }
    Ok((enc_grad, dec_grad))
}

/// Per-entry relative errors with a scale-aware floor: entries below 1% of
/// the largest magnitude in either input are compared on that absolute
/// scale instead, so noise around genuine zeros does not dominate.
pub fn relative_errors(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "relative_errors needs equal lengths");
    let scale = a
        .iter()
        .chain(b.iter())
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let floor = (1e-2 * scale).max(1e-12);
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .collect()
}

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    relative_errors(a, b).into_iter().fold(0.0, f64::max)
}
