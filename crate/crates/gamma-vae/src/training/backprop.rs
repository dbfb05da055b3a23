//! Hand-written backward passes.
//!
//! Two pipelines share this file: the standard VAE backward (plain forward
//! cache, output adjoint in, parameter gradients out) and the extended
//! backward for the curvature terms, which pushes adjoints of the latent
//! Jacobian and Hessian back through the jet propagation. Everything is
//! validated against central finite differences of the total loss.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::CurvatureParts;
use crate::jets::{softplus_jet, Jet, MlpModel};

/// Per-parameter gradients mirroring a model's layer shapes.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl ModelGrads {
    pub fn zeros_like(model: &MlpModel) -> ModelGrads {
        let weights = (0..model.num_layers())
            .map(|l| DMatrix::zeros(model.weight(l).nrows(), model.weight(l).ncols()))
            .collect();
        let biases = (0..model.num_layers())
            .map(|l| DVector::zeros(model.bias(l).len()))
            .collect();
        ModelGrads { weights, biases }
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// Canonical flat order: per layer, weights row-major then bias. Matches
    /// [`MlpModel::get_param`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    out.push(w[(r, c)]);
                }
            }
            out.extend(b.iter().copied());
        }
        out
    }
}

/// Plain forward pass with everything the backward needs.
pub(crate) struct ForwardCache {
    /// Input to each affine layer (`x_0 .. x_{L-1}`).
    inputs: Vec<DVector<f64>>,
    /// Pre-activations (`u_1 .. u_L`).
    preacts: Vec<DVector<f64>>,
    pub output: DVector<f64>,
}

pub(crate) fn forward_cached(model: &MlpModel, x: &DVector<f64>) -> Result<ForwardCache> {
    if x.len() != model.input_dim() {
        return Err(Error::shape(format!(
            "input length {} != model input dim {}",
            x.len(),
            model.input_dim()
        )));
    }
    let layers = model.num_layers();
    let mut inputs = Vec::with_capacity(layers);
    let mut preacts = Vec::with_capacity(layers);
    let mut h = x.clone();
    for l in 0..layers {
        inputs.push(h.clone());
        let mut u = model.weight(l) * &h;
        u += model.bias(l);
        h = if l + 1 < layers {
            u.map(|v| softplus_jet(v).0)
        } else {
            u.clone()
        };
        preacts.push(u);
    }
    Ok(ForwardCache {
        inputs,
        preacts,
        output: h,
    })
}

/// Standard MLP backward: accumulates parameter gradients for the given
/// output adjoint and returns the input adjoint.
pub(crate) fn backward_into(
    model: &MlpModel,
    cache: &ForwardCache,
    out_adjoint: &DVector<f64>,
    grads: &mut ModelGrads,
) -> DVector<f64> {
    let layers = model.num_layers();
    let mut x_adj = out_adjoint.clone();
    for l in (0..layers).rev() {
        let u_adj = if l + 1 < layers {
            let u = &cache.preacts[l];
            DVector::from_fn(x_adj.len(), |a, _| x_adj[a] * softplus_jet(u[a]).1)
        } else {
            x_adj
        };
        grads.weights[l] += &u_adj * cache.inputs[l].transpose();
        grads.biases[l] += &u_adj;
        x_adj = model.weight(l).transpose() * u_adj;
    }
    x_adj
}

struct JetLayerCache {
    x_in: DVector<f64>,
    j_in: DMatrix<f64>,
    h_in: DMatrix<f64>,
    /// Post-affine jets (`W J_in`, `W H_in`).
    ju: DMatrix<f64>,
    hu: DMatrix<f64>,
    /// Softplus derivative diagonals; empty for the identity output layer.
    s1: DVector<f64>,
    s2: DVector<f64>,
    s3: DVector<f64>,
}

/// Jet propagation with all intermediates retained for the backward pass.
pub(crate) struct JetCache {
    layers: Vec<JetLayerCache>,
    pub jet: Jet,
}

pub(crate) fn decoder_jet_cached(model: &MlpModel, z: &DVector<f64>) -> Result<JetCache> {
    if z.len() != model.input_dim() {
        return Err(Error::shape(format!(
            "latent point length {} != decoder input dim {}",
            z.len(),
            model.input_dim()
        )));
    }
    let m = model.input_dim();
    let layers = model.num_layers();
    let mut value = z.clone();
    let mut jac = DMatrix::<f64>::identity(m, m);
    let mut hess = DMatrix::<f64>::zeros(m, m * m);
    let mut caches = Vec::with_capacity(layers);

    for l in 0..layers {
        let w = model.weight(l);
        let mut u = w * &value;
        u += model.bias(l);
        let ju = w * &jac;
        let hu = w * &hess;
        let hidden = l + 1 < layers;
        let n_out = u.len();
        let (mut s1, mut s2, mut s3) = if hidden {
            (
                DVector::zeros(n_out),
                DVector::zeros(n_out),
                DVector::zeros(n_out),
            )
        } else {
            (DVector::zeros(0), DVector::zeros(0), DVector::zeros(0))
        };
        let (next_value, next_jac, next_hess) = if hidden {
            let mut x_out = DVector::zeros(n_out);
            let mut j_out = DMatrix::zeros(n_out, m);
            let mut h_out = DMatrix::zeros(n_out, m * m);
            for a in 0..n_out {
                let (v, d1, d2) = softplus_jet(u[a]);
                x_out[a] = v;
                s1[a] = d1;
                s2[a] = d2;
                // softplus''' = s''(1 - 2 s').
                s3[a] = d2 * (1.0 - 2.0 * d1);
                for mu in 0..m {
                    j_out[(a, mu)] = d1 * ju[(a, mu)];
                }
                // Same one-computation fill as decoder_jet, keeping the two
                // propagation paths bit-identical.
                for mu in 0..m {
                    for nu in mu..m {
                        let entry =
                            d2 * ju[(a, mu)] * ju[(a, nu)] + d1 * hu[(a, mu * m + nu)];
                        h_out[(a, mu * m + nu)] = entry;
                        h_out[(a, nu * m + mu)] = entry;
                    }
                }
            }
            (x_out, j_out, h_out)
        } else {
            (u.clone(), ju.clone(), hu.clone())
        };
        caches.push(JetLayerCache {
            x_in: value,
            j_in: jac,
            h_in: hess,
            ju,
            hu,
            s1,
            s2,
            s3,
        });
        value = next_value;
        jac = next_jac;
        hess = next_hess;
    }
    Ok(JetCache {
        layers: caches,
        jet: Jet::from_parts_unchecked(value, jac, hess),
    })
}

/// Backward through the jet propagation: given adjoints of the final value,
/// Jacobian, and flat Hessian, accumulate parameter gradients.
pub(crate) fn jet_backward(
    model: &MlpModel,
    cache: &JetCache,
    value_adjoint: Option<&DVector<f64>>,
    jac_adjoint: &DMatrix<f64>,
    hess_adjoint: &DMatrix<f64>,
    grads: &mut ModelGrads,
) {
    let layers = model.num_layers();
    let m = model.input_dim();
    let mut x_adj = match value_adjoint {
        Some(v) => v.clone(),
        None => DVector::zeros(model.output_dim()),
    };
    let mut j_adj = jac_adjoint.clone();
    let mut h_adj = hess_adjoint.clone();

    for l in (0..layers).rev() {
        let lc = &cache.layers[l];
        let hidden = l + 1 < layers;
        let n_out = model.weight(l).nrows();

        // Adjoints of the post-affine (pre-activation) quantities.
        let (u_adj, ju_adj, hu_adj) = if hidden {
            let mut u_adj = DVector::zeros(n_out);
            let mut ju_adj = DMatrix::zeros(n_out, m);
            let mut hu_adj = DMatrix::zeros(n_out, m * m);
            for a in 0..n_out {
                let (s1, s2, s3) = (lc.s1[a], lc.s2[a], lc.s3[a]);
                // x_out = softplus(u).
                let mut ua = x_adj[a] * s1;
                // J_out[a,:] = s1 * Ju[a,:].
                for mu in 0..m {
                    ua += j_adj[(a, mu)] * s2 * lc.ju[(a, mu)];
                    ju_adj[(a, mu)] += s1 * j_adj[(a, mu)];
                }
                // H_out[a,munu] = s2 Ju_mu Ju_nu + s1 Hu[a,munu].
                for mu in 0..m {
                    for nu in 0..m {
                        let hb = h_adj[(a, mu * m + nu)];
                        if hb == 0.0 {
                            continue;
                        }
                        ua += hb
                            * (s3 * lc.ju[(a, mu)] * lc.ju[(a, nu)]
                                + s2 * lc.hu[(a, mu * m + nu)]);
                        ju_adj[(a, mu)] += hb * s2 * lc.ju[(a, nu)];
                        ju_adj[(a, nu)] += hb * s2 * lc.ju[(a, mu)];
                        hu_adj[(a, mu * m + nu)] += hb * s1;
                    }
                }
                u_adj[a] = ua;
            }
            (u_adj, ju_adj, hu_adj)
        } else {
            (x_adj.clone(), j_adj.clone(), h_adj.clone())
        };

        // Affine part: u = W x_in + b, Ju = W J_in, Hu = W H_in.
        grads.weights[l] += &u_adj * lc.x_in.transpose();
        grads.weights[l] += &ju_adj * lc.j_in.transpose();
        grads.weights[l] += &hu_adj * lc.h_in.transpose();
        grads.biases[l] += &u_adj;

        let wt = model.weight(l).transpose();
        x_adj = &wt * u_adj;
        j_adj = &wt * ju_adj;
        h_adj = &wt * hu_adj;
    }
}

/// Adjoints of the curvature scalars with respect to the jet.
///
/// Given the forward intermediates and the weights `w_pe`, `w_ex`
/// multiplying `L_PE` and `L_EX` in the loss, returns the Jacobian and
/// Hessian adjoints to feed into [`jet_backward`]. The metric jitter's
/// trace dependence on `J` is included.
pub(crate) fn curvature_pullback(
    jet: &Jet,
    parts: &CurvatureParts,
    jitter_scale: f64,
    w_pe: f64,
    w_ex: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = jet.latent_dim();
    let j = jet.jacobian();

    // Direct contraction terms: L = w <X, X K> with K = Ginv (x) Ginv.
    let p_adj = 2.0 * w_ex * &parts.p_weighted;
    let t_adj = 2.0 * w_pe * &parts.t_weighted - &p_adj;
    let h_adj_partial = p_adj;

    // Ginv adjoint, part one: dependence of K on Ginv,
    // dL/dGinv = 2 sum_a (w_pe T_a Ginv T_a + w_ex P_a Ginv P_a).
    let mut ginv_adj = DMatrix::<f64>::zeros(m, m);
    let n = jet.data_dim();
    let mut x_a = DMatrix::<f64>::zeros(m, m);
    for a in 0..n {
        for (weight, flat) in [(w_pe, &parts.t_flat), (w_ex, &parts.p_flat)] {
            if weight == 0.0 {
                continue;
            }
            for mu in 0..m {
                for nu in 0..m {
                    x_a[(mu, nu)] = flat[(a, mu * m + nu)];
                }
            }
            ginv_adj += 2.0 * weight * (&x_a * &parts.inverse * &x_a);
        }
    }

    // Gamma = Ginv A and T = J Gamma.
    let gamma_adj = j.transpose() * &t_adj;
    ginv_adj += &gamma_adj * parts.a_mat.transpose();
    let a_adj = &parts.inverse * gamma_adj;

    // Ginv = (g + jitter I)^-1, with jitter = jitter_scale tr(JᵀJ)/m.
    let g_adj = -(&parts.inverse * &ginv_adj * &parts.inverse);
    let mut c_adj = g_adj.clone();
    let trace_term = jitter_scale * g_adj.trace() / m as f64;
    for i in 0..m {
        c_adj[(i, i)] += trace_term;
    }

    // J appears in T = J Gamma, A = Jᵀ H, and C = Jᵀ J.
    let mut jac_adj = &t_adj * parts.gamma.transpose();
    jac_adj += jet.hessian_flat() * a_adj.transpose();
    jac_adj += j * (&c_adj + c_adj.transpose());

    // H appears in P = H - T and A = Jᵀ H.
    let hess_adj = h_adj_partial + j * a_adj;

    (jac_adj, hess_adj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::curvature_parts;
    use crate::jets::{decoder_jet, Role};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cached_forward_matches_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let model = MlpModel::random(vec![3, 7, 5], Role::Decoder, &mut rng).unwrap();
        let x = DVector::from_vec(vec![0.2, -0.4, 0.9]);
        let cache = forward_cached(&model, &x).unwrap();
        assert_eq!(cache.output, model.forward(&x).unwrap());
    }

    #[test]
    fn cached_jet_matches_decoder_jet() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let model = MlpModel::random(vec![2, 6, 4], Role::Decoder, &mut rng).unwrap();
        let z = DVector::from_vec(vec![0.5, -1.0]);
        let cache = decoder_jet_cached(&model, &z).unwrap();
        let plain = decoder_jet(&model, &z).unwrap();
        assert_eq!(cache.jet, plain);
    }

    /// Finite-difference check of the pure curvature gradient path:
    /// d(w_pe L_PE + w_ex L_EX)/dtheta via jet cache + pullback + jet
    /// backward, against central differences through decoder_jet +
    /// curvature_parts.
    #[test]
    fn curvature_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let jitter = 1e-6;
        let (w_pe, w_ex) = (0.7, 1.3);
        let model = MlpModel::random(vec![2, 6, 5], Role::Decoder, &mut rng).unwrap();
        let z = DVector::from_vec(vec![0.4, -0.3]);

        let cache = decoder_jet_cached(&model, &z).unwrap();
        let parts = curvature_parts(&cache.jet, jitter).unwrap();
        let (jac_adj, hess_adj) = curvature_pullback(&cache.jet, &parts, jitter, w_pe, w_ex);
        let mut grads = ModelGrads::zeros_like(&model);
        jet_backward(&model, &cache, None, &jac_adj, &hess_adj, &mut grads);
        let analytic = grads.flat();

        let value = |m: &MlpModel| {
            let jet = decoder_jet(m, &z).unwrap();
            let p = curvature_parts(&jet, jitter).unwrap();
            w_pe * p.l_pe + w_ex * p.l_ex
        };
        let h = 1e-6;
        let mut fd = Vec::new();
        for i in 0..model.param_count() {
            let base = model.get_param(i);
            let mut plus = model.clone();
            let mut minus = model.clone();
            plus.set_param(i, base + h);
            minus.set_param(i, base - h);
            fd.push((value(&plus) - value(&minus)) / (2.0 * h));
        }
        let err = crate::validate::max_relative_error(&analytic, &fd);
        assert!(err < 1e-5, "curvature gradient error {err}");
    }

    #[test]
    fn plain_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let model = MlpModel::random(vec![3, 8, 4], Role::Decoder, &mut rng).unwrap();
        let x = DVector::from_vec(vec![0.3, 0.1, -0.6]);
        let target = DVector::from_vec(vec![0.5, -0.2, 0.0, 1.0]);

        let cache = forward_cached(&model, &x).unwrap();
        let out_adj = 2.0 * (&cache.output - &target);
        let mut grads = ModelGrads::zeros_like(&model);
        backward_into(&model, &cache, &out_adj, &mut grads);
        let analytic = grads.flat();

        let value = |m: &MlpModel| {
            let out = m.forward(&x).unwrap();
            (&out - &target).norm_squared()
        };
        let h = 1e-6;
        let mut fd = Vec::new();
        for i in 0..model.param_count() {
            let base = model.get_param(i);
            let mut plus = model.clone();
            let mut minus = model.clone();
            plus.set_param(i, base + h);
            minus.set_param(i, base - h);
            fd.push((value(&plus) - value(&minus)) / (2.0 * h));
        }
        let err = crate::validate::max_relative_error(&analytic, &fd);
        assert!(err < 1e-6, "plain gradient error {err}");
    }

    #[test]
    fn input_adjoint_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let model = MlpModel::random(vec![2, 6, 3], Role::Decoder, &mut rng).unwrap();
        let z = DVector::from_vec(vec![0.7, -0.2]);
        let target = DVector::from_vec(vec![0.1, 0.4, -0.3]);

        let cache = forward_cached(&model, &z).unwrap();
        let out_adj = 2.0 * (&cache.output - &target);
        let mut grads = ModelGrads::zeros_like(&model);
        let z_adj = backward_into(&model, &cache, &out_adj, &mut grads);

        let h = 1e-6;
        for mu in 0..2 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[mu] += h;
            zm[mu] -= h;
            let fp = (&model.forward(&zp).unwrap() - &target).norm_squared();
            let fm = (&model.forward(&zm).unwrap() - &target).norm_squared();
            let fd = (fp - fm) / (2.0 * h);
            assert!((z_adj[mu] - fd).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn random_jet_adjoint_contraction_matches_fd() {
        // Checks jet_backward alone: L = <A, J> + <B, H> for random fixed
        // A, B must differentiate correctly.
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let model = MlpModel::random(vec![2, 5, 4], Role::Decoder, &mut rng).unwrap();
        let z = DVector::from_vec(vec![-0.8, 0.6]);
        let a = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));

        let cache = decoder_jet_cached(&model, &z).unwrap();
        let mut grads = ModelGrads::zeros_like(&model);
        jet_backward(&model, &cache, None, &a, &b, &mut grads);
        let analytic = grads.flat();

        let value = |m: &MlpModel| {
            let jet = decoder_jet(m, &z).unwrap();
            a.dot(jet.jacobian()) + b.dot(jet.hessian_flat())
        };
        let h = 1e-6;
        let mut fd = Vec::new();
        for i in 0..model.param_count() {
            let base = model.get_param(i);
            let mut plus = model.clone();
            let mut minus = model.clone();
            plus.set_param(i, base + h);
            minus.set_param(i, base - h);
            fd.push((value(&plus) - value(&minus)) / (2.0 * h));
        }
        let err = crate::validate::max_relative_error(&analytic, &fd);
        assert!(err < 1e-5, "jet adjoint error {err}");
    }
}
