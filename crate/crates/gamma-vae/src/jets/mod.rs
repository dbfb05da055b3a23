//! Second-order jets of maps from latent space to data space.
//!
//! A jet bundles the value, Jacobian, and Hessian of a map `R^m -> R^N`
//! with respect to the latent input at one point. MLP decoders and analytic
//! test manifolds produce the same [`Jet`] type, so the geometry layer does
//! not care where a jet came from.

mod analytic;
mod checkpoint;

pub use analytic::AnalyticManifold;
pub use checkpoint::{load_checkpoint, save_checkpoint};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Stable softplus together with its first and second derivatives.
///
/// For `x > 30` the value branch switches to `x + ln(1 + e^-x)` so large
/// pre-activations do not overflow.
pub fn softplus_jet(x: f64) -> (f64, f64, f64) {
    let value = if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    };
    let s = logistic(x);
    (value, s, s * (1.0 - s))
}

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Value, Jacobian, and Hessian of a map `R^m -> R^N` at one latent point.
///
/// The Hessian is stored flat as an `N x m^2` matrix; row `a` is the
/// row-major vectorization of the symmetric `m x m` matrix
/// `H^a[mu, nu] = d2 f^a / dz^mu dz^nu`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    value: DVector<f64>,
    jacobian: DMatrix<f64>,
    hessian: DMatrix<f64>,
}

impl Jet {
    /// Builds a jet from its parts, validating shapes, finiteness, and
    /// Hessian symmetry.
    pub fn new(value: DVector<f64>, jacobian: DMatrix<f64>, hessian: DMatrix<f64>) -> Result<Jet> {
        let n = value.len();
        let m = jacobian.ncols();
        if jacobian.nrows() != n {
            return Err(Error::shape(format!(
                "jacobian rows {} != value length {}",
                jacobian.nrows(),
                n
            )));
        }
        if hessian.nrows() != n || hessian.ncols() != m * m {
            return Err(Error::shape(format!(
                "hessian is {}x{}, expected {}x{}",
                hessian.nrows(),
                hessian.ncols(),
                n,
                m * m
            )));
        }
        let finite = value.iter().all(|v| v.is_finite())
            && jacobian.iter().all(|v| v.is_finite())
            && hessian.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::domain("jet contains non-finite entries"));
        }
        for a in 0..n {
            for mu in 0..m {
                for nu in (mu + 1)..m {
                    if hessian[(a, mu * m + nu)] != hessian[(a, nu * m + mu)] {
                        return Err(Error::domain(format!(
                            "hessian asymmetric at output {a}, indices ({mu},{nu})"
                        )));
                    }
                }
            }
        }
        Ok(Jet {
            value,
            jacobian,
            hessian,
        })
    }

    /// Internal constructor for propagation code that builds symmetric
    /// Hessians by construction.
    pub(crate) fn from_parts_unchecked(
        value: DVector<f64>,
        jacobian: DMatrix<f64>,
        hessian: DMatrix<f64>,
    ) -> Jet {
        Jet {
            value,
            jacobian,
            hessian,
        }
    }

    pub fn data_dim(&self) -> usize {
        self.value.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.jacobian.ncols()
    }

    pub fn value(&self) -> &DVector<f64> {
        &self.value
    }

    /// `N x m` matrix of first derivatives `d f^a / dz^mu`.
    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jacobian
    }

    /// Flat `N x m^2` Hessian (row-major in the last two indices).
    pub fn hessian_flat(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    /// `d2 f^a / dz^mu dz^nu`.
    pub fn hessian_at(&self, a: usize, mu: usize, nu: usize) -> f64 {
        let m = self.latent_dim();
        self.hessian[(a, mu * m + nu)]
    }

    /// The symmetric `m x m` Hessian of output feature `a`.
    pub fn hessian_matrix(&self, a: usize) -> DMatrix<f64> {
        let m = self.latent_dim();
        DMatrix::from_fn(m, m, |mu, nu| self.hessian[(a, mu * m + nu)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Softplus,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Encoder,
    Decoder,
}

/// A dense MLP with softplus hidden layers and a linear output layer.
///
/// Encoders map `R^N -> R^{2m}` (mean then log-variance); decoders map
/// `R^m -> R^N`. `layer_dims` lists the widths input to output, so a model
/// with dims `[2, 16, 5]` has one hidden layer of 16 units.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
    hidden_activation: Activation,
    output_activation: Activation,
    role: Role,
}

impl MlpModel {
    pub fn new(
        layer_dims: Vec<usize>,
        weights: Vec<DMatrix<f64>>,
        biases: Vec<DVector<f64>>,
        role: Role,
    ) -> Result<MlpModel> {
        if layer_dims.len() < 2 {
            return Err(Error::shape("model needs at least input and output dims"));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::shape("layer dims must be positive"));
        }
        let layers = layer_dims.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::shape(format!(
                "expected {} weight/bias layers, got {}/{}",
                layers,
                weights.len(),
                biases.len()
            )));
        }
        for l in 0..layers {
            let (rows, cols) = (layer_dims[l + 1], layer_dims[l]);
            if weights[l].nrows() != rows || weights[l].ncols() != cols {
                return Err(Error::shape(format!(
                    "weight layer {} is {}x{}, expected {}x{}",
                    l,
                    weights[l].nrows(),
                    weights[l].ncols(),
                    rows,
                    cols
                )));
            }
            if biases[l].len() != rows {
                return Err(Error::shape(format!(
                    "bias layer {} has length {}, expected {}",
                    l,
                    biases[l].len(),
                    rows
                )));
            }
        }
        if role == Role::Encoder && layer_dims[layers] % 2 != 0 {
            return Err(Error::shape(
                "encoder output dim must be even (mean and log-variance halves)",
            ));
        }
        Ok(MlpModel {
            layer_dims,
            weights,
            biases,
            hidden_activation: Activation::Softplus,
            output_activation: Activation::Identity,
            role,
        })
    }

    /// Glorot-uniform initialization: each layer drawn uniformly in
    /// `+-sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn random(layer_dims: Vec<usize>, role: Role, rng: &mut impl Rng) -> Result<MlpModel> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_dims.len().saturating_sub(1) {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| {
                rng.random_range(-bound..=bound)
            }));
            biases.push(DVector::zeros(fan_out));
        }
        MlpModel::new(layer_dims, weights, biases, role)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Latent dimension: input dim for decoders, half the output dim for
    /// encoders.
    pub fn latent_dim(&self) -> usize {
        match self.role {
            Role::Decoder => self.input_dim(),
            Role::Encoder => self.output_dim() / 2,
        }
    }

    pub fn weight(&self, layer: usize) -> &DMatrix<f64> {
        &self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &DVector<f64> {
        &self.biases[layer]
    }

    pub(crate) fn weight_mut(&mut self, layer: usize) -> &mut DMatrix<f64> {
        &mut self.weights[layer]
    }

    pub(crate) fn bias_mut(&mut self, layer: usize) -> &mut DVector<f64> {
        &mut self.biases[layer]
    }

    fn is_hidden(&self, layer: usize) -> bool {
        layer + 1 < self.num_layers()
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "input length {} != model input dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Plain forward pass.
    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for l in 0..self.num_layers() {
            let mut u = &self.weights[l] * &h;
            u += &self.biases[l];
            h = if self.is_hidden(l) {
                self.activate(&u, self.hidden_activation)
            } else {
                self.activate(&u, self.output_activation)
            };
        }
        Ok(h)
    }

    fn activate(&self, u: &DVector<f64>, act: Activation) -> DVector<f64> {
        match act {
            Activation::Identity => u.clone(),
            Activation::Softplus => u.map(|v| softplus_jet(v).0),
        }
    }

    /// Total number of scalar parameters (weights row-major, then biases,
    /// layer by layer).
    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Reads parameter `i` in the canonical flat order.
    pub fn get_param(&self, mut i: usize) -> f64 {
        for l in 0..self.num_layers() {
            let w = &self.weights[l];
            if i < w.len() {
                return w[(i / w.ncols(), i % w.ncols())];
            }
            i -= w.len();
            let b = &self.biases[l];
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("parameter index out of range");
    }

    /// Writes parameter `i` in the canonical flat order.
    pub fn set_param(&mut self, mut i: usize, value: f64) {
        for l in 0..self.num_layers() {
            let w = &mut self.weights[l];
            if i < w.len() {
                let cols = w.ncols();
                w[(i / cols, i % cols)] = value;
                return;
            }
            i -= w.len();
            let b = &mut self.biases[l];
            if i < b.len() {
                b[i] = value;
                return;
            }
            i -= b.len();
        }
        panic!("parameter index out of range");
    }
}

/// Deterministic encoder pass returning the mean and log-variance halves of
/// the output (mean first).
pub fn encoder_forward(model: &MlpModel, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    if model.role() != Role::Encoder {
        return Err(Error::domain("encoder_forward requires an encoder model"));
    }
    let out = model.forward(x)?;
    let m = out.len() / 2;
    Ok((out.rows(0, m).into_owned(), out.rows(m, m).into_owned()))
}

/// Exact jet of an MLP decoder at latent point `z` via layer-wise
/// propagation.
///
/// Affine layers contract the incoming Jacobian and Hessian with the weight
/// matrix; softplus layers apply the elementwise chain rule
/// `H^a <- phi''(u^a) J^a (x) J^a + phi'(u^a) H^a`.
pub fn decoder_jet(model: &MlpModel, z: &DVector<f64>) -> Result<Jet> {
    if model.role() != Role::Decoder {
        return Err(Error::domain("decoder_jet requires a decoder model"));
    }
    model.check_input(z)?;
    let m = model.input_dim();

    let mut value = z.clone();
    let mut jac = DMatrix::<f64>::identity(m, m);
    let mut hess = DMatrix::<f64>::zeros(m, m * m);

    for l in 0..model.num_layers() {
        let w = &model.weights[l];
        let mut u = w * &value;
        u += &model.biases[l];
        let ju = w * &jac;
        let hu = w * &hess;
        if model.is_hidden(l) {
            let n_out = u.len();
            let mut x_out = DVector::zeros(n_out);
            let mut j_out = DMatrix::zeros(n_out, m);
            let mut h_out = DMatrix::zeros(n_out, m * m);
            for a in 0..n_out {
                let (v, s1, s2) = softplus_jet(u[a]);
                x_out[a] = v;
                for mu in 0..m {
                    j_out[(a, mu)] = s1 * ju[(a, mu)];
                }
                // Fill both triangles from one computation so symmetry is
                // exact to the last bit.
                for mu in 0..m {
                    for nu in mu..m {
                        let entry =
                            s2 * ju[(a, mu)] * ju[(a, nu)] + s1 * hu[(a, mu * m + nu)];
                        h_out[(a, mu * m + nu)] = entry;
                        h_out[(a, nu * m + mu)] = entry;
                    }
                }
            }
            value = x_out;
            jac = j_out;
            hess = h_out;
        } else {
            value = u;
            jac = ju;
            hess = hu;
        }
    }
    Ok(Jet::from_parts_unchecked(value, jac, hess))
}
