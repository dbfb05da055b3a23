//! The curvature-regularized VAE objective and its exact gradients.
//!
//! The loss is the negative ELBO over a data batch plus the two curvature
//! scalars averaged over latent points sampled from the covariance of the
//! embedded batch, weighted by `gamma` and `delta`. Curvature gradients are
//! taken through the jet propagation with a hand-written extended backward
//! pass; sampled points are treated as constants (no gradient reaches the
//! encoder through the sampler).

mod backprop;
mod optimizer;

pub use backprop::ModelGrads;
pub use optimizer::OptimizerState;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{at_point, curvature_parts};
use crate::jets::{MlpModel, Role};

/// Number of fixed accumulation chunks in parallel reductions. Chunk
/// boundaries depend only on the batch, so summation order is identical
/// for any thread count.
const GRAD_CHUNKS: usize = 8;

fn default_beta() -> f64 {
    0.01
}
fn default_gamma() -> f64 {
    1e-3
}
fn default_m_samples() -> usize {
    16
}
fn default_sampler_scale() -> f64 {
    2.0
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_moment_decay() -> [f64; 2] {
    [0.9, 0.999]
}
fn default_epochs() -> usize {
    200
}
fn default_batch_size() -> usize {
    128
}
fn default_jitter_scale() -> f64 {
    1e-6
}
fn default_latent_dim() -> usize {
    2
}
fn default_hidden_dims() -> Vec<usize> {
    vec![64]
}

/// All knobs of a training run. The JSON representation uses exactly these
/// snake_case field names; omitted fields take the documented defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    /// KL weight in the ELBO.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Weight of the parameter-effects curvature penalty.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Weight of the extrinsic curvature penalty.
    #[serde(default = "default_gamma")]
    pub delta: f64,
    /// Curvature sample count per batch.
    #[serde(default = "default_m_samples")]
    pub m_samples: usize,
    /// Half-width multiplier of the sampling box in units of the embedded
    /// standard deviation.
    #[serde(default = "default_sampler_scale")]
    pub sampler_scale: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// First/second moment decay pair of the optimizer.
    #[serde(default = "default_moment_decay")]
    pub moment_decay: [f64; 2],
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_jitter_scale")]
    pub jitter_scale: f64,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    /// Hidden layer widths of the encoder; the decoder mirrors them.
    #[serde(default = "default_hidden_dims")]
    pub hidden_dims: Vec<usize>,
}

impl Default for TrainingConfig {
    fn default() -> TrainingConfig {
        TrainingConfig {
            beta: default_beta(),
            gamma: default_gamma(),
            delta: default_gamma(),
            m_samples: default_m_samples(),
            sampler_scale: default_sampler_scale(),
            learning_rate: default_learning_rate(),
            moment_decay: default_moment_decay(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            seed: 0,
            jitter_scale: default_jitter_scale(),
            latent_dim: default_latent_dim(),
            hidden_dims: default_hidden_dims(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("sampler_scale", self.sampler_scale),
            ("jitter_scale", self.jitter_scale),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        for d in self.moment_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::Config(format!(
                    "moment decays must be in [0,1), got {d}"
                )));
            }
        }
        if self.m_samples == 0 {
            return Err(Error::Config("m_samples must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden_dims must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<TrainingConfig> {
        let cfg: TrainingConfig =
            serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// The independent streams derived from the config seed: weight
/// initialization, reparameterization noise, curvature sampling, epoch
/// shuffling.
pub struct RandomStreams {
    pub init: ChaCha8Rng,
    pub noise: ChaCha8Rng,
    pub curvature: ChaCha8Rng,
    pub shuffle: ChaCha8Rng,
}

impl RandomStreams {
    pub fn from_seed(seed: u64) -> RandomStreams {
        let make = |stream: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            rng
        };
        RandomStreams {
            init: make(0),
            noise: make(1),
            curvature: make(2),
            shuffle: make(3),
        }
    }
}

/// Closed-form KL divergence of a diagonal Gaussian to the standard normal
/// prior: `0.5 sum(mean^2 + exp(logvar) - 1 - logvar)`.
pub fn kl_divergence(mean: &DVector<f64>, logvar: &DVector<f64>) -> f64 {
    mean.iter()
        .zip(logvar.iter())
        .map(|(&mu, &lv)| 0.5 * (mu * mu + lv.exp() - 1.0 - lv))
        .sum()
}

/// `z = mean + exp(logvar / 2) * noise`, with caller-supplied noise.
pub fn reparameterize(
    mean: &DVector<f64>,
    logvar: &DVector<f64>,
    noise: &DVector<f64>,
) -> DVector<f64> {
    DVector::from_fn(mean.len(), |i, _| {
        mean[i] + (logvar[i] / 2.0).exp() * noise[i]
    })
}

/// Squared Euclidean distance between a sample and its reconstruction.
pub fn reconstruction_loss(x: &DVector<f64>, x_hat: &DVector<f64>) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::shape(format!(
            "reconstruction_loss lengths differ: {} vs {}",
            x.len(),
            x_hat.len()
        )));
    }
    Ok((x - x_hat).norm_squared())
}

/// Draws `m_samples` latent points uniformly in the box spanned by the
/// covariance of the embedded points: eigendecompose the covariance, draw
/// `u` uniform in `[-1,1]^m`, return `center + V diag(scale sqrt(lambda)) u`.
///
/// Sampler statistics are constants for gradient purposes.
pub fn sample_curvature_points(
    latent_means: &DMatrix<f64>,
    m_samples: usize,
    sampler_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<f64>> {
    let n = latent_means.nrows();
    if n < 2 {
        return Err(Error::InsufficientPoints(format!(
            "curvature sampling needs >= 2 embedded points, got {n}"
        )));
    }
    let m = latent_means.ncols();
    let center = latent_means.row_mean().transpose();
    let mut cov = DMatrix::zeros(m, m);
    for i in 0..n {
        let d = latent_means.row(i).transpose() - &center;
        cov += &d * d.transpose();
    }
    cov /= n as f64;
    let eig = SymmetricEigen::new(cov);
    let half_widths: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| sampler_scale * l.max(0.0).sqrt())
        .collect();
    let mut out = DMatrix::zeros(m_samples, m);
    for s in 0..m_samples {
        let u = DVector::from_fn(m, |_, _| rng.random_range(-1.0..=1.0));
        let mut point = center.clone();
        for k in 0..m {
            point += eig.eigenvectors.column(k) * (half_widths[k] * u[k]);
        }
        out.set_row(s, &point.transpose());
    }
    Ok(out)
}

/// Per-term breakdown of one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// Batch-mean reconstruction error.
    pub recon: f64,
    /// Batch-mean KL divergence (unweighted).
    pub kl: f64,
    /// Mean `L_PE` over the sampled points (unweighted).
    pub pe_mean: f64,
    pub ex_mean: f64,
    /// Weighted curvature contributions, `gamma * pe_mean` and
    /// `delta * ex_mean`.
    pub pe_term: f64,
    pub ex_term: f64,
    /// Largest sampled `L_PE` / `L_EX`.
    pub pe_max: f64,
    pub ex_max: f64,
    pub total: f64,
}

fn check_finite(value: f64, term: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss { term: term.into() })
    }
}

fn check_model_pair(encoder: &MlpModel, decoder: &MlpModel, batch: &DMatrix<f64>) -> Result<()> {
    if encoder.role() != Role::Encoder || decoder.role() != Role::Decoder {
        return Err(Error::domain("expected (encoder, decoder) model pair"));
    }
    if encoder.input_dim() != batch.ncols() || decoder.output_dim() != batch.ncols() {
        return Err(Error::shape(format!(
            "batch has {} features; encoder expects {}, decoder produces {}",
            batch.ncols(),
            encoder.input_dim(),
            decoder.output_dim()
        )));
    }
    if encoder.latent_dim() != decoder.latent_dim() {
        return Err(Error::shape("encoder/decoder latent dims differ"));
    }
    if batch.nrows() == 0 {
        return Err(Error::shape("empty batch"));
    }
    Ok(())
}

fn draw_noise(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    (0..rows)
        .map(|_| DVector::from_fn(dim, |_, _| rng.sample(StandardNormal)))
        .collect()
}

fn chunk_ranges(len: usize) -> Vec<std::ops::Range<usize>> {
    if len == 0 {
        return Vec::new();
    }
    let chunks = GRAD_CHUNKS.min(len);
    let base = len / chunks;
    let extra = len % chunks;
    let mut ranges = Vec::with_capacity(chunks);
    let mut start = 0;
    for c in 0..chunks {
        let size = base + usize::from(c < extra);
        ranges.push(start..start + size);
        start += size;
    }
    ranges
}

fn assemble_breakdown(
    config: &TrainingConfig,
    recon_sum: f64,
    kl_sum: f64,
    batch_len: usize,
    pe_values: &[f64],
    ex_values: &[f64],
) -> Result<(f64, LossBreakdown)> {
    let b = batch_len as f64;
    let recon = check_finite(recon_sum / b, "reconstruction")?;
    let kl = check_finite(kl_sum / b, "kl")?;
    let m = pe_values.len();
    let (pe_mean, ex_mean, pe_max, ex_max) = if m == 0 {
        (0.0, 0.0, 0.0, 0.0)
    } else {
        (
            check_finite(pe_values.iter().sum::<f64>() / m as f64, "pe")?,
            check_finite(ex_values.iter().sum::<f64>() / m as f64, "ex")?,
            pe_values.iter().fold(0.0_f64, |a, &v| a.max(v)),
            ex_values.iter().fold(0.0_f64, |a, &v| a.max(v)),
        )
    };
    let pe_term = config.gamma * pe_mean;
    let ex_term = config.delta * ex_mean;
    let total = check_finite(recon + config.beta * kl + pe_term + ex_term, "total")?;
    Ok((
        total,
        LossBreakdown {
            recon,
            kl,
            pe_mean,
            ex_mean,
            pe_term,
            ex_term,
            pe_max,
            ex_max,
            total,
        },
    ))
}

/// Forward-only evaluation of the full objective on one batch:
/// `mean_i [recon_i + beta KL_i] + (1/M) sum_j (gamma L_PE_j + delta L_EX_j)`.
///
/// Reparameterization noise is drawn from `rng`, one length-`m` draw per
/// batch row in row order.
pub fn total_loss(
    encoder: &MlpModel,
    decoder: &MlpModel,
    batch: &DMatrix<f64>,
    curvature_points: &DMatrix<f64>,
    config: &TrainingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, LossBreakdown)> {
    check_model_pair(encoder, decoder, batch)?;
    config.validate()?;
    let m = encoder.latent_dim();
    let noise = draw_noise(batch.nrows(), m, rng);

    let mut recon_sum = 0.0;
    let mut kl_sum = 0.0;
    for i in 0..batch.nrows() {
        let x = batch.row(i).transpose();
        let (mean, logvar) = crate::jets::encoder_forward(encoder, &x)?;
        kl_sum += kl_divergence(&mean, &logvar);
        let z = reparameterize(&mean, &logvar, &noise[i]);
        let x_hat = decoder.forward(&z)?;
        recon_sum += reconstruction_loss(&x, &x_hat)?;
    }

    let points = curvature_points.nrows();
    let curvature: Vec<Result<(f64, f64)>> = (0..points)
        .into_par_iter()
        .map(|j| {
            let z = curvature_points.row(j).transpose();
            let jet = crate::jets::decoder_jet(decoder, &z)?;
            let parts = curvature_parts(&jet, config.jitter_scale).map_err(|e| at_point(e, &z))?;
            Ok((parts.l_pe, parts.l_ex))
        })
        .collect();
    let mut pe_values = Vec::with_capacity(points);
    let mut ex_values = Vec::with_capacity(points);
    for r in curvature {
        let (pe, ex) = r?;
        pe_values.push(pe);
        ex_values.push(ex);
    }
    assemble_breakdown(config, recon_sum, kl_sum, batch.nrows(), &pe_values, &ex_values)
}

struct ElboChunk {
    recon_sum: f64,
    kl_sum: f64,
    enc_grads: ModelGrads,
    dec_grads: ModelGrads,
}

struct CurvatureChunk {
    values: Vec<(f64, f64)>,
    dec_grads: ModelGrads,
}

/// Exact gradient of [`total_loss`] with respect to every encoder and
/// decoder parameter. Curvature terms contribute decoder gradients only.
pub fn loss_gradient(
    encoder: &MlpModel,
    decoder: &MlpModel,
    batch: &DMatrix<f64>,
    curvature_points: &DMatrix<f64>,
    config: &TrainingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, LossBreakdown, ModelGrads, ModelGrads)> {
    check_model_pair(encoder, decoder, batch)?;
    config.validate()?;
    let m = encoder.latent_dim();
    let b = batch.nrows();
    let noise = draw_noise(b, m, rng);
    let inv_b = 1.0 / b as f64;

    // ELBO part, in fixed-order chunks so the reduction is deterministic.
    let elbo_chunks: Vec<Result<ElboChunk>> = chunk_ranges(b)
        .into_par_iter()
        .map(|range| {
            let mut chunk = ElboChunk {
                recon_sum: 0.0,
                kl_sum: 0.0,
                enc_grads: ModelGrads::zeros_like(encoder),
                dec_grads: ModelGrads::zeros_like(decoder),
            };
            for i in range {
                let x = batch.row(i).transpose();
                let enc_cache = backprop::forward_cached(encoder, &x)?;
                let mean = enc_cache.output.rows(0, m).into_owned();
                let logvar = enc_cache.output.rows(m, m).into_owned();
                chunk.kl_sum += kl_divergence(&mean, &logvar);
                let z = reparameterize(&mean, &logvar, &noise[i]);
                let dec_cache = backprop::forward_cached(decoder, &z)?;
                chunk.recon_sum += reconstruction_loss(&x, &dec_cache.output)?;

                // d/dx_hat of mean_i ||x - x_hat||^2.
                let x_hat_adj = (&dec_cache.output - &x) * (2.0 * inv_b);
                let z_adj =
                    backprop::backward_into(decoder, &dec_cache, &x_hat_adj, &mut chunk.dec_grads);

                let mut enc_out_adj = DVector::zeros(2 * m);
                for k in 0..m {
                    let sigma = (logvar[k] / 2.0).exp();
                    // Through z and through the KL closed form.
                    enc_out_adj[k] = z_adj[k] + config.beta * inv_b * mean[k];
                    enc_out_adj[m + k] = z_adj[k] * noise[i][k] * sigma * 0.5
                        + config.beta * inv_b * 0.5 * (logvar[k].exp() - 1.0);
                }
                backprop::backward_into(encoder, &enc_cache, &enc_out_adj, &mut chunk.enc_grads);
            }
            Ok(chunk)
        })
        .collect();

    let mut recon_sum = 0.0;
    let mut kl_sum = 0.0;
    let mut enc_grads = ModelGrads::zeros_like(encoder);
    let mut dec_grads = ModelGrads::zeros_like(decoder);
    for chunk in elbo_chunks {
        let chunk = chunk?;
        recon_sum += chunk.recon_sum;
        kl_sum += chunk.kl_sum;
        enc_grads.add_assign(&chunk.enc_grads);
        dec_grads.add_assign(&chunk.dec_grads);
    }

    // Curvature part. Jets are always evaluated (the scalars feed the
    // metrics); the backward pass runs only when a weight is nonzero.
    let points = curvature_points.nrows();
    let mut pe_values = Vec::with_capacity(points);
    let mut ex_values = Vec::with_capacity(points);
    if points > 0 {
        let with_grads = config.gamma > 0.0 || config.delta > 0.0;
        let w_pe = config.gamma / points as f64;
        let w_ex = config.delta / points as f64;
        let curvature_chunks: Vec<Result<CurvatureChunk>> = chunk_ranges(points)
            .into_par_iter()
            .map(|range| {
                let mut chunk = CurvatureChunk {
                    values: Vec::with_capacity(range.len()),
                    dec_grads: ModelGrads::zeros_like(decoder),
                };
                for j in range {
                    let z = curvature_points.row(j).transpose();
                    let cache = backprop::decoder_jet_cached(decoder, &z)?;
                    let parts = curvature_parts(&cache.jet, config.jitter_scale)
                        .map_err(|e| at_point(e, &z))?;
                    chunk.values.push((parts.l_pe, parts.l_ex));
                    if with_grads {
                        let (jac_adj, hess_adj) = backprop::curvature_pullback(
                            &cache.jet,
                            &parts,
                            config.jitter_scale,
                            w_pe,
                            w_ex,
                        );
                        backprop::jet_backward(
                            decoder,
                            &cache,
                            None,
                            &jac_adj,
                            &hess_adj,
                            &mut chunk.dec_grads,
                        );
                    }
                }
                Ok(chunk)
            })
            .collect();
        for chunk in curvature_chunks {
            let chunk = chunk?;
            for (pe, ex) in chunk.values {
                pe_values.push(pe);
                ex_values.push(ex);
            }
            dec_grads.add_assign(&chunk.dec_grads);
        }
    }

    let (total, breakdown) =
        assemble_breakdown(config, recon_sum, kl_sum, b, &pe_values, &ex_values)?;
    Ok((total, breakdown, enc_grads, dec_grads))
}

/// One row of the per-epoch training log. Epoch 0 is an evaluation pass at
/// initialization, before any update.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub pe_mean: f64,
    pub ex_mean: f64,
    /// Max over the epoch of `sqrt(L_PE)` at sampled points.
    pub pe_max_sqrt: f64,
    pub ex_max_sqrt: f64,
    pub loss: f64,
}

/// Writes the metrics log as CSV with header
/// `epoch,recon,kl,pe_mean,ex_mean,pe_max_sqrt,ex_max_sqrt,loss`.
pub fn write_metrics_csv(
    path: impl AsRef<std::path::Path>,
    log: &[EpochMetrics],
) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path.as_ref()).map_err(crate::geometry::csv_io)?;
    wtr.write_record([
        "epoch",
        "recon",
        "kl",
        "pe_mean",
        "ex_mean",
        "pe_max_sqrt",
        "ex_max_sqrt",
        "loss",
    ])
    .map_err(crate::geometry::csv_io)?;
    for row in log {
        wtr.write_record([
            row.epoch.to_string(),
            row.recon.to_string(),
            row.kl.to_string(),
            row.pe_mean.to_string(),
            row.ex_mean.to_string(),
            row.pe_max_sqrt.to_string(),
            row.ex_max_sqrt.to_string(),
            row.loss.to_string(),
        ])
        .map_err(crate::geometry::csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

/// A trained model pair with its per-epoch log.
pub struct TrainOutput {
    pub encoder: MlpModel,
    pub decoder: MlpModel,
    pub log: Vec<EpochMetrics>,
}

struct EpochAccumulator {
    recon_sum: f64,
    kl_sum: f64,
    pe_sum: f64,
    ex_sum: f64,
    pe_max: f64,
    ex_max: f64,
    samples: usize,
    points: usize,
}

impl EpochAccumulator {
    fn new() -> EpochAccumulator {
        EpochAccumulator {
            recon_sum: 0.0,
            kl_sum: 0.0,
            pe_sum: 0.0,
            ex_sum: 0.0,
            pe_max: 0.0,
            ex_max: 0.0,
            samples: 0,
            points: 0,
        }
    }

    fn add(&mut self, breakdown: &LossBreakdown, batch_len: usize, points: usize) {
        self.recon_sum += breakdown.recon * batch_len as f64;
        self.kl_sum += breakdown.kl * batch_len as f64;
        self.pe_sum += breakdown.pe_mean * points as f64;
        self.ex_sum += breakdown.ex_mean * points as f64;
        self.pe_max = self.pe_max.max(breakdown.pe_max);
        self.ex_max = self.ex_max.max(breakdown.ex_max);
        self.samples += batch_len;
        self.points += points;
    }

    fn metrics(&self, epoch: usize, config: &TrainingConfig) -> EpochMetrics {
        let recon = self.recon_sum / self.samples.max(1) as f64;
        let kl = self.kl_sum / self.samples.max(1) as f64;
        let pe_mean = self.pe_sum / self.points.max(1) as f64;
        let ex_mean = self.ex_sum / self.points.max(1) as f64;
        EpochMetrics {
            epoch,
            recon,
            kl,
            pe_mean,
            ex_mean,
            pe_max_sqrt: self.pe_max.sqrt(),
            ex_max_sqrt: self.ex_max.sqrt(),
            loss: recon + config.beta * kl + config.gamma * pe_mean + config.delta * ex_mean,
        }
    }
}

fn batch_indices(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order
        .chunks(batch_size)
        .map(|chunk| chunk.to_vec())
        .collect();
    // The curvature sampler needs at least two embedded points, so a
    // trailing singleton batch folds into its predecessor.
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

fn rows_of(dataset: &Dataset, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), dataset.num_features(), |i, j| {
        dataset.matrix[(rows[i], j)]
    })
}

fn encoder_means(encoder: &MlpModel, batch: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = encoder.latent_dim();
    let mut means = DMatrix::zeros(batch.nrows(), m);
    for i in 0..batch.nrows() {
        let (mean, _) = crate::jets::encoder_forward(encoder, &batch.row(i).transpose())?;
        means.set_row(i, &mean.transpose());
    }
    Ok(means)
}

/// Trains a fresh model pair on the dataset. Deterministic given
/// `(dataset, config)`: all randomness flows from the config seed through
/// the four derived streams.
pub fn train(dataset: &Dataset, config: &TrainingConfig) -> Result<TrainOutput> {
    config.validate()?;
    let n = dataset.num_samples();
    if n < 2 {
        return Err(Error::InsufficientPoints(
            "training needs at least 2 samples".into(),
        ));
    }
    if config.batch_size > n {
        return Err(Error::Config(format!(
            "batch_size {} exceeds dataset size {n}",
            config.batch_size
        )));
    }
    let n_features = dataset.num_features();
    let m = config.latent_dim;

    let mut streams = RandomStreams::from_seed(config.seed);
    let mut enc_dims = vec![n_features];
    enc_dims.extend(&config.hidden_dims);
    enc_dims.push(2 * m);
    let mut dec_dims = vec![m];
    dec_dims.extend(config.hidden_dims.iter().rev());
    dec_dims.push(n_features);
    let mut encoder = MlpModel::random(enc_dims, Role::Encoder, &mut streams.init)?;
    let mut decoder = MlpModel::random(dec_dims, Role::Decoder, &mut streams.init)?;
    let mut enc_opt = OptimizerState::new(&encoder);
    let mut dec_opt = OptimizerState::new(&decoder);

    let mut log: Vec<EpochMetrics> = Vec::with_capacity(config.epochs + 1);
    let natural_order: Vec<usize> = (0..n).collect();

    // Epoch 0: evaluation at initialization on cloned streams.
    {
        let mut noise_rng = streams.noise.clone();
        let mut curv_rng = streams.curvature.clone();
        let mut acc = EpochAccumulator::new();
        for rows in batch_indices(&natural_order, config.batch_size) {
            let batch = rows_of(dataset, &rows);
            let means = encoder_means(&encoder, &batch)?;
            let points = sample_curvature_points(
                &means,
                config.m_samples,
                config.sampler_scale,
                &mut curv_rng,
            )?;
            let (_, breakdown) = total_loss(
                &encoder,
                &decoder,
                &batch,
                &points,
                config,
                &mut noise_rng,
            )
            .map_err(|e| diverged(e, 0, &log))?;
            acc.add(&breakdown, rows.len(), points.nrows());
        }
        log.push(acc.metrics(0, config));
    }

    for epoch in 1..=config.epochs {
        let mut order = natural_order.clone();
        use rand::seq::SliceRandom;
        order.shuffle(&mut streams.shuffle);
        let mut acc = EpochAccumulator::new();
        for rows in batch_indices(&order, config.batch_size) {
            let batch = rows_of(dataset, &rows);
            let means = encoder_means(&encoder, &batch)?;
            let points = sample_curvature_points(
                &means,
                config.m_samples,
                config.sampler_scale,
                &mut streams.curvature,
            )?;
            let (_, breakdown, enc_grads, dec_grads) = loss_gradient(
                &encoder,
                &decoder,
                &batch,
                &points,
                config,
                &mut streams.noise,
            )
            .map_err(|e| diverged(e, epoch, &log))?;
            enc_opt.step(&mut encoder, &enc_grads, config.learning_rate, config.moment_decay);
            dec_opt.step(&mut decoder, &dec_grads, config.learning_rate, config.moment_decay);
            acc.add(&breakdown, rows.len(), points.nrows());
        }
        log.push(acc.metrics(epoch, config));
    }

    Ok(TrainOutput {
        encoder,
        decoder,
        log,
    })
}

fn diverged(err: Error, epoch: usize, log: &[EpochMetrics]) -> Error {
    match err {
        Error::NonFiniteLoss { term } => Error::Diverged {
            term,
            epoch,
            partial_log: log.to_vec(),
        },
        other => other,
    }
}
