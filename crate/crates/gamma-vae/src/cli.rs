//! Command-line pipeline: generate data, train, embed, audit curvature,
//! evaluate out-of-distribution consistency, classify, and export
//! figure-ready CSVs.
//!
//! One command per process. Every command validates its flags and checks
//! its output paths before doing work, computes everything, writes outputs,
//! and finishes with an atomically written run manifest listing every
//! artifact. Exit codes: 2 parse, 3 shape/domain, 4 diverged training,
//! 5 singular geometry.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    self, gen_synthetic, load_matrix, normalize, FileFormat, NormRecord, NormScheme, SyntheticKind,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    self, distance_histogram, embed, load_embedding_csv, ood_consistency, write_embedding_csv,
    write_histogram_csv, HISTOGRAM_BINS,
};
use crate::geometry::{curvature_map, tangent_angles, write_curvature_map_csv};
use crate::jets::{decoder_jet, load_checkpoint, save_checkpoint};
use crate::training::{train, write_metrics_csv, TrainingConfig};

/// Environment variable capping internal parallelism (default: all cores).
pub const THREADS_ENV: &str = "GAMMA_VAE_THREADS";

/// Builds the global thread pool from `GAMMA_VAE_THREADS`. Call once at
/// process start; does nothing if the pool already exists.
pub fn init_thread_pool() {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        if let Ok(threads) = value.parse::<usize>() {
            if threads > 0 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "gvae", version, about = "Curvature-regularized VAE pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic benchmark dataset.
    Gen {
        /// linear_subspace | swiss_roll | curved_sheet_clusters | sphere
        #[arg(long)]
        kind: String,
        /// Number of samples.
        #[arg(long)]
        n: usize,
        /// Ambient (feature) dimension.
        #[arg(long)]
        features: usize,
        /// Latent dimension (linear_subspace only).
        #[arg(long, default_value_t = 2)]
        latent_dim: usize,
        /// Cluster count (curved_sheet_clusters only).
        #[arg(long, default_value_t = 6)]
        clusters: usize,
        /// Sphere radius (sphere only).
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        /// Ambient noise standard deviation.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train a model pair; writes checkpoint, metrics, normalization
    /// record, resolved config, and manifest into --out.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON config; flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// none | standardize | log1p_standardize
        #[arg(long, default_value = "standardize")]
        normalize: String,
        #[arg(long)]
        label_column: Option<String>,
        #[arg(long)]
        group_column: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        m_samples: Option<usize>,
        #[arg(long)]
        sampler_scale: Option<f64>,
        #[arg(long)]
        jitter_scale: Option<f64>,
        #[arg(long)]
        latent_dim: Option<usize>,
        /// Comma-separated hidden widths, e.g. 64,32.
        #[arg(long)]
        hidden_dims: Option<String>,
        #[arg(long)]
        force: bool,
    },
    /// Embed a dataset with a trained checkpoint (encoder means).
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Normalization record; defaults to norm.json next to the checkpoint.
        #[arg(long)]
        norm: Option<PathBuf>,
        #[arg(long)]
        label_column: Option<String>,
        #[arg(long)]
        group_column: Option<String>,
        #[arg(long)]
        force: bool,
    },
    /// Curvature map over a latent grid.
    Curvature {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Per-axis bounds `lo:hi`, comma separated; one pair is replicated
        /// to every axis. Example: --box -2:2,-1:1
        #[arg(long = "box")]
        box_spec: String,
        /// Grid points per axis.
        #[arg(long)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = crate::geometry::DEFAULT_JITTER_SCALE)]
        jitter_scale: f64,
        /// Reference point for tangent angles; defaults to the origin.
        #[arg(long)]
        reference: Option<String>,
        #[arg(long)]
        force: bool,
    },
    /// Principal tangent angles between an origin point and random latent
    /// samples, by distance.
    Angles {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated origin coordinates.
        #[arg(long)]
        origin: String,
        /// Number of sampled latent points.
        #[arg(long)]
        samples: usize,
        /// Half-width of the sampling box around the origin.
        #[arg(long, default_value_t = 3.0)]
        radius: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Decode evenly spaced points on a latent segment.
    Path {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated start coordinates.
        #[arg(long)]
        from: String,
        /// Comma-separated end coordinates.
        #[arg(long)]
        to: String,
        /// Number of points on the segment (>= 2).
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Re-embedding consistency of a held-out group between two trained
    /// models.
    Ood {
        #[arg(long)]
        full_checkpoint: PathBuf,
        #[arg(long)]
        holdout_checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Held-out group tag.
        #[arg(long)]
        group: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        full_norm: Option<PathBuf>,
        #[arg(long)]
        holdout_norm: Option<PathBuf>,
        #[arg(long)]
        label_column: Option<String>,
        #[arg(long, default_value = "group")]
        group_column: String,
        #[arg(long)]
        force: bool,
    },
    /// Discriminant classification in an embedding.
    Classify {
        /// Embedding CSV (sample_id,z1..zm,label,group).
        #[arg(long)]
        embedding: PathBuf,
        /// Which tag column to classify: label | group.
        #[arg(long, default_value = "label")]
        labels: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

/// Record of one command invocation, written atomically after all outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub version: String,
    pub duration_seconds: f64,
}

fn write_manifest(
    path: &Path,
    command: &str,
    config: Option<&Path>,
    inputs: &[&Path],
    outputs: &[&Path],
    seed: Option<u64>,
    started: Instant,
) -> Result<()> {
    let manifest = RunManifest {
        command: command.to_string(),
        config: config.map(|p| p.display().to_string()),
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        duration_seconds: started.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, json)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Refuses to overwrite existing outputs unless forced.
fn check_outputs(paths: &[&Path], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    for path in paths {
        if path.exists() {
            return Err(Error::OutputExists(path.display().to_string()));
        }
    }
    Ok(())
}

fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn parse_coords(text: &str, what: &str) -> Result<DVector<f64>> {
    let values: std::result::Result<Vec<f64>, _> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect();
    match values {
        Ok(v) if !v.is_empty() => Ok(DVector::from_vec(v)),
        _ => Err(Error::Config(format!(
            "could not parse {what} '{text}' as comma-separated numbers"
        ))),
    }
}

fn parse_box(text: &str, latent_dim: usize) -> Result<Vec<(f64, f64)>> {
    let mut axes = Vec::new();
    for part in text.split(',') {
        let (lo, hi) = part
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("box axis '{part}' is not lo:hi")))?;
        let lo: f64 = lo
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad box bound '{lo}'")))?;
        let hi: f64 = hi
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad box bound '{hi}'")))?;
        axes.push((lo, hi));
    }
    if axes.len() == 1 {
        return Ok(vec![axes[0]; latent_dim]);
    }
    if axes.len() != latent_dim {
        return Err(Error::Config(format!(
            "box has {} axes, model latent dim is {latent_dim}",
            axes.len()
        )));
    }
    Ok(axes)
}

fn load_dataset(
    path: &Path,
    label_column: Option<&str>,
    group_column: Option<&str>,
) -> Result<data::Dataset> {
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("tsv") => FileFormat::Tsv,
        _ => FileFormat::Csv,
    };
    load_matrix(path, format, true, label_column, group_column)
}

fn sibling_norm(checkpoint: &Path, explicit: Option<&PathBuf>) -> PathBuf {
    match explicit {
        Some(p) => p.clone(),
        None => checkpoint.with_file_name("norm.json"),
    }
}

/// Runs one parsed command to completion.
pub fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    match cli.command {
        Command::Gen {
            kind,
            n,
            features,
            latent_dim,
            clusters,
            radius,
            noise,
            seed,
            out,
            force,
        } => {
            let kind = match kind.as_str() {
                "linear_subspace" => SyntheticKind::LinearSubspace {
                    n_features: features,
                    latent_dim,
                },
                "swiss_roll" => SyntheticKind::SwissRoll { n_features: features },
                "curved_sheet_clusters" => SyntheticKind::CurvedSheetClusters {
                    n_features: features,
                    clusters,
                },
                "sphere" => SyntheticKind::Sphere {
                    n_features: features,
                    radius,
                },
                other => {
                    return Err(Error::Config(format!("unknown synthetic kind '{other}'")))
                }
            };
            let manifest = manifest_path_for(&out);
            check_outputs(&[&out, &manifest], force)?;
            let dataset = gen_synthetic(&kind, n, noise, seed)?;
            data::save_csv(&dataset, &out)?;
            write_manifest(&manifest, "gen", None, &[], &[&out], Some(seed), started)
        }
        Command::Train {
            data: data_path,
            out,
            config,
            normalize: scheme,
            label_column,
            group_column,
            seed,
            epochs,
            batch_size,
            beta,
            gamma,
            delta,
            learning_rate,
            m_samples,
            sampler_scale,
            jitter_scale,
            latent_dim,
            hidden_dims,
            force,
        } => {
            let mut cfg = match &config {
                Some(path) => TrainingConfig::load(path)?,
                None => TrainingConfig::default(),
            };
            // Precedence: flag > config file > default.
            macro_rules! override_field {
                ($flag:expr, $field:ident) => {
                    if let Some(v) = $flag {
                        cfg.$field = v;
                    }
                };
            }
            override_field!(seed, seed);
            override_field!(epochs, epochs);
            override_field!(batch_size, batch_size);
            override_field!(beta, beta);
            override_field!(gamma, gamma);
            override_field!(delta, delta);
            override_field!(learning_rate, learning_rate);
            override_field!(m_samples, m_samples);
            override_field!(sampler_scale, sampler_scale);
            override_field!(jitter_scale, jitter_scale);
            override_field!(latent_dim, latent_dim);
            if let Some(dims) = hidden_dims {
                let parsed: std::result::Result<Vec<usize>, _> =
                    dims.split(',').map(|t| t.trim().parse()).collect();
                cfg.hidden_dims = parsed
                    .map_err(|_| Error::Config(format!("bad hidden dims '{dims}'")))?;
            }
            cfg.validate()?;
            let scheme: NormScheme = scheme.parse()?;

            std::fs::create_dir_all(&out)?;
            let ckpt_path = out.join("checkpoint.json");
            let metrics_path = out.join("metrics.csv");
            let norm_path = out.join("norm.json");
            let config_path = out.join("config.json");
            let manifest = out.join("manifest.json");
            check_outputs(
                &[&ckpt_path, &metrics_path, &norm_path, &config_path, &manifest],
                force,
            )?;

            let raw = load_dataset(&data_path, label_column.as_deref(), group_column.as_deref())?;
            let (normalized, record) = normalize(&raw, scheme)?;
            let outcome = match train(&normalized, &cfg) {
                Ok(outcome) => outcome,
                Err(Error::Diverged {
                    term,
                    epoch,
                    partial_log,
                }) => {
                    // Abort with the partial log on disk.
                    write_metrics_csv(&metrics_path, &partial_log)?;
                    return Err(Error::Diverged {
                        term,
                        epoch,
                        partial_log: Vec::new(),
                    });
                }
                Err(other) => return Err(other),
            };
            save_checkpoint(&ckpt_path, &outcome.encoder, &outcome.decoder)?;
            write_metrics_csv(&metrics_path, &outcome.log)?;
            record.save(&norm_path)?;
            cfg.save(&config_path)?;
            write_manifest(
                &manifest,
                "train",
                config.as_deref(),
                &[&data_path],
                &[&ckpt_path, &metrics_path, &norm_path, &config_path],
                Some(cfg.seed),
                started,
            )
        }
        Command::Embed {
            checkpoint,
            data: data_path,
            out,
            norm,
            label_column,
            group_column,
            force,
        } => {
            let manifest = manifest_path_for(&out);
            check_outputs(&[&out, &manifest], force)?;
            let (encoder, _) = load_checkpoint(&checkpoint)?;
            let norm_path = sibling_norm(&checkpoint, norm.as_ref());
            let record = NormRecord::load(&norm_path)?;
            let dataset =
                load_dataset(&data_path, label_column.as_deref(), group_column.as_deref())?;
            let embedding = embed(&encoder, &dataset, &record)?;
            write_embedding_csv(&out, &embedding)?;
            write_manifest(
                &manifest,
                "embed",
                None,
                &[&checkpoint, &norm_path, &data_path],
                &[&out],
                None,
                started,
            )
        }
        Command::Curvature {
            checkpoint,
            box_spec,
            resolution,
            out,
            jitter_scale,
            reference,
            force,
        } => {
            let manifest = manifest_path_for(&out);
            check_outputs(&[&out, &manifest], force)?;
            let (_, decoder) = load_checkpoint(&checkpoint)?;
            let m = decoder.latent_dim();
            let bounds = parse_box(&box_spec, m)?;
            let reference_z = match &reference {
                Some(text) => parse_coords(text, "reference")?,
                None => DVector::zeros(m),
            };
            let grid = evaluation::latent_grid(&bounds, resolution)?;
            let rows = curvature_map(&decoder, &grid, jitter_scale, &reference_z)?;
            write_curvature_map_csv(&out, &rows)?;
            write_manifest(
                &manifest,
                "curvature",
                None,
                &[&checkpoint],
                &[&out],
                None,
                started,
            )
        }
        Command::Angles {
            checkpoint,
            origin,
            samples,
            radius,
            seed,
            out,
            force,
        } => {
            let manifest = manifest_path_for(&out);
            check_outputs(&[&out, &manifest], force)?;
            let (_, decoder) = load_checkpoint(&checkpoint)?;
            let origin = parse_coords(&origin, "origin")?;
            if origin.len() != decoder.latent_dim() {
                return Err(Error::shape(format!(
                    "origin has {} coordinates, latent dim is {}",
                    origin.len(),
                    decoder.latent_dim()
                )));
            }
            let origin_jet = decoder_jet(&decoder, &origin)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = decoder.latent_dim();
            let mut wtr = csv::Writer::from_path(&out).map_err(crate::geometry::csv_io)?;
            let mut header: Vec<String> = (1..=m).map(|i| format!("z{i}")).collect();
            header.push("dist".into());
            header.extend((1..=m).map(|i| format!("angle{i}")));
            wtr.write_record(&header).map_err(crate::geometry::csv_io)?;
            for _ in 0..samples {
                let z = DVector::from_fn(m, |k, _| {
                    origin[k] + rng.random_range(-radius..=radius)
                });
                let jet = decoder_jet(&decoder, &z)?;
                let angles = tangent_angles(&jet, &origin_jet)?;
                let mut rec: Vec<String> = z.iter().map(|v| v.to_string()).collect();
                rec.push((&z - &origin).norm().to_string());
                rec.extend(angles.iter().map(|a| a.to_string()));
                wtr.write_record(&rec).map_err(crate::geometry::csv_io)?;
            }
            wtr.flush()?;
            write_manifest(
                &manifest,
                "angles",
                None,
                &[&checkpoint],
                &[&out],
                Some(seed),
                started,
            )
        }
        Command::Path {
            checkpoint,
            from,
            to,
            steps,
            out,
            force,
        } => {
            let manifest = manifest_path_for(&out);
            check_outputs(&[&out, &manifest], force)?;
            let (_, decoder) = load_checkpoint(&checkpoint)?;
            let z_start = parse_coords(&from, "path start")?;
            let z_end = parse_coords(&to, "path end")?;
            let decoded = evaluation::decode_path(&decoder, &z_start, &z_end, steps)?;
            let mut wtr = csv::Writer::from_path(&out).map_err(crate::geometry::csv_io)?;
            let mut header = vec!["t".to_string()];
            header.extend((0..decoded.ncols()).map(|j| format!("f{j}")));
            wtr.write_record(&header).map_err(crate::geometry::csv_io)?;
            for k in 0..decoded.nrows() {
                let t = k as f64 / (decoded.nrows() - 1) as f64;
                let mut rec = vec![t.to_string()];
                rec.extend(decoded.row(k).iter().map(|v| v.to_string()));
                wtr.write_record(&rec).map_err(crate::geometry::csv_io)?;
            }
            wtr.flush()?;
            write_manifest(&manifest, "path", None, &[&checkpoint], &[&out], None, started)
        }
        Command::Ood {
            full_checkpoint,
            holdout_checkpoint,
            data: data_path,
            group,
            out,
            full_norm,
            holdout_norm,
            label_column,
            group_column,
            force,
        } => {
            std::fs::create_dir_all(&out)?;
            let consistency_path = out.join("consistency.json");
            let histogram_path = out.join("histogram.csv");
            let manifest = out.join("manifest.json");
            check_outputs(&[&consistency_path, &histogram_path, &manifest], force)?;

            let (full_encoder, _) = load_checkpoint(&full_checkpoint)?;
            let (holdout_encoder, _) = load_checkpoint(&holdout_checkpoint)?;
            let full_norm_path = sibling_norm(&full_checkpoint, full_norm.as_ref());
            let holdout_norm_path = sibling_norm(&holdout_checkpoint, holdout_norm.as_ref());
            let full_record = NormRecord::load(&full_norm_path)?;
            let holdout_record = NormRecord::load(&holdout_norm_path)?;
            let dataset = load_dataset(
                &data_path,
                label_column.as_deref(),
                Some(group_column.as_str()),
            )?;
            let full_embedding = embed(&full_encoder, &dataset, &full_record)?;
            let holdout_embedding = embed(&holdout_encoder, &dataset, &holdout_record)?;
            let report = ood_consistency(&full_embedding, &holdout_embedding, &group)?;
            let hist = distance_histogram(
                &report.full_distances,
                &report.holdout_distances,
                HISTOGRAM_BINS,
            )?;

            #[derive(Serialize)]
            struct Consistency<'a> {
                group: &'a str,
                rho: f64,
                held_count: usize,
                pair_count: usize,
            }
            let summary = serde_json::to_string_pretty(&Consistency {
                group: &group,
                rho: report.rho,
                held_count: report.held_count,
                pair_count: report.full_distances.len(),
            })?;
            std::fs::write(&consistency_path, summary)?;
            write_histogram_csv(&histogram_path, &hist)?;
            write_manifest(
                &manifest,
                "ood",
                None,
                &[
                    &full_checkpoint,
                    &holdout_checkpoint,
                    &full_norm_path,
                    &holdout_norm_path,
                    &data_path,
                ],
                &[&consistency_path, &histogram_path],
                None,
                started,
            )
        }
        Command::Classify {
            embedding,
            labels,
            out,
            force,
        } => {
            std::fs::create_dir_all(&out)?;
            let predictions_path = out.join("predictions.csv");
            let accuracy_path = out.join("accuracy.json");
            let manifest = out.join("manifest.json");
            check_outputs(&[&predictions_path, &accuracy_path, &manifest], force)?;

            let emb = load_embedding_csv(&embedding)?;
            let truth = match labels.as_str() {
                "label" => emb.labels.clone(),
                "group" => emb.groups.clone(),
                other => {
                    return Err(Error::Config(format!(
                        "--labels must be 'label' or 'group', got '{other}'"
                    )))
                }
            }
            .ok_or_else(|| {
                Error::domain(format!("embedding has no '{labels}' tags to classify"))
            })?;
            let model = evaluation::lda_fit(&emb.points, &truth)?;
            let predicted = evaluation::lda_predict(&model, &emb.points)?;
            let acc = evaluation::accuracy(&predicted, &truth);

            let mut wtr =
                csv::Writer::from_path(&predictions_path).map_err(crate::geometry::csv_io)?;
            wtr.write_record(["sample_id", "predicted", "truth"])
                .map_err(crate::geometry::csv_io)?;
            for (i, (p, t)) in predicted.iter().zip(&truth).enumerate() {
                wtr.write_record([i.to_string().as_str(), p, t])
                    .map_err(crate::geometry::csv_io)?;
            }
            wtr.flush()?;

            #[derive(Serialize)]
            struct Accuracy<'a> {
                labels: &'a str,
                accuracy: f64,
                classes: &'a [String],
                samples: usize,
            }
            std::fs::write(
                &accuracy_path,
                serde_json::to_string_pretty(&Accuracy {
                    labels: &labels,
                    accuracy: acc,
                    classes: model.classes(),
                    samples: truth.len(),
                })?,
            )?;
            write_manifest(
                &manifest,
                "classify",
                None,
                &[&embedding],
                &[&predictions_path, &accuracy_path],
                None,
                started,
            )
        }
    }
}
