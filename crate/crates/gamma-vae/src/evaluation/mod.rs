//! Diagnostics over trained models: embeddings, decoded grids and paths,
//! pairwise-distance consistency under re-embedding, rank correlation,
//! discriminant classification, and signature scores.

mod lda;
mod pca;

pub use lda::{accuracy, lda_fit, lda_predict, LdaModel};
pub use pca::{pca_fit, pca_project, pca_reconstruct, PcaModel};

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::{apply_normalization, Dataset, NormRecord};
use crate::error::{Error, Result};
use crate::geometry::csv_io;
use crate::jets::{encoder_forward, MlpModel, Role};

/// Latent coordinates of a dataset: one row per sample (encoder means, no
/// sampling noise), with labels and groups carried over.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub points: DMatrix<f64>,
    pub labels: Option<Vec<String>>,
    pub groups: Option<Vec<String>>,
}

impl Embedding {
    pub fn num_samples(&self) -> usize {
        self.points.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.points.ncols()
    }
}

/// Embeds a dataset: applies the frozen normalization record, then takes
/// the encoder mean of every sample.
pub fn embed(encoder: &MlpModel, dataset: &Dataset, record: &NormRecord) -> Result<Embedding> {
    if encoder.role() != Role::Encoder {
        return Err(Error::domain("embed requires an encoder model"));
    }
    let normalized = apply_normalization(dataset, record)?;
    if normalized.num_features() != encoder.input_dim() {
        return Err(Error::shape(format!(
            "dataset has {} features, encoder expects {}",
            normalized.num_features(),
            encoder.input_dim()
        )));
    }
    let m = encoder.latent_dim();
    let mut points = DMatrix::zeros(normalized.num_samples(), m);
    for i in 0..normalized.num_samples() {
        let (mean, _) = encoder_forward(encoder, &normalized.matrix.row(i).transpose())?;
        points.set_row(i, &mean.transpose());
    }
    Ok(Embedding {
        points,
        labels: dataset.labels.clone(),
        groups: dataset.groups.clone(),
    })
}

/// Regular lattice over a latent box, `resolution` points per axis, row
/// count `resolution^m`. The last axis varies fastest.
pub fn latent_grid(bounds: &[(f64, f64)], resolution: usize) -> Result<DMatrix<f64>> {
    if bounds.is_empty() {
        return Err(Error::domain("latent box needs at least one axis"));
    }
    if resolution < 2 {
        return Err(Error::domain("grid resolution must be at least 2"));
    }
    for &(lo, hi) in bounds {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::domain(format!("invalid box axis [{lo}, {hi}]")));
        }
    }
    let m = bounds.len();
    let total = resolution.pow(m as u32);
    let mut grid = DMatrix::zeros(total, m);
    for row in 0..total {
        let mut rem = row;
        for axis in (0..m).rev() {
            let idx = rem % resolution;
            rem /= resolution;
            let (lo, hi) = bounds[axis];
            grid[(row, axis)] = lo + (hi - lo) * idx as f64 / (resolution - 1) as f64;
        }
    }
    Ok(grid)
}

/// Decodes a regular latent lattice row-wise; returns `(grid, decoded)`.
pub fn decode_grid(
    decoder: &MlpModel,
    bounds: &[(f64, f64)],
    resolution: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if decoder.role() != Role::Decoder {
        return Err(Error::domain("decode_grid requires a decoder model"));
    }
    if bounds.len() != decoder.input_dim() {
        return Err(Error::shape(format!(
            "box has {} axes, decoder latent dim is {}",
            bounds.len(),
            decoder.input_dim()
        )));
    }
    let grid = latent_grid(bounds, resolution)?;
    let decoded = decode_rows(decoder, &grid)?;
    Ok((grid, decoded))
}

/// Decodes `K` evenly spaced points on the latent segment from `z_start`
/// to `z_end`.
pub fn decode_path(
    decoder: &MlpModel,
    z_start: &DVector<f64>,
    z_end: &DVector<f64>,
    steps: usize,
) -> Result<DMatrix<f64>> {
    if steps < 2 {
        return Err(Error::domain("decode_path needs at least 2 steps"));
    }
    if z_start.len() != decoder.input_dim() || z_end.len() != decoder.input_dim() {
        return Err(Error::shape("path endpoints must match decoder latent dim"));
    }
    let mut points = DMatrix::zeros(steps, z_start.len());
    for k in 0..steps {
        let t = k as f64 / (steps - 1) as f64;
        let z = z_start * (1.0 - t) + z_end * t;
        points.set_row(k, &z.transpose());
    }
    decode_rows(decoder, &points)
}

fn decode_rows(decoder: &MlpModel, points: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    use rayon::prelude::*;
    let rows: Vec<Result<DVector<f64>>> = (0..points.nrows())
        .into_par_iter()
        .map(|i| decoder.forward(&points.row(i).transpose()))
        .collect();
    let mut out = DMatrix::zeros(points.nrows(), decoder.output_dim());
    for (i, row) in rows.into_iter().enumerate() {
        out.set_row(i, &row?.transpose());
    }
    Ok(out)
}

/// Condensed Euclidean pairwise distances in fixed `(i < j)` order.
pub fn pairwise_distances(points: &DMatrix<f64>) -> Vec<f64> {
    let n = points.nrows();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push((points.row(i) - points.row(j)).norm());
        }
    }
    out
}

/// Fractional ranks with average-rank ties, 1-based.
fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j share the average rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of fractional ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "spearman lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InsufficientPoints(
            "spearman needs at least 2 values".into(),
        ));
    }
    let ra = fractional_ranks(a);
    let rb = fractional_ranks(b);
    let n = ra.len() as f64;
    let mean_a = ra.iter().sum::<f64>() / n;
    let mean_b = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "zero rank variance (all values tied)".into(),
        ));
    }
    Ok(cov / (var_a * var_b).sqrt())
}

/// Outcome of a re-embedding consistency check: the rank correlation plus
/// the two distance sets it was computed from (held-out sample to every
/// other sample, identical order in both embeddings).
#[derive(Debug, Clone)]
pub struct OodReport {
    pub rho: f64,
    pub group: String,
    pub held_count: usize,
    pub full_distances: Vec<f64>,
    pub holdout_distances: Vec<f64>,
}

/// Compares held-out-to-rest distances between two embeddings of the same
/// samples (e.g. a model trained with the group versus without it).
pub fn ood_consistency(
    full: &Embedding,
    holdout: &Embedding,
    group: &str,
) -> Result<OodReport> {
    if full.num_samples() != holdout.num_samples() {
        return Err(Error::shape(format!(
            "embeddings cover {} vs {} samples",
            full.num_samples(),
            holdout.num_samples()
        )));
    }
    let groups = full
        .groups
        .as_ref()
        .ok_or_else(|| Error::domain("ood_consistency needs group tags"))?;
    if let Some(other) = &holdout.groups {
        if other != groups {
            return Err(Error::domain(
                "embeddings disagree on sample groups (ordering mismatch?)",
            ));
        }
    }
    let held: Vec<usize> = (0..full.num_samples())
        .filter(|&i| groups[i] == group)
        .collect();
    let rest: Vec<usize> = (0..full.num_samples())
        .filter(|&i| groups[i] != group)
        .collect();
    if held.is_empty() {
        return Err(Error::domain(format!("group '{group}' has no samples")));
    }
    if rest.is_empty() {
        return Err(Error::domain(format!(
            "group '{group}' covers every sample"
        )));
    }
    let distances = |emb: &Embedding| {
        let mut out = Vec::with_capacity(held.len() * rest.len());
        for &h in &held {
            for &o in &rest {
                out.push((emb.points.row(h) - emb.points.row(o)).norm());
            }
        }
        out
    };
    let full_distances = distances(full);
    let holdout_distances = distances(holdout);
    let rho = spearman(&full_distances, &holdout_distances)?;
    Ok(OodReport {
        rho,
        group: group.to_string(),
        held_count: held.len(),
        full_distances,
        holdout_distances,
    })
}

/// A column-normalized 2-D histogram of paired values. Axis 0 (columns) is
/// the first series, axis 1 (rows) the second; each column sums to 1
/// unless it is empty.
#[derive(Debug, Clone)]
pub struct DistanceHistogram {
    pub bins: usize,
    /// `density[(row, col)]`.
    pub density: DMatrix<f64>,
}

pub const HISTOGRAM_BINS: usize = 50;

pub fn distance_histogram(x: &[f64], y: &[f64], bins: usize) -> Result<DistanceHistogram> {
    if x.len() != y.len() {
        return Err(Error::shape("histogram inputs must have equal lengths"));
    }
    if bins == 0 {
        return Err(Error::domain("histogram needs at least one bin"));
    }
    let max_x = x.iter().fold(0.0_f64, |a, &v| a.max(v));
    let max_y = y.iter().fold(0.0_f64, |a, &v| a.max(v));
    let bin_of = |v: f64, max: f64| -> usize {
        if max <= 0.0 {
            0
        } else {
            (((v / max) * bins as f64) as usize).min(bins - 1)
        }
    };
    let mut counts = DMatrix::<f64>::zeros(bins, bins);
    for (&vx, &vy) in x.iter().zip(y) {
        counts[(bin_of(vy, max_y), bin_of(vx, max_x))] += 1.0;
    }
    for col in 0..bins {
        let total: f64 = counts.column(col).sum();
        if total > 0.0 {
            for row in 0..bins {
                counts[(row, col)] /= total;
            }
        }
    }
    Ok(DistanceHistogram {
        bins,
        density: counts,
    })
}

/// Writes a histogram as CSV `row_bin,col_bin,density`.
pub fn write_histogram_csv(path: impl AsRef<Path>, hist: &DistanceHistogram) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path.as_ref()).map_err(csv_io)?;
    wtr.write_record(["row_bin", "col_bin", "density"]).map_err(csv_io)?;
    for row in 0..hist.bins {
        for col in 0..hist.bins {
            wtr.write_record([
                row.to_string(),
                col.to_string(),
                hist.density[(row, col)].to_string(),
            ])
            .map_err(csv_io)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Per-sample sum over the named feature columns.
pub fn signature_score(dataset: &Dataset, features: &[String]) -> Result<Vec<f64>> {
    if features.is_empty() {
        return Err(Error::domain("signature needs at least one feature"));
    }
    let mut cols = Vec::with_capacity(features.len());
    for name in features {
        let idx = dataset
            .feature_names
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| Error::UnknownFeature(name.clone()))?;
        cols.push(idx);
    }
    Ok((0..dataset.num_samples())
        .map(|i| cols.iter().map(|&j| dataset.matrix[(i, j)]).sum())
        .collect())
}

/// Writes an embedding as CSV `sample_id,z1..zm,label,group` (empty label
/// or group cells when the dataset carried none).
pub fn write_embedding_csv(path: impl AsRef<Path>, embedding: &Embedding) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path.as_ref()).map_err(csv_io)?;
    let m = embedding.latent_dim();
    let mut header = vec!["sample_id".to_string()];
    header.extend((1..=m).map(|i| format!("z{i}")));
    header.push("label".into());
    header.push("group".into());
    wtr.write_record(&header).map_err(csv_io)?;
    for i in 0..embedding.num_samples() {
        let mut rec = vec![i.to_string()];
        rec.extend((0..m).map(|j| embedding.points[(i, j)].to_string()));
        rec.push(
            embedding
                .labels
                .as_ref()
                .map_or(String::new(), |l| l[i].clone()),
        );
        rec.push(
            embedding
                .groups
                .as_ref()
                .map_or(String::new(), |g| g[i].clone()),
        );
        wtr.write_record(&rec).map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Loads an embedding written by [`write_embedding_csv`] (or any external
/// embedding in the same layout).
pub fn load_embedding_csv(path: impl AsRef<Path>) -> Result<Embedding> {
    let path = path.as_ref();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| parse_err(0, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let fields: Vec<&str> = header.iter().collect();
    if fields.first() != Some(&"sample_id")
        || fields.len() < 4
        || fields[fields.len() - 2] != "label"
        || fields[fields.len() - 1] != "group"
    {
        return Err(parse_err(
            1,
            "expected header sample_id,z1..zm,label,group".into(),
        ));
    }
    let m = fields.len() - 3;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != fields.len() {
            return Err(parse_err(line, "ragged row".into()));
        }
        let mut row = Vec::with_capacity(m);
        for k in 1..=m {
            row.push(
                record[k]
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line, format!("non-numeric '{}'", &record[k])))?,
            );
        }
        rows.push(row);
        labels.push(record[m + 1].to_string());
        groups.push(record[m + 2].to_string());
    }
    if rows.is_empty() {
        return Err(parse_err(0, "no embedding rows".into()));
    }
    let points = DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]);
    let any_label = labels.iter().any(|l| !l.is_empty());
    let any_group = groups.iter().any(|g| !g.is_empty());
    Ok(Embedding {
        points,
        labels: any_label.then_some(labels),
        groups: any_group.then_some(groups),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{normalize, NormScheme};
    use crate::jets::MlpModel;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spearman_examples() {
        assert_eq!(
            spearman(&[1.0, 5.0, 9.0, 20.0], &[0.1, 0.2, 0.3, 4.0]).unwrap(),
            1.0
        );
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(
            spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(),
            0.8
        );
    }

    #[test]
    fn spearman_monotone_invariance() {
        let a = [0.3, 2.0, -1.0, 0.7, 5.0];
        let b = [1.0, 0.0, 4.0, 2.5, -3.0];
        let base = spearman(&a, &b).unwrap();
        let a_mapped: Vec<f64> = a.iter().map(|v| v.exp()).collect();
        let b_mapped: Vec<f64> = b.iter().map(|v| v * 3.0 + 10.0).collect();
        assert_eq!(spearman(&a_mapped, &b_mapped).unwrap(), base);
    }

    #[test]
    fn spearman_ties_use_average_ranks() {
        // Ranks of a: [1.5, 1.5, 3]; perfectly monotone b gives rho < 1.
        let rho = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(rho > 0.0 && rho < 1.0);
    }

    #[test]
    fn spearman_constant_input_is_undefined() {
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn pairwise_distance_examples() {
        let pts = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 3.0, 4.0]);
        assert_eq!(pairwise_distances(&pts), vec![5.0]);
        let collinear = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        assert_eq!(pairwise_distances(&collinear), vec![1.0, 2.0, 1.0]);
        let dup = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(pairwise_distances(&dup), vec![0.0]);
    }

    #[test]
    fn pairwise_distances_isometry_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let pts = DMatrix::from_fn(12, 3, |_, _| rng.random_range(-2.0..2.0));
        let q = nalgebra::QR::new(DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0))).q();
        let shift = DVector::from_vec(vec![3.0, -1.0, 0.5]);
        let mut moved = &pts * q.transpose();
        for i in 0..moved.nrows() {
            for j in 0..3 {
                moved[(i, j)] += shift[j];
            }
        }
        let a = pairwise_distances(&pts);
        let b = pairwise_distances(&moved);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    fn toy_embedding(points: DMatrix<f64>, groups: Vec<&str>) -> Embedding {
        Embedding {
            points,
            labels: None,
            groups: Some(groups.into_iter().map(String::from).collect()),
        }
    }

    #[test]
    fn ood_consistency_of_identical_embeddings_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let pts = DMatrix::from_fn(20, 2, |_, _| rng.random_range(-3.0..3.0));
        let groups: Vec<&str> = (0..20).map(|i| if i < 5 { "held" } else { "rest" }).collect();
        let emb = toy_embedding(pts, groups);
        let report = ood_consistency(&emb, &emb, "held").unwrap();
        assert_eq!(report.rho, 1.0);
        assert_eq!(report.held_count, 5);
    }

    #[test]
    fn ood_consistency_invariant_under_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let pts = DMatrix::from_fn(30, 2, |_, _| rng.random_range(-3.0..3.0));
        let groups: Vec<&str> = (0..30).map(|i| if i % 3 == 0 { "g" } else { "o" }).collect();
        let full = toy_embedding(pts.clone(), groups.clone());
        let q = nalgebra::QR::new(DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0))).q();
        let mut rotated = &pts * q.transpose();
        for i in 0..rotated.nrows() {
            rotated[(i, 0)] += 7.0;
        }
        let moved = toy_embedding(rotated, groups);
        let report = ood_consistency(&full, &moved, "g").unwrap();
        assert_relative_eq!(report.rho, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ood_consistency_of_shuffled_points_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let n = 220;
        let pts = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-3.0..3.0));
        let groups: Vec<&str> = (0..n).map(|i| if i < 30 { "g" } else { "o" }).collect();
        let full = toy_embedding(pts.clone(), groups.clone());
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let shuffled_pts = DMatrix::from_fn(n, 2, |i, j| pts[(order[i], j)]);
        let shuffled = toy_embedding(shuffled_pts, groups);
        let report = ood_consistency(&full, &shuffled, "g").unwrap();
        assert!(report.rho.abs() < 0.3, "rho = {}", report.rho);
    }

    #[test]
    fn histogram_columns_sum_to_one() {
        let x: Vec<f64> = (0..100).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = (0..100).map(|i| (i as f64 * 0.7) % 11.0).collect();
        let hist = distance_histogram(&x, &y, 10).unwrap();
        for col in 0..10 {
            let total: f64 = hist.density.column(col).sum();
            assert!(total == 0.0 || (total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_corners_at_resolution_two() {
        let grid = latent_grid(&[(-1.0, 1.0), (0.0, 2.0)], 2).unwrap();
        assert_eq!(grid.nrows(), 4);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| grid.row(i).iter().copied().collect())
            .collect();
        assert!(rows.contains(&vec![-1.0, 0.0]));
        assert!(rows.contains(&vec![-1.0, 2.0]));
        assert!(rows.contains(&vec![1.0, 0.0]));
        assert!(rows.contains(&vec![1.0, 2.0]));
    }

    fn affine_decoder(rng: &mut ChaCha8Rng) -> MlpModel {
        MlpModel::new(
            vec![2, 4],
            vec![DMatrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0))],
            vec![DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0))],
            Role::Decoder,
        )
        .unwrap()
    }

    #[test]
    fn affine_decoder_grid_preserves_collinearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(65);
        let decoder = affine_decoder(&mut rng);
        let (_, decoded) = decode_grid(&decoder, &[(-1.0, 1.0), (-1.0, 1.0)], 3).unwrap();
        // Rows 0,1,2 form a line in latent space; decoded midpoint must be
        // the average of the endpoints.
        for j in 0..4 {
            let mid = (decoded[(0, j)] + decoded[(2, j)]) / 2.0;
            assert!((decoded[(1, j)] - mid).abs() < 1e-10);
        }
    }

    #[test]
    fn decode_path_endpoints_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let decoder = affine_decoder(&mut rng);
        let z0 = DVector::from_vec(vec![-1.0, 0.5]);
        let z1 = DVector::from_vec(vec![2.0, -0.5]);
        let two = decode_path(&decoder, &z0, &z1, 2).unwrap();
        assert_eq!(two.row(0).transpose(), decoder.forward(&z0).unwrap());
        assert_eq!(two.row(1).transpose(), decoder.forward(&z1).unwrap());
        let path = decode_path(&decoder, &z0, &z1, 7).unwrap();
        for j in 0..4 {
            for k in 1..6 {
                let second_diff =
                    path[(k + 1, j)] - 2.0 * path[(k, j)] + path[(k - 1, j)];
                assert!(second_diff.abs() < 1e-10);
            }
        }
        assert_eq!(path.row(6).transpose(), decoder.forward(&z1).unwrap());
    }

    #[test]
    fn embedding_matches_manual_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let encoder = MlpModel::random(vec![3, 6, 4], Role::Encoder, &mut rng).unwrap();
        let raw = Dataset::new(
            DMatrix::from_fn(5, 3, |_, _| rng.random_range(0.0..4.0)),
            vec!["a".into(), "b".into(), "c".into()],
            None,
            None,
        )
        .unwrap();
        let (_, record) = normalize(&raw, NormScheme::Log1pStandardize).unwrap();
        let emb = embed(&encoder, &raw, &record).unwrap();
        // Manual composition: log1p, shift/scale, encoder mean.
        for i in 0..raw.num_samples() {
            let manual = DVector::from_fn(3, |j, _| {
                ((raw.matrix[(i, j)]).ln_1p() - record.shift[j]) / record.scale[j]
            });
            let (mean, _) = encoder_forward(&encoder, &manual).unwrap();
            assert_eq!(emb.points.row(i).transpose(), mean);
        }
        // Duplicate samples map identically.
        let dup_rows = raw.select_rows(&[0, 0]);
        let demb = embed(&encoder, &dup_rows, &record).unwrap();
        assert_eq!(demb.points.row(0), demb.points.row(1));
    }

    #[test]
    fn signature_score_cases() {
        let ds = Dataset::new(
            DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            vec!["x".into(), "y".into(), "z".into()],
            None,
            None,
        )
        .unwrap();
        let all = signature_score(&ds, &["x".into(), "y".into(), "z".into()]).unwrap();
        assert_eq!(all, vec![6.0, 15.0]);
        let single = signature_score(&ds, &["y".into()]).unwrap();
        assert_eq!(single, vec![2.0, 5.0]);
        let two = signature_score(&ds, &["x".into(), "z".into()]).unwrap();
        assert_eq!(two, vec![4.0, 10.0]);
        assert!(matches!(
            signature_score(&ds, &["nope".into()]),
            Err(Error::UnknownFeature(_))
        ));
    }

    #[test]
    fn embedding_csv_roundtrip() {
        let emb = Embedding {
            points: DMatrix::from_row_slice(3, 2, &[0.25, -1.5, 2.0, 0.0, -0.75, 3.5]),
            labels: Some(vec!["a".into(), "b".into(), "a".into()]),
            groups: Some(vec!["g".into(), "g".into(), "h".into()]),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        write_embedding_csv(&path, &emb).unwrap();
        let back = load_embedding_csv(&path).unwrap();
        assert_eq!(back, emb);
    }
}
