//! Datasets: file ingestion, normalization, synthetic benchmark manifolds,
//! and train/hold-out splits.

mod synthetic;

pub use synthetic::{gen_synthetic, SyntheticKind};

use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `n x N` sample matrix with optional per-sample labels and groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub matrix: DMatrix<f64>,
    pub feature_names: Vec<String>,
    pub labels: Option<Vec<String>>,
    pub groups: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        matrix: DMatrix<f64>,
        feature_names: Vec<String>,
        labels: Option<Vec<String>>,
        groups: Option<Vec<String>>,
    ) -> Result<Dataset> {
        if feature_names.len() != matrix.ncols() {
            return Err(Error::shape(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                matrix.ncols()
            )));
        }
        let n = matrix.nrows();
        if labels.as_ref().is_some_and(|l| l.len() != n) {
            return Err(Error::shape("label length does not match sample count"));
        }
        if groups.as_ref().is_some_and(|g| g.len() != n) {
            return Err(Error::shape("group length does not match sample count"));
        }
        Ok(Dataset {
            matrix,
            feature_names,
            labels,
            groups,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.matrix.ncols()
    }

    /// Sub-dataset with the given rows, in the order given.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let matrix = DMatrix::from_fn(rows.len(), self.num_features(), |i, j| {
            self.matrix[(rows[i], j)]
        });
        let pick = |v: &Option<Vec<String>>| {
            v.as_ref()
                .map(|vals| rows.iter().map(|&r| vals[r].clone()).collect())
        };
        Dataset {
            matrix,
            feature_names: self.feature_names.clone(),
            labels: pick(&self.labels),
            groups: pick(&self.groups),
        }
    }

    /// Distinct group tags in first-appearance order.
    pub fn distinct_groups(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        if let Some(groups) = &self.groups {
            for g in groups {
                if seen.insert(g.clone()) {
                    out.push(g.clone());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Csv,
    Tsv,
}

/// Loads a rectangular numeric matrix, optionally routing named columns to
/// labels/groups. Column designation requires a header.
pub fn load_matrix(
    path: impl AsRef<Path>,
    format: FileFormat,
    has_header: bool,
    label_column: Option<&str>,
    group_column: Option<&str>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    };
    if !has_header && (label_column.is_some() || group_column.is_some()) {
        return Err(Error::domain(
            "label/group column selection requires a header",
        ));
    }
    let delimiter = match format {
        FileFormat::Csv => b',',
        FileFormat::Tsv => b'\t',
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .delimiter(delimiter)
        .flexible(true)
        .from_path(path)
        .map_err(|e| parse_err(0, e.to_string()))?;

    let header: Vec<String> = if has_header {
        reader
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .iter()
            .map(|s| s.trim().to_string())
            .collect()
    } else {
        Vec::new()
    };

    let find_col = |name: Option<&str>| -> Result<Option<usize>> {
        match name {
            None => Ok(None),
            Some(n) => header
                .iter()
                .position(|h| h == n)
                .map(Some)
                .ok_or_else(|| parse_err(1, format!("column '{n}' not found in header"))),
        }
    };
    let label_idx = find_col(label_column)?;
    let group_idx = find_col(group_column)?;

    let mut width: Option<usize> = if has_header { Some(header.len()) } else { None };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut groups: Vec<String> = Vec::new();

    for (i, record) in reader.records().enumerate() {
        let line = i + 1 + usize::from(has_header);
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        match width {
            None => width = Some(record.len()),
            Some(w) if record.len() != w => {
                return Err(parse_err(
                    line,
                    format!("ragged row: {} fields, expected {}", record.len(), w),
                ));
            }
            _ => {}
        }
        let mut row = Vec::with_capacity(record.len());
        for (col, field) in record.iter().enumerate() {
            if Some(col) == label_idx {
                labels.push(field.trim().to_string());
            } else if Some(col) == group_idx {
                groups.push(field.trim().to_string());
            } else {
                let value: f64 = field.trim().parse().map_err(|_| {
                    parse_err(line, format!("non-numeric value '{field}' in column {col}"))
                })?;
                row.push(value);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(0, "no data rows".into()));
    }

    let n_features = rows[0].len();
    let matrix = DMatrix::from_fn(rows.len(), n_features, |i, j| rows[i][j]);
    let feature_names: Vec<String> = if has_header {
        header
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != label_idx && Some(*i) != group_idx)
            .map(|(_, name)| name.clone())
            .collect()
    } else {
        (0..n_features).map(|i| format!("f{i}")).collect()
    };

    Dataset::new(
        matrix,
        feature_names,
        label_idx.map(|_| labels),
        group_idx.map(|_| groups),
    )
}

/// Writes a dataset as CSV with feature names in the header; label and
/// group columns (when present) are appended under those exact names.
pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path.as_ref()).map_err(crate::geometry::csv_io)?;
    let mut header = dataset.feature_names.clone();
    if dataset.labels.is_some() {
        header.push("label".into());
    }
    if dataset.groups.is_some() {
        header.push("group".into());
    }
    wtr.write_record(&header).map_err(crate::geometry::csv_io)?;
    for i in 0..dataset.num_samples() {
        let mut rec: Vec<String> = (0..dataset.num_features())
            .map(|j| dataset.matrix[(i, j)].to_string())
            .collect();
        if let Some(labels) = &dataset.labels {
            rec.push(labels[i].clone());
        }
        if let Some(groups) = &dataset.groups {
            rec.push(groups[i].clone());
        }
        wtr.write_record(&rec).map_err(crate::geometry::csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScheme {
    Log1pStandardize,
    Standardize,
    None,
}

impl std::str::FromStr for NormScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<NormScheme> {
        match s {
            "log1p_standardize" => Ok(NormScheme::Log1pStandardize),
            "standardize" => Ok(NormScheme::Standardize),
            "none" => Ok(NormScheme::None),
            other => Err(Error::Config(format!("unknown normalization '{other}'"))),
        }
    }
}

/// Frozen per-feature transformation, persisted so new data can be
/// re-embedded with the training statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormRecord {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    pub scheme: NormScheme,
}

impl NormRecord {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<NormRecord> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Fits the scheme on `dataset` and returns the transformed data plus the
/// record needed to apply (or invert) the same transform later.
///
/// Standardization uses the population (1/n) variance convention; constant
/// features get scale 1 so they map to exactly zero.
pub fn normalize(dataset: &Dataset, scheme: NormScheme) -> Result<(Dataset, NormRecord)> {
    let working = pre_transform(&dataset.matrix, scheme)?;
    let n = working.nrows() as f64;
    let dim = working.ncols();
    let (mut shift, mut scale) = (vec![0.0; dim], vec![1.0; dim]);
    if scheme != NormScheme::None {
        for j in 0..dim {
            let col = working.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            shift[j] = mean;
            scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
    }
    let record = NormRecord {
        shift,
        scale,
        scheme,
    };
    let transformed = apply_record(&working, &record);
    let out = Dataset {
        matrix: transformed,
        feature_names: dataset.feature_names.clone(),
        labels: dataset.labels.clone(),
        groups: dataset.groups.clone(),
    };
    if out.matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("normalization produced non-finite values"));
    }
    Ok((out, record))
}

fn pre_transform(matrix: &DMatrix<f64>, scheme: NormScheme) -> Result<DMatrix<f64>> {
    match scheme {
        NormScheme::Log1pStandardize => {
            if let Some(v) = matrix.iter().find(|v| **v < 0.0) {
                return Err(Error::domain(format!(
                    "log1p normalization requires nonnegative values, found {v}"
                )));
            }
            Ok(matrix.map(f64::ln_1p))
        }
        _ => Ok(matrix.clone()),
    }
}

fn apply_record(working: &DMatrix<f64>, record: &NormRecord) -> DMatrix<f64> {
    DMatrix::from_fn(working.nrows(), working.ncols(), |i, j| {
        (working[(i, j)] - record.shift[j]) / record.scale[j]
    })
}

/// Applies a frozen normalization record to new data.
pub fn apply_normalization(dataset: &Dataset, record: &NormRecord) -> Result<Dataset> {
    if dataset.num_features() != record.shift.len() {
        return Err(Error::shape(format!(
            "dataset has {} features, record has {}",
            dataset.num_features(),
            record.shift.len()
        )));
    }
    let working = pre_transform(&dataset.matrix, record.scheme)?;
    Ok(Dataset {
        matrix: apply_record(&working, record),
        feature_names: dataset.feature_names.clone(),
        labels: dataset.labels.clone(),
        groups: dataset.groups.clone(),
    })
}

/// Inverts a normalization record on transformed values, recovering the
/// original units.
pub fn invert_normalization(matrix: &DMatrix<f64>, record: &NormRecord) -> DMatrix<f64> {
    let unscaled = DMatrix::from_fn(matrix.nrows(), matrix.ncols(), |i, j| {
        matrix[(i, j)] * record.scale[j] + record.shift[j]
    });
    match record.scheme {
        NormScheme::Log1pStandardize => unscaled.map(f64::exp_m1),
        _ => unscaled,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    RandomFraction { fraction: f64, seed: u64 },
    HoldoutGroups { groups: Vec<String> },
}

/// Partitions a dataset into `(train, held_out)`. Rows keep their original
/// relative order inside each part.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let n = dataset.num_samples();
    let held_mask: Vec<bool> = match spec {
        SplitSpec::RandomFraction { fraction, seed } => {
            if !(*fraction > 0.0 && *fraction < 1.0) {
                return Err(Error::domain(format!(
                    "split fraction must be in (0,1), got {fraction}"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            order.shuffle(&mut rng);
            let train_count = ((n as f64) * (1.0 - fraction)).round() as usize;
            let mut mask = vec![true; n];
            for &idx in order.iter().take(train_count) {
                mask[idx] = false;
            }
            mask
        }
        SplitSpec::HoldoutGroups { groups } => {
            let tags = dataset
                .groups
                .as_ref()
                .ok_or_else(|| Error::domain("holdout_groups split needs group tags"))?;
            let available: HashSet<&String> = tags.iter().collect();
            for g in groups {
                if !available.contains(g) {
                    return Err(Error::domain(format!("holdout group '{g}' not in dataset")));
                }
            }
            let held: HashSet<&String> = groups.iter().collect();
            tags.iter().map(|g| held.contains(g)).collect()
        }
    };
    let train_rows: Vec<usize> = (0..n).filter(|&i| !held_mask[i]).collect();
    let held_rows: Vec<usize> = (0..n).filter(|&i| held_mask[i]).collect();
    if train_rows.is_empty() {
        return Err(Error::DegenerateSplit("train side is empty".into()));
    }
    Ok((dataset.select_rows(&train_rows), dataset.select_rows(&held_rows)))
}
