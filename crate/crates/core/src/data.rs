//! Dataset ingestion, standardization, splitting, and synthetic generation.
//!
//! Everything here is immutable after construction and deterministic per seed,
//! so the rest of the pipeline can treat datasets as pure values.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labelled tabular dataset: N rows, M features, C classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let (n, m) = features.dim();
        if n == 0 || m == 0 {
            return Err(Error::InvalidParam("dataset must be non-empty".into()));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: labels.len(),
            });
        }
        if feature_names.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: feature_names.len(),
            });
        }
        let c = class_names.len();
        if c < 2 {
            return Err(Error::TooFewClasses(c));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidParam(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            feature_names,
            class_names,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// One row as a slice; rows are stored contiguously.
    pub fn row(&self, i: usize) -> &[f64] {
        self.features
            .row(i)
            .to_slice()
            .expect("row-major dataset layout")
    }

    /// New dataset keeping only the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let features = to_standard(self.features.select(Axis(0), rows));
        let labels = rows.iter().map(|&i| self.labels[i]).collect();
        Dataset {
            features,
            labels,
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// New dataset keeping only the given feature columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Dataset {
        let features = to_standard(self.features.select(Axis(1), cols));
        let feature_names = cols.iter().map(|&j| self.feature_names[j].clone()).collect();
        Dataset {
            features,
            labels: self.labels.clone(),
            feature_names,
            class_names: self.class_names.clone(),
        }
    }
}

// Rows must stay contiguous for slice-based access.
fn to_standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        Array2::from_shape_vec(a.dim(), a.iter().cloned().collect()).expect("same shape")
    }
}

/// A train/test partition of one parent dataset.
#[derive(Debug, Clone)]
pub struct SplitPair {
    pub train: Dataset,
    pub test: Dataset,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
    pub train_fraction: f64,
}

/// Per-feature centering/scaling parameters, computed on the train split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
}

impl StandardizationParams {
    /// Apply to one row in place. Zero-stddev features pass through unscaled.
    pub fn transform_row(&self, row: &mut [f64]) {
        for (j, v) in row.iter_mut().enumerate() {
            if self.stddevs[j] > 0.0 {
                *v = (*v - self.means[j]) / self.stddevs[j];
            }
        }
    }

    /// Inverse of [`transform_row`](Self::transform_row).
    pub fn inverse_row(&self, row: &mut [f64]) {
        for (j, v) in row.iter_mut().enumerate() {
            if self.stddevs[j] > 0.0 {
                *v = *v * self.stddevs[j] + self.means[j];
            }
        }
    }
}

/// Load a CSV file into a [`Dataset`].
///
/// All non-label cells must parse as numbers. Labels are mapped to contiguous
/// class indices in first-appearance order. Without a header, columns are
/// named `f0..f{M-1}` and `label_column` may be such a name or a plain index.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str, has_header: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::InvalidParam("csv file has no data rows".into()));
    }
    let width = records[0].len();

    let column_names: Vec<String> = if has_header {
        reader
            .headers()
            .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?
            .iter()
            .map(str::to_string)
            .collect()
    } else {
        (0..width).map(|j| format!("f{j}")).collect()
    };

    let label_idx = column_names
        .iter()
        .position(|c| c == label_column)
        .or_else(|| label_column.parse::<usize>().ok().filter(|&j| j < width))
        .ok_or_else(|| Error::LabelColumnMissing(label_column.to_string()))?;

    let feature_names: Vec<String> = column_names
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != label_idx)
        .map(|(_, c)| c.clone())
        .collect();

    let n = records.len();
    let m = width - 1;
    let mut features = Array2::zeros((n, m));
    let mut labels = Vec::with_capacity(n);
    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();

    for (i, rec) in records.iter().enumerate() {
        if rec.len() != width {
            return Err(Error::InvalidParam(format!(
                "row {} has {} cells, expected {width}",
                i + 1,
                rec.len()
            )));
        }
        let mut col = 0;
        for (j, cell) in rec.iter().enumerate() {
            if j == label_idx {
                let next = class_names.len();
                let idx = *class_index.entry(cell.to_string()).or_insert_with(|| {
                    class_names.push(cell.to_string());
                    next
                });
                labels.push(idx);
            } else {
                let value: f64 = cell.parse().map_err(|_| Error::CsvCell {
                    row: i + 1,
                    column: column_names[j].clone(),
                    value: cell.to_string(),
                })?;
                features[[i, col]] = value;
                col += 1;
            }
        }
    }

    if class_names.len() < 2 {
        return Err(Error::TooFewClasses(class_names.len()));
    }
    Dataset::new(features, labels, feature_names, class_names)
}

/// Standardize train columns to mean 0 / stddev 1 (population stddev) and
/// transform the test split with the train parameters. Constant columns pass
/// through unscaled.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, StandardizationParams)> {
    if train.feature_names != test.feature_names {
        return Err(Error::InvalidParam(
            "train and test feature names differ".into(),
        ));
    }
    let n = train.n_rows() as f64;
    let m = train.n_features();
    let mut means = vec![0.0; m];
    let mut stddevs = vec![0.0; m];
    for j in 0..m {
        let col = train.features.column(j);
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        means[j] = mean;
        stddevs[j] = var.sqrt();
    }
    let params = StandardizationParams { means, stddevs };

    let apply = |d: &Dataset| {
        let mut features = d.features.clone();
        for mut row in features.rows_mut() {
            params.transform_row(row.as_slice_mut().expect("row-major layout"));
        }
        Dataset {
            features,
            labels: d.labels.clone(),
            feature_names: d.feature_names.clone(),
            class_names: d.class_names.clone(),
        }
    };
    Ok((apply(train), apply(test), params))
}

/// Gaussian-blob synthetic data with a known informative feature set.
///
/// Labels depend only on the `m_informative` chosen columns: each class gets a
/// distinct mean per informative column (adjacent means 2.5 apart, permuted
/// per column), and the remaining columns are independent standard noise.
/// Returns the dataset and the informative column indices (ascending).
pub fn make_synthetic(
    n: usize,
    m_total: usize,
    m_informative: usize,
    c: usize,
    seed: u64,
) -> Result<(Dataset, Vec<usize>)> {
    if n == 0 || m_total == 0 {
        return Err(Error::InvalidParam("n and m_total must be positive".into()));
    }
    if m_informative > m_total {
        return Err(Error::InvalidParam(format!(
            "m_informative {m_informative} exceeds m_total {m_total}"
        )));
    }
    if m_informative == 0 {
        return Err(Error::InvalidParam("need at least one informative feature".into()));
    }
    if c < 2 {
        return Err(Error::TooFewClasses(c));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Which columns carry signal.
    let mut all: Vec<usize> = (0..m_total).collect();
    all.shuffle(&mut rng);
    let mut informative: Vec<usize> = all[..m_informative].to_vec();
    informative.sort_unstable();

    // Per informative column, a permutation of the class-mean grid 0, 2.5, 5, ...
    let mut class_means = vec![vec![0.0; c]; m_informative];
    for col_means in class_means.iter_mut() {
        let mut grid: Vec<f64> = (0..c).map(|k| 2.5 * k as f64).collect();
        grid.shuffle(&mut rng);
        col_means.copy_from_slice(&grid);
    }

    // Near-balanced labels, shuffled.
    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    labels.shuffle(&mut rng);

    let mut features = Array2::zeros((n, m_total));
    let informative_pos: HashMap<usize, usize> = informative
        .iter()
        .enumerate()
        .map(|(pos, &col)| (col, pos))
        .collect();
    for i in 0..n {
        for j in 0..m_total {
            let noise = gaussian(&mut rng);
            features[[i, j]] = match informative_pos.get(&j) {
                Some(&pos) => class_means[pos][labels[i]] + noise,
                None => noise,
            };
        }
    }

    let feature_names = (0..m_total).map(|j| format!("f{j}")).collect();
    let class_names = (0..c).map(|k| format!("class_{k}")).collect();
    let dataset = Dataset::new(features, labels, feature_names, class_names)?;
    Ok((dataset, informative))
}

/// Standard normal sample via Box-Muller; avoids a distribution dependency
/// and keeps the byte stream stable across platforms.
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

/// Deterministic stratified train/test split.
///
/// Classes with at least two members are split proportionally; singleton
/// classes go to the train side.
pub fn train_test_split(d: &Dataset, fraction: f64, seed: u64) -> Result<SplitPair> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParam(format!(
            "train fraction {fraction} must lie in (0, 1)"
        )));
    }
    let n = d.n_rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.n_classes()];
    for (i, &l) in d.labels.iter().enumerate() {
        by_class[l].push(i);
    }

    let mut train_indices = Vec::new();
    let mut test_indices = Vec::new();
    for mut members in by_class {
        members.shuffle(&mut rng);
        if members.len() < 2 {
            train_indices.extend(members);
            continue;
        }
        // Round to the nearest row so a 80/20 request on balanced data stays
        // within one row of the exact ratio per class.
        let mut n_train = (members.len() as f64 * fraction).round() as usize;
        n_train = n_train.clamp(1, members.len() - 1);
        train_indices.extend_from_slice(&members[..n_train]);
        test_indices.extend_from_slice(&members[n_train..]);
    }
    train_indices.sort_unstable();
    test_indices.sort_unstable();

    if train_indices.is_empty() || test_indices.is_empty() {
        return Err(Error::InvalidParam(format!(
            "split of {n} rows at fraction {fraction} leaves an empty side"
        )));
    }

    Ok(SplitPair {
        train: d.select_rows(&train_indices),
        test: d.select_rows(&test_indices),
        train_indices,
        test_indices,
        seed,
        train_fraction: fraction,
    })
}

/// JSON manifest accompanying a raw little-endian f64 matrix file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_rows: usize,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub labels: Vec<usize>,
    pub matrix_file: String,
}

/// Write `dataset` as a JSON manifest plus a raw little-endian f64 blob.
pub fn save_dataset(dataset: &Dataset, manifest_path: &Path, matrix_path: &Path) -> Result<()> {
    let manifest = DatasetManifest {
        n_rows: dataset.n_rows(),
        n_features: dataset.n_features(),
        feature_names: dataset.feature_names.clone(),
        class_names: dataset.class_names.clone(),
        labels: dataset.labels.clone(),
        matrix_file: matrix_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(manifest_path, json)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    write_f64_blob(matrix_path, dataset.features.as_slice().expect("row-major layout"))
}

/// Load a dataset written by [`save_dataset`]. The matrix file is resolved
/// relative to the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let json = std::fs::read_to_string(manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: DatasetManifest = serde_json::from_str(&json)?;
    let matrix_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.matrix_file);
    let values = read_f64_blob(&matrix_path)?;
    if values.len() != manifest.n_rows * manifest.n_features {
        return Err(Error::MalformedArtifact {
            path: matrix_path.display().to_string(),
            reason: format!(
                "expected {} values, found {}",
                manifest.n_rows * manifest.n_features,
                values.len()
            ),
        });
    }
    let features = Array2::from_shape_vec((manifest.n_rows, manifest.n_features), values)
        .expect("shape checked above");
    Dataset::new(
        features,
        manifest.labels,
        manifest.feature_names,
        manifest.class_names,
    )
}

/// Write a slice of f64 as raw little-endian bytes.
pub fn write_f64_blob(path: &Path, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&buf)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a raw little-endian f64 blob.
pub fn read_f64_blob(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::MalformedArtifact {
            path: path.display().to_string(),
            reason: "length not a multiple of 8".into(),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
