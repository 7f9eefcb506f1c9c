//! Dataset ingestion, synthetic generators, splits, and the robustness
//! perturbations (label noise, class imbalance).
//!
//! Datasets are immutable after construction; every generator and
//! perturbation is a pure function of its inputs and a seed.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{mix, SplitMix64};

/// Per-column affine transform fitted on train statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardization {
    /// Fits mean / population std per column; zero-variance columns get
    /// scale 1 so they are centered but not blown up.
    pub fn fit(features: &Matrix) -> Self {
        let (n, d) = (features.rows(), features.cols());
        let mut means = vec![0.0; d];
        for row in features.iter_rows() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n as f64;
        }
        let mut scales = vec![0.0; d];
        for row in features.iter_rows() {
            for ((s, m), v) in scales.iter_mut().zip(&means).zip(row) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut scales {
            *s = (*s / n as f64).sqrt();
            if *s == 0.0 {
                *s = 1.0;
            }
        }
        Self { means, scales }
    }

    pub fn apply(&self, features: &Matrix) -> Matrix {
        let mut out = features.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.means[j]) / self.scales[j];
            }
        }
        out
    }
}

/// Feature matrix with integer labels and a provenance id that feeds the
/// cache hash.
#[derive(Debug, Clone)]
pub struct Dataset {
    id: String,
    features: Matrix,
    labels: Vec<usize>,
    class_count: usize,
    standardization: Option<Standardization>,
    /// Pre-noise labels, kept for audit when label noise was injected.
    original_labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        id: impl Into<String>,
        features: Matrix,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::InvalidInput("dataset must be non-empty".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows vs {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if !features.all_finite() {
            return Err(Error::InvalidInput("non-finite feature values".into()));
        }
        if class_count == 0 {
            return Err(Error::InvalidInput("class count must be positive".into()));
        }
        let mut present = vec![false; class_count];
        for &l in &labels {
            if l >= class_count {
                return Err(Error::InvalidInput(format!(
                    "label {l} out of range for {class_count} classes"
                )));
            }
            present[l] = true;
        }
        if present.iter().any(|p| !p) {
            return Err(Error::InvalidInput(
                "every class must be present at least once".into(),
            ));
        }
        Ok(Self {
            id: id.into(),
            features,
            labels,
            class_count,
            standardization: None,
            original_labels: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn original_labels(&self) -> Option<&[usize]> {
        self.original_labels.as_deref()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    fn subset(&self, idx: &[usize], id: String) -> Dataset {
        Dataset {
            id,
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            standardization: self.standardization.clone(),
            original_labels: self
                .original_labels
                .as_ref()
                .map(|orig| idx.iter().map(|&i| orig[i]).collect()),
        }
    }
}

/// Gaussian clusters at seeded random centers, balanced across classes.
pub fn synth_blobs(
    n: usize,
    classes: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || dim == 0 {
        return Err(Error::InvalidInput(
            "classes and dim must be positive".into(),
        ));
    }
    if n < classes {
        return Err(Error::InvalidInput(format!(
            "n = {n} must be at least the class count {classes}"
        )));
    }
    if spread < 0.0 || !spread.is_finite() {
        return Err(Error::InvalidInput(format!("bad spread {spread}")));
    }
    let mut rng = SplitMix64::new(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.range_f64(-3.0, 3.0)).collect())
        .collect();
    // Balanced counts: the first (n mod classes) classes get one extra.
    let base = n / classes;
    let extra = n % classes;
    let mut features = Matrix::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (c, center) in centers.iter().enumerate() {
        let count = base + usize::from(c < extra);
        for _ in 0..count {
            let out = features.row_mut(row);
            for (j, &cj) in center.iter().enumerate() {
                out[j] = cj + spread * rng.normal();
            }
            labels.push(c);
            row += 1;
        }
    }
    let id = format!("blobs:n{n}:c{classes}:d{dim}:s{spread:.3}:seed{seed}");
    Dataset::new(id, features, labels, classes)
}

fn stratified_indices(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for c in 0..dataset.class_count {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels[i] == c)
            .collect();
        if members.len() < 2 {
            return Err(Error::Stratification(format!(
                "class {c} has {} sample(s), need at least 2",
                members.len()
            )));
        }
        let mut rng = SplitMix64::new(mix(seed, c as u64));
        rng.shuffle(&mut members);
        let n_test = ((test_fraction * members.len() as f64).round() as usize)
            .clamp(1, members.len() - 1);
        test_idx.extend_from_slice(&members[..n_test]);
        train_idx.extend_from_slice(&members[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((train_idx, test_idx))
}

/// Stratified train/test split. Standardization is fitted on the train
/// side and applied to both.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train_idx, test_idx) = stratified_indices(dataset, test_fraction, seed)?;
    let mut train = dataset.subset(
        &train_idx,
        format!("{}:train:f{test_fraction:.3}:s{seed}", dataset.id),
    );
    let mut test = dataset.subset(
        &test_idx,
        format!("{}:test:f{test_fraction:.3}:s{seed}", dataset.id),
    );
    let std = Standardization::fit(&train.features);
    train.features = std.apply(&train.features);
    test.features = std.apply(&test.features);
    train.standardization = Some(std.clone());
    test.standardization = Some(std);
    Ok((train, test))
}

/// Stratified partition that keeps feature values exactly as they are;
/// used to carve a validation set out of an already standardized train
/// set without shifting its scaling.
pub fn partition(
    dataset: &Dataset,
    held_out_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let (keep_idx, held_idx) = stratified_indices(dataset, held_out_fraction, seed)?;
    let keep = dataset.subset(
        &keep_idx,
        format!("{}:fit:f{held_out_fraction:.3}:s{seed}", dataset.id),
    );
    let held = dataset.subset(
        &held_idx,
        format!("{}:val:f{held_out_fraction:.3}:s{seed}", dataset.id),
    );
    Ok((keep, held))
}

/// Flips exactly floor(rate * n) seeded-chosen labels, each to a uniformly
/// drawn *different* class. Features are untouched; original labels are
/// retained for audit.
pub fn inject_label_noise(dataset: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rate) || !rate.is_finite() {
        return Err(Error::InvalidRate(rate));
    }
    if dataset.class_count < 2 {
        return Err(Error::InvalidInput(
            "label noise needs at least 2 classes".into(),
        ));
    }
    let n_flip = (rate * dataset.len() as f64).floor() as usize;
    let mut out = dataset.clone();
    if n_flip == 0 {
        return Ok(out);
    }
    let mut rng = SplitMix64::new(seed);
    let chosen = rng.choose_distinct(dataset.len(), n_flip);
    out.original_labels = Some(dataset.labels.clone());
    for &i in &chosen {
        let offset = 1 + rng.below(dataset.class_count - 1);
        out.labels[i] = (dataset.labels[i] + offset) % dataset.class_count;
    }
    out.id = format!("{}:noise:r{rate:.3}:s{seed}", dataset.id);
    Ok(out)
}

/// Exponential long-tail subsampling: class c keeps
/// round(N_c * ratio^(-c / (C-1))) samples. Requires a balanced input;
/// ratio 1 is the identity.
pub fn apply_imbalance(dataset: &Dataset, ratio: f64, seed: u64) -> Result<Dataset> {
    if ratio < 1.0 || !ratio.is_finite() {
        return Err(Error::InvalidInput(format!(
            "imbalance ratio must be >= 1, got {ratio}"
        )));
    }
    if dataset.class_count < 2 {
        return Err(Error::InvalidInput(
            "imbalance needs at least 2 classes".into(),
        ));
    }
    let counts = dataset.class_counts();
    if counts.iter().any(|&c| c != counts[0]) {
        return Err(Error::InvalidInput(
            "imbalance requires a balanced input dataset".into(),
        ));
    }
    if ratio == 1.0 {
        return Ok(dataset.clone());
    }
    let c_max = (dataset.class_count - 1) as f64;
    let mut keep_idx = Vec::new();
    for c in 0..dataset.class_count {
        let keep = (counts[c] as f64 * ratio.powf(-(c as f64) / c_max)).round() as usize;
        if keep < 1 {
            return Err(Error::InfeasibleRatio { ratio, class: c });
        }
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels[i] == c)
            .collect();
        let mut rng = SplitMix64::new(mix(seed, c as u64));
        rng.shuffle(&mut members);
        keep_idx.extend_from_slice(&members[..keep]);
    }
    keep_idx.sort_unstable();
    let ratio_tag = if ratio.fract() == 0.0 {
        format!("{}", ratio as u64)
    } else {
        format!("{ratio:.3}")
    };
    Ok(dataset.subset(
        &keep_idx,
        format!("{}:imb:r{ratio_tag}:s{seed}", dataset.id),
    ))
}

/// Loads a delimited text file with a header row. Numeric columns are
/// standardized; non-numeric columns are one-hot encoded over their sorted
/// distinct values. Missing cells ("" or "?") are an error unless
/// `impute_median` is set, which uses the column median (numeric) or a
/// dedicated category (categorical).
pub fn load_delimited(
    path: impl AsRef<Path>,
    label_column: &str,
    delimiter: char,
    impute_median: bool,
) -> Result<Dataset> {
    let path = path.as_ref();
    let raw = std::fs::read(path).map_err(|e| Error::Storage {
        path: path.to_path_buf(),
        source: e,
    })?;
    let text = String::from_utf8_lossy(&raw);
    let digest = crate::cache::sha256_hex(&raw);
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into());
    let id = format!("{stem}:{}", &digest[..12]);

    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = match lines.next() {
        Some(h) => h.split(delimiter).map(|s| s.trim().to_string()).collect(),
        None => return Err(Error::Schema("empty file".into())),
    };
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Schema(format!("label column '{label_column}' not found")))?;

    let mut cells: Vec<Vec<String>> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let row: Vec<String> = line.split(delimiter).map(|s| s.trim().to_string()).collect();
        if row.len() != header.len() {
            return Err(Error::Schema(format!(
                "row {} has {} fields, header has {}",
                lineno + 2,
                row.len(),
                header.len()
            )));
        }
        cells.push(row);
    }
    if cells.is_empty() {
        return Err(Error::Schema("no data rows".into()));
    }

    let is_missing = |s: &str| s.is_empty() || s == "?";

    // Label mapping: sorted distinct values -> 0..C.
    let mut label_values: Vec<String> = cells.iter().map(|r| r[label_idx].clone()).collect();
    if label_values.iter().any(|v| is_missing(v)) {
        return Err(Error::Schema("missing value in label column".into()));
    }
    label_values.sort();
    label_values.dedup();
    let label_map: BTreeMap<&str, usize> = label_values
        .iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), i))
        .collect();
    let labels: Vec<usize> = cells.iter().map(|r| label_map[r[label_idx].as_str()]).collect();

    // Column typing: numeric iff every non-missing cell parses as f64.
    let mut columns: Vec<ColumnPlan> = Vec::new();
    for (j, name) in header.iter().enumerate() {
        if j == label_idx {
            continue;
        }
        let mut numeric = true;
        let mut has_missing = false;
        for r in &cells {
            let v = r[j].as_str();
            if is_missing(v) {
                has_missing = true;
            } else if v.parse::<f64>().is_err() {
                numeric = false;
            }
        }
        if has_missing && !impute_median {
            return Err(Error::Schema(format!(
                "column '{name}' has missing values; enable imputation or clean the data"
            )));
        }
        if numeric {
            let mut vals: Vec<f64> = cells
                .iter()
                .filter(|r| !is_missing(&r[j]))
                .map(|r| r[j].parse::<f64>().unwrap())
                .collect();
            if vals.is_empty() {
                return Err(Error::Schema(format!("column '{name}' is entirely missing")));
            }
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = vals[vals.len() / 2];
            columns.push(ColumnPlan::Numeric { index: j, median });
        } else {
            let mut cats: Vec<String> = cells
                .iter()
                .map(|r| {
                    if is_missing(&r[j]) {
                        "<missing>".to_string()
                    } else {
                        r[j].clone()
                    }
                })
                .collect();
            cats.sort();
            cats.dedup();
            columns.push(ColumnPlan::Categorical {
                index: j,
                values: cats,
            });
        }
    }

    let width: usize = columns
        .iter()
        .map(|c| match c {
            ColumnPlan::Numeric { .. } => 1,
            ColumnPlan::Categorical { values, .. } => values.len(),
        })
        .sum();
    let mut features = Matrix::zeros(cells.len(), width);
    for (i, r) in cells.iter().enumerate() {
        let out = features.row_mut(i);
        let mut k = 0;
        for col in &columns {
            match col {
                ColumnPlan::Numeric { index, median } => {
                    let v = r[*index].as_str();
                    out[k] = if is_missing(v) {
                        *median
                    } else {
                        v.parse::<f64>().unwrap()
                    };
                    k += 1;
                }
                ColumnPlan::Categorical { index, values } => {
                    let v = r[*index].as_str();
                    let v = if is_missing(v) { "<missing>" } else { v };
                    let pos = values.iter().position(|c| c == v).unwrap();
                    out[k + pos] = 1.0;
                    k += values.len();
                }
            }
        }
    }

    let std = Standardization::fit(&features);
    let features = std.apply(&features);
    let mut ds = Dataset::new(id, features, labels, label_values.len())?;
    ds.standardization = Some(std);
    Ok(ds)
}

enum ColumnPlan {
    Numeric { index: usize, median: f64 },
    Categorical { index: usize, values: Vec<String> },
}
