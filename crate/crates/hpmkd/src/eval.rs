//! Evaluation metrics: accuracy, retention, compression ratio, efficiency,
//! silhouette score, and embedding export.

use std::io::Write;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Model;
use crate::rng::SplitMix64;

/// Headline metrics for one trained student.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub accuracy: f64,
    pub retention_pct: f64,
    pub compression_ratio: f64,
    pub train_time_s: f64,
    pub efficiency_acc_per_min: f64,
}

/// Fraction of argmax-correct predictions; argmax ties break to the lowest
/// class index.
pub fn accuracy(model: &Model, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let logits = model.forward(dataset.features())?;
    let mut correct = 0usize;
    for (row, &label) in logits.iter_rows().zip(dataset.labels()) {
        if argmax(row) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Student accuracy as a percentage of teacher accuracy.
pub fn retention(acc_student: f64, acc_teacher: f64) -> Result<f64> {
    if acc_teacher == 0.0 {
        return Err(Error::UndefinedRetention);
    }
    Ok(acc_student / acc_teacher * 100.0)
}

/// Teacher parameter count over student parameter count.
pub fn compression_ratio(teacher_params: u64, student_params: u64) -> f64 {
    debug_assert!(student_params >= 1);
    teacher_params as f64 / student_params as f64
}

/// Accuracy points per minute of training.
pub fn efficiency(accuracy_pct: f64, wall_seconds: f64) -> Result<f64> {
    if !(wall_seconds > 0.0) {
        return Err(Error::InvalidInput(format!(
            "wall time must be positive, got {wall_seconds}"
        )));
    }
    Ok(accuracy_pct / (wall_seconds / 60.0))
}

/// Maximum sample count before silhouette subsamples (seeded).
pub const SILHOUETTE_CAP: usize = 2000;

/// Mean silhouette score with Euclidean distance. Samples in singleton
/// clusters score 0. Inputs larger than [`SILHOUETTE_CAP`] are subsampled
/// with the given seed.
pub fn silhouette(embeddings: &Matrix, labels: &[usize], seed: u64) -> Result<f64> {
    if embeddings.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} embedding rows vs {} labels",
            embeddings.rows(),
            labels.len()
        )));
    }
    if embeddings.rows() == 0 {
        return Err(Error::InvalidInput("no samples".into()));
    }
    let (emb, labs): (Matrix, Vec<usize>) = if embeddings.rows() > SILHOUETTE_CAP {
        let mut rng = SplitMix64::new(seed);
        let mut idx = rng.choose_distinct(embeddings.rows(), SILHOUETTE_CAP);
        idx.sort_unstable();
        (
            embeddings.select_rows(&idx),
            idx.iter().map(|&i| labels[i]).collect(),
        )
    } else {
        (embeddings.clone(), labels.to_vec())
    };

    let n = emb.rows();
    let n_clusters = labs.iter().copied().max().unwrap() + 1;
    let mut sizes = vec![0usize; n_clusters];
    for &l in &labs {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::UndefinedSilhouette);
    }

    // dist_sums[i][c] = sum of distances from sample i to cluster c.
    let mut dist_sums = vec![vec![0.0f64; n_clusters]; n];
    for i in 0..n {
        let xi = emb.row(i);
        for j in (i + 1)..n {
            let d = euclidean(xi, emb.row(j));
            dist_sums[i][labs[j]] += d;
            dist_sums[j][labs[i]] += d;
        }
    }

    let mut total = 0.0;
    for i in 0..n {
        let own = labs[i];
        if sizes[own] == 1 {
            continue; // singleton convention: score 0
        }
        let a = dist_sums[i][own] / (sizes[own] - 1) as f64;
        let mut b = f64::INFINITY;
        for c in 0..n_clusters {
            if c != own && sizes[c] > 0 {
                b = b.min(dist_sums[i][c] / sizes[c] as f64);
            }
        }
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Writes embeddings as a flat binary file: count and dim as 64-bit LE,
/// then row-major 64-bit LE values. Labels go to a sidecar file with the
/// same count header.
pub fn export_embeddings(
    path: impl AsRef<Path>,
    embeddings: &Matrix,
    labels: &[usize],
) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(16 + embeddings.data().len() * 8);
    buf.extend_from_slice(&(embeddings.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(embeddings.cols() as u64).to_le_bytes());
    for v in embeddings.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &buf)?;

    let labels_path = path.with_extension("labels");
    let mut lbuf = Vec::with_capacity(8 + labels.len() * 8);
    lbuf.extend_from_slice(&(labels.len() as u64).to_le_bytes());
    for &l in labels {
        lbuf.extend_from_slice(&(l as u64).to_le_bytes());
    }
    write_atomic(&labels_path, &lbuf)
}

/// Reads back an embedding export (used by tests and external tooling).
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<(Matrix, Vec<usize>)> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::Storage {
        path: path.to_path_buf(),
        source: e,
    })?;
    if buf.len() < 16 {
        return Err(Error::InvalidInput("truncated embedding file".into()));
    }
    let rows = u64::from_le_bytes(buf[0..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    if buf.len() != 16 + rows * cols * 8 {
        return Err(Error::InvalidInput("embedding file length mismatch".into()));
    }
    let data: Vec<f64> = buf[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let lbuf = std::fs::read(path.with_extension("labels")).map_err(|e| Error::Storage {
        path: path.with_extension("labels"),
        source: e,
    })?;
    let count = u64::from_le_bytes(lbuf[0..8].try_into().unwrap()) as usize;
    if count != rows || lbuf.len() != 8 + count * 8 {
        return Err(Error::InvalidInput("label sidecar mismatch".into()));
    }
    let labels: Vec<usize> = lbuf[8..]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    Ok((Matrix::from_vec(rows, cols, data), labels))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let io = |e: std::io::Error| Error::Storage {
        path: path.to_path_buf(),
        source: e,
    };
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)?;
    Ok(())
}
