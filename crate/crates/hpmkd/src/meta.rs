//! Adaptive configuration manager: meta-feature extraction, a persistent
//! run-history store, the forest meta-model, and grid-argmax config
//! prediction with cold-start defaults.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::Dataset;
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::forest::{ForestParams, RegressionForest};
use crate::matrix::Matrix;
use crate::nn::arch_param_count;

/// Summary statistics of a dataset / teacher / student triple.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaFeatures {
    pub n_samples: u64,
    pub n_classes: u64,
    pub dim: u64,
    pub teacher_params: u64,
    pub student_params: u64,
    pub compression_ratio: f64,
}

impl MetaFeatures {
    pub fn extract(dataset: &Dataset, teacher_arch: &[usize], student_arch: &[usize]) -> Self {
        let teacher_params = arch_param_count(teacher_arch);
        let student_params = arch_param_count(student_arch);
        Self {
            n_samples: dataset.len() as u64,
            n_classes: dataset.class_count() as u64,
            dim: dataset.dim() as u64,
            teacher_params,
            student_params,
            compression_ratio: teacher_params as f64 / student_params as f64,
        }
    }
}

/// One completed run: what was configured and what accuracy came out.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub meta: MetaFeatures,
    pub config: DistillConfig,
    pub accuracy: f64,
}

impl HistoryEntry {
    /// Canonical line form: fixed field order, reals at 17 significant
    /// digits. This is the on-disk record and the dedup identity.
    pub fn canonical_line(&self) -> String {
        format!(
            "n_samples={} n_classes={} dim={} teacher_params={} student_params={} cr={:.16e} t0={:.16e} alpha={:.16e} lr={:.16e} epochs={} accuracy={:.16e}",
            self.meta.n_samples,
            self.meta.n_classes,
            self.meta.dim,
            self.meta.teacher_params,
            self.meta.student_params,
            self.meta.compression_ratio,
            self.config.t0,
            self.config.alpha,
            self.config.lr,
            self.config.epochs,
            self.accuracy,
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for part in line.split_whitespace() {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Schema(format!("bad history field '{part}'")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| -> Result<&str> {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Schema(format!("history line missing '{k}'")))
        };
        let int = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Schema(format!("bad integer for '{k}'")))
        };
        let real = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Schema(format!("bad real for '{k}'")))
        };
        Ok(Self {
            meta: MetaFeatures {
                n_samples: int("n_samples")?,
                n_classes: int("n_classes")?,
                dim: int("dim")?,
                teacher_params: int("teacher_params")?,
                student_params: int("student_params")?,
                compression_ratio: real("cr")?,
            },
            config: DistillConfig {
                t0: real("t0")?,
                alpha: real("alpha")?,
                lr: real("lr")?,
                epochs: int("epochs")? as usize,
            },
            accuracy: real("accuracy")?,
        })
    }
}

/// Line-delimited history file with content-hash deduplication.
#[derive(Debug)]
pub struct HistoryStore {
    path: PathBuf,
    entries: Vec<HistoryEntry>,
    digests: BTreeSet<String>,
}

impl HistoryStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = Vec::new();
        let mut digests = BTreeSet::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::Storage {
                path: path.clone(),
                source: e,
            })?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let entry = HistoryEntry::parse_line(line)?;
                digests.insert(crate::cache::sha256_hex(entry.canonical_line().as_bytes()));
                entries.push(entry);
            }
        }
        Ok(Self {
            path,
            entries,
            digests,
        })
    }

    /// Appends and persists; identical entries deduplicate. Returns whether
    /// the entry was new.
    pub fn record(&mut self, entry: HistoryEntry) -> Result<bool> {
        let line = entry.canonical_line();
        let digest = crate::cache::sha256_hex(line.as_bytes());
        if self.digests.contains(&digest) {
            return Ok(false);
        }
        if let Some(parent) = self.path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::Storage {
                    path: self.path.clone(),
                    source: e,
                })?;
            }
        }
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::Storage {
                path: self.path.clone(),
                source: e,
            })?;
        writeln!(f, "{line}").map_err(|e| Error::Storage {
            path: self.path.clone(),
            source: e,
        })?;
        self.digests.insert(digest);
        self.entries.push(entry);
        Ok(true)
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Runs needed before the manager trusts its predictions.
pub const WARM_START_THRESHOLD: usize = 5;

/// Forest over [meta features, config] -> accuracy. Counts are log10
/// transformed since they span orders of magnitude.
#[derive(Debug)]
pub struct MetaModel {
    forest: RegressionForest,
}

fn feature_row(meta: &MetaFeatures, config: &DistillConfig) -> Vec<f64> {
    vec![
        (meta.n_samples as f64).log10(),
        (meta.n_classes as f64).log10(),
        (meta.dim as f64).log10(),
        (meta.teacher_params as f64).log10(),
        (meta.student_params as f64).log10(),
        meta.compression_ratio.log10(),
        config.t0,
        config.alpha,
        config.lr,
        config.epochs as f64,
    ]
}

/// Fits the 100-tree meta-model on run history.
pub fn fit_meta_model(history: &[HistoryEntry], seed: u64) -> Result<MetaModel> {
    if history.is_empty() {
        return Err(Error::InsufficientHistory);
    }
    let rows: Vec<Vec<f64>> = history
        .iter()
        .map(|e| feature_row(&e.meta, &e.config))
        .collect();
    let targets: Vec<f64> = history.iter().map(|e| e.accuracy).collect();
    let forest = RegressionForest::fit(
        &Matrix::from_rows(&rows)?,
        &targets,
        &ForestParams {
            seed,
            ..Default::default()
        },
    )?;
    Ok(MetaModel { forest })
}

impl MetaModel {
    pub fn predict(&self, meta: &MetaFeatures, config: &DistillConfig) -> f64 {
        self.forest.predict(&feature_row(meta, config))
    }

    pub fn target_bounds(&self) -> (f64, f64) {
        (self.forest.target_min, self.forest.target_max)
    }
}

/// Grid member with the highest predicted accuracy; ties break
/// lexicographically ascending on (t0, alpha, lr, epochs).
pub fn predict_config(
    model: &MetaModel,
    meta: &MetaFeatures,
    grid: &[DistillConfig],
) -> Result<DistillConfig> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let key = |c: &DistillConfig| (c.t0, c.alpha, c.lr, c.epochs);
    let mut best = &grid[0];
    let mut best_score = model.predict(meta, best);
    for c in &grid[1..] {
        let score = model.predict(meta, c);
        let better = score > best_score
            || (score == best_score
                && key(c)
                    .partial_cmp(&key(best))
                    .map_or(false, |o| o == std::cmp::Ordering::Less));
        if better {
            best = c;
            best_score = score;
        }
    }
    Ok(best.clone())
}

/// Cold-start fallback configuration.
pub fn default_config() -> DistillConfig {
    DistillConfig {
        t0: crate::distill::DEFAULT_T0,
        alpha: 0.7,
        lr: 0.05,
        epochs: 20,
    }
}

/// Candidate configurations searched by the argmax (144 points).
pub fn default_grid() -> Vec<DistillConfig> {
    let mut grid = Vec::with_capacity(144);
    for &t0 in &[1.0, 2.0, 4.0, 8.0] {
        for &alpha in &[0.3, 0.5, 0.7, 0.9] {
            for &lr in &[0.01, 0.05, 0.1] {
                for &epochs in &[10usize, 20, 30] {
                    grid.push(DistillConfig {
                        t0,
                        alpha,
                        lr,
                        epochs,
                    });
                }
            }
        }
    }
    grid
}

/// How a run's configuration was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigProvenance {
    /// Meta-model argmax over the candidate grid.
    Predicted,
    /// Too little history; defaults used.
    ColdStart,
    /// Adaptive configuration disabled; fixed hyperparameters.
    Ablated,
    /// Explicit configuration from the experiment file.
    Manual,
}

impl std::fmt::Display for ConfigProvenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ConfigProvenance::Predicted => "predicted",
            ConfigProvenance::ColdStart => "cold-start-default",
            ConfigProvenance::Ablated => "fixed-ablated",
            ConfigProvenance::Manual => "manual",
        };
        f.write_str(s)
    }
}

/// Picks a configuration for a new task: defaults below the warm-start
/// threshold, otherwise the meta-model argmax over the grid.
pub fn recommend_config(
    store: &HistoryStore,
    meta: &MetaFeatures,
    seed: u64,
) -> Result<(DistillConfig, ConfigProvenance)> {
    if store.len() < WARM_START_THRESHOLD {
        return Ok((default_config(), ConfigProvenance::ColdStart));
    }
    let model = fit_meta_model(store.entries(), seed)?;
    let config = predict_config(&model, meta, &default_grid())?;
    Ok((config, ConfigProvenance::Predicted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::rng::SplitMix64;

    fn entry(t0: f64, alpha: f64, accuracy: f64) -> HistoryEntry {
        HistoryEntry {
            meta: MetaFeatures {
                n_samples: 1000,
                n_classes: 10,
                dim: 20,
                teacher_params: 500_000,
                student_params: 50_000,
                compression_ratio: 10.0,
            },
            config: DistillConfig {
                t0,
                alpha,
                lr: 0.05,
                epochs: 20,
            },
            accuracy,
        }
    }

    #[test]
    fn extract_reads_off_fields() {
        let ds = synth_blobs(1000, 10, 20, 1.0, 1).unwrap();
        let meta = MetaFeatures::extract(&ds, &[20, 64, 32, 10], &[20, 8, 10]);
        assert_eq!(meta.n_samples, 1000);
        assert_eq!(meta.n_classes, 10);
        assert_eq!(meta.dim, 20);
        assert_eq!(meta.teacher_params, arch_param_count(&[20, 64, 32, 10]));
        let same = MetaFeatures::extract(&ds, &[20, 8, 10], &[20, 8, 10]);
        assert_eq!(same.compression_ratio, 1.0);
    }

    #[test]
    fn tabular_architectures_give_roughly_10x() {
        // Teacher [256,128,64] vs student [64,32] on 20 inputs, 10 classes.
        let meta_cr = arch_param_count(&[20, 256, 128, 64, 10]) as f64
            / arch_param_count(&[20, 64, 32, 10]) as f64;
        assert!((8.0..16.0).contains(&meta_cr), "CR {meta_cr}");
    }

    #[test]
    fn history_roundtrip_and_dedup() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.txt");
        let mut store = HistoryStore::open(&path).unwrap();
        assert!(store.record(entry(4.0, 0.7, 0.91)).unwrap());
        assert!(store.record(entry(2.0, 0.5, 0.88)).unwrap());
        // Duplicate content does not grow the store.
        assert!(!store.record(entry(4.0, 0.7, 0.91)).unwrap());
        assert_eq!(store.len(), 2);

        let reopened = HistoryStore::open(&path).unwrap();
        assert_eq!(reopened.entries(), store.entries());
    }

    #[test]
    fn warm_start_threshold_is_five() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = HistoryStore::open(dir.path().join("h.txt")).unwrap();
        let meta = entry(4.0, 0.7, 0.9).meta;
        for i in 0..4 {
            store.record(entry(4.0, 0.7, 0.8 + i as f64 * 0.01)).unwrap();
        }
        let (cfg, prov) = recommend_config(&store, &meta, 0).unwrap();
        assert_eq!(prov, ConfigProvenance::ColdStart);
        assert_eq!(cfg, default_config());

        store.record(entry(2.0, 0.5, 0.95)).unwrap();
        let (_, prov) = recommend_config(&store, &meta, 0).unwrap();
        assert_eq!(prov, ConfigProvenance::Predicted);
    }

    #[test]
    fn defaults_match_protocol() {
        let d = default_config();
        assert_eq!(d.t0, 4.0);
        assert_eq!(d.alpha, 0.7);
        assert_eq!(d.lr, 0.05);
        assert_eq!(d.epochs, 20);
        assert_eq!(default_grid().len(), 144);
    }

    #[test]
    fn constant_response_first_under_tie_break() {
        let history: Vec<HistoryEntry> =
            (0..6).map(|i| entry(1.0 + i as f64, 0.5, 0.75)).collect();
        let model = fit_meta_model(&history, 3).unwrap();
        let grid = default_grid();
        let picked = predict_config(&model, &history[0].meta, &grid).unwrap();
        // All predictions equal 0.75, so the lexicographic minimum wins.
        assert_eq!(picked, grid[0]);
        assert_eq!(picked.t0, 1.0);
        assert_eq!(picked.alpha, 0.3);
    }

    #[test]
    fn grid_of_one_returns_it() {
        let model = fit_meta_model(&[entry(4.0, 0.7, 0.9)], 0).unwrap();
        let only = DistillConfig::new(8.0, 0.9, 0.1, 30).unwrap();
        let got = predict_config(&model, &entry(4.0, 0.7, 0.9).meta, &[only.clone()]).unwrap();
        assert_eq!(got, only);
        assert!(matches!(
            predict_config(&model, &entry(4.0, 0.7, 0.9).meta, &[]),
            Err(Error::EmptyGrid)
        ));
    }

    #[test]
    fn predictions_track_monotone_temperature_response() {
        // r = f(T) increasing; predictions must rank-correlate > 0.8.
        let mut history = Vec::new();
        let mut rng = SplitMix64::new(8);
        for _ in 0..50 {
            let t0 = rng.range_f64(1.0, 8.0);
            history.push(entry(t0, 0.7, 0.5 + 0.05 * t0));
        }
        let model = fit_meta_model(&history, 4).unwrap();
        let meta = history[0].meta.clone();
        let ts: Vec<f64> = (0..20).map(|i| 1.0 + i as f64 * 0.35).collect();
        let preds: Vec<f64> = ts
            .iter()
            .map(|&t0| {
                model.predict(
                    &meta,
                    &DistillConfig {
                        t0,
                        alpha: 0.7,
                        lr: 0.05,
                        epochs: 20,
                    },
                )
            })
            .collect();
        let mut concordant = 0;
        let mut total = 0;
        for i in 0..preds.len() {
            for j in (i + 1)..preds.len() {
                total += 1;
                if preds[j] > preds[i] {
                    concordant += 1;
                }
            }
        }
        let tau = concordant as f64 / total as f64;
        assert!(tau > 0.8, "rank concordance {tau}");
    }

    #[test]
    fn predictions_stay_within_target_bounds() {
        let mut rng = SplitMix64::new(6);
        let history: Vec<HistoryEntry> = (0..30)
            .map(|_| {
                entry(
                    rng.range_f64(1.0, 8.0),
                    rng.range_f64(0.3, 0.9),
                    rng.range_f64(0.2, 0.9),
                )
            })
            .collect();
        let model = fit_meta_model(&history, 1).unwrap();
        let (lo, hi) = model.target_bounds();
        for _ in 0..100 {
            let c = DistillConfig {
                t0: rng.range_f64(0.5, 10.0),
                alpha: rng.range_f64(0.0, 1.0),
                lr: rng.range_f64(0.001, 0.2),
                epochs: 5 + rng.below(40),
            };
            let p = model.predict(&history[0].meta, &c);
            assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
        }
    }

    #[test]
    fn deterministic_fit_under_seed() {
        let history: Vec<HistoryEntry> = (0..20)
            .map(|i| entry(1.0 + (i % 8) as f64, 0.5, 0.6 + 0.01 * i as f64))
            .collect();
        let a = fit_meta_model(&history, 42).unwrap();
        let b = fit_meta_model(&history, 42).unwrap();
        let q = DistillConfig::new(3.0, 0.6, 0.05, 20).unwrap();
        assert_eq!(
            a.predict(&history[0].meta, &q),
            b.predict(&history[0].meta, &q)
        );
    }

    #[test]
    fn warm_start_finds_on_grid_peak() {
        // Synthetic response peaking exactly at the grid point
        // (T0 = 4, alpha = 0.7); the picked config must land within 5%
        // of the grid optimum's response.
        let meta = entry(4.0, 0.7, 0.9).meta;
        let response = |c: &DistillConfig| -> f64 {
            let dt = (c.t0 / 4.0).ln() / (1.5 * 2.0f64.ln());
            let da = (c.alpha - 0.7) / 0.3;
            0.5 + 0.4 * (-(dt * dt + da * da)).exp()
        };
        let grid = default_grid();
        let mut rng = SplitMix64::new(0xBEEF);
        let picks = rng.choose_distinct(grid.len(), 50);
        let history: Vec<HistoryEntry> = picks
            .iter()
            .map(|&i| HistoryEntry {
                meta: meta.clone(),
                config: grid[i].clone(),
                accuracy: response(&grid[i]),
            })
            .collect();
        let model = fit_meta_model(&history, 11).unwrap();
        let picked = predict_config(&model, &meta, &grid).unwrap();
        let best = grid.iter().map(|c| response(c)).fold(f64::MIN, f64::max);
        let rel = (best - response(&picked)) / best;
        assert!(rel <= 0.05, "picked {:?} is {:.1}% off", picked, rel * 100.0);
    }

    #[test]
    fn predict_config_returns_grid_member() {
        let history: Vec<HistoryEntry> = (0..10)
            .map(|i| entry(1.0 + i as f64 * 0.7, 0.5, 0.6 + 0.02 * i as f64))
            .collect();
        let model = fit_meta_model(&history, 2).unwrap();
        let grid = default_grid();
        let picked = predict_config(&model, &history[0].meta, &grid).unwrap();
        assert!(grid.contains(&picked));
    }
}
