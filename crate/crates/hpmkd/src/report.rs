//! Run reports: per-repetition metrics, mean ± std aggregation, and the
//! report bundle written per experiment.
//!
//! The machine-readable `metrics.txt` contains only deterministic values
//! (sorted keys, fixed float precision) so identical runs diff clean;
//! wall times and cache activity go to `timing.txt`.

use std::collections::BTreeSet;
use std::path::Path;

use crate::cache::CacheStats;
use crate::chain::StageRecord;
use crate::distill::DistillConfig;
use crate::ensemble::EpochWeightStats;
use crate::error::{Error, Result};
use crate::eval;
use crate::matrix::Matrix;
use crate::meta::{ConfigProvenance, MetaFeatures};
use crate::pipeline::Component;
use crate::stats;

#[derive(Debug, Clone)]
pub struct SingleRun {
    pub rep: usize,
    pub rep_seed: u64,
    pub teacher_val_accuracy: f64,
    pub teacher_test_accuracy: f64,
    pub student_test_accuracy: f64,
    pub retention_pct: f64,
    pub compression_ratio: f64,
    pub silhouette: f64,
    pub teacher_phase_secs: f64,
    pub distill_phase_secs: f64,
    pub total_secs: f64,
    pub efficiency: f64,
    pub teacher_cached: Vec<bool>,
    pub stages: Vec<StageRecord>,
    pub rejected_stage: Option<StageRecord>,
    pub weight_stats: Vec<EpochWeightStats>,
    /// Student-stage temperature trajectory.
    pub temperatures: Vec<f64>,
    pub embeddings: Option<(Matrix, Vec<usize>)>,
}

#[derive(Debug, Clone, Copy)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

impl Aggregate {
    pub fn over(values: &[f64]) -> Self {
        Self {
            mean: stats::mean(values),
            std: stats::sample_std(values),
        }
    }
}

impl std::fmt::Display for Aggregate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub experiment_name: String,
    pub ablation: BTreeSet<Component>,
    pub workers: usize,
    pub master_seed: u64,
    pub config: DistillConfig,
    pub provenance: ConfigProvenance,
    pub meta: MetaFeatures,
    pub config_phase_secs: f64,
    pub runs: Vec<SingleRun>,
    pub failures: Vec<(usize, String)>,
    pub cache_stats: CacheStats,
}

impl RunReport {
    pub fn student_accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.student_test_accuracy).collect()
    }

    pub fn aggregate_accuracy(&self) -> Aggregate {
        Aggregate::over(&self.student_accuracies())
    }

    pub fn aggregate_teacher_accuracy(&self) -> Aggregate {
        Aggregate::over(&self.runs.iter().map(|r| r.teacher_test_accuracy).collect::<Vec<_>>())
    }

    pub fn aggregate_retention(&self) -> Aggregate {
        Aggregate::over(&self.runs.iter().map(|r| r.retention_pct).collect::<Vec<_>>())
    }

    pub fn aggregate_time(&self) -> Aggregate {
        Aggregate::over(&self.runs.iter().map(|r| r.total_secs).collect::<Vec<_>>())
    }

    pub fn ablation_label(&self) -> String {
        if self.ablation.is_empty() {
            "none".to_string()
        } else {
            self.ablation
                .iter()
                .map(|c| c.name().to_string())
                .collect::<Vec<_>>()
                .join(",")
        }
    }

    /// Deterministic key=value lines, sorted by key. Excludes wall times,
    /// timestamps, and cache activity by construction.
    pub fn canonical_metrics(&self) -> String {
        let mut kv: Vec<(String, String)> = Vec::new();
        let real = |v: f64| format!("{v:.12e}");
        kv.push(("ablation".into(), self.ablation_label()));
        kv.push(("config.t0".into(), real(self.config.t0)));
        kv.push(("config.alpha".into(), real(self.config.alpha)));
        kv.push(("config.lr".into(), real(self.config.lr)));
        kv.push(("config.epochs".into(), self.config.epochs.to_string()));
        kv.push(("config.provenance".into(), self.provenance.to_string()));
        kv.push(("experiment".into(), self.experiment_name.clone()));
        kv.push(("master_seed".into(), self.master_seed.to_string()));
        kv.push(("workers".into(), self.workers.to_string()));
        kv.push(("meta.n_samples".into(), self.meta.n_samples.to_string()));
        kv.push(("meta.n_classes".into(), self.meta.n_classes.to_string()));
        kv.push(("meta.dim".into(), self.meta.dim.to_string()));
        kv.push((
            "meta.teacher_params".into(),
            self.meta.teacher_params.to_string(),
        ));
        kv.push((
            "meta.student_params".into(),
            self.meta.student_params.to_string(),
        ));
        kv.push((
            "meta.compression_ratio".into(),
            real(self.meta.compression_ratio),
        ));
        kv.push(("reps".into(), self.runs.len().to_string()));
        kv.push(("failures".into(), self.failures.len().to_string()));
        for run in &self.runs {
            let p = format!("rep{}", run.rep);
            kv.push((format!("{p}.seed"), run.rep_seed.to_string()));
            kv.push((
                format!("{p}.student_test_accuracy"),
                real(run.student_test_accuracy),
            ));
            kv.push((
                format!("{p}.teacher_test_accuracy"),
                real(run.teacher_test_accuracy),
            ));
            kv.push((format!("{p}.retention_pct"), real(run.retention_pct)));
            kv.push((
                format!("{p}.compression_ratio"),
                real(run.compression_ratio),
            ));
            kv.push((format!("{p}.silhouette"), real(run.silhouette)));
            kv.push((format!("{p}.stages"), run.stages.len().to_string()));
            for (i, s) in run.stages.iter().enumerate() {
                let sp = format!("{p}.stage{i}");
                kv.push((format!("{sp}.role"), s.role.to_string()));
                kv.push((format!("{sp}.params"), s.params.to_string()));
                kv.push((format!("{sp}.val_accuracy"), real(s.val_accuracy)));
                if let Some(d) = s.delta {
                    kv.push((format!("{sp}.delta"), real(d)));
                }
            }
            if let Some(r) = &run.rejected_stage {
                kv.push((format!("{p}.rejected.params"), r.params.to_string()));
                kv.push((
                    format!("{p}.rejected.val_accuracy"),
                    real(r.val_accuracy),
                ));
            }
        }
        if !self.runs.is_empty() {
            let acc = self.aggregate_accuracy();
            let teach = self.aggregate_teacher_accuracy();
            let ret = self.aggregate_retention();
            kv.push(("aggregate.accuracy.mean".into(), real(acc.mean)));
            kv.push(("aggregate.accuracy.std".into(), real(acc.std)));
            kv.push(("aggregate.teacher_accuracy.mean".into(), real(teach.mean)));
            kv.push(("aggregate.teacher_accuracy.std".into(), real(teach.std)));
            kv.push(("aggregate.retention.mean".into(), real(ret.mean)));
            kv.push(("aggregate.retention.std".into(), real(ret.std)));
        }
        kv.sort();
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(&k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Human summary mirroring the comparison-table columns
    /// (accuracy, retention, time, compression ratio).
    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("experiment: {}\n", self.experiment_name));
        out.push_str(&format!("ablation:   {}\n", self.ablation_label()));
        out.push_str(&format!(
            "config:     T0={} alpha={} lr={} epochs={} ({})\n",
            self.config.t0, self.config.alpha, self.config.lr, self.config.epochs, self.provenance
        ));
        out.push_str(&format!(
            "models:     teacher {} params, student {} params, CR {:.2}x\n",
            self.meta.teacher_params,
            self.meta.student_params,
            self.meta.compression_ratio
        ));
        out.push_str("\n rep       acc   teacher  retention%   time(s)  silhouette\n");
        for r in &self.runs {
            out.push_str(&format!(
                "{:4}   {:.4}    {:.4}      {:6.2}   {:7.2}     {:+.4}\n",
                r.rep,
                r.student_test_accuracy,
                r.teacher_test_accuracy,
                r.retention_pct,
                r.total_secs,
                r.silhouette
            ));
        }
        if !self.runs.is_empty() {
            let time = self.aggregate_time();
            out.push_str(&format!(
                "\nmean ± std   acc {}   retention {:.2} ± {:.2}   time {:.2} ± {:.2} s\n",
                self.aggregate_accuracy(),
                self.aggregate_retention().mean,
                self.aggregate_retention().std,
                time.mean,
                time.std
            ));
        }
        for (rep, cause) in &self.failures {
            out.push_str(&format!("FAILED rep {rep}: {cause}\n"));
        }
        out
    }

    /// Wall-clock and cache-activity detail; everything here may vary
    /// between otherwise identical runs.
    pub fn timing_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "config_phase_secs={:.6}\n",
            self.config_phase_secs
        ));
        out.push_str(&format!(
            "cache.hits={} cache.lookups={} cache.hit_rate={:.4}\n",
            self.cache_stats.hits,
            self.cache_stats.lookups,
            self.cache_stats.hit_rate()
        ));
        for r in &self.runs {
            out.push_str(&format!(
                "rep={} teacher_phase_secs={:.6} distill_phase_secs={:.6} total_secs={:.6} efficiency_acc_per_min={:.4} teachers_cached={}\n",
                r.rep,
                r.teacher_phase_secs,
                r.distill_phase_secs,
                r.total_secs,
                r.efficiency,
                r.teacher_cached
                    .iter()
                    .map(|c| if *c { "y" } else { "n" })
                    .collect::<String>(),
            ));
            for (i, s) in r.stages.iter().enumerate() {
                out.push_str(&format!(
                    "rep={} stage={} role={} wall_secs={:.6} cached={}\n",
                    r.rep, i, s.role, s.wall_secs, s.cached
                ));
            }
        }
        out
    }

    /// Per-epoch, per-teacher mean attention weights, one record per line.
    pub fn attention_log(&self) -> String {
        let mut out = String::new();
        for r in &self.runs {
            for ws in &r.weight_stats {
                for (k, w) in ws.mean_weights.iter().enumerate() {
                    out.push_str(&format!(
                        "rep={} epoch={} teacher={} mean_weight={:.6} entropy={:.6} temperature={:.6}\n",
                        r.rep, ws.epoch, k, w, ws.entropy, ws.temperature
                    ));
                }
            }
        }
        out
    }

    /// Chain trace: stage architecture, parameters, accuracy, improvement,
    /// wall time, cache status.
    pub fn chain_trace(&self) -> String {
        let mut out = String::new();
        let fmt_stage = |rep: usize, label: &str, s: &StageRecord| {
            format!(
                "rep={} stage={} role={} layers={:?} params={} val_acc={:.4} delta={} raw_drop={} wall_secs={:.3} cached={}\n",
                rep,
                label,
                s.role,
                s.layer_sizes,
                s.params,
                s.val_accuracy,
                s.delta.map_or("-".to_string(), |d| format!("{d:.4}")),
                s.raw_drop.map_or("-".to_string(), |d| format!("{d:+.4}")),
                s.wall_secs,
                s.cached
            )
        };
        for r in &self.runs {
            for (i, s) in r.stages.iter().enumerate() {
                out.push_str(&fmt_stage(r.rep, &i.to_string(), s));
            }
            if let Some(rej) = &r.rejected_stage {
                out.push_str(&fmt_stage(r.rep, "rejected", rej));
            }
        }
        out
    }

    /// Writes the bundle: summary, canonical metrics, timing, attention
    /// log, chain trace, and the first repetition's embeddings.
    pub fn write_bundle(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::Storage {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let write = |name: &str, content: String| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, content).map_err(|e| Error::Storage { path, source: e })
        };
        write("summary.txt", self.summary_text())?;
        write("metrics.txt", self.canonical_metrics())?;
        write("timing.txt", self.timing_text())?;
        write("attention.log", self.attention_log())?;
        write("chain.txt", self.chain_trace())?;
        if let Some(run) = self.runs.first() {
            if let Some((emb, labels)) = &run.embeddings {
                eval::export_embeddings(dir.join("embeddings.bin"), emb, labels)?;
            }
        }
        Ok(())
    }
}
