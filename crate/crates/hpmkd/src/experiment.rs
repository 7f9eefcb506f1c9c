//! Experiment description and the flat key-value file format that drives
//! the CLI runner.
//!
//! Files are `key = value` lines with `#` comments; no nesting, diffable,
//! and every unknown key or malformed value is reported with its field
//! name.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::pipeline::Component;

#[derive(Debug, Clone)]
pub enum DatasetSource {
    Synth {
        n: usize,
        classes: usize,
        dim: usize,
        spread: f64,
    },
    File {
        path: PathBuf,
        label_column: String,
        delimiter: char,
        impute: bool,
    },
}

#[derive(Debug, Clone)]
pub enum ConfigChoice {
    /// Adaptive manager picks the configuration (history permitting).
    Auto,
    Manual(DistillConfig),
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    pub dataset: DatasetSource,
    pub test_fraction: f64,
    /// Fraction of train held out for the chain's improvement checks.
    pub val_fraction: f64,
    pub noise_rate: f64,
    pub imbalance_ratio: f64,
    pub data_seed: u64,
    pub teacher_count: usize,
    pub teacher_hidden: Vec<usize>,
    /// Width multipliers cycled over teachers for desk-scale diversity.
    pub teacher_width_multipliers: Vec<f64>,
    pub teacher_seeds: Option<Vec<u64>>,
    pub teacher_epochs: usize,
    pub teacher_lr: f64,
    pub student_hidden: Vec<usize>,
    pub chain_epsilon: f64,
    pub chain_max_intermediates: usize,
    /// Explicit intermediate hidden-layer lists; bypasses automatic sizing
    /// (the assistant-style baseline).
    pub manual_chain: Option<Vec<Vec<usize>>>,
    pub config: ConfigChoice,
    pub batch_size: usize,
    pub momentum: f64,
    pub ensemble_hidden_dim: usize,
    pub ensemble_beta: f64,
    pub entropy_literal_sign: bool,
    pub repetitions: usize,
    pub workers: usize,
    pub master_seed: u64,
    pub ablation: BTreeSet<Component>,
    pub output_dir: Option<PathBuf>,
}

impl Experiment {
    /// Desk-scale defaults: 10-class synthetic blobs, [256,128,64] teachers
    /// distilled into a [64,32] student.
    pub fn synth_default(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            dataset: DatasetSource::Synth {
                n: 2500,
                classes: 10,
                dim: 20,
                spread: 2.0,
            },
            test_fraction: 0.2,
            val_fraction: 0.1,
            noise_rate: 0.0,
            imbalance_ratio: 1.0,
            data_seed: 42,
            teacher_count: 3,
            teacher_hidden: vec![256, 128, 64],
            teacher_width_multipliers: vec![1.0, 0.75, 0.5],
            teacher_seeds: None,
            teacher_epochs: 30,
            teacher_lr: 0.05,
            student_hidden: vec![64, 32],
            chain_epsilon: 0.005,
            chain_max_intermediates: 4,
            manual_chain: None,
            config: ConfigChoice::Auto,
            batch_size: 256,
            momentum: 0.9,
            ensemble_hidden_dim: 64,
            ensemble_beta: 0.1,
            entropy_literal_sign: false,
            repetitions: 5,
            workers: 4,
            master_seed: 42,
            ablation: BTreeSet::new(),
            output_dir: None,
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Storage {
            path: path.to_path_buf(),
            source: e,
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "experiment".into());
        Self::from_str_named(&text, name)
    }

    pub fn from_str_named(text: &str, name: impl Into<String>) -> Result<Self> {
        let mut exp = Self::synth_default(name);
        let mut problems: Vec<String> = Vec::new();
        let mut synth = (2500usize, 10usize, 20usize, 2.0f64);
        let mut file: Option<PathBuf> = None;
        let mut label_column = "label".to_string();
        let mut delimiter = ',';
        let mut impute = false;
        let mut config_mode = String::from("auto");
        let mut manual = crate::meta::default_config();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!("line {}: expected 'key = value'", lineno + 1));
                continue;
            };
            let key = key.trim();
            let value = value.trim();
            let mut bad = |what: &str| problems.push(format!("{key}: {what} (got '{value}')"));
            match key {
                "dataset" => {
                    if value != "synth" {
                        file = Some(PathBuf::from(value));
                    }
                }
                "synth.n" => match value.parse() {
                    Ok(v) => synth.0 = v,
                    Err(_) => bad("expected integer"),
                },
                "synth.classes" => match value.parse() {
                    Ok(v) => synth.1 = v,
                    Err(_) => bad("expected integer"),
                },
                "synth.dim" => match value.parse() {
                    Ok(v) => synth.2 = v,
                    Err(_) => bad("expected integer"),
                },
                "synth.spread" => match value.parse() {
                    Ok(v) => synth.3 = v,
                    Err(_) => bad("expected real"),
                },
                "dataset.label_column" => label_column = value.to_string(),
                "dataset.delimiter" => {
                    let mut chars = value.chars();
                    match (chars.next(), chars.next()) {
                        (Some(c), None) => delimiter = c,
                        _ => bad("expected a single character"),
                    }
                }
                "dataset.impute" => match value.parse() {
                    Ok(v) => impute = v,
                    Err(_) => bad("expected true/false"),
                },
                "dataset.test_fraction" => match value.parse() {
                    Ok(v) => exp.test_fraction = v,
                    Err(_) => bad("expected real"),
                },
                "dataset.noise_rate" => match value.parse() {
                    Ok(v) => exp.noise_rate = v,
                    Err(_) => bad("expected real"),
                },
                "dataset.imbalance_ratio" => match value.parse() {
                    Ok(v) => exp.imbalance_ratio = v,
                    Err(_) => bad("expected real"),
                },
                "dataset.seed" => match value.parse() {
                    Ok(v) => exp.data_seed = v,
                    Err(_) => bad("expected integer"),
                },
                "teacher.count" => match value.parse() {
                    Ok(v) => exp.teacher_count = v,
                    Err(_) => bad("expected integer"),
                },
                "teacher.hidden" => match parse_usize_list(value) {
                    Ok(v) => exp.teacher_hidden = v,
                    Err(e) => bad(&e),
                },
                "teacher.width_multipliers" => match parse_f64_list(value) {
                    Ok(v) => exp.teacher_width_multipliers = v,
                    Err(e) => bad(&e),
                },
                "teacher.seeds" => match parse_u64_list(value) {
                    Ok(v) => exp.teacher_seeds = Some(v),
                    Err(e) => bad(&e),
                },
                "teacher.epochs" => match value.parse() {
                    Ok(v) => exp.teacher_epochs = v,
                    Err(_) => bad("expected integer"),
                },
                "teacher.lr" => match value.parse() {
                    Ok(v) => exp.teacher_lr = v,
                    Err(_) => bad("expected real"),
                },
                "student.hidden" => match parse_usize_list(value) {
                    Ok(v) => exp.student_hidden = v,
                    Err(e) => bad(&e),
                },
                "chain.epsilon" => match parse_epsilon(value) {
                    Ok(v) => exp.chain_epsilon = v,
                    Err(e) => bad(&e),
                },
                "chain.max_intermediates" => match value.parse() {
                    Ok(v) => exp.chain_max_intermediates = v,
                    Err(_) => bad("expected integer"),
                },
                "chain.manual" => match parse_chain_list(value) {
                    Ok(v) => exp.manual_chain = Some(v),
                    Err(e) => bad(&e),
                },
                "config" => config_mode = value.to_string(),
                "config.t0" => match value.parse() {
                    Ok(v) => manual.t0 = v,
                    Err(_) => bad("expected real"),
                },
                "config.alpha" => match value.parse() {
                    Ok(v) => manual.alpha = v,
                    Err(_) => bad("expected real"),
                },
                "config.lr" => match value.parse() {
                    Ok(v) => manual.lr = v,
                    Err(_) => bad("expected real"),
                },
                "config.epochs" => match value.parse() {
                    Ok(v) => manual.epochs = v,
                    Err(_) => bad("expected integer"),
                },
                "train.batch_size" => match value.parse() {
                    Ok(v) => exp.batch_size = v,
                    Err(_) => bad("expected integer"),
                },
                "train.momentum" => match value.parse() {
                    Ok(v) => exp.momentum = v,
                    Err(_) => bad("expected real"),
                },
                "train.val_fraction" => match value.parse() {
                    Ok(v) => exp.val_fraction = v,
                    Err(_) => bad("expected real"),
                },
                "ensemble.hidden_dim" => match value.parse() {
                    Ok(v) => exp.ensemble_hidden_dim = v,
                    Err(_) => bad("expected integer"),
                },
                "ensemble.beta" => match value.parse() {
                    Ok(v) => exp.ensemble_beta = v,
                    Err(_) => bad("expected real"),
                },
                "ensemble.entropy_literal" => match value.parse() {
                    Ok(v) => exp.entropy_literal_sign = v,
                    Err(_) => bad("expected true/false"),
                },
                "workers" => match value.parse() {
                    Ok(v) => exp.workers = v,
                    Err(_) => bad("expected integer"),
                },
                "master_seed" => match value.parse() {
                    Ok(v) => exp.master_seed = v,
                    Err(_) => bad("expected integer"),
                },
                "reps" => match value.parse() {
                    Ok(v) => exp.repetitions = v,
                    Err(_) => bad("expected integer"),
                },
                "ablate" => match parse_ablation(value) {
                    Ok(v) => exp.ablation = v,
                    Err(e) => bad(&e),
                },
                "output" => exp.output_dir = Some(PathBuf::from(value)),
                _ => problems.push(format!("{key}: unknown key")),
            }
        }

        exp.dataset = match file {
            Some(path) => DatasetSource::File {
                path,
                label_column,
                delimiter,
                impute,
            },
            None => DatasetSource::Synth {
                n: synth.0,
                classes: synth.1,
                dim: synth.2,
                spread: synth.3,
            },
        };
        exp.config = match config_mode.as_str() {
            "auto" => ConfigChoice::Auto,
            "manual" => ConfigChoice::Manual(manual),
            other => {
                problems.push(format!("config: expected 'auto' or 'manual' (got '{other}')"));
                ConfigChoice::Auto
            }
        };

        if let Err(e) = exp.validate() {
            problems.push(e.to_string());
        }
        if !problems.is_empty() {
            return Err(Error::Experiment(problems.join("; ")));
        }
        Ok(exp)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.repetitions == 0 {
            problems.push("reps: must be at least 1".to_string());
        }
        if self.workers == 0 {
            problems.push("workers: must be at least 1".to_string());
        }
        if self.teacher_count == 0 {
            problems.push("teacher.count: must be at least 1".to_string());
        }
        if self.teacher_hidden.is_empty() || self.teacher_hidden.contains(&0) {
            problems.push("teacher.hidden: needs positive widths".to_string());
        }
        if self.student_hidden.is_empty() || self.student_hidden.contains(&0) {
            problems.push("student.hidden: needs positive widths".to_string());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            problems.push("dataset.test_fraction: must lie in (0, 1)".to_string());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            problems.push("train.val_fraction: must lie in (0, 1)".to_string());
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            problems.push("dataset.noise_rate: must lie in [0, 1]".to_string());
        }
        if self.imbalance_ratio < 1.0 {
            problems.push("dataset.imbalance_ratio: must be >= 1".to_string());
        }
        if self.chain_epsilon < 0.0 {
            problems.push("chain.epsilon: must be nonnegative".to_string());
        }
        if self
            .teacher_width_multipliers
            .iter()
            .any(|&m| !(m > 0.0) || !m.is_finite())
        {
            problems.push("teacher.width_multipliers: must be positive".to_string());
        }
        if let Some(seeds) = &self.teacher_seeds {
            if seeds.len() != self.teacher_count {
                problems.push(format!(
                    "teacher.seeds: {} seeds for {} teachers",
                    seeds.len(),
                    self.teacher_count
                ));
            }
        }
        if let ConfigChoice::Manual(c) = &self.config {
            if let Err(e) = c.validate() {
                problems.push(format!("config: {e}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Experiment(problems.join("; ")))
        }
    }
}

fn parse_usize_list(value: &str) -> std::result::Result<Vec<usize>, String> {
    let out: std::result::Result<Vec<usize>, _> = value
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect();
    match out {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err("expected comma-separated integers".to_string()),
    }
}

fn parse_u64_list(value: &str) -> std::result::Result<Vec<u64>, String> {
    let out: std::result::Result<Vec<u64>, _> =
        value.split(',').map(|s| s.trim().parse::<u64>()).collect();
    match out {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err("expected comma-separated integers".to_string()),
    }
}

fn parse_f64_list(value: &str) -> std::result::Result<Vec<f64>, String> {
    let out: std::result::Result<Vec<f64>, _> =
        value.split(',').map(|s| s.trim().parse::<f64>()).collect();
    match out {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err("expected comma-separated reals".to_string()),
    }
}

fn parse_epsilon(value: &str) -> std::result::Result<f64, String> {
    if value == "inf" || value == "+inf" {
        return Ok(f64::INFINITY);
    }
    value.parse().map_err(|_| "expected real or 'inf'".to_string())
}

/// Semicolon-separated hidden-layer lists: "128,64;96,48".
fn parse_chain_list(value: &str) -> std::result::Result<Vec<Vec<usize>>, String> {
    value.split(';').map(|part| parse_usize_list(part)).collect()
}

pub fn parse_ablation(value: &str) -> std::result::Result<BTreeSet<Component>, String> {
    let mut out = BTreeSet::new();
    for part in value.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        match part.parse::<Component>() {
            Ok(c) => {
                out.insert(c);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
