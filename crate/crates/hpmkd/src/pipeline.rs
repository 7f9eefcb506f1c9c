//! Parallel training pipeline and the three-phase orchestration:
//! configuration, distillation (teachers, chain, ensemble), and
//! optimization (cache writes, history, reporting).
//!
//! Every task derives its seed from the master seed and its task id, so
//! results are identical for any worker count; parallelism only changes
//! wall time.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use crate::cache::{self, CacheEntry, CacheMetrics, CacheStore};
use crate::chain::{self, Chain, ChainSpec, StageRecord, StageRole, StageTrainer, TrainedStage};
use crate::data::{self, Dataset};
use crate::distill::{DistillConfig, TemperatureScheduler, DEFAULT_GAMMA};
use crate::ensemble::{distill_multi, EpochWeightStats, MultiTeacherOptions};
use crate::error::{Error, Result};
use crate::eval;
use crate::experiment::{ConfigChoice, DatasetSource, Experiment};
use crate::meta::{self, ConfigProvenance, HistoryEntry, HistoryStore, MetaFeatures};
use crate::nn::{arch_param_count, Model};
use crate::report::{RunReport, SingleRun};
use crate::rng::mix;
use crate::trainer::{distill_single, train_cross_entropy, TrainOptions};

/// The six ablatable components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Component {
    AdaptConf,
    ProgChain,
    MultiTeach,
    MetaTemp,
    Parallel,
    Memory,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::AdaptConf,
        Component::ProgChain,
        Component::MultiTeach,
        Component::MetaTemp,
        Component::Parallel,
        Component::Memory,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Component::AdaptConf => "adapt_conf",
            Component::ProgChain => "prog_chain",
            Component::MultiTeach => "multi_teach",
            Component::MetaTemp => "meta_temp",
            Component::Parallel => "parallel",
            Component::Memory => "memory",
        }
    }
}

impl std::fmt::Display for Component {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "adapt_conf" => Ok(Component::AdaptConf),
            "prog_chain" => Ok(Component::ProgChain),
            "multi_teach" => Ok(Component::MultiTeach),
            "meta_temp" => Ok(Component::MetaTemp),
            "parallel" => Ok(Component::Parallel),
            "memory" => Ok(Component::Memory),
            other => Err(format!(
                "unknown component '{other}' (expected adapt_conf, prog_chain, multi_teach, meta_temp, parallel, memory)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub workers: usize,
    pub master_seed: u64,
    pub ablation: BTreeSet<Component>,
}

impl PipelineConfig {
    pub fn is_ablated(&self, c: Component) -> bool {
        self.ablation.contains(&c)
    }

    /// Worker count actually used; the parallel ablation pins it to 1.
    pub fn effective_workers(&self) -> usize {
        if self.is_ablated(Component::Parallel) {
            1
        } else {
            self.workers.max(1)
        }
    }
}

/// Where the pipeline keeps shared state across experiments.
#[derive(Debug, Clone, Default)]
pub struct RunEnv {
    pub cache_dir: Option<PathBuf>,
    pub history_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    TeacherTrain,
    IntermediateDistill,
    StudentDistill,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::TeacherTrain => "teacher-train",
            TaskKind::IntermediateDistill => "intermediate-distill",
            TaskKind::StudentDistill => "student-distill",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Task {
    pub id: usize,
    pub kind: TaskKind,
    /// Rough work estimate: parameter count times epochs.
    pub cost_estimate: f64,
}

/// Longest-processing-time-first greedy assignment. Tasks sorted by
/// descending cost (ties by ascending id) each go to the least-loaded
/// worker (ties to the lowest worker index). Returns per-worker ordered
/// task-id lists.
pub fn schedule_tasks(tasks: &[Task], workers: usize) -> Vec<Vec<usize>> {
    let workers = workers.max(1);
    let mut order: Vec<&Task> = tasks.iter().collect();
    order.sort_by(|a, b| {
        b.cost_estimate
            .partial_cmp(&a.cost_estimate)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.id.cmp(&b.id))
    });
    let mut assignment = vec![Vec::new(); workers];
    let mut loads = vec![0.0f64; workers];
    for task in order {
        let mut target = 0;
        for w in 1..workers {
            if loads[w] < loads[target] {
                target = w;
            }
        }
        assignment[target].push(task.id);
        loads[target] += task.cost_estimate;
    }
    assignment
}

#[derive(Debug, Clone)]
pub struct TeacherSpec {
    pub layer_sizes: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    /// Seed stream for init and shuffling; also part of the cache key.
    pub seed: u64,
}

/// Hash identity for plain cross-entropy teacher training: alpha 1 means
/// the loss has no teacher term.
fn teacher_hash_config(spec: &TeacherSpec) -> DistillConfig {
    DistillConfig {
        t0: 1.0,
        alpha: 1.0,
        lr: spec.lr,
        epochs: spec.epochs,
    }
}

#[derive(Debug)]
pub struct TrainedTeacher {
    pub model: Model,
    pub wall_secs: f64,
    pub cached: bool,
}

#[derive(Debug)]
pub struct TeacherPhase {
    pub teachers: Vec<TrainedTeacher>,
    /// Wall time of the whole phase, including cache traffic.
    pub wall_secs: f64,
}

/// Trains the given teachers, distributing uncached work over the
/// effective worker count. Per-task seeding makes the merged result
/// independent of scheduling.
pub fn train_teachers_parallel(
    specs: &[TeacherSpec],
    pcfg: &PipelineConfig,
    train: &Dataset,
    batch_size: usize,
    momentum: f64,
    cache: Option<&mut CacheStore>,
) -> Result<TeacherPhase> {
    if specs.is_empty() {
        return Err(Error::InvalidSpec("no teacher specs".into()));
    }
    let phase_start = Instant::now();
    let mut slots: Vec<Option<TrainedTeacher>> = (0..specs.len()).map(|_| None).collect();
    let mut cache = cache;

    // Cache consultation happens on the orchestrator thread; workers only
    // ever train.
    let mut keys = Vec::with_capacity(specs.len());
    for spec in specs {
        let tag = format!("{}:ce:bs{batch_size}:m{momentum:.3}", train.id());
        keys.push(cache::config_hash(
            &tag,
            &spec.layer_sizes,
            &teacher_hash_config(spec),
            spec.seed,
        ));
    }
    if let Some(store) = cache.as_deref_mut() {
        for (i, key) in keys.iter().enumerate() {
            let read_start = Instant::now();
            if let Some(entry) = store.get(key)? {
                slots[i] = Some(TrainedTeacher {
                    model: Model::from_bytes(&entry.model_blob)?,
                    wall_secs: read_start.elapsed().as_secs_f64(),
                    cached: true,
                });
            }
        }
    }

    let pending: Vec<usize> = (0..specs.len()).filter(|&i| slots[i].is_none()).collect();
    if !pending.is_empty() {
        let tasks: Vec<Task> = pending
            .iter()
            .map(|&i| Task {
                id: i,
                kind: TaskKind::TeacherTrain,
                cost_estimate: arch_param_count(&specs[i].layer_sizes) as f64
                    * specs[i].epochs as f64,
            })
            .collect();
        let assignment = schedule_tasks(&tasks, pcfg.effective_workers());
        let results = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for worker_tasks in &assignment {
                let worker_tasks = worker_tasks.clone();
                let specs = &specs;
                handles.push(scope.spawn(move || -> Result<Vec<(usize, Model, f64)>> {
                    let mut out = Vec::with_capacity(worker_tasks.len());
                    for id in worker_tasks {
                        let spec = &specs[id];
                        let start = Instant::now();
                        let mut model =
                            Model::new(&spec.layer_sizes, mix(spec.seed, 1)).map_err(|e| {
                                Error::Task {
                                    task_id: id,
                                    kind: TaskKind::TeacherTrain.to_string(),
                                    reason: e.to_string(),
                                }
                            })?;
                        let opts = TrainOptions {
                            lr: spec.lr,
                            momentum,
                            epochs: spec.epochs,
                            batch_size,
                            shuffle_seed: mix(spec.seed, 2),
                            milestones: None,
                        };
                        train_cross_entropy(&mut model, train, &opts).map_err(|e| {
                            Error::Task {
                                task_id: id,
                                kind: TaskKind::TeacherTrain.to_string(),
                                reason: e.to_string(),
                            }
                        })?;
                        out.push((id, model, start.elapsed().as_secs_f64()));
                    }
                    Ok(out)
                }));
            }
            let mut merged = Vec::new();
            for handle in handles {
                match handle.join() {
                    Ok(Ok(list)) => merged.extend(list),
                    Ok(Err(e)) => return Err(e),
                    Err(_) => {
                        return Err(Error::Task {
                            task_id: usize::MAX,
                            kind: TaskKind::TeacherTrain.to_string(),
                            reason: "worker panicked".into(),
                        })
                    }
                }
            }
            Ok(merged)
        })?;
        for (id, model, wall_secs) in results {
            if let Some(store) = cache.as_deref_mut() {
                store.put(&CacheEntry::new(
                    keys[id].clone(),
                    model.to_bytes(),
                    CacheMetrics {
                        accuracy: f64::NAN, // teacher accuracy is filled by the caller's eval
                        wall_time_seconds: wall_secs,
                        epochs_run: specs[id].epochs as u64,
                    },
                    cache::unix_now(),
                ))?;
            }
            slots[id] = Some(TrainedTeacher {
                model,
                wall_secs,
                cached: false,
            });
        }
    }

    Ok(TeacherPhase {
        teachers: slots.into_iter().map(|s| s.unwrap()).collect(),
        wall_secs: phase_start.elapsed().as_secs_f64(),
    })
}

/// Per-repetition distillation context implementing the chain's stage
/// trainer: consults the cache, applies the temperature schedule, and
/// routes the final student stage through the multi-teacher ensemble when
/// that component is active.
struct PipelineStageTrainer<'a> {
    fit: &'a Dataset,
    val: &'a Dataset,
    config: &'a DistillConfig,
    exp: &'a Experiment,
    rep_seed: u64,
    multi_teach: bool,
    meta_temp: bool,
    other_teachers: &'a [Model],
    cache: Option<&'a mut CacheStore>,
    weight_stats: Vec<EpochWeightStats>,
    temperatures: Vec<f64>,
}

impl<'a> PipelineStageTrainer<'a> {
    fn stage_tag(&self, teacher: &Model, role: StageRole) -> String {
        let teacher_digest = cache::sha256_hex(&teacher.to_bytes());
        let mut tag = format!(
            "{}:kd:{}:bs{}:m{:.3}",
            self.fit.id(),
            &teacher_digest[..16],
            self.exp.batch_size,
            self.exp.momentum
        );
        if self.meta_temp {
            tag.push_str(&format!(":sched{DEFAULT_GAMMA:.3}"));
        } else {
            tag.push_str(":fixedT");
        }
        if role == StageRole::Student && self.multi_teach {
            tag.push_str(":ens");
            for t in self.other_teachers {
                let d = cache::sha256_hex(&t.to_bytes());
                tag.push_str(&format!(":{}", &d[..16]));
            }
            tag.push_str(&format!(
                ":h{}:b{:.3}:lit{}",
                self.exp.ensemble_hidden_dim,
                self.exp.ensemble_beta,
                self.exp.entropy_literal_sign as u8
            ));
        }
        tag
    }
}

impl<'a> StageTrainer for PipelineStageTrainer<'a> {
    fn train_stage(
        &mut self,
        teacher: &Model,
        arch: &[usize],
        role: StageRole,
        stage_index: usize,
    ) -> Result<TrainedStage> {
        let start = Instant::now();
        let stage_seed = mix(self.rep_seed, 10_000 + stage_index as u64);
        let tag = self.stage_tag(teacher, role);
        let key = cache::config_hash(&tag, arch, self.config, stage_seed);

        if let Some(store) = self.cache.as_deref_mut() {
            if let Some(entry) = store.get(&key)? {
                let model = Model::from_bytes(&entry.model_blob)?;
                return Ok(TrainedStage {
                    model,
                    val_accuracy: entry.metrics.accuracy,
                    wall_secs: start.elapsed().as_secs_f64(),
                    cached: true,
                });
            }
        }

        let mut model = Model::new(arch, mix(stage_seed, 1))?;
        let shuffle_seed = mix(stage_seed, 2);
        if role == StageRole::Student && self.multi_teach {
            let mut ensemble: Vec<Model> = Vec::with_capacity(1 + self.other_teachers.len());
            ensemble.push(teacher.clone());
            ensemble.extend(self.other_teachers.iter().cloned());
            let opts = MultiTeacherOptions {
                config: self.config.clone(),
                momentum: self.exp.momentum,
                batch_size: self.exp.batch_size,
                shuffle_seed,
                hidden_dim: self.exp.ensemble_hidden_dim,
                beta: self.exp.ensemble_beta,
                attention_seed: mix(stage_seed, 3),
                scheduler_gamma: self.meta_temp.then_some(DEFAULT_GAMMA),
                entropy_literal_sign: self.exp.entropy_literal_sign,
            };
            let log = distill_multi(&mut model, &ensemble, self.fit, &opts)?;
            self.weight_stats = log.weight_stats;
            self.temperatures = log.temperatures;
        } else {
            let mut scheduler = if self.meta_temp {
                Some(TemperatureScheduler::new(self.config.t0, DEFAULT_GAMMA)?)
            } else {
                None
            };
            let log = distill_single(
                &mut model,
                teacher,
                self.fit,
                self.config,
                self.exp.momentum,
                self.exp.batch_size,
                shuffle_seed,
                scheduler.as_mut(),
            )?;
            if role == StageRole::Student {
                self.temperatures = log.temperatures;
            }
        }

        let val_accuracy = eval::accuracy(&model, self.val)?;
        let wall_secs = start.elapsed().as_secs_f64();
        if let Some(store) = self.cache.as_deref_mut() {
            store.put(&CacheEntry::new(
                key,
                model.to_bytes(),
                CacheMetrics {
                    accuracy: val_accuracy,
                    wall_time_seconds: wall_secs,
                    epochs_run: self.config.epochs as u64,
                },
                cache::unix_now(),
            ))?;
        }
        Ok(TrainedStage {
            model,
            val_accuracy,
            wall_secs,
            cached: false,
        })
    }
}

/// Runs a chain through explicitly specified intermediate architectures,
/// skipping the improvement threshold (the assistant-style baseline).
fn build_manual_chain(
    teacher: Model,
    teacher_val_acc: f64,
    intermediates: &[Vec<usize>],
    student_layers: &[usize],
    trainer: &mut dyn StageTrainer,
) -> Result<Chain> {
    let mut records = vec![StageRecord {
        role: StageRole::Teacher,
        layer_sizes: teacher.layer_sizes().to_vec(),
        params: teacher.param_count(),
        val_accuracy: teacher_val_acc,
        delta: None,
        raw_drop: None,
        wall_secs: 0.0,
        cached: false,
    }];
    let mut models = vec![teacher];
    let mut stage_index = 1;
    let input_dim = models[0].input_dim();
    let class_count = models[0].class_count();
    let mut archs: Vec<Vec<usize>> = Vec::with_capacity(intermediates.len() + 1);
    for hidden in intermediates {
        let mut arch = vec![input_dim];
        arch.extend_from_slice(hidden);
        arch.push(class_count);
        archs.push(arch);
    }
    archs.push(student_layers.to_vec());

    let last = archs.len() - 1;
    for (i, arch) in archs.iter().enumerate() {
        let role = if i == last {
            StageRole::Student
        } else {
            StageRole::Intermediate
        };
        let prev_acc = records.last().unwrap().val_accuracy;
        let prev_params = models.last().unwrap().param_count();
        let stage = trainer
            .train_stage(models.last().unwrap(), arch, role, stage_index)
            .map_err(|e| Error::ChainStage {
                stage: stage_index,
                source: Box::new(e),
            })?;
        let params = stage.model.param_count();
        records.push(StageRecord {
            role,
            layer_sizes: stage.model.layer_sizes().to_vec(),
            params,
            val_accuracy: stage.val_accuracy,
            delta: Some(chain::improvement_delta(
                stage.val_accuracy,
                prev_acc,
                params.min(prev_params),
                prev_params,
            )),
            raw_drop: Some(stage.val_accuracy - prev_acc),
            wall_secs: stage.wall_secs,
            cached: stage.cached,
        });
        models.push(stage.model);
        stage_index += 1;
    }
    Ok(Chain {
        models,
        records,
        trained_not_appended: None,
    })
}

/// Materialized data for one experiment.
pub struct PreparedData {
    pub fit: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Builds the train/val/test datasets: generate or load, split, then apply
/// the robustness perturbations to the training side only.
pub fn prepare_data(exp: &Experiment) -> Result<PreparedData> {
    let base = match &exp.dataset {
        DatasetSource::Synth {
            n,
            classes,
            dim,
            spread,
        } => data::synth_blobs(*n, *classes, *dim, *spread, exp.data_seed)?,
        DatasetSource::File {
            path,
            label_column,
            delimiter,
            impute,
        } => data::load_delimited(path, label_column, *delimiter, *impute)?,
    };
    let (mut train, test) = data::split(&base, exp.test_fraction, mix(exp.data_seed, 101))?;
    // Imbalance first: it requires balanced class counts, which label
    // noise would destroy.
    if exp.imbalance_ratio > 1.0 {
        train = data::apply_imbalance(&train, exp.imbalance_ratio, mix(exp.data_seed, 103))?;
    }
    if exp.noise_rate > 0.0 {
        train = data::inject_label_noise(&train, exp.noise_rate, mix(exp.data_seed, 102))?;
    }
    let (fit, val) = data::partition(&train, exp.val_fraction, mix(exp.data_seed, 104))?;
    Ok(PreparedData { fit, val, test })
}

/// Teacher architectures: the configured hidden widths scaled by the
/// cycling width multipliers.
pub fn teacher_architectures(exp: &Experiment, input_dim: usize, classes: usize) -> Vec<Vec<usize>> {
    (0..exp.teacher_count)
        .map(|k| {
            let m = exp.teacher_width_multipliers[k % exp.teacher_width_multipliers.len()];
            let mut arch = vec![input_dim];
            for &h in &exp.teacher_hidden {
                arch.push(((h as f64 * m).round() as usize).max(1));
            }
            arch.push(classes);
            arch
        })
        .collect()
}

fn student_arch(exp: &Experiment, input_dim: usize, classes: usize) -> Vec<usize> {
    let mut arch = vec![input_dim];
    arch.extend_from_slice(&exp.student_hidden);
    arch.push(classes);
    arch
}

/// Phase 1: resolve the distillation configuration once per experiment.
pub fn resolve_config(
    exp: &Experiment,
    pcfg: &PipelineConfig,
    meta: &MetaFeatures,
    history: Option<&HistoryStore>,
) -> Result<(DistillConfig, ConfigProvenance)> {
    if let ConfigChoice::Manual(c) = &exp.config {
        c.validate()?;
        return Ok((c.clone(), ConfigProvenance::Manual));
    }
    if pcfg.is_ablated(Component::AdaptConf) {
        // Fixed hyperparameters for the ablated manager: T = 4, alpha = 0.5.
        return Ok((
            DistillConfig {
                t0: 4.0,
                alpha: 0.5,
                lr: 0.05,
                epochs: meta::default_config().epochs,
            },
            ConfigProvenance::Ablated,
        ));
    }
    match history {
        Some(store) => meta::recommend_config(store, meta, mix(pcfg.master_seed, 7001)),
        None => Ok((meta::default_config(), ConfigProvenance::ColdStart)),
    }
}

fn rep_seed_for(master_seed: u64, rep: usize) -> u64 {
    mix(master_seed, 0x5EED_0000 + rep as u64)
}

/// One repetition: teachers, chain, ensemble, metrics.
#[allow(clippy::too_many_arguments)]
fn run_single(
    exp: &Experiment,
    pcfg: &PipelineConfig,
    prepared: &PreparedData,
    config: &DistillConfig,
    rep: usize,
    cache: Option<&mut CacheStore>,
) -> Result<SingleRun> {
    let rep_start = Instant::now();
    let rep_seed = rep_seed_for(pcfg.master_seed, rep);
    let fit = &prepared.fit;
    let val = &prepared.val;
    let test = &prepared.test;
    let classes = fit.class_count();
    let input_dim = fit.dim();
    let mut cache = cache;

    // Phase 2a: teachers.
    let teacher_archs = teacher_architectures(exp, input_dim, classes);
    let specs: Vec<TeacherSpec> = teacher_archs
        .iter()
        .enumerate()
        .map(|(k, arch)| TeacherSpec {
            layer_sizes: arch.clone(),
            epochs: exp.teacher_epochs,
            lr: exp.teacher_lr,
            seed: match &exp.teacher_seeds {
                Some(seeds) => mix(seeds[k], rep as u64),
                None => mix(rep_seed, k as u64),
            },
        })
        .collect();
    let phase = train_teachers_parallel(
        &specs,
        pcfg,
        fit,
        exp.batch_size,
        exp.momentum,
        cache.as_deref_mut(),
    )?;
    let teacher_phase_secs = phase.wall_secs;
    let teacher_cached: Vec<bool> = phase.teachers.iter().map(|t| t.cached).collect();
    let teachers: Vec<Model> = phase.teachers.into_iter().map(|t| t.model).collect();
    let primary = teachers[0].clone();
    let teacher_val_acc = eval::accuracy(&primary, val)?;
    let teacher_test_acc = eval::accuracy(&primary, test)?;

    // Phase 2b: chain plus final distillation.
    let distill_start = Instant::now();
    let multi_teach = !pcfg.is_ablated(Component::MultiTeach);
    let meta_temp = !pcfg.is_ablated(Component::MetaTemp);
    let other_teachers: Vec<Model> = teachers[1..].to_vec();
    let mut stage_trainer = PipelineStageTrainer {
        fit,
        val,
        config,
        exp,
        rep_seed,
        multi_teach,
        meta_temp,
        other_teachers: &other_teachers,
        cache: cache.as_deref_mut(),
        weight_stats: Vec::new(),
        temperatures: Vec::new(),
    };
    let student_layers = student_arch(exp, input_dim, classes);
    let chain = if let Some(manual) = &exp.manual_chain {
        build_manual_chain(
            primary.clone(),
            teacher_val_acc,
            manual,
            &student_layers,
            &mut stage_trainer,
        )?
    } else {
        let template: Vec<f64> = exp.teacher_hidden.iter().map(|&h| h as f64).collect();
        let mut spec = ChainSpec::new(student_layers.clone(), template);
        spec.epsilon = exp.chain_epsilon;
        spec.max_intermediates = if pcfg.is_ablated(Component::ProgChain) {
            0
        } else {
            exp.chain_max_intermediates
        };
        chain::build_chain(primary.clone(), teacher_val_acc, &spec, &mut stage_trainer)?
    };
    let weight_stats = std::mem::take(&mut stage_trainer.weight_stats);
    let temperatures = std::mem::take(&mut stage_trainer.temperatures);
    let distill_phase_secs = distill_start.elapsed().as_secs_f64();

    // Phase 3: evaluation and embedding export data.
    let student = chain.student();
    let student_test_acc = eval::accuracy(student, test)?;
    let retention_pct = eval::retention(student_test_acc, teacher_test_acc)?;
    let compression = eval::compression_ratio(primary.param_count(), student.param_count());
    let (_, embeddings) = student.forward_with_penultimate(test.features())?;
    let silhouette = eval::silhouette(&embeddings, test.labels(), mix(pcfg.master_seed, 9001))?;
    let total_secs = rep_start.elapsed().as_secs_f64();
    let efficiency = eval::efficiency(student_test_acc * 100.0, total_secs.max(1e-9))?;

    let rejected_stage = chain
        .trained_not_appended
        .as_ref()
        .map(|(_, record)| record.clone());

    Ok(SingleRun {
        rep,
        rep_seed,
        teacher_val_accuracy: teacher_val_acc,
        teacher_test_accuracy: teacher_test_acc,
        student_test_accuracy: student_test_acc,
        retention_pct,
        compression_ratio: compression,
        silhouette,
        teacher_phase_secs,
        distill_phase_secs,
        total_secs,
        efficiency,
        teacher_cached,
        stages: chain.records.clone(),
        rejected_stage,
        weight_stats,
        temperatures,
        embeddings: Some((embeddings, test.labels().to_vec())),
    })
}

/// The full three-phase flow over all repetitions. Per-repetition failures
/// are collected into the report rather than aborting the batch.
pub fn run_hpmkd(exp: &Experiment, pcfg: &PipelineConfig, env: &RunEnv) -> Result<RunReport> {
    exp.validate()?;
    let config_start = Instant::now();
    let prepared = prepare_data(exp)?;
    let classes = prepared.fit.class_count();
    let input_dim = prepared.fit.dim();
    let teacher_archs = teacher_architectures(exp, input_dim, classes);
    let meta = MetaFeatures::extract(
        &prepared.fit,
        &teacher_archs[0],
        &student_arch(exp, input_dim, classes),
    );

    let use_cache = !pcfg.is_ablated(Component::Memory) && env.cache_dir.is_some();
    let mut cache = match (&env.cache_dir, use_cache) {
        (Some(dir), true) => Some(CacheStore::open(dir)?),
        _ => None,
    };
    let mut history = match &env.history_path {
        Some(path) => Some(HistoryStore::open(path)?),
        None => None,
    };

    let (config, provenance) = resolve_config(exp, pcfg, &meta, history.as_ref())?;
    let config_phase_secs = config_start.elapsed().as_secs_f64();

    let mut runs = Vec::with_capacity(exp.repetitions);
    let mut failures = Vec::new();
    for rep in 0..exp.repetitions {
        match run_single(exp, pcfg, &prepared, &config, rep, cache.as_mut()) {
            Ok(single) => {
                if let Some(store) = history.as_mut() {
                    store.record(HistoryEntry {
                        meta: meta.clone(),
                        config: config.clone(),
                        accuracy: single.student_test_accuracy,
                    })?;
                }
                runs.push(single);
            }
            Err(e) => failures.push((rep, e.to_string())),
        }
    }

    Ok(RunReport {
        experiment_name: exp.name.clone(),
        ablation: pcfg.ablation.clone(),
        workers: pcfg.workers,
        master_seed: pcfg.master_seed,
        config,
        provenance,
        meta,
        config_phase_secs,
        runs,
        failures,
        cache_stats: cache.map(|c| c.stats().clone()).unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(id: usize, cost: f64) -> Task {
        Task {
            id,
            kind: TaskKind::TeacherTrain,
            cost_estimate: cost,
        }
    }

    #[test]
    fn single_worker_gets_descending_order() {
        let tasks: Vec<Task> = [3.0, 7.0, 5.0]
            .iter()
            .enumerate()
            .map(|(i, &c)| task(i, c))
            .collect();
        let a = schedule_tasks(&tasks, 1);
        assert_eq!(a, vec![vec![1, 2, 0]]);
    }

    #[test]
    fn lpt_known_makespan() {
        // Costs [5,4,3,3,2] on two workers: optimum makespan is 9.
        let tasks: Vec<Task> = [5.0, 4.0, 3.0, 3.0, 2.0]
            .iter()
            .enumerate()
            .map(|(i, &c)| task(i, c))
            .collect();
        let a = schedule_tasks(&tasks, 2);
        let load = |ids: &[usize]| -> f64 { ids.iter().map(|&i| tasks[i].cost_estimate).sum() };
        let makespan = a.iter().map(|ids| load(ids)).fold(0.0, f64::max);
        assert_eq!(makespan, 9.0);
    }

    #[test]
    fn equal_tasks_spread_one_per_worker() {
        let tasks: Vec<Task> = (0..4).map(|i| task(i, 2.0)).collect();
        let a = schedule_tasks(&tasks, 4);
        assert!(a.iter().all(|ids| ids.len() == 1));
        // Deterministic tie-breaks: ids in order.
        assert_eq!(a, vec![vec![0], vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn lpt_matches_brute_force_on_small_instances() {
        use crate::rng::SplitMix64;
        let mut rng = SplitMix64::new(77);
        for _ in 0..50 {
            let n = 2 + rng.below(6);
            let costs: Vec<f64> = (0..n).map(|_| (1 + rng.below(9)) as f64).collect();
            let tasks: Vec<Task> = costs.iter().enumerate().map(|(i, &c)| task(i, c)).collect();
            let a = schedule_tasks(&tasks, 2);
            let makespan = a
                .iter()
                .map(|ids| ids.iter().map(|&i| costs[i]).sum::<f64>())
                .fold(0.0, f64::max);
            // Brute force over all 2^n assignments.
            let mut best = f64::INFINITY;
            for mask in 0..(1u32 << n) {
                let mut l0 = 0.0;
                let mut l1 = 0.0;
                for (i, &c) in costs.iter().enumerate() {
                    if mask & (1 << i) == 0 {
                        l0 += c;
                    } else {
                        l1 += c;
                    }
                }
                best = best.min(l0.max(l1));
            }
            // LPT is within 7/6 of optimal for two machines.
            assert!(
                makespan <= best * 7.0 / 6.0 + 1e-9,
                "makespan {makespan} vs optimum {best}"
            );
        }
    }

    #[test]
    fn component_names_roundtrip() {
        for c in Component::ALL {
            let parsed: Component = c.name().parse().unwrap();
            assert_eq!(parsed, c);
        }
        assert!("bogus".parse::<Component>().is_err());
    }

    #[test]
    fn parallel_ablation_pins_workers() {
        let mut pcfg = PipelineConfig {
            workers: 8,
            master_seed: 0,
            ablation: BTreeSet::new(),
        };
        assert_eq!(pcfg.effective_workers(), 8);
        pcfg.ablation.insert(Component::Parallel);
        assert_eq!(pcfg.effective_workers(), 1);
    }
}
