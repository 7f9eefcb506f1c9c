//! Progressive distillation chain: automatic construction of intermediate
//! models between teacher and student.
//!
//! Sizing follows the geometric mean of the current and target parameter
//! counts; the loop runs while the current model still has more than twice
//! the student's parameters, and stops early when a freshly distilled
//! intermediate fails the improvement threshold.

use crate::error::{Error, Result};
use crate::nn::{arch_param_count, Model};

#[derive(Debug, Clone)]
pub struct ChainSpec {
    /// Minimum improvement required to keep an intermediate.
    pub epsilon: f64,
    /// Safety cap on intermediate count; geometric sizing rarely needs
    /// more than a handful.
    pub max_intermediates: usize,
    /// Student architecture including input and output layers.
    pub student_layers: Vec<usize>,
    /// Hidden-layer width ratios used to realize intermediate targets.
    pub template: Vec<f64>,
}

pub const DEFAULT_EPSILON: f64 = 0.005;
pub const DEFAULT_MAX_INTERMEDIATES: usize = 4;

impl ChainSpec {
    pub fn new(student_layers: Vec<usize>, template: Vec<f64>) -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            max_intermediates: DEFAULT_MAX_INTERMEDIATES,
            student_layers,
            template,
        }
    }
}

/// Next intermediate size: round(sqrt(curr * student)).
pub fn plan_next_size(curr_params: u64, student_params: u64) -> u64 {
    debug_assert!(curr_params >= student_params && student_params >= 1);
    (curr_params as f64 * student_params as f64).sqrt().round() as u64
}

/// The full planned size sequence, assuming each intermediate realizes its
/// planned count exactly; stops when the ratio drops to 2 or below.
pub fn plan_size_sequence(
    teacher_params: u64,
    student_params: u64,
    max_intermediates: usize,
) -> Vec<u64> {
    let mut sizes = Vec::new();
    let mut curr = teacher_params;
    while curr as f64 / student_params as f64 > 2.0 && sizes.len() < max_intermediates {
        curr = plan_next_size(curr, student_params);
        sizes.push(curr);
    }
    sizes
}

/// Scales the template's hidden widths by a common factor so the realized
/// parameter count comes as close as possible to `target_params`; widths
/// clamp at 1. Targets below the all-ones architecture are infeasible.
pub fn realize_architecture(
    target_params: u64,
    input_dim: usize,
    class_count: usize,
    template: &[f64],
) -> Result<Vec<usize>> {
    if template.is_empty() || template.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::InvalidParameter(
            "template ratios must be positive".into(),
        ));
    }
    let arch_for = |scale: f64| -> Vec<usize> {
        let mut layers = Vec::with_capacity(template.len() + 2);
        layers.push(input_dim);
        for &r in template {
            layers.push(((r * scale).round() as usize).max(1));
        }
        layers.push(class_count);
        layers
    };
    let minimal = arch_param_count(&arch_for(0.0));
    if target_params < minimal {
        return Err(Error::InfeasibleSize {
            target: target_params,
            input_dim,
            class_count,
        });
    }

    // param_count(arch_for(s)) is nondecreasing in s; bracket then bisect.
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while arch_param_count(&arch_for(hi)) < target_params {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::InfeasibleSize {
                target: target_params,
                input_dim,
                class_count,
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if arch_param_count(&arch_for(mid)) < target_params {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Two candidates straddle the target; keep the closer one.
    let below = arch_for(lo);
    let above = arch_for(hi);
    let d_below = target_params.abs_diff(arch_param_count(&below));
    let d_above = target_params.abs_diff(arch_param_count(&above));
    Ok(if d_below < d_above { below } else { above })
}

/// Improvement of a candidate intermediate over the capacity-scaled
/// accuracy of the current model:
///
/// ```text
/// delta = acc_next - acc_curr * (p_next / p_curr)
/// ```
pub fn improvement_delta(acc_next: f64, acc_curr: f64, p_next: u64, p_curr: u64) -> f64 {
    debug_assert!(p_curr >= p_next && p_next >= 1);
    acc_next - acc_curr * (p_next as f64 / p_curr as f64)
}

/// What the pipeline reports for each chain stage.
#[derive(Debug, Clone)]
pub struct StageRecord {
    pub role: StageRole,
    pub layer_sizes: Vec<usize>,
    pub params: u64,
    pub val_accuracy: f64,
    /// Improvement threshold input; absent for the teacher stage.
    pub delta: Option<f64>,
    /// Unscaled accuracy change vs the previous stage, for diagnostics.
    pub raw_drop: Option<f64>,
    pub wall_secs: f64,
    pub cached: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageRole {
    Teacher,
    Intermediate,
    Student,
}

impl std::fmt::Display for StageRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StageRole::Teacher => "teacher",
            StageRole::Intermediate => "intermediate",
            StageRole::Student => "student",
        })
    }
}

/// Ordered teacher -> intermediates -> student sequence with per-stage
/// metrics. A trained-but-rejected intermediate is kept for reuse.
#[derive(Debug)]
pub struct Chain {
    pub models: Vec<Model>,
    pub records: Vec<StageRecord>,
    pub trained_not_appended: Option<(Model, StageRecord)>,
}

impl Chain {
    pub fn student(&self) -> &Model {
        self.models.last().unwrap()
    }

    pub fn intermediate_count(&self) -> usize {
        self.models.len().saturating_sub(2)
    }
}

/// A freshly distilled stage, as produced by the pipeline's trainer.
#[derive(Debug)]
pub struct TrainedStage {
    pub model: Model,
    pub val_accuracy: f64,
    pub wall_secs: f64,
    pub cached: bool,
}

/// Trains one distillation stage; implemented by the pipeline so the chain
/// logic stays independent of caching, scheduling, and the ensemble.
pub trait StageTrainer {
    fn train_stage(
        &mut self,
        teacher: &Model,
        arch: &[usize],
        role: StageRole,
        stage_index: usize,
    ) -> Result<TrainedStage>;
}

/// Builds the chain: plans intermediate sizes by geometric mean while the
/// current/student parameter ratio exceeds 2, distills each candidate,
/// keeps it only if the improvement clears `epsilon`, then distills the
/// student from the last kept stage.
pub fn build_chain(
    teacher: Model,
    teacher_val_acc: f64,
    spec: &ChainSpec,
    trainer: &mut dyn StageTrainer,
) -> Result<Chain> {
    let student_params = arch_param_count(&spec.student_layers);
    let input_dim = teacher.input_dim();
    let class_count = teacher.class_count();
    if spec.student_layers[0] != input_dim
        || *spec.student_layers.last().unwrap() != class_count
    {
        return Err(Error::InvalidSpec(format!(
            "student layers {:?} do not match teacher io ({input_dim}, {class_count})",
            spec.student_layers
        )));
    }

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
    let mut trained_not_appended = None;
    let mut stage_index = 1;

    while models.last().unwrap().param_count() as f64 / student_params as f64 > 2.0
        && models.len() - 1 < spec.max_intermediates
    {
        let curr = models.last().unwrap();
        let curr_params = curr.param_count();
        let curr_acc = records.last().unwrap().val_accuracy;
        let target = plan_next_size(curr_params, student_params);
        let arch = realize_architecture(target, input_dim, class_count, &spec.template)
            .map_err(|e| Error::ChainStage {
                stage: stage_index,
                source: Box::new(e),
            })?;
        let stage = trainer
            .train_stage(curr, &arch, StageRole::Intermediate, stage_index)
            .map_err(|e| Error::ChainStage {
                stage: stage_index,
                source: Box::new(e),
            })?;
        let p_next = stage.model.param_count();
        if p_next >= curr_params {
            return Err(Error::ChainStage {
                stage: stage_index,
                source: Box::new(Error::InvalidSpec(format!(
                    "intermediate did not shrink: {p_next} >= {curr_params}"
                ))),
            });
        }
        let delta = improvement_delta(stage.val_accuracy, curr_acc, p_next, curr_params);
        let record = StageRecord {
            role: StageRole::Intermediate,
            layer_sizes: stage.model.layer_sizes().to_vec(),
            params: p_next,
            val_accuracy: stage.val_accuracy,
            delta: Some(delta),
            raw_drop: Some(stage.val_accuracy - curr_acc),
            wall_secs: stage.wall_secs,
            cached: stage.cached,
        };
        if delta < spec.epsilon {
            trained_not_appended = Some((stage.model, record));
            break;
        }
        models.push(stage.model);
        records.push(record);
        stage_index += 1;
    }

    let curr_params = models.last().unwrap().param_count();
    let curr_acc = records.last().unwrap().val_accuracy;
    let stage = trainer
        .train_stage(
            models.last().unwrap(),
            &spec.student_layers,
            StageRole::Student,
            stage_index,
        )
        .map_err(|e| Error::ChainStage {
            stage: stage_index,
            source: Box::new(e),
        })?;
    let p_student = stage.model.param_count();
    records.push(StageRecord {
        role: StageRole::Student,
        layer_sizes: stage.model.layer_sizes().to_vec(),
        params: p_student,
        val_accuracy: stage.val_accuracy,
        delta: Some(improvement_delta(
            stage.val_accuracy,
            curr_acc,
            p_student.min(curr_params),
            curr_params,
        )),
        raw_drop: Some(stage.val_accuracy - curr_acc),
        wall_secs: stage.wall_secs,
        cached: stage.cached,
    });
    models.push(stage.model);

    Ok(Chain {
        models,
        records,
        trained_not_appended,
    })
}
