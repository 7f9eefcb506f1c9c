//! Attention-weighted multi-teacher ensemble.
//!
//! Each sample gets per-teacher attention scores from a small tanh layer
//! over the concatenated teacher logits and input features; softmaxed
//! scores weight the teachers' tempered soft targets, and an entropy
//! reward on the batch-mean weights keeps the ensemble from collapsing
//! onto one teacher. Student and attention parameters train jointly;
//! teachers stay frozen.

use crate::data::Dataset;
use crate::distill::{entropy_term, kd_loss, DistillConfig, TemperatureScheduler};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{log_softmax_temp, softmax_temp, softmax_temp_rows, train_step, Batch, Model, OptState};
use crate::rng::SplitMix64;
use crate::trainer::epoch_batches;

pub const DEFAULT_HIDDEN_DIM: usize = 64;
pub const DEFAULT_BETA: f64 = 0.1;

/// Learned attention parameters: a tanh layer `hidden x (classes + dim)`
/// and a scoring vector.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    /// Row-major (hidden_dim x (class_count + input_dim)).
    pub w_mat: Matrix,
    pub w_vec: Vec<f64>,
    pub beta: f64,
}

impl AttentionParams {
    /// Seeded init matching the network convention: uniform in
    /// ±sqrt(6 / (fan_in + fan_out)).
    pub fn init(
        hidden_dim: usize,
        class_count: usize,
        input_dim: usize,
        beta: f64,
        seed: u64,
    ) -> Result<Self> {
        if hidden_dim == 0 || class_count == 0 {
            return Err(Error::InvalidSpec(
                "attention dims must be positive".into(),
            ));
        }
        if beta < 0.0 || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "beta must be nonnegative, got {beta}"
            )));
        }
        let in_dim = class_count + input_dim;
        let mut rng = SplitMix64::new(seed);
        let limit = (6.0 / (in_dim + hidden_dim) as f64).sqrt();
        let mut w = Vec::with_capacity(hidden_dim * in_dim);
        for _ in 0..hidden_dim * in_dim {
            w.push(rng.range_f64(-limit, limit));
        }
        let limit_v = (6.0 / (hidden_dim + 1) as f64).sqrt();
        let w_vec = (0..hidden_dim).map(|_| rng.range_f64(-limit_v, limit_v)).collect();
        Ok(Self {
            w_mat: Matrix::from_vec(hidden_dim, in_dim, w),
            w_vec,
            beta,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_mat.rows()
    }

    fn concat_dim(&self) -> usize {
        self.w_mat.cols()
    }
}

/// Per-teacher scores for one sample: `e_k = w . tanh(W [logits_k ++ x])`.
pub fn attention_scores(
    teacher_logits: &[Vec<f64>],
    features: &[f64],
    params: &AttentionParams,
) -> Result<Vec<f64>> {
    teacher_logits
        .iter()
        .map(|z| {
            let h = attention_hidden(z, features, params)?;
            Ok(params.w_vec.iter().zip(&h).map(|(w, h)| w * h).sum())
        })
        .collect()
}

fn attention_hidden(logits: &[f64], features: &[f64], params: &AttentionParams) -> Result<Vec<f64>> {
    if logits.len() + features.len() != params.concat_dim() {
        return Err(Error::Shape(format!(
            "attention input {} + {} does not match matrix width {}",
            logits.len(),
            features.len(),
            params.concat_dim()
        )));
    }
    let in_dim = params.concat_dim();
    let mut h = Vec::with_capacity(params.hidden_dim());
    for r in 0..params.hidden_dim() {
        let row = &params.w_mat.data()[r * in_dim..(r + 1) * in_dim];
        let mut sum = 0.0;
        for (w, z) in row.iter().zip(logits.iter().chain(features.iter())) {
            sum += w * z;
        }
        h.push(sum.tanh());
    }
    Ok(h)
}

/// Softmax over attention scores; stable under large magnitudes.
pub fn attention_weights(scores: &[f64]) -> Vec<f64> {
    debug_assert!(scores.iter().all(|s| s.is_finite()));
    let max = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut out: Vec<f64> = scores.iter().map(|&e| (e - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Convex combination of per-teacher tempered softmaxes.
pub fn ensemble_soft_targets(
    teacher_logits: &[Vec<f64>],
    weights: &[f64],
    temperature: f64,
) -> Result<Vec<f64>> {
    if teacher_logits.is_empty() || teacher_logits.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} teachers vs {} weights",
            teacher_logits.len(),
            weights.len()
        )));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidDistribution(format!(
            "ensemble weights sum to {sum}"
        )));
    }
    let classes = teacher_logits[0].len();
    let mut out = vec![0.0; classes];
    for (z, &w) in teacher_logits.iter().zip(weights) {
        let p = softmax_temp(z, temperature)?;
        for (o, pv) in out.iter_mut().zip(&p) {
            *o += w * pv;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct MultiTeacherOptions {
    pub config: DistillConfig,
    pub momentum: f64,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub hidden_dim: usize,
    pub beta: f64,
    pub attention_seed: u64,
    /// Some(gamma) runs the loss-driven temperature schedule; None pins T0.
    pub scheduler_gamma: Option<f64>,
    /// Adds the entropy term to the loss instead of subtracting it
    /// (the collapse-prone sign); off by default.
    pub entropy_literal_sign: bool,
}

impl MultiTeacherOptions {
    pub fn new(config: DistillConfig, shuffle_seed: u64, attention_seed: u64) -> Self {
        Self {
            config,
            momentum: 0.9,
            batch_size: 256,
            shuffle_seed,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            beta: DEFAULT_BETA,
            attention_seed,
            scheduler_gamma: Some(crate::distill::DEFAULT_GAMMA),
            entropy_literal_sign: false,
        }
    }
}

/// Mean attention weight per teacher for one epoch.
#[derive(Debug, Clone)]
pub struct EpochWeightStats {
    pub epoch: usize,
    pub mean_weights: Vec<f64>,
    pub entropy: f64,
    pub temperature: f64,
    pub mean_loss: f64,
}

#[derive(Debug)]
pub struct MultiTeacherLog {
    pub weight_stats: Vec<EpochWeightStats>,
    pub epoch_losses: Vec<f64>,
    pub temperatures: Vec<f64>,
    pub attention: AttentionParams,
}

/// Joint loss for one batch, exactly as the trainer optimizes it; the
/// scalar twin of [`joint_loss_and_grads`] for finite-difference checks.
#[allow(clippy::too_many_arguments)]
pub fn multi_teacher_loss(
    student: &Model,
    teacher_logits: &[Matrix],
    params: &AttentionParams,
    features: &Matrix,
    labels: &[usize],
    temperature: f64,
    alpha: f64,
    entropy_literal_sign: bool,
) -> Result<f64> {
    joint_loss_and_grads(
        student,
        teacher_logits,
        params,
        features,
        labels,
        temperature,
        alpha,
        entropy_literal_sign,
    )
    .map(|j| j.loss)
}

/// Gradients of the joint batch loss.
#[derive(Debug)]
pub struct JointGrads {
    /// Total optimized loss: distillation term plus the entropy
    /// regularizer with its configured sign.
    pub loss: f64,
    /// The distillation component alone (drives the temperature schedule).
    pub kd_loss: f64,
    /// dLoss/d(student logits).
    pub student_grad: Matrix,
    pub attn_w_mat: Vec<f64>,
    pub attn_w_vec: Vec<f64>,
    /// Per-sample attention weights (batch x teachers).
    pub weights: Matrix,
    pub mean_weights: Vec<f64>,
}

/// Attention forward, ensemble targets, combined loss, and all gradients
/// for one batch. `teacher_logits` hold the batch rows per teacher.
#[allow(clippy::too_many_arguments)]
pub fn joint_loss_and_grads(
    student: &Model,
    teacher_logits: &[Matrix],
    params: &AttentionParams,
    features: &Matrix,
    labels: &[usize],
    temperature: f64,
    alpha: f64,
    entropy_literal_sign: bool,
) -> Result<JointGrads> {
    let nb = features.rows();
    let k = teacher_logits.len();
    if k == 0 {
        return Err(Error::InvalidSpec("ensemble needs at least one teacher".into()));
    }
    let classes = teacher_logits[0].cols();
    let tempered: Vec<Matrix> = teacher_logits
        .iter()
        .map(|z| softmax_temp_rows(z, temperature))
        .collect::<Result<_>>()?;

    let mut hiddens: Vec<Vec<f64>> = vec![Vec::new(); nb * k];
    let mut weights = Matrix::zeros(nb, k);
    let mut p = Matrix::zeros(nb, classes);
    for bi in 0..nb {
        let x = features.row(bi);
        let mut scores = Vec::with_capacity(k);
        for (kk, z) in teacher_logits.iter().enumerate() {
            let h = attention_hidden(z.row(bi), x, params)?;
            scores.push(params.w_vec.iter().zip(&h).map(|(w, h)| w * h).sum());
            hiddens[bi * k + kk] = h;
        }
        let w = attention_weights(&scores);
        weights.row_mut(bi).copy_from_slice(&w);
        let row = p.row_mut(bi);
        for (kk, &wk) in w.iter().enumerate() {
            for c in 0..classes {
                row[c] += wk * tempered[kk].get(bi, c);
            }
        }
    }

    let student_logits = student.forward(features)?;
    let (kd, student_grad) = kd_loss(&student_logits, &p, labels, temperature, alpha)?;
    let mean_weights: Vec<f64> = (0..k)
        .map(|kk| (0..nb).map(|bi| weights.get(bi, kk)).sum::<f64>() / nb as f64)
        .collect();
    let reg = entropy_term(&mean_weights, params.beta)?;
    let loss = if entropy_literal_sign { kd + reg } else { kd - reg };

    // Attention backward.
    let in_dim = params.concat_dim();
    let hidden = params.hidden_dim();
    let nf = nb as f64;
    let kl_scale = (1.0 - alpha) * temperature * temperature / nf;
    // The entropy reward, subtracted from the loss, contributes
    // +beta (ln w + 1) to d(loss)/d(mean weight).
    let ent_sign = if entropy_literal_sign { -1.0 } else { 1.0 };
    let mut g_wmat = vec![0.0; params.w_mat.data().len()];
    let mut g_wvec = vec![0.0; params.w_vec.len()];
    for bi in 0..nb {
        let log_q = log_softmax_temp(student_logits.row(bi), temperature);
        let p_row = p.row(bi);
        let mut g_a = vec![0.0; k];
        for kk in 0..k {
            let mut kl_part = 0.0;
            for c in 0..classes {
                let pc = p_row[c];
                if pc > 0.0 {
                    kl_part += tempered[kk].get(bi, c) * (pc.ln() - log_q[c]);
                }
            }
            // The +1 from d(p ln p)/dp is constant across k and cancels
            // through the softmax; kept for exactness.
            g_a[kk] = kl_scale * (kl_part + 1.0);
            let mw = mean_weights[kk];
            if mw > 0.0 {
                g_a[kk] += ent_sign * params.beta * (mw.ln() + 1.0) / nf;
            }
        }
        let w_row = weights.row(bi);
        let dot: f64 = w_row.iter().zip(&g_a).map(|(w, g)| w * g).sum();
        for kk in 0..k {
            let de = w_row[kk] * (g_a[kk] - dot);
            if de == 0.0 {
                continue;
            }
            let h = &hiddens[bi * k + kk];
            let z = teacher_logits[kk].row(bi);
            let x = features.row(bi);
            for r in 0..hidden {
                g_wvec[r] += de * h[r];
                let dpre = de * params.w_vec[r] * (1.0 - h[r] * h[r]);
                if dpre == 0.0 {
                    continue;
                }
                let row = &mut g_wmat[r * in_dim..(r + 1) * in_dim];
                for (slot, u) in row.iter_mut().zip(z.iter().chain(x.iter())) {
                    *slot += dpre * u;
                }
            }
        }
    }

    Ok(JointGrads {
        loss,
        kd_loss: kd,
        student_grad,
        attn_w_mat: g_wmat,
        attn_w_vec: g_wvec,
        weights,
        mean_weights,
    })
}

/// Distills an ensemble of frozen teachers into the student, learning
/// per-sample attention weights jointly with the student parameters.
pub fn distill_multi(
    student: &mut Model,
    teachers: &[Model],
    data: &Dataset,
    opts: &MultiTeacherOptions,
) -> Result<MultiTeacherLog> {
    if teachers.is_empty() {
        return Err(Error::InvalidSpec("ensemble needs at least one teacher".into()));
    }
    let input_dim = teachers[0].input_dim();
    let classes = teachers[0].class_count();
    for t in teachers {
        if t.input_dim() != input_dim || t.class_count() != classes {
            return Err(Error::InvalidSpec(
                "all teachers must share input dim and class count".into(),
            ));
        }
    }
    opts.config.validate()?;
    let k = teachers.len();
    let n = data.len();

    // Teachers are frozen: logits over the whole set are computed once.
    let teacher_logits: Vec<Matrix> = teachers
        .iter()
        .map(|t| t.forward(data.features()))
        .collect::<Result<_>>()?;

    let mut params = AttentionParams::init(
        opts.hidden_dim,
        classes,
        input_dim,
        opts.beta,
        opts.attention_seed,
    )?;
    let mut opt = OptState::new(student, opts.config.lr, opts.momentum)?;
    let mut vel_w = vec![0.0; params.w_mat.data().len()];
    let mut vel_v = vec![0.0; params.w_vec.len()];
    let mut scheduler = match opts.scheduler_gamma {
        Some(gamma) => Some(TemperatureScheduler::new(opts.config.t0, gamma)?),
        None => None,
    };

    let mut weight_stats = Vec::with_capacity(opts.config.epochs);
    let mut epoch_losses = Vec::with_capacity(opts.config.epochs);
    let mut temperatures = Vec::with_capacity(opts.config.epochs);

    for epoch in 0..opts.config.epochs {
        let temperature = scheduler
            .as_ref()
            .map(|s| s.current())
            .unwrap_or(opts.config.t0);
        temperatures.push(temperature);

        let mut loss_sum = 0.0;
        let mut kd_loss_sum = 0.0;
        let mut epoch_weight_sums = vec![0.0; k];
        for batch_idx in epoch_batches(n, opts.batch_size, opts.shuffle_seed, epoch) {
            let nb = batch_idx.len();
            let batch = Batch::new(
                data.features().select_rows(&batch_idx),
                batch_idx.iter().map(|&i| data.labels()[i]).collect(),
            )?;
            let batch_logits: Vec<Matrix> = teacher_logits
                .iter()
                .map(|z| z.select_rows(&batch_idx))
                .collect();

            let grads = joint_loss_and_grads(
                student,
                &batch_logits,
                &params,
                &batch.features,
                &batch.labels,
                temperature,
                opts.config.alpha,
                opts.entropy_literal_sign,
            )?;

            // Student then attention updates, both SGD with momentum.
            train_step(student, &mut opt, &batch, &grads.student_grad)?;
            let lr = opts.config.lr;
            for ((pv, v), g) in params
                .w_mat
                .data_mut()
                .iter_mut()
                .zip(&mut vel_w)
                .zip(&grads.attn_w_mat)
            {
                *v = opts.momentum * *v + g;
                *pv -= lr * *v;
            }
            for ((pv, v), g) in params
                .w_vec
                .iter_mut()
                .zip(&mut vel_v)
                .zip(&grads.attn_w_vec)
            {
                *v = opts.momentum * *v + g;
                *pv -= lr * *v;
            }

            loss_sum += grads.loss * nb as f64;
            kd_loss_sum += grads.kd_loss * nb as f64;
            for (s, w) in epoch_weight_sums.iter_mut().zip(&grads.mean_weights) {
                *s += w * nb as f64;
            }
        }

        let mean_loss = loss_sum / n as f64;
        let mean_kd = kd_loss_sum / n as f64;
        let mean_weights: Vec<f64> = epoch_weight_sums.iter().map(|s| s / n as f64).collect();
        let entropy = entropy_term(&mean_weights, 1.0)?;
        weight_stats.push(EpochWeightStats {
            epoch,
            mean_weights,
            entropy,
            temperature,
            mean_loss,
        });
        epoch_losses.push(mean_loss);
        if let Some(s) = scheduler.as_mut() {
            // The schedule follows the positive distillation component; the
            // entropy reward can push the total loss to zero or below.
            s.next_temperature(mean_kd)?;
        }
    }

    Ok(MultiTeacherLog {
        weight_stats,
        epoch_losses,
        temperatures,
        attention: params,
    })
}
