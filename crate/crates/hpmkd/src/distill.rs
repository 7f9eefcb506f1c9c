//! Distillation losses and the adaptive temperature scheduler.
//!
//! The combined loss blends hard-label cross-entropy with a tempered
//! KL term against teacher soft targets:
//!
//! ```text
//! L = alpha * CE(y, softmax(z_s)) + (1 - alpha) * T^2 * KL(p_T || softmax(z_s / T))
//! ```
//!
//! KL uses natural log with the teacher as the reference distribution and
//! is averaged over the batch.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::log_softmax_temp;

/// Hyperparameter bundle for one distillation run.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    /// Initial temperature.
    pub t0: f64,
    /// Weight of the hard-label term, in [0, 1].
    pub alpha: f64,
    pub lr: f64,
    pub epochs: usize,
}

impl DistillConfig {
    pub fn new(t0: f64, alpha: f64, lr: f64, epochs: usize) -> Result<Self> {
        let c = Self {
            t0,
            alpha,
            lr,
            epochs,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0) || !self.t0.is_finite() {
            return Err(Error::InvalidTemperature(self.t0));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be positive".into()));
        }
        Ok(())
    }

    /// Fixed-precision fragment used by cache hashing; field order and
    /// formatting are part of the on-disk contract.
    pub fn canonical_fragment(&self) -> String {
        format!(
            "T0={:.6}|alpha={:.6}|lr={:.6}|epochs={}",
            self.t0, self.alpha, self.lr, self.epochs
        )
    }
}

/// Combined distillation loss and its gradient on the student logits.
///
/// `teacher_probs` are the teacher's already-tempered probabilities at the
/// same `temperature`. Every row must sum to 1 within 1e-6.
pub fn kd_loss(
    student_logits: &Matrix,
    teacher_probs: &Matrix,
    labels: &[usize],
    temperature: f64,
    alpha: f64,
) -> Result<(f64, Matrix)> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidTemperature(temperature));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let (n, classes) = (student_logits.rows(), student_logits.cols());
    if teacher_probs.rows() != n || teacher_probs.cols() != classes {
        return Err(Error::Shape(format!(
            "teacher probs {}x{} vs student logits {}x{}",
            teacher_probs.rows(),
            teacher_probs.cols(),
            n,
            classes
        )));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    for i in 0..n {
        let row = teacher_probs.row(i);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidDistribution(format!(
                "teacher row {i} sums to {sum}"
            )));
        }
        if labels[i] >= classes {
            return Err(Error::InvalidInput(format!(
                "label {} out of range for {classes} classes",
                labels[i]
            )));
        }
    }

    let nf = n as f64;
    let mut loss_ce = 0.0;
    let mut loss_kl = 0.0;
    let mut grad = Matrix::zeros(n, classes);
    for i in 0..n {
        let z = student_logits.row(i);
        let p_teacher = teacher_probs.row(i);
        let log_hard = log_softmax_temp(z, 1.0);
        let log_soft = log_softmax_temp(z, temperature);
        loss_ce -= log_hard[labels[i]];
        for c in 0..classes {
            let p = p_teacher[c];
            if p > 0.0 {
                loss_kl += p * (p.ln() - log_soft[c]);
            }
        }
        let g = grad.row_mut(i);
        for c in 0..classes {
            let hard = log_hard[c].exp() - if c == labels[i] { 1.0 } else { 0.0 };
            let soft = log_soft[c].exp() - p_teacher[c];
            g[c] = (alpha * hard + (1.0 - alpha) * temperature * soft) / nf;
        }
    }
    let loss = alpha * loss_ce / nf + (1.0 - alpha) * temperature * temperature * loss_kl / nf;
    Ok((loss, grad))
}

/// Mean cross-entropy against hard labels plus its logit gradient.
/// Equivalent to `kd_loss` at alpha = 1 without requiring teacher input.
pub fn ce_loss(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (n, classes) = (logits.rows(), logits.cols());
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    let nf = n as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(n, classes);
    for i in 0..n {
        let log_p = log_softmax_temp(logits.row(i), 1.0);
        loss -= log_p[labels[i]];
        let g = grad.row_mut(i);
        for c in 0..classes {
            g[c] = (log_p[c].exp() - if c == labels[i] { 1.0 } else { 0.0 }) / nf;
        }
    }
    Ok((loss / nf, grad))
}

/// Scaled entropy of a weight distribution: beta * H(w), H in nats.
///
/// The multi-teacher trainer subtracts this from its total loss so that
/// minimizing the loss rewards high-entropy (diverse) teacher weights.
pub fn entropy_term(weights: &[f64], beta: f64) -> Result<f64> {
    if beta < 0.0 || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "beta must be nonnegative, got {beta}"
        )));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidDistribution(format!(
            "weights sum to {sum}"
        )));
    }
    let h: f64 = weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| -w * w.ln())
        .sum();
    Ok(beta * h)
}

/// Loss-driven temperature schedule:
///
/// ```text
/// T(t) = T0 * (1 + gamma * |L(t) - L(t-1)| / L(t-1))
/// ```
///
/// Updated once per epoch on the mean epoch loss; before the first update
/// the temperature is T0.
#[derive(Debug, Clone)]
pub struct TemperatureScheduler {
    t0: f64,
    gamma: f64,
    prev_loss: Option<f64>,
    current: f64,
}

pub const DEFAULT_T0: f64 = 4.0;
pub const DEFAULT_GAMMA: f64 = 0.5;

impl TemperatureScheduler {
    pub fn new(t0: f64, gamma: f64) -> Result<Self> {
        if !(t0 > 0.0) || !t0.is_finite() {
            return Err(Error::InvalidTemperature(t0));
        }
        if gamma < 0.0 || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "gamma must be nonnegative, got {gamma}"
            )));
        }
        Ok(Self {
            t0,
            gamma,
            prev_loss: None,
            current: t0,
        })
    }

    pub fn current(&self) -> f64 {
        self.current
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Feeds one epoch's mean loss and returns the temperature for the
    /// next epoch.
    pub fn next_temperature(&mut self, current_loss: f64) -> Result<f64> {
        if !(current_loss > 0.0) || !current_loss.is_finite() {
            return Err(Error::InvalidLoss(current_loss));
        }
        let t = match self.prev_loss {
            None => self.t0,
            Some(prev) => self.t0 * (1.0 + self.gamma * (current_loss - prev).abs() / prev),
        };
        self.prev_loss = Some(current_loss);
        self.current = t;
        Ok(t)
    }
}
