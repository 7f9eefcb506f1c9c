//! Epoch-driven training loops: seeded shuffling, direct cross-entropy
//! training, and single-teacher distillation with the temperature
//! scheduler.

use crate::data::Dataset;
use crate::distill::{ce_loss, kd_loss, DistillConfig, TemperatureScheduler};
use crate::error::Result;
use crate::nn::{softmax_temp_rows, train_step, Batch, Model, OptState};
use crate::rng::{mix, SplitMix64};

/// Optional learning-rate decay at fixed epochs. Off by default; the
/// standard schedules fire past the usual epoch budgets here.
#[derive(Debug, Clone)]
pub struct MilestoneDecay {
    pub epochs: Vec<usize>,
    pub factor: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffles.
    pub shuffle_seed: u64,
    pub milestones: Option<MilestoneDecay>,
}

impl TrainOptions {
    pub fn new(lr: f64, epochs: usize, shuffle_seed: u64) -> Self {
        Self {
            lr,
            momentum: 0.9,
            epochs,
            batch_size: 256,
            shuffle_seed,
            milestones: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DistillLog {
    pub epoch_losses: Vec<f64>,
    /// Temperature used during each epoch.
    pub temperatures: Vec<f64>,
}

/// Seeded index batches for one epoch; the last short batch is kept.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::new(mix(seed, epoch as u64));
    rng.shuffle(&mut idx);
    idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

fn lr_for_epoch(base: f64, epoch: usize, milestones: &Option<MilestoneDecay>) -> f64 {
    match milestones {
        None => base,
        Some(m) => {
            let fired = m.epochs.iter().filter(|&&e| epoch >= e).count() as i32;
            base * m.factor.powi(fired)
        }
    }
}

/// Direct training on hard labels with mean cross-entropy.
pub fn train_cross_entropy(
    model: &mut Model,
    data: &Dataset,
    opts: &TrainOptions,
) -> Result<TrainLog> {
    let mut opt = OptState::new(model, opts.lr, opts.momentum)?;
    let mut epoch_losses = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        opt.set_learning_rate(lr_for_epoch(opts.lr, epoch, &opts.milestones));
        let mut loss_sum = 0.0;
        for batch_idx in epoch_batches(data.len(), opts.batch_size, opts.shuffle_seed, epoch) {
            let batch = Batch::new(
                data.features().select_rows(&batch_idx),
                batch_idx.iter().map(|&i| data.labels()[i]).collect(),
            )?;
            let logits = model.forward(&batch.features)?;
            let (loss, grad) = ce_loss(&logits, &batch.labels)?;
            train_step(model, &mut opt, &batch, &grad)?;
            loss_sum += loss * batch.len() as f64;
        }
        epoch_losses.push(loss_sum / data.len() as f64);
    }
    Ok(TrainLog { epoch_losses })
}

/// Distills `teacher` into `student` with the combined loss. When a
/// scheduler is supplied the temperature follows the loss trajectory,
/// otherwise it stays at `config.t0`. Teacher soft targets are recomputed
/// at the start of each epoch for the epoch's temperature.
pub fn distill_single(
    student: &mut Model,
    teacher: &Model,
    data: &Dataset,
    config: &DistillConfig,
    momentum: f64,
    batch_size: usize,
    shuffle_seed: u64,
    mut scheduler: Option<&mut TemperatureScheduler>,
) -> Result<DistillLog> {
    config.validate()?;
    let teacher_logits = teacher.forward(data.features())?;
    let mut opt = OptState::new(student, config.lr, momentum)?;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut temperatures = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let temperature = scheduler
            .as_deref()
            .map(|s| s.current())
            .unwrap_or(config.t0);
        temperatures.push(temperature);
        let teacher_probs = softmax_temp_rows(&teacher_logits, temperature)?;
        let mut loss_sum = 0.0;
        for batch_idx in epoch_batches(data.len(), batch_size, shuffle_seed, epoch) {
            let batch = Batch::new(
                data.features().select_rows(&batch_idx),
                batch_idx.iter().map(|&i| data.labels()[i]).collect(),
            )?;
            let probs = teacher_probs.select_rows(&batch_idx);
            let logits = student.forward(&batch.features)?;
            let (loss, grad) = kd_loss(&logits, &probs, &batch.labels, temperature, config.alpha)?;
            train_step(student, &mut opt, &batch, &grad)?;
            loss_sum += loss * batch.len() as f64;
        }
        let mean_loss = loss_sum / data.len() as f64;
        epoch_losses.push(mean_loss);
        if let Some(s) = scheduler.as_deref_mut() {
            s.next_temperature(mean_loss)?;
        }
    }
    Ok(DistillLog {
        epoch_losses,
        temperatures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::eval::accuracy;

    #[test]
    fn batches_cover_all_indices() {
        let batches = epoch_batches(10, 3, 42, 0);
        assert_eq!(batches.len(), 4);
        assert_eq!(batches.last().unwrap().len(), 1);
        let mut all: Vec<usize> = batches.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn batches_differ_across_epochs_but_not_runs() {
        assert_eq!(epoch_batches(20, 4, 1, 3), epoch_batches(20, 4, 1, 3));
        assert_ne!(epoch_batches(20, 4, 1, 3), epoch_batches(20, 4, 1, 4));
    }

    #[test]
    fn milestone_decay_applies() {
        let m = Some(MilestoneDecay {
            epochs: vec![2, 4],
            factor: 0.1,
        });
        assert_eq!(lr_for_epoch(1.0, 0, &m), 1.0);
        assert_eq!(lr_for_epoch(1.0, 2, &m), 0.1);
        assert!((lr_for_epoch(1.0, 4, &m) - 0.01).abs() < 1e-15);
        assert_eq!(lr_for_epoch(1.0, 4, &None), 1.0);
    }

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        // Training sanity: 2-class separable blobs, 20 epochs of CE.
        let data = synth_blobs(300, 2, 5, 0.3, 17).unwrap();
        let mut model = Model::new(&[5, 16, 2], 5).unwrap();
        let mut opts = TrainOptions::new(0.05, 20, 7);
        opts.batch_size = 32;
        train_cross_entropy(&mut model, &data, &opts).unwrap();
        let acc = accuracy(&model, &data).unwrap();
        assert!(acc >= 0.99, "train accuracy {acc}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = synth_blobs(200, 3, 4, 0.5, 3).unwrap();
        let run = || {
            let mut m = Model::new(&[4, 8, 3], 11).unwrap();
            let mut opts = TrainOptions::new(0.05, 5, 9);
            opts.batch_size = 64;
            train_cross_entropy(&mut m, &data, &opts).unwrap();
            m.to_bytes()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn alpha_one_distillation_is_direct_training() {
        // With alpha = 1 the combined loss collapses to cross-entropy, so
        // distilling from any teacher equals direct training bit for bit.
        let data = synth_blobs(200, 3, 5, 0.8, 6).unwrap();
        let teacher = Model::new(&[5, 12, 3], 77).unwrap();
        let config = DistillConfig::new(4.0, 1.0, 0.05, 6).unwrap();

        let mut via_distill = Model::new(&[5, 6, 3], 9).unwrap();
        distill_single(&mut via_distill, &teacher, &data, &config, 0.9, 32, 4, None).unwrap();

        let mut direct = Model::new(&[5, 6, 3], 9).unwrap();
        let opts = TrainOptions {
            lr: 0.05,
            momentum: 0.9,
            epochs: 6,
            batch_size: 32,
            shuffle_seed: 4,
            milestones: None,
        };
        train_cross_entropy(&mut direct, &data, &opts).unwrap();

        assert_eq!(via_distill.to_bytes(), direct.to_bytes());
    }

    #[test]
    fn distill_single_tracks_scheduler() {
        let data = synth_blobs(200, 2, 4, 0.5, 3).unwrap();
        let mut teacher = Model::new(&[4, 16, 2], 1).unwrap();
        let mut opts = TrainOptions::new(0.05, 10, 2);
        opts.batch_size = 64;
        train_cross_entropy(&mut teacher, &data, &opts).unwrap();

        let config = DistillConfig::new(4.0, 0.5, 0.05, 5).unwrap();
        let mut student = Model::new(&[4, 6, 2], 8).unwrap();
        let mut sched = TemperatureScheduler::new(4.0, 0.5).unwrap();
        let log = distill_single(
            &mut student,
            &teacher,
            &data,
            &config,
            0.9,
            64,
            5,
            Some(&mut sched),
        )
        .unwrap();
        assert_eq!(log.temperatures.len(), 5);
        // Epoch 0 always runs at T0; later epochs may move above it.
        assert_eq!(log.temperatures[0], 4.0);
        assert!(log.temperatures.iter().all(|&t| t >= 4.0));
    }
}
