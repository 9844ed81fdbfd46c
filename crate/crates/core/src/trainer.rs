//! The training loop: two views per batch, total loss, backward, gradient
//! clipping, Adam on the teacher, and the moving-average student update.
//!
//! All randomness is derived functionally from `(seed, purpose, epoch,
//! batch)`, so a run is a pure function of its config and resuming from a
//! checkpoint continues the exact same trajectory.

use std::time::Instant;

use crate::augment::{augment_pipeline, normalize_channels, vector_jitter};
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::data::{batches, BatchPlan, Dataset, Samples};
use crate::error::{Error, Result};
use crate::loss::{total_loss, LossBreakdown};
use crate::metrics::MetricsRecord;
use crate::model::StudentTeacher;
use crate::optim::{adam_step, cosine_lr, OptimizerState};
use crate::rng::RngStream;
use crate::tensor::{clip_global_norm, Tape, Tensor};

/// Owns the model pair, optimizer state and dataset for one run.
pub struct Trainer {
    cfg: TrainConfig,
    dataset: Dataset,
    st: StudentTeacher,
    optimizer: OptimizerState,
    /// Optimizer for the student in the unblocked-gradient ablation.
    student_optimizer: Option<OptimizerState>,
    epoch: usize,
    last_clipped_norm: f64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Trainer> {
        cfg.validate()?;
        let dataset = cfg.dataset.load()?;
        if dataset.len() < cfg.batch_size {
            return Err(Error::config(format!(
                "dataset of {} samples cannot fill batches of {}",
                dataset.len(),
                cfg.batch_size
            )));
        }
        check_encoder_matches(&cfg, &dataset)?;
        let model_seed = RngStream::new(cfg.seed).derive_named("model").seed();
        let mut st = StudentTeacher::new(cfg.encoder.clone(), model_seed, cfg.tau)?;
        if !cfg.block_student_grad {
            st.student_mut().set_trainable(true);
        }
        let optimizer = OptimizerState::new(st.teacher());
        let student_optimizer =
            (!cfg.block_student_grad).then(|| OptimizerState::new(st.student()));
        Ok(Trainer { cfg, dataset, st, optimizer, student_optimizer, epoch: 0, last_clipped_norm: 0.0 })
    }

    /// Resume from a checkpoint; the continued run matches an
    /// uninterrupted one bitwise.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Trainer> {
        ckpt.config.validate()?;
        let dataset = ckpt.config.dataset.load()?;
        check_encoder_matches(&ckpt.config, &dataset)?;
        let mut student = ckpt.student;
        student.set_trainable(!ckpt.config.block_student_grad);
        let st = StudentTeacher::from_parts(
            ckpt.config.encoder.clone(),
            ckpt.teacher,
            student,
            ckpt.config.tau,
        )?;
        let student_optimizer =
            (!ckpt.config.block_student_grad).then(|| OptimizerState::new(st.student()));
        Ok(Trainer {
            cfg: ckpt.config,
            dataset,
            st,
            optimizer: ckpt.optimizer,
            student_optimizer,
            epoch: ckpt.epoch,
            last_clipped_norm: 0.0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn student_teacher(&self) -> &StudentTeacher {
        &self.st
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Post-clip global gradient norm of the most recent step.
    pub fn last_clipped_norm(&self) -> f64 {
        self.last_clipped_norm
    }

    /// Snapshot the full training state.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            epoch: self.epoch,
            teacher: self.st.teacher().clone(),
            student: self.st.student().clone(),
            optimizer: self.optimizer.clone(),
            rng_seed: self.cfg.seed,
        }
    }

    /// Index batches for one epoch (seeded permutation, last partial
    /// batch dropped so every batch offers the same mining pool).
    pub fn epoch_batches(&self, epoch: usize) -> Result<Vec<Vec<usize>>> {
        let plan = BatchPlan::new(self.cfg.seed, epoch, self.dataset.len(), self.cfg.batch_size, true)?;
        Ok(batches(&plan))
    }

    /// Raw and augmented views of the indexed samples, index-aligned.
    pub fn build_views(
        &self,
        epoch: usize,
        batch_index: usize,
        indices: &[usize],
    ) -> Result<(Tensor, Tensor)> {
        let teacher_rng = RngStream::new(self.cfg.seed)
            .derive_named("augment")
            .derive(epoch as u64)
            .derive(batch_index as u64);
        let aug = self.view_of(indices, Some(teacher_rng))?;
        let student_rng = self.cfg.augment_student.then(|| {
            RngStream::new(self.cfg.seed)
                .derive_named("augment-student")
                .derive(epoch as u64)
                .derive(batch_index as u64)
        });
        let raw = self.view_of(indices, student_rng)?;
        Ok((raw, aug))
    }

    /// Assemble one batch view; `rng` enables augmentation.
    fn view_of(&self, indices: &[usize], rng: Option<RngStream>) -> Result<Tensor> {
        match self.dataset.samples() {
            Samples::Vectors { dim, .. } => {
                let mut values = Vec::with_capacity(indices.len() * dim);
                match rng {
                    Some(mut rng) => {
                        let scale = self.cfg.effective_noise_scale();
                        for &i in indices {
                            let row = Tensor::vector(self.dataset.vector_row(i).to_vec());
                            let jittered = vector_jitter(&row, scale, &mut rng)?;
                            values.extend_from_slice(jittered.values());
                        }
                    }
                    None => {
                        for &i in indices {
                            values.extend_from_slice(self.dataset.vector_row(i));
                        }
                    }
                }
                Tensor::new(values, vec![indices.len(), *dim])
            }
            Samples::Images(_) => {
                let mut values = Vec::new();
                let aug_cfg = &self.cfg.augmentation;
                for (slot, &i) in indices.iter().enumerate() {
                    let img = self.dataset.image(i);
                    let tensor = match &rng {
                        Some(rng) => {
                            let mut per_image = rng.derive(slot as u64);
                            augment_pipeline(img, aug_cfg, &mut per_image)?
                        }
                        None => {
                            normalize_channels(img, &aug_cfg.norm_mean, &aug_cfg.norm_std)?
                        }
                    };
                    values.extend_from_slice(tensor.values());
                }
                let shape = self.cfg.encoder.batch_shape(indices.len());
                Tensor::new(values, shape)
            }
        }
    }

    /// One optimization step: views, two-view forward, total loss,
    /// backward, clip, Adam on the teacher, then the EMA student update.
    /// In the unblocked ablation the student trains by gradient instead
    /// of the moving average.
    pub fn train_step(
        &mut self,
        epoch: usize,
        batch_index: usize,
        indices: &[usize],
        lr: f64,
    ) -> Result<LossBreakdown> {
        if indices.len() < 2 {
            return Err(Error::contract("train_step wants a batch of at least 2"));
        }
        let (raw, aug) = self.build_views(epoch, batch_index, indices)?;

        let mut tape = Tape::new();
        let views = self
            .st
            .two_view_forward(&mut tape, &raw, &aug, self.cfg.block_student_grad)?;
        let out = total_loss(
            &mut tape,
            views.teacher_rep,
            views.student_rep,
            &self.cfg.loss_config(),
        )
        .map_err(|e| batch_context(e, epoch, batch_index))?;
        tape.backward(out.loss)?;

        let mut teacher_grads = views.teacher_params.grads(&tape);
        if self.cfg.block_student_grad {
            self.last_clipped_norm = clip_global_norm(&mut teacher_grads, self.cfg.clip_norm);
            adam_step(
                self.st.teacher_mut(),
                &teacher_grads,
                &mut self.optimizer,
                lr,
                self.cfg.adam_beta1,
                self.cfg.adam_beta2,
                self.cfg.adam_eps,
            )?;
            self.st.ema_update();
        } else {
            // Ablation: both networks train by gradient; one global clip
            // spans the union and the moving average is switched off.
            let mut student_grads = views.student_params.grads(&tape);
            let teacher_n = teacher_grads.len();
            let mut all = teacher_grads;
            all.append(&mut student_grads);
            self.last_clipped_norm = clip_global_norm(&mut all, self.cfg.clip_norm);
            let student_grads = all.split_off(teacher_n);
            adam_step(
                self.st.teacher_mut(),
                &all,
                &mut self.optimizer,
                lr,
                self.cfg.adam_beta1,
                self.cfg.adam_beta2,
                self.cfg.adam_eps,
            )?;
            let opt = self
                .student_optimizer
                .as_mut()
                .expect("student optimizer exists when gradients are unblocked");
            adam_step(
                self.st.student_mut(),
                &student_grads,
                opt,
                lr,
                self.cfg.adam_beta1,
                self.cfg.adam_beta2,
                self.cfg.adam_eps,
            )?;
        }
        Ok(out.breakdown)
    }

    /// Train one epoch at its cosine-scheduled rate and return the
    /// aggregated record.
    pub fn run_epoch(&mut self) -> Result<MetricsRecord> {
        let epoch = self.epoch;
        let lr = cosine_lr(epoch, self.cfg.lr, self.cfg.cosine_t_max);
        let started = Instant::now();
        let mut totals = (0.0, 0.0, 0.0, 0.0);
        let mut empty = 0usize;
        let index_batches = self.epoch_batches(epoch)?;
        let n_batches = index_batches.len();
        for (batch_index, indices) in index_batches.iter().enumerate() {
            let b = self
                .train_step(epoch, batch_index, indices, lr)
                .map_err(|e| batch_context(e, epoch, batch_index))?;
            totals.0 += b.total;
            totals.1 += b.l1;
            totals.2 += b.l2;
            totals.3 += b.mean_hard_set_size;
            empty += b.empty_set_count;
        }
        let inv = 1.0 / n_batches.max(1) as f64;
        let seconds = if self.cfg.strict_determinism {
            0.0
        } else {
            started.elapsed().as_secs_f64()
        };
        self.epoch += 1;
        Ok(MetricsRecord {
            epoch,
            loss_total: totals.0 * inv,
            loss_pos: totals.1 * inv,
            loss_neg: totals.2 * inv,
            lr,
            mean_hard_set_size: totals.3 * inv,
            empty_set_count: empty,
            seconds,
        })
    }

    /// Run to `cfg.epochs`, invoking `on_epoch` after each epoch (for
    /// logging and periodic checkpoints).
    pub fn train_with<F>(&mut self, mut on_epoch: F) -> Result<Vec<MetricsRecord>>
    where
        F: FnMut(&Trainer, &MetricsRecord) -> Result<()>,
    {
        let mut records = Vec::with_capacity(self.cfg.epochs.saturating_sub(self.epoch));
        while self.epoch < self.cfg.epochs {
            let record = self.run_epoch()?;
            on_epoch(self, &record)?;
            records.push(record);
        }
        Ok(records)
    }

    /// Run to `cfg.epochs` and return one record per epoch.
    pub fn train(&mut self) -> Result<Vec<MetricsRecord>> {
        self.train_with(|_, _| Ok(()))
    }
}

fn batch_context(e: Error, epoch: usize, batch_index: usize) -> Error {
    match e {
        Error::Degenerate(msg) => {
            Error::degenerate(format!("epoch {epoch} batch {batch_index}: {msg}"))
        }
        other => other,
    }
}

fn check_encoder_matches(cfg: &TrainConfig, dataset: &Dataset) -> Result<()> {
    match (dataset.samples(), cfg.encoder.input) {
        (Samples::Vectors { dim, .. }, crate::model::EncoderInput::Vector { dim: want }) => {
            if *dim != want {
                return Err(Error::config(format!(
                    "encoder wants {want}-dimensional vectors, dataset has {dim}"
                )));
            }
        }
        (Samples::Images(imgs), crate::model::EncoderInput::Image { height, width }) => {
            if let Some(img) = imgs.first() {
                if img.height() != height || img.width() != width {
                    return Err(Error::config(format!(
                        "encoder wants {height}x{width} images, dataset has {}x{}",
                        img.height(),
                        img.width()
                    )));
                }
            }
        }
        _ => {
            return Err(Error::config(
                "encoder input kind does not match the dataset sample kind",
            ))
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{preset_config, DatasetSpec, Preset};
    use crate::model::EncoderSpec;

    /// Tiny config that trains in milliseconds.
    fn tiny_config() -> TrainConfig {
        let mut cfg = preset_config(Preset::Desk);
        cfg.dataset = DatasetSpec::Synthetic {
            k: 3,
            dim: 8,
            n_per_class: 20,
            spread: 1.0,
            separation: 6.0,
            seed: 5,
        };
        cfg.encoder = EncoderSpec::vector(8, vec![16], 1, 4);
        cfg.batch_size = 10;
        cfg.epochs = 3;
        cfg.cosine_t_max = 3;
        cfg.seed = 9;
        cfg
    }

    #[test]
    fn zero_lr_freezes_teacher_but_ema_still_moves_student() {
        let mut cfg = tiny_config();
        cfg.epochs = 1;
        let mut trainer = Trainer::new(cfg).unwrap();
        let batches = trainer.epoch_batches(0).unwrap();

        // one real step first, so teacher and student diverge
        trainer.train_step(0, 0, &batches[0], 0.05).unwrap();
        let teacher_before = trainer.student_teacher().teacher().flat();
        let student_before = trainer.student_teacher().student().flat();
        assert_ne!(teacher_before, student_before);

        // with lr = 0 the teacher is untouched while EMA keeps pulling
        // the student toward it
        trainer.train_step(0, 1, &batches[1], 0.0).unwrap();
        assert_eq!(trainer.student_teacher().teacher().flat(), teacher_before);
        assert_ne!(trainer.student_teacher().student().flat(), student_before);
    }

    #[test]
    fn tau_one_keeps_student_bitwise_constant() {
        let mut cfg = tiny_config();
        cfg.tau = 1.0;
        let mut trainer = Trainer::new(cfg).unwrap();
        let student0 = trainer.student_teacher().student().flat();
        trainer.train().unwrap();
        assert_eq!(trainer.student_teacher().student().flat(), student0);
        // while the teacher actually moved
        assert_ne!(
            trainer.student_teacher().teacher().flat(),
            trainer.student_teacher().student().flat()
        );
    }

    #[test]
    fn post_clip_norm_never_exceeds_bound() {
        let mut trainer = Trainer::new(tiny_config()).unwrap();
        let batches = trainer.epoch_batches(0).unwrap();
        for (i, b) in batches.iter().enumerate() {
            trainer.train_step(0, i, b, 0.1).unwrap();
            assert!(trainer.last_clipped_norm() <= 1.0 + f64::EPSILON);
        }
    }

    #[test]
    fn metrics_stream_has_one_record_per_epoch_with_scheduled_lr() {
        let cfg = tiny_config();
        let epochs = cfg.epochs;
        let (lr_max, t_max) = (cfg.lr, cfg.cosine_t_max);
        let mut trainer = Trainer::new(cfg).unwrap();
        let records = trainer.train().unwrap();
        assert_eq!(records.len(), epochs);
        for (i, r) in records.iter().enumerate() {
            assert_eq!(r.epoch, i);
            assert_eq!(r.lr, cosine_lr(i, lr_max, t_max));
            assert_eq!(r.seconds, 0.0, "strict determinism zeroes timing");
        }
    }

    #[test]
    fn identical_seeds_produce_bitwise_identical_runs() {
        let run = || {
            let mut trainer = Trainer::new(tiny_config()).unwrap();
            trainer.train().unwrap();
            (
                trainer.student_teacher().teacher().flat(),
                trainer.student_teacher().student().flat(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn resume_from_checkpoint_matches_straight_run() {
        // straight 3-epoch run
        let mut straight = Trainer::new(tiny_config()).unwrap();
        straight.train().unwrap();

        // run 1 epoch, checkpoint, reload, run the rest
        let mut first = Trainer::new(tiny_config()).unwrap();
        while first.epoch() < 1 {
            first.run_epoch().unwrap();
        }
        let bytes = first.checkpoint().to_bytes().unwrap();
        let mut resumed = Trainer::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        resumed.train().unwrap();

        assert_eq!(
            straight.student_teacher().teacher().flat(),
            resumed.student_teacher().teacher().flat()
        );
        assert_eq!(
            straight.student_teacher().student().flat(),
            resumed.student_teacher().student().flat()
        );
        assert_eq!(straight.optimizer().step(), resumed.optimizer().step());
    }

    #[test]
    fn student_follows_ema_trajectory_of_teacher_snapshots() {
        for tau in [0.0, 0.5, 0.999, 1.0] {
            let mut cfg = tiny_config();
            cfg.tau = tau;
            let mut trainer = Trainer::new(cfg).unwrap();
            let mut replay = trainer.student_teacher().student().flat();
            let batches = trainer.epoch_batches(0).unwrap();
            for (i, b) in batches.iter().enumerate().take(6) {
                trainer.train_step(0, i, b, 0.05).unwrap();
                let teacher = trainer.student_teacher().teacher().flat();
                for (s, t) in replay.iter_mut().zip(&teacher) {
                    *s = tau * *s + (1.0 - tau) * t;
                }
                assert_eq!(
                    trainer.student_teacher().student().flat(),
                    replay,
                    "tau {tau} step {i}"
                );
            }
        }
    }

    #[test]
    fn unblocked_student_trains_by_gradient_without_ema() {
        let mut cfg = tiny_config();
        cfg.block_student_grad = false;
        let mut trainer = Trainer::new(cfg).unwrap();
        let student0 = trainer.student_teacher().student().flat();
        let batches = trainer.epoch_batches(0).unwrap();
        trainer.train_step(0, 0, &batches[0], 0.05).unwrap();
        let student1 = trainer.student_teacher().student().flat();
        assert_ne!(student0, student1, "student should move by gradient");
        // and it does not equal the EMA of the teacher trajectory
        let teacher = trainer.student_teacher().teacher().flat();
        let ema: Vec<f64> = student0
            .iter()
            .zip(&teacher)
            .map(|(s, t)| 0.5 * s + 0.5 * t)
            .collect();
        assert_ne!(student1, ema);
    }

    #[test]
    fn config_dataset_mismatch_is_rejected() {
        let mut cfg = tiny_config();
        cfg.encoder = EncoderSpec::vector(9, vec![16], 1, 4);
        assert!(Trainer::new(cfg).is_err());

        let mut cfg = tiny_config();
        cfg.batch_size = 100; // dataset has only 60 samples
        assert!(Trainer::new(cfg).is_err());
    }
}
