//! Optimization of a [`FanModel`] on paired patches.
//!
//! All randomness is derived from `(seed, step)`: the epoch permutation from
//! the epoch number and each crop and flip from the sample's position in the
//! global schedule. A checkpoint therefore only needs the step counter to
//! resume the exact same sequence of batches, and the number of threads
//! assembling batches never changes the result.

mod adam;
mod loss;

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{augment, random_crop, sub_rng, PairedSample};
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::model::weights::{model_tensors, FanwFile, KIND_CHECKPOINT, KIND_WEIGHTS};
use crate::model::FanModel;
use crate::par::Workers;
use crate::tensor::Tensor;

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use loss::{loss_all, record_loss, LossMode};

const SHUFFLE_KEY: u64 = 0x5348_5546_464C_4500;
const SAMPLE_KEY: u64 = 0x5341_4D50_4C45_0000;

/// How training batches are drawn from the samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// A seeded permutation per epoch; every sample is randomly cropped to
    /// `patch` and given a random flip or rotation.
    #[default]
    Random,
    /// Samples are used whole, in order, without augmentation.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch: usize,
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub epochs: usize,
    /// LR patch side.
    pub patch: usize,
    pub loss_mode: LossMode,
    /// Loss of the closing fine-tuning phase, if any.
    pub finetune_loss: Option<LossMode>,
    /// Length of the fine-tuning phase in epochs, counted from the end.
    pub finetune_epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub clip_grad_norm: Option<f64>,
    pub sampling: Sampling,
    /// Defaults to one pass over the samples.
    pub steps_per_epoch: Option<usize>,
    pub workers: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 8,
            lr0: 1e-4,
            decay_factor: 0.5,
            decay_every: 30,
            epochs: 100,
            patch: 48,
            loss_mode: LossMode::L1,
            finetune_loss: Some(LossMode::Mse),
            finetune_epochs: 30,
            adam: AdamConfig::default(),
            seed: 0,
            clip_grad_norm: None,
            sampling: Sampling::Random,
            steps_per_epoch: None,
            workers: 4,
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    /// One loss for the whole run.
    pub fn single_phase(mut self, mode: LossMode) -> Self {
        self.loss_mode = mode;
        self.finetune_loss = None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr0 > 0.0) {
            return fail(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return fail(format!("decay_factor must be in (0, 1], got {}", self.decay_factor));
        }
        if self.patch == 0 || !self.patch.is_multiple_of(4) {
            return fail(format!("patch must be a positive multiple of 4, got {}", self.patch));
        }
        for (name, v) in [
            ("batch", self.batch),
            ("decay_every", self.decay_every),
            ("epochs", self.epochs),
            ("checkpoint_every", self.checkpoint_every),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.steps_per_epoch == Some(0) {
            return fail("steps_per_epoch must be positive".into());
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0) {
                return fail(format!("clip_grad_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }

    pub fn loss_at(&self, epoch: usize) -> LossMode {
        match self.finetune_loss {
            Some(m) if epoch >= self.epochs.saturating_sub(self.finetune_epochs) => m,
            _ => self.loss_mode,
        }
    }
}

/// `lr0 · decay_factor^⌊epoch / decay_every⌋`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.decay_factor.powi((epoch / cfg.decay_every.max(1)) as i32)
}

/// One row of `log.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_psnr: f64,
}

pub const LOG_HEADER: &str = "step,epoch,lr,loss,train_psnr";

impl StepLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:e},{},{}",
            self.step, self.epoch, self.lr, self.loss, self.train_psnr
        )
    }
}

#[derive(Serialize, Deserialize)]
struct TrainState {
    step: u64,
    adam_step: u64,
    best_psnr: Option<f64>,
    config: TrainConfig,
}

/// A model, its optimizer state and a position in the batch schedule.
pub struct Trainer {
    model: FanModel<f32>,
    adam: Adam<f32>,
    cfg: TrainConfig,
    data: Vec<PairedSample>,
    workers: Workers,
    step: u64,
    best_psnr: Option<f64>,
}

impl Trainer {
    pub fn new(model: FanModel<f32>, cfg: TrainConfig, data: Vec<PairedSample>) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::Config("training needs at least one sample".into()));
        }
        let adam = Adam::new(cfg.adam, model.params().tensors().iter().map(|t| t.shape()));
        Ok(Trainer {
            model,
            workers: Workers::new(cfg.workers),
            adam,
            cfg,
            data,
            step: 0,
            best_psnr: None,
        })
    }

    /// Continues from a checkpoint written by [`checkpoint`](Self::checkpoint).
    pub fn resume(file: &FanwFile, data: Vec<PairedSample>) -> Result<Self> {
        if file.kind != KIND_CHECKPOINT {
            return Err(Error::Format(format!("expected a checkpoint, found {:?}", file.kind)));
        }
        let state: TrainState = serde_json::from_value(
            file.train
                .clone()
                .ok_or_else(|| Error::Format("checkpoint has no training state".into()))?,
        )?;
        let model = file.to_model()?;
        let mut t = Trainer::new(model, state.config, data)?;
        for (i, name) in t.model.params().names().iter().enumerate() {
            for (prefix, dst) in [("adam.m.", &mut t.adam.m[i]), ("adam.v.", &mut t.adam.v[i])] {
                let key = format!("{prefix}{name}");
                let src = file
                    .tensor(&key)
                    .ok_or_else(|| Error::Format(format!("checkpoint is missing {key}")))?;
                if src.shape() != dst.shape() {
                    return Err(Error::Format(format!("{key} has dims {}", src.shape())));
                }
                *dst = src.clone();
            }
        }
        t.adam.step = state.adam_step;
        t.step = state.step;
        t.best_psnr = state.best_psnr;
        Ok(t)
    }

    pub fn data(&self) -> &[PairedSample] {
        &self.data
    }

    pub fn model(&self) -> &FanModel<f32> {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Replaces the batch-assembly pool.
    pub fn set_workers(&mut self, threads: usize) {
        self.workers = Workers::new(threads);
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.cfg
            .steps_per_epoch
            .unwrap_or_else(|| self.data.len().div_ceil(self.cfg.batch))
    }

    pub fn total_steps(&self) -> u64 {
        (self.cfg.epochs * self.steps_per_epoch()) as u64
    }

    pub fn epoch_of(&self, step: u64) -> usize {
        (step / self.steps_per_epoch() as u64) as usize
    }

    /// Sample indices of the batch at `step`.
    pub fn batch_indices(&self, step: u64) -> Vec<usize> {
        let n = self.data.len();
        let epoch = self.epoch_of(step);
        let mut order: Vec<usize> = (0..n).collect();
        if self.cfg.sampling == Sampling::Random {
            order.shuffle(&mut sub_rng(self.cfg.seed ^ SHUFFLE_KEY, epoch as u64));
        }
        let within = (step % self.steps_per_epoch() as u64) as usize;
        (0..self.cfg.batch)
            .map(|j| order[(within * self.cfg.batch + j) % n])
            .collect()
    }

    /// The `(lr, hr)` batch of `step` and the sample indices it came from.
    pub fn batch(&self, step: u64) -> Result<(Tensor<f32>, Tensor<f32>, Vec<usize>)> {
        let ids = self.batch_indices(step);
        let batch = self.cfg.batch as u64;
        let samples: Vec<PairedSample> = self
            .workers
            .map_indexed(ids.len(), |j| -> Result<PairedSample> {
                let s = &self.data[ids[j]];
                match self.cfg.sampling {
                    Sampling::Fixed => Ok(s.clone()),
                    Sampling::Random => {
                        let mut rng = sub_rng(self.cfg.seed ^ SAMPLE_KEY, step * batch + j as u64);
                        let crop = random_crop(s, self.cfg.patch, &mut rng)?;
                        Ok(augment(&crop, &mut rng))
                    }
                }
            })
            .into_iter()
            .collect::<Result<_>>()?;
        let lr: Vec<Tensor<f32>> = samples.iter().map(|s| s.lr.clone()).collect();
        let hr: Vec<Tensor<f32>> = samples.iter().map(|s| s.hr.clone()).collect();
        Ok((Tensor::stack(&lr)?, Tensor::stack(&hr)?, ids))
    }

    /// Forward, loss, backward and one Adam update.
    pub fn step(&mut self) -> Result<StepLog> {
        let step = self.step;
        let epoch = self.epoch_of(step);
        let lr = lr_at(epoch, &self.cfg);
        let mode = self.cfg.loss_at(epoch);
        let (x, y, ids) = self.batch(step)?;

        let mut tape = Tape::new();
        let rec = self.model.record(&mut tape, &x)?;
        let target = tape.constant(y);
        let loss = record_loss(&mut tape, rec.output, target, mode)?;
        let loss_value = tape.value(loss).item() as f64;
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss: loss_value,
                step,
                epoch: epoch as u64,
                lr,
                samples: ids,
            });
        }
        let pred = tape.value(rec.output).map(|v| v.clamp(0.0, 1.0));
        let train_psnr = psnr(&pred, tape.value(target), 1.0)?;
        let grads = tape.backward(loss)?;
        let mut gs: Vec<Tensor<f32>> = rec
            .params
            .iter()
            .map(|v| grads.of(*v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(*v))))
            .collect();
        drop(grads);
        drop(tape);
        if let Some(max) = self.cfg.clip_grad_norm {
            clip_grad_norm(&mut gs, max);
        }
        let grefs: Vec<&Tensor<f32>> = gs.iter().collect();
        self.adam
            .update(&mut self.model.params_mut().tensors_mut(), &grefs, lr)?;
        self.step += 1;
        Ok(StepLog {
            step,
            epoch,
            lr,
            loss: loss_value,
            train_psnr,
        })
    }

    pub fn checkpoint(&self) -> Result<FanwFile> {
        let mut tensors = model_tensors(&self.model);
        let names = self.model.params().names().to_vec();
        for (prefix, moments) in [("adam.m.", &self.adam.m), ("adam.v.", &self.adam.v)] {
            for (name, t) in names.iter().zip(moments) {
                tensors.push((format!("{prefix}{name}"), t.clone()));
            }
        }
        let state = TrainState {
            step: self.step,
            adam_step: self.adam.step,
            best_psnr: self.best_psnr,
            config: self.cfg.clone(),
        };
        Ok(FanwFile {
            config: self.model.config().clone(),
            kind: KIND_CHECKPOINT.into(),
            tensors,
            train: Some(serde_json::to_value(state)?),
        })
    }

    /// Trains to the end of the configured epochs. With `out` set, appends to
    /// `out/log.csv` and writes `ckpt_epoch_E.fanw` and `best.fanw` (best
    /// mean training PSNR over an epoch).
    pub fn run(&mut self, out: Option<&Path>, mut on_step: impl FnMut(&StepLog)) -> Result<()> {
        let mut log = match out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let path = dir.join("log.csv");
                let fresh = self.step == 0 || !path.exists();
                let mut f = OpenOptions::new()
                    .create(true)
                    .write(true)
                    .append(!fresh)
                    .truncate(fresh)
                    .open(&path)?;
                if fresh {
                    writeln!(f, "{LOG_HEADER}")?;
                }
                Some(f)
            }
            None => None,
        };
        let spe = self.steps_per_epoch() as u64;
        let mut epoch_psnr = Vec::new();
        while self.step < self.total_steps() {
            let row = self.step()?;
            if let Some(f) = log.as_mut() {
                writeln!(f, "{}", row.csv_row())?;
            }
            on_step(&row);
            epoch_psnr.push(row.train_psnr);
            if self.step.is_multiple_of(spe) {
                let epoch = row.epoch;
                let mean = epoch_psnr.iter().sum::<f64>() / epoch_psnr.len() as f64;
                epoch_psnr.clear();
                let improved = self.best_psnr.is_none_or(|b| mean > b);
                if improved {
                    self.best_psnr = Some(mean);
                }
                if let Some(dir) = out {
                    if let Some(f) = log.as_mut() {
                        f.flush()?;
                    }
                    let last = self.step == self.total_steps();
                    if (epoch + 1) % self.cfg.checkpoint_every == 0 || last {
                        self.checkpoint()?.write(&dir.join(format!("ckpt_epoch_{epoch}.fanw")))?;
                    }
                    if improved {
                        FanwFile {
                            config: self.model.config().clone(),
                            kind: KIND_WEIGHTS.into(),
                            tensors: model_tensors(&self.model),
                            train: Some(serde_json::json!({ "epoch": epoch, "train_psnr": mean })),
                        }
                        .write(&dir.join("best.fanw"))?;
                    }
                }
            }
        }
        Ok(())
    }
}
