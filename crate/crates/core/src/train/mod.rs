//! Losses, AdamW, the step schedule and the epoch loop.

mod losses;
mod optim;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use losses::{
    anticipation_loss_traced, combined_loss, combined_loss_traced, loss_anticipation,
    loss_recognition, recognition_loss_traced, smooth_l1, LossWeights,
};
pub use optim::{adamw_step, clip_global_norm, global_norm, AdamState, AdamWParams};

use crate::data::{make_anticipation_targets, sample_sequence, sample_sequence_jittered, Dataset, Video};
use crate::error::{Error, Result};
use crate::model::{predict_phases, predict_traced, Model, ModelConfig};
use crate::numkit::{grad_check_with, GradCheckReport, Stencil, Tape, Tensor, Var};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.srmb";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub halve_every: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    pub anticipation_enabled: bool,
    pub loss_weights: LossWeights,
    /// Anticipation normalization horizon in frames.
    pub horizon: usize,
    /// Longest sequence fed to the model; longer videos are subsampled.
    pub n_max: usize,
    /// Draw a fresh subsample every epoch instead of a fixed one.
    pub resample_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 2e-4,
            halve_every: 50,
            epochs: 100,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            seed: 0,
            anticipation_enabled: true,
            loss_weights: LossWeights::default(),
            horizon: 300,
            n_max: 2048,
            resample_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::domain("lr0 must be finite and non-negative"));
        }
        if self.halve_every == 0 {
            return Err(Error::domain("halve_every must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(Error::domain("horizon must be at least 1"));
        }
        if self.n_max == 0 {
            return Err(Error::domain("n_max must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::domain("betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0 && self.weight_decay >= 0.0 && self.clip_norm >= 0.0) {
            return Err(Error::domain("eps must be positive; weight_decay and clip_norm non-negative"));
        }
        self.loss_weights.validate()
    }

    pub fn adamw(&self, lr: f64) -> AdamWParams {
        AdamWParams {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// `lr0 * 0.5^floor(epoch / halve_every)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let halvings = (epoch / cfg.halve_every).min(i32::MAX as usize) as i32;
    cfg.lr0 * 0.5f64.powi(halvings)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss_r: f64,
    pub loss_a: f64,
    pub loss: f64,
    pub lr: f64,
    /// Mean pre-clipping gradient norm over the epoch's steps.
    pub grad_norm: f64,
}

pub struct StepOutcome {
    pub loss_r: f64,
    pub loss_a: f64,
    pub loss: f64,
    /// One gradient per parameter tensor, in declaration order.
    pub grads: Vec<Tensor>,
}

/// Loss and parameter gradients for one (possibly subsampled) sequence.
pub fn sequence_gradients(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    targets: &Tensor,
    cfg: &TrainConfig,
    drops: &[crate::mamba::DropPath],
) -> Result<StepOutcome> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let (logits, ant) = predict_traced(&mut tape, &model.config, &vars, xv, drops)?;
    let (lr, la, total) = combined_loss_traced(
        &mut tape,
        logits,
        ant,
        labels,
        targets,
        &cfg.loss_weights,
        cfg.anticipation_enabled,
    )?;
    let loss = tape.value(total).item()?;
    if !loss.is_finite() {
        return Err(Error::Training { param: "loss".into(), msg: format!("non-finite loss {loss}") });
    }
    let mut grads = tape.backward(total, &Tensor::scalar(1.0))?;
    Ok(StepOutcome {
        loss_r: tape.value(lr).item()?,
        loss_a: tape.value(la).item()?,
        loss,
        grads: vars.all().into_iter().map(|v| grads.take(v)).collect(),
    })
}

/// Finite-difference check of the combined loss against every parameter
/// tensor of `model`, with drop path disabled.
pub fn combined_loss_grad_check(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    targets: &Tensor,
    cfg: &TrainConfig,
    epsilon: f64,
    tolerance: f64,
    stencil: Stencil,
) -> Result<GradCheckReport> {
    let params: Vec<Tensor> = model.named().into_iter().map(|(_, t)| t.clone()).collect();
    let drops = vec![crate::mamba::DropPath::Identity; model.layers.len()];
    let graph = |tape: &mut Tape, v: &[Var]| {
        let vars = model.vars_from(v)?;
        let xv = tape.leaf(x.clone());
        let (logits, ant) = predict_traced(tape, &model.config, &vars, xv, &drops)?;
        let (_, _, total) = combined_loss_traced(
            tape,
            logits,
            ant,
            labels,
            targets,
            &cfg.loss_weights,
            cfg.anticipation_enabled,
        )?;
        Ok(total)
    };
    grad_check_with(graph, &params, epsilon, tolerance, stencil)
}

pub fn init_model(config: ModelConfig, seed: u64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Model::init(config, &mut rng)
}

/// Model, optimizer state and the training random stream.
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    state: AdamState,
    names: Vec<String>,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let named = model.named();
        let names = named.iter().map(|(n, _)| n.clone()).collect();
        let state = AdamState::zeros_like(&named.iter().map(|(_, t)| *t).collect::<Vec<_>>());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Trainer { model, config, state, names, rng, epoch: 0 })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One pass over `data`, one optimizer step per video.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<EpochReport> {
        if data.is_empty() {
            return Err(Error::domain("training set is empty"));
        }
        let lr = lr_at(self.epoch, &self.config);
        let hp = self.config.adamw(lr);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut sr, mut sa, mut sl, mut sg) = (0.0, 0.0, 0.0, 0.0);
        for &i in &order {
            let (x, labels, targets) = self.prepare(&data.videos[i])?;
            let drops = self.model.sample_drop_paths(true, &mut self.rng)?;
            let mut out = sequence_gradients(&self.model, &x, &labels, &targets, &self.config, &drops)?;
            let norm = clip_global_norm(&mut out.grads, self.config.clip_norm);
            let mut params = self.model.tensors_mut();
            adamw_step(&mut params, &self.names, &out.grads, &mut self.state, &hp)?;
            sr += out.loss_r;
            sa += out.loss_a;
            sl += out.loss;
            sg += norm;
        }
        let n = data.len() as f64;
        let report = EpochReport {
            epoch: self.epoch,
            loss_r: sr / n,
            loss_a: sa / n,
            loss: sl / n,
            lr,
            grad_norm: sg / n,
        };
        self.epoch += 1;
        Ok(report)
    }

    /// Sampled features, labels and anticipation targets for one video.
    fn prepare(&mut self, video: &Video) -> Result<(Tensor, Vec<usize>, Tensor)> {
        let full = make_anticipation_targets(&video.labels, self.config.horizon)?.values;
        if video.labels.len() <= self.config.n_max {
            return Ok((video.features.clone(), video.labels.clone(), Tensor::vector(full)));
        }
        let idx = if self.config.resample_each_epoch {
            sample_sequence_jittered(&video.labels, self.config.n_max, &mut self.rng)?
        } else {
            sample_sequence(&video.labels, self.config.n_max)?
        }
        .indices;
        let d = video.features.row_len();
        let mut rows = Vec::with_capacity(idx.len() * d);
        for &i in &idx {
            rows.extend_from_slice(video.features.row(i));
        }
        Ok((
            Tensor::matrix(idx.len(), d, rows)?,
            idx.iter().map(|&i| video.labels[i]).collect(),
            Tensor::vector(idx.iter().map(|&i| full[i]).collect()),
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    /// Frame accuracy pooled over all videos, in percent.
    pub accuracy: f64,
    /// Mean per-video SmoothL1 of the anticipation head.
    pub anticipation_loss: f64,
    pub predictions: Vec<Vec<usize>>,
}

pub fn evaluate(model: &Model, data: &Dataset, horizon: usize) -> Result<EvalSummary> {
    let (mut correct, mut total, mut la) = (0usize, 0usize, 0.0);
    let mut predictions = Vec::with_capacity(data.len());
    for v in &data.videos {
        let out = model.predict(&v.features)?;
        let pred = predict_phases(&out);
        correct += pred.iter().zip(&v.labels).filter(|(a, b)| a == b).count();
        total += v.labels.len();
        let targets = Tensor::vector(make_anticipation_targets(&v.labels, horizon)?.values);
        la += loss_anticipation(&out.anticipation, &targets)?;
        predictions.push(pred);
    }
    if total == 0 {
        return Err(Error::domain("evaluation set is empty"));
    }
    Ok(EvalSummary {
        accuracy: 100.0 * correct as f64 / total as f64,
        anticipation_loss: la / data.len() as f64,
        predictions,
    })
}

/// Output directory of a training run.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates the directory and writes the config snapshot and CSV header.
    pub fn create(root: impl AsRef<Path>, snapshot: &impl Serialize) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let cfg = root.join(CONFIG_FILE);
        let mut json = serde_json::to_string_pretty(snapshot)?;
        json.push('\n');
        std::fs::write(&cfg, json).map_err(|e| Error::io(&cfg, e))?;
        let metrics = root.join(METRICS_FILE);
        std::fs::write(&metrics, "epoch,loss_r,loss_a,loss,lr\n").map_err(|e| Error::io(&metrics, e))?;
        Ok(RunDir { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn log_epoch(&self, r: &EpochReport) -> Result<()> {
        let path = self.root.join(METRICS_FILE);
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{},{},{},{},{}", r.epoch, r.loss_r, r.loss_a, r.loss, r.lr)
            .map_err(|e| Error::io(&path, e))
    }

    pub fn save_checkpoint(&self, model: &Model) -> Result<PathBuf> {
        let path = self.root.join(CHECKPOINT_FILE);
        model.save(&path)?;
        Ok(path)
    }
}

/// Trains for `trainer.config.epochs` epochs, logging each one and saving the
/// final checkpoint.
pub fn train_run(
    trainer: &mut Trainer,
    data: &Dataset,
    run: &RunDir,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Vec<EpochReport>> {
    let mut reports = Vec::with_capacity(trainer.config.epochs);
    for _ in 0..trainer.config.epochs {
        let r = trainer.train_epoch(data)?;
        run.log_epoch(&r)?;
        on_epoch(&r);
        reports.push(r);
    }
    run.save_checkpoint(&trainer.model)?;
    Ok(reports)
}

#[cfg(test)]
mod tests;
