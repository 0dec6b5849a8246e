//! Plain SGD on mean per-node NLL with deterministic mini-batches.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::checkpoint::save_checkpoint;
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, FeatureMap};
use crate::metrics::{BinaryMask, ConfusionMatrix, MetricsReport};
use crate::model::{model_backward, model_forward, nll_from_log_probs, GcnModel, GradientSet};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
pub const DEFAULT_EPOCHS: usize = 30;
pub const DEFAULT_BATCH_SIZE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Last-epoch checkpoint; the best-by-IoU one goes next to it as
    /// `<stem>.best.<ext>` when evaluation data is supplied.
    pub checkpoint_path: Option<PathBuf>,
    /// Log the running loss every this many steps; 0 disables.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            checkpoint_path: None,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub elapsed_secs: f64,
    pub eval: Option<MetricsReport>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_loss).collect()
    }
}

/// `−(1/n) Σ_i log_probs[i, labels[i]]`.
pub fn nll_loss(log_probs: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    nll_from_log_probs(log_probs, labels)
}

/// `w ← w − lr·g` for every parameter; no momentum, no decay.
pub fn sgd_step(model: &mut GcnModel, grads: &GradientSet, lr: f64) -> Result<()> {
    let g = grads.slices();
    let mut params = model.param_slices_mut();
    if params.len() != g.len() || params.iter().zip(&g).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::InvalidDimension(
            "gradient set does not match the model's parameter shapes".into(),
        ));
    }
    for (p, g) in params.iter_mut().zip(g) {
        for (w, &d) in p.iter_mut().zip(g) {
            *w -= lr * d;
        }
    }
    Ok(())
}

/// 64-bit linear congruential generator used for shuffling.
///
/// `state ← state · 6364136223846793005 + 1442695040888963407 (mod 2^64)`,
/// output = upper 32 bits of the new state. Seeded per epoch with
/// `seed XOR ((epoch + 1) · 0x9E3779B97F4A7C15)`.
#[derive(Debug, Clone)]
pub struct ShuffleLcg {
    state: u64,
}

impl ShuffleLcg {
    const MUL: u64 = 6364136223846793005;
    const INC: u64 = 1442695040888963407;

    pub fn for_epoch(seed: u64, epoch: usize) -> Self {
        Self {
            state: seed ^ (epoch as u64 + 1).wrapping_mul(0x9E3779B97F4A7C15),
        }
    }

    pub fn next_u32(&mut self) -> u32 {
        self.state = self.state.wrapping_mul(Self::MUL).wrapping_add(Self::INC);
        (self.state >> 32) as u32
    }
}

/// Fisher–Yates: for `i = n−1 … 1`, swap `i` with `next_u32() mod (i+1)`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ShuffleLcg::for_epoch(seed, epoch);
    for i in (1..n).rev() {
        let j = rng.next_u32() as usize % (i + 1);
        perm.swap(i, j);
    }
    perm
}

/// Mean loss and averaged gradient over a batch. Samples are processed in
/// parallel; the reduction runs in batch order so the result does not
/// depend on the worker count.
pub fn batch_gradient(model: &GcnModel, batch: &[&Sample]) -> Result<(f64, GradientSet)> {
    if batch.is_empty() {
        return Err(Error::InvalidDataset("empty batch".into()));
    }
    let per_sample: Vec<Result<(f64, GradientSet)>> = batch
        .par_iter()
        .map(|s| {
            let pass = model_forward(model, &s.image)?;
            model_backward(model, &pass, &s.labels())
        })
        .collect();
    let mut total = GradientSet::zeros_like(model);
    let mut loss = 0.0;
    for r in per_sample {
        let (l, g) = r?;
        loss += l;
        total.accumulate(&g)?;
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    Ok((loss * inv, total))
}

/// Class map of a patch; probability ties go to class 0.
pub fn predict_labels(model: &GcnModel, image: &FeatureMap) -> Result<Vec<usize>> {
    Ok(model_forward(model, image)?.predictions())
}

pub fn predict_mask(model: &GcnModel, image: &FeatureMap) -> Result<BinaryMask> {
    let labels = predict_labels(model, image)?;
    BinaryMask::from_labels(image.height(), image.width(), &labels)
}

/// Micro-aggregated confusion matrix over all samples.
pub fn evaluate(model: &GcnModel, samples: &[Sample]) -> Result<ConfusionMatrix> {
    let partial: Vec<Result<ConfusionMatrix>> = samples
        .par_iter()
        .map(|s| {
            let pred = predict_mask(model, &s.image)?;
            ConfusionMatrix::default().accumulate(&pred, &s.mask)
        })
        .collect();
    partial
        .into_iter()
        .try_fold(ConfusionMatrix::default(), |acc, cm| Ok(acc.merge(cm?)))
}

pub fn best_checkpoint_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let name = match path.extension() {
        Some(ext) => format!("{stem}.best.{}", ext.to_string_lossy()),
        None => format!("{stem}.best"),
    };
    path.with_file_name(name)
}

/// Runs `epochs × ⌈N / batch_size⌉` SGD steps.
pub fn train(
    cfg: &TrainConfig,
    model: GcnModel,
    data: &[Sample],
    eval: Option<&[Sample]>,
) -> Result<(GcnModel, TrainHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidDataset("training set is empty".into()));
    }
    let eval = eval.filter(|e| !e.is_empty());
    let mut model = model;
    let mut history = TrainHistory::default();
    let mut best_iou = f64::NEG_INFINITY;
    let mut step = 0usize;
    let start = Instant::now();

    for epoch in 0..cfg.epochs {
        let order = epoch_permutation(data.len(), cfg.seed, epoch);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grads) = batch_gradient(&model, &batch).map_err(|e| match e {
                Error::NumericalFailure(msg) => Error::NumericalFailure(format!(
                    "{msg} at step {step} (epoch {epoch})"
                )),
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::NumericalFailure(format!(
                    "non-finite loss at step {step} (epoch {epoch})"
                )));
            }
            sgd_step(&mut model, &grads, cfg.learning_rate)?;
            loss_sum += loss * batch.len() as f64;
            step += 1;
            if cfg.log_every > 0 && step.is_multiple_of(cfg.log_every) {
                log::info!("step {step}: batch loss {loss:.6}");
            }
        }
        let mean_loss = loss_sum / data.len() as f64;
        let eval_report = match eval {
            Some(samples) => Some(evaluate(&model, samples)?.report()?),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            mean_loss,
            elapsed_secs: start.elapsed().as_secs_f64(),
            eval: eval_report,
        };
        match &record.eval {
            Some(r) => log::info!("epoch {epoch}: loss {mean_loss:.6} {}", r.machine_line()),
            None => log::info!("epoch {epoch}: loss {mean_loss:.6}"),
        }
        if let Some(path) = &cfg.checkpoint_path {
            save_checkpoint(&model, path)?;
            if let Some(r) = &record.eval {
                if r.iou > best_iou {
                    best_iou = r.iou;
                    save_checkpoint(&model, best_checkpoint_path(path))?;
                }
            }
        }
        history.records.push(record);
    }
    Ok((model, history))
}
