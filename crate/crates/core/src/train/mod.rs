//! Optimisation of the density loss and count evaluation.

mod adam;
mod gradcheck;
mod metrics;

pub use adam::{adam_step, AdamConfig, OptimState};
pub use gradcheck::{grad_check, GradCheckEntry, GradCheckReport, KINK_RATIO, REL_FLOOR};
pub use metrics::{EvalReport, VideoResult};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    apply_stride, make_batch, stride_annotations, DataError, FeatureSequence, Manifest, Split,
};
use crate::density::{count, density_loss_on_tape, AnnotationSet, DensityError, DensityMap};
use crate::model::{forward, forward_on, Checkpoint, ModelConfig, ModelError, ModelParams};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Density(#[from] DensityError),
}

type Result<T> = std::result::Result<T, TrainError>;

/// Labelled videos: features with their repetition intervals.
pub type Dataset = Vec<(FeatureSequence, AnnotationSet)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the shuffle order and dropout masks.
    pub seed: u64,
    /// Seeds the parameter initialisation.
    pub init_seed: u64,
    /// Stops after this many optimiser steps, if set.
    pub max_steps: Option<usize>,
    /// Extra frame subsampling applied when loading features.
    pub stride: usize,
    /// Epochs between evaluations for checkpoint selection.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            epochs: 200,
            batch_size: 48,
            seed: 0,
            init_seed: 0,
            max_steps: None,
            stride: 1,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    /// Schedule used with the desk-scale model: single-video batches for
    /// at most 2000 steps at a raised learning rate.
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            epochs: 250,
            batch_size: 1,
            max_steps: Some(2000),
            eval_every: 5,
            ..Self::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.stride == 0 || self.eval_every == 0 {
            return Err(TrainError::Config(
                "batch_size, stride and eval_every must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("bad learning rate {}", self.lr)));
        }
        Ok(())
    }
}

/// One row of the loss curve.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-item loss over the epoch.
    pub train_loss: f64,
    /// `None` on epochs without an evaluation.
    pub val_mae: Option<f64>,
    pub val_obo: Option<f64>,
}

pub fn loss_curve_csv(curve: &[EpochRecord]) -> String {
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    let mut s = String::from("epoch,train_loss,val_mae,val_obo\n");
    for r in curve {
        s.push_str(&format!(
            "{},{:.9},{},{}\n",
            r.epoch,
            r.train_loss,
            fmt(r.val_mae),
            fmt(r.val_obo)
        ));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest selection MAE (ties keep the earliest).
    pub best: Checkpoint,
    pub best_epoch: Option<usize>,
    pub last: Checkpoint,
    pub curve: Vec<EpochRecord>,
    pub steps: usize,
}

/// Loss and parameter gradients (in parameter order) for one video.
pub fn item_loss_and_grads(
    params: &ModelParams,
    cfg: &ModelConfig,
    features: &Tensor,
    target: &DensityMap,
    mask: Option<&[bool]>,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let x = tape.constant(features.clone());
    let out = forward_on(&mut tape, &bound, cfg, x, mask, dropout_rng)?;
    let loss = density_loss_on_tape(&mut tape, out.density, target, mask)?;
    let value = tape.value(loss).data()[0];
    let mut grads = tape.backward(loss).map_err(ModelError::from)?;
    let g = bound
        .iter()
        .map(|(_, v)| grads.take(v).expect("leaf gradient"))
        .collect();
    Ok((value, g))
}

/// Mean item loss of one batch and its gradient. Items are processed and
/// summed in order.
fn batch_loss_and_grads(
    params: &ModelParams,
    cfg: &ModelConfig,
    items: &[&(FeatureSequence, AnnotationSet)],
    seed: u64,
) -> Result<(f64, Vec<Tensor>)> {
    let owned: Vec<(FeatureSequence, AnnotationSet)> = items.iter().map(|&i| i.clone()).collect();
    let batch = make_batch(&owned)?;
    let b = batch.size() as f64;
    let mut total = 0.0;
    let mut sum: Option<Vec<Tensor>> = None;
    for i in 0..batch.size() {
        // Padding is exactly inert under masking, so each item runs on its
        // own valid prefix.
        let len = batch.lengths[i];
        let width = batch.width();
        let feats = Tensor::new(
            vec![len, width],
            batch.item_features(i).data()[..len * width].to_vec(),
        )
        .map_err(ModelError::from)?;
        let target = DensityMap {
            values: batch.item_ground_truth(i)[..len].to_vec(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((i as u64) << 32));
        let rng = (cfg.dropout > 0.0).then_some(&mut rng);
        let (loss, grads) = item_loss_and_grads(params, cfg, &feats, &target, None, rng)?;
        total += loss;
        match &mut sum {
            None => sum = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += y;
                    }
                }
            }
        }
    }
    let mut grads = sum.expect("non-empty batch");
    for g in &mut grads {
        for v in g.data_mut() {
            *v /= b;
        }
    }
    Ok((total / b, grads))
}

/// Trains from a fresh initialisation. Checkpoints are selected on
/// `select_on` (use the training set when there is no validation split).
pub fn train(
    train_set: &[(FeatureSequence, AnnotationSet)],
    select_on: &[(FeatureSequence, AnnotationSet)],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::Config("training set is empty".into()));
    }
    if let Some((s, _)) = train_set.iter().find(|(s, _)| s.width() != model_cfg.d0) {
        return Err(TrainError::Config(format!(
            "{} has width {}, model expects {}",
            s.video_id,
            s.width(),
            model_cfg.d0
        )));
    }
    let mut params = ModelParams::init(model_cfg, cfg.init_seed)?;
    let mut state = OptimState::new(&params, cfg.adam());
    let mut best = Checkpoint::new(model_cfg.clone(), params.clone())?;
    let mut best_mae = f64::INFINITY;
    let mut best_epoch = None;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut steps = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    'epochs: for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let items: Vec<_> = chunk.iter().map(|&i| &train_set[i]).collect();
            let dropout_seed = cfg.seed ^ (steps as u64).rotate_left(17);
            let (loss, grads) = batch_loss_and_grads(&params, model_cfg, &items, dropout_seed)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch, step: steps, loss });
            }
            adam_step(&mut params, &grads, &mut state)?;
            steps += 1;
            loss_sum += loss * items.len() as f64;
            seen += items.len();
        }
        if seen == 0 {
            break 'epochs;
        }
        let last_epoch = epoch + 1 == cfg.epochs || cfg.max_steps.is_some_and(|m| steps >= m);
        let (val_mae, val_obo) = if (epoch + 1) % cfg.eval_every == 0 || last_epoch {
            let sel = if select_on.is_empty() { train_set } else { select_on };
            let report = evaluate_params(sel, &params, model_cfg)?;
            if report.mae < best_mae {
                best_mae = report.mae;
                best_epoch = Some(epoch);
                best = Checkpoint::new(model_cfg.clone(), params.clone())?;
            }
            (Some(report.mae), Some(report.obo))
        } else {
            (None, None)
        };
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_mae,
            val_obo,
        };
        on_epoch(&rec);
        curve.push(rec);
        if last_epoch {
            break;
        }
    }

    Ok(TrainOutcome {
        best,
        best_epoch,
        last: Checkpoint::new(model_cfg.clone(), params)?,
        curve,
        steps,
    })
}

/// Loads a split, applying an extra frame stride to features and
/// annotations alike.
pub fn load_split(manifest: &Manifest, split: Split, stride: usize) -> Result<Dataset> {
    let items = manifest.load_split(split)?;
    Ok(items
        .into_iter()
        .map(|(seq, ann)| {
            if stride == 1 {
                return (seq, ann);
            }
            let s = apply_stride(&seq, stride);
            let a = stride_annotations(&ann, stride, s.len());
            (s, a)
        })
        .collect())
}

pub fn train_from_manifest(
    manifest: &Manifest,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let train_set = load_split(manifest, Split::Train, cfg.stride)?;
    let val_set = load_split(manifest, Split::Val, cfg.stride)?;
    train(&train_set, &val_set, model_cfg, cfg, on_epoch)
}

/// Density map and count for one video.
pub fn predict(seq: &FeatureSequence, ck: &Checkpoint) -> Result<(DensityMap, f64)> {
    if seq.width() != ck.config.d0 {
        return Err(TrainError::Config(format!(
            "{} has width {}, checkpoint expects {}",
            seq.video_id,
            seq.width(),
            ck.config.d0
        )));
    }
    let d = forward(&seq.features, &ck.params, &ck.config, None)?;
    let c = count(&d, None)?;
    Ok((d, c))
}

fn evaluate_params(
    items: &[(FeatureSequence, AnnotationSet)],
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<EvalReport> {
    let rows = items
        .iter()
        .map(|(seq, ann)| {
            let d = forward(&seq.features, params, cfg, None)?;
            Ok((seq.video_id.clone(), ann.len() as f64, count(&d, None)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_counts(rows))
}

pub fn evaluate(items: &[(FeatureSequence, AnnotationSet)], ck: &Checkpoint) -> Result<EvalReport> {
    if let Some((s, _)) = items.iter().find(|(s, _)| s.width() != ck.config.d0) {
        return Err(TrainError::Config(format!(
            "{} has width {}, checkpoint expects {}",
            s.video_id,
            s.width(),
            ck.config.d0
        )));
    }
    evaluate_params(items, &ck.params, &ck.config)
}
