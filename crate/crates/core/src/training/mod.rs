//! Reconstruction training, error scoring and threshold calibration.

mod adam;
mod scoring;
mod thresholds;
mod windows;

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use adam::{adam_step, AdamState};
pub use scoring::{reconstruction_errors, ReconstructionErrors, SCORE_BATCH};
pub use thresholds::{thresholds_from_errors, ThresholdMode, ThresholdVector};
pub use windows::{target_batch, window_batch, window_times};

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::data::{
    build_training_mask, fit_normalization, DataError, DatasetSplit, IncidentLog, MaskWindows, NormalizationStats,
    SensorGrid, TrainingMask,
};
use crate::exec::Execution;
use crate::graph::GraphTopology;
use crate::models::{mix, AutoencoderModel, BatchPlan, ModelConfig, ModelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no usable training windows")]
    EmptyTrainingSet,
    #[error("loss became non-finite in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("bad threshold file: {0}")]
    BadThresholds(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl TrainConfig {
    /// Defaults with the model's learning rate.
    pub fn for_model(model: &ModelConfig, seed: u64) -> Self {
        TrainConfig {
            learning_rate: model.learning_rate,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed,
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.patience >= self.max_epochs {
            return bad(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate {}", self.learning_rate));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches, with dropout.
    pub train_mse: f64,
    /// Validation reconstruction error after the epoch; `None` without a
    /// validation set.
    pub val_mse: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    /// Parameters from the epoch with the lowest validation error (training
    /// error when there is no validation set).
    pub model: AutoencoderModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingOutcome {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch - 1]
    }
}

/// Minimizes reconstruction MSE on the windows usable under `train_mask`,
/// early-stopping on the windows usable under `val_mask`.
pub fn train_model(
    model: &AutoencoderModel,
    grid: &SensorGrid,
    train_mask: &TrainingMask,
    val_mask: &TrainingMask,
    topology: &GraphTopology,
    config: &TrainConfig,
) -> Result<TrainingOutcome, TrainError> {
    config.validate()?;
    model.check_topology(topology)?;
    if grid.n_nodes() != model.n_base() {
        return Err(TrainError::ShapeMismatch(format!(
            "grid has {} nodes, model expects {}",
            grid.n_nodes(),
            model.n_base()
        )));
    }
    if train_mask.len() != grid.n_times() || val_mask.len() != grid.n_times() {
        return Err(TrainError::ShapeMismatch("mask length differs from grid".into()));
    }
    let n_slices = model.config().n_slices();
    let train_times = window_times(grid, train_mask, n_slices);
    if train_times.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let val_times = window_times(grid, val_mask, n_slices);

    let mut model = model.clone();
    let mut adam = AdamState::new(model.params().iter().map(|p| p.value.shape()));
    let mut plans: HashMap<usize, BatchPlan> = HashMap::new();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, AutoencoderModel)> = None;
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let epoch_seed = mix(config.seed, epoch as u64);
        let mut order = train_times.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut loss_sum = 0.0;
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            let plan = match plans.entry(batch.len()) {
                std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::hash_map::Entry::Vacant(e) => e.insert(model.plan(topology, batch.len())?),
            };
            let mut tape = Tape::<f32>::with_execution(config.execution);
            let vars = model.bind(&mut tape, true);
            let x = tape.constant(window_batch(grid, batch, n_slices));
            let target = tape.constant(target_batch(grid, batch));
            let out = model.forward(&mut tape, &vars, x, plan, Some(mix(epoch_seed, bi as u64)))?;
            let loss = tape.mse(out, target)?;
            let l = tape.value(loss).item() as f64;
            if !l.is_finite() {
                return Err(TrainError::DivergedLoss { epoch });
            }
            let mut grads = tape.backward(loss)?;
            let g: Vec<Tensor<f32>> = vars.iter().map(|&v| grads.take(v)).collect();
            drop(tape);
            let mut params: Vec<&mut Tensor<f32>> = model.params_mut().iter_mut().map(|p| &mut p.value).collect();
            adam_step(&mut params, &g, &mut adam, config.learning_rate)?;
            loss_sum += l * batch.len() as f64;
        }
        let train_mse = loss_sum / train_times.len() as f64;
        let val_mse = if val_times.is_empty() {
            None
        } else {
            Some(reconstruction_errors(&model, grid, topology, &val_times, config.execution)?.mean())
        };
        let score = val_mse.unwrap_or(train_mse);
        if !train_mse.is_finite() || !score.is_finite() {
            return Err(TrainError::DivergedLoss { epoch });
        }
        log::info!(
            "epoch {epoch}: train {train_mse:.6} val {}",
            val_mse.map_or("-".into(), |v| format!("{v:.6}"))
        );
        history.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
        });
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainingOutcome {
        model,
        history,
        best_epoch,
        stopped_early,
    })
}

/// Writes `epoch,train_mse,val_mse` rows.
pub fn write_history_csv<W: Write>(mut w: W, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "epoch,train_mse,val_mse")?;
    for r in history {
        let val = r.val_mse.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{}", r.epoch, r.train_mse, val)?;
    }
    Ok(())
}

/// Normalized grid plus the masks of one train/validation split.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub grid: SensorGrid,
    pub stats: NormalizationStats,
    /// Anomaly-window mask over all days, before the split is applied.
    pub mask: TrainingMask,
    pub train_mask: TrainingMask,
    pub val_mask: TrainingMask,
}

/// Masks anomaly windows, restricts to the split's train and validation
/// days, and min-max normalizes with statistics from the training part.
pub fn prepare_data(
    raw: &SensorGrid,
    log: &IncidentLog,
    split: &DatasetSplit,
    windows: &MaskWindows,
) -> Result<PreparedData, TrainError> {
    split.validate(raw)?;
    let mask = build_training_mask(raw, log, windows, &split.excluded());
    let train_mask = mask.restrict_to_days(raw, &split.train());
    let val_mask = mask.restrict_to_days(raw, &split.validation());
    if train_mask.usable_count() == 0 {
        return Err(TrainError::EmptyTrainingSet);
    }
    let stats = fit_normalization(raw, &train_mask)?;
    Ok(PreparedData {
        grid: stats.normalize_grid(raw),
        stats,
        mask,
        train_mask,
        val_mask,
    })
}

/// Per-node errors of `model` over every usable window of `mask`.
pub fn mask_errors(
    model: &AutoencoderModel,
    grid: &SensorGrid,
    mask: &TrainingMask,
    topology: &GraphTopology,
    exec: Execution,
) -> Result<ReconstructionErrors, TrainError> {
    let times = window_times(grid, mask, model.config().n_slices());
    reconstruction_errors(model, grid, topology, &times, exec)
}

/// Thresholds at the maximum training error of each node.
pub fn calibrate_thresholds(
    model: &AutoencoderModel,
    grid: &SensorGrid,
    mask: &TrainingMask,
    topology: &GraphTopology,
    mode: ThresholdMode,
    exec: Execution,
) -> Result<ThresholdVector, TrainError> {
    let errors = mask_errors(model, grid, mask, topology, exec)?;
    thresholds_from_errors(&errors, mode)
}
