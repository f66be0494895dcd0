//! SGD and Adam, plus the epoch loop that trains one task.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TaskDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{loss_and_grads, ActiveRowMask, ModelSnapshot};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub const DEFAULT_SGD_LR: f64 = 0.01;
pub const DEFAULT_ADAM_LR: f64 = 0.001;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_EPOCHS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn default_lr(self) -> f64 {
        match self {
            OptimizerKind::Sgd => DEFAULT_SGD_LR,
            OptimizerKind::Adam => DEFAULT_ADAM_LR,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first_moment: Vec<Matrix>,
    second_moment: Vec<Matrix>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64, model: &ModelSnapshot) -> Self {
        let moments = || -> Vec<Matrix> {
            match kind {
                OptimizerKind::Sgd => Vec::new(),
                OptimizerKind::Adam => model
                    .layers
                    .iter()
                    .map(|m| Matrix::zeros(m.rows(), m.cols()))
                    .collect(),
            }
        };
        Self {
            kind,
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            first_moment: moments(),
            second_moment: moments(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Matrix] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Matrix] {
        &self.second_moment
    }
}

/// One optimizer step. Rows that are inactive under `mask` are left untouched,
/// including their Adam moments.
pub fn apply_update(
    state: &mut OptimizerState,
    model: &mut ModelSnapshot,
    grads: &[Matrix],
    mask: &ActiveRowMask,
) -> Result<()> {
    if grads.len() != model.num_layers()
        || grads
            .iter()
            .zip(&model.layers)
            .any(|(g, w)| g.shape() != w.shape())
    {
        return Err(Error::Shape("gradients do not match the model".into()));
    }
    state.step += 1;
    let (bias1, bias2) = match state.kind {
        OptimizerKind::Sgd => (1.0, 1.0),
        OptimizerKind::Adam => (
            1.0 - state.beta1.powi(state.step as i32),
            1.0 - state.beta2.powi(state.step as i32),
        ),
    };

    for (l, (w, g)) in model.layers.iter_mut().zip(grads).enumerate() {
        let active = mask.layers.get(l);
        for r in 0..w.rows() {
            if active.is_some_and(|a| !a[r]) {
                continue;
            }
            let grow = g.row(r);
            match state.kind {
                OptimizerKind::Sgd => {
                    for (wi, &gi) in w.row_mut(r).iter_mut().zip(grow) {
                        *wi -= state.lr * gi;
                    }
                }
                OptimizerKind::Adam => {
                    let m = state.first_moment[l].row_mut(r);
                    let v = state.second_moment[l].row_mut(r);
                    for (((wi, &gi), mi), vi) in w.row_mut(r).iter_mut().zip(grow).zip(m).zip(v) {
                        *mi = state.beta1 * *mi + (1.0 - state.beta1) * gi;
                        *vi = state.beta2 * *vi + (1.0 - state.beta2) * gi * gi;
                        let m_hat = *mi / bias1;
                        let v_hat = *vi / bias2;
                        *wi -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
                    }
                }
            }
            if let Some(bad) = w.row(r).iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "update produced {bad} in layer {l}, row {r} at step {}",
                    state.step
                )));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerKind, seed: u64) -> Self {
        Self {
            optimizer,
            lr: optimizer.default_lr(),
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: DEFAULT_EPOCHS,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ModelSnapshot,
    /// Example-weighted mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().expect("at least one epoch")
    }
}

/// Trains a copy of `model` on `task` with a fresh optimizer, reshuffling the
/// examples every epoch from a stream seeded by `cfg.seed`.
pub fn train_epochs(
    model: &ModelSnapshot,
    mask: &ActiveRowMask,
    task: &TaskDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    mask.check(&model.arch)?;
    if task.dim() != model.arch.input_dim || task.classes != model.arch.classes {
        return Err(Error::Shape(format!(
            "task {} is (d={}, K={}), model is (d={}, K={})",
            task.task_id,
            task.dim(),
            task.classes,
            model.arch.input_dim,
            model.arch.classes
        )));
    }
    let mut model = model.clone();
    let mut state = OptimizerState::new(cfg.optimizer, cfg.lr, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..task.len()).collect();
    let d = task.dim();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut buf = Vec::with_capacity(cfg.batch_size * d);
    let mut labels = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            buf.clear();
            labels.clear();
            for &i in batch {
                buf.extend_from_slice(task.input(i));
                labels.push(task.labels[i]);
            }
            let inputs = Matrix::new(batch.len(), d, std::mem::take(&mut buf))?;
            let (loss, grads) = loss_and_grads(&model, mask, &inputs, &labels).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!(
                    "task {} epoch {epoch}: {msg}",
                    task.task_id
                )),
                other => other,
            })?;
            buf = inputs.into_data();
            apply_update(&mut state, &mut model, &grads, mask)?;
            total += loss * batch.len() as f64;
        }
        epoch_losses.push(total / task.len() as f64);
    }
    Ok(TrainOutcome {
        model,
        epoch_losses,
    })
}
