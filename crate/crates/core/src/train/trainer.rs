use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{class_weights, roc_auc};
use crate::error::{Error, Result};
use crate::nn::{bce_loss, Adam, AdamConfig, ModelGraph};
use crate::tensor::Tensor;

/// One labelled model input.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub input: Tensor,
    /// 1 for AD, 0 for HC.
    pub label: f64,
}

impl Sample {
    pub fn is_ad(&self) -> bool {
        self.label == 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub lr: f64,
    /// Smallest validation-loss decrease that resets the patience counter.
    pub min_delta: f64,
    pub seed: u64,
    /// Weight the loss by inverse class frequency of the training set.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            patience: 8,
            max_epochs: 200,
            lr: 1e-3,
            min_delta: 0.0,
            seed: 0,
            class_weighting: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the highest validation AUC.
    pub model: ModelGraph,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub warnings: Vec<String>,
}

/// Logits for every sample, in order.
pub fn predict(model: &mut ModelGraph, samples: &[Sample]) -> Result<Vec<f64>> {
    samples.iter().map(|s| Ok(model.forward(&s.input)?.logit)).collect()
}

fn mean_loss(logits: &[f64], samples: &[Sample]) -> f64 {
    let total: f64 = logits.iter().zip(samples).map(|(&z, s)| bce_loss(z, s.label, 1.0).0).sum();
    total / samples.len() as f64
}

/// Mini-batch Adam on weighted binary cross-entropy.
///
/// Stops once the validation loss has failed to improve by more than
/// `min_delta` for `patience` consecutive epochs and returns the weights of
/// the epoch with the best validation AUC; among epochs with equal AUC the
/// one with the lower validation loss wins. If AUC is undefined on every
/// epoch (one-class validation set) the last epoch is returned with a warning.
pub fn train_model(mut model: ModelGraph, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(Error::Config("batch_size and max_epochs must be positive".into()));
    }
    if !(cfg.min_delta >= 0.0) {
        return Err(Error::Config("min_delta must be non-negative".into()));
    }
    let n_ad = train.iter().filter(|s| s.is_ad()).count();
    let (w_ad, w_hc) = if cfg.class_weighting && n_ad > 0 && n_ad < train.len() {
        class_weights(n_ad, train.len() - n_ad)?
    } else {
        (1.0, 1.0)
    };
    let weight = |s: &Sample| if s.is_ad() { w_ad } else { w_hc };
    let val_pos: Vec<bool> = val.iter().map(Sample::is_ad).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..Default::default()
    });
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut warnings = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut wait = 0;
    // (auc, val_loss, epoch, weights)
    let mut best: Option<(f64, f64, usize, Vec<Tensor>)> = None;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            model.zero_grad();
            for &i in batch {
                let s = &train[i];
                let z = model.forward(&s.input).map_err(|e| diverged(epoch, e))?.logit;
                let (loss, grad) = bce_loss(z, s.label, weight(s));
                total += loss;
                model.backward(grad)?;
            }
            adam.step(&mut model, 1.0 / batch.len() as f64)?;
        }
        let train_loss = total / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                message: "training loss is not finite".into(),
            });
        }
        let logits = predict(&mut model, val).map_err(|e| diverged(epoch, e))?;
        let val_loss = mean_loss(&logits, val);
        let val_auc = roc_auc(&logits, &val_pos).ok();
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_auc,
        });
        if let Some(auc) = val_auc {
            if best.as_ref().is_none_or(|(b, l, _, _)| auc > *b || (auc == *b && val_loss < *l)) {
                best = Some((auc, val_loss, epoch, model.snapshot()));
            }
        }
        if val_loss < best_loss - cfg.min_delta {
            best_loss = val_loss;
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience.max(1) {
                break;
            }
        }
    }
    let best_epoch = match best {
        Some((_, _, epoch, weights)) => {
            model.restore(&weights)?;
            epoch
        }
        None => {
            let msg = "validation AUC undefined on every epoch; keeping last epoch".to_string();
            warn!("{msg}");
            warnings.push(msg);
            history.len()
        }
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        warnings,
    })
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(m) => Error::Diverged { epoch, message: m },
        other => other,
    }
}
