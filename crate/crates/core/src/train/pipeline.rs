use std::collections::BTreeMap;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_fold_metrics, roc_auc, Confusion, FoldMetrics};
use super::split::{stratified_subject_kfold, FoldSplit};
use super::trainer::{predict, train_model, EpochRecord, Sample, TrainConfig};
use crate::data::{read_conn_csv, read_nifti, Class, Cohort, SessionRecord};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, HEAD_LAYERS};
use crate::nn::{sigmoid, ModelGraph};
use crate::preprocess::{crop_volume, normalize_volume, resize_labels, resize_volume, scale_matrix, smote_matrices, CROP_SHAPE};
use crate::tensor::Tensor;

/// Everything needed to go from a cohort to trained models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub folds: usize,
    /// SMOTE neighbours for connectivity training sets; `None` disables it.
    pub smote_k: Option<usize>,
    /// Divide each connectivity matrix by its largest entry.
    pub scale_matrices: bool,
    /// Subtract the brain mean when normalising volumes.
    pub center_volumes: bool,
    /// Train only the dense head (for checkpoint-initialised runs).
    pub freeze_backbone: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            model: ModelConfig::Bcgcnse(Default::default()),
            train: TrainConfig {
                batch_size: 64,
                ..Default::default()
            },
            folds: 10,
            smote_k: Some(5),
            scale_matrices: true,
            center_volumes: true,
            freeze_backbone: false,
        }
    }
}

impl PipelineConfig {
    /// Defaults for the volumetric model: batch 16, no SMOTE.
    pub fn cnn3d() -> Self {
        PipelineConfig {
            model: ModelConfig::Cnn3d(Default::default()),
            train: TrainConfig {
                batch_size: 16,
                ..Default::default()
            },
            smote_k: None,
            ..Default::default()
        }
    }
}

/// SplitMix64 of `(seed, tag)`, used to give each fold and stage its own stream.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Reads and conditions one session's model input.
pub fn load_input(session: &SessionRecord, cfg: &PipelineConfig) -> Result<Tensor> {
    match &cfg.model {
        ModelConfig::Bcgcnse(g) => {
            let path = session
                .matrix_path
                .as_ref()
                .ok_or_else(|| Error::Data(format!("session `{}` has no matrix_path", session.session_id)))?;
            let m = read_conn_csv(path, &session.session_id, g.n_nodes)?;
            condition_matrix(m.values(), cfg)
        }
        ModelConfig::Cnn3d(_) => {
            let path = session
                .volume_path
                .as_ref()
                .ok_or_else(|| Error::Data(format!("session `{}` has no volume_path", session.session_id)))?;
            condition_volume(read_nifti(path)?.data, cfg)
        }
    }
}

/// Scales a connectivity matrix (when configured) and adds the channel axis.
pub fn condition_matrix(m: &Tensor, cfg: &PipelineConfig) -> Result<Tensor> {
    let values = if cfg.scale_matrices { scale_matrix(m) } else { m.clone() };
    values.reshape(&cfg.model.input_shape())
}

/// Crops (when large enough), resizes to the model grid, normalises within
/// the brain and adds the channel axis.
pub fn condition_volume(mut v: Tensor, cfg: &PipelineConfig) -> Result<Tensor> {
    let ModelConfig::Cnn3d(c) = &cfg.model else {
        return Err(Error::Config("volumes only apply to the volumetric model".into()));
    };
    if v.shape() != c.input_shape {
        if v.ndim() == 3 && v.shape().iter().zip(CROP_SHAPE).all(|(&d, c)| d >= c) {
            v = crop_volume(&v, CROP_SHAPE)?;
        }
        v = resize_volume(&v, c.input_shape)?;
    }
    normalize_volume(&v, cfg.center_volumes)?.reshape(&cfg.model.input_shape())
}

/// Brings an atlas label volume onto the volumetric model's input grid with
/// the same crop as [`load_input`] and nearest-neighbour resampling.
pub fn conform_labels(labels: &Tensor, cfg: &PipelineConfig) -> Result<Tensor> {
    let ModelConfig::Cnn3d(c) = &cfg.model else {
        return Err(Error::Config("atlas label volumes only apply to the volumetric model".into()));
    };
    let mut v = labels.clone();
    if v.shape() != c.input_shape {
        if v.ndim() == 3 && v.shape().iter().zip(CROP_SHAPE).all(|(&d, c)| d >= c) {
            v = crop_volume(&v, CROP_SHAPE)?;
        }
        v = resize_labels(&v, c.input_shape)?;
    }
    Ok(v)
}

/// Inputs for every session of the cohort, in cohort order.
pub fn load_samples(cohort: &Cohort, cfg: &PipelineConfig) -> Result<Vec<Sample>> {
    cohort
        .sessions()
        .par_iter()
        .map(|s| {
            Ok(Sample {
                id: s.session_id.clone(),
                input: load_input(s, cfg).map_err(|e| Error::Data(format!("session `{}`: {e}", s.session_id)))?,
                label: s.class.label(),
            })
        })
        .collect()
}

fn select<'a>(samples: &'a [Sample], ids: &[String]) -> Result<Vec<Sample>> {
    let index: BTreeMap<&str, &'a Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    ids.iter()
        .map(|id| {
            index
                .get(id.as_str())
                .map(|s| (*s).clone())
                .ok_or_else(|| Error::Data(format!("no input loaded for session `{id}`")))
        })
        .collect()
}

/// Appends SMOTE samples of the minority class until both classes match.
pub fn balance_with_smote(train: &mut Vec<Sample>, k: usize, seed: u64) -> Result<usize> {
    let n_ad = train.iter().filter(|s| s.is_ad()).count();
    let n_hc = train.len() - n_ad;
    let (minority_label, n_min, n_max) = if n_ad < n_hc { (1.0, n_ad, n_hc) } else { (0.0, n_hc, n_ad) };
    if n_min == n_max {
        return Ok(0);
    }
    if n_min < 2 {
        warn!("SMOTE skipped: only {n_min} minority samples");
        return Ok(0);
    }
    let k_used = k.min(n_min - 1);
    if k_used < k {
        warn!("SMOTE k reduced from {k} to {k_used} for {n_min} minority samples");
    }
    let minority: Vec<&Tensor> = train
        .iter()
        .filter(|s| s.label == minority_label)
        .map(|s| &s.input)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let synthetic = smote_matrices(&minority, k_used, n_max, &mut rng)?;
    let added = synthetic.len();
    for (i, input) in synthetic.into_iter().enumerate() {
        train.push(Sample {
            id: format!("smote_{i}"),
            input,
            label: minority_label,
        });
    }
    Ok(added)
}

fn build_model(cfg: &PipelineConfig, seed: u64) -> Result<ModelGraph> {
    let mut m = cfg.model.build(seed)?;
    if cfg.freeze_backbone {
        m.freeze_except(&HEAD_LAYERS);
    }
    Ok(m)
}

fn prepare_train(samples: &[Sample], split: &FoldSplit, cfg: &PipelineConfig, seed: u64) -> Result<Vec<Sample>> {
    let mut train = select(samples, &split.train)?;
    if let (Some(k), ModelConfig::Bcgcnse(_)) = (cfg.smote_k, &cfg.model) {
        balance_with_smote(&mut train, k, derive_seed(seed, 3))?;
    }
    Ok(train)
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub split: FoldSplit,
    pub confusion: Confusion,
    pub auc: Option<f64>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct CrossvalOutcome {
    pub folds: Vec<FoldOutcome>,
    pub metrics: FoldMetrics,
}

fn confusion_of(logits: &[f64], samples: &[Sample]) -> Confusion {
    let actual: Vec<bool> = samples.iter().map(Sample::is_ad).collect();
    let predicted: Vec<bool> = logits.iter().map(|&z| z >= 0.0).collect();
    Confusion::from_predictions(&actual, &predicted)
}

/// Stratified subject-exclusive k-fold cross-validation. Folds run in
/// parallel on the current rayon pool; results do not depend on thread count.
pub fn crossval(cohort: &Cohort, samples: &[Sample], cfg: &PipelineConfig) -> Result<CrossvalOutcome> {
    let seed = cfg.train.seed;
    let splits = stratified_subject_kfold(cohort, cfg.folds, seed)?;
    let folds: Vec<FoldOutcome> = splits
        .into_par_iter()
        .map(|split| {
            let f = split.fold_id as u64;
            let fold_seed = derive_seed(seed, 100 + f);
            let ctx = |e: Error| match e {
                Error::Diverged { epoch, message } => Error::Diverged {
                    epoch,
                    message: format!("fold {f}: {message}"),
                },
                other => Error::Data(format!("fold {f}: {other}")),
            };
            let train = prepare_train(samples, &split, cfg, fold_seed).map_err(ctx)?;
            let val = select(samples, &split.validation).map_err(ctx)?;
            let model = build_model(cfg, derive_seed(fold_seed, 1)).map_err(ctx)?;
            let tc = TrainConfig {
                seed: derive_seed(fold_seed, 2),
                ..cfg.train.clone()
            };
            let mut out = train_model(model, &train, &val, &tc).map_err(ctx)?;
            let logits = predict(&mut out.model, &val)?;
            let positive: Vec<bool> = val.iter().map(Sample::is_ad).collect();
            let confusion = confusion_of(&logits, &val);
            info!(
                "fold {f}: best epoch {} of {}, accuracy {:.3}",
                out.best_epoch,
                out.history.len(),
                confusion.accuracy()
            );
            Ok(FoldOutcome {
                split,
                confusion,
                auc: roc_auc(&logits, &positive).ok(),
                history: out.history,
                best_epoch: out.best_epoch,
            })
        })
        .collect::<Result<_>>()?;
    let metrics = evaluate_fold_metrics(&folds.iter().map(|f| (f.confusion, f.auc)).collect::<Vec<_>>())?;
    Ok(CrossvalOutcome { folds, metrics })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub session_id: String,
    pub class: Class,
    pub logit: f64,
    pub probability: f64,
    pub predicted: Class,
    /// `train` or `validation` within the final split.
    pub partition: String,
}

#[derive(Debug, Clone)]
pub struct FinalOutcome {
    pub model: ModelGraph,
    pub split: FoldSplit,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Evaluated on training and validation sessions together.
    pub union: Confusion,
    pub union_auc: Option<f64>,
    pub predictions: Vec<Prediction>,
}

pub fn predictions_for(model: &mut ModelGraph, cohort: &Cohort, samples: &[Sample], split: &FoldSplit) -> Result<Vec<Prediction>> {
    let logits = predict(model, samples)?;
    samples
        .iter()
        .zip(logits)
        .map(|(s, z)| {
            let class = cohort
                .session(&s.id)
                .ok_or_else(|| Error::Data(format!("unknown session `{}`", s.id)))?
                .class;
            let partition = if split.validation.binary_search(&s.id).is_ok() {
                "validation"
            } else {
                "train"
            };
            Ok(Prediction {
                session_id: s.id.clone(),
                class,
                logit: z,
                probability: sigmoid(z),
                predicted: if z >= 0.0 { Class::Ad } else { Class::Hc },
                partition: partition.into(),
            })
        })
        .collect()
}

/// One 90/10 subject-exclusive stratified split (fold 0 of a 10-fold
/// partition), trained once and scored on the union of both parts.
pub fn final_run(cohort: &Cohort, samples: &[Sample], cfg: &PipelineConfig) -> Result<FinalOutcome> {
    let seed = cfg.train.seed;
    let split = stratified_subject_kfold(cohort, 10, derive_seed(seed, 7))?
        .into_iter()
        .next()
        .expect("ten folds");
    let run_seed = derive_seed(seed, 200);
    let train = prepare_train(samples, &split, cfg, run_seed)?;
    let val = select(samples, &split.validation)?;
    let model = build_model(cfg, derive_seed(run_seed, 1))?;
    let tc = TrainConfig {
        seed: derive_seed(run_seed, 2),
        ..cfg.train.clone()
    };
    let mut out = train_model(model, &train, &val, &tc)?;
    let predictions = predictions_for(&mut out.model, cohort, samples, &split)?;
    let actual: Vec<bool> = predictions.iter().map(|p| p.class == Class::Ad).collect();
    let predicted: Vec<bool> = predictions.iter().map(|p| p.predicted == Class::Ad).collect();
    let logits: Vec<f64> = predictions.iter().map(|p| p.logit).collect();
    Ok(FinalOutcome {
        union: Confusion::from_predictions(&actual, &predicted),
        union_auc: roc_auc(&logits, &actual).ok(),
        model: out.model,
        split,
        history: out.history,
        best_epoch: out.best_epoch,
        predictions,
    })
}
