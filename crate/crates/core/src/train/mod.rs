//! Subject-exclusive cross-validation, the training loop and fold metrics.

mod metrics;
mod pipeline;
mod split;
mod trainer;

pub use metrics::{class_weights, evaluate_fold_metrics, quantile, roc_auc, Confusion, FoldMetrics, FoldRow, Summary};
pub use pipeline::{
    balance_with_smote, condition_matrix, condition_volume, conform_labels, crossval, derive_seed, final_run, load_input, load_samples, predictions_for, CrossvalOutcome,
    FinalOutcome, FoldOutcome, PipelineConfig, Prediction,
};
pub use split::{stratified_subject_kfold, subject_class, FoldSplit};
pub use trainer::{predict, train_model, EpochRecord, Sample, TrainConfig, TrainOutcome};
