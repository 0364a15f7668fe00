//! Subject-exclusive cross-validation of the graph model on an in-memory
//! synthetic cohort.

use adxai::models::{BcGcnSeConfig, ModelConfig};
use adxai::synth::{synth_samples, CohortSpec, SynthSpec};
use adxai::train::{crossval, PipelineConfig};

fn main() -> adxai::Result<()> {
    let spec = SynthSpec {
        cohort: CohortSpec {
            hc_sessions: 48,
            ad_sessions: 40,
            ..Default::default()
        },
        seed: 11,
        ..Default::default()
    };
    let mut cfg = PipelineConfig::default();
    cfg.model = ModelConfig::Bcgcnse(BcGcnSeConfig {
        widths: [2, 4, 4],
        ..Default::default()
    });
    cfg.folds = 4;
    cfg.train.batch_size = 16;
    cfg.train.lr = 0.01;
    cfg.train.max_epochs = 30;
    cfg.train.patience = 5;

    let data = synth_samples(&spec, &cfg)?;
    let out = crossval(&data.cohort, &data.samples, &cfg)?;
    for f in &out.folds {
        println!(
            "fold {}: {} train / {} validation, best epoch {} of {}, AUC {:?}",
            f.split.fold_id,
            f.split.train.len(),
            f.split.validation.len(),
            f.best_epoch,
            f.history.len(),
            f.auc
        );
    }
    println!("accuracy {}", out.metrics.accuracy.render());
    println!("AUC      {}", out.metrics.auc.render());
    Ok(())
}
