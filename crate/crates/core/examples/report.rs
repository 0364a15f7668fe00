//! Assemble the markdown report from a short cross-validation and a final run.

use adxai::models::{BcGcnSeConfig, ModelConfig};
use adxai::report::{final_metrics_doc, metrics_doc, render_report};
use adxai::synth::{synth_samples, CohortSpec, SynthSpec};
use adxai::train::{crossval, final_run, PipelineConfig};

fn main() -> adxai::Result<()> {
    let spec = SynthSpec {
        cohort: CohortSpec {
            hc_sessions: 30,
            ad_sessions: 24,
            ..Default::default()
        },
        seed: 9,
        ..Default::default()
    };
    let mut cfg = PipelineConfig::default();
    cfg.model = ModelConfig::Bcgcnse(BcGcnSeConfig {
        widths: [2, 4, 4],
        ..Default::default()
    });
    cfg.folds = 3;
    cfg.train.batch_size = 16;
    cfg.train.lr = 0.01;
    cfg.train.max_epochs = 40;

    let data = synth_samples(&spec, &cfg)?;
    let cv = crossval(&data.cohort, &data.samples, &cfg)?;
    let fin = final_run(&data.cohort, &data.samples, &cfg)?;
    let kind = cfg.model.kind();
    let md = render_report(
        Some(&metrics_doc(kind, data.samples.len(), &cv)),
        Some(&final_metrics_doc(kind, &fin)),
        None,
        None,
    );
    println!("{md}");
    Ok(())
}
