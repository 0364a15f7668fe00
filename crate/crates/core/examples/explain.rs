//! Train the graph model once, then explain a few sessions with Grad-CAM and
//! save the mean heatmap of the first one as a PGM image.

use adxai::data::Class;
use adxai::models::{BcGcnSeConfig, ModelConfig};
use adxai::report::{matrix_pgm, write_bytes};
use adxai::stats::rank_top_parcels;
use adxai::synth::{synth_samples, CohortSpec, SynthSpec};
use adxai::train::{final_run, PipelineConfig};
use adxai::xai::explain_session;

fn main() -> adxai::Result<()> {
    let spec = SynthSpec {
        cohort: CohortSpec {
            hc_sessions: 40,
            ad_sessions: 36,
            ..Default::default()
        },
        seed: 4,
        ..Default::default()
    };
    let mut cfg = PipelineConfig::default();
    cfg.model = ModelConfig::Bcgcnse(BcGcnSeConfig {
        widths: [2, 4, 4],
        ..Default::default()
    });
    cfg.train.batch_size = 16;
    cfg.train.lr = 0.01;
    cfg.train.max_epochs = 40;

    let data = synth_samples(&spec, &cfg)?;
    let mut out = final_run(&data.cohort, &data.samples, &cfg)?;
    println!("final model: best epoch {}, union AUC {:?}", out.best_epoch, out.union_auc);

    for (i, s) in data.samples.iter().filter(|s| s.is_ad()).take(3).enumerate() {
        let e = explain_session(&mut out.model, &s.input, Class::Ad, None)?;
        let top: Vec<&str> = rank_top_parcels(&e.rvs)
            .into_iter()
            .take(5)
            .map(|p| data.names.get(p).acronym.as_str())
            .collect();
        println!("{} logit {:+.3}, most relevant parcels {top:?}", s.id, e.logit);
        if i == 0 {
            write_bytes("explain_heatmap.pgm".as_ref(), &matrix_pgm(&e.heatmap)?)?;
        }
    }
    println!("planted parcels: {:?}", spec.signal.planted.iter().map(|&p| &data.names.get(p - 1).acronym).collect::<Vec<_>>());
    Ok(())
}
