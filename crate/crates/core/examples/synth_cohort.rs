//! Generate a small synthetic cohort on disk and print its layout.
//!
//!     cargo run --example synth_cohort -- /tmp/cohort

use adxai::data::read_manifest;
use adxai::synth::{write_synth, CohortSpec, Modality, SynthSpec};

fn main() -> adxai::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "synth_out".into());
    let spec = SynthSpec {
        cohort: CohortSpec {
            hc_sessions: 24,
            ad_sessions: 20,
            ..Default::default()
        },
        modality: Modality::Both,
        seed: 3,
        ..Default::default()
    };
    let out = write_synth(dir.as_ref(), &spec)?;

    // The manifest round-trips through the reader.
    let cohort = read_manifest(&out.manifest)?;
    let (hc, ad) = cohort.class_counts();
    println!("{} sessions ({hc} HC, {ad} AD) from {} subjects", cohort.len(), cohort.subjects().len());
    println!("mixed-class subjects: {:?}", cohort.mixed_subjects());
    for s in cohort.sessions().iter().take(5) {
        println!("  {} {} cdr={} {}", s.subject_id, s.session_id, s.cdr, s.class.as_str());
    }
    println!("atlas names in {}", out.atlas_names.display());
    Ok(())
}
