//! Compare parcel relevance between classes: KS screen, Mann-Whitney or
//! Welch, Benjamini-Yekutieli, then a Table 2 style summary.

use adxai::data::{AtlasNames, Class, Cohort, SessionRecord};
use adxai::report::render_table2;
use adxai::stats::{analyze, build_rv_sets, by_correction, mann_whitney, TargetSets};
use adxai::train::Prediction;
use adxai::xai::rv_rows;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> adxai::Result<()> {
    let mw = mann_whitney(&[1.1, 2.3, 2.9, 4.0], &[3.5, 4.4, 5.0, 6.1, 7.2])?;
    println!("Mann-Whitney U {} p {:.4} (exact: {})", mw.u, mw.p, mw.exact);
    println!("BY-adjusted {:?}", by_correction(&[0.001, 0.01, 0.02, 0.04, 0.5], 5)?);

    // Fake relevance values: AD subjects light up the hippocampi and amygdalae.
    let names = AtlasNames::shipped();
    let planted = ["Hip_r", "Hip_l", "Amg_r", "Amg_l"].map(|a| names.position(a).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut sessions, mut rows, mut preds) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..60 {
        let class = if i < 30 { Class::Ad } else { Class::Hc };
        let id = format!("s{i:02}");
        let rvs: Vec<f64> = (0..names.len())
            .map(|p| {
                let boost = if class == Class::Ad && planted.contains(&p) { 0.4 } else { 0.0 };
                rng.random::<f64>() * 0.5 + boost
            })
            .collect();
        rows.extend(rv_rows(&id, class, &rvs, &names));
        preds.push(Prediction {
            session_id: id.clone(),
            class,
            logit: 0.0,
            probability: 0.5,
            predicted: class,
            partition: "train".into(),
        });
        sessions.push(SessionRecord {
            subject_id: format!("sub{i:02}"),
            session_id: id,
            cdr: if class == Class::Ad { 1.0 } else { 0.0 },
            class,
            volume_path: None,
            matrix_path: None,
        });
    }
    let cohort = Cohort::new(sessions)?;
    let sets = build_rv_sets(&rows, &preds, &cohort)?;
    let report = analyze(&sets, &names, &TargetSets::shipped())?;
    for s in report.significant() {
        println!("{:<8} {} p_adj {:.2e} {}", s.acronym, s.test.as_str(), s.p_adjusted, s.direction.as_str());
    }
    println!("\n{}", render_table2(&[("Synthetic", &report)]));
    Ok(())
}
