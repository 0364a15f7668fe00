use std::collections::BTreeMap;

use crate::data::{Class, Cohort};
use crate::error::{Error, Result};
use crate::train::Prediction;
use crate::xai::RvRow;

/// Subject-level, min-max normalised relevance values per parcel and class.
#[derive(Debug, Clone, PartialEq)]
pub struct RvSets {
    pub n_parcels: usize,
    pub ad_subjects: Vec<String>,
    pub hc_subjects: Vec<String>,
    /// `ad[p][s]`: parcel `p` (0-based) of AD subject `s`.
    pub ad: Vec<Vec<f64>>,
    pub hc: Vec<Vec<f64>>,
    /// Range used for normalisation.
    pub min: f64,
    pub max: f64,
}

impl RvSets {
    pub fn class(&self, class: Class) -> &[Vec<f64>] {
        match class {
            Class::Ad => &self.ad,
            Class::Hc => &self.hc,
        }
    }
}

/// Builds the per-class samples from session relevance values:
/// drops misclassified sessions, averages each subject's remaining sessions,
/// removes subjects that have sessions in both classes, splits by class and
/// rescales every value to `[0, 1]` with the global minimum and maximum.
pub fn build_rv_sets(rows: &[RvRow], predictions: &[Prediction], cohort: &Cohort) -> Result<RvSets> {
    let predicted: BTreeMap<&str, Class> = predictions.iter().map(|p| (p.session_id.as_str(), p.predicted)).collect();
    let mut by_session: BTreeMap<&str, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in rows {
        if by_session.entry(&r.session_id).or_default().insert(r.parcel, r.rv).is_some() {
            return Err(Error::Data(format!("duplicate RV for {} parcel {}", r.session_id, r.parcel)));
        }
    }
    let n_parcels = by_session.values().map(|m| m.len()).max().unwrap_or(0);
    if n_parcels == 0 {
        return Err(Error::Data("no relevance values".into()));
    }
    let mixed = cohort.mixed_subjects();
    // subject -> (class, summed RVs, session count)
    let mut subjects: BTreeMap<&str, (Class, Vec<f64>, usize)> = BTreeMap::new();
    for (sid, parcels) in &by_session {
        let session = cohort
            .session(sid)
            .ok_or_else(|| Error::Data(format!("RV table names unknown session `{sid}`")))?;
        if parcels.len() != n_parcels || parcels.keys().copied().ne(1..=n_parcels) {
            return Err(Error::Data(format!("session `{sid}` does not have parcels 1..={n_parcels}")));
        }
        let pred = predicted
            .get(sid)
            .ok_or_else(|| Error::Data(format!("no prediction for session `{sid}`")))?;
        if *pred != session.class || mixed.contains(&session.subject_id) {
            continue;
        }
        let entry = subjects
            .entry(&session.subject_id)
            .or_insert_with(|| (session.class, vec![0.0; n_parcels], 0));
        for (acc, v) in entry.1.iter_mut().zip(parcels.values()) {
            *acc += v;
        }
        entry.2 += 1;
    }
    let mut sets = RvSets {
        n_parcels,
        ad_subjects: Vec::new(),
        hc_subjects: Vec::new(),
        ad: vec![Vec::new(); n_parcels],
        hc: vec![Vec::new(); n_parcels],
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
    };
    for (subject, (class, sums, n)) in subjects {
        let (names, cols) = match class {
            Class::Ad => (&mut sets.ad_subjects, &mut sets.ad),
            Class::Hc => (&mut sets.hc_subjects, &mut sets.hc),
        };
        names.push(subject.to_string());
        for (col, s) in cols.iter_mut().zip(sums) {
            let v = s / n as f64;
            sets.min = sets.min.min(v);
            sets.max = sets.max.max(v);
            col.push(v);
        }
    }
    for (class, names) in [(Class::Ad, &sets.ad_subjects), (Class::Hc, &sets.hc_subjects)] {
        if names.is_empty() {
            return Err(Error::Data(format!("no {class} subjects left after filtering")));
        }
    }
    let span = sets.max - sets.min;
    let scale = |v: f64| if span > 0.0 { (v - sets.min) / span } else { 0.0 };
    for col in sets.ad.iter_mut().chain(sets.hc.iter_mut()) {
        for v in col.iter_mut() {
            *v = scale(*v);
        }
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SessionRecord;

    fn session(subject: &str, id: &str, class: Class) -> SessionRecord {
        SessionRecord {
            subject_id: subject.into(),
            session_id: id.into(),
            cdr: if class == Class::Ad { 1.0 } else { 0.0 },
            class,
            volume_path: None,
            matrix_path: None,
        }
    }

    fn pred(id: &str, class: Class, predicted: Class) -> Prediction {
        Prediction {
            session_id: id.into(),
            class,
            logit: 0.0,
            probability: 0.5,
            predicted,
            partition: "train".into(),
        }
    }

    fn rows(id: &str, class: Class, rvs: &[f64]) -> Vec<RvRow> {
        rvs.iter()
            .enumerate()
            .map(|(p, &rv)| RvRow {
                session_id: id.into(),
                class,
                parcel: p + 1,
                acronym: format!("P{}", p + 1),
                rv,
            })
            .collect()
    }

    #[test]
    fn pipeline_steps() {
        use Class::*;
        let cohort = Cohort::new(vec![
            session("a", "a1", Ad),
            session("a", "a2", Ad),
            session("b", "b1", Hc),
            session("m", "m1", Hc),
            session("m", "m2", Ad),
            session("c", "c1", Hc),
            session("d", "d1", Ad),
        ])
        .unwrap();
        let mut table = Vec::new();
        table.extend(rows("a1", Ad, &[0.2, 10.0]));
        table.extend(rows("a2", Ad, &[0.4, 6.0]));
        table.extend(rows("b1", Hc, &[2.0, 4.0]));
        table.extend(rows("m1", Hc, &[100.0, 100.0]));
        table.extend(rows("m2", Ad, &[-100.0, 100.0]));
        table.extend(rows("c1", Hc, &[50.0, 50.0]));
        table.extend(rows("d1", Ad, &[1.0, 1.0]));
        let preds = vec![
            pred("a1", Ad, Ad),
            pred("a2", Ad, Ad),
            pred("b1", Hc, Hc),
            pred("m1", Hc, Hc),
            pred("m2", Ad, Ad),
            pred("c1", Hc, Ad),
            pred("d1", Ad, Ad),
        ];
        let sets = build_rv_sets(&table, &preds, &cohort).unwrap();
        // c1 misclassified, m mixed.
        assert_eq!(sets.ad_subjects, vec!["a", "d"]);
        assert_eq!(sets.hc_subjects, vec!["b"]);
        // Subject a: parcel 1 mean 0.3, parcel 2 mean 8; range [0.3, 8].
        assert!((sets.min - 0.3).abs() < 1e-15 && sets.max == 8.0);
        assert_eq!(sets.ad[0][0], 0.0);
        assert_eq!(sets.ad[1][0], 1.0);
        assert!((sets.hc[1][0] - (4.0 - 0.3) / 7.7).abs() < 1e-14);

        // Session order does not matter.
        let mut shuffled = table.clone();
        shuffled.reverse();
        assert_eq!(build_rv_sets(&shuffled, &preds, &cohort).unwrap(), sets);
    }

    #[test]
    fn min_max_example() {
        let cohort = Cohort::new(vec![
            session("a", "a1", Class::Ad),
            session("b", "b1", Class::Hc),
            session("c", "c1", Class::Hc),
        ])
        .unwrap();
        let mut table = rows("a1", Class::Ad, &[2.0]);
        table.extend(rows("b1", Class::Hc, &[6.0]));
        table.extend(rows("c1", Class::Hc, &[10.0]));
        let preds = vec![
            pred("a1", Class::Ad, Class::Ad),
            pred("b1", Class::Hc, Class::Hc),
            pred("c1", Class::Hc, Class::Hc),
        ];
        let sets = build_rv_sets(&table, &preds, &cohort).unwrap();
        assert_eq!(sets.hc[0], vec![0.5, 1.0]);
    }

    #[test]
    fn empty_class_is_an_error() {
        let cohort = Cohort::new(vec![session("a", "a1", Class::Ad), session("b", "b1", Class::Hc)]).unwrap();
        let mut table = rows("a1", Class::Ad, &[1.0]);
        table.extend(rows("b1", Class::Hc, &[2.0]));
        let preds = vec![pred("a1", Class::Ad, Class::Ad), pred("b1", Class::Hc, Class::Ad)];
        assert!(build_rv_sets(&table, &preds, &cohort).is_err());
    }
}
