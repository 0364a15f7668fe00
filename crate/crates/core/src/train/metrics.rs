use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Area under the ROC curve as `U / (n1·n0)` with tied pairs counted half.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Data("scores and labels differ in length".into()));
    }
    let n1 = positive.iter().filter(|&&p| p).count();
    let n0 = positive.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::Data("AUC needs both classes".into()));
    }
    // Average ranks over ties, then the Mann-Whitney identity.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    let r1: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = r1 - (n1 * (n1 + 1)) as f64 / 2.0;
    Ok(u / (n1 as f64 * n0 as f64))
}

/// Class weights `N / (2·N_c)` as `(w_AD, w_HC)`.
pub fn class_weights(n_ad: usize, n_hc: usize) -> Result<(f64, f64)> {
    if n_ad == 0 || n_hc == 0 {
        return Err(Error::Data(format!("class weights need both classes (AD {n_ad}, HC {n_hc})")));
    }
    let n = (n_ad + n_hc) as f64;
    Ok((n / (2.0 * n_ad as f64), n / (2.0 * n_hc as f64)))
}

/// Binary confusion counts with AD as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

impl Confusion {
    pub fn from_predictions(actual_ad: &[bool], predicted_ad: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&a, &p) in actual_ad.iter().zip(predicted_ad) {
            match (a, p) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
            }
        }
        c
    }

    fn ratio(a: usize, b: usize) -> f64 {
        if a + b == 0 {
            f64::NAN
        } else {
            a as f64 / (a + b) as f64
        }
    }

    pub fn tpr(&self) -> f64 {
        Self::ratio(self.tp, self.fn_)
    }

    pub fn tnr(&self) -> f64 {
        Self::ratio(self.tn, self.fp)
    }

    pub fn accuracy(&self) -> f64 {
        Self::ratio(self.tp + self.tn, self.fn_ + self.fp)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.tn + self.fp
    }
}

/// Linear-interpolation quantile (type 7) of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// JSON has no NaN; serde_json writes it as `null`, so read `null` back as NaN.
fn nan_from_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// Median and quartiles of a per-fold quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(deserialize_with = "nan_from_null")]
    pub median: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub q1: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub q3: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub iqr: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let (q1, median, q3) = (quantile(&finite, 0.25), quantile(&finite, 0.5), quantile(&finite, 0.75));
        Summary { median, q1, q3, iqr: q3 - q1 }
    }

    /// `median [Q1, Q3]` to three decimals, e.g. `0.817 [0.773, 0.846]`.
    pub fn render(&self) -> String {
        format!("{:.3} [{:.3}, {:.3}]", self.median, self.q1, self.q3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub fold_id: usize,
    pub confusion: Confusion,
    #[serde(deserialize_with = "nan_from_null")]
    pub tpr: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub tnr: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub accuracy: f64,
    pub auc: Option<f64>,
}

/// Per-fold rates plus their median/IQR summaries and the normalised
/// confusion matrix rendered as strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub folds: Vec<FoldRow>,
    pub tpr: Summary,
    pub tnr: Summary,
    pub fnr: Summary,
    pub fpr: Summary,
    pub accuracy: Summary,
    pub auc: Summary,
    /// Rows are true class (AD, HC), columns predicted (AD, HC).
    pub confusion_matrix: [[String; 2]; 2],
}

pub fn evaluate_fold_metrics(folds: &[(Confusion, Option<f64>)]) -> Result<FoldMetrics> {
    if folds.is_empty() {
        return Err(Error::Data("no folds to summarise".into()));
    }
    let rows: Vec<FoldRow> = folds
        .iter()
        .enumerate()
        .map(|(i, (c, auc))| FoldRow {
            fold_id: i,
            confusion: *c,
            tpr: c.tpr(),
            tnr: c.tnr(),
            accuracy: c.accuracy(),
            auc: *auc,
        })
        .collect();
    let col = |f: fn(&FoldRow) -> f64| Summary::of(&rows.iter().map(f).collect::<Vec<_>>());
    let tpr = col(|r| r.tpr);
    let tnr = col(|r| r.tnr);
    let fnr = col(|r| 1.0 - r.tpr);
    let fpr = col(|r| 1.0 - r.tnr);
    Ok(FoldMetrics {
        confusion_matrix: [[tpr.render(), fnr.render()], [fpr.render(), tnr.render()]],
        accuracy: col(|r| r.accuracy),
        auc: col(|r| r.auc.unwrap_or(f64::NAN)),
        folds: rows,
        tpr,
        tnr,
        fnr,
        fpr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_hand_cases() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5; 4], &[false, true, false, true]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn weights() {
        assert_eq!(class_weights(100, 100).unwrap(), (1.0, 1.0));
        let (ad, hc) = class_weights(135, 557).unwrap();
        assert!((ad - 692.0 / 270.0).abs() < 1e-12 && (ad - 2.563).abs() < 5e-4);
        assert!((hc - 0.621).abs() < 5e-4);
        assert!((ad * 135.0 + hc * 557.0 - 692.0).abs() < 1e-9);
        assert!(class_weights(0, 3).is_err());
    }

    #[test]
    fn quantiles() {
        let s = Summary::of(&[0.7, 0.8, 0.9]);
        assert!((s.median - 0.8).abs() < 1e-12 && (s.iqr - 0.1).abs() < 1e-12);
        let s = Summary::of(&[0.8; 5]);
        assert_eq!((s.median, s.iqr), (0.8, 0.0));
        let s = Summary {
            median: 0.817,
            q1: 0.773,
            q3: 0.846,
            iqr: 0.073,
        };
        assert_eq!(s.render(), "0.817 [0.773, 0.846]");
    }

    #[test]
    fn confusion_rates() {
        let c = Confusion::from_predictions(&[true, true, false, false, false], &[true, false, false, false, true]);
        assert_eq!((c.tp, c.fn_, c.tn, c.fp), (1, 1, 2, 1));
        assert_eq!(c.tpr(), 0.5);
        assert!((c.tnr() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.accuracy(), 0.6);
    }
}
