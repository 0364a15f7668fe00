//! Files written by the command-line runs: JSON summaries, CSV tables,
//! Table-2-style markdown, PGM previews and the connectogram export.

mod pgm;
mod tables;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use pgm::{encode_pgm, matrix_pgm, volume_mid_slices, PGM_MAX};
pub use tables::{
    connectogram, format_p, render_table2, stats_rows, write_stats_csv, Connectogram, ConnectogramNode, StatsRow,
    StatsSummary,
};

use crate::error::{Error, Result};
use crate::models::ModelKind;
use crate::train::{roc_auc, Confusion, CrossvalOutcome, EpochRecord, FinalOutcome, FoldMetrics, Prediction};

pub(crate) fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
        }
        _ => Ok(()),
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    create_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        context: path.display().to_string(),
        source: e,
    })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        context: path.display().to_string(),
        source: e,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Csv {
        context: path.display().to_string(),
        source: e,
    }
}

pub(crate) fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    create_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Cross-validation summary as written to `metrics.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub model: ModelKind,
    pub n_sessions: usize,
    pub n_folds: usize,
    /// Rows are the true class, columns the predicted class, each cell a
    /// `median [Q1, Q3]` string of the row-normalised rate over folds.
    pub confusion_matrix: ConfusionTable,
    pub metrics: FoldMetrics,
    pub best_epochs: Vec<usize>,
    pub epochs_run: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub rows: [String; 2],
    pub columns: [String; 2],
    pub cells: [[String; 2]; 2],
}

impl ConfusionTable {
    pub fn from_metrics(m: &FoldMetrics) -> Self {
        ConfusionTable {
            rows: ["AD".into(), "HC".into()],
            columns: ["AD".into(), "HC".into()],
            cells: m.confusion_matrix.clone(),
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| True \\ Predicted | AD | HC |\n|---|---|---|\n");
        for (r, row) in self.rows.iter().zip(&self.cells) {
            s.push_str(&format!("| {r} | {} | {} |\n", row[0], row[1]));
        }
        s
    }
}

pub fn metrics_doc(model: ModelKind, n_sessions: usize, outcome: &CrossvalOutcome) -> MetricsDoc {
    MetricsDoc {
        model,
        n_sessions,
        n_folds: outcome.folds.len(),
        confusion_matrix: ConfusionTable::from_metrics(&outcome.metrics),
        metrics: outcome.metrics.clone(),
        best_epochs: outcome.folds.iter().map(|f| f.best_epoch).collect(),
        epochs_run: outcome.folds.iter().map(|f| f.history.len()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    /// Fold number, or `final` for the 90/10 run.
    pub fold: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auc: Option<f64>,
}

pub fn history_rows<'a>(fold: &str, history: impl IntoIterator<Item = &'a EpochRecord>) -> Vec<HistoryRow> {
    history
        .into_iter()
        .map(|r| HistoryRow {
            fold: fold.to_string(),
            epoch: r.epoch,
            train_loss: r.train_loss,
            val_loss: r.val_loss,
            val_auc: r.val_auc,
        })
        .collect()
}

pub fn crossval_history(outcome: &CrossvalOutcome) -> Vec<HistoryRow> {
    outcome
        .folds
        .iter()
        .enumerate()
        .flat_map(|(i, f)| history_rows(&i.to_string(), &f.history))
        .collect()
}

pub fn write_history_csv(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    write_csv_rows(path, rows)
}

pub fn write_predictions_csv(path: &Path, predictions: &[Prediction]) -> Result<()> {
    write_csv_rows(path, predictions)
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<Prediction>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let rows: std::result::Result<Vec<Prediction>, _> = r.deserialize().collect();
    let rows = rows.map_err(csv_err(path))?;
    if let Some(p) = rows.iter().find(|p| p.partition != "train" && p.partition != "validation") {
        return Err(Error::format(path, format!("unknown partition `{}`", p.partition)));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatesDoc {
    pub sessions: usize,
    pub confusion: Confusion,
    pub tpr: f64,
    pub tnr: f64,
    pub accuracy: f64,
    pub auc: Option<f64>,
}

impl RatesDoc {
    fn of(predictions: &[&Prediction]) -> Self {
        let actual: Vec<bool> = predictions.iter().map(|p| p.class.label() == 1.0).collect();
        let predicted: Vec<bool> = predictions.iter().map(|p| p.predicted.label() == 1.0).collect();
        let scores: Vec<f64> = predictions.iter().map(|p| p.logit).collect();
        let confusion = Confusion::from_predictions(&actual, &predicted);
        RatesDoc {
            sessions: predictions.len(),
            confusion,
            tpr: confusion.tpr(),
            tnr: confusion.tnr(),
            accuracy: confusion.accuracy(),
            auc: roc_auc(&scores, &actual).ok(),
        }
    }
}

/// Summary of the final 90/10 run, written to `final_metrics.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalMetricsDoc {
    pub model: ModelKind,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Training and validation sessions together. The training part was
    /// fitted on, so these rates are optimistic.
    pub union: RatesDoc,
    pub train_contaminated: bool,
    pub validation: RatesDoc,
}

pub fn final_metrics_doc(model: ModelKind, outcome: &FinalOutcome) -> FinalMetricsDoc {
    let all: Vec<&Prediction> = outcome.predictions.iter().collect();
    let val: Vec<&Prediction> = outcome
        .predictions
        .iter()
        .filter(|p| p.partition == "validation")
        .collect();
    FinalMetricsDoc {
        model,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.history.len(),
        union: RatesDoc::of(&all),
        train_contaminated: true,
        validation: RatesDoc::of(&val),
    }
}

/// Markdown overview assembled from whichever run outputs are available.
pub fn render_report(
    crossval: Option<&MetricsDoc>,
    final_run: Option<&FinalMetricsDoc>,
    stats: Option<&StatsSummary>,
    table2: Option<&str>,
) -> String {
    let mut s = String::from("# Classification and relevance report\n");
    if let Some(m) = crossval {
        s.push_str(&format!(
            "\n## Cross-validation ({}, {} folds, {} sessions)\n\nNormalised confusion matrix, median [Q1, Q3] over folds.\n\n",
            m.model.as_str(),
            m.n_folds,
            m.n_sessions
        ));
        s.push_str(&m.confusion_matrix.to_markdown());
        s.push_str(&format!(
            "\nAccuracy {}; AUC {}.\n",
            m.metrics.accuracy.render(),
            m.metrics.auc.render()
        ));
    }
    if let Some(f) = final_run {
        s.push_str(&format!(
            "\n## Final model ({})\n\nBest epoch {} of {}.\n\n| Set | Sessions | TPR | TNR | Accuracy | AUC |\n|---|---|---|---|---|---|\n",
            f.model.as_str(),
            f.best_epoch,
            f.epochs_run
        ));
        for (name, r) in [("Training + validation", &f.union), ("Validation", &f.validation)] {
            let auc = r.auc.map_or("n/a".to_string(), |a| format!("{a:.3}"));
            s.push_str(&format!(
                "| {name} | {} | {:.3} | {:.3} | {:.3} | {auc} |\n",
                r.sessions, r.tpr, r.tnr, r.accuracy
            ));
        }
        if f.train_contaminated {
            s.push_str("\nThe first row includes sessions the model was trained on.\n");
        }
    }
    if let Some(st) = stats {
        s.push_str(&format!(
            "\n## Relevance statistics\n\n{} AD and {} HC subjects after filtering; {} of {} parcels significant after Benjamini-Yekutieli correction.\n\n",
            st.n_ad_subjects, st.n_hc_subjects, st.n_significant, st.n_parcels
        ));
        s.push_str(&format!(
            "Top AD parcels: {}.\n\nTop AD parcels that are significant: {}.\n\nTop parcels shared by both classes and not significant: {}.\n",
            join_or_none(&st.subgroups.ad.top),
            join_or_none(&st.subgroups.ad.top_significant),
            join_or_none(&st.subgroups.common_not_significant)
        ));
    }
    if let Some(t) = table2 {
        s.push('\n');
        s.push_str(t);
    }
    s
}

fn join_or_none(v: &[String]) -> String {
    if v.is_empty() {
        "none".into()
    } else {
        v.join(", ")
    }
}
