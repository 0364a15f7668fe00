use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::write_csv_rows;
use crate::data::{AtlasNames, Class};
use crate::error::Result;
use crate::stats::{class_scores, top_count, ParcelStat, RvSets, StatReport, Subgroups};

/// `< 0.001` below a thousandth, otherwise three decimals.
pub fn format_p(p: f64) -> String {
    if p < 0.001 {
        "< 0.001".into()
    } else {
        format!("{p:.3}")
    }
}

fn by_name(a: &str, b: &str) -> Ordering {
    a.to_lowercase().cmp(&b.to_lowercase()).then_with(|| a.cmp(b))
}

fn significant_set(report: &StatReport) -> BTreeSet<&str> {
    report.significant().map(|p| p.acronym.as_str()).collect()
}

/// Significant parcels shared with `other` first, then the remaining
/// significant ones, each group alphabetical ignoring case.
fn table_order<'a>(report: &'a StatReport, other: Option<&StatReport>) -> Vec<(&'a ParcelStat, bool)> {
    let shared = other.map(significant_set).unwrap_or_default();
    let mut rows: Vec<(&ParcelStat, bool)> = report
        .significant()
        .map(|p| (p, shared.contains(p.acronym.as_str())))
        .collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| by_name(&a.0.acronym, &b.0.acronym)));
    rows
}

/// One `stats.csv` line. `N.` is the running row number, as in the printed table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    #[serde(rename = "N.")]
    pub n: usize,
    #[serde(rename = "Parcel")]
    pub parcel: String,
    #[serde(rename = "Adjusted p")]
    pub p_adjusted: f64,
    #[serde(rename = "Raw p")]
    pub p_raw: f64,
    #[serde(rename = "Test")]
    pub test: String,
    #[serde(rename = "Statistic")]
    pub statistic: f64,
    #[serde(rename = "Direction")]
    pub direction: String,
    #[serde(rename = "Significant")]
    pub significant: bool,
    /// `*` when the parcel is significant for both models.
    #[serde(rename = "Common")]
    pub common: String,
    #[serde(rename = "Label")]
    pub label: usize,
    #[serde(rename = "Median AD")]
    pub median_ad: f64,
    #[serde(rename = "Median HC")]
    pub median_hc: f64,
}

/// Every parcel: the significant ones in table order, then the rest by label.
pub fn stats_rows(report: &StatReport, other: Option<&StatReport>) -> Vec<StatsRow> {
    let mut ordered = table_order(report, other);
    ordered.extend(report.parcels.iter().filter(|p| !p.significant).map(|p| (p, false)));
    ordered
        .into_iter()
        .enumerate()
        .map(|(i, (p, common))| StatsRow {
            n: i + 1,
            parcel: p.acronym.clone(),
            p_adjusted: p.p_adjusted,
            p_raw: p.p_raw,
            test: p.test.as_str().into(),
            statistic: p.statistic,
            direction: p.direction.as_str().into(),
            significant: p.significant,
            common: if common { "*".into() } else { String::new() },
            label: p.parcel,
            median_ad: p.median_ad,
            median_hc: p.median_hc,
        })
        .collect()
}

pub fn write_stats_csv(path: &Path, rows: &[StatsRow]) -> Result<()> {
    write_csv_rows(path, rows)
}

/// Significant parcels per model as `N. | Parcel | Adjusted p` tables.
/// With two models, parcels significant in both lead each table and carry
/// a trailing `*`.
pub fn render_table2(models: &[(&str, &StatReport)]) -> String {
    let mut s = String::from("## Parcels with a significant AD/HC relevance difference\n");
    for (i, (label, report)) in models.iter().enumerate() {
        let other = match models.len() {
            2 => Some(models[1 - i].1),
            _ => None,
        };
        let rows = table_order(report, other);
        s.push_str(&format!("\n### {label}\n\n"));
        if rows.is_empty() {
            s.push_str("No significant parcels.\n");
            continue;
        }
        s.push_str("| N. | Parcel | Adjusted p |\n|---|---|---|\n");
        for (n, (p, common)) in rows.iter().enumerate() {
            let mark = if *common { "*" } else { "" };
            s.push_str(&format!("| {} | {}{mark} | {} |\n", n + 1, p.acronym, format_p(p.p_adjusted)));
        }
    }
    if models.len() == 2 {
        s.push_str("\n`*` marks parcels significant for both models.\n");
    }
    s.push_str("\nAdjusted p: Benjamini-Yekutieli over all parcels, Mann-Whitney or Welch t-test.\n");
    s
}

/// Contents of `subgroups.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub n_ad_subjects: usize,
    pub n_hc_subjects: usize,
    pub n_parcels: usize,
    pub n_significant: usize,
    pub significant: Vec<String>,
    pub subgroups: Subgroups,
}

impl StatsSummary {
    pub fn of(report: &StatReport) -> Self {
        StatsSummary {
            n_ad_subjects: report.n_ad_subjects,
            n_hc_subjects: report.n_hc_subjects,
            n_parcels: report.parcels.len(),
            n_significant: report.significant().count(),
            significant: report.significant().map(|p| p.acronym.clone()).collect(),
            subgroups: report.subgroups.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectogramNode {
    pub index: usize,
    pub acronym: String,
    pub lobe: String,
    pub mean_rv_ad: f64,
    pub mean_rv_hc: f64,
    /// Highest and lowest 15% of parcels by mean RV within each class.
    pub top_ad: bool,
    pub top_hc: bool,
    pub bottom_ad: bool,
    pub bottom_hc: bool,
    pub significant: bool,
    pub direction: String,
}

/// Per-parcel node table for circular connectogram plotting tools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Connectogram {
    pub lobes: Vec<String>,
    pub nodes: Vec<ConnectogramNode>,
}

fn bottom(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx.truncate(top_count(scores.len()));
    idx
}

pub fn connectogram(sets: &RvSets, report: &StatReport, names: &AtlasNames) -> Connectogram {
    let ad = class_scores(sets, Class::Ad);
    let hc = class_scores(sets, Class::Hc);
    let (bottom_ad, bottom_hc) = (bottom(&ad), bottom(&hc));
    let mut lobes: Vec<String> = Vec::new();
    let nodes = names
        .parcels()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let lobe = p.lobe.to_string();
            if !lobes.contains(&lobe) {
                lobes.push(lobe.clone());
            }
            ConnectogramNode {
                index: p.index,
                acronym: p.acronym.clone(),
                lobe,
                mean_rv_ad: ad[i],
                mean_rv_hc: hc[i],
                top_ad: report.top_ad.contains(&i),
                top_hc: report.top_hc.contains(&i),
                bottom_ad: bottom_ad.contains(&i),
                bottom_hc: bottom_hc.contains(&i),
                significant: report.parcels[i].significant,
                direction: report.parcels[i].direction.as_str().into(),
            }
        })
        .collect();
    Connectogram { lobes, nodes }
}
