use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::correction::by_correction;
use super::rvsets::RvSets;
use super::tests::{compare_groups, TestKind};
use crate::data::{strip_side, AtlasNames, Class};
use crate::error::{Error, Result};
use crate::train::quantile;

pub const ALPHA: f64 = 0.05;

/// Number of parcels in a top set: the highest 15% of `n`, rounded up.
pub fn top_count(n: usize) -> usize {
    (15 * n).div_ceil(100)
}

/// 0-based positions of the top-scoring parcels, best first; ties go to
/// the lower index.
pub fn rank_top_parcels(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(top_count(scores.len()));
    order
}

/// Anatomical parcel sets checked against the top parcels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSets {
    pub mtl: Vec<String>,
    pub dmn: Vec<String>,
}

impl TargetSets {
    pub fn shipped() -> Self {
        toml::from_str(include_str!("../../assets/targets.toml")).expect("shipped targets.toml parses")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Every member must name a parcel of `names`.
    pub fn validate(&self, names: &AtlasNames) -> Result<()> {
        for (set, members) in [("mtl", &self.mtl), ("dmn", &self.dmn)] {
            if let Some(bad) = members.iter().find(|a| names.position(a).is_none()) {
                return Err(Error::Config(format!("{set} target `{bad}` is not an atlas acronym")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "AD>HC")]
    AdGreater,
    #[serde(rename = "HC>AD")]
    HcGreater,
    #[serde(rename = "AD=HC")]
    Equal,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::AdGreater => "AD>HC",
            Direction::HcGreater => "HC>AD",
            Direction::Equal => "AD=HC",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParcelStat {
    /// 1-based atlas position.
    pub parcel: usize,
    pub acronym: String,
    pub test: TestKind,
    pub statistic: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub significant: bool,
    /// From the class medians, falling back to the means when they tie.
    pub direction: Direction,
    pub mean_ad: f64,
    pub mean_hc: f64,
    pub median_ad: f64,
    pub median_hc: f64,
}

/// Hits of a top set in the target sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetOverlap {
    pub mtl: Vec<String>,
    pub dmn: Vec<String>,
    /// DMN regions hit when left and right parcels are merged.
    pub dmn_regions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSubgroups {
    /// Top parcels, best first.
    pub top: Vec<String>,
    pub top_significant: Vec<String>,
    pub top_not_significant: Vec<String>,
    pub targets: TargetOverlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgroups {
    pub ad: ClassSubgroups,
    pub hc: ClassSubgroups,
    /// Non-significant parcels in the top sets of both classes.
    pub common_not_significant: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub n_ad_subjects: usize,
    pub n_hc_subjects: usize,
    pub parcels: Vec<ParcelStat>,
    /// 0-based top positions per class.
    pub top_ad: Vec<usize>,
    pub top_hc: Vec<usize>,
    pub subgroups: Subgroups,
}

impl StatReport {
    pub fn significant(&self) -> impl Iterator<Item = &ParcelStat> {
        self.parcels.iter().filter(|p| p.significant)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-class ranking score: mean normalised RV of each parcel.
pub fn class_scores(sets: &RvSets, class: Class) -> Vec<f64> {
    sets.class(class).iter().map(|v| mean(v)).collect()
}

fn overlap(top: &[usize], names: &AtlasNames, targets: &TargetSets) -> TargetOverlap {
    let acr: Vec<&str> = top.iter().map(|&p| names.get(p).acronym.as_str()).collect();
    let pick = |set: &[String]| -> Vec<String> {
        acr.iter()
            .filter(|a| set.iter().any(|s| s == *a))
            .map(|a| a.to_string())
            .collect()
    };
    let dmn_regions: BTreeSet<&str> = targets.dmn.iter().map(|a| strip_side(a)).collect();
    let mut regions: Vec<String> = Vec::new();
    for a in &acr {
        let r = strip_side(a);
        if dmn_regions.contains(r) && !regions.iter().any(|x| x == r) {
            regions.push(r.to_string());
        }
    }
    TargetOverlap {
        mtl: pick(&targets.mtl),
        dmn: pick(&targets.dmn),
        dmn_regions: regions,
    }
}

/// Tests every parcel, applies Benjamini-Yekutieli over all of them, ranks
/// the top parcels per class and splits them by significance.
pub fn analyze(sets: &RvSets, names: &AtlasNames, targets: &TargetSets) -> Result<StatReport> {
    if names.len() != sets.n_parcels {
        return Err(Error::Data(format!(
            "{} parcels in the RV table but {} atlas names",
            sets.n_parcels,
            names.len()
        )));
    }
    let mut tests = Vec::with_capacity(sets.n_parcels);
    for p in 0..sets.n_parcels {
        let c = compare_groups(&sets.ad[p], &sets.hc[p])
            .map_err(|e| Error::Stats(format!("parcel {} ({}): {e}", p + 1, names.get(p).acronym)))?;
        tests.push(c);
    }
    let raw: Vec<f64> = tests.iter().map(|c| c.p).collect();
    let adjusted = by_correction(&raw, raw.len())?;
    let parcels: Vec<ParcelStat> = (0..sets.n_parcels)
        .map(|p| {
            let (ad, hc) = (&sets.ad[p], &sets.hc[p]);
            let (median_ad, median_hc) = (quantile(ad, 0.5), quantile(hc, 0.5));
            let (mean_ad, mean_hc) = (mean(ad), mean(hc));
            let direction = match median_ad.total_cmp(&median_hc).then(mean_ad.total_cmp(&mean_hc)) {
                std::cmp::Ordering::Greater => Direction::AdGreater,
                std::cmp::Ordering::Less => Direction::HcGreater,
                std::cmp::Ordering::Equal => Direction::Equal,
            };
            ParcelStat {
                parcel: p + 1,
                acronym: names.get(p).acronym.clone(),
                test: tests[p].test,
                statistic: tests[p].statistic,
                p_raw: raw[p],
                p_adjusted: adjusted[p],
                significant: adjusted[p] < ALPHA,
                direction,
                mean_ad,
                mean_hc,
                median_ad,
                median_hc,
            }
        })
        .collect();
    let top_ad = rank_top_parcels(&class_scores(sets, Class::Ad));
    let top_hc = rank_top_parcels(&class_scores(sets, Class::Hc));
    let subgroups = subgroup_analysis(&top_ad, &top_hc, &parcels, names, targets);
    Ok(StatReport {
        n_ad_subjects: sets.ad_subjects.len(),
        n_hc_subjects: sets.hc_subjects.len(),
        parcels,
        top_ad,
        top_hc,
        subgroups,
    })
}

pub fn subgroup_analysis(
    top_ad: &[usize],
    top_hc: &[usize],
    parcels: &[ParcelStat],
    names: &AtlasNames,
    targets: &TargetSets,
) -> Subgroups {
    let acr = |p: usize| names.get(p).acronym.clone();
    let class = |top: &[usize]| ClassSubgroups {
        top: top.iter().map(|&p| acr(p)).collect(),
        top_significant: top.iter().filter(|&&p| parcels[p].significant).map(|&p| acr(p)).collect(),
        top_not_significant: top.iter().filter(|&&p| !parcels[p].significant).map(|&p| acr(p)).collect(),
        targets: overlap(top, names, targets),
    };
    let common = top_ad
        .iter()
        .filter(|&&p| !parcels[p].significant && top_hc.contains(&p))
        .map(|&p| acr(p))
        .collect();
    Subgroups {
        ad: class(top_ad),
        hc: class(top_hc),
        common_not_significant: common,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_counts() {
        assert_eq!(top_count(132), 20);
        assert_eq!(top_count(10), 2);
        assert_eq!(top_count(20), 3);
        let scores: Vec<f64> = (0..132).map(|i| -(i as f64)).collect();
        assert_eq!(rank_top_parcels(&scores), (0..20).collect::<Vec<_>>());
        assert_eq!(rank_top_parcels(&[1.0, 3.0, 3.0, 0.0, 3.0]), vec![1]);
        assert_eq!(rank_top_parcels(&[1.0, 3.0, 3.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]), vec![1, 2]);
    }

    #[test]
    fn shipped_targets_are_valid() {
        let t = TargetSets::shipped();
        assert_eq!(t.mtl.len(), 8);
        assert_eq!(t.dmn.len(), 31);
        let regions: BTreeSet<&str> = t.dmn.iter().map(|a| strip_side(a)).collect();
        assert_eq!(regions.len(), 17);
        t.validate(&AtlasNames::shipped()).unwrap();
        let bad = TargetSets {
            mtl: vec!["Nope".into()],
            dmn: vec![],
        };
        assert!(bad.validate(&AtlasNames::shipped()).is_err());
    }

    fn stat(p: usize, significant: bool) -> ParcelStat {
        ParcelStat {
            parcel: p + 1,
            acronym: format!("P{}", p + 1),
            test: TestKind::MannWhitney,
            statistic: 0.0,
            p_raw: 0.0,
            p_adjusted: if significant { 0.01 } else { 0.5 },
            significant,
            direction: Direction::AdGreater,
            mean_ad: 0.0,
            mean_hc: 0.0,
            median_ad: 0.0,
            median_hc: 0.0,
        }
    }

    #[test]
    fn subgroup_sizes() {
        let names = AtlasNames::numbered(132);
        let targets = TargetSets {
            mtl: vec![],
            dmn: vec![],
        };
        let parcels: Vec<ParcelStat> = (0..132).map(|p| stat(p, p < 11 || (40..60).contains(&p))).collect();
        let top_ad: Vec<usize> = (0..20).collect();
        let top_hc: Vec<usize> = (40..60).collect();
        let s = subgroup_analysis(&top_ad, &top_hc, &parcels, &names, &targets);
        assert_eq!((s.ad.top_significant.len(), s.ad.top_not_significant.len()), (11, 9));
        assert!(s.common_not_significant.is_empty());

        let top_hc: Vec<usize> = (15..35).collect();
        let s = subgroup_analysis(&top_ad, &top_hc, &parcels, &names, &targets);
        assert_eq!(s.common_not_significant, vec!["P16", "P17", "P18", "P19", "P20"]);
    }

    #[test]
    fn target_overlap_with_and_without_sides() {
        let names = AtlasNames::shipped();
        let t = TargetSets::shipped();
        let pos = |a: &str| names.position(a).unwrap();
        let top = vec![pos("Hip_l"), pos("Hip_r"), pos("AG_l"), pos("Amg_r"), pos("Cereb1_l")];
        let o = overlap(&top, &names, &t);
        assert_eq!(o.mtl, vec!["Hip_l", "Hip_r", "Amg_r"]);
        assert_eq!(o.dmn.len(), 4);
        assert_eq!(o.dmn_regions, vec!["Hip", "AG", "Amg"]);
    }
}
