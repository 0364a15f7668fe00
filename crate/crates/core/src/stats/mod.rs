//! Group comparison of parcel relevance values between AD and HC subjects.

mod analysis;
mod correction;
mod rvsets;

pub use analysis::{
    analyze, class_scores, rank_top_parcels, subgroup_analysis, top_count, ClassSubgroups, Direction, ParcelStat,
    StatReport, Subgroups, TargetOverlap, TargetSets, ALPHA,
};
pub use correction::{by_correction, harmonic};
pub use rvsets::{build_rv_sets, RvSets};
pub use tests::{
    compare_groups, kolmogorov_sf, ks_normality, ks_statistic, mann_whitney, midranks, welch_t, Comparison, KsResult,
    MannWhitney, TestKind, Welch, MW_EXACT_MAX,
};
