//! Segmentation metrics, paired significance testing, and CSV reports.

mod metrics;
mod report;
mod wilcoxon;

pub use metrics::{assd, dice, squared_distance_map, surface_voxels};
pub use report::{
    emit_report, export_features, mean_std, summarize, MetricsRecord, ProcedureRecords,
    SummaryRow,
};
pub use wilcoxon::{
    exact_p_value, normal_p_value, significance_stars, signed_midranks, wilcoxon_signed_rank,
    wilcoxon_signed_rank_normal, PValueMethod, StatsResult, EXACT_MAX_N,
};
