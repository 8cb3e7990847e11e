//! Offline action error, online success rate, the modality ablation and report files.

mod ablation;
mod offline;
mod policy;
mod report;
mod rollout;

pub use ablation::{
    cached_cells, median, run_ablation, AblationCell, AblationConfig, AblationData, AblationRow, AblationTable, RowSummary, CACHE_DIR_ENV,
};
pub use offline::{chunk_mse, offline_mse, ActionTrace, OfflineReport, WindowError};
pub use policy::{
    fit_width, serve, ActionSource, DiffusionPolicy, ExpertPolicy, PolicyRequest, PolicyResponse, ReplayPolicy, ZeroShot,
};
pub use report::{
    bar_chart_svg, emit_report, parse_csv, to_csv, to_json, trace_chart_svg, CsvRow, Report, ReportFormat, CSV_HEADER,
    REPORT_SCHEMA_VERSION,
};
pub use rollout::{rollout, RolloutOptions, RolloutRecord, RolloutReport};

#[cfg(test)]
mod tests;
