//! Latency, token and concurrency analysis: closed forms over step
//! profiles, and the same quantities measured from event logs.

mod closed_form;
mod metrics;
mod stats;

pub use closed_form::{
    approx_only_time, best_case_time, breaking_points, max_concurrency, saturation_points,
    sequential_time, speculative_time, total_tokens, wasted_processes, worst_case_tokens,
    AnalyticsError, BreakList, StepProfile, TokenAccounting,
};
pub use metrics::{
    accuracy_breakdown_csv, aggregate, approx_accuracy, measure_log, measure_metrics,
    measured_concurrency, perceived_latency, summarize, summary_csv, verified_steps,
    MetricsReport, PriceTable, Summary, TokenPrice, METRIC_NAMES,
};
pub use stats::{average_ranks, spearman};
