//! Experiment orchestration: run configuration, the collection/train/eval
//! loop, metrics persistence, multi-seed aggregation, and SVG learning
//! curves.
//!
//! The reproducibility contract is end-to-end: a `(config, seed)` pair fixes
//! the metrics byte stream, and the `config.toml` snapshot written into an
//! artifact directory is sufficient to re-run the experiment.

mod aggregate;
mod config;
mod metrics;
mod plot;
mod run;

pub use aggregate::{aggregate_runs, group_and_aggregate, load_single, mean_ci95, write_plot_data, GroupCurve};
pub use config::{PartialRunConfig, RunConfig};
pub use metrics::{read_metrics, MetricsRow, MetricsWriter};
pub use plot::{render_svg, write_svg};
pub use run::{evaluate, load_trained, run_training, EvalSummary, RunOutcome};
