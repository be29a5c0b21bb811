//! Experiment driver: fixture preparation, batch attacks over a dataset,
//! metric aggregation and the barycentric loss sweep. Everything is
//! written as CSV or JSON.

mod experiment;
mod fixture;
mod metrics;
mod sweep;
mod targets;

pub use experiment::{
    attack_image, prepare, records_from_logs, run_experiment, run_prepared, write_artifacts,
    write_summary, ExperimentConfig, HarnessError, ImageRun, Prepared, VictimSpec,
};
pub use fixture::{build_fixture, train_zoo, Fixture, FixtureSpec};
pub use metrics::{success_curve, summarize, ImageRecord, MetricsSummary, QueryStats};
pub use sweep::{triangle_sweep, write_sweep_csv, SweepRow};
pub use targets::{l2_budget, pick_target, GoalPolicy};
