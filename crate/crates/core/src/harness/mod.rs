//! Data loading, synthetic benchmarks, cross-validation, metrics and the
//! experiment runner.

pub mod cv;
pub mod dataset;
pub mod experiment;
pub mod metrics;
pub mod synth;

pub use cv::{make_cv_splits, CvPlan, CvRun};
pub use dataset::{load_dataset, DatasetBundle, DatasetPaths};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentOutcome, SummaryRow};
pub use metrics::{compute_metrics, rank_auc, MetricSet};
pub use synth::{generate_synthetic, SynthConfig, SynthData};
