//! Training, ranking metrics, and the experiment harnesses: encoding sweep,
//! anchor ablation, first-item weight sweep, and heatmap export.

mod experiments;
mod metrics;
mod train;

pub use experiments::{
    export_heatmap, run_anchor_ablation, run_encoding_sweep, run_lambda2_sweep, run_manifest, run_once, ExperimentData,
    ResultsTable, RunResult, SweepOptions, LAMBDA2_GRID, RESULTS_HEADER,
};
pub use metrics::{evaluate, pair_ranks, rank_of_label, MetricsReport, DEFAULT_KS};
pub use train::{
    batch_gradients, dataset_loss, holdout, train, with_threads, EpochReport, TrainConfig, TrainOutcome, GRAD_CHUNK,
};
