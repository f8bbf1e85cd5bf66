//! Training runs, multi-seed aggregation, significance tests and reports.

mod config;
mod run;

pub use config::{apply_override, load_config, Paths, Precision, RunConfig};
pub use run::{
    evaluate, load_data, predict, run_seeds, scores_from_predictions, seed_metric, seed_model, train, Aggregate, Batch, BatchInput,
    EpochSummary, MeanStd, RunResult, SeedResult, Source, TaskScores, TrainData, TrainOutcome, SELECTION_RULE,
};

pub mod stats;
pub mod memory;
pub mod report;
