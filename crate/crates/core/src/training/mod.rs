//! Leave-one-subject-out training: fold construction, the per-fold optimisation
//! loop, multi-seed experiments and their aggregation.

mod data;
mod experiment;
mod fold;
mod split;

pub use data::{DataConfig, ExperimentData, ParticipantData};
pub use experiment::{
    fold_dir, markdown_table, read_rows_csv, run_experiment, run_sweep, seed_statistics, summarize_rows, write_rows_csv,
    ExperimentResult, ResultRow, RowStatus, RunOptions, SeedStat, Summary,
};
pub use fold::{mean_loss, predict_participant, train_fold, FoldOutcome, History, LeakageMonitor, TrainConfig};
pub use split::{loso_splits, FoldSplit};
