//! Reproducible experiment running: configuration, orchestration,
//! checkpoints, and CSV reports.

mod checkpoint;
mod config;
mod reports;
mod run;

pub use checkpoint::{
    checkpoint_load, checkpoint_save, Checkpoint, CheckpointMeta, CheckpointPayload, MAGIC,
    VERSION,
};
pub use config::{load_config, parse_config, ModelKind, RunConfig};
pub use reports::{
    comparison_csv, curve_csv, emit_reports, final_csv, reference_metric, reference_rows,
    REFERENCE_ML100K, REFERENCE_ML1M,
};
pub use run::{evaluate_checkpoint, final_condition_matrix, run_digest, run_experiment, RunOutcome};
