//! Evaluation harness: manifest ingestion, paired/unpaired runs, the
//! ablation matrix and report emission.

mod eval;
mod manifest;
mod report;

pub use eval::{
    ablation_rows, default_undergarment, run_ablation, run_eval, AblationRow, EvalOptions,
    Generator,
};
pub use manifest::{load_manifest, parse_manifest, TripletRecord};
pub use report::{Aggregate, ConfigEcho, EvalMode, EvalReport, ItemResult};
