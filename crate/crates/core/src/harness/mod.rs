//! Monte Carlo studies, the deterministic property suite, and their
//! CSV/JSON artifacts.

pub mod config;
pub mod record;
pub mod studies;
pub mod suite;
pub mod summary;

pub use config::{ExperimentConfig, ModelSpec, SetSelection, StudyKind, SuiteSizes, Tolerances, SEED_ENV};
pub use record::{read_records, records_to_csv, write_records, TrialRecord, COLUMNS};
pub use studies::{run_study, StudyOutput};
pub use suite::{run_suite, SuiteReport};
pub use summary::{read_summary, write_summary, StudySummary};
