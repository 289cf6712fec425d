//! Execution harness: the CLI, flat-file configuration, the docking-score
//! interface with its deterministic mock, fragment-pair selection, and
//! evaluation/report machinery.

pub mod cli;
pub mod config;
pub mod eval;
pub mod scorer;

pub use cli::cli_dispatch;
pub use config::Config;
pub use eval::{evaluate, format_report, select_fragment_pair, EvalReport, ScoredFragment, SelectionMode};
pub use scorer::{MockScorer, ScorerInterface};
