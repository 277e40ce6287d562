//! Building-floor heat benchmark for `trrb-core`: problem configs, experiment
//! drivers, comparison tables, plot data and the `trrb` command line.

pub mod cli;
pub mod compare;
pub mod config;
pub mod error;
pub mod plot;
pub mod runs;

pub use config::{build_problem, ProblemConfig};
pub use error::{BenchError, Result};
