//! Configuration, built-in problems, experiment drivers and output
//! writers.

pub mod config;
pub mod driver;
pub mod expr;
pub mod problems;
pub mod vtk;

pub use config::{ConfigError, RunConfig};
pub use driver::{
    discretize, run_condition, run_convergence, run_layer, run_solve, ConditionTable,
    ConvergenceTable, DiscreteLevel, LayerTable, SolveSummary, StabSettings,
};
pub use problems::{resolve_problem, Problem, ProblemRhs};
