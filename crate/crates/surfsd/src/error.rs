//! Crate-wide error type.

use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::cli::ConfigError;
use crate::cut::CutError;
use crate::fem::FemError;
use crate::geometry::GeometryError;
use crate::mesh::MeshError;
use crate::solve::SolveError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("mesh: {0}")]
    Mesh(#[from] MeshError),
    #[error("cut surface: {0}")]
    Cut(#[from] CutError),
    #[error("assembly: {0}")]
    Fem(#[from] FemError),
    #[error("solver: {0}")]
    Solve(#[from] SolveError),
    #[error("analysis: {0}")]
    Analysis(#[from] AnalysisError),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 2 for configuration errors, 3 for numerical or
    /// runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}
