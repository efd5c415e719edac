use thiserror::Error;

/// Errors produced by fitting, coupling estimation, inference and simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("data contains a non-finite value at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },

    #[error("invalid data view: {0}")]
    InvalidView(String),

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("component {component} collapsed (mixing proportion {proportion:.3e}) and could not be reseeded")]
    DegenerateCluster { component: usize, proportion: f64 },

    #[error("every candidate number of components failed to fit")]
    AllFitsFailed,

    #[error("joint matrix margins do not match the supplied marginals (max deviation {deviation:.3e})")]
    MarginMismatch { deviation: f64 },

    #[error("pseudo log-likelihood is not finite at observation {observation}")]
    NonFinite { observation: usize },

    #[error("Sinkhorn balancing did not converge in {max_iter} iterations (residual {residual:.3e})")]
    NotConverged { max_iter: usize, residual: f64 },

    #[error("zero pattern of the matrix admits no balancing with the requested marginals")]
    InfeasibleSupport,

    #[error("exponentiated gradient did not ascend after {halvings} step-size halvings")]
    StepTooLarge { halvings: usize },

    #[error("matrix is identically zero")]
    ZeroMatrix,

    #[error("contingency table has an empty {axis} marginal at index {index}")]
    EmptyMarginal { axis: &'static str, index: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
