use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("observation boundary is empty: no Neumann data can be extracted")]
    EmptyObservation,
    #[error("weight precondition violated: {0}")]
    WeightPrecondition(String),
    #[error("pseudo-convexity certificate refused at node {node}, direction ({}, {}): form value {value}", .xi[0], .xi[1])]
    NotPseudoconvex { node: usize, xi: [f64; 2], value: f64 },
    #[error("singular linear system at pivot {0}")]
    Singular(usize),
    #[error("compatibility violated at order {order}: residual {residual:e} exceeds {tolerance:e}")]
    Compatibility { order: u8, residual: f64, tolerance: f64 },
    #[error("potential exceeds the admissibility bound M = {bound}: {detail}")]
    Admissibility { bound: f64, detail: String },
    #[error("degenerate pair: {0}")]
    Degenerate(String),
    #[error("{condition} violated at node {node}: {detail}")]
    Condition { condition: &'static str, node: usize, detail: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
