use thiserror::Error;

/// Errors surfaced by tensor construction and tape operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}{}", ctx_suffix(.context))]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
        context: String,
    },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("non-finite value in tensor `{0}`")]
    NonFinite(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    LossNotScalar(Vec<usize>),
}

fn ctx_suffix(ctx: &str) -> String {
    if ctx.is_empty() {
        String::new()
    } else {
        format!(" ({ctx})")
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;
