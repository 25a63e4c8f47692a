use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("loss error: {0}")]
    Loss(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, NeuralError>;

pub(crate) fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> NeuralError {
    NeuralError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}
