use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("dimension mismatch in {op}: {shapes}")]
    Dimension { op: &'static str, shapes: String },

    #[error("invalid parameter for {op}: {message}")]
    Parameter { op: &'static str, message: String },

    #[error("index {index} out of range for {op} (bound {bound})")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("contract violated: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, NumError>;

pub(crate) fn dim_error(op: &'static str, shapes: &[&[usize]]) -> NumError {
    let shapes = shapes
        .iter()
        .map(|s| format!("{s:?}"))
        .collect::<Vec<_>>()
        .join(" vs ");
    NumError::Dimension { op, shapes }
}
