use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised anywhere in the numeric core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(
        "class mismatch: attribution requested for class {requested}, model predicts {predicted}"
    )]
    ClassMismatch { requested: usize, predicted: usize },
    #[error("activation {0} is not supported by this propagation rule")]
    UnsupportedActivation(String),
    #[error("neighborhood is empty: {0}")]
    EmptyNeighborhood(String),
    #[error("correlation undefined: variances {var_a} and {var_b}")]
    UndefinedCorrelation { var_a: f64, var_b: f64 },
    #[error("GAN training diverged at iteration {iteration}: {components}")]
    GanDiverged {
        iteration: usize,
        components: String,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
