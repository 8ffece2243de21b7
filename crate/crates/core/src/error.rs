use alloc::string::String;
use alloc::vec::Vec;

use crate::model::Violation;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("expected a {expected}-dimensional tensor, got shape {shape:?}")]
    Dimension { expected: usize, shape: Vec<usize> },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },

    #[error("tensor contains a non-finite value")]
    NonFinite,

    #[error("layer {layer}: {message}")]
    Layer { layer: usize, message: String },

    #[error("unknown tensor `{0}`")]
    MissingTensor(String),

    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),

    #[error("network fails validation ({} violation(s)): {}", .0.len(), join_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("materialized size {size} exceeds the cap of {cap} elements")]
    SizeCap { size: usize, cap: usize },

    #[error("empty calibration set")]
    EmptyCalibration,

    #[error("non-finite loss at adaptive rounding step {step}")]
    NonFiniteLoss { step: usize },

    #[error("bound ratio is undefined when ‖θ − θ'‖∞ = 0")]
    UndefinedRatio,

    #[error("dataset has no labels")]
    Unlabeled,

    #[error("activation {0} is not positively homogeneous; equalization would change the function")]
    NotHomogeneous(&'static str),
}

fn join_violations(v: &[Violation]) -> String {
    let mut out = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        out.push_str(&alloc::format!("{x}"));
    }
    out
}
