use crate::tensor::Shape;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("{op}: shape mismatch {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("tensor of shape {shape} holds {len} values")]
    DataLength { shape: Shape, len: usize },
    #[error("backward requires a scalar loss, got shape {0}")]
    NotScalar(Shape),
    #[error("{op}: invalid geometry: {detail}")]
    Geometry { op: &'static str, detail: String },
}
