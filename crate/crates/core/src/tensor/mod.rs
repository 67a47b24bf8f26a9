//! Dense row-major matrices and the differentiable primitives the attention
//! module is assembled from. Every primitive has an explicit backward pass;
//! there is no tape.

mod matrix;
pub mod ops;

pub use matrix::{Matrix, ParamTensor, Scalar};
pub use ops::MacCounter;
