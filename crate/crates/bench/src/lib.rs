//! Fixtures shared by the benchmarks.

use iciia::{AttentionWindow, IciiaConfig, IciiaModule, Matrix, Result, Scalar};

/// A deterministic full window of `rows` feature vectors.
pub fn window<T: Scalar>(rows: usize, dim: usize) -> AttentionWindow<T> {
    let x = Matrix::from_fn(rows, dim, |r, c| T::lit(((r * dim + c) as f64 * 0.37).sin()));
    AttentionWindow::full(x)
}

/// An initialized module with `heads` heads over `dim` features.
pub fn module<T: Scalar>(dim: usize, heads: usize, partitions: usize, layers: usize) -> Result<IciiaModule<T>> {
    IciiaModule::init(IciiaConfig::new(dim, heads, partitions, layers), 0)
}
