//! Block-diagonal ("partitioned") linear projection and the parameter-free
//! feature shuffle that interleaves its partitions.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{MacCounter, Matrix, ParamTensor, Scalar};

/// `P` independent `(D/P)×(D/P)` weight blocks plus a `1×D` bias.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionedProjection<T: Scalar> {
    pub blocks: Vec<ParamTensor<T>>,
    pub bias: ParamTensor<T>,
}

impl<T: Scalar> PartitionedProjection<T> {
    pub fn zeros(dim: usize, partitions: usize) -> Result<Self> {
        check_divisible(dim, partitions)?;
        let d = dim / partitions;
        Ok(Self {
            blocks: (0..partitions).map(|_| ParamTensor::zeros(d, d)).collect(),
            bias: ParamTensor::zeros(1, dim),
        })
    }

    /// Glorot-uniform blocks with `fan_in = fan_out = D/P`; zero bias.
    pub fn glorot<R: Rng>(dim: usize, partitions: usize, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(dim, partitions)?;
        let d = dim / partitions;
        let bound = (6.0 / (2 * d) as f64).sqrt();
        for block in &mut p.blocks {
            for w in block.value.as_mut_slice() {
                *w = T::lit(rng.gen_range(-bound..bound));
            }
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.bias.shape().1
    }

    pub fn partitions(&self) -> usize {
        self.blocks.len()
    }

    fn block_dim(&self) -> usize {
        self.dim() / self.partitions()
    }

    pub fn weight_count(&self) -> usize {
        self.blocks.iter().map(ParamTensor::len).sum()
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias.len()
    }

    pub fn forward(&self, x: &Matrix<T>, macs: &mut MacCounter) -> Result<Matrix<T>> {
        let dim = self.dim();
        if x.cols() != dim {
            return Err(Error::dims("partitioned_project", x.shape(), (dim, dim)));
        }
        let d = self.block_dim();
        let mut out = Matrix::zeros(x.rows(), dim);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let or = out.row_mut(r);
            or.copy_from_slice(self.bias.value.row(0));
            for (p, block) in self.blocks.iter().enumerate() {
                let xs = &xr[p * d..(p + 1) * d];
                let os = &mut or[p * d..(p + 1) * d];
                for (i, &xv) in xs.iter().enumerate() {
                    for (o, &w) in os.iter_mut().zip(block.value.row(i)) {
                        *o += xv * w;
                    }
                }
            }
        }
        macs.add_product(&[x.rows(), d, d, self.partitions()]);
        Ok(out)
    }

    /// Accumulates block and bias gradients; returns the input gradient.
    pub fn backward(&mut self, x: &Matrix<T>, upstream: &Matrix<T>) -> Result<Matrix<T>> {
        let dim = self.dim();
        if x.cols() != dim || upstream.shape() != x.shape() {
            return Err(Error::dims("partitioned_project_backward", upstream.shape(), x.shape()));
        }
        let d = self.block_dim();
        let mut dx = Matrix::zeros(x.rows(), dim);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let ur = upstream.row(r);
            let dr = dx.row_mut(r);
            for (p, block) in self.blocks.iter_mut().enumerate() {
                let us = &ur[p * d..(p + 1) * d];
                for i in 0..d {
                    let w = block.value.row(i);
                    dr[p * d + i] = us.iter().zip(w).map(|(&u, &wv)| u * wv).sum();
                    let xv = xr[p * d + i];
                    for (g, &u) in block.grad.row_mut(i).iter_mut().zip(us) {
                        *g += xv * u;
                    }
                }
            }
            for (g, &u) in self.bias.grad.row_mut(0).iter_mut().zip(ur) {
                *g += u;
            }
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor<T>> {
        self.blocks.iter_mut().chain(std::iter::once(&mut self.bias))
    }

    pub fn params(&self) -> impl Iterator<Item = &ParamTensor<T>> {
        self.blocks.iter().chain(std::iter::once(&self.bias))
    }
}

fn check_divisible(dim: usize, partitions: usize) -> Result<()> {
    if partitions == 0 || !dim.is_multiple_of(partitions) {
        return Err(Error::Config(format!(
            "feature width {dim} is not divisible into {partitions} partitions"
        )));
    }
    Ok(())
}

/// Destination of coordinate `i` under the shuffle: viewing a row as a
/// `P×(D/P)` grid, transposing, and flattening sends `p·(D/P)+o` to `o·P+p`.
#[inline]
pub fn shuffle_index(i: usize, dim: usize, partitions: usize) -> usize {
    let d = dim / partitions;
    let (p, o) = (i / d, i % d);
    o * partitions + p
}

pub fn shuffle<T: Scalar>(x: &Matrix<T>, partitions: usize) -> Result<Matrix<T>> {
    permute_columns(x, partitions, false)
}

pub fn inverse_shuffle<T: Scalar>(x: &Matrix<T>, partitions: usize) -> Result<Matrix<T>> {
    permute_columns(x, partitions, true)
}

fn permute_columns<T: Scalar>(x: &Matrix<T>, partitions: usize, inverse: bool) -> Result<Matrix<T>> {
    let dim = x.cols();
    check_divisible(dim, partitions)?;
    if partitions == 1 || partitions == dim {
        return Ok(x.clone());
    }
    let map: Vec<usize> = (0..dim).map(|i| shuffle_index(i, dim, partitions)).collect();
    let mut out = Matrix::zeros(x.rows(), dim);
    for r in 0..x.rows() {
        let src = x.row(r);
        let dst = out.row_mut(r);
        for (i, &j) in map.iter().enumerate() {
            if inverse {
                dst[i] = src[j];
            } else {
                dst[j] = src[i];
            }
        }
    }
    Ok(out)
}
