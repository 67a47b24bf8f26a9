use crate::data::FeatureRecord;
use crate::error::{Error, Result};
use crate::tensor::ops;
use crate::tensor::{Matrix, ParamTensor, Scalar};

/// Linear classification head, `logits = x·W + b` with `W: D×C`.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier<T: Scalar> {
    pub weight: ParamTensor<T>,
    pub bias: ParamTensor<T>,
}

impl<T: Scalar> Classifier<T> {
    pub fn zeros(feature_dim: usize, num_classes: usize) -> Self {
        Self {
            weight: ParamTensor::zeros(feature_dim, num_classes),
            bias: ParamTensor::zeros(1, num_classes),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.shape().0
    }

    pub fn num_classes(&self) -> usize {
        self.weight.shape().1
    }

    pub fn logits(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        ops::linear_forward(x, &self.weight, &self.bias)
    }

    pub fn backward(&mut self, x: &Matrix<T>, upstream: &Matrix<T>) -> Result<Matrix<T>> {
        ops::linear_backward(x, &mut self.weight, &mut self.bias, upstream)
    }

    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }

    pub fn params_mut(&mut self) -> [&mut ParamTensor<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn zero_grad(&mut self) {
        self.weight.zero_grad();
        self.bias.zero_grad();
    }

    /// Fraction of `records` classified correctly (0 for an empty slice).
    pub fn accuracy(&self, records: &[&FeatureRecord]) -> Result<f64> {
        if records.is_empty() {
            return Ok(0.0);
        }
        let x = records_matrix(records, self.feature_dim())?;
        let pred = self.predict(&x)?;
        let correct = pred.iter().zip(records).filter(|(&p, r)| p == r.label).count();
        Ok(correct as f64 / records.len() as f64)
    }

    pub fn cast<U: Scalar>(&self) -> Classifier<U> {
        Classifier {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// First index of the maximum; ties resolve to the lowest class id.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn records_matrix<T: Scalar>(records: &[&FeatureRecord], dim: usize) -> Result<Matrix<T>> {
    let mut m = Matrix::zeros(records.len(), dim);
    for (i, r) in records.iter().enumerate() {
        if r.features.len() != dim {
            return Err(Error::dims("records_matrix", (1, dim), (1, r.features.len())));
        }
        for (dst, &v) in m.row_mut(i).iter_mut().zip(&r.features) {
            *dst = T::lit(v as f64);
        }
    }
    Ok(m)
}
