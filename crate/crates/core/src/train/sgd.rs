use crate::tensor::{Matrix, ParamTensor, Scalar};

/// Stochastic gradient descent with optional heavy-ball momentum
/// (`v ← μ·v + g`, `w ← w − lr·v`).
#[derive(Clone, Debug)]
pub struct Sgd<T: Scalar> {
    pub learning_rate: T,
    pub momentum: T,
    velocity: Vec<Matrix<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate: T::lit(learning_rate),
            momentum: T::lit(momentum),
            velocity: Vec::new(),
        }
    }

    /// Applies one update. Parameters must be visited in the same order on every call.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut ParamTensor<T>>) {
        let use_momentum = self.momentum != T::zero();
        for (i, p) in params.into_iter().enumerate() {
            if use_momentum {
                if self.velocity.len() <= i {
                    self.velocity.push(Matrix::zeros(p.value.rows(), p.value.cols()));
                }
                let v = self.velocity[i].as_mut_slice();
                for ((w, &g), vel) in p.value.as_mut_slice().iter_mut().zip(p.grad.as_slice()).zip(v) {
                    *vel = self.momentum * *vel + g;
                    *w -= self.learning_rate * *vel;
                }
            } else {
                for (w, &g) in p.value.as_mut_slice().iter_mut().zip(p.grad.as_slice()) {
                    *w -= self.learning_rate * g;
                }
            }
        }
    }
}
