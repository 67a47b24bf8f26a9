//! Forward and backward passes of the primitive operations.
//!
//! Conventions: weights are laid out `(in × out)`, so a linear layer computes
//! `y[j] = Σ_i x[i]·w[i][j] + b[j]`. Backward functions accumulate into
//! `ParamTensor::grad` and return the gradient with respect to the input.

use crate::error::{Error, Result};

use super::{Matrix, ParamTensor, Scalar};

/// Tally of multiply-accumulates executed by a forward pass.
#[derive(Debug, Default, Clone)]
pub struct MacCounter {
    macs: u64,
    overflowed: bool,
}

impl MacCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, n: u64) {
        match self.macs.checked_add(n) {
            Some(v) => self.macs = v,
            None => self.overflowed = true,
        }
    }

    pub(crate) fn add_product(&mut self, factors: &[usize]) {
        let mut acc: u64 = 1;
        for &f in factors {
            match acc.checked_mul(f as u64) {
                Some(v) => acc = v,
                None => {
                    self.overflowed = true;
                    return;
                }
            }
        }
        self.add(acc);
    }

    pub fn total(&self) -> Result<u64> {
        if self.overflowed {
            Err(Error::Range("MAC counter overflowed u64".into()))
        } else {
            Ok(self.macs)
        }
    }
}

pub fn linear_forward<T: Scalar>(x: &Matrix<T>, w: &ParamTensor<T>, b: &ParamTensor<T>) -> Result<Matrix<T>> {
    let (din, dout) = w.shape();
    if x.cols() != din {
        return Err(Error::dims("linear_forward", x.shape(), w.shape()));
    }
    if b.shape() != (1, dout) {
        return Err(Error::dims("linear_forward(bias)", (1, dout), b.shape()));
    }
    let mut out = x.matmul(&w.value)?;
    let bias = b.value.row(0);
    for r in 0..out.rows() {
        for (o, &bv) in out.row_mut(r).iter_mut().zip(bias) {
            *o += bv;
        }
    }
    Ok(out)
}

/// Returns `upstream · wᵀ`; adds `xᵀ · upstream` to `w.grad` and the column
/// sums of `upstream` to `b.grad`.
pub fn linear_backward<T: Scalar>(
    x: &Matrix<T>,
    w: &mut ParamTensor<T>,
    b: &mut ParamTensor<T>,
    upstream: &Matrix<T>,
) -> Result<Matrix<T>> {
    let (din, dout) = w.shape();
    if x.cols() != din || upstream.cols() != dout || x.rows() != upstream.rows() {
        return Err(Error::dims("linear_backward", upstream.shape(), w.shape()));
    }
    let mut dx = Matrix::zeros(x.rows(), din);
    for r in 0..x.rows() {
        let up = upstream.row(r);
        let xr = x.row(r);
        let dxr = dx.row_mut(r);
        for i in 0..din {
            let wrow = w.value.row(i);
            let mut acc = T::zero();
            for (&u, &wv) in up.iter().zip(wrow) {
                acc += u * wv;
            }
            dxr[i] = acc;
            let xv = xr[i];
            for (g, &u) in w.grad.row_mut(i).iter_mut().zip(up) {
                *g += xv * u;
            }
        }
        for (g, &u) in b.grad.row_mut(0).iter_mut().zip(up) {
            *g += u;
        }
    }
    Ok(dx)
}

/// Per-row statistics retained for the layer-norm backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    pub normalized: Matrix<T>,
    pub inv_std: Vec<T>,
}

pub fn layer_norm_forward<T: Scalar>(
    x: &Matrix<T>,
    gain: &ParamTensor<T>,
    bias: &ParamTensor<T>,
    eps: T,
) -> Result<(Matrix<T>, LayerNormCache<T>)> {
    let d = x.cols();
    if gain.shape() != (1, d) || bias.shape() != (1, d) {
        return Err(Error::dims("layer_norm", x.shape(), gain.shape()));
    }
    let n = T::from_usize(d).unwrap();
    let mut normalized = Matrix::zeros(x.rows(), d);
    let mut out = Matrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    let (g, b) = (gain.value.row(0), bias.value.row(0));
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = (var + eps).sqrt().recip();
        inv_std.push(is);
        let nr = normalized.row_mut(r);
        for (o, &v) in nr.iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
        let orow = out.row_mut(r);
        for c in 0..d {
            orow[c] = g[c] * normalized[(r, c)] + b[c];
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gain: &mut ParamTensor<T>,
    bias: &mut ParamTensor<T>,
    upstream: &Matrix<T>,
) -> Result<Matrix<T>> {
    let xhat = &cache.normalized;
    if upstream.shape() != xhat.shape() {
        return Err(Error::dims("layer_norm_backward", upstream.shape(), xhat.shape()));
    }
    let d = xhat.cols();
    let n = T::from_usize(d).unwrap();
    let mut dx = Matrix::zeros(xhat.rows(), d);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..xhat.rows() {
        let up = upstream.row(r);
        let xh = xhat.row(r);
        let g = gain.value.row(0);
        for c in 0..d {
            dxhat[c] = up[c] * g[c];
        }
        {
            let gg = gain.grad.row_mut(0);
            for c in 0..d {
                gg[c] += up[c] * xh[c];
            }
        }
        for (bg, &u) in bias.grad.row_mut(0).iter_mut().zip(up) {
            *bg += u;
        }
        let mean_d = dxhat.iter().copied().sum::<T>() / n;
        let mean_dx = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / n;
        let is = cache.inv_std[r];
        let dr = dx.row_mut(r);
        for c in 0..d {
            dr[c] = is * (dxhat[c] - mean_d - xh[c] * mean_dx);
        }
    }
    Ok(dx)
}

/// Row-wise softmax with the row maximum subtracted before exponentiation.
pub fn softmax_rows<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = sum.recip();
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Given softmax output `probs` and `dL/dprobs`, returns `dL/dinput`.
pub fn softmax_rows_backward<T: Scalar>(probs: &Matrix<T>, upstream: &Matrix<T>) -> Result<Matrix<T>> {
    if probs.shape() != upstream.shape() {
        return Err(Error::dims("softmax_backward", probs.shape(), upstream.shape()));
    }
    let mut dx = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let u = upstream.row(r);
        let dot: T = p.iter().zip(u).map(|(&a, &b)| a * b).sum();
        for (o, (&pv, &uv)) in dx.row_mut(r).iter_mut().zip(p.iter().zip(u)) {
            *o = pv * (uv - dot);
        }
    }
    Ok(dx)
}

/// Attention output plus the weight matrix it was built from.
#[derive(Clone, Debug)]
pub struct AttentionCache<T> {
    /// `B×B` weights; masked key columns are exactly zero.
    pub probs: Matrix<T>,
}

fn valid_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect()
}

/// `softmax(q·kᵀ/√dh)·v` over the keys marked valid in `mask`.
///
/// Masked key columns are scored with `Scalar::MASK_SENTINEL`, which the
/// softmax sends to exactly zero; the weighted sum then only visits valid
/// keys. Every query row (valid or not) is computed.
pub fn scaled_dot_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    mask: &[bool],
    macs: &mut MacCounter,
) -> Result<(Matrix<T>, AttentionCache<T>)> {
    let (b, dh) = q.shape();
    if k.shape() != (b, dh) || v.shape() != (b, dh) {
        return Err(Error::dims("scaled_dot_attention", q.shape(), k.shape()));
    }
    if mask.len() != b {
        return Err(Error::dims("scaled_dot_attention(mask)", (b, 1), (mask.len(), 1)));
    }
    let valid = valid_indices(mask);
    if valid.is_empty() {
        return Err(Error::Usage("attention mask has no valid positions".into()));
    }
    let scale = T::from_usize(dh).unwrap().sqrt().recip();
    let mut probs = Matrix::filled(b, b, T::MASK_SENTINEL);
    let mut out = Matrix::zeros(b, dh);
    for i in 0..b {
        let qi = q.row(i);
        let prow = probs.row_mut(i);
        for &j in &valid {
            let s: T = qi.iter().zip(k.row(j)).map(|(&a, &c)| a * c).sum();
            prow[j] = s * scale;
        }
        softmax_in_place(prow);
        let orow = out.row_mut(i);
        for &j in &valid {
            let p = prow[j];
            for (o, &vv) in orow.iter_mut().zip(v.row(j)) {
                *o += p * vv;
            }
        }
    }
    macs.add_product(&[2, b, valid.len(), dh]);
    Ok((out, AttentionCache { probs }))
}

/// Returns `(dq, dk, dv)`.
pub fn scaled_dot_attention_backward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    mask: &[bool],
    cache: &AttentionCache<T>,
    upstream: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
    let (b, dh) = q.shape();
    if upstream.shape() != (b, dh) || cache.probs.shape() != (b, b) {
        return Err(Error::dims("attention_backward", upstream.shape(), q.shape()));
    }
    let valid = valid_indices(mask);
    let scale = T::from_usize(dh).unwrap().sqrt().recip();
    let mut dq = Matrix::zeros(b, dh);
    let mut dk = Matrix::zeros(b, dh);
    let mut dv = Matrix::zeros(b, dh);
    let mut dp = vec![T::zero(); b];
    for i in 0..b {
        let up = upstream.row(i);
        let p = cache.probs.row(i);
        let mut dot = T::zero();
        for &j in &valid {
            let g: T = up.iter().zip(v.row(j)).map(|(&a, &c)| a * c).sum();
            dp[j] = g;
            dot += g * p[j];
            for (d, &u) in dv.row_mut(j).iter_mut().zip(up) {
                *d += p[j] * u;
            }
        }
        for &j in &valid {
            let ds = p[j] * (dp[j] - dot) * scale;
            if ds == T::zero() {
                continue;
            }
            for (d, &kv) in dq.row_mut(i).iter_mut().zip(k.row(j)) {
                *d += ds * kv;
            }
            for (d, &qv) in dk.row_mut(j).iter_mut().zip(q.row(i)) {
                *d += ds * qv;
            }
        }
    }
    Ok((dq, dk, dv))
}

pub fn relu<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gates `upstream` by `x > 0`; the subgradient at zero is zero.
pub fn relu_backward<T: Scalar>(x: &Matrix<T>, upstream: &Matrix<T>) -> Result<Matrix<T>> {
    if x.shape() != upstream.shape() {
        return Err(Error::dims("relu_backward", x.shape(), upstream.shape()));
    }
    let data = x
        .as_slice()
        .iter()
        .zip(upstream.as_slice())
        .map(|(&xv, &u)| if xv > T::zero() { u } else { T::zero() })
        .collect();
    Matrix::from_vec(x.rows(), x.cols(), data)
}

/// Mean negative log-likelihood of `labels` and its gradient with respect
/// to the logits, `(softmax − onehot) / B`.
pub fn cross_entropy<T: Scalar>(logits: &Matrix<T>, labels: &[usize]) -> Result<(T, Matrix<T>)> {
    let (b, c) = logits.shape();
    if labels.len() != b {
        return Err(Error::dims("cross_entropy(labels)", (b, c), (labels.len(), 1)));
    }
    if b == 0 {
        return Err(Error::Input("cross_entropy on an empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Input(format!("label {bad} out of range for {c} classes")));
    }
    let inv_b = T::from_usize(b).unwrap().recip();
    let mut grad = softmax_rows(logits);
    let mut loss = T::zero();
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        loss += lse - row[y];
        let g = grad.row_mut(r);
        g[y] -= T::one();
        g.iter_mut().for_each(|v| *v *= inv_b);
    }
    Ok((loss * inv_b, grad))
}
