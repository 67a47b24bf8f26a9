//! One attention layer: multi-head self-attention over the window followed by
//! a feed-forward block, each wrapped in residual + post-norm.

use rand::Rng;

use crate::error::Result;
use crate::tensor::ops::{self, AttentionCache, LayerNormCache};
use crate::tensor::{MacCounter, Matrix, ParamTensor, Scalar};

use super::config::{AttentionMode, IciiaConfig};
use super::projection::{inverse_shuffle, shuffle, PartitionedProjection};

#[derive(Clone, Debug, PartialEq)]
pub struct IciiaLayerParams<T: Scalar> {
    pub proj_q: PartitionedProjection<T>,
    pub proj_k: PartitionedProjection<T>,
    pub proj_v: PartitionedProjection<T>,
    pub proj_out: PartitionedProjection<T>,
    pub ffn1: PartitionedProjection<T>,
    pub ffn2: PartitionedProjection<T>,
    pub ln1_gain: ParamTensor<T>,
    pub ln1_bias: ParamTensor<T>,
    pub ln2_gain: ParamTensor<T>,
    pub ln2_bias: ParamTensor<T>,
}

impl<T: Scalar> IciiaLayerParams<T> {
    pub fn init<R: Rng>(cfg: &IciiaConfig, rng: &mut R) -> Result<Self> {
        let (d, p) = (cfg.feature_dim, cfg.num_partitions);
        Ok(Self {
            proj_q: PartitionedProjection::glorot(d, p, rng)?,
            proj_k: PartitionedProjection::glorot(d, p, rng)?,
            proj_v: PartitionedProjection::glorot(d, p, rng)?,
            proj_out: PartitionedProjection::glorot(d, p, rng)?,
            ffn1: PartitionedProjection::glorot(d, p, rng)?,
            ffn2: PartitionedProjection::glorot(d, p, rng)?,
            ln1_gain: ParamTensor::new(Matrix::filled(1, d, T::one())),
            ln1_bias: ParamTensor::zeros(1, d),
            ln2_gain: ParamTensor::new(Matrix::filled(1, d, T::one())),
            ln2_bias: ParamTensor::zeros(1, d),
        })
    }

    pub fn projections(&self) -> [&PartitionedProjection<T>; 6] {
        [
            &self.proj_q,
            &self.proj_k,
            &self.proj_v,
            &self.proj_out,
            &self.ffn1,
            &self.ffn2,
        ]
    }

    /// All tensors in declaration order (the checkpoint order).
    pub fn params(&self) -> Vec<&ParamTensor<T>> {
        let mut v: Vec<&ParamTensor<T>> = Vec::new();
        for proj in self.projections() {
            v.extend(proj.params());
        }
        v.extend([&self.ln1_gain, &self.ln1_bias, &self.ln2_gain, &self.ln2_bias]);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor<T>> {
        let mut v: Vec<&mut ParamTensor<T>> = Vec::new();
        v.extend(self.proj_q.params_mut());
        v.extend(self.proj_k.params_mut());
        v.extend(self.proj_v.params_mut());
        v.extend(self.proj_out.params_mut());
        v.extend(self.ffn1.params_mut());
        v.extend(self.ffn2.params_mut());
        v.extend([
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]);
        v
    }
}

/// Project then (optionally) shuffle.
fn project<T: Scalar>(
    proj: &PartitionedProjection<T>,
    x: &Matrix<T>,
    cfg: &IciiaConfig,
    macs: &mut MacCounter,
) -> Result<Matrix<T>> {
    let y = proj.forward(x, macs)?;
    if cfg.shuffle {
        shuffle(&y, cfg.num_partitions)
    } else {
        Ok(y)
    }
}

fn project_backward<T: Scalar>(
    proj: &mut PartitionedProjection<T>,
    x: &Matrix<T>,
    upstream: &Matrix<T>,
    cfg: &IciiaConfig,
) -> Result<Matrix<T>> {
    if cfg.shuffle {
        let up = inverse_shuffle(upstream, cfg.num_partitions)?;
        proj.backward(x, &up)
    } else {
        proj.backward(x, upstream)
    }
}

fn columns<T: Scalar>(m: &Matrix<T>, start: usize, width: usize) -> Matrix<T> {
    Matrix::from_fn(m.rows(), width, |r, c| m[(r, start + c)])
}

fn write_columns<T: Scalar>(dst: &mut Matrix<T>, start: usize, src: &Matrix<T>) {
    for r in 0..src.rows() {
        dst.row_mut(r)[start..start + src.cols()].copy_from_slice(src.row(r));
    }
}

#[derive(Clone, Debug)]
pub struct AttentionTrace<T> {
    input: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    heads: Vec<AttentionCache<T>>,
    concat: Matrix<T>,
    ln: LayerNormCache<T>,
}

impl<T: Scalar> AttentionTrace<T> {
    /// Per-head attention weights; an identity pattern when attention is removed.
    pub fn scores(&self, mask: &[bool]) -> Vec<Matrix<T>> {
        if self.heads.is_empty() {
            let b = self.input.rows();
            let id = Matrix::from_fn(b, b, |r, c| if r == c && mask[r] { T::one() } else { T::zero() });
            return vec![id];
        }
        self.heads.iter().map(|h| h.probs.clone()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct FfnTrace<T> {
    input: Matrix<T>,
    pre_act: Matrix<T>,
    hidden: Matrix<T>,
    ln: LayerNormCache<T>,
}

/// Multi-head self-attention sub-block: `layer_norm(x + S(P_out(concat_h attn_h)))`.
pub fn mhsa_forward<T: Scalar>(
    x: &Matrix<T>,
    layer: &IciiaLayerParams<T>,
    cfg: &IciiaConfig,
    mask: &[bool],
    macs: &mut MacCounter,
) -> Result<(Matrix<T>, AttentionTrace<T>)> {
    let q = project(&layer.proj_q, x, cfg, macs)?;
    let k = project(&layer.proj_k, x, cfg, macs)?;
    let v = project(&layer.proj_v, x, cfg, macs)?;

    let (concat, heads) = match cfg.attention {
        AttentionMode::Full => {
            let dh = cfg.head_dim();
            let mut concat = Matrix::zeros(x.rows(), cfg.feature_dim);
            let mut heads = Vec::with_capacity(cfg.num_heads);
            for h in 0..cfg.num_heads {
                let (qh, kh, vh) = (
                    columns(&q, h * dh, dh),
                    columns(&k, h * dh, dh),
                    columns(&v, h * dh, dh),
                );
                let (oh, cache) = ops::scaled_dot_attention(&qh, &kh, &vh, mask, macs)?;
                write_columns(&mut concat, h * dh, &oh);
                heads.push(cache);
            }
            (concat, heads)
        }
        AttentionMode::SelfOnly => (v.clone(), Vec::new()),
    };

    let out = project(&layer.proj_out, &concat, cfg, macs)?;
    let residual = x.add(&out)?;
    let (y, ln) = ops::layer_norm_forward(&residual, &layer.ln1_gain, &layer.ln1_bias, T::lit(cfg.ln_eps))?;
    let trace = AttentionTrace {
        input: x.clone(),
        q,
        k,
        v,
        heads,
        concat,
        ln,
    };
    Ok((y, trace))
}

pub fn mhsa_backward<T: Scalar>(
    trace: &AttentionTrace<T>,
    layer: &mut IciiaLayerParams<T>,
    cfg: &IciiaConfig,
    mask: &[bool],
    upstream: &Matrix<T>,
) -> Result<Matrix<T>> {
    let d_res = ops::layer_norm_backward(&trace.ln, &mut layer.ln1_gain, &mut layer.ln1_bias, upstream)?;
    let d_concat = project_backward(&mut layer.proj_out, &trace.concat, &d_res, cfg)?;

    let (dq, dk, dv) = match cfg.attention {
        AttentionMode::Full => {
            let dh = cfg.head_dim();
            let b = d_concat.rows();
            let (mut dq, mut dk, mut dv) = (
                Matrix::zeros(b, cfg.feature_dim),
                Matrix::zeros(b, cfg.feature_dim),
                Matrix::zeros(b, cfg.feature_dim),
            );
            for (h, cache) in trace.heads.iter().enumerate() {
                let (qh, kh, vh) = (
                    columns(&trace.q, h * dh, dh),
                    columns(&trace.k, h * dh, dh),
                    columns(&trace.v, h * dh, dh),
                );
                let up = columns(&d_concat, h * dh, dh);
                let (gq, gk, gv) = ops::scaled_dot_attention_backward(&qh, &kh, &vh, mask, cache, &up)?;
                write_columns(&mut dq, h * dh, &gq);
                write_columns(&mut dk, h * dh, &gk);
                write_columns(&mut dv, h * dh, &gv);
            }
            (Some(dq), Some(dk), dv)
        }
        AttentionMode::SelfOnly => (None, None, d_concat),
    };

    let mut dx = d_res;
    if let Some(dq) = dq {
        dx.add_assign(&project_backward(&mut layer.proj_q, &trace.input, &dq, cfg)?)?;
    }
    if let Some(dk) = dk {
        dx.add_assign(&project_backward(&mut layer.proj_k, &trace.input, &dk, cfg)?)?;
    }
    dx.add_assign(&project_backward(&mut layer.proj_v, &trace.input, &dv, cfg)?)?;
    Ok(dx)
}

/// Feed-forward sub-block: `layer_norm(x + S(ffn2(relu(S(ffn1(x))))))`.
pub fn ffn_forward<T: Scalar>(
    x: &Matrix<T>,
    layer: &IciiaLayerParams<T>,
    cfg: &IciiaConfig,
    macs: &mut MacCounter,
) -> Result<(Matrix<T>, FfnTrace<T>)> {
    let pre_act = project(&layer.ffn1, x, cfg, macs)?;
    let hidden = ops::relu(&pre_act);
    let f = project(&layer.ffn2, &hidden, cfg, macs)?;
    let residual = x.add(&f)?;
    let (y, ln) = ops::layer_norm_forward(&residual, &layer.ln2_gain, &layer.ln2_bias, T::lit(cfg.ln_eps))?;
    Ok((
        y,
        FfnTrace {
            input: x.clone(),
            pre_act,
            hidden,
            ln,
        },
    ))
}

pub fn ffn_backward<T: Scalar>(
    trace: &FfnTrace<T>,
    layer: &mut IciiaLayerParams<T>,
    cfg: &IciiaConfig,
    upstream: &Matrix<T>,
) -> Result<Matrix<T>> {
    let d_res = ops::layer_norm_backward(&trace.ln, &mut layer.ln2_gain, &mut layer.ln2_bias, upstream)?;
    let d_hidden = project_backward(&mut layer.ffn2, &trace.hidden, &d_res, cfg)?;
    let d_pre = ops::relu_backward(&trace.pre_act, &d_hidden)?;
    let mut dx = project_backward(&mut layer.ffn1, &trace.input, &d_pre, cfg)?;
    dx.add_assign(&d_res)?;
    Ok(dx)
}
