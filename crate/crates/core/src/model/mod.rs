//! The intra-client, inter-image attention module.
//!
//! A window holds the features of several images from one client. Each of
//! the `N` layers lets every row attend to every valid row of the window, so a
//! target image's features are recalibrated by the client's other images
//! before they reach the classifier. There is no positional encoding; the
//! window is treated as an unordered set.

mod config;
mod layer;
mod projection;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{MacCounter, Matrix, ParamTensor, Scalar};

pub use config::{divisors, AttentionMode, IciiaConfig};
pub use layer::{ffn_backward, ffn_forward, mhsa_backward, mhsa_forward, AttentionTrace, FfnTrace, IciiaLayerParams};
pub use projection::{inverse_shuffle, shuffle, shuffle_index, PartitionedProjection};

/// All learnable weights, one entry per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct IciiaParams<T: Scalar> {
    pub layers: Vec<IciiaLayerParams<T>>,
}

impl<T: Scalar> IciiaParams<T> {
    pub fn init(cfg: &IciiaConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..cfg.num_layers)
            .map(|_| IciiaLayerParams::init(cfg, &mut rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn params(&self) -> impl Iterator<Item = &ParamTensor<T>> {
        self.layers.iter().flat_map(|l| l.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut())
    }

    pub fn scalar_count(&self) -> usize {
        self.params().map(ParamTensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().for_each(ParamTensor::zero_grad);
    }

    pub fn cast<U: Scalar>(&self) -> IciiaParams<U> {
        let mut out = IciiaParams::<U> {
            layers: Vec::with_capacity(self.layers.len()),
        };
        for layer in &self.layers {
            let cast_proj = |p: &PartitionedProjection<T>| PartitionedProjection {
                blocks: p.blocks.iter().map(ParamTensor::cast).collect(),
                bias: p.bias.cast(),
            };
            out.layers.push(IciiaLayerParams {
                proj_q: cast_proj(&layer.proj_q),
                proj_k: cast_proj(&layer.proj_k),
                proj_v: cast_proj(&layer.proj_v),
                proj_out: cast_proj(&layer.proj_out),
                ffn1: cast_proj(&layer.ffn1),
                ffn2: cast_proj(&layer.ffn2),
                ln1_gain: layer.ln1_gain.cast(),
                ln1_bias: layer.ln1_bias.cast(),
                ln2_gain: layer.ln2_gain.cast(),
                ln2_bias: layer.ln2_bias.cast(),
            });
        }
        out
    }
}

/// Features of one client's images fed jointly through the module.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWindow<T> {
    pub features: Matrix<T>,
    /// Rows that take part in attention; padded rows are `false`.
    pub valid: Vec<bool>,
    /// Rows whose calibrated outputs are consumed downstream.
    pub target_rows: Vec<usize>,
}

impl<T: Scalar> AttentionWindow<T> {
    /// Every row valid and every row a target.
    pub fn full(features: Matrix<T>) -> Self {
        let b = features.rows();
        Self {
            features,
            valid: vec![true; b],
            target_rows: (0..b).collect(),
        }
    }

    /// History rows followed by a single target in the last row.
    pub fn with_target_last(features: Matrix<T>) -> Self {
        let b = features.rows();
        Self {
            features,
            valid: vec![true; b],
            target_rows: vec![b.saturating_sub(1)],
        }
    }

    pub fn masked(features: Matrix<T>, valid: Vec<bool>) -> Result<Self> {
        let target_rows = valid.iter().enumerate().filter_map(|(i, &v)| v.then_some(i)).collect();
        let w = Self {
            features,
            valid,
            target_rows,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.valid.len() != self.features.rows() {
            return Err(Error::dims(
                "attention window mask",
                self.features.shape(),
                (self.valid.len(), 1),
            ));
        }
        if self.valid_count() == 0 {
            return Err(Error::Usage("attention window has no valid rows".into()));
        }
        if let Some(&t) = self
            .target_rows
            .iter()
            .find(|&&t| t >= self.valid.len() || !self.valid[t])
        {
            return Err(Error::Usage(format!("target row {t} is not a valid row")));
        }
        Ok(())
    }
}

/// Intermediate values of one forward pass, sufficient for backward and for
/// exporting attention weights.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    valid: Vec<bool>,
    layers: Vec<(AttentionTrace<T>, FfnTrace<T>)>,
}

impl<T: Scalar> ForwardTrace<T> {
    /// `[layer][head]` weight matrices over the window.
    pub fn attention_scores(&self) -> Vec<Vec<Matrix<T>>> {
        self.layers.iter().map(|(a, _)| a.scores(&self.valid)).collect()
    }
}

fn check_dim<T: Scalar>(window: &AttentionWindow<T>, cfg: &IciiaConfig) -> Result<()> {
    if window.features.cols() != cfg.feature_dim {
        return Err(Error::dims(
            "iciia_forward",
            window.features.shape(),
            (window.features.rows(), cfg.feature_dim),
        ));
    }
    Ok(())
}

/// Runs all layers over the window, returning calibrated features for every row.
pub fn forward<T: Scalar>(
    window: &AttentionWindow<T>,
    params: &IciiaParams<T>,
    cfg: &IciiaConfig,
    macs: &mut MacCounter,
) -> Result<(Matrix<T>, ForwardTrace<T>)> {
    window.validate()?;
    check_dim(window, cfg)?;
    if params.layers.len() != cfg.num_layers {
        return Err(Error::Config(format!(
            "config has {} layers but parameters hold {}",
            cfg.num_layers,
            params.layers.len()
        )));
    }
    let mut x = window.features.clone();
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (y, at) = mhsa_forward(&x, layer, cfg, &window.valid, macs)?;
        let (z, ft) = ffn_forward(&y, layer, cfg, macs)?;
        layers.push((at, ft));
        x = z;
    }
    Ok((
        x,
        ForwardTrace {
            valid: window.valid.clone(),
            layers,
        },
    ))
}

/// Output only; no trace is kept.
pub fn infer<T: Scalar>(window: &AttentionWindow<T>, params: &IciiaParams<T>, cfg: &IciiaConfig) -> Result<Matrix<T>> {
    let mut macs = MacCounter::new();
    forward(window, params, cfg, &mut macs).map(|(y, _)| y)
}

/// Accumulates parameter gradients and returns the gradient with respect to
/// the window features.
pub fn backward<T: Scalar>(
    trace: &ForwardTrace<T>,
    params: &mut IciiaParams<T>,
    cfg: &IciiaConfig,
    upstream: &Matrix<T>,
) -> Result<Matrix<T>> {
    let mut grad = upstream.clone();
    for (layer, (at, ft)) in params.layers.iter_mut().zip(&trace.layers).rev() {
        let g = ffn_backward(ft, layer, cfg, &grad)?;
        grad = mhsa_backward(at, layer, cfg, &trace.valid, &g)?;
    }
    Ok(grad)
}

/// Parameters plus the trace of the most recent forward pass.
#[derive(Clone, Debug)]
pub struct IciiaModule<T: Scalar> {
    pub config: IciiaConfig,
    pub params: IciiaParams<T>,
    last: Option<ForwardTrace<T>>,
}

impl<T: Scalar> IciiaModule<T> {
    pub fn new(config: IciiaConfig, params: IciiaParams<T>) -> Result<Self> {
        config.validate()?;
        if params.layers.len() != config.num_layers {
            return Err(Error::Config("layer count mismatch".into()));
        }
        Ok(Self {
            config,
            params,
            last: None,
        })
    }

    pub fn init(config: IciiaConfig, seed: u64) -> Result<Self> {
        let params = IciiaParams::init(&config, seed)?;
        Self::new(config, params)
    }

    pub fn forward(&mut self, window: &AttentionWindow<T>) -> Result<Matrix<T>> {
        let mut macs = MacCounter::new();
        let (y, trace) = forward(window, &self.params, &self.config, &mut macs)?;
        self.last = Some(trace);
        Ok(y)
    }

    pub fn backward(&mut self, upstream: &Matrix<T>) -> Result<Matrix<T>> {
        let trace = self
            .last
            .as_ref()
            .ok_or_else(|| Error::Usage("backward called before forward".into()))?;
        backward(trace, &mut self.params, &self.config, upstream)
    }

    /// Weights from the last forward pass, `[layer][head]`.
    pub fn attention_scores(&self) -> Result<Vec<Vec<Matrix<T>>>> {
        self.last
            .as_ref()
            .map(ForwardTrace::attention_scores)
            .ok_or_else(|| Error::Usage("no forward pass has been run".into()))
    }
}

/// Runs a forward pass and returns its attention weights.
pub fn export_attention_scores<T: Scalar>(
    window: &AttentionWindow<T>,
    params: &IciiaParams<T>,
    cfg: &IciiaConfig,
) -> Result<Vec<Vec<Matrix<T>>>> {
    let mut macs = MacCounter::new();
    let (_, trace) = forward(window, params, cfg, &mut macs)?;
    Ok(trace.attention_scores())
}
