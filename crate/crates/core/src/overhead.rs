//! Parameter and FLOP accounting.
//!
//! One FLOP is one multiply-accumulate. Per layer the module runs six
//! partitioned projections (`B·D²/P` MACs each) and, per head, a score product
//! and a weighted sum (`B²·D` MACs each across all heads). Bias additions,
//! layer norm and softmax arithmetic are not counted.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{self, AttentionWindow, IciiaConfig, IciiaParams};
use crate::tensor::{MacCounter, Scalar};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    /// `6·D²·N/P`
    pub weights: u64,
    /// `6·D·N`
    pub biases: u64,
    /// `4·D·N` (two gain/bias pairs per layer)
    pub layer_norm: u64,
}

impl ParamCounts {
    /// Figure compared against published tables: weights plus projection biases.
    pub fn weights_and_biases(&self) -> u64 {
        self.weights + self.biases
    }

    pub fn total(&self) -> u64 {
        self.weights + self.biases + self.layer_norm
    }
}

fn to_u64(v: u128, what: &str) -> Result<u64> {
    u64::try_from(v).map_err(|_| Error::Range(format!("{what} does not fit in 64 bits")))
}

pub fn param_count(cfg: &IciiaConfig) -> Result<ParamCounts> {
    cfg.validate()?;
    let (d, p, n) = (
        cfg.feature_dim as u128,
        cfg.num_partitions as u128,
        cfg.num_layers as u128,
    );
    Ok(ParamCounts {
        weights: to_u64(6 * d * d / p * n, "weight count")?,
        biases: to_u64(6 * d * n, "bias count")?,
        layer_norm: to_u64(4 * d * n, "layer-norm count")?,
    })
}

/// `(6·B·D²/P + 2·B²·D)·N` for a window of `window` rows.
pub fn flops(cfg: &IciiaConfig, window: usize) -> Result<u64> {
    cfg.validate()?;
    if window == 0 {
        return Err(Error::Config("window size must be at least 1".into()));
    }
    let (d, p, n, b) = (
        cfg.feature_dim as u128,
        cfg.num_partitions as u128,
        cfg.num_layers as u128,
        window as u128,
    );
    to_u64((6 * b * d * d / p + 2 * b * b * d) * n, "FLOP count")
}

/// Counts the MACs actually executed by a forward pass over `window`.
pub fn instrumented_count<T: Scalar>(
    window: &AttentionWindow<T>,
    params: &IciiaParams<T>,
    cfg: &IciiaConfig,
) -> Result<u64> {
    let mut macs = MacCounter::new();
    model::forward(window, params, cfg, &mut macs)?;
    macs.total()
}

/// A row of the overhead table.
#[derive(Clone, Debug, Serialize)]
pub struct OverheadReport {
    pub backbone: String,
    pub feature_dim: usize,
    pub num_heads: usize,
    pub num_partitions: usize,
    pub num_layers: usize,
    pub window: usize,
    pub param_count_weights: u64,
    pub param_count_biases: u64,
    pub param_count_total: u64,
    pub flops_per_window: u64,
    pub backbone_params: Option<u64>,
    pub backbone_flops: Option<u64>,
}

impl OverheadReport {
    pub fn new(backbone: impl Into<String>, cfg: &IciiaConfig, window: usize) -> Result<Self> {
        let counts = param_count(cfg)?;
        Ok(Self {
            backbone: backbone.into(),
            feature_dim: cfg.feature_dim,
            num_heads: cfg.num_heads,
            num_partitions: cfg.num_partitions,
            num_layers: cfg.num_layers,
            window,
            param_count_weights: counts.weights,
            param_count_biases: counts.biases,
            param_count_total: counts.total(),
            flops_per_window: flops(cfg, window)?,
            backbone_params: None,
            backbone_flops: None,
        })
    }

    pub fn with_backbone(mut self, params: u64, flops: u64) -> Self {
        self.backbone_params = Some(params);
        self.backbone_flops = Some(flops);
        self
    }

    /// Weights plus projection biases.
    pub fn table_params(&self) -> u64 {
        self.param_count_weights + self.param_count_biases
    }

    pub fn param_ratio(&self) -> Option<f64> {
        self.backbone_params.map(|b| self.table_params() as f64 / b as f64)
    }

    pub fn flop_ratio(&self) -> Option<f64> {
        self.backbone_flops.map(|b| self.flops_per_window as f64 / b as f64)
    }
}

/// A backbone with its final feature width and published size figures.
#[derive(Clone, Copy, Debug)]
pub struct Backbone {
    pub name: &'static str,
    pub feature_dim: usize,
    pub params: u64,
    pub flops: u64,
}

/// The six ImageNet backbones used in the overhead comparison.
pub const BACKBONES: [Backbone; 6] = [
    Backbone {
        name: "MobileNetV3-L",
        feature_dim: 1280,
        params: 5_500_000,
        flops: 230_000_000,
    },
    Backbone {
        name: "ResNet-152",
        feature_dim: 2048,
        params: 60_000_000,
        flops: 12_000_000_000,
    },
    Backbone {
        name: "EfficientNet-B4",
        feature_dim: 1792,
        params: 19_000_000,
        flops: 4_600_000_000,
    },
    Backbone {
        name: "Swin-B",
        feature_dim: 1024,
        params: 88_000_000,
        flops: 15_000_000_000,
    },
    Backbone {
        name: "ConvNeXt-L",
        feature_dim: 1536,
        params: 198_000_000,
        flops: 34_000_000_000,
    },
    Backbone {
        name: "EfficientNet-B7",
        feature_dim: 2560,
        params: 66_000_000,
        flops: 39_000_000_000,
    },
];

/// Partition count of the tiny configuration.
pub const TINY_PARTITIONS: usize = 256;

/// Base (P=1) and tiny rows for every listed backbone, in table order.
pub fn backbone_table(num_layers: usize, window: usize) -> Result<Vec<OverheadReport>> {
    let mut rows = Vec::new();
    for bb in BACKBONES {
        for p in [1, TINY_PARTITIONS] {
            let cfg = IciiaConfig::new(bb.feature_dim, 4, p, num_layers);
            rows.push(OverheadReport::new(bb.name, &cfg, window)?.with_backbone(bb.params, bb.flops));
        }
    }
    Ok(rows)
}

/// Rounds to `digits` significant digits.
pub fn round_sig(v: f64, digits: u32) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    let mag = v.abs().log10().floor() as i32;
    let exp = digits as i32 - 1 - mag;
    if exp >= 0 {
        let scale = 10f64.powi(exp);
        (v * scale).round() / scale
    } else {
        let step = 10f64.powi(-exp);
        (v / step).round() * step
    }
}
