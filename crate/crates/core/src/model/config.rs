use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How each query row mixes the value rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Scaled dot-product softmax over all valid rows of the window.
    #[default]
    Full,
    /// Every row keeps its own value vector (attention removed).
    SelfOnly,
}

/// Shape and options of the attention module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IciiaConfig {
    /// Feature width `D` shared by the extractor output and the classifier input.
    pub feature_dim: usize,
    pub num_heads: usize,
    pub num_partitions: usize,
    pub num_layers: usize,
    /// Window size used during training.
    pub train_window: usize,
    /// Capacity of the per-client history pool at inference time.
    pub max_history: usize,
    pub ln_eps: f64,
    /// Feature shuffling after each partitioned projection.
    pub shuffle: bool,
    pub attention: AttentionMode,
}

impl Default for IciiaConfig {
    fn default() -> Self {
        Self {
            feature_dim: 64,
            num_heads: 4,
            num_partitions: 1,
            num_layers: 2,
            train_window: 16,
            max_history: 63,
            ln_eps: 1e-5,
            shuffle: true,
            attention: AttentionMode::Full,
        }
    }
}

impl IciiaConfig {
    pub fn new(feature_dim: usize, num_heads: usize, num_partitions: usize, num_layers: usize) -> Self {
        Self {
            feature_dim,
            num_heads,
            num_partitions,
            num_layers,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.feature_dim;
        if d == 0 || self.num_heads == 0 || self.num_partitions == 0 {
            return Err(Error::Config(
                "feature_dim, num_heads and num_partitions must be positive".into(),
            ));
        }
        if !d.is_multiple_of(self.num_partitions) {
            return Err(Error::Config(format!(
                "feature_dim {d} is not divisible by num_partitions {}; valid divisors: {:?}",
                self.num_partitions,
                divisors(d)
            )));
        }
        if !d.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "feature_dim {d} is not divisible by num_heads {}",
                self.num_heads
            )));
        }
        if self.train_window == 0 {
            return Err(Error::Config("train_window must be at least 1".into()));
        }
        if self.ln_eps.is_nan() || self.ln_eps <= 0.0 {
            return Err(Error::Config("ln_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.feature_dim / self.num_heads
    }

    pub fn partition_dim(&self) -> usize {
        self.feature_dim / self.num_partitions
    }
}

pub fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|k| n.is_multiple_of(*k)).collect()
}
