//! Client-partitioned feature datasets.

mod io;
mod synth;
mod window;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use io::{read_features, write_features, Dataset, DatasetMeta};
pub use synth::{generate, Generated, SyntheticSpec};
pub use window::{make_epoch_windows, make_windows, LabeledWindow};

/// One extracted feature vector with its class label.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub client_id: String,
    pub label: usize,
    pub features: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Val,
    Test,
}

impl Role {
    pub fn file_stem(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
        }
    }
}

/// Whether clients are disjoint across roles or every client contributes
/// disjoint record subsets to each role.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    #[default]
    ByClient,
    WithinClient,
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "by-client" => Ok(SplitMode::ByClient),
            "within-client" => Ok(SplitMode::WithinClient),
            other => Err(format!("unknown split mode `{other}` (by-client | within-client)")),
        }
    }
}

/// Records of one role, grouped by client in id order.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientSet {
    pub role: Role,
    pub split_mode: SplitMode,
    pub clients: BTreeMap<String, Vec<FeatureRecord>>,
}

impl ClientSet {
    pub fn new(role: Role, split_mode: SplitMode) -> Self {
        Self {
            role,
            split_mode,
            clients: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, record: FeatureRecord) {
        self.clients.entry(record.client_id.clone()).or_default().push(record);
    }

    pub fn num_records(&self) -> usize {
        self.clients.values().map(Vec::len).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = &FeatureRecord> {
        self.clients.values().flatten()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.records().next().map(|r| r.features.len())
    }

    /// Largest label plus one.
    pub fn label_bound(&self) -> usize {
        self.records().map(|r| r.label + 1).max().unwrap_or(0)
    }
}
