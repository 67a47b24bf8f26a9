//! Feature files: UTF-8 CSV with header `client_id,label,f0,...,f{D-1}`.
//! Values are written with the shortest representation that parses back to
//! the same `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::synth::SyntheticSpec;
use super::{ClientSet, FeatureRecord, Role, SplitMode};

pub fn write_features(path: &Path, set: &ClientSet) -> Result<()> {
    let dim = set.feature_dim().unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["client_id".to_string(), "label".to_string()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(dim + 2);
    for r in set.records() {
        if r.features.len() != dim {
            return Err(Error::Format(format!(
                "client {} has a {}-wide record in a {dim}-wide set",
                r.client_id,
                r.features.len()
            )));
        }
        row.clear();
        row.push(r.client_id.clone());
        row.push(r.label.to_string());
        row.extend(r.features.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_features(path: &Path, role: Role, split_mode: SplitMode) -> Result<ClientSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut records = rdr.records();

    let header = match records.next() {
        Some(h) => h?,
        None => return Err(Error::Format(format!("{} is empty", path.display()))),
    };
    if header.len() < 3 || &header[0] != "client_id" || &header[1] != "label" {
        return Err(Error::Parse {
            line: 1,
            msg: "header must start with `client_id,label,f0`".into(),
        });
    }
    let dim = header.len() - 2;
    for (i, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{i}") {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected column `f{i}`, found `{name}`"),
            });
        }
    }

    let mut set = ClientSet::new(role, split_mode);
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != dim + 2 {
            return Err(Error::Parse {
                line,
                msg: format!(
                    "expected {} feature columns, found {}",
                    dim,
                    rec.len().saturating_sub(2)
                ),
            });
        }
        let label = rec[1].trim().parse::<usize>().map_err(|e| Error::Parse {
            line,
            msg: format!("bad label `{}`: {e}", &rec[1]),
        })?;
        let features = rec
            .iter()
            .skip(2)
            .map(|s| {
                s.trim()
                    .parse::<f32>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line,
                        msg: format!("bad feature value `{s}`"),
                    })
            })
            .collect::<Result<Vec<f32>>>()?;
        set.push(FeatureRecord {
            client_id: rec[0].to_string(),
            label,
            features,
        });
    }
    if set.num_records() == 0 {
        return Err(Error::Format(format!("{} has a header but no records", path.display())));
    }
    Ok(set)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub split_mode: SplitMode,
    /// Generator settings, when the data is synthetic.
    pub synthetic: Option<SyntheticSpec>,
}

/// Train/val/test client sets stored as `{train,val,test}.csv` plus `meta.json`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub train: ClientSet,
    pub val: ClientSet,
    pub test: ClientSet,
}

impl Dataset {
    pub fn from_generated(spec: &SyntheticSpec, g: super::Generated) -> Self {
        Self {
            meta: DatasetMeta {
                num_classes: spec.num_classes,
                feature_dim: spec.feature_dim,
                split_mode: spec.split_mode,
                synthetic: Some(spec.clone()),
            },
            train: g.train,
            val: g.val,
            test: g.test,
        }
    }

    pub fn synthetic(spec: &SyntheticSpec) -> Result<Self> {
        Ok(Self::from_generated(spec, super::generate(spec)?))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for set in [&self.train, &self.val, &self.test] {
            write_features(&dir.join(format!("{}.csv", set.role.file_stem())), set)?;
        }
        let meta = serde_json::to_string_pretty(&self.meta)?;
        let meta_path = dir.join("meta.json");
        fs::write(&meta_path, meta).map_err(|e| Error::io(meta_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let meta: DatasetMeta =
            serde_json::from_str(&fs::read_to_string(&meta_path).map_err(|e| Error::io(meta_path, e))?)?;
        let load = |role: Role| read_features(&dir.join(format!("{}.csv", role.file_stem())), role, meta.split_mode);
        let ds = Self {
            train: load(Role::Train)?,
            val: load(Role::Val)?,
            test: load(Role::Test)?,
            meta,
        };
        ds.check()?;
        Ok(ds)
    }

    fn check(&self) -> Result<()> {
        for set in [&self.train, &self.val, &self.test] {
            if set.feature_dim() != Some(self.meta.feature_dim) {
                return Err(Error::Format(format!(
                    "{} features are {:?} wide, metadata says {}",
                    set.role.file_stem(),
                    set.feature_dim(),
                    self.meta.feature_dim
                )));
            }
            if set.label_bound() > self.meta.num_classes {
                return Err(Error::Format(format!(
                    "{} has labels outside [0, {})",
                    set.role.file_stem(),
                    self.meta.num_classes
                )));
            }
        }
        Ok(())
    }
}
