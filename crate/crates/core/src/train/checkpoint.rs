//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic        8 bytes  "ICIIACKP"
//! version      u32      1
//! feature_dim  u32
//! num_classes  u32
//! has_module   u8
//! [if has_module]
//!   num_heads u32, num_partitions u32, num_layers u32, train_window u32,
//!   max_history u32, ln_eps f64, shuffle u8, attention u8 (0 full, 1 self-only)
//! epoch        u32
//! best_val     f64
//! scalar_count u64
//! blob         scalar_count × f32
//! ```
//!
//! The blob holds the classifier weight and bias, then every module tensor in
//! declaration order (per layer: q, k, v, out, ffn1, ffn2 projections, each as
//! its blocks then bias; then ln1 gain/bias and ln2 gain/bias).
//! A JSON sidecar (`<path>.json`) carries metrics and is not needed to load.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{AttentionMode, IciiaConfig, IciiaParams};
use crate::tensor::ParamTensor;

use super::{Classifier, Model};

const MAGIC: &[u8; 8] = b"ICIIACKP";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub best_val_accuracy: f64,
    pub epoch: usize,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Range(format!("{v} exceeds u32")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, t: &ParamTensor<f32>) {
        for v in t.value.as_slice() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn tensor(&mut self, t: &mut ParamTensor<f32>) -> Result<()> {
        for v in t.value.as_mut_slice() {
            *v = f32::from_le_bytes(self.take(4)?.try_into().unwrap());
        }
        Ok(())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        let clf = &self.model.classifier;
        w.u32(clf.feature_dim())?;
        w.u32(clf.num_classes())?;
        match &self.model.iciia {
            None => w.u8(0),
            Some((cfg, _)) => {
                w.u8(1);
                w.u32(cfg.num_heads)?;
                w.u32(cfg.num_partitions)?;
                w.u32(cfg.num_layers)?;
                w.u32(cfg.train_window)?;
                w.u32(cfg.max_history)?;
                w.f64(cfg.ln_eps);
                w.u8(cfg.shuffle as u8);
                w.u8(match cfg.attention {
                    AttentionMode::Full => 0,
                    AttentionMode::SelfOnly => 1,
                });
            }
        }
        w.u32(self.epoch)?;
        w.f64(self.best_val_accuracy);
        let module_scalars = self.model.iciia.as_ref().map_or(0, |(_, p)| p.scalar_count());
        let count = clf.weight.len() + clf.bias.len() + module_scalars;
        w.0.extend_from_slice(&(count as u64).to_le_bytes());
        w.tensor(&clf.weight);
        w.tensor(&clf.bias);
        if let Some((_, params)) = &self.model.iciia {
            for t in params.params() {
                w.tensor(t);
            }
        }
        Ok(w.0)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic bytes)".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let feature_dim = r.u32()?;
        let num_classes = r.u32()?;
        let cfg = match r.u8()? {
            0 => None,
            1 => {
                let num_heads = r.u32()?;
                let num_partitions = r.u32()?;
                let num_layers = r.u32()?;
                let cfg = IciiaConfig {
                    feature_dim,
                    num_heads,
                    num_partitions,
                    num_layers,
                    train_window: r.u32()?,
                    max_history: r.u32()?,
                    ln_eps: r.f64()?,
                    shuffle: r.u8()? != 0,
                    attention: match r.u8()? {
                        0 => AttentionMode::Full,
                        1 => AttentionMode::SelfOnly,
                        x => return Err(Error::Format(format!("unknown attention mode {x}"))),
                    },
                };
                cfg.validate()?;
                Some(cfg)
            }
            x => return Err(Error::Format(format!("bad module flag {x}"))),
        };
        let epoch = r.u32()?;
        let best_val_accuracy = r.f64()?;
        let count = r.u64()?;

        let mut classifier = Classifier::zeros(feature_dim, num_classes);
        let iciia = match cfg {
            Some(cfg) => {
                let params = IciiaParams::init(&cfg, 0)?;
                Some((cfg, params))
            }
            None => None,
        };
        let expected =
            classifier.weight.len() + classifier.bias.len() + iciia.as_ref().map_or(0, |(_, p)| p.scalar_count());
        if count != expected as u64 {
            return Err(Error::Format(format!(
                "checkpoint declares {count} scalars, configuration implies {expected}"
            )));
        }
        r.tensor(&mut classifier.weight)?;
        r.tensor(&mut classifier.bias)?;
        let iciia = match iciia {
            Some((cfg, mut params)) => {
                for t in params.params_mut() {
                    r.tensor(t)?;
                }
                Some((cfg, params))
            }
            None => None,
        };
        if r.pos != buf.len() {
            return Err(Error::Format("trailing bytes after checkpoint blob".into()));
        }
        Ok(Self {
            model: Model { classifier, iciia },
            best_val_accuracy,
            epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Writes `<path>.json` with the given metrics.
    pub fn save_sidecar<M: Serialize>(path: &Path, metrics: &M) -> Result<PathBuf> {
        let side = sidecar_path(path);
        let body = serde_json::to_string_pretty(metrics)?;
        fs::write(&side, body).map_err(|e| Error::io(&side, e))?;
        Ok(side)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(with_module: bool) -> Checkpoint {
        let mut clf = Classifier::zeros(8, 5);
        clf.weight.value.as_mut_slice()[3] = 1.5;
        clf.bias.value.as_mut_slice()[4] = -0.25;
        let iciia = with_module.then(|| {
            let cfg = IciiaConfig {
                shuffle: false,
                attention: AttentionMode::SelfOnly,
                ..IciiaConfig::new(8, 2, 4, 2)
            };
            let p = IciiaParams::init(&cfg, 9).unwrap();
            (cfg, p)
        });
        Checkpoint {
            model: Model { classifier: clf, iciia },
            best_val_accuracy: 0.625,
            epoch: 17,
        }
    }

    #[test]
    fn round_trip() {
        for m in [false, true] {
            let ck = sample(m);
            assert_eq!(Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap(), ck);
        }
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample(true).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}
