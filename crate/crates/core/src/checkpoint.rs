//! Binary model checkpoints.
//!
//! ```text
//! magic      8 bytes  "XNODECKP"
//! version    u32
//! config     u32 length + UTF-8 `key = value` text
//! count      u32
//! blocks     count × (u32 name length, name, u32 rows, u32 cols, rows·cols f64)
//! ```
//!
//! All integers and floats are little-endian. The config text includes
//! `input_dim` and `n_classes`; the context normalization is stored as the
//! blocks `context_norm.mean` and `context_norm.std`.

use std::fs;
use std::path::Path;

use crate::config::KvConfig;
use crate::context::{ContextNorm, CONTEXT_DIM};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, XNodeModel};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"XNODECKP";
pub const VERSION: u32 = 1;

const NORM_MEAN: &str = "context_norm.mean";
const NORM_STD: &str = "context_norm.std";

pub fn to_bytes(model: &XNodeModel) -> Vec<u8> {
    let mut kv = model.config.to_kv();
    kv.set("input_dim", model.input_dim);
    kv.set("n_classes", model.n_classes);
    let text = kv.to_text();

    let mut blocks: Vec<(&str, &Tensor)> = model.params.iter().map(|(_, p)| (p.name.as_str(), &p.value)).collect();
    let norm = model
        .norm
        .as_ref()
        .map(|n| (Tensor::row(&n.mean), Tensor::row(&n.std)));
    if let Some((mean, std)) = &norm {
        blocks.push((NORM_MEAN, mean));
        blocks.push((NORM_STD, std));
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, text.len() as u32);
    out.extend_from_slice(text.as_bytes());
    put_u32(&mut out, blocks.len() as u32);
    for (name, t) in blocks {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rows() as u32);
        put_u32(&mut out, t.cols() as u32);
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<XNodeModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a model checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
    let kv = KvConfig::parse(text, None)?;
    let config = ModelConfig::from_kv(&kv)?;
    let dim = |key| {
        kv.get::<usize>(key)?
            .ok_or_else(|| Error::Checkpoint(format!("config is missing `{key}`")))
    };
    let mut model = XNodeModel::new(config, dim("input_dim")?, dim("n_classes")?)?;

    let mut stored = ParamStore::new();
    for _ in 0..r.u32()? {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let count = rows
            .checked_mul(cols)
            .filter(|c| c.checked_mul(8).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| Error::Checkpoint(format!("block `{name}` is truncated")))?;
        let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if stored.find(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate block `{name}`")));
        }
        stored.add(name, Tensor::new(rows, cols, data)?);
    }
    if r.remaining() != 0 {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
    }
    if let Some(extra) = stored
        .iter()
        .map(|(_, p)| p.name.as_str())
        .find(|n| *n != NORM_MEAN && *n != NORM_STD && model.params.find(n).is_none())
    {
        return Err(Error::Checkpoint(format!("unexpected block `{extra}`")));
    }
    model.params.load_values(&stored)?;
    model.norm = match (stored.find(NORM_MEAN), stored.find(NORM_STD)) {
        (Some(m), Some(s)) => {
            let (mean, std) = (stored.value(m), stored.value(s));
            if mean.shape() != [1, CONTEXT_DIM] || std.shape() != [1, CONTEXT_DIM] {
                return Err(Error::Checkpoint("context normalization has the wrong width".into()));
            }
            Some(ContextNorm {
                mean: mean.data().to_vec(),
                std: std.data().to_vec(),
            })
        }
        (None, None) => None,
        _ => return Err(Error::Checkpoint("context normalization is incomplete".into())),
    };
    Ok(model)
}

pub fn save(model: &XNodeModel, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<XNodeModel> {
    from_bytes(&fs::read(path)?).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Checkpoint(format!("unexpected end of file at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneKind;

    fn model(kind: BackboneKind, reasoner: bool) -> XNodeModel {
        let cfg = ModelConfig {
            backbone: kind,
            d_h: 5,
            heads: 2,
            reasoner,
            seed: 3,
            ..ModelConfig::default()
        };
        let mut m = XNodeModel::new(cfg, 4, 3).unwrap();
        for p in m.params.iter_mut() {
            p.value = p.value.map(|v| v * 1.5 + 0.01);
        }
        m.norm = Some(ContextNorm {
            mean: (0..7).map(|i| i as f64).collect(),
            std: vec![0.5; 7],
        });
        m
    }

    #[test]
    fn round_trip_is_exact() {
        for kind in BackboneKind::ALL {
            for reasoner in [false, true] {
                let m = model(kind, reasoner);
                let back = from_bytes(&to_bytes(&m)).unwrap();
                assert_eq!(back.config, m.config);
                assert_eq!(back.norm, m.norm);
                for ((_, a), (_, b)) in m.params.iter().zip(back.params.iter()) {
                    assert_eq!(a.name, b.name);
                    assert_eq!(a.value, b.value);
                }
            }
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = to_bytes(&model(BackboneKind::Gcn, true));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[0] = b'Y';
        assert!(matches!(from_bytes(&bad), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(from_bytes(&bad), Err(Error::Checkpoint(_))));
        let mut long = bytes;
        long.push(0);
        assert!(from_bytes(&long).is_err());
    }
}
