//! "MXP1" checkpoints: magic, u32 LE header length, JSON header (kind,
//! free-form meta, param names/shapes), then every param's values as f64 LE
//! in header order.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MXP1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    params: Vec<ParamHeader>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    entries: Vec<(ParamHeader, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(kind: &str, meta: serde_json::Value, ps: &ParamSet) -> Self {
        let entries = ps
            .params()
            .iter()
            .map(|p| {
                (
                    ParamHeader {
                        name: p.name.clone(),
                        shape: p.shape.clone(),
                        trainable: p.trainable,
                    },
                    p.value.clone(),
                )
            })
            .collect();
        Checkpoint {
            kind: kind.to_string(),
            meta,
            entries,
        }
    }

    /// A fresh parameter set holding the stored values (zeroed grads).
    pub fn to_param_set(&self) -> ParamSet {
        let mut ps = ParamSet::new();
        for (h, v) in &self.entries {
            ps.add(&h.name, &h.shape, v.clone(), h.trainable);
        }
        ps
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(h, _)| h.name.as_str())
    }

    /// Overwrites every param of `ps` from the checkpoint; shapes must agree
    /// and every checkpoint param must exist in `ps`.
    pub fn restore_into(&self, ps: &mut ParamSet) -> Result<()> {
        ps.load_values(
            self.entries
                .iter()
                .map(|(h, v)| (h.name.clone(), h.shape.clone(), v.clone()))
                .collect(),
        )
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            params: self.entries.iter().map(|(h, _)| h.clone()).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let n: usize = self.entries.iter().map(|(_, v)| v.len()).sum();
        let mut out = Vec::with_capacity(8 + json.len() + 8 * n);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.write_u32::<LittleEndian>(json.len() as u32).expect("vec write");
        out.extend_from_slice(&json);
        for (_, values) in &self.entries {
            for &v in values {
                out.write_f64::<LittleEndian>(v).expect("vec write");
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)
            .map_err(|_| Error::Format("checkpoint truncated before magic".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let len = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::Format("checkpoint truncated in header length".into()))?
            as usize;
        let start = cur.position() as usize;
        let json = bytes
            .get(start..start + len)
            .ok_or_else(|| Error::Format("checkpoint truncated in header".into()))?;
        let header: Header = serde_json::from_slice(json)?;
        cur.set_position((start + len) as u64);
        let mut entries = Vec::with_capacity(header.params.len());
        for ph in header.params {
            let n: usize = ph.shape.iter().product();
            let mut values = vec![0.0; n];
            cur.read_f64_into::<LittleEndian>(&mut values)
                .map_err(|_| Error::Format(format!("checkpoint truncated in param {}", ph.name)))?;
            entries.push((ph, values));
        }
        if (cur.position() as usize) != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint params".into()));
        }
        Ok(Checkpoint {
            kind: header.kind,
            meta: header.meta,
            entries,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
