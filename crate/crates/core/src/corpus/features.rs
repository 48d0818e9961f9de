//! Dense per-photo image features.
//!
//! `features.bin`: magic `MXF1`, u32 LE count, u32 LE dim, then
//! count × dim f32 LE values, row-major. The companion
//! `features.idx.json` is a JSON array of photo ids in row order.
//! Values are stored at f32 precision and widened to f64 on load.

use std::collections::HashMap;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::Corpus;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MXF1";

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f64>,
    row_by_id: HashMap<String, usize>,
}

/// `features.bin` -> `features.idx.json`.
pub fn manifest_path(bin_path: &Path) -> PathBuf {
    let name = bin_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = name.strip_suffix(".bin").unwrap_or(&name);
    bin_path.with_file_name(format!("{stem}.idx.json"))
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        FeatureStore {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            row_by_id: HashMap::new(),
        }
    }

    /// Adds a vector, rounding it to f32 precision.
    pub fn insert(&mut self, photo_id: &str, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "feature for {photo_id:?} has length {}, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !(*v as f32).is_finite()) {
            return Err(Error::NonFinite(format!("feature vector of photo {photo_id:?}")));
        }
        if self.row_by_id.contains_key(photo_id) {
            return Err(Error::DuplicateId {
                kind: "feature",
                id: photo_id.to_string(),
            });
        }
        self.row_by_id.insert(photo_id.to_string(), self.ids.len());
        self.ids.push(photo_id.to_string());
        self.data.extend(vector.iter().map(|&v| v as f32 as f64));
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, photo_id: &str) -> Option<&[f64]> {
        self.row_by_id
            .get(photo_id)
            .map(|&r| &self.data[r * self.dim..(r + 1) * self.dim])
    }

    /// Fails on the first corpus photo without a vector.
    pub fn check_covers(&self, corpus: &Corpus) -> Result<()> {
        match corpus.photos().iter().find(|p| self.get(&p.photo_id).is_none()) {
            Some(p) => Err(Error::MissingFeature(p.photo_id.clone())),
            None => Ok(()),
        }
    }

    /// Loads `path` and its manifest and checks coverage of `corpus`.
    pub fn load(path: &Path, corpus: &Corpus) -> Result<Self> {
        let store = Self::read(path)?;
        store.check_covers(corpus)?;
        Ok(store)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let idx_path = manifest_path(path);
        let idx_text = fs::read_to_string(&idx_path).map_err(|e| Error::io(&idx_path, e))?;
        let ids: Vec<String> = serde_json::from_str(&idx_text)?;
        Self::decode(&bytes, ids)
    }

    fn decode(bytes: &[u8], ids: Vec<String>) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic)
            .map_err(|_| Error::Format("feature file too short".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad feature magic {magic:?}")));
        }
        let short = |_| Error::Format("truncated feature header".into());
        let count = cur.read_u32::<LittleEndian>().map_err(short)? as usize;
        let dim = cur.read_u32::<LittleEndian>().map_err(short)? as usize;
        if ids.len() != count {
            return Err(Error::Format(format!(
                "manifest lists {} ids but header count is {count}",
                ids.len()
            )));
        }
        let expected = 12 + count * dim * 4;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "feature file is {} bytes, header (count={count}, dim={dim}) implies {expected}",
                bytes.len()
            )));
        }
        let mut store = FeatureStore::new(dim);
        let mut row = vec![0.0f64; dim];
        for id in ids {
            for v in row.iter_mut() {
                let x = cur.read_f32::<LittleEndian>().map_err(short)?;
                if !x.is_finite() {
                    return Err(Error::NonFinite(format!("feature vector of photo {id:?}")));
                }
                *v = x as f64;
            }
            store.insert(&id, &row)?;
        }
        Ok(store)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(self.ids.len() as u32).unwrap();
        out.write_u32::<LittleEndian>(self.dim as u32).unwrap();
        for v in &self.data {
            out.write_f32::<LittleEndian>(*v as f32).unwrap();
        }
        out
    }

    /// Writes the binary file and its id manifest.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.encode()).map_err(|e| Error::io(path, e))?;
        let idx_path = manifest_path(path);
        fs::write(&idx_path, serde_json::to_string(&self.ids)?)
            .map_err(|e| Error::io(&idx_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(count: u32, dim: u32, values: &[f32]) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.write_u32::<LittleEndian>(count).unwrap();
        out.write_u32::<LittleEndian>(dim).unwrap();
        for v in values {
            out.write_f32::<LittleEndian>(*v).unwrap();
        }
        out
    }

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn decodes_header_and_rows() {
        let store =
            FeatureStore::decode(&raw(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.5]), ids(2)).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.dim(), 3);
        assert_eq!(store.get("p2").unwrap(), &[4.0, 5.0, 6.5]);
        assert_eq!(FeatureStore::decode(&store.encode(), ids(2)).unwrap(), store);
    }

    #[test]
    fn rejects_bad_input() {
        let mut bad = raw(1, 1, &[0.0]);
        bad[0] = b'X';
        assert!(matches!(FeatureStore::decode(&bad, ids(1)), Err(Error::Format(_))));
        assert!(matches!(
            FeatureStore::decode(&raw(2, 1, &[0.0, 1.0]), ids(1)),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            FeatureStore::decode(&raw(1, 2, &[0.0]), ids(1)),
            Err(Error::Format(_))
        ));
        let err = FeatureStore::decode(&raw(2, 1, &[0.0, f32::NAN]), ids(2)).unwrap_err();
        assert!(err.to_string().contains("p2"), "{err}");
    }

    #[test]
    fn manifest_naming() {
        assert_eq!(
            manifest_path(Path::new("/d/features.bin")),
            PathBuf::from("/d/features.idx.json")
        );
    }
}
