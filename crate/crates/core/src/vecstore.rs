//! Id-keyed dense vector matrix with a compact on-disk form.
//!
//! The layout is shared by the embedding cache and every persisted matrix
//! artifact (corpus, taxonomy names, snippets): `<stem>.f32` holds row-major
//! 32-bit little-endian floats, `<stem>.manifest.json` holds
//! `{"dim": D, "ids": [...]}` with row `i` belonging to `ids[i]`.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VecStoreError {
    #[error("duplicate row id \"{0}\"")]
    DuplicateId(String),
    #[error("row for \"{id}\" has dimension {got}, matrix dimension is {want}")]
    DimensionMismatch { id: String, got: usize, want: usize },
    #[error("{path}: data holds {got} floats but manifest implies {want}")]
    Truncated { path: PathBuf, got: usize, want: usize },
    #[error("unknown row id \"{0}\"")]
    UnknownId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: invalid manifest: {source}")]
    Manifest {
        path: PathBuf,
        source: serde_json::Error,
    },
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dim: usize,
    ids: Vec<String>,
}

/// Dense row-major f32 matrix keyed by string ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
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

    pub fn push(&mut self, id: String, row: Vec<f32>) -> Result<(), VecStoreError> {
        if row.len() != self.dim {
            return Err(VecStoreError::DimensionMismatch {
                id,
                got: row.len(),
                want: self.dim,
            });
        }
        if self.index.contains_key(&id) {
            return Err(VecStoreError::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(&row);
        Ok(())
    }

    pub fn row(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.row_at(i))
    }

    pub fn row_at(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn require_row(&self, id: &str) -> Result<&[f32], VecStoreError> {
        self.row(id).ok_or_else(|| VecStoreError::UnknownId(id.to_string()))
    }

    fn data_path(dir: &Path, stem: &str) -> PathBuf {
        dir.join(format!("{stem}.f32"))
    }

    fn manifest_path(dir: &Path, stem: &str) -> PathBuf {
        dir.join(format!("{stem}.manifest.json"))
    }

    pub fn exists(dir: &Path, stem: &str) -> bool {
        Self::data_path(dir, stem).exists() && Self::manifest_path(dir, stem).exists()
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), VecStoreError> {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            dim: self.dim,
            ids: self.ids.clone(),
        };
        let json = serde_json::to_string(&manifest).expect("manifest serializes");
        fs::write(Self::manifest_path(dir, stem), json)?;
        let mut w = BufWriter::new(fs::File::create(Self::data_path(dir, stem))?);
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self, VecStoreError> {
        let mpath = Self::manifest_path(dir, stem);
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&mpath)?)
            .map_err(|source| VecStoreError::Manifest {
                path: mpath,
                source,
            })?;
        let dpath = Self::data_path(dir, stem);
        let raw = fs::read(&dpath)?;
        let want = manifest.ids.len() * manifest.dim;
        if raw.len() != want * 4 {
            return Err(VecStoreError::Truncated {
                path: dpath,
                got: raw.len() / 4,
                want,
            });
        }
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut index = HashMap::with_capacity(manifest.ids.len());
        for (i, id) in manifest.ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(VecStoreError::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            dim: manifest.dim,
            ids: manifest.ids,
            index,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = EmbeddingMatrix::new(3);
        m.push("a".into(), vec![1.0, -2.5, 3.25]).unwrap();
        m.push("b".into(), vec![0.1, f32::MIN_POSITIVE, -0.0]).unwrap();
        m.save(dir.path(), "emb").unwrap();
        let back = EmbeddingMatrix::load(dir.path(), "emb").unwrap();
        assert_eq!(back.ids(), m.ids());
        for id in m.ids() {
            let (x, y) = (m.row(id).unwrap(), back.row(id).unwrap());
            assert_eq!(
                x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                y.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        // saving again produces identical bytes
        m.save(dir.path(), "emb2").unwrap();
        let b1 = std::fs::read(dir.path().join("emb.f32")).unwrap();
        let b2 = std::fs::read(dir.path().join("emb2.f32")).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn push_rejects_duplicates_and_bad_dims() {
        let mut m = EmbeddingMatrix::new(2);
        m.push("a".into(), vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            m.push("a".into(), vec![3.0, 4.0]),
            Err(VecStoreError::DuplicateId(_))
        ));
        assert!(matches!(
            m.push("b".into(), vec![1.0]),
            Err(VecStoreError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn load_detects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = EmbeddingMatrix::new(2);
        m.push("a".into(), vec![1.0, 2.0]).unwrap();
        m.save(dir.path(), "emb").unwrap();
        let dpath = dir.path().join("emb.f32");
        let raw = std::fs::read(&dpath).unwrap();
        std::fs::write(&dpath, &raw[..4]).unwrap();
        assert!(matches!(
            EmbeddingMatrix::load(dir.path(), "emb"),
            Err(VecStoreError::Truncated { .. })
        ));
    }
}
