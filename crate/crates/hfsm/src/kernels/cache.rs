//! On-disk kernel matrices: a little-endian `f64` dump plus a JSON sidecar header.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{FittedKernel, KernelInput, KernelMatrix, KernelSpec};
use crate::data::ObservationTable;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    spec: KernelSpec,
    dtype: String,
    rows: usize,
    cols: usize,
    data_hash: String,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
}

/// SHA-256 over observation ids and their kernel inputs.
pub fn data_hash<T: Scalar>(ids: &[String], inputs: &[KernelInput<T>]) -> String {
    let mut h = Sha256::new();
    for (id, x) in ids.iter().zip(inputs) {
        h.update(id.as_bytes());
        h.update([0u8]);
        match x {
            KernelInput::Vector(v) => {
                h.update([1u8]);
                for &e in v {
                    h.update(e.as_f64().to_le_bytes());
                }
            }
            KernelInput::Set(s) => {
                h.update([2u8]);
                for c in s {
                    h.update(c.as_bytes());
                    h.update([0u8]);
                }
            }
        }
        h.update([0xffu8]);
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

impl<T: Scalar> KernelMatrix<T> {
    /// Writes `<stem>.bin` and `<stem>.json`.
    pub fn save(&self, stem: &Path, data_hash: &str) -> Result<()> {
        let (bin, json) = paths(stem);
        let file = fs::File::create(&bin).map_err(|e| Error::io(&bin, e))?;
        let mut w = BufWriter::new(file);
        for &v in self.values.as_slice() {
            w.write_all(&v.as_f64().to_le_bytes()).map_err(|e| Error::io(&bin, e))?;
        }
        w.flush().map_err(|e| Error::io(&bin, e))?;
        let header = Header {
            spec: self.spec.clone(),
            dtype: std::any::type_name::<T>().to_string(),
            rows: self.values.nrows(),
            cols: self.values.ncols(),
            data_hash: data_hash.to_string(),
            row_ids: self.row_ids.clone(),
            col_ids: self.col_ids.clone(),
        };
        fs::write(&json, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(&json, e))
    }

    /// Reloads a matrix written by [`KernelMatrix::save`], returning it with its data hash.
    pub fn load(stem: &Path) -> Result<(Self, String)> {
        let (bin, json) = paths(stem);
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let header: Header = serde_json::from_str(&text)?;
        if header.dtype != std::any::type_name::<T>() {
            return Err(Error::Data(format!(
                "kernel cache holds {} values, {} requested",
                header.dtype,
                std::any::type_name::<T>()
            )));
        }
        let file = fs::File::open(&bin).map_err(|e| Error::io(&bin, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(&bin, e))?;
        if bytes.len() != header.rows * header.cols * 8 {
            return Err(Error::Data(format!(
                "kernel cache {} has {} bytes, expected {}",
                bin.display(),
                bytes.len(),
                header.rows * header.cols * 8
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| {
                let v = f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
                T::from_f64(v).ok_or_else(|| Error::Data("cached value out of range".into()))
            })
            .collect::<Result<Vec<T>>>()?;
        Ok((
            KernelMatrix {
                values: Matrix::from_vec(header.rows, header.cols, values)?,
                row_ids: header.row_ids,
                col_ids: header.col_ids,
                spec: header.spec,
            },
            header.data_hash,
        ))
    }
}

/// Directory of cached kernel matrices keyed by (fitted kernel, row data, column data).
#[derive(Debug, Clone)]
pub struct KernelCache {
    dir: PathBuf,
}

impl KernelCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(KernelCache { dir })
    }

    pub fn get_or_build<T: Scalar>(
        &self,
        kernel: &FittedKernel,
        rows: &ObservationTable<T>,
        cols: &ObservationTable<T>,
    ) -> Result<KernelMatrix<T>> {
        let row_hash = data_hash(rows.ids(), &kernel.inputs(rows)?);
        let col_hash = data_hash(cols.ids(), &kernel.inputs(cols)?);
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(kernel)?);
        h.update(row_hash.as_bytes());
        h.update(col_hash.as_bytes());
        h.update(std::any::type_name::<T>().as_bytes());
        let key = hex(&h.finalize());
        let stem = self.dir.join(&key[..24]);
        if stem.with_extension("json").exists() {
            let (m, stored) = KernelMatrix::load(&stem)?;
            if stored == key {
                return Ok(m);
            }
        }
        let m = kernel.matrix(rows, cols)?;
        m.save(&stem, &key)?;
        Ok(m)
    }
}
