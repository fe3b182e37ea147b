//! Byte-level helpers shared by datasets, checkpoints and reports.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamBuffer, ParamLayout};

pub fn f32_to_le_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Caller guarantees `bytes.len()` is a multiple of four.
pub fn f32_from_le_bytes(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn sibling(dir: &Path, tag: &str) -> PathBuf {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    dir.with_file_name(format!(".{name}.{tag}-{}", std::process::id()))
}

/// Fills a scratch directory and renames it over `dir`. On failure the
/// scratch directory is removed and `dir` is left untouched.
pub fn write_dir_atomically(dir: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if let Some(parent) = dir.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = sibling(dir, "partial");
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    let outcome = fill(&tmp).and_then(|()| {
        if dir.exists() {
            let old = sibling(dir, "old");
            fs::rename(dir, &old)?;
            fs::rename(&tmp, dir)?;
            fs::remove_dir_all(&old)?;
        } else {
            fs::rename(&tmp, dir)?;
        }
        Ok(())
    });
    if outcome.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    outcome
}

/// Header entry for one tensor in a flat parameter file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub byte_offset: usize,
    pub byte_len: usize,
}

/// JSON header describing a flat little-endian `f32` parameter file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorHeader {
    pub dtype: String,
    pub total_bytes: usize,
    pub sha256: String,
    pub tensors: Vec<TensorEntry>,
}

/// Accumulates named tensors into one flat buffer.
#[derive(Default)]
pub struct TensorWriter {
    bytes: Vec<u8>,
    entries: Vec<TensorEntry>,
}

impl TensorWriter {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: &[f32]) {
        let data = f32_to_le_bytes(values);
        self.entries.push(TensorEntry {
            name: name.into(),
            shape,
            byte_offset: self.bytes.len(),
            byte_len: data.len(),
        });
        self.bytes.extend_from_slice(&data);
    }

    /// Every tensor of a parameter buffer, names prefixed with `prefix/`.
    pub fn push_params(&mut self, prefix: &str, params: &ParamBuffer<f32>) {
        for t in params.layout().tensors() {
            self.push(format!("{prefix}/{}", t.name), t.shape.clone(), &params.as_slice()[t.range()]);
        }
    }

    pub fn finish(self) -> (TensorHeader, Vec<u8>) {
        let header = TensorHeader {
            dtype: "f32-le".into(),
            total_bytes: self.bytes.len(),
            sha256: crate::handles::sha256_hex(&self.bytes),
            tensors: self.entries,
        };
        (header, self.bytes)
    }
}

/// Random access to a flat file described by a [`TensorHeader`].
pub struct TensorReader<'a> {
    header: &'a TensorHeader,
    bytes: &'a [u8],
}

impl<'a> TensorReader<'a> {
    pub fn new(header: &'a TensorHeader, bytes: &'a [u8]) -> Result<Self> {
        let bad = |m: String| Error::InvalidCheckpoint(m);
        if header.dtype != "f32-le" {
            return Err(bad(format!("unsupported dtype {}", header.dtype)));
        }
        if bytes.len() != header.total_bytes {
            return Err(bad(format!(
                "parameter file has {} bytes, header says {}",
                bytes.len(),
                header.total_bytes
            )));
        }
        if crate::handles::sha256_hex(bytes) != header.sha256 {
            return Err(bad("parameter file digest mismatch".into()));
        }
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            if e.byte_len != n * 4 || e.byte_offset + e.byte_len > bytes.len() {
                return Err(bad(format!("tensor {} has an inconsistent extent", e.name)));
            }
        }
        Ok(Self { header, bytes })
    }

    pub fn get(&self, name: &str) -> Result<Vec<f32>> {
        let e = self
            .header
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::InvalidCheckpoint(format!("missing tensor {name}")))?;
        Ok(f32_from_le_bytes(&self.bytes[e.byte_offset..e.byte_offset + e.byte_len]))
    }

    /// Rebuilds a parameter buffer whose layout must match tensor by tensor.
    pub fn params(&self, prefix: &str, layout: std::sync::Arc<ParamLayout>) -> Result<ParamBuffer<f32>> {
        let mut buf = ParamBuffer::zeros(layout.clone());
        for t in layout.tensors() {
            let name = format!("{prefix}/{}", t.name);
            let entry = self.header.tensors.iter().find(|e| e.name == name);
            match entry {
                Some(e) if e.shape == t.shape => {}
                _ => {
                    return Err(Error::InvalidCheckpoint(format!(
                        "tensor {name} missing or shaped differently from {:?}",
                        t.shape
                    )))
                }
            }
            let values = self.get(&name)?;
            buf.as_mut_slice()[t.range()].copy_from_slice(&values);
        }
        Ok(buf)
    }
}
