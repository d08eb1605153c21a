//! Directory container: `manifest.json` plus one raw little-endian array file
//! per field. Shapes and dtypes live in the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    U8,
    U32,
}

impl DType {
    fn size(self) -> usize {
        match self {
            DType::F32 | DType::U32 => 4,
            DType::U8 => 1,
        }
    }

    fn extension(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::U8 => "u8",
            DType::U32 => "u32",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub kind: String,
    pub arrays: BTreeMap<String, ArrayEntry>,
    pub meta: serde_json::Value,
}

/// Rounds to the nearest f32 so stored values reload unchanged.
pub fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

pub struct ArrayWriter {
    dir: PathBuf,
    arrays: BTreeMap<String, ArrayEntry>,
}

impl ArrayWriter {
    pub fn create(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            arrays: BTreeMap::new(),
        })
    }

    fn put(&mut self, name: &str, dtype: DType, shape: &[usize], bytes: Vec<u8>) -> Result<()> {
        let expected: usize = shape.iter().product::<usize>() * dtype.size();
        if bytes.len() != expected {
            return Err(Error::Shape(format!(
                "array {name}: shape {shape:?} needs {expected} bytes, got {}",
                bytes.len()
            )));
        }
        if !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
            return Err(Error::Config(format!("invalid array name {name:?}")));
        }
        let file = format!("{name}.{}", dtype.extension());
        let path = self.dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.arrays.insert(
            name.to_string(),
            ArrayEntry {
                dtype,
                shape: shape.to_vec(),
                file,
            },
        );
        Ok(())
    }

    /// Stores `values` as f32; callers wanting exact round-trips pre-round with [`round_f32`].
    pub fn f32(&mut self, name: &str, shape: &[usize], values: &[f64]) -> Result<()> {
        let bytes = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        self.put(name, DType::F32, shape, bytes)
    }

    pub fn f32_raw(&mut self, name: &str, shape: &[usize], values: &[f32]) -> Result<()> {
        let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.put(name, DType::F32, shape, bytes)
    }

    pub fn u8(&mut self, name: &str, shape: &[usize], values: &[u8]) -> Result<()> {
        self.put(name, DType::U8, shape, values.to_vec())
    }

    pub fn u32(&mut self, name: &str, shape: &[usize], values: &[u32]) -> Result<()> {
        let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.put(name, DType::U32, shape, bytes)
    }

    pub fn finish(self, kind: &str, meta: serde_json::Value) -> Result<Manifest> {
        let manifest = Manifest {
            schema_version: 1,
            kind: kind.to_string(),
            arrays: self.arrays,
            meta,
        };
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

pub struct ArrayReader {
    dir: PathBuf,
    pub manifest: Manifest,
}

impl ArrayReader {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, format!("bad manifest: {e}")))?;
        if manifest.schema_version != 1 {
            return Err(Error::format(&path, format!("unsupported schema {}", manifest.schema_version)));
        }
        Ok(Self { dir, manifest })
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.manifest.kind != kind {
            return Err(Error::format(
                self.dir.join(MANIFEST_FILE),
                format!("expected a {kind} container, found {}", self.manifest.kind),
            ));
        }
        Ok(())
    }

    pub fn meta(&self) -> &serde_json::Value {
        &self.manifest.meta
    }

    pub fn has(&self, name: &str) -> bool {
        self.manifest.arrays.contains_key(name)
    }

    pub fn shape(&self, name: &str) -> Result<&[usize]> {
        Ok(&self.entry(name)?.shape)
    }

    fn entry(&self, name: &str) -> Result<&ArrayEntry> {
        self.manifest
            .arrays
            .get(name)
            .ok_or_else(|| Error::format(self.dir.join(MANIFEST_FILE), format!("missing array {name}")))
    }

    fn bytes(&self, name: &str, dtype: DType) -> Result<(Vec<usize>, Vec<u8>)> {
        let entry = self.entry(name)?;
        let path = self.dir.join(&entry.file);
        if entry.dtype != dtype {
            return Err(Error::format(&path, format!("expected {dtype:?}, found {:?}", entry.dtype)));
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = entry.shape.iter().product::<usize>() * dtype.size();
        if bytes.len() != expected {
            return Err(Error::format(
                &path,
                format!("expected {expected} bytes for shape {:?}, found {}", entry.shape, bytes.len()),
            ));
        }
        Ok((entry.shape.clone(), bytes))
    }

    pub fn f32(&self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let (shape, bytes) = self.bytes(name, DType::F32)?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok((shape, values))
    }

    pub fn f32_raw(&self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let (shape, bytes) = self.bytes(name, DType::F32)?;
        let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((shape, values))
    }

    pub fn u8(&self, name: &str) -> Result<(Vec<usize>, Vec<u8>)> {
        self.bytes(name, DType::U8)
    }

    pub fn u32(&self, name: &str) -> Result<(Vec<usize>, Vec<u32>)> {
        let (shape, bytes) = self.bytes(name, DType::U32)?;
        let values = bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((shape, values))
    }
}

/// SHA-256 over every regular file in `dir`, in name order, hashing
/// `name \0 length \0 contents` per file. Subdirectories are included recursively.
pub fn directory_digest(dir: impl AsRef<Path>) -> Result<String> {
    let mut hasher = Sha256::new();
    digest_into(dir.as_ref(), Path::new(""), &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

fn digest_into(root: &Path, rel: &Path, hasher: &mut Sha256) -> Result<()> {
    let dir = root.join(rel);
    let mut names: Vec<_> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .map(|e| e.map(|e| e.file_name()).map_err(|err| Error::io(&dir, err)))
        .collect::<Result<_>>()?;
    names.sort();
    for name in names {
        let rel_path = rel.join(&name);
        let path = root.join(&rel_path);
        if path.is_dir() {
            digest_into(root, &rel_path, hasher)?;
        } else {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            hasher.update(rel_path.to_string_lossy().as_bytes());
            hasher.update([0]);
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update([0]);
            hasher.update(&bytes);
        }
    }
    Ok(())
}

pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
