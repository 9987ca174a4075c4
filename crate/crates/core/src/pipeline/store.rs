//! On-disk artifacts: a small binary array container, sha256 manifests and
//! grayscale PGM dumps.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, ArrayView2, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const ARRAY_MAGIC: &[u8; 8] = b"DTARRAY1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical JSON encoding of a config section.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_vec(value).map_err(|e| Error::Config(e.to_string()))?;
    Ok(sha256_hex(&json))
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::Missing(path.display().to_string())),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// `magic | u32 ndim | u64 dims… | f64 LE data`.
pub fn encode_array(a: &ArrayD<f64>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + 8 * a.ndim() + 8 * a.len());
    buf.extend_from_slice(ARRAY_MAGIC);
    buf.extend_from_slice(&(a.ndim() as u32).to_le_bytes());
    for &d in a.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in a.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_array(bytes: &[u8], path: &Path) -> Result<ArrayD<f64>> {
    let bad = |msg: &str| Error::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if bytes.len() < 12 || &bytes[..8] != ARRAY_MAGIC {
        return Err(bad("not an array file"));
    }
    let ndim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = 12 + 8 * ndim;
    let dims: Vec<usize> = bytes
        .get(12..body)
        .ok_or_else(|| bad("truncated shape"))?
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let n: usize = dims.iter().product();
    if bytes.len() != body + 8 * n {
        return Err(bad(&format!("payload holds {} bytes, shape {dims:?} needs {}", bytes.len() - body, 8 * n)));
    }
    let data = bytes[body..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| bad(&e.to_string()))
}

/// Per-stage record of every artifact and the configuration that made it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub stage: String,
    pub config_hash: String,
    /// The settings hashed into `config_hash`, for reading back.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub settings: serde_json::Value,
    /// Hash of the upstream stage's manifest file, if any.
    pub upstream: Option<String>,
    /// Relative path to sha256 of the file contents.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(stage: &str, config_hash: String, upstream: Option<String>) -> Self {
        Manifest {
            version: MANIFEST_VERSION,
            stage: stage.to_string(),
            config_hash,
            settings: serde_json::Value::Null,
            upstream,
            files: BTreeMap::new(),
        }
    }

    /// Manifest whose hash covers `settings`, which are stored alongside.
    pub fn with_settings(stage: &str, settings: serde_json::Value, upstream: Option<String>) -> Result<Self> {
        let mut m = Self::new(stage, config_hash(&settings)?, upstream);
        m.settings = settings;
        Ok(m)
    }

    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    /// Loads the manifest of `dir`, or `None` if there is none.
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = Self::path(dir);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = read_file(&path)?;
        let m: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format {
                path,
                msg: format!("unsupported manifest version {}", m.version),
            });
        }
        Ok(Some(m))
    }

    /// Loads a manifest that must exist and belong to `stage`.
    pub fn require(dir: &Path, stage: &str) -> Result<Self> {
        let m = Self::load(dir)?.ok_or_else(|| Error::Missing(Self::path(dir).display().to_string()))?;
        if m.stage != stage {
            return Err(Error::ManifestMismatch(format!(
                "{} belongs to stage '{}', expected '{stage}'",
                dir.display(),
                m.stage
            )));
        }
        Ok(m)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("manifest serialises");
        v.push(b'\n');
        v
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_atomic(&Self::path(dir), &self.to_bytes())
    }

    /// Hash identifying this manifest as an upstream dependency.
    pub fn digest(&self) -> String {
        sha256_hex(&self.to_bytes())
    }

    /// Writes `bytes` under `dir/rel` and records its hash.
    pub fn put(&mut self, dir: &Path, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&dir.join(rel), bytes)?;
        self.files.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Reads `dir/rel`, checking it against the recorded hash.
    pub fn get(&self, dir: &Path, rel: &str) -> Result<Vec<u8>> {
        let expected = self
            .files
            .get(rel)
            .ok_or_else(|| Error::Missing(format!("{rel} is not listed in {}", Self::path(dir).display())))?;
        let bytes = read_file(&dir.join(rel))?;
        let found = sha256_hex(&bytes);
        if &found != expected {
            return Err(Error::ManifestMismatch(format!(
                "{} has sha256 {found}, manifest records {expected}",
                dir.join(rel).display()
            )));
        }
        Ok(bytes)
    }

    /// State of a listed artifact on disk.
    pub fn check(&self, dir: &Path, rel: &str) -> Result<FileState> {
        let path = dir.join(rel);
        let Some(expected) = self.files.get(rel) else {
            return Ok(FileState::Unlisted);
        };
        if !path.exists() {
            return Ok(FileState::Absent);
        }
        let bytes = read_file(&path)?;
        Ok(if &sha256_hex(&bytes) == expected {
            FileState::Valid
        } else {
            FileState::Corrupt
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileState {
    Valid,
    Corrupt,
    Absent,
    Unlisted,
}

pub fn get_array(m: &Manifest, dir: &Path, rel: &str) -> Result<ArrayD<f64>> {
    let bytes = m.get(dir, rel)?;
    decode_array(&bytes, &dir.join(rel))
}

/// Binary 8-bit PGM spanning `lo..hi` (a flat image maps to mid-grey).
pub fn encode_pgm(img: ArrayView2<'_, f64>, lo: f64, hi: f64) -> Vec<u8> {
    let (h, w) = img.dim();
    let mut buf = format!("P5\n{w} {h}\n255\n").into_bytes();
    let span = hi - lo;
    buf.extend(img.iter().map(|&v| {
        if span > 0.0 {
            (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8
        } else {
            128
        }
    }));
    buf
}

/// `stem_min<lo>_max<hi>.pgm`, so the grey scale can be recovered.
pub fn pgm_name(stem: &str, lo: f64, hi: f64) -> String {
    format!("{stem}_min{lo:+.4e}_max{hi:+.4e}.pgm")
}
