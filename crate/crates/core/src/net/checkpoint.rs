//! Versioned binary checkpoints: magic, JSON header, little-endian `f32`
//! payloads for the parameters and, optionally, the Adam moments.

use std::fs;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::model::{NetSpec, Network, Params};
use super::tensor::Tensor;
use super::train::{AdamState, TrainConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DTNETCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    spec: NetSpec,
    dims: (usize, usize, usize),
    train: TrainConfig,
    epoch: usize,
    lr: f64,
    adam_step: Option<u64>,
    tensors: Vec<(String, Vec<usize>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub train: TrainConfig,
    pub epoch: usize,
    pub lr: f64,
    pub params: Params<f32>,
    pub optimizer: Option<AdamState>,
}

fn put(buf: &mut Vec<u8>, data: &[f32]) {
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            spec: self.network.spec.clone(),
            dims: self.network.dims,
            train: self.train.clone(),
            epoch: self.epoch,
            lr: self.lr,
            adam_step: self.optimizer.as_ref().map(|o| o.step),
            tensors: self
                .params
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.shape().to_vec()))
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Config(e.to_string()))?;
        let mut buf = Vec::with_capacity(16 + json.len() + 12 * self.params.count());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&json);
        for t in self.params.tensors.values() {
            put(&mut buf, t.data());
        }
        if let Some(o) = &self.optimizer {
            for m in o.m.iter().chain(&o.v) {
                put(&mut buf, m);
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::Format {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let json = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| bad(&e.to_string()))?;
        let mut pos = 16 + hlen;
        let mut take = |n: usize| -> Result<Vec<f32>> {
            let raw = bytes.get(pos..pos + 4 * n).ok_or_else(|| bad("truncated payload"))?;
            pos += 4 * n;
            Ok(raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let mut tensors = IndexMap::new();
        for (name, shape) in &header.tensors {
            let data = take(shape.iter().product())?;
            tensors.insert(name.clone(), Tensor::from_vec(shape, data)?);
        }
        let params = Params { tensors };
        let optimizer = match header.adam_step {
            Some(step) => {
                let lens: Vec<usize> = params.tensors.values().map(Tensor::len).collect();
                let m = lens.iter().map(|&n| take(n)).collect::<Result<Vec<_>>>()?;
                let v = lens.iter().map(|&n| take(n)).collect::<Result<Vec<_>>>()?;
                Some(AdamState { step, m, v })
            }
            None => None,
        };
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let network = Network::new(header.spec, header.dims)?;
        network
            .check_params(&params)
            .map_err(|e| bad(&format!("parameters do not match the network: {e}")))?;
        Ok(Checkpoint {
            network,
            train: header.train,
            epoch: header.epoch,
            lr: header.lr,
            params,
            optimizer,
        })
    }

    /// Writes through a temporary file so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
