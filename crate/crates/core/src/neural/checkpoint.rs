//! JSON checkpoint container.
//!
//! Tensors are stored as base64 little-endian `f32` so the file round-trips
//! bit for bit. Layout:
//!
//! ```text
//! { "format": "ladder-checkpoint", "format_version": 1,
//!   "config": NetConfig,
//!   "tensors": [ { "name", "shape", "data" } ... ],
//!   "adam": { "step", "m": [tensor...], "v": [tensor...] } }
//! ```

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{AdamState, ConvParams, DenseParams, NetConfig, NetParams, Network};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "ladder-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    data: String,
}

impl StoredTensor {
    fn new(name: String, shape: Vec<usize>, values: &[f32]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            name,
            shape,
            data: B64.encode(bytes),
        }
    }

    fn values(&self) -> Result<Vec<f32>> {
        let bytes = B64
            .decode(&self.data)
            .map_err(|e| Error::Data(format!("tensor {}: {e}", self.name)))?;
        let n: usize = self.shape.iter().product();
        if bytes.len() != n * 4 {
            return Err(Error::Data(format!(
                "tensor {} holds {} bytes, shape {:?} needs {}",
                self.name,
                bytes.len(),
                self.shape,
                n * 4
            )));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredAdam {
    step: u64,
    m: Vec<StoredTensor>,
    v: Vec<StoredTensor>,
}

/// Serialized form of a [`Network<f32>`] including optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    format: String,
    pub format_version: u32,
    pub config: NetConfig,
    tensors: Vec<StoredTensor>,
    adam: StoredAdam,
}

impl Checkpoint {
    pub fn from_network(net: &Network<f32>) -> Self {
        let mut tensors = Vec::new();
        for (i, c) in net.params.convs.iter().enumerate() {
            let oc = c.out_channels;
            tensors.push(StoredTensor::new(
                format!("conv{i}.weight"),
                vec![oc, c.in_channels, 3, 3],
                &c.weight,
            ));
            for (n, v) in [
                ("bias", &c.bias),
                ("gamma", &c.gamma),
                ("beta", &c.beta),
                ("running_mean", &c.running_mean),
                ("running_var", &c.running_var),
            ] {
                tensors.push(StoredTensor::new(format!("conv{i}.{n}"), vec![oc], v));
            }
        }
        for (i, f) in net.params.fcs.iter().enumerate() {
            tensors.push(StoredTensor::new(
                format!("fc{i}.weight"),
                vec![f.out_features, f.in_features],
                &f.weight,
            ));
            tensors.push(StoredTensor::new(format!("fc{i}.bias"), vec![f.out_features], &f.bias));
        }
        let names = net.params.trainable_names();
        let shapes: Vec<usize> = net.params.trainable().iter().map(|t| t.len()).collect();
        let store = |vs: &Vec<Vec<f32>>, tag: &str| -> Vec<StoredTensor> {
            vs.iter()
                .zip(&names)
                .zip(&shapes)
                .map(|((v, n), &len)| StoredTensor::new(format!("{tag}.{n}"), vec![len], v))
                .collect()
        };
        Self {
            format: FORMAT_TAG.into(),
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: net.config.clone(),
            adam: StoredAdam {
                step: net.params.adam.step,
                m: store(&net.params.adam.m, "m"),
                v: store(&net.params.adam.v, "v"),
            },
            tensors,
        }
    }

    pub fn into_network(self) -> Result<Network<f32>> {
        if self.format != FORMAT_TAG {
            return Err(Error::Data(format!("not a checkpoint (format '{}')", self.format)));
        }
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                self.format_version
            )));
        }
        let template = Network::<f32>::zeros(self.config.clone())?;
        let mut tensors = self.tensors.iter();
        let mut next = |expect: &str, len: usize| -> Result<Vec<f32>> {
            let t = tensors
                .next()
                .ok_or_else(|| Error::Data(format!("checkpoint is missing tensor {expect}")))?;
            if t.name != expect {
                return Err(Error::Data(format!("expected tensor {expect}, found {}", t.name)));
            }
            let v = t.values()?;
            if v.len() != len {
                return Err(Error::Data(format!(
                    "tensor {expect} has {} values, expected {len}",
                    v.len()
                )));
            }
            Ok(v)
        };
        let mut convs = Vec::new();
        for (i, c) in template.params.convs.iter().enumerate() {
            let oc = c.out_channels;
            convs.push(ConvParams {
                in_channels: c.in_channels,
                out_channels: oc,
                weight: next(&format!("conv{i}.weight"), c.weight.len())?,
                bias: next(&format!("conv{i}.bias"), oc)?,
                gamma: next(&format!("conv{i}.gamma"), oc)?,
                beta: next(&format!("conv{i}.beta"), oc)?,
                running_mean: next(&format!("conv{i}.running_mean"), oc)?,
                running_var: next(&format!("conv{i}.running_var"), oc)?,
            });
        }
        let mut fcs = Vec::new();
        for (i, f) in template.params.fcs.iter().enumerate() {
            fcs.push(DenseParams {
                in_features: f.in_features,
                out_features: f.out_features,
                weight: next(&format!("fc{i}.weight"), f.weight.len())?,
                bias: next(&format!("fc{i}.bias"), f.out_features)?,
            });
        }
        let load = |vs: &[StoredTensor]| -> Result<Vec<Vec<f32>>> { vs.iter().map(|t| t.values()).collect() };
        let params = NetParams {
            convs,
            fcs,
            adam: AdamState {
                step: self.adam.step,
                m: load(&self.adam.m)?,
                v: load(&self.adam.v)?,
            },
        };
        Network::from_parts(self.config, params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut b = serde_json::to_vec_pretty(self)?;
        b.push(b'\n');
        Ok(b)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

pub fn save_checkpoint(net: &Network<f32>, path: &Path) -> Result<()> {
    let bytes = Checkpoint::from_network(net).to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Network<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)?.into_network()
}
