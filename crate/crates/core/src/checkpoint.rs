//! Versioned JSON checkpoints.
//!
//! A checkpoint records the architecture header followed by every parameter
//! tensor: name, shape, and row-major values. Floats are written in their
//! shortest round-tripping form, so save → load → save is byte-identical.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{LstmDims, LstmStackParams};
use crate::network::Network;
use crate::nn::{ParamStore, Tensor};
use crate::rnn::{RnnDims, RnnParams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Rnn,
    Lstm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub arch: Arch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    pub hidden: usize,
    pub input_len: usize,
    pub compare_len: usize,
    pub params: Vec<TensorRecord>,
}

fn records(store: &ParamStore) -> Vec<TensorRecord> {
    store
        .iter()
        .map(|(name, t)| TensorRecord {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            values: t.data().to_vec(),
        })
        .collect()
}

impl Checkpoint {
    pub fn from_network(net: &Network) -> Self {
        match net {
            Network::Rnn(p) => {
                let d = p.dims();
                Checkpoint {
                    format_version: FORMAT_VERSION,
                    arch: Arch::Rnn,
                    depth: None,
                    hidden: d.hidden,
                    input_len: d.input_len,
                    compare_len: d.compare_len,
                    params: records(p.store()),
                }
            }
            Network::Lstm(p) => {
                let d = p.dims();
                Checkpoint {
                    format_version: FORMAT_VERSION,
                    arch: Arch::Lstm,
                    depth: Some(d.depth),
                    hidden: d.hidden,
                    input_len: d.input_len,
                    compare_len: d.compare_len,
                    params: records(p.store()),
                }
            }
        }
    }

    pub fn into_network(self) -> Result<Network> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let mut store = ParamStore::new();
        for rec in self.params {
            let tensor = Tensor::from_vec(&rec.shape, rec.values)
                .map_err(|e| Error::Checkpoint(format!("parameter `{}`: {e}", rec.name)))?;
            store
                .add(rec.name, tensor)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        match self.arch {
            Arch::Rnn => {
                if self.depth.is_some() {
                    return Err(Error::Checkpoint(
                        "`depth` is only valid for arch = \"lstm\"".into(),
                    ));
                }
                let dims = RnnDims {
                    hidden: self.hidden,
                    input_len: self.input_len,
                    compare_len: self.compare_len,
                };
                Ok(Network::Rnn(RnnParams::from_store(dims, store)?))
            }
            Arch::Lstm => {
                let depth = self
                    .depth
                    .ok_or_else(|| Error::Checkpoint("arch = \"lstm\" requires `depth`".into()))?;
                let dims = LstmDims {
                    depth,
                    hidden: self.hidden,
                    input_len: self.input_len,
                    compare_len: self.compare_len,
                };
                Ok(Network::Lstm(LstmStackParams::from_store(dims, store)?))
            }
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, Checkpoint::from_network(net).to_json()).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Network> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)?.into_network()
}
