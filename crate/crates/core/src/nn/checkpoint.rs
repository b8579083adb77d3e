//! Versioned JSON checkpoint container.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::net::{NetConfig, NetParams};
use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::report::{read_json, write_json};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedLineage {
    pub root_seed: u64,
    /// Stages that consumed derived streams, in order (e.g. `["init", "train"]`).
    pub stages: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub net: NetConfig,
    pub params: Vec<NamedTensor>,
    pub buffers: Vec<NamedTensor>,
    pub optimizer: Option<AdamState>,
    pub seeds: SeedLineage,
}

impl Checkpoint {
    pub fn capture(params: &NetParams, optimizer: Option<AdamState>, seeds: SeedLineage) -> Self {
        let mut tensors = Vec::new();
        params.visit(&mut |n, v| tensors.push(NamedTensor { name: n.into(), values: v.to_vec() }));
        let mut buffers = Vec::new();
        params.visit_buffers(&mut |n, v| buffers.push(NamedTensor { name: n.into(), values: v.to_vec() }));
        Self { version: CHECKPOINT_VERSION, net: params.config.clone(), params: tensors, buffers, optimizer, seeds }
    }

    /// Rebuild the parameters; shapes are checked against the stored config.
    pub fn restore(&self) -> Result<NetParams> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {}", self.version)));
        }
        let mut p = NetParams::init(&self.net, 0)?;
        fill(&self.params, |f| p.visit_mut(f))?;
        fill(&self.buffers, |f| p.visit_buffers_mut(f))?;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }
}

fn fill(src: &[NamedTensor], visit: impl FnOnce(&mut dyn FnMut(&str, &mut [f64]))) -> Result<()> {
    let mut i = 0;
    let mut err = None;
    visit(&mut |name, dst| {
        if err.is_some() {
            return;
        }
        match src.get(i) {
            Some(t) if t.name == name && t.values.len() == dst.len() => dst.copy_from_slice(&t.values),
            Some(t) => err = Some(format!("tensor {i}: expected {name}[{}], found {}[{}]", dst.len(), t.name, t.values.len())),
            None => err = Some(format!("missing tensor {name}")),
        }
        i += 1;
    });
    if let Some(e) = err {
        return Err(Error::Data(format!("checkpoint does not match network: {e}")));
    }
    if i != src.len() {
        return Err(Error::Data(format!("checkpoint has {} tensors, network has {i}", src.len())));
    }
    Ok(())
}
