use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn bytes(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// Directory record for one parameter in the binary payload. `offset` is
/// counted in values, not bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
}

/// Named parameters with a gradient accumulator of the same shape each.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    pub values: Vec<Tensor>,
    pub grads: Vec<Tensor>,
    lookup: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.grads.push(Tensor::zeros(value.dims.clone()));
        self.values.push(value);
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Ids sorted by parameter name.
    pub fn ids_by_name(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.ids().collect();
        ids.sort_by(|a, b| self.names[a.0].cmp(&self.names[b.0]));
        ids
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn census(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Rounds every value to the nearest 32-bit float.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.values {
            for v in &mut t.data {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Name-ordered flat little-endian payload plus its directory.
    pub fn to_payload(&self, precision: Precision) -> (Vec<ParamEntry>, Vec<u8>) {
        let mut entries = Vec::with_capacity(self.len());
        let mut bytes = Vec::with_capacity(self.census() * precision.bytes());
        let mut offset = 0;
        for id in self.ids_by_name() {
            let t = &self.values[id.0];
            entries.push(ParamEntry {
                name: self.names[id.0].clone(),
                dims: t.dims.clone(),
                offset,
            });
            offset += t.len();
            for &v in &t.data {
                match precision {
                    Precision::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
                    Precision::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
                }
            }
        }
        (entries, bytes)
    }

    pub fn from_payload(entries: &[ParamEntry], bytes: &[u8], precision: Precision) -> Result<Self> {
        let width = precision.bytes();
        let mut store = ParamStore::new();
        for e in entries {
            let n: usize = e.dims.iter().product();
            let start = e.offset * width;
            let end = start + n * width;
            if n == 0 || end > bytes.len() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} does not fit the payload",
                    e.name
                )));
            }
            let data = bytes[start..end]
                .chunks_exact(width)
                .map(|c| match precision {
                    Precision::F64 => f64::from_le_bytes(c.try_into().unwrap()),
                    Precision::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
                })
                .collect();
            if store.id(&e.name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate parameter {}", e.name)));
            }
            store.insert(e.name.clone(), Tensor::from_vec(e.dims.clone(), data));
        }
        Ok(store)
    }
}
