//! Model checkpoints: the magic bytes `KLCK`, a little-endian u64 header
//! length, a JSON header, then the raw parameter payload (name-ordered,
//! little-endian, width set by the model's precision).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Vocabularies;
use crate::error::{Error, Result};
use crate::features::Normalizer;
use crate::model::{Model, ModelConfig};
use crate::numerics::{ParamEntry, ParamStore, Precision};
use crate::quantizer::QuantizerSet;

pub const MAGIC: &[u8; 4] = b"KLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    precision: Precision,
    params: Vec<ParamEntry>,
    payload_bytes: usize,
    vocab: Option<Vocabularies>,
    normalizer: Option<Normalizer>,
    quantizers: Option<QuantizerSet>,
}

/// A model plus the preprocessing state needed to apply it to new threads.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Option<Vocabularies>,
    pub normalizer: Option<Normalizer>,
    pub quantizers: Option<QuantizerSet>,
}

impl Checkpoint {
    pub fn bare(model: Model) -> Self {
        Checkpoint {
            model,
            vocab: None,
            normalizer: None,
            quantizers: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let precision = self.model.config.precision;
        let (params, payload) = self.model.params.to_payload(precision);
        let header = Header {
            version: CHECKPOINT_VERSION,
            model: self.model.config.clone(),
            precision,
            params,
            payload_bytes: payload.len(),
            vocab: self.vocab.clone(),
            normalizer: self.normalizer.clone(),
            quantizers: self.quantizers.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let json = bytes.get(12..12usize.saturating_add(len)).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json)?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", header.version)));
        }
        let payload = &bytes[12 + len..];
        if payload.len() != header.payload_bytes {
            return Err(Error::Checkpoint(format!(
                "payload holds {} bytes, header declares {}",
                payload.len(),
                header.payload_bytes
            )));
        }
        let params = ParamStore::from_payload(&header.params, payload, header.precision)?;
        let mut config = header.model;
        config.precision = header.precision;
        let model = Model::from_params(config, params)?;
        let mut vocab = header.vocab;
        if let Some(v) = vocab.as_mut() {
            v.reindex();
        }
        Ok(Checkpoint {
            model,
            vocab,
            normalizer: header.normalizer,
            quantizers: header.quantizers,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
