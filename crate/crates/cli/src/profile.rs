//! Layered configuration: built-in desk profile, then the JSON file given
//! with `--config`, then command-line flags.

use std::path::Path;

use karmalevel::model::ModelConfig;
use karmalevel::synthgen::GenConfig;
use karmalevel::training::TrainConfig;
use karmalevel::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// K=8, C=32, D=64, learning rates {0.001, 0.003, 0.01}, at most 50 epochs.
pub fn desk_profile() -> RunConfig {
    RunConfig {
        model: ModelConfig::default(),
        train: TrainConfig {
            lr_grid: vec![0.001, 0.003, 0.01],
            max_epochs: 50,
            ..TrainConfig::default()
        },
    }
}

/// Objects merge key by key; anything else in `over` replaces `base`.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// `defaults` overlaid with the file at `path`, if any.
pub fn layered<T: Serialize + DeserializeOwned>(defaults: &T, path: Option<&Path>) -> Result<T> {
    let mut v = serde_json::to_value(defaults)?;
    if let Some(p) = path {
        merge(&mut v, read_json(p)?);
    }
    serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
}

pub fn run_config(path: Option<&Path>) -> Result<RunConfig> {
    layered(&desk_profile(), path)
}

pub fn gen_config(path: Option<&Path>) -> Result<GenConfig> {
    layered(&GenConfig::default(), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_is_deep() {
        let mut a = json!({"model": {"n_bases": 8, "context_width": 32}, "train": {"max_epochs": 50}});
        merge(&mut a, json!({"model": {"n_bases": 4}, "extra": 1}));
        assert_eq!(a, json!({"model": {"n_bases": 4, "context_width": 32}, "train": {"max_epochs": 50}, "extra": 1}));
    }

    #[test]
    fn desk_profile_round_trips() {
        let d = desk_profile();
        assert_eq!(layered(&d, None).unwrap(), d);
        assert_eq!(d.train.lr_grid, vec![0.001, 0.003, 0.01]);
        assert_eq!((d.model.n_bases, d.model.context_width, d.model.text_width), (8, 32, 64));
    }
}
