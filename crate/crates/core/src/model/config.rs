use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{N_FEATURES, SUBTREE_SIZE};
use crate::numerics::Precision;
use crate::quantizer::N_LEVELS;

/// How the submission context is turned into the vector fed to the output
/// layer (and to the gate).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ContextEncoder {
    /// Attention over K learned basis vectors.
    LatentModes,
    /// `layers` stacked leaky-rectified layers.
    Feedforward { layers: usize },
    /// Multinomial logistic regression on raw normalized features.
    Linear { inputs: LinearInputs },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearInputs {
    SubtreeSize,
    AllFeatures,
}

impl LinearInputs {
    pub fn indices(self) -> &'static [usize] {
        const ALL: [usize; N_FEATURES] = [0, 1, 2, 3, 4, 5, 6];
        match self {
            LinearInputs::SubtreeSize => &[SUBTREE_SIZE],
            LinearInputs::AllFeatures => &ALL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextMode {
    #[default]
    None,
    Ungated,
    Gated,
}

impl FromStr for TextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(TextMode::None),
            "ungated" => Ok(TextMode::Ungated),
            "gated" => Ok(TextMode::Gated),
            other => Err(Error::Config(format!("unknown text mode {other:?}"))),
        }
    }
}

impl fmt::Display for TextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TextMode::None => "none",
            TextMode::Ungated => "ungated",
            TextMode::Gated => "gated",
        })
    }
}

/// Named model variants of the comparison tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Subtree,
    Convstruct,
    Feedfwd1,
    Feedfwd2,
    Feedfwd3,
    Latent,
}

impl Variant {
    pub fn context_encoder(self) -> ContextEncoder {
        match self {
            Variant::Subtree => ContextEncoder::Linear {
                inputs: LinearInputs::SubtreeSize,
            },
            Variant::Convstruct => ContextEncoder::Linear {
                inputs: LinearInputs::AllFeatures,
            },
            Variant::Feedfwd1 => ContextEncoder::Feedforward { layers: 1 },
            Variant::Feedfwd2 => ContextEncoder::Feedforward { layers: 2 },
            Variant::Feedfwd3 => ContextEncoder::Feedforward { layers: 3 },
            Variant::Latent => ContextEncoder::LatentModes,
        }
    }

    /// Inverse of [`Variant::context_encoder`]; deeper feedforward stacks
    /// have no name.
    pub fn of_encoder(encoder: ContextEncoder) -> Option<Variant> {
        Some(match encoder {
            ContextEncoder::Linear {
                inputs: LinearInputs::SubtreeSize,
            } => Variant::Subtree,
            ContextEncoder::Linear {
                inputs: LinearInputs::AllFeatures,
            } => Variant::Convstruct,
            ContextEncoder::Feedforward { layers: 1 } => Variant::Feedfwd1,
            ContextEncoder::Feedforward { layers: 2 } => Variant::Feedfwd2,
            ContextEncoder::Feedforward { layers: 3 } => Variant::Feedfwd3,
            ContextEncoder::Feedforward { .. } => return None,
            ContextEncoder::LatentModes => Variant::Latent,
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "subtree" => Variant::Subtree,
            "convstruct" => Variant::Convstruct,
            "feedfwd1" => Variant::Feedfwd1,
            "feedfwd2" => Variant::Feedfwd2,
            "feedfwd3" => Variant::Feedfwd3,
            "latent" => Variant::Latent,
            other => return Err(Error::Config(format!("unknown variant {other:?}"))),
        })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Subtree => "subtree",
            Variant::Convstruct => "convstruct",
            Variant::Feedfwd1 => "feedfwd1",
            Variant::Feedfwd2 => "feedfwd2",
            Variant::Feedfwd3 => "feedfwd3",
            Variant::Latent => "latent",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VocabSizes {
    pub word: usize,
    pub pos: usize,
    pub lemma: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of latent bases (K).
    pub n_bases: usize,
    /// Context embedding width (C).
    pub context_width: usize,
    /// Text embedding width (D); each GRU direction uses D/2.
    pub text_width: usize,
    pub n_levels: usize,
    pub context_encoder: ContextEncoder,
    pub text_mode: TextMode,
    pub vocab: VocabSizes,
    pub precision: Precision,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_bases: 8,
            context_width: 32,
            text_width: 64,
            n_levels: N_LEVELS,
            context_encoder: ContextEncoder::LatentModes,
            text_mode: TextMode::Gated,
            vocab: VocabSizes::default(),
            precision: Precision::F64,
            init_std: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(mut self, variant: Variant, text: TextMode) -> Self {
        self.context_encoder = variant.context_encoder();
        self.text_mode = match self.context_encoder {
            ContextEncoder::Linear { .. } => TextMode::None,
            _ => text,
        };
        self
    }

    pub fn uses_text(&self) -> bool {
        self.text_mode != TextMode::None
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_bases == 0 {
            return bad("n_bases must be at least 1");
        }
        if self.context_width == 0 {
            return bad("context_width must be at least 1");
        }
        if self.n_levels < 2 {
            return bad("n_levels must be at least 2");
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return bad("init_std must be positive");
        }
        match self.context_encoder {
            ContextEncoder::Feedforward { layers: 0 } => {
                return bad("feedforward encoder needs at least one layer")
            }
            ContextEncoder::Linear { .. } if self.uses_text() => {
                return bad("linear baselines do not take text")
            }
            _ => {}
        }
        if self.uses_text() {
            if self.text_width == 0 || !self.text_width.is_multiple_of(2) {
                return bad("text_width must be a positive even number");
            }
            if self.vocab.word == 0 || self.vocab.pos == 0 || self.vocab.lemma == 0 {
                return bad("vocabulary sizes must be positive");
            }
        }
        Ok(())
    }
}
