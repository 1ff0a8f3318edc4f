//! Level-j binary F1 scores, their macro average, and the baselines.
//!
//! For subtask j (1 ≤ j ≤ 7) a comment is positive when its level is at
//! least j. Precision, recall or F1 with a zero denominator count as 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetBundle;
use crate::error::Result;
use crate::model::{ContextEncoder, LabeledExample, LinearInputs, Model, ModelConfig, TextMode};
use crate::quantizer::{level_distribution, N_LEVELS};
use crate::training::{select_initial_lr, train, HeldOut, TrainConfig};

pub const SUBTASKS: std::ops::RangeInclusive<usize> = 1..=(N_LEVELS - 1);

pub fn binarize(levels: &[usize], j: usize) -> Vec<bool> {
    levels.iter().map(|&l| l >= j).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of true positives in the reference labels.
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Binary precision/recall/F1 of subtask `j`, on the 0–1 scale.
pub fn f1_at_level(labels: &[usize], predictions: &[usize], j: usize) -> BinaryScore {
    assert_eq!(labels.len(), predictions.len(), "length mismatch");
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&l, &p) in labels.iter().zip(predictions) {
        match (l >= j, p >= j) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
    BinaryScore {
        precision,
        recall,
        f1,
        support: tp + fn_,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEntry {
    pub j: usize,
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub support: usize,
}

/// Per-level scores and their macro average, all scaled by 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelF1Report {
    pub variant: String,
    pub levels: Vec<LevelEntry>,
    pub macro_f1: f64,
}

impl LevelF1Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// CSV mirror: one row per level plus a final `macro` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,j,p,r,f1,support\n");
        for l in &self.levels {
            writeln!(out, "{},{},{},{},{},{}", self.variant, l.j, l.p, l.r, l.f1, l.support).unwrap();
        }
        writeln!(out, "{},macro,,,{},", self.variant, self.macro_f1).unwrap();
        out
    }
}

pub fn macro_f1(labels: &[usize], predictions: &[usize], variant: &str) -> LevelF1Report {
    let levels: Vec<LevelEntry> = SUBTASKS
        .map(|j| {
            let s = f1_at_level(labels, predictions, j);
            LevelEntry {
                j,
                p: 100.0 * s.precision,
                r: 100.0 * s.recall,
                f1: 100.0 * s.f1,
                support: s.support,
            }
        })
        .collect();
    let macro_f1 = levels.iter().map(|l| l.f1).sum::<f64>() / levels.len() as f64;
    LevelF1Report {
        variant: variant.to_string(),
        levels,
        macro_f1,
    }
}

pub fn predict_all(model: &Model, examples: &[LabeledExample]) -> Vec<usize> {
    examples.iter().map(|e| model.predict_level(e)).collect()
}

pub fn labels(examples: &[LabeledExample]) -> Vec<usize> {
    examples.iter().map(|e| e.label).collect()
}

pub fn evaluate(model: &Model, examples: &[LabeledExample], variant: &str) -> LevelF1Report {
    macro_f1(&labels(examples), &predict_all(model, examples), variant)
}

/// Fraction of exactly predicted levels.
pub fn accuracy(model: &Model, examples: &[LabeledExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let hits = examples.iter().filter(|e| model.predict_level(e) == e.label).count();
    hits as f64 / examples.len() as f64
}

/// Most frequent training level (lowest on ties), predicted everywhere.
pub fn prior_baseline(train_set: &[LabeledExample], test: &[LabeledExample]) -> LevelF1Report {
    let counts = level_distribution(&labels(train_set));
    let mut mode = 0;
    for (l, &c) in counts.iter().enumerate() {
        if c > counts[mode] {
            mode = l;
        }
    }
    macro_f1(&labels(test), &vec![mode; test.len()], "prior")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    SubtreeSize,
    ConvStruct,
}

impl BaselineKind {
    pub fn inputs(self) -> LinearInputs {
        match self {
            BaselineKind::SubtreeSize => LinearInputs::SubtreeSize,
            BaselineKind::ConvStruct => LinearInputs::AllFeatures,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            BaselineKind::SubtreeSize => "subtree",
            BaselineKind::ConvStruct => "convstruct",
        }
    }
}

/// Selects the initial learning rate, trains, and returns the best-epoch
/// model. Vocabulary sizes are taken from the bundle.
pub fn fit_model(mut config: ModelConfig, train_cfg: &TrainConfig, data: &DatasetBundle) -> Result<Model> {
    config.vocab = data.vocab.sizes();
    let factory = || Model::new(config.clone());
    let lr = select_initial_lr(train_cfg, factory, &data.train, &data.validation)?;
    let outcome = train(train_cfg, factory()?, lr, &data.train, &mut HeldOut(&data.validation))?;
    Ok(outcome.model)
}

/// Softmax regression (with bias) on the subtree-size feature alone or on
/// all seven features, trained like the neural models and scored on test.
pub fn run_baseline(kind: BaselineKind, train_cfg: &TrainConfig, data: &DatasetBundle, seed: u64) -> Result<LevelF1Report> {
    let config = ModelConfig {
        context_encoder: ContextEncoder::Linear { inputs: kind.inputs() },
        text_mode: TextMode::None,
        seed,
        ..ModelConfig::default()
    };
    let model = fit_model(config, train_cfg, data)?;
    Ok(evaluate(&model, &data.test, kind.tag()))
}
