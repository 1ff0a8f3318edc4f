//! Mini-batch Adam training with validation-driven learning-rate halving.
//!
//! After every epoch the mean validation log-likelihood is compared with the
//! previous epoch's. The first decrease halves the learning rate; the second
//! ends training. The parameters of the best validation epoch are returned.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{nll, LabeledExample, Model};
use crate::numerics::{AdamConfig, AdamState, ParamStore, Precision};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Candidate initial learning rates, ascending.
    pub lr_grid: Vec<f64>,
    pub max_epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

/// 0.0010 to 0.0100 in steps of 0.0005.
pub fn default_lr_grid() -> Vec<f64> {
    (0..19).map(|i| (10 + 5 * i) as f64 / 10_000.0).collect()
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            lr_grid: default_lr_grid(),
            max_epochs: 100,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.lr_grid.is_empty() {
            return Err(Error::Config("lr_grid must not be empty".into()));
        }
        if self.lr_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("lr_grid must be strictly ascending".into()));
        }
        if self.lr_grid.iter().any(|&lr| !(lr.is_finite() && lr > 0.0)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleAction {
    Continue,
    Halve,
    Stop,
}

/// Halve-once-then-stop rule over successive validation log-likelihoods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr: f64,
    pub previous: Option<f64>,
    pub decreases: u8,
}

impl LrSchedule {
    pub fn new(lr: f64) -> Self {
        LrSchedule {
            lr,
            previous: None,
            decreases: 0,
        }
    }

    pub fn observe(&mut self, val_ll: f64) -> ScheduleAction {
        let decreased = self.previous.is_some_and(|p| val_ll < p);
        self.previous = Some(val_ll);
        if !decreased {
            return ScheduleAction::Continue;
        }
        self.decreases += 1;
        if self.decreases >= 2 {
            ScheduleAction::Stop
        } else {
            self.lr /= 2.0;
            ScheduleAction::Halve
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub val_ll: f64,
    pub decreases: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub lr: f64,
    pub epoch: usize,
    pub val_history: Vec<f64>,
    pub decreases: u8,
    pub best_epoch: usize,
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochRecord>,
    pub state: TrainState,
}

pub fn write_log(mut w: impl Write, log: &[EpochRecord]) -> std::io::Result<()> {
    for r in log {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Source of the per-epoch validation score.
pub trait Validator {
    fn validation_ll(&mut self, model: &Model) -> f64;
}

/// Mean log-likelihood of the true labels over a fixed example set.
pub struct HeldOut<'a>(pub &'a [LabeledExample]);

impl Validator for HeldOut<'_> {
    fn validation_ll(&mut self, model: &Model) -> f64 {
        mean_log_likelihood(model, self.0)
    }
}

pub fn mean_log_likelihood(model: &Model, examples: &[LabeledExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let total: f64 = examples
        .iter()
        .map(|ex| -nll(&model.forward(&model.params, ex).logits, ex.label))
        .sum();
    total / examples.len() as f64
}

/// One pass over `train` in shuffled mini-batches; returns the mean batch
/// loss. Every example is visited exactly once, the last batch may be short.
pub fn run_epoch(
    model: &mut Model,
    adam: &mut AdamState,
    train: &[LabeledExample],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    let mut batches = 0usize;
    for chunk in order.chunks(batch_size) {
        let batch: Vec<&LabeledExample> = chunk.iter().map(|&i| &train[i]).collect();
        let loss = model.loss_and_backward(&batch);
        if !loss.is_finite() {
            model.params.zero_grads();
            return Err(Error::Diverged(format!(
                "non-finite training loss at batch {batches} (lr {})",
                adam.lr
            )));
        }
        adam.step(&mut model.params);
        if model.config.precision == Precision::F32 {
            model.params.round_to_f32();
        }
        total += loss;
        batches += 1;
    }
    Ok(if batches == 0 { 0.0 } else { total / batches as f64 })
}

/// Trains from `lr` until the second validation decrease or the epoch cap.
pub fn train(
    config: &TrainConfig,
    mut model: Model,
    lr: f64,
    train_set: &[LabeledExample],
    validator: &mut dyn Validator,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(&model.params, lr, config.adam);
    let mut schedule = LrSchedule::new(lr);
    let mut log = Vec::new();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;

    for epoch in 1..=config.max_epochs {
        let epoch_lr = schedule.lr;
        adam.lr = epoch_lr;
        let train_loss = run_epoch(&mut model, &mut adam, train_set, config.batch_size, &mut rng)?;
        let val_ll = validator.validation_ll(&model);
        if !val_ll.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite validation log-likelihood after epoch {epoch}"
            )));
        }
        history.push(val_ll);
        if best.as_ref().is_none_or(|(b, _, _)| val_ll > *b) {
            best = Some((val_ll, epoch, model.params.clone()));
        }
        let action = schedule.observe(val_ll);
        log.push(EpochRecord {
            epoch,
            lr: epoch_lr,
            train_loss,
            val_ll,
            decreases: schedule.decreases,
        });
        if action == ScheduleAction::Stop {
            break;
        }
    }

    let (_, best_epoch, params) = best.expect("at least one epoch");
    let mut params = params;
    params.zero_grads();
    model.params = params;
    Ok(TrainOutcome {
        model,
        state: TrainState {
            lr: schedule.lr,
            epoch: log.len(),
            val_history: history,
            decreases: schedule.decreases,
            best_epoch,
        },
        log,
    })
}

/// Trains one fresh model per grid value for a single epoch and returns the
/// value with the highest validation log-likelihood (smaller on ties). Runs
/// that diverge are disqualified.
pub fn select_initial_lr(
    config: &TrainConfig,
    factory: impl Fn() -> Result<Model>,
    train_set: &[LabeledExample],
    val_set: &[LabeledExample],
) -> Result<f64> {
    config.validate()?;
    if config.lr_grid.len() == 1 {
        return Ok(config.lr_grid[0]);
    }
    let mut best: Option<(f64, f64)> = None;
    for &lr in &config.lr_grid {
        let mut model = factory()?;
        let mut adam = AdamState::new(&model.params, lr, config.adam);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        if run_epoch(&mut model, &mut adam, train_set, config.batch_size, &mut rng).is_err() {
            continue;
        }
        let ll = mean_log_likelihood(&model, val_set);
        if !ll.is_finite() {
            continue;
        }
        if best.is_none_or(|(b, _)| ll > b) {
            best = Some((ll, lr));
        }
    }
    best.map(|(_, lr)| lr)
        .ok_or_else(|| Error::Diverged("every learning rate in the grid diverged".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{micro_config, micro_examples, MICRO_VOCAB};
    use crate::model::{ContextEncoder, TextMode};

    #[test]
    fn default_grid() {
        let g = default_lr_grid();
        assert_eq!(g.len(), 19);
        assert_eq!(g[0], 0.001);
        assert_eq!(g[18], 0.01);
        assert!((g[1] - 0.0015).abs() < 1e-18);
    }

    #[test]
    fn schedule_trace() {
        let mut s = LrSchedule::new(0.008);
        let actions: Vec<_> = [-2.0, -1.5, -1.6, -1.4, -1.5]
            .into_iter()
            .map(|v| s.observe(v))
            .collect();
        use ScheduleAction::*;
        assert_eq!(actions, vec![Continue, Continue, Halve, Continue, Stop]);
        assert_eq!(s.lr, 0.004);
    }

    #[test]
    fn schedule_never_fires_on_improvement() {
        let mut s = LrSchedule::new(1.0);
        for i in 0..50 {
            assert_eq!(s.observe(-10.0 + i as f64 * 0.1), ScheduleAction::Continue);
        }
        assert_eq!(s.decreases, 0);
    }

    struct Scripted(Vec<f64>, usize);

    impl Validator for Scripted {
        fn validation_ll(&mut self, _: &Model) -> f64 {
            let v = self.0[self.1.min(self.0.len() - 1)];
            self.1 += 1;
            v
        }
    }

    fn tiny() -> (Model, Vec<LabeledExample>) {
        let m = Model::new(micro_config(ContextEncoder::LatentModes, TextMode::None, 1)).unwrap();
        (m, micro_examples(10, MICRO_VOCAB, 2))
    }

    #[test]
    fn improving_validation_runs_to_cap() {
        let (m, data) = tiny();
        let cfg = TrainConfig {
            max_epochs: 6,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let mut v = Scripted((0..10).map(|i| -3.0 + 0.1 * i as f64).collect(), 0);
        let out = train(&cfg, m, 0.01, &data, &mut v).unwrap();
        assert_eq!(out.log.len(), 6);
        assert!(out.log.iter().all(|r| r.decreases == 0 && r.lr == 0.01));
        assert_eq!(out.state.best_epoch, 6);
    }

    #[test]
    fn scripted_sequence_halves_then_stops() {
        let (m, data) = tiny();
        let cfg = TrainConfig {
            batch_size: 4,
            ..TrainConfig::default()
        };
        let mut v = Scripted(vec![-2.0, -1.5, -1.6, -1.4, -1.5, -1.0], 0);
        let out = train(&cfg, m, 0.01, &data, &mut v).unwrap();
        let lrs: Vec<f64> = out.log.iter().map(|r| r.lr).collect();
        assert_eq!(lrs, vec![0.01, 0.01, 0.01, 0.005, 0.005]);
        assert_eq!(out.state.best_epoch, 4);
        assert_eq!(out.state.decreases, 2);
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = TrainConfig {
            batch_size: 3,
            max_epochs: 3,
            seed: 5,
            ..TrainConfig::default()
        };
        let run = || {
            let (m, data) = tiny();
            let out = train(&cfg, m, 0.01, &data, &mut HeldOut(&data)).unwrap();
            out.model.params.to_payload(Precision::F64).1
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn lr_selection() {
        let (_, data) = tiny();
        let factory = || Model::new(micro_config(ContextEncoder::LatentModes, TextMode::None, 1));
        let one = TrainConfig {
            lr_grid: vec![0.123],
            ..TrainConfig::default()
        };
        assert_eq!(select_initial_lr(&one, factory, &data, &data).unwrap(), 0.123);

        let with_divergent = TrainConfig {
            lr_grid: vec![0.003, 1e300],
            batch_size: 2,
            ..TrainConfig::default()
        };
        assert_eq!(
            select_initial_lr(&with_divergent, factory, &data, &data).unwrap(),
            0.003
        );

        let all_bad = TrainConfig {
            lr_grid: vec![1e299, 1e300],
            batch_size: 2,
            ..TrainConfig::default()
        };
        assert!(select_initial_lr(&all_bad, factory, &data, &data).is_err());

        let grid = TrainConfig {
            lr_grid: vec![0.001, 0.005, 0.02],
            batch_size: 2,
            ..TrainConfig::default()
        };
        let a = select_initial_lr(&grid, factory, &data, &data).unwrap();
        let b = select_initial_lr(&grid, factory, &data, &data).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.lr_grid = vec![0.01, 0.001];
        assert!(c.validate().is_err());
        c.lr_grid = vec![];
        assert!(c.validate().is_err());
        c = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
