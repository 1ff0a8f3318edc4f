//! Small random instances for gradient checking the full model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::{ContextFeatureVector, N_FEATURES};
use crate::model::{ContextEncoder, LabeledExample, Model, ModelConfig, TextMode, VocabSizes};
use crate::numerics::{grad_check, GradCheckReport};
use crate::quantizer::N_LEVELS;

pub const MICRO_VOCAB: VocabSizes = VocabSizes {
    word: 11,
    pos: 5,
    lemma: 7,
};

/// K=3, C=5, D=6 configuration with vocabularies 11/5/7.
pub fn micro_config(encoder: ContextEncoder, text: TextMode, seed: u64) -> ModelConfig {
    ModelConfig {
        n_bases: 3,
        context_width: 5,
        text_width: 6,
        context_encoder: encoder,
        text_mode: text,
        vocab: MICRO_VOCAB,
        // larger than the training default so that no gradient sits near
        // the finite-difference noise floor
        init_std: 0.5,
        seed,
        ..ModelConfig::default()
    }
}

/// `n` random examples: 0 to 3 sentences of 1 to 5 tokens each.
pub fn micro_examples(n: usize, vocab: VocabSizes, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..n)
        .map(|i| {
            let mut features = ContextFeatureVector::default();
            for j in 0..N_FEATURES {
                features.normalized[j] = rng.gen_range(-2.0..2.0);
            }
            let n_sent = if i == 0 { 2 } else { rng.gen_range(0..=3) };
            let sentences = (0..n_sent)
                .map(|_| {
                    (0..rng.gen_range(1..=5))
                        .map(|_| {
                            [
                                rng.gen_range(0..vocab.word as u32),
                                rng.gen_range(0..vocab.pos as u32),
                                rng.gen_range(0..vocab.lemma as u32),
                            ]
                        })
                        .collect()
                })
                .collect();
            LabeledExample {
                comment_id: format!("m{i}"),
                thread_id: "micro".into(),
                subreddit: "micro".into(),
                features,
                sentences,
                label: rng.gen_range(0..N_LEVELS),
            }
        })
        .collect()
}

/// Analytic vs. central-difference gradients of the mean batch loss.
pub fn check_model_gradients(model: &mut Model, batch: &[LabeledExample], eps: f64) -> GradCheckReport {
    let refs: Vec<&LabeledExample> = batch.iter().collect();
    model.params.zero_grads();
    model.loss_and_backward(&refs);
    let mut params = std::mem::take(&mut model.params);
    let report = grad_check(&mut params, |p| model.loss(p, &refs), eps);
    model.params = params;
    model.params.zero_grads();
    report
}

/// Gradient check of the full gated latent-mode model on three micro
/// examples.
pub fn micro_gradcheck(seed: u64) -> GradCheckReport {
    let config = micro_config(ContextEncoder::LatentModes, TextMode::Gated, seed);
    let mut model = Model::new(config).expect("valid micro config");
    let batch = micro_examples(3, MICRO_VOCAB, seed);
    check_model_gradients(&mut model, &batch, 1e-5)
}
