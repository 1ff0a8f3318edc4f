//! Synthetic discussion corpora with planted structure-karma and text-karma
//! signal.
//!
//! Generation happens in three passes. First each thread's tree is grown
//! by sequential attachment and its karma is drawn. Next one quantizer is
//! fitted over all karma. Last, tokens are drawn with knowledge of every
//! comment's level. Every thread gets its own seed derived from the master
//! seed, so a thread's structure and text do not depend on the others.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::{level_distribution, QuantizerThresholds, N_LEVELS};
use crate::thread::{AnnotatedToken, Comment, Thread, ThreadIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextSignal {
    /// Every comment draws from the vocabulary of a uniformly random level.
    None,
    /// Every comment draws from its own level's vocabulary.
    Global,
    /// Comments whose final subtree has at most two comments draw from their
    /// own level's vocabulary; the rest behave as under `None`.
    ContextConditional,
}

impl std::str::FromStr for TextSignal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(TextSignal::None),
            "global" => Ok(TextSignal::Global),
            "context_conditional" => Ok(TextSignal::ContextConditional),
            other => Err(Error::Config(format!("unknown text signal {other:?}"))),
        }
    }
}

/// log karma = intercept − earliness·hours_since_root
///             + replies·ln(1 + n_children) + appeal,
/// with appeal ~ N(0, noise_scale²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KarmaModel {
    pub intercept: f64,
    pub earliness: f64,
    pub replies: f64,
    pub noise_scale: f64,
    /// Chance that a comment is downvoted to a karma in -4..=0 instead.
    pub downvote_rate: f64,
}

impl Default for KarmaModel {
    fn default() -> Self {
        KarmaModel {
            intercept: 1.0,
            earliness: 0.3,
            replies: 0.5,
            noise_scale: 1.5,
            downvote_rate: 0.05,
        }
    }
}

impl KarmaModel {
    pub fn log_karma(&self, hours_since_root: f64, n_children: usize, appeal: f64) -> f64 {
        self.intercept - self.earliness * hours_since_root + self.replies * (n_children as f64).ln_1p() + appeal
    }

    pub fn karma(&self, log_karma: f64) -> i64 {
        let k = log_karma.min(40.0).exp().round();
        (k as i64).max(1)
    }
}

/// Word stems per level, plus level-free filler stems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabTables {
    pub levels: Vec<Vec<String>>,
    pub filler: Vec<String>,
}

impl VocabTables {
    pub fn synthetic(per_level: usize, filler: usize) -> Self {
        VocabTables {
            levels: (0..N_LEVELS)
                .map(|l| (0..per_level).map(|i| format!("lv{l}w{i}")).collect())
                .collect(),
            filler: (0..filler).map(|i| format!("fw{i}")).collect(),
        }
    }
}

impl Default for VocabTables {
    fn default() -> Self {
        VocabTables::synthetic(6, 30)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextModel {
    pub signal: TextSignal,
    /// Per-token chance of drawing from a level table rather than filler.
    pub signal_rate: f64,
    pub max_sentences: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub vocab: VocabTables,
}

impl Default for TextModel {
    fn default() -> Self {
        TextModel {
            signal: TextSignal::ContextConditional,
            signal_rate: 1.0,
            max_sentences: 2,
            min_tokens: 3,
            max_tokens: 7,
            vocab: VocabTables::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub seed: u64,
    pub n_threads: usize,
    pub mean_comments: f64,
    pub subreddit: String,
    /// Strength of attachment toward high-appeal comments.
    pub branching_bias: f64,
    /// Attachment weight of the root post.
    pub root_weight: f64,
    /// Hours over which a comment's attractiveness as a parent decays by e.
    pub attention_span_h: f64,
    pub mean_gap_min: f64,
    pub author_pool: usize,
    /// Chance that a comment is written by the thread's original poster.
    pub op_rate: f64,
    pub karma: KarmaModel,
    pub text: TextModel,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            n_threads: 100,
            mean_comments: 20.0,
            subreddit: "synth".into(),
            branching_bias: 0.5,
            root_weight: 0.5,
            attention_span_h: 4.0,
            mean_gap_min: 10.0,
            author_pool: 200,
            op_rate: 0.05,
            karma: KarmaModel::default(),
            text: TextModel::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_threads == 0 || self.author_pool == 0 {
            return bad("thread count and author pool must be positive");
        }
        if !(self.mean_comments >= 1.0) || !(self.mean_gap_min > 0.0) || !(self.attention_span_h > 0.0) {
            return bad("mean comments must be ≥ 1; gap and attention span positive");
        }
        if !(self.root_weight > 0.0) || !self.branching_bias.is_finite() {
            return bad("root weight must be positive and branching bias finite");
        }
        if !(self.karma.noise_scale >= 0.0) {
            return bad("noise scale must be non-negative");
        }
        for p in [self.op_rate, self.karma.downvote_rate, self.text.signal_rate] {
            if !(0.0..=1.0).contains(&p) {
                return bad("rates must lie in [0, 1]");
            }
        }
        let t = &self.text;
        if t.max_sentences == 0 || t.min_tokens == 0 || t.min_tokens > t.max_tokens {
            return bad("need at least one sentence and 1 ≤ min_tokens ≤ max_tokens");
        }
        if t.vocab.levels.len() != N_LEVELS || t.vocab.levels.iter().any(Vec::is_empty) || t.vocab.filler.is_empty() {
            return bad("vocabulary needs 8 non-empty level tables and non-empty filler");
        }
        Ok(())
    }
}

fn thread_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| master.gen()).collect()
}

struct Skeleton {
    thread: Thread,
    seed: u64,
}

fn grow(cfg: &GenConfig, index: usize, seed: u64) -> Skeleton {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extra = if cfg.mean_comments > 1.0 {
        Poisson::new(cfg.mean_comments - 1.0).unwrap().sample(&mut rng) as usize
    } else {
        0
    };
    let n = 1 + extra;
    let gap = Exp::new(1.0 / (cfg.mean_gap_min * 60.0)).unwrap();
    let appeal_dist = Normal::new(0.0, cfg.karma.noise_scale).unwrap();
    let author = |rng: &mut ChaCha8Rng| format!("u{}", rng.gen_range(0..cfg.author_pool));
    let root_author = author(&mut rng);

    let mut times: Vec<f64> = Vec::with_capacity(n);
    let mut parents: Vec<Option<usize>> = Vec::with_capacity(n);
    let mut appeal: Vec<f64> = Vec::with_capacity(n);
    let mut authors = Vec::with_capacity(n);
    let mut t = 0.0f64;
    for i in 0..n {
        t += (60.0 + gap.sample(&mut rng)).round();
        let weights: Vec<f64> = std::iter::once(cfg.root_weight)
            .chain((0..i).map(|j| {
                let age_h = (t - times[j]) / 3600.0;
                (cfg.branching_bias * appeal[j] - age_h / cfg.attention_span_h).exp()
            }))
            .collect();
        let pick = WeightedIndex::new(&weights).unwrap().sample(&mut rng);
        parents.push(pick.checked_sub(1));
        times.push(t);
        appeal.push(appeal_dist.sample(&mut rng));
        authors.push(if rng.gen_bool(cfg.op_rate) {
            root_author.clone()
        } else {
            author(&mut rng)
        });
    }

    let mut n_children = vec![0usize; n];
    for p in parents.iter().flatten() {
        n_children[*p] += 1;
    }
    let thread_id = format!("t{index:06}");
    let comments = (0..n)
        .map(|i| {
            let lk = cfg.karma.log_karma(times[i] / 3600.0, n_children[i], appeal[i]);
            let karma = if rng.gen_bool(cfg.karma.downvote_rate) {
                -rng.gen_range(0..=4)
            } else {
                cfg.karma.karma(lk)
            };
            Comment {
                id: format!("{thread_id}c{i:04}"),
                parent_id: parents[i].map_or(String::new(), |p| format!("{thread_id}c{p:04}")),
                author: authors[i].clone(),
                time_s: times[i],
                karma,
                sentences: Vec::new(),
            }
        })
        .collect();
    Skeleton {
        thread: Thread {
            thread_id,
            subreddit: cfg.subreddit.clone(),
            root_author,
            comments,
        },
        seed,
    }
}

const SUFFIXES: [(&str, &str); 4] = [("", "NN"), ("s", "NNS"), ("ed", "VBD"), ("ing", "VBG")];

fn token(stem: &str, rng: &mut impl Rng) -> AnnotatedToken {
    let (suffix, pos) = SUFFIXES[rng.gen_range(0..SUFFIXES.len())];
    AnnotatedToken::new(format!("{stem}{suffix}"), stem, pos)
}

fn write_text(cfg: &TextModel, skel: &mut Skeleton, q: &QuantizerThresholds) {
    let mut rng = ChaCha8Rng::seed_from_u64(skel.seed);
    rng.set_stream(1);
    let index = ThreadIndex::new(&skel.thread);
    for (i, c) in skel.thread.comments.iter_mut().enumerate() {
        let indicative = match cfg.signal {
            TextSignal::None => false,
            TextSignal::Global => true,
            TextSignal::ContextConditional => index.stats[i].subtree_size <= 2,
        };
        let level = if indicative {
            q.quantize(c.karma)
        } else {
            rng.gen_range(0..N_LEVELS)
        };
        let table = &cfg.vocab.levels[level];
        let n_sent = rng.gen_range(1..=cfg.max_sentences);
        c.sentences = (0..n_sent)
            .map(|_| {
                let len = rng.gen_range(cfg.min_tokens..=cfg.max_tokens);
                (0..len)
                    .map(|_| {
                        let stem = if rng.gen_bool(cfg.signal_rate) {
                            &table[rng.gen_range(0..table.len())]
                        } else {
                            &cfg.vocab.filler[rng.gen_range(0..cfg.vocab.filler.len())]
                        };
                        token(stem, &mut rng)
                    })
                    .collect()
            })
            .collect();
    }
}

pub fn generate(cfg: &GenConfig) -> Result<Vec<Thread>> {
    cfg.validate()?;
    let mut skeletons: Vec<Skeleton> = thread_seeds(cfg.seed, cfg.n_threads)
        .into_iter()
        .enumerate()
        .map(|(i, s)| grow(cfg, i, s))
        .collect();
    let karma: Vec<i64> = skeletons
        .iter()
        .flat_map(|s| s.thread.comments.iter().map(|c| c.karma))
        .collect();
    let q = QuantizerThresholds::fit(&cfg.subreddit, &karma)?;
    for s in &mut skeletons {
        write_text(&cfg.text, s, &q);
    }
    Ok(skeletons.into_iter().map(|s| s.thread).collect())
}

/// Linear-interpolation quantile of sorted data (0 for empty input).
pub fn quantile(sorted: &[i64], p: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        n => {
            let pos = p.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let w = pos - lo as f64;
            sorted[lo] as f64 * (1.0 - w) + sorted[hi] as f64 * w
        }
    }
}

pub const SUMMARY_QUANTILES: [f64; 7] = [0.0, 0.25, 0.5, 0.75, 0.9, 0.99, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub threads: usize,
    pub comments: usize,
    /// Karma at each of [`SUMMARY_QUANTILES`].
    pub karma_quantiles: Vec<f64>,
    /// `depth_histogram[d]` counts comments at depth d (top level is 1).
    pub depth_histogram: Vec<usize>,
    /// `children_histogram[k]` counts comments with exactly k replies.
    pub children_histogram: Vec<usize>,
    /// Levels under a quantizer fitted to the whole corpus.
    pub level_histogram: [usize; N_LEVELS],
}

fn bump(hist: &mut Vec<usize>, k: usize) {
    if hist.len() <= k {
        hist.resize(k + 1, 0);
    }
    hist[k] += 1;
}

pub fn describe(corpus: &[Thread]) -> CorpusSummary {
    let mut karma: Vec<i64> = corpus.iter().flat_map(|t| t.comments.iter().map(|c| c.karma)).collect();
    karma.sort_unstable();
    let mut depth_histogram = Vec::new();
    let mut children_histogram = Vec::new();
    for t in corpus {
        for s in ThreadIndex::new(t).stats {
            bump(&mut depth_histogram, s.depth);
            bump(&mut children_histogram, s.n_children);
        }
    }
    let level_histogram = match QuantizerThresholds::fit("", &karma) {
        Ok(q) => level_distribution(&karma.iter().map(|&k| q.quantize(k)).collect::<Vec<_>>()),
        Err(_) => [0; N_LEVELS],
    };
    CorpusSummary {
        threads: corpus.len(),
        comments: karma.len(),
        karma_quantiles: SUMMARY_QUANTILES.iter().map(|&p| quantile(&karma, p)).collect(),
        depth_histogram,
        children_histogram,
        level_histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thread::{validate_thread, write_threads};
    use proptest::prelude::*;

    fn small(seed: u64) -> GenConfig {
        GenConfig {
            seed,
            n_threads: 30,
            ..GenConfig::default()
        }
    }

    fn bytes(threads: &[Thread]) -> Vec<u8> {
        let mut out = Vec::new();
        write_threads(&mut out, threads).unwrap();
        out
    }

    #[test]
    fn fixed_seed_is_byte_identical() {
        let a = generate(&small(3)).unwrap();
        let b = generate(&small(3)).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        assert_ne!(bytes(&a), bytes(&generate(&small(4)).unwrap()));
    }

    #[test]
    fn threads_validate() {
        for t in generate(&small(5)).unwrap() {
            validate_thread(&t).unwrap();
            assert!(t.comments.iter().all(|c| !c.sentences.is_empty()));
        }
    }

    #[test]
    fn structure_ignores_text_mode() {
        let mut cfg = small(8);
        let a = generate(&cfg).unwrap();
        cfg.text.signal = TextSignal::None;
        let b = generate(&cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            for (c, d) in x.comments.iter().zip(&y.comments) {
                assert_eq!((&c.id, &c.parent_id, c.time_s, c.karma), (&d.id, &d.parent_id, d.time_s, d.karma));
            }
        }
    }

    #[test]
    fn noiseless_earliness_only_karma_decreases_in_time() {
        let cfg = GenConfig {
            n_threads: 20,
            mean_comments: 10.0,
            karma: KarmaModel {
                intercept: 12.0,
                earliness: 0.5,
                replies: 0.0,
                noise_scale: 0.0,
                downvote_rate: 0.0,
            },
            ..GenConfig::default()
        };
        for t in generate(&cfg).unwrap() {
            for w in t.comments.windows(2) {
                assert!(w[0].time_s < w[1].time_s);
                assert!(w[0].karma > w[1].karma, "{} then {}", w[0].karma, w[1].karma);
            }
        }
    }

    #[test]
    fn level_zero_is_the_largest_class() {
        let corpus = generate(&GenConfig {
            n_threads: 500,
            ..GenConfig::default()
        })
        .unwrap();
        let s = describe(&corpus);
        assert!(s.comments >= 9_000);
        let h = s.level_histogram;
        assert!(h.iter().skip(1).all(|&c| c < h[0]), "{h:?}");
        assert!(h.iter().all(|&c| c > 0), "every level populated: {h:?}");
    }

    #[test]
    fn global_text_carries_the_level() {
        let mut cfg = small(2);
        cfg.text.signal = TextSignal::Global;
        cfg.text.signal_rate = 1.0;
        let corpus = generate(&cfg).unwrap();
        let karma: Vec<i64> = corpus.iter().flat_map(|t| t.comments.iter().map(|c| c.karma)).collect();
        let q = QuantizerThresholds::fit("", &karma).unwrap();
        for c in corpus.iter().flat_map(|t| &t.comments) {
            let prefix = format!("lv{}w", q.quantize(c.karma));
            assert!(c.sentences.iter().flatten().all(|t| t.lemma.starts_with(&prefix)));
        }
    }

    #[test]
    fn describe_empty_is_zero() {
        let s = describe(&[]);
        assert_eq!((s.threads, s.comments), (0, 0));
        assert!(s.karma_quantiles.iter().all(|&q| q == 0.0));
        assert_eq!(s.level_histogram, [0; N_LEVELS]);
    }

    #[test]
    fn describe_conserves_comments() {
        let corpus = generate(&GenConfig {
            n_threads: 100,
            ..GenConfig::default()
        })
        .unwrap();
        let s = describe(&corpus);
        assert_eq!(s.threads, 100);
        assert_eq!(s.comments, corpus.iter().map(|t| t.comments.len()).sum::<usize>());
        assert_eq!(s.depth_histogram.iter().sum::<usize>(), s.comments);
        assert_eq!(s.children_histogram.iter().sum::<usize>(), s.comments);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = GenConfig::default();
        c.n_threads = 0;
        assert!(c.validate().is_err());
        let mut c = GenConfig::default();
        c.karma.noise_scale = -1.0;
        assert!(c.validate().is_err());
        let mut c = GenConfig::default();
        c.text.vocab.levels.pop();
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn quantile_matches_sort_oracle(mut xs in prop::collection::vec(-50i64..5000, 1..200), p in 0.0f64..=1.0) {
            let q = quantile(&{ let mut s = xs.clone(); s.sort(); s }, p);
            xs.sort();
            // nearest ranks bracket the interpolated value
            let n = xs.len();
            let lo = xs[((p * (n - 1) as f64).floor()) as usize] as f64;
            let hi = xs[((p * (n - 1) as f64).ceil()) as usize] as f64;
            prop_assert!(lo <= q && q <= hi);
            prop_assert_eq!(quantile(&xs, 0.0), xs[0] as f64);
            prop_assert_eq!(quantile(&xs, 1.0), xs[n - 1] as f64);
            if n % 2 == 1 {
                prop_assert_eq!(quantile(&xs, 0.5), xs[n / 2] as f64);
            } else {
                prop_assert_eq!(quantile(&xs, 0.5), (xs[n / 2 - 1] + xs[n / 2]) as f64 / 2.0);
            }
        }
    }
}
