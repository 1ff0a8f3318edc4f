//! Turning threads into labeled, partitioned, subsampled examples.
//!
//! Threads are assigned to ten partitions round-robin over their sorted
//! ids: partitions 4–9 train, 2–3 validate, 0–1 test. Training and
//! validation sets are subsampled so that no level below the pivot level
//! has more examples than the pivot level itself; the test set is kept
//! whole.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_all, fit_normalizer, ContextFeatureVector, Normalizer};
use crate::model::{LabeledExample, TokenIds, VocabSizes};
use crate::quantizer::{QuantizerSet, N_LEVELS};
use crate::thread::{AnnotatedToken, Thread};

pub const N_PARTITIONS: usize = 10;
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
    Test,
}

impl Role {
    pub fn of_partition(p: usize) -> Role {
        match p {
            0 | 1 => Role::Test,
            2 | 3 => Role::Validation,
            _ => Role::Train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub partition: BTreeMap<String, usize>,
}

impl SplitAssignment {
    pub fn role(&self, thread_id: &str) -> Option<Role> {
        self.partition.get(thread_id).map(|&p| Role::of_partition(p))
    }

    pub fn partition_sizes(&self) -> [usize; N_PARTITIONS] {
        let mut sizes = [0; N_PARTITIONS];
        for &p in self.partition.values() {
            sizes[p] += 1;
        }
        sizes
    }
}

/// Round-robin assignment of lexicographically sorted thread ids.
pub fn partition_by_thread(threads: &[Thread]) -> SplitAssignment {
    let ids: BTreeSet<&str> = threads.iter().map(|t| t.thread_id.as_str()).collect();
    SplitAssignment {
        partition: ids
            .into_iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), i % N_PARTITIONS))
            .collect(),
    }
}

/// For each level below `pivot` with more items than the pivot level, keeps
/// a uniform random subset of the pivot level's size. Relative order is
/// preserved. When the pivot level is empty nothing is removed.
pub fn subsample_levels<T>(items: Vec<T>, level: impl Fn(&T) -> usize, pivot: usize, seed: u64) -> Vec<T> {
    let mut by_level: Vec<Vec<usize>> = vec![Vec::new(); N_LEVELS.max(pivot + 1)];
    for (i, it) in items.iter().enumerate() {
        let l = level(it);
        if l >= by_level.len() {
            by_level.resize(l + 1, Vec::new());
        }
        by_level[l].push(i);
    }
    let target = by_level[pivot].len();
    if target == 0 {
        return items;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; items.len()];
    for members in by_level.iter().take(pivot) {
        if members.len() > target {
            let mut chosen = vec![false; members.len()];
            for j in sample(&mut rng, members.len(), target) {
                chosen[j] = true;
            }
            for (j, &i) in members.iter().enumerate() {
                keep[i] = chosen[j];
            }
        }
    }
    items
        .into_iter()
        .zip(keep)
        .filter_map(|(it, k)| k.then_some(it))
        .collect()
}

/// Token types seen at least twice, indexed from 1; index 0 is UNK.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub types: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

pub const UNK: u32 = 0;
pub const UNK_TYPE: &str = "<unk>";

impl Vocabulary {
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut types = vec![UNK_TYPE.to_string()];
        types.extend(counts.into_iter().filter(|&(_, n)| n >= 2).map(|(t, _)| t.to_string()));
        Self::from_types(types)
    }

    pub fn from_types(types: Vec<String>) -> Self {
        let index = types
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { types, index }
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn lookup(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    fn reindex(&mut self) {
        *self = Self::from_types(std::mem::take(&mut self.types));
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub word: Vocabulary,
    pub pos: Vocabulary,
    pub lemma: Vocabulary,
}

impl Vocabularies {
    /// Builds all three vocabularies from the sentences of `comments`.
    pub fn build(comments: &[&[Vec<AnnotatedToken>]]) -> Self {
        let toks = || comments.iter().flat_map(|c| c.iter().flatten());
        Vocabularies {
            word: Vocabulary::build(toks().map(|t| t.word.as_str())),
            pos: Vocabulary::build(toks().map(|t| t.pos.as_str())),
            lemma: Vocabulary::build(toks().map(|t| t.lemma.as_str())),
        }
    }

    pub fn sizes(&self) -> VocabSizes {
        VocabSizes {
            word: self.word.len(),
            pos: self.pos.len(),
            lemma: self.lemma.len(),
        }
    }

    pub fn encode(&self, t: &AnnotatedToken) -> TokenIds {
        [
            self.word.lookup(&t.word),
            self.pos.lookup(&t.pos),
            self.lemma.lookup(&t.lemma),
        ]
    }

    /// Encodes sentences, dropping empty ones.
    pub fn encode_sentences(&self, sentences: &[Vec<AnnotatedToken>]) -> Vec<Vec<TokenIds>> {
        sentences
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| s.iter().map(|t| self.encode(t)).collect())
            .collect()
    }

    /// Restores the lookup tables after deserialization.
    pub fn reindex(&mut self) {
        self.word.reindex();
        self.pos.reindex();
        self.lemma.reindex();
    }
}

/// A comment with its label and annotated tokens, before vocabulary
/// encoding and normalization.
#[derive(Debug, Clone)]
pub struct RawExample<'a> {
    pub comment_id: &'a str,
    pub thread_id: &'a str,
    pub subreddit: &'a str,
    pub features: ContextFeatureVector,
    pub sentences: &'a [Vec<AnnotatedToken>],
    pub label: usize,
}

pub fn raw_examples<'a>(threads: &'a [Thread], quantizers: &QuantizerSet) -> Result<Vec<RawExample<'a>>> {
    let mut out = Vec::new();
    for t in threads {
        let q = quantizers.get(&t.subreddit)?;
        for (c, f) in t.comments.iter().zip(extract_all(t)) {
            out.push(RawExample {
                comment_id: &c.id,
                thread_id: &t.thread_id,
                subreddit: &t.subreddit,
                features: f,
                sentences: &c.sentences,
                label: q.quantize(c.karma),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub seed: u64,
    pub pivot_level: usize,
    pub subsample: bool,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            seed: 0,
            pivot_level: 4,
            subsample: true,
        }
    }
}

/// Everything training and evaluation need, in one serializable file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub version: u32,
    pub options: DatasetOptions,
    pub quantizers: QuantizerSet,
    pub vocab: Vocabularies,
    pub normalizer: Normalizer,
    pub split: SplitAssignment,
    pub train: Vec<LabeledExample>,
    pub validation: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

impl DatasetBundle {
    pub fn build(threads: &[Thread], options: DatasetOptions) -> Result<Self> {
        let quantizers = QuantizerSet::fit(threads)?;
        Self::build_with(threads, quantizers, options)
    }

    /// Builds with pre-fitted quantizers.
    pub fn build_with(threads: &[Thread], quantizers: QuantizerSet, options: DatasetOptions) -> Result<Self> {
        let split = partition_by_thread(threads);
        let mut roles: BTreeMap<Role, Vec<RawExample>> = BTreeMap::new();
        for ex in raw_examples(threads, &quantizers)? {
            let role = split.role(ex.thread_id).expect("every thread is assigned");
            roles.entry(role).or_default().push(ex);
        }
        let mut take = |r| roles.remove(&r).unwrap_or_default();
        let (mut train, mut validation, test) = (take(Role::Train), take(Role::Validation), take(Role::Test));
        if options.subsample {
            train = subsample_levels(train, |e| e.label, options.pivot_level, options.seed);
            validation = subsample_levels(
                validation,
                |e| e.label,
                options.pivot_level,
                options.seed.wrapping_add(1),
            );
        }
        if train.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "training split has {} comments; need at least 2",
                train.len()
            )));
        }
        let vocab = Vocabularies::build(&train.iter().map(|e| e.sentences).collect::<Vec<_>>());
        let train_features: Vec<ContextFeatureVector> = train.iter().map(|e| e.features).collect();
        let normalizer = fit_normalizer(&train_features)?;

        let finish = |set: Vec<RawExample>| -> Vec<LabeledExample> {
            set.into_iter()
                .map(|e| LabeledExample {
                    comment_id: e.comment_id.to_string(),
                    thread_id: e.thread_id.to_string(),
                    subreddit: e.subreddit.to_string(),
                    features: normalizer.apply(&e.features),
                    sentences: vocab.encode_sentences(e.sentences),
                    label: e.label,
                })
                .collect()
        };
        let bundle = DatasetBundle {
            version: BUNDLE_VERSION,
            train: finish(train),
            validation: finish(validation),
            test: finish(test),
            options,
            quantizers,
            vocab,
            normalizer,
            split,
        };
        bundle.check_disjoint()?;
        Ok(bundle)
    }

    /// No comment may appear in two roles.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen: HashMap<(&str, &str), Role> = HashMap::new();
        for (role, set) in [
            (Role::Train, &self.train),
            (Role::Validation, &self.validation),
            (Role::Test, &self.test),
        ] {
            for e in set {
                if let Some(prev) = seen.insert((&e.thread_id, &e.comment_id), role) {
                    if prev != role {
                        return Err(Error::Config(format!(
                            "comment {}/{} is in both {prev:?} and {role:?}",
                            e.thread_id, e.comment_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer(&mut w, self)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bundle: DatasetBundle = serde_json::from_reader(BufReader::new(f))?;
        if bundle.version != BUNDLE_VERSION {
            return Err(Error::Config(format!(
                "dataset bundle version {} is not supported",
                bundle.version
            )));
        }
        bundle.vocab.reindex();
        Ok(bundle)
    }
}
