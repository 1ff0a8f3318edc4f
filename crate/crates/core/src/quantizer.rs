//! Head-tail break quantization of karma into eight endorsement levels.
//!
//! Karma at or below 1 is level 0. The remaining scores are split at their
//! median: scores strictly below it form level 1 and the rest are split
//! again, up to level 6. Whatever is left is the top level.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::thread::Thread;

pub const N_LEVELS: usize = 8;
/// Number of median cuts (levels 1 through 6).
pub const MAX_CUTS: usize = N_LEVELS - 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerThresholds {
    pub subreddit: String,
    pub cuts: Vec<f64>,
}

fn median_sorted(sorted: &[i64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    }
}

impl QuantizerThresholds {
    /// Fits the cut points. Recursion stops early when fewer than two scores
    /// remain or when no remaining score lies strictly below the median (all
    /// equal, or a majority tied at the minimum).
    pub fn fit(subreddit: impl Into<String>, karma: &[i64]) -> Result<Self> {
        if karma.is_empty() {
            return Err(Error::InsufficientData(
                "cannot fit a quantizer on zero scores".into(),
            ));
        }
        let mut rest: Vec<i64> = karma.iter().copied().filter(|&k| k > 1).collect();
        rest.sort_unstable();
        let mut cuts = Vec::new();
        while cuts.len() < MAX_CUTS && rest.len() >= 2 {
            let m = median_sorted(&rest);
            if (rest[0] as f64) >= m {
                break;
            }
            let upper = rest.partition_point(|&k| (k as f64) < m);
            cuts.push(m);
            rest.drain(..upper);
        }
        Ok(QuantizerThresholds {
            subreddit: subreddit.into(),
            cuts,
        })
    }

    pub fn quantize(&self, karma: i64) -> usize {
        if karma <= 1 {
            return 0;
        }
        let k = karma as f64;
        self.cuts
            .iter()
            .position(|&c| k < c)
            .map_or(self.cuts.len() + 1, |j| j + 1)
    }
}

/// Quantizers keyed by subreddit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSet {
    pub by_subreddit: BTreeMap<String, QuantizerThresholds>,
}

impl QuantizerSet {
    /// Fits one quantizer per subreddit over every comment of the corpus.
    pub fn fit(threads: &[Thread]) -> Result<Self> {
        let mut scores: BTreeMap<&str, Vec<i64>> = BTreeMap::new();
        for t in threads {
            scores
                .entry(t.subreddit.as_str())
                .or_default()
                .extend(t.comments.iter().map(|c| c.karma));
        }
        let mut by_subreddit = BTreeMap::new();
        for (sub, ks) in scores {
            if ks.is_empty() {
                continue;
            }
            by_subreddit.insert(sub.to_string(), QuantizerThresholds::fit(sub, &ks)?);
        }
        Ok(QuantizerSet { by_subreddit })
    }

    pub fn get(&self, subreddit: &str) -> Result<&QuantizerThresholds> {
        self.by_subreddit
            .get(subreddit)
            .ok_or_else(|| Error::Config(format!("no quantizer for subreddit {subreddit:?}")))
    }

    pub fn quantize(&self, subreddit: &str, karma: i64) -> Result<usize> {
        Ok(self.get(subreddit)?.quantize(karma))
    }
}

/// Histogram over levels 0..7. Out-of-range levels are ignored.
pub fn level_distribution(levels: &[usize]) -> [usize; N_LEVELS] {
    let mut counts = [0; N_LEVELS];
    for &l in levels {
        if l < N_LEVELS {
            counts[l] += 1;
        }
    }
    counts
}

#[cfg(test)]
pub(crate) mod oracle {
    /// Reference labeling by literal recursion over the multiset: returns
    /// (score, level) pairs.
    pub fn recursive_median_levels(scores: &[i64]) -> Vec<(i64, usize)> {
        fn split(rest: Vec<i64>, level: usize, out: &mut Vec<(i64, usize)>) {
            if level == 7 || rest.len() < 2 {
                out.extend(rest.into_iter().map(|k| (k, level)));
                return;
            }
            let mut s = rest.clone();
            s.sort();
            let n = s.len();
            let m = if n % 2 == 1 {
                s[n / 2] as f64
            } else {
                (s[n / 2 - 1] + s[n / 2]) as f64 / 2.0
            };
            let (below, above): (Vec<i64>, Vec<i64>) = rest.into_iter().partition(|&k| (k as f64) < m);
            if below.is_empty() {
                out.extend(above.into_iter().map(|k| (k, level)));
                return;
            }
            out.extend(below.into_iter().map(|k| (k, level)));
            split(above, level + 1, out);
        }
        let mut out: Vec<(i64, usize)> = scores.iter().filter(|&&k| k <= 1).map(|&k| (k, 0)).collect();
        split(scores.iter().copied().filter(|&k| k > 1).collect(), 1, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_low_scores() {
        let q = QuantizerThresholds::fit("s", &[1, 0, -3, 1]).unwrap();
        assert!(q.cuts.is_empty());
        for k in [-10, 0, 1] {
            assert_eq!(q.quantize(k), 0);
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(QuantizerThresholds::fit("s", &[]).is_err());
    }

    #[test]
    fn eight_consecutive_scores() {
        let scores: Vec<i64> = (2..=9).collect();
        let q = QuantizerThresholds::fit("s", &scores).unwrap();
        assert_eq!(q.cuts, vec![5.5, 7.5, 8.5]);
        let levels: Vec<usize> = scores.iter().map(|&k| q.quantize(k)).collect();
        assert_eq!(levels, vec![1, 1, 1, 1, 2, 2, 3, 4]);
    }

    #[test]
    fn low_karma_is_level_zero() {
        let q = QuantizerThresholds::fit("s", &[2, 3, 4, 5, 100]).unwrap();
        assert_eq!(q.quantize(1), 0);
        assert_eq!(q.quantize(-5), 0);
    }

    #[test]
    fn ties_at_median_go_up() {
        // median 3: {2} below, {3,3,3,4} above
        let q = QuantizerThresholds::fit("s", &[2, 3, 3, 3, 4]).unwrap();
        assert_eq!(q.cuts[0], 3.0);
        assert_eq!(q.quantize(3), 2);
    }

    #[test]
    fn majority_tied_at_minimum_stops() {
        let q = QuantizerThresholds::fit("s", &[5, 5, 5, 6]).unwrap();
        assert!(q.cuts.is_empty());
        assert_eq!(q.quantize(6), 1);
    }

    #[test]
    fn histogram() {
        assert_eq!(level_distribution(&[]), [0; 8]);
        assert_eq!(level_distribution(&[0, 0, 7]), [2, 0, 0, 0, 0, 0, 0, 1]);
    }

    #[test]
    fn json_shape() {
        let q = QuantizerThresholds {
            subreddit: "AskX".into(),
            cuts: vec![2.5, 4.0],
        };
        assert_eq!(
            serde_json::to_string(&q).unwrap(),
            r#"{"subreddit":"AskX","cuts":[2.5,4.0]}"#
        );
    }

    proptest! {
        #[test]
        fn fit_agrees_with_oracle(scores in prop::collection::vec(-3i64..60, 1..200)) {
            let q = QuantizerThresholds::fit("s", &scores).unwrap();
            for w in q.cuts.windows(2) {
                prop_assert!(w[0] < w[1]);
            }
            for (k, level) in oracle::recursive_median_levels(&scores) {
                prop_assert_eq!(q.quantize(k), level);
            }
        }

        #[test]
        fn monotone(scores in prop::collection::vec(-3i64..500, 1..100), a in -5i64..600, b in -5i64..600) {
            let q = QuantizerThresholds::fit("s", &scores).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(q.quantize(lo) <= q.quantize(hi));
        }
    }
}
