//! The seven submission-context features of a comment and their
//! zero-mean/unit-variance normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::thread::{Thread, ThreadIndex};

pub const N_FEATURES: usize = 7;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "is_op",
    "n_children",
    "subtree_size",
    "subtree_height",
    "depth",
    "hours_since_root",
    "hours_since_parent",
];

pub const IS_OP: usize = 0;
pub const N_CHILDREN: usize = 1;
pub const SUBTREE_SIZE: usize = 2;
pub const SUBTREE_HEIGHT: usize = 3;
pub const DEPTH: usize = 4;
pub const HOURS_SINCE_ROOT: usize = 5;
pub const HOURS_SINCE_PARENT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContextFeatureVector {
    pub raw: [f64; N_FEATURES],
    pub normalized: [f64; N_FEATURES],
}

impl ContextFeatureVector {
    pub fn from_raw(raw: [f64; N_FEATURES]) -> Self {
        ContextFeatureVector {
            raw,
            normalized: [0.0; N_FEATURES],
        }
    }
}

fn features_at(thread: &Thread, index: &ThreadIndex, i: usize) -> ContextFeatureVector {
    let c = &thread.comments[i];
    let s = index.stats[i];
    let parent_time = index.parent[i].map_or(0.0, |p| thread.comments[p].time_s);
    ContextFeatureVector::from_raw([
        if c.author == thread.root_author { 1.0 } else { 0.0 },
        s.n_children as f64,
        s.subtree_size as f64,
        s.subtree_height as f64,
        s.depth as f64,
        c.time_s / 3600.0,
        (c.time_s - parent_time) / 3600.0,
    ])
}

/// Raw features of one comment. For top-level comments the parent is the
/// root post, so both relative times coincide.
pub fn extract(thread: &Thread, comment_id: &str) -> Result<ContextFeatureVector> {
    let index = ThreadIndex::new(thread);
    let i = index
        .position(comment_id)
        .ok_or_else(|| Error::UnknownComment(comment_id.to_string()))?;
    Ok(features_at(thread, &index, i))
}

/// Raw features for every comment, in storage order.
pub fn extract_all(thread: &Thread) -> Vec<ContextFeatureVector> {
    let index = ThreadIndex::new(thread);
    (0..thread.comments.len())
        .map(|i| features_at(thread, &index, i))
        .collect()
}

/// Per-dimension mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: [f64; N_FEATURES],
    pub std: [f64; N_FEATURES],
}

impl Normalizer {
    pub fn identity() -> Self {
        Normalizer {
            mean: [0.0; N_FEATURES],
            std: [1.0; N_FEATURES],
        }
    }

    pub fn apply(&self, f: &ContextFeatureVector) -> ContextFeatureVector {
        let mut out = *f;
        for i in 0..N_FEATURES {
            out.normalized[i] = (f.raw[i] - self.mean[i]) / self.std[i];
        }
        out
    }

    pub fn apply_in_place(&self, f: &mut ContextFeatureVector) {
        *f = self.apply(f);
    }
}

/// Fits the normalizer; a dimension with zero variance keeps std = 1.
pub fn fit_normalizer(samples: &[ContextFeatureVector]) -> Result<Normalizer> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "normalizer needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mut mean = [0.0; N_FEATURES];
    for s in samples {
        for i in 0..N_FEATURES {
            mean[i] += s.raw[i];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = [0.0; N_FEATURES];
    for s in samples {
        for i in 0..N_FEATURES {
            let d = s.raw[i] - mean[i];
            var[i] += d * d;
        }
    }
    let mut std = [1.0; N_FEATURES];
    for i in 0..N_FEATURES {
        let sd = (var[i] / n).sqrt();
        if sd > 1e-12 * mean[i].abs().max(1.0) {
            std[i] = sd;
        }
    }
    Ok(Normalizer { mean, std })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thread::fixtures::{comment, thread};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn op_reply_without_children() {
        let mut c = comment("a", "", 3600.0);
        c.author = "op".into();
        let t = thread(vec![c]);
        let f = extract(&t, "a").unwrap();
        assert_eq!(f.raw, [1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn comment_with_two_replies() {
        let t = thread(vec![
            comment("A", "", 1800.0),
            comment("B", "A", 3600.0),
            comment("C", "A", 9000.0),
        ]);
        let a = extract(&t, "A").unwrap().raw;
        assert_eq!(&a[..5], &[0.0, 2.0, 3.0, 1.0, 1.0]);
        assert_eq!(a[5], 0.5);
        let c = extract(&t, "C").unwrap().raw;
        assert_eq!(c[HOURS_SINCE_ROOT], 2.5);
        assert_eq!(c[HOURS_SINCE_PARENT], 2.0);
        assert!(matches!(extract(&t, "Z"), Err(Error::UnknownComment(_))));
    }

    /// Direct definition-by-definition oracle, independent of ThreadIndex.
    fn oracle(t: &Thread, id: &str) -> [f64; 7] {
        fn size_height(t: &Thread, id: &str) -> (usize, usize) {
            let mut size = 1;
            let mut h = 0;
            for k in t.comments.iter().filter(|c| c.parent_id == id) {
                let (s, kh) = size_height(t, &k.id);
                size += s;
                h = h.max(kh + 1);
            }
            (size, h)
        }
        let c = t.comments.iter().find(|c| c.id == id).unwrap();
        let mut depth = 1;
        let mut cur = c;
        while !cur.parent_id.is_empty() {
            cur = t.comments.iter().find(|x| x.id == cur.parent_id).unwrap();
            depth += 1;
        }
        let parent_t = t
            .comments
            .iter()
            .find(|x| x.id == c.parent_id)
            .map_or(0.0, |p| p.time_s);
        let (size, h) = size_height(t, id);
        let kids = t.comments.iter().filter(|x| x.parent_id == id).count();
        [
            (c.author == t.root_author) as u8 as f64,
            kids as f64,
            size as f64,
            h as f64,
            depth as f64,
            c.time_s / 3600.0,
            (c.time_s - parent_t) / 3600.0,
        ]
    }

    fn random_thread(seed: u64, n: usize) -> Thread {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cs: Vec<crate::thread::Comment> = Vec::new();
        for i in 0..n {
            let (parent, base) = if i == 0 || rng.gen_bool(0.3) {
                (String::new(), 0.0)
            } else {
                let p = rng.gen_range(0..i);
                (cs[p].id.clone(), cs[p].time_s)
            };
            let mut c = comment(&format!("c{i}"), &parent, base + rng.gen_range(0.0..7200.0));
            if rng.gen_bool(0.2) {
                c.author = "op".into();
            }
            cs.push(c);
        }
        thread(cs)
    }

    #[test]
    fn extraction_matches_oracle() {
        let t = random_thread(5, 120);
        crate::thread::validate_thread(&t).unwrap();
        let all = extract_all(&t);
        for (c, f) in t.comments.iter().zip(&all) {
            assert_eq!(f.raw, oracle(&t, &c.id), "{}", c.id);
            assert!(f.raw[HOURS_SINCE_ROOT] >= f.raw[HOURS_SINCE_PARENT]);
        }
    }

    #[test]
    fn sibling_order_does_not_matter() {
        let t = random_thread(9, 60);
        let mut shuffled = t.clone();
        shuffled.comments.reverse();
        for c in &t.comments {
            assert_eq!(
                extract(&t, &c.id).unwrap().raw,
                extract(&shuffled, &c.id).unwrap().raw
            );
        }
    }

    #[test]
    fn fit_two_points() {
        let s = [
            ContextFeatureVector::from_raw([0.0; 7]),
            ContextFeatureVector::from_raw([2.0; 7]),
        ];
        let n = fit_normalizer(&s).unwrap();
        assert_eq!(n.mean, [1.0; 7]);
        assert_eq!(n.std, [1.0; 7]);
    }

    #[test]
    fn fit_needs_two_samples() {
        assert!(fit_normalizer(&[ContextFeatureVector::default()]).is_err());
    }

    #[test]
    fn constant_dimension_keeps_unit_std() {
        let s: Vec<_> = (0..5)
            .map(|i| {
                let mut r = [0.1; 7];
                r[1] = i as f64;
                ContextFeatureVector::from_raw(r)
            })
            .collect();
        let n = fit_normalizer(&s).unwrap();
        assert_eq!(n.std[0], 1.0);
        assert!((n.std[1] - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn apply_at_mean_and_one_std() {
        let n = Normalizer {
            mean: [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
            std: [0.5, 1.0, 2.0, 4.0, 1.5, 3.0, 0.25],
        };
        let at_mean = n.apply(&ContextFeatureVector::from_raw(n.mean));
        assert_eq!(at_mean.normalized, [0.0; 7]);
        let mut up = n.mean;
        for i in 0..7 {
            up[i] += n.std[i];
        }
        let one = n.apply(&ContextFeatureVector::from_raw(up));
        for v in one.normalized {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    fn random_samples(seed: u64, n: usize) -> Vec<ContextFeatureVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut r = [0.0; 7];
                for (i, v) in r.iter_mut().enumerate() {
                    *v = rng.gen_range(-5.0..5.0) * (i + 1) as f64 + 10.0 * i as f64;
                }
                ContextFeatureVector::from_raw(r)
            })
            .collect()
    }

    #[test]
    fn fit_matches_streaming_oracle() {
        let s = random_samples(3, 1000);
        let n = fit_normalizer(&s).unwrap();
        // Welford's streaming recurrence
        for d in 0..7 {
            let (mut count, mut mean, mut m2) = (0.0f64, 0.0f64, 0.0f64);
            for x in s.iter().map(|v| v.raw[d]) {
                count += 1.0;
                let delta = x - mean;
                mean += delta / count;
                m2 += delta * (x - mean);
            }
            assert!((n.mean[d] - mean).abs() < 1e-12, "mean {d}");
            assert!((n.std[d] - (m2 / count).sqrt()).abs() < 1e-12, "std {d}");
        }
    }

    proptest! {
        #[test]
        fn normalized_fitting_set_is_standardized(seed in 0u64..1000, n in 2usize..300) {
            let s = random_samples(seed, n);
            let norm = fit_normalizer(&s).unwrap();
            let out: Vec<_> = s.iter().map(|f| norm.apply(f)).collect();
            for d in 0..7 {
                let m = out.iter().map(|f| f.normalized[d]).sum::<f64>() / n as f64;
                let v = out.iter().map(|f| (f.normalized[d] - m).powi(2)).sum::<f64>() / n as f64;
                prop_assert!(m.abs() < 1e-10);
                prop_assert!((v - 1.0).abs() < 1e-10);
            }
        }
    }
}
