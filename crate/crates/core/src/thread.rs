//! Tree-structured discussion threads: data types, JSONL ingestion and
//! structural validation.
//!
//! A thread is a root post plus a flat list of comments. Each comment names
//! its parent by id; the empty string names the root post. Conventions used
//! throughout the crate:
//!
//! * `subtree_size` counts the comment itself plus all of its descendants,
//! * `subtree_height` is 0 for a leaf,
//! * the root post has depth 0, so a direct reply to it has depth 1.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedToken {
    #[serde(rename = "w")]
    pub word: String,
    #[serde(rename = "l")]
    pub lemma: String,
    #[serde(rename = "p")]
    pub pos: String,
}

impl AnnotatedToken {
    pub fn new(word: impl Into<String>, lemma: impl Into<String>, pos: impl Into<String>) -> Self {
        AnnotatedToken {
            word: word.into(),
            lemma: lemma.into(),
            pos: pos.into(),
        }
    }
}

/// Fallback annotation for raw text: sentences end at `.`, `!` or `?`,
/// tokens are whitespace separated, the lemma is the lowercased word and
/// the POS tag is left empty.
pub fn annotate_whitespace(text: &str) -> Vec<Vec<AnnotatedToken>> {
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    for raw in text.split_whitespace() {
        let ends = raw.ends_with(['.', '!', '?']);
        current.push(AnnotatedToken::new(raw, raw.to_lowercase(), ""));
        if ends {
            sentences.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    sentences
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    pub id: String,
    /// Empty when the comment replies to the root post.
    pub parent_id: String,
    pub author: String,
    /// Seconds since the root post.
    pub time_s: f64,
    pub karma: i64,
    pub sentences: Vec<Vec<AnnotatedToken>>,
}

impl Comment {
    pub fn is_top_level(&self) -> bool {
        self.parent_id.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thread {
    pub thread_id: String,
    pub subreddit: String,
    pub root_author: String,
    pub comments: Vec<Comment>,
}

/// A broken structural invariant of a [`Thread`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateId(String),
    UnresolvedParent { id: String, parent_id: String },
    Cycle(String),
    EarlierThanParent(String),
    InvalidTime(String),
    EmptyWord(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId(id) => write!(f, "duplicate id {id:?}"),
            Violation::UnresolvedParent { id, parent_id } => {
                write!(f, "unresolved parent {parent_id:?} of comment {id:?}")
            }
            Violation::Cycle(id) => write!(f, "cycle through comment {id:?}"),
            Violation::EarlierThanParent(id) => {
                write!(f, "comment {id:?} is timestamped before its parent")
            }
            Violation::InvalidTime(id) => {
                write!(f, "comment {id:?} has a negative or non-finite time")
            }
            Violation::EmptyWord(id) => write!(f, "comment {id:?} contains an empty token"),
        }
    }
}

/// Checks every structural invariant of a thread.
pub fn validate_thread(thread: &Thread) -> Result<(), Violation> {
    let mut index: HashMap<&str, usize> = HashMap::with_capacity(thread.comments.len());
    for (i, c) in thread.comments.iter().enumerate() {
        if index.insert(c.id.as_str(), i).is_some() {
            return Err(Violation::DuplicateId(c.id.clone()));
        }
    }
    for c in &thread.comments {
        if !(c.time_s.is_finite() && c.time_s >= 0.0) {
            return Err(Violation::InvalidTime(c.id.clone()));
        }
        if c.sentences.iter().flatten().any(|t| t.word.is_empty()) {
            return Err(Violation::EmptyWord(c.id.clone()));
        }
        if !c.is_top_level() && !index.contains_key(c.parent_id.as_str()) {
            return Err(Violation::UnresolvedParent {
                id: c.id.clone(),
                parent_id: c.parent_id.clone(),
            });
        }
    }

    // 0 = unvisited, 1 = on the current walk, 2 = known to reach the root.
    let mut state = vec![0u8; thread.comments.len()];
    for start in 0..thread.comments.len() {
        let mut walk = Vec::new();
        let mut cur = Some(start);
        while let Some(i) = cur {
            match state[i] {
                2 => break,
                1 => return Err(Violation::Cycle(thread.comments[i].id.clone())),
                _ => {}
            }
            state[i] = 1;
            walk.push(i);
            let c = &thread.comments[i];
            cur = if c.is_top_level() {
                None
            } else {
                Some(index[c.parent_id.as_str()])
            };
        }
        for i in walk {
            state[i] = 2;
        }
    }

    for c in &thread.comments {
        if !c.is_top_level() {
            let parent = &thread.comments[index[c.parent_id.as_str()]];
            if c.time_s < parent.time_s {
                return Err(Violation::EarlierThanParent(c.id.clone()));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStats {
    pub n_children: usize,
    pub subtree_size: usize,
    pub subtree_height: usize,
    pub depth: usize,
}

/// Parent/child adjacency of a validated thread, addressed by position in
/// `thread.comments`.
#[derive(Debug, Clone)]
pub struct ThreadIndex {
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    pub top_level: Vec<usize>,
    pub stats: Vec<NodeStats>,
    positions: HashMap<String, usize>,
}

impl ThreadIndex {
    /// Builds the index. The thread must already satisfy [`validate_thread`].
    pub fn new(thread: &Thread) -> Self {
        let n = thread.comments.len();
        let positions: HashMap<String, usize> = thread
            .comments
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.clone(), i))
            .collect();
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut top_level = Vec::new();
        for (i, c) in thread.comments.iter().enumerate() {
            if c.is_top_level() {
                top_level.push(i);
            } else {
                let p = positions[&c.parent_id];
                parent[i] = Some(p);
                children[p].push(i);
            }
        }

        // Breadth-first order from the root; reversed, it visits children
        // before parents.
        let mut order = Vec::with_capacity(n);
        let mut depth = vec![0usize; n];
        for &t in &top_level {
            depth[t] = 1;
            order.push(t);
        }
        let mut head = 0;
        while head < order.len() {
            let i = order[head];
            head += 1;
            for &ch in &children[i] {
                depth[ch] = depth[i] + 1;
                order.push(ch);
            }
        }

        let mut stats: Vec<NodeStats> = (0..n)
            .map(|i| NodeStats {
                n_children: children[i].len(),
                subtree_size: 1,
                subtree_height: 0,
                depth: depth[i],
            })
            .collect();
        for &i in order.iter().rev() {
            if let Some(p) = parent[i] {
                stats[p].subtree_size += stats[i].subtree_size;
                stats[p].subtree_height = stats[p].subtree_height.max(stats[i].subtree_height + 1);
            }
        }

        ThreadIndex {
            parent,
            children,
            top_level,
            stats,
            positions,
        }
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }
}

/// Per-comment structural statistics keyed by comment id.
pub fn subtree_stats(thread: &Thread) -> BTreeMap<String, NodeStats> {
    let index = ThreadIndex::new(thread);
    thread
        .comments
        .iter()
        .zip(index.stats)
        .map(|(c, s)| (c.id.clone(), s))
        .collect()
}

/// Reads a JSONL thread file, validating every thread.
pub fn parse_threads(path: impl AsRef<Path>) -> Result<Vec<Thread>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_threads(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_threads(reader: impl BufRead) -> Result<Vec<Thread>> {
    let mut threads = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let thread: Thread = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        validate_thread(&thread).map_err(|v| Error::InvalidThread {
            thread_id: thread.thread_id.clone(),
            violation: v.to_string(),
        })?;
        threads.push(thread);
    }
    Ok(threads)
}

/// Canonical JSONL: one compact object per line, fields in schema order.
pub fn write_threads(mut writer: impl Write, threads: &[Thread]) -> std::io::Result<()> {
    for t in threads {
        serde_json::to_writer(&mut writer, t)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_threads(path: impl AsRef<Path>, threads: &[Thread]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_threads(&mut w, threads).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}


#[cfg(test)]
mod tests {
    use super::fixtures::{comment, thread};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_thread_is_valid() {
        assert_eq!(validate_thread(&thread(vec![])), Ok(()));
    }

    #[test]
    fn detects_cycle() {
        let t = thread(vec![comment("a", "b", 0.0), comment("b", "a", 0.0)]);
        assert!(matches!(validate_thread(&t), Err(Violation::Cycle(_))));
        assert!(validate_thread(&t).unwrap_err().to_string().contains("cycle"));
    }

    #[test]
    fn detects_self_parent() {
        let t = thread(vec![comment("a", "a", 0.0)]);
        assert!(matches!(validate_thread(&t), Err(Violation::Cycle(_))));
    }

    #[test]
    fn detects_duplicate_id() {
        let t = thread(vec![comment("a", "", 0.0), comment("a", "", 1.0)]);
        let v = validate_thread(&t).unwrap_err();
        assert!(v.to_string().contains("duplicate id"));
    }

    #[test]
    fn detects_unresolved_parent() {
        let t = thread(vec![comment("a", "zz", 0.0)]);
        let v = validate_thread(&t).unwrap_err();
        assert!(v.to_string().contains("unresolved parent"));
    }

    #[test]
    fn child_must_not_precede_parent() {
        let t = thread(vec![comment("a", "", 10.0), comment("b", "a", 5.0)]);
        assert!(matches!(
            validate_thread(&t),
            Err(Violation::EarlierThanParent(_))
        ));
        // siblings may be out of order
        let t = thread(vec![
            comment("a", "", 10.0),
            comment("b", "a", 50.0),
            comment("c", "a", 20.0),
        ]);
        assert_eq!(validate_thread(&t), Ok(()));
    }

    #[test]
    fn stats_small_tree() {
        let t = thread(vec![
            comment("A", "", 0.0),
            comment("B", "A", 1.0),
            comment("C", "A", 2.0),
        ]);
        let s = subtree_stats(&t);
        assert_eq!(
            s["A"],
            NodeStats {
                n_children: 2,
                subtree_size: 3,
                subtree_height: 1,
                depth: 1
            }
        );
        assert_eq!(
            s["B"],
            NodeStats {
                n_children: 0,
                subtree_size: 1,
                subtree_height: 0,
                depth: 2
            }
        );
    }

    fn random_tree(n: usize, seed: u64) -> Thread {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut comments = Vec::with_capacity(n);
        for i in 0..n {
            let parent = if i == 0 || rng.gen_bool(0.2) {
                String::new()
            } else {
                format!("c{}", rng.gen_range(0..i))
            };
            comments.push(comment(&format!("c{i}"), &parent, i as f64));
        }
        thread(comments)
    }

    fn oracle(t: &Thread, id: &str, depth: usize) -> (usize, usize, usize) {
        // (size, height, n_children) by plain recursion over the comment list
        let kids: Vec<&Comment> = t.comments.iter().filter(|c| c.parent_id == id).collect();
        let mut size = 1;
        let mut height = 0;
        for k in &kids {
            let (s, h, _) = oracle(t, &k.id, depth + 1);
            size += s;
            height = height.max(h + 1);
        }
        (size, height, kids.len())
    }

    fn oracle_depth(t: &Thread, id: &str) -> usize {
        let c = t.comments.iter().find(|c| c.id == id).unwrap();
        if c.parent_id.is_empty() {
            1
        } else {
            1 + oracle_depth(t, &c.parent_id)
        }
    }

    #[test]
    fn stats_match_recursive_oracle() {
        let t = random_tree(200, 11);
        validate_thread(&t).unwrap();
        let stats = subtree_stats(&t);
        let mut top_total = 0;
        for c in &t.comments {
            let (size, height, kids) = oracle(&t, &c.id, 0);
            let s = stats[&c.id];
            assert_eq!(s.subtree_size, size, "{}", c.id);
            assert_eq!(s.subtree_height, height, "{}", c.id);
            assert_eq!(s.n_children, kids);
            assert_eq!(s.depth, oracle_depth(&t, &c.id));
            if c.is_top_level() {
                top_total += s.subtree_size;
            }
        }
        assert_eq!(top_total, t.comments.len());
    }

    #[test]
    fn parse_minimal_line() {
        let line = r#"{"thread_id":"t1","subreddit":"s","root_author":"op","comments":[{"id":"a","parent_id":"","author":"x","time_s":3.5,"karma":4,"sentences":[[{"w":"Hi","l":"hi","p":"UH"}]]}]}"#;
        let threads = read_threads(line.as_bytes()).unwrap();
        assert_eq!(threads.len(), 1);
        assert_eq!(threads[0].comments.len(), 1);
        assert_eq!(threads[0].comments[0].sentences[0][0].lemma, "hi");
    }

    #[test]
    fn parse_reports_unresolved_parent() {
        let line = r#"{"thread_id":"t1","subreddit":"s","root_author":"op","comments":[{"id":"a","parent_id":"q","author":"x","time_s":0,"karma":4,"sentences":[]}]}"#;
        let err = read_threads(line.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("unresolved parent"), "{err}");
        assert!(err.contains("t1"), "{err}");
    }

    #[test]
    fn parse_rejects_missing_karma_with_line_number() {
        let good = r#"{"thread_id":"t1","subreddit":"s","root_author":"op","comments":[]}"#;
        let bad = r#"{"thread_id":"t2","subreddit":"s","root_author":"op","comments":[{"id":"a","parent_id":"","author":"x","time_s":0,"sentences":[]}]}"#;
        let input = format!("{good}\n{bad}\n");
        match read_threads(input.as_bytes()) {
            Err(Error::MalformedLine { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("karma"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn whitespace_fallback_splits_sentences() {
        let s = annotate_whitespace("Hello there. How are you? fine");
        assert_eq!(s.len(), 3);
        assert_eq!(s[0][0].lemma, "hello");
        assert_eq!(s[1].len(), 3);
        assert!(s[2][0].pos.is_empty());
    }
}
