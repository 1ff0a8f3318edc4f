//! Post-hoc reading of a trained latent-mode model: which basis each
//! comment lands on, what the comments of each basis look like, and how far
//! the text gate opens in each group of modes.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FEATURE_NAMES, N_CHILDREN, N_FEATURES, SUBTREE_HEIGHT};
use crate::model::{ContextEncoder, LabeledExample, Model, TextMode};
use crate::numerics::argmax;
use crate::quantizer::N_LEVELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeGroup {
    Low,
    Medium,
    High,
}

impl ModeGroup {
    pub const ALL: [ModeGroup; 3] = [ModeGroup::Low, ModeGroup::Medium, ModeGroup::High];

    /// Levels 0–1 are low and 6–7 high.
    pub fn of_level(level: usize) -> Self {
        match level {
            0 | 1 => ModeGroup::Low,
            6 | 7 => ModeGroup::High,
            _ => ModeGroup::Medium,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModeGroup::Low => "low",
            ModeGroup::Medium => "medium",
            ModeGroup::High => "high",
        }
    }
}

fn require_latent(model: &Model) -> Result<()> {
    if model.config.context_encoder != ContextEncoder::LatentModes {
        return Err(Error::Analysis(format!(
            "mode analysis needs the latent-mode encoder, model uses {:?}",
            model.config.context_encoder
        )));
    }
    Ok(())
}

/// Index of the basis with the largest attention coefficient (lowest index
/// on ties), per comment.
pub fn assign_modes(model: &Model, examples: &[LabeledExample]) -> Result<Vec<usize>> {
    require_latent(model)?;
    Ok(examples
        .iter()
        .map(|ex| argmax(model.predict(ex).1.attention().expect("latent trace")))
        .collect())
}

pub fn label_histograms(assignments: &[usize], labels: &[usize], n_modes: usize) -> Vec<[usize; N_LEVELS]> {
    let mut h = vec![[0; N_LEVELS]; n_modes];
    for (&k, &l) in assignments.iter().zip(labels) {
        h[k][l] += 1;
    }
    h
}

pub fn group_modes(histograms: &[[usize; N_LEVELS]]) -> Vec<ModeGroup> {
    histograms.iter().map(|h| ModeGroup::of_level(argmax_count(h))).collect()
}

fn argmax_count(h: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in h.iter().enumerate() {
        if c > h[best] {
            best = i;
        }
    }
    best
}

/// Per-mode means of the raw features; modes without comments get zeros.
pub fn mode_feature_means(assignments: &[usize], raw: &[[f64; N_FEATURES]], n_modes: usize) -> Vec<[f64; N_FEATURES]> {
    let mut sums = vec![[0.0; N_FEATURES]; n_modes];
    let mut counts = vec![0usize; n_modes];
    for (&k, f) in assignments.iter().zip(raw) {
        counts[k] += 1;
        for (s, v) in sums[k].iter_mut().zip(f) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeClusterReport {
    pub n_modes: usize,
    pub assignments: Vec<usize>,
    pub histograms: Vec<[usize; N_LEVELS]>,
    pub groups: Vec<ModeGroup>,
    pub feature_means: Vec<[f64; N_FEATURES]>,
    pub counts: Vec<usize>,
}

impl ModeClusterReport {
    pub fn build(model: &Model, examples: &[LabeledExample]) -> Result<Self> {
        let assignments = assign_modes(model, examples)?;
        let n_modes = model.config.n_bases;
        let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
        let raw: Vec<[f64; N_FEATURES]> = examples.iter().map(|e| e.features.raw).collect();
        Ok(Self::from_assignments(assignments, &labels, &raw, n_modes))
    }

    pub fn from_assignments(assignments: Vec<usize>, labels: &[usize], raw: &[[f64; N_FEATURES]], n_modes: usize) -> Self {
        let histograms = label_histograms(&assignments, labels, n_modes);
        let groups = group_modes(&histograms);
        let feature_means = mode_feature_means(&assignments, raw, n_modes);
        let counts = histograms.iter().map(|h| h.iter().sum()).collect();
        ModeClusterReport {
            n_modes,
            assignments,
            histograms,
            groups,
            feature_means,
            counts,
        }
    }

    /// Modes ordered by group (low, medium, high), then by descending
    /// sample count, then by index.
    pub fn display_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n_modes).collect();
        order.sort_by_key(|&k| (self.groups[k], std::cmp::Reverse(self.counts[k]), k));
        order
    }

    pub fn group_summaries(&self, raw: &[[f64; N_FEATURES]]) -> Vec<GroupSummary> {
        ModeGroup::ALL
            .iter()
            .map(|&g| {
                let members: Vec<&[f64; N_FEATURES]> = self
                    .assignments
                    .iter()
                    .zip(raw)
                    .filter(|(&k, _)| self.groups[k] == g)
                    .map(|(_, f)| f)
                    .collect();
                let mut means = [0.0; N_FEATURES];
                for f in &members {
                    for (m, v) in means.iter_mut().zip(f.iter()) {
                        *m += v;
                    }
                }
                if !members.is_empty() {
                    means.iter_mut().for_each(|m| *m /= members.len() as f64);
                }
                let children_per_height = (means[SUBTREE_HEIGHT] > 0.0).then(|| means[N_CHILDREN] / means[SUBTREE_HEIGHT]);
                GroupSummary {
                    group: g,
                    count: members.len(),
                    feature_means: means,
                    children_per_height,
                }
            })
            .collect()
    }

    pub fn label_distributions_csv(&self) -> String {
        let mut out = String::from("mode,group,count");
        for l in 0..N_LEVELS {
            write!(out, ",level_{l}").unwrap();
        }
        out.push('\n');
        for k in self.display_order() {
            write!(out, "{},{},{}", k, self.groups[k].as_str(), self.counts[k]).unwrap();
            for c in self.histograms[k] {
                write!(out, ",{c}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn mode_feature_means_csv(&self) -> String {
        let mut out = format!("mode,group,count,{}\n", FEATURE_NAMES.join(","));
        for k in self.display_order() {
            write!(out, "{},{},{}", k, self.groups[k].as_str(), self.counts[k]).unwrap();
            for v in self.feature_means[k] {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Feature means over all comments of one group of modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: ModeGroup,
    pub count: usize,
    pub feature_means: [f64; N_FEATURES],
    /// mean n_children / mean subtree_height; absent when the height mean is 0.
    pub children_per_height: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRow {
    pub group: ModeGroup,
    pub count: usize,
    pub mean_gate: Option<f64>,
    pub relative: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub rows: Vec<GateRow>,
}

impl GateReport {
    pub fn row(&self, g: ModeGroup) -> &GateRow {
        self.rows.iter().find(|r| r.group == g).expect("every group has a row")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,count,mean_gate,relative\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.group.as_str(), r.count, opt(r.mean_gate), opt(r.relative)).unwrap();
        }
        out
    }
}

pub fn gate_values(model: &Model, examples: &[LabeledExample]) -> Vec<f64> {
    examples.iter().map(|ex| model.predict(ex).1.gate).collect()
}

/// Mean gate per group, relative to the low group's mean.
pub fn gate_report(model: &Model, examples: &[LabeledExample], assignments: &[usize], groups: &[ModeGroup]) -> Result<GateReport> {
    if model.config.text_mode != TextMode::Gated {
        return Err(Error::Analysis("gate report needs a gated text model".into()));
    }
    gate_report_from_values(&gate_values(model, examples), assignments, groups)
}

pub fn gate_report_from_values(gates: &[f64], assignments: &[usize], groups: &[ModeGroup]) -> Result<GateReport> {
    let mut sum = [0.0; 3];
    let mut count = [0usize; 3];
    for (&g, &k) in gates.iter().zip(assignments) {
        let i = groups[k] as usize;
        sum[i] += g;
        count[i] += 1;
    }
    if count[ModeGroup::Low as usize] == 0 {
        return Err(Error::Analysis(format!(
            "no comments fall in a low-karma mode (group sizes low/medium/high = {}/{}/{}); relative gates are undefined",
            count[0], count[1], count[2]
        )));
    }
    let low = sum[0] / count[0] as f64;
    let rows = ModeGroup::ALL
        .iter()
        .map(|&g| {
            let i = g as usize;
            let mean = (count[i] > 0).then(|| sum[i] / count[i] as f64);
            GateRow {
                group: g,
                count: count[i],
                mean_gate: mean,
                relative: mean.map(|m| if g == ModeGroup::Low { 1.0 } else { m / low }),
            }
        })
        .collect();
    Ok(GateReport { rows })
}

/// One row per comment: comment_id, thread_id, mode, group, the seven raw
/// features, label, gate (empty without a gated text path).
pub fn clusters_csv(report: &ModeClusterReport, examples: &[LabeledExample], gates: Option<&[f64]>) -> String {
    let mut out = format!("comment_id,thread_id,mode,group,{},label,gate\n", FEATURE_NAMES.join(","));
    for (i, (ex, &k)) in examples.iter().zip(&report.assignments).enumerate() {
        write!(out, "{},{},{},{}", ex.comment_id, ex.thread_id, k, report.groups[k].as_str()).unwrap();
        for v in ex.features.raw {
            write!(out, ",{v}").unwrap();
        }
        let gate = gates.map_or(String::new(), |g| g[i].to_string());
        writeln!(out, ",{},{}", ex.label, gate).unwrap();
    }
    out
}

pub const ANALYSIS_FILES: [&str; 4] = [
    "clusters.csv",
    "mode_feature_means.csv",
    "label_distributions.csv",
    "gate_report.csv",
];

/// Everything the analysis produces for one model and example set.
#[derive(Debug, Clone)]
pub struct AnalysisOutput {
    pub modes: ModeClusterReport,
    pub gates: Option<Vec<f64>>,
    pub gate_report: Option<GateReport>,
    pub groups: Vec<GroupSummary>,
}

pub fn analyze(model: &Model, examples: &[LabeledExample]) -> Result<AnalysisOutput> {
    let modes = ModeClusterReport::build(model, examples)?;
    let raw: Vec<[f64; N_FEATURES]> = examples.iter().map(|e| e.features.raw).collect();
    let groups = modes.group_summaries(&raw);
    let (gates, gate_report) = if model.config.text_mode == TextMode::Gated {
        let g = gate_values(model, examples);
        let r = gate_report_from_values(&g, &modes.assignments, &modes.groups)?;
        (Some(g), Some(r))
    } else {
        (None, None)
    };
    Ok(AnalysisOutput {
        modes,
        gates,
        gate_report,
        groups,
    })
}

/// Writes the four CSV files into `dir`; the gate report file holds only
/// its header when the model has no gate. Returns the written paths.
pub fn export(out: &AnalysisOutput, examples: &[LabeledExample], dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let gate_csv = out
        .gate_report
        .as_ref()
        .map_or_else(|| "group,count,mean_gate,relative\n".to_string(), GateReport::to_csv);
    let contents = [
        clusters_csv(&out.modes, examples, out.gates.as_deref()),
        out.modes.mode_feature_means_csv(),
        out.modes.label_distributions_csv(),
        gate_csv,
    ];
    let mut paths = Vec::new();
    for (name, body) in ANALYSIS_FILES.iter().zip(contents) {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        paths.push(p);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{micro_config, micro_examples, MICRO_VOCAB};
    use crate::features::HOURS_SINCE_ROOT;
    use crate::numerics::sigmoid;
    use proptest::prelude::*;

    fn latent(text: TextMode, k: usize) -> Model {
        let mut cfg = micro_config(ContextEncoder::LatentModes, text, 1);
        cfg.n_bases = k;
        Model::new(cfg).unwrap()
    }

    #[test]
    fn single_basis_takes_everything() {
        let m = latent(TextMode::Gated, 1);
        let ex = micro_examples(10, MICRO_VOCAB, 2);
        assert_eq!(assign_modes(&m, &ex).unwrap(), vec![0; 10]);
    }

    #[test]
    fn tied_attention_goes_to_first_basis() {
        // v = 0 makes every score equal
        let mut m = latent(TextMode::Gated, 2);
        m.param_mut("attention.v").unwrap().fill(0.0);
        let ex = micro_examples(5, MICRO_VOCAB, 3);
        assert_eq!(assign_modes(&m, &ex).unwrap(), vec![0; 5]);
    }

    #[test]
    fn assignments_are_repeatable() {
        let m = latent(TextMode::Gated, 3);
        let ex = micro_examples(20, MICRO_VOCAB, 4);
        assert_eq!(assign_modes(&m, &ex).unwrap(), assign_modes(&m, &ex).unwrap());
    }

    #[test]
    fn non_latent_model_rejected() {
        let m = Model::new(micro_config(ContextEncoder::Feedforward { layers: 1 }, TextMode::Gated, 1)).unwrap();
        assert!(matches!(assign_modes(&m, &micro_examples(2, MICRO_VOCAB, 1)), Err(Error::Analysis(_))));
    }

    #[test]
    fn grouping_by_dominant_level() {
        let mut h = [[0usize; N_LEVELS]; 3];
        h[0][7] = 5;
        h[1][3] = 5;
        h[2][1] = 4;
        h[2][6] = 4;
        assert_eq!(group_modes(&h), vec![ModeGroup::High, ModeGroup::Medium, ModeGroup::Low]);
    }

    #[test]
    fn feature_means_by_mode() {
        let mut a = [0.0; N_FEATURES];
        let mut b = [0.0; N_FEATURES];
        a[HOURS_SINCE_ROOT] = 1.0;
        b[HOURS_SINCE_ROOT] = 3.0;
        let c = [4.0; N_FEATURES];
        let m = mode_feature_means(&[0, 0, 1], &[a, b, c], 3);
        assert_eq!(m[0][HOURS_SINCE_ROOT], 2.0);
        assert_eq!(m[1], c);
        assert_eq!(m[2], [0.0; N_FEATURES]);
    }

    #[test]
    fn zero_gate_weights_give_unit_relatives() {
        let mut m = latent(TextMode::Gated, 3);
        m.param_mut("gate.w").unwrap().fill(0.0);
        let ex = micro_examples(30, MICRO_VOCAB, 5);
        let assignments: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let groups = [ModeGroup::Low, ModeGroup::Medium, ModeGroup::High];
        let r = gate_report(&m, &ex, &assignments, &groups).unwrap();
        for row in &r.rows {
            assert_eq!(row.mean_gate, Some(0.5));
            assert_eq!(row.relative, Some(1.0));
        }
    }

    #[test]
    fn gate_report_matches_direct_sigmoid_means() {
        let m = latent(TextMode::Gated, 3);
        let ex = micro_examples(40, MICRO_VOCAB, 6);
        let assignments = assign_modes(&m, &ex).unwrap();
        let groups = [ModeGroup::Low, ModeGroup::High, ModeGroup::Medium];
        let w = m.param("gate.w").unwrap().data.clone();
        let mut sums = [0.0; 3];
        let mut counts = [0.0; 3];
        for (e, &k) in ex.iter().zip(&assignments) {
            let ct = m.predict(e).1.c_tilde;
            let g = sigmoid(w.iter().zip(&ct).map(|(a, b)| a * b).sum());
            sums[groups[k] as usize] += g;
            counts[groups[k] as usize] += 1.0;
        }
        let forced: Vec<usize> = vec![0; ex.len()];
        // with every comment in the low mode, the relative is 1 and the mean is the grand mean
        let all_low = gate_report(&m, &ex, &forced, &groups).unwrap();
        let grand = sums.iter().sum::<f64>() / ex.len() as f64;
        assert!((all_low.row(ModeGroup::Low).mean_gate.unwrap() - grand).abs() < 1e-12);
        if counts[0] > 0.0 {
            let r = gate_report(&m, &ex, &assignments, &groups).unwrap();
            for g in ModeGroup::ALL {
                let i = g as usize;
                if counts[i] > 0.0 {
                    let want = (sums[i] / counts[i]) / (sums[0] / counts[0]);
                    assert!((r.row(g).relative.unwrap() - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn empty_low_group_is_an_error() {
        let r = gate_report_from_values(&[0.3, 0.4], &[0, 1], &[ModeGroup::High, ModeGroup::Medium]);
        assert!(matches!(r, Err(Error::Analysis(m)) if m.contains("low")));
    }

    #[test]
    fn ungated_model_has_no_gate_report() {
        let m = latent(TextMode::Ungated, 3);
        let ex = micro_examples(3, MICRO_VOCAB, 1);
        assert!(gate_report(&m, &ex, &[0, 0, 0], &[ModeGroup::Low; 3]).is_err());
    }

    #[test]
    fn cluster_csv_rows_and_header() {
        let m = latent(TextMode::Gated, 3);
        let ex = micro_examples(12, MICRO_VOCAB, 7);
        let report = ModeClusterReport::build(&m, &ex).unwrap();
        let csv = clusters_csv(&report, &ex, Some(&gate_values(&m, &ex)));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 13);
        assert_eq!(
            lines[0],
            "comment_id,thread_id,mode,group,is_op,n_children,subtree_size,subtree_height,depth,hours_since_root,hours_since_parent,label,gate"
        );
        assert_eq!(csv, clusters_csv(&report, &ex, Some(&gate_values(&m, &ex))));
    }

    #[test]
    fn export_writes_four_files() {
        let mut m = latent(TextMode::Gated, 2);
        m.param_mut("attention.v").unwrap().fill(0.0);
        let mut ex = micro_examples(6, MICRO_VOCAB, 8);
        ex.iter_mut().for_each(|e| e.label = 0);
        let out = analyze(&m, &ex).unwrap();
        let dir = std::env::temp_dir().join(format!("karmalevel-analysis-{}", std::process::id()));
        let paths = export(&out, &ex, &dir).unwrap();
        assert_eq!(paths.len(), 4);
        let gate = std::fs::read_to_string(dir.join("gate_report.csv")).unwrap();
        assert!(gate.lines().nth(1).unwrap().starts_with("low,6,"));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn group_summary_ratio() {
        let mut a = [0.0; N_FEATURES];
        a[N_CHILDREN] = 4.0;
        a[SUBTREE_HEIGHT] = 2.0;
        let report = ModeClusterReport::from_assignments(vec![0, 1], &[7, 0], &[a, [0.0; N_FEATURES]], 2);
        let s = report.group_summaries(&[a, [0.0; N_FEATURES]]);
        assert_eq!(s[ModeGroup::High as usize].children_per_height, Some(2.0));
        assert_eq!(s[ModeGroup::Low as usize].children_per_height, None);
        assert_eq!(s[ModeGroup::Medium as usize].count, 0);
    }

    proptest! {
        #[test]
        fn partition_and_order_invariance(
            rows in prop::collection::vec((0usize..4, 0usize..8), 1..80),
            seed in any::<u64>(),
        ) {
            let (a, l): (Vec<usize>, Vec<usize>) = rows.iter().copied().unzip();
            let raw: Vec<[f64; N_FEATURES]> = l.iter().map(|&x| [x as f64; N_FEATURES]).collect();
            let r = ModeClusterReport::from_assignments(a.clone(), &l, &raw, 4);
            prop_assert_eq!(r.counts.iter().sum::<usize>(), rows.len());
            for (h, &c) in r.histograms.iter().zip(&r.counts) {
                prop_assert_eq!(h.iter().sum::<usize>(), c);
            }
            // permuting comments leaves histograms and tags unchanged
            let mut perm: Vec<usize> = (0..rows.len()).collect();
            let mut s = seed;
            for i in (1..perm.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let pa: Vec<usize> = perm.iter().map(|&i| a[i]).collect();
            let pl: Vec<usize> = perm.iter().map(|&i| l[i]).collect();
            let praw: Vec<_> = perm.iter().map(|&i| raw[i]).collect();
            let p = ModeClusterReport::from_assignments(pa, &pl, &praw, 4);
            prop_assert_eq!(&p.histograms, &r.histograms);
            prop_assert_eq!(&p.groups, &r.groups);
        }
    }
}
