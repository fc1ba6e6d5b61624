//! CoNLL-2012 coreference metrics (MUC, B³, CEAF-φ4), their average, and
//! span-level analyses.
//!
//! Predicted singleton clusters are removed before scoring. A mention that
//! appears on one side only is an implicit singleton on the other side.
//! Overlapping clusters cannot reach these functions: [`Clustering`]
//! rejects them at construction.

use std::collections::{HashMap, HashSet};
use std::fmt;

use crate::corpus::{Clustering, Span};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricResult {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        MetricResult { precision, recall, f1 }
    }
}

/// Numerators and denominators of one metric, summed over documents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Counts {
    pub precision_num: f64,
    pub precision_den: f64,
    pub recall_num: f64,
    pub recall_den: f64,
    /// Every contributing document had empty gold and predicted clusterings.
    pub both_empty: bool,
}

impl Default for Counts {
    fn default() -> Self {
        Counts {
            precision_num: 0.0,
            precision_den: 0.0,
            recall_num: 0.0,
            recall_den: 0.0,
            both_empty: true,
        }
    }
}

impl Counts {
    fn new(precision: (f64, f64), recall: (f64, f64), both_empty: bool) -> Self {
        Counts {
            precision_num: precision.0,
            precision_den: precision.1,
            recall_num: recall.0,
            recall_den: recall.1,
            both_empty,
        }
    }

    pub fn add(&mut self, other: &Counts) {
        self.precision_num += other.precision_num;
        self.precision_den += other.precision_den;
        self.recall_num += other.recall_num;
        self.recall_den += other.recall_den;
        self.both_empty &= other.both_empty;
    }

    /// Empty denominators give 0, or 1 when both sides were empty.
    pub fn result(&self) -> MetricResult {
        if self.both_empty {
            return MetricResult::new(1.0, 1.0);
        }
        let ratio = |n: f64, d: f64| if d == 0.0 { 0.0 } else { n / d };
        MetricResult::new(
            ratio(self.precision_num, self.precision_den),
            ratio(self.recall_num, self.recall_den),
        )
    }
}

fn prepare(gold: &Clustering, pred: &Clustering) -> (Clustering, bool) {
    let pred = pred.without_singletons();
    let both_empty = gold.is_empty() && pred.is_empty();
    (pred, both_empty)
}

/// `Σ_K (|K| - |p(K)|)` and `Σ_K (|K| - 1)`, where `p(K)` partitions `K` by
/// the clusters of `other`, unmatched mentions forming their own parts.
fn muc_side(keys: &Clustering, other: &Clustering) -> (f64, f64) {
    let map = other.mention_map();
    let (mut num, mut den) = (0.0, 0.0);
    for cluster in keys.clusters() {
        let mut parts = HashSet::new();
        let mut unmatched = 0usize;
        for m in cluster {
            match map.get(m) {
                Some(&c) => {
                    parts.insert(c);
                }
                None => unmatched += 1,
            }
        }
        num += (cluster.len() - parts.len() - unmatched) as f64;
        den += (cluster.len() - 1) as f64;
    }
    (num, den)
}

pub fn muc_counts(gold: &Clustering, pred: &Clustering) -> Counts {
    let (pred, both_empty) = prepare(gold, pred);
    Counts::new(muc_side(&pred, gold), muc_side(gold, &pred), both_empty)
}

pub fn muc(gold: &Clustering, pred: &Clustering) -> MetricResult {
    muc_counts(gold, pred).result()
}

/// `Σ_{m ∈ keys} |K(m) ∩ O(m)| / |K(m)|` and the number of key mentions.
fn b_cubed_side(keys: &Clustering, other: &Clustering) -> (f64, f64) {
    let map = other.mention_map();
    let (mut num, mut den) = (0.0, 0.0);
    for cluster in keys.clusters() {
        let mut overlap: HashMap<usize, usize> = HashMap::new();
        for m in cluster {
            if let Some(&c) = map.get(m) {
                *overlap.entry(c).or_default() += 1;
            }
        }
        let size = cluster.len() as f64;
        num += overlap.values().map(|&k| (k * k) as f64).sum::<f64>() / size;
        den += size;
    }
    (num, den)
}

pub fn b_cubed_counts(gold: &Clustering, pred: &Clustering) -> Counts {
    let (pred, both_empty) = prepare(gold, pred);
    Counts::new(b_cubed_side(&pred, gold), b_cubed_side(gold, &pred), both_empty)
}

pub fn b_cubed(gold: &Clustering, pred: &Clustering) -> MetricResult {
    b_cubed_counts(gold, pred).result()
}

/// `φ4(K, R) = 2|K ∩ R| / (|K| + |R|)`.
pub fn phi4(a: &[Span], b: &[Span]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let b: HashSet<&Span> = b.iter().collect();
    let common = a.iter().filter(|s| b.contains(s)).count();
    2.0 * common as f64 / (a.len() + b.len()) as f64
}

/// Total `φ4` similarity of the optimal one-to-one cluster alignment.
pub fn ceaf_alignment(gold: &Clustering, pred: &Clustering) -> f64 {
    let sim: Vec<Vec<f64>> = gold
        .clusters()
        .iter()
        .map(|k| pred.clusters().iter().map(|r| phi4(k, r)).collect())
        .collect();
    let assignment = max_weight_assignment(&sim);
    assignment
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| sim[i][j]))
        .sum()
}

pub fn ceaf_phi4_counts(gold: &Clustering, pred: &Clustering) -> Counts {
    let (pred, both_empty) = prepare(gold, pred);
    let total = ceaf_alignment(gold, &pred);
    Counts::new((total, pred.len() as f64), (total, gold.len() as f64), both_empty)
}

pub fn ceaf_phi4(gold: &Clustering, pred: &Clustering) -> MetricResult {
    ceaf_phi4_counts(gold, pred).result()
}

/// Mean of the three F1 scores.
pub fn avg_f1(muc: &MetricResult, b_cubed: &MetricResult, ceaf: &MetricResult) -> f64 {
    (muc.f1 + b_cubed.f1 + ceaf.f1) / 3.0
}

/// Maximum-weight matching of rows to columns of a rectangular matrix.
/// Returns, for each row, its column (`None` when there are more rows than
/// columns and the row is left out).
///
/// Shortest augmenting paths with potentials, `O(n² m)` for `n ≤ m`.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| weights[r][c]).collect()).collect();
        let by_col = max_weight_assignment(&transposed);
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        return out;
    }
    // minimise negated weights; 1-based with a virtual column 0
    let cost = |r: usize, c: usize| -weights[r - 1][c - 1];
    let (n, m) = (rows, cols);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut min_to = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for c in 1..=m {
                if !used[c] {
                    let reduced = cost(r0, c) - u[r0] - v[c];
                    if reduced < min_to[c] {
                        min_to[c] = reduced;
                        way[c] = col0;
                    }
                    if min_to[c] < delta {
                        delta = min_to[c];
                        col1 = c;
                    }
                }
            }
            for c in 0..=m {
                if used[c] {
                    u[owner[c]] += delta;
                    v[c] -= delta;
                } else {
                    min_to[c] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for c in 1..=m {
        if owner[c] != 0 {
            out[owner[c] - 1] = Some(c - 1);
        }
    }
    out
}

/// All three metrics for one document or, after [`CorefCounts::add`], a
/// micro-aggregated corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CorefCounts {
    pub muc: Counts,
    pub b_cubed: Counts,
    pub ceaf: Counts,
}

impl CorefCounts {
    pub fn score(gold: &Clustering, pred: &Clustering) -> Self {
        CorefCounts {
            muc: muc_counts(gold, pred),
            b_cubed: b_cubed_counts(gold, pred),
            ceaf: ceaf_phi4_counts(gold, pred),
        }
    }

    pub fn add(&mut self, other: &CorefCounts) {
        self.muc.add(&other.muc);
        self.b_cubed.add(&other.b_cubed);
        self.ceaf.add(&other.ceaf);
    }

    pub fn results(&self) -> CorefResults {
        let (muc, b_cubed, ceaf) = (self.muc.result(), self.b_cubed.result(), self.ceaf.result());
        CorefResults {
            muc,
            b_cubed,
            ceaf,
            avg_f1: avg_f1(&muc, &b_cubed, &ceaf),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorefResults {
    pub muc: MetricResult,
    pub b_cubed: MetricResult,
    pub ceaf: MetricResult,
    pub avg_f1: f64,
}

impl CorefResults {
    /// Column headings matching [`CorefResults`]'s `Display` row.
    pub fn header() -> String {
        format!(
            "{:<24} {:^20} {:^20} {:^20} {:>7}\n{:<24} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>7}",
            "",
            "MUC",
            "B3",
            "CEAF-phi4",
            "",
            "",
            "P",
            "R",
            "F1",
            "P",
            "R",
            "F1",
            "P",
            "R",
            "F1",
            "Avg F1"
        )
    }
}

impl fmt::Display for CorefResults {
    /// Percentages with one decimal: three P/R/F1 blocks and the average.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |x: f64| 100.0 * x;
        for m in [&self.muc, &self.b_cubed, &self.ceaf] {
            write!(f, " {:>6.1} {:>6.1} {:>6.1}", pct(m.precision), pct(m.recall), pct(m.f1))?;
        }
        write!(f, " {:>7.1}", pct(self.avg_f1))
    }
}

/// Accepted spans of one width and how many of them are gold constituents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WidthCount {
    pub accepted: usize,
    pub matched: usize,
}

impl WidthCount {
    /// `None` when no span of this width was accepted.
    pub fn precision(&self) -> Option<f64> {
        (self.accepted > 0).then(|| self.matched as f64 / self.accepted as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConstituencyPrecision {
    /// The document carries no syntactic annotation.
    Unavailable,
    /// Index `w - 1` holds the counts for width `w`.
    ByWidth(Vec<WidthCount>),
}

impl ConstituencyPrecision {
    /// Sums per-width counts; unavailable parts are skipped, and the sum is
    /// unavailable only if every part is.
    pub fn merge(&mut self, other: &ConstituencyPrecision) {
        match (&mut *self, other) {
            (_, ConstituencyPrecision::Unavailable) => {}
            (ConstituencyPrecision::Unavailable, b) => *self = b.clone(),
            (ConstituencyPrecision::ByWidth(a), ConstituencyPrecision::ByWidth(b)) => {
                if a.len() < b.len() {
                    a.resize(b.len(), WidthCount::default());
                }
                for (x, y) in a.iter_mut().zip(b) {
                    x.accepted += y.accepted;
                    x.matched += y.matched;
                }
            }
        }
    }
}

/// Per width `1..=max_width`, the share of accepted spans that exactly
/// match a gold constituent.
pub fn constituency_precision(accepted: &[Span], constituents: Option<&[Span]>, max_width: usize) -> ConstituencyPrecision {
    let Some(constituents) = constituents else {
        return ConstituencyPrecision::Unavailable;
    };
    let gold: HashSet<&Span> = constituents.iter().collect();
    let mut counts = vec![WidthCount::default(); max_width];
    for span in accepted {
        if let Some(c) = counts.get_mut(span.width() - 1) {
            c.accepted += 1;
            c.matched += usize::from(gold.contains(span));
        }
    }
    ConstituencyPrecision::ByWidth(counts)
}
