//! Span enumeration, greedy non-crossing pruning by mention score and
//! antecedent candidate windows.

use std::collections::HashSet;
use std::ops::Range;

use crate::corpus::{Clustering, Document, Span};

/// All sentence-internal spans of width at most `max_width`, in span order.
pub fn enumerate_spans(doc: &Document, max_width: usize) -> Vec<Span> {
    let mut spans = Vec::new();
    for sentence in &doc.sentences {
        for start in sentence.clone() {
            let last = (start + max_width).min(sentence.end);
            spans.extend((start..last).map(|end| Span::new(start, end)));
        }
    }
    spans
}

/// `max(1, floor(λT))`. A small tolerance keeps products such as
/// `0.29 × 100` from rounding down past an integer.
pub fn span_budget(spans_per_word: f64, num_tokens: usize) -> usize {
    let raw = (spans_per_word * num_tokens as f64 + 1e-9).floor();
    (raw as usize).max(1)
}

/// Greedily accepts spans by descending score, earlier span order first on
/// ties, skipping any span that crosses one already accepted, until
/// `budget` spans are accepted.
///
/// Returns indices into `spans` sorted by span order. `spans` must be in
/// span order and `scores` parallel to it.
pub fn prune_spans(spans: &[Span], scores: &[f64], budget: usize) -> Vec<usize> {
    assert_eq!(spans.len(), scores.len(), "one score per span");
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut accepted: Vec<usize> = Vec::with_capacity(budget.min(spans.len()));
    for idx in order {
        if accepted.len() >= budget {
            break;
        }
        let span = spans[idx];
        if accepted.iter().all(|&a| !spans[a].crosses(&span)) {
            accepted.push(idx);
        }
    }
    accepted.sort_unstable();
    accepted
}

/// Positions of the candidate antecedents of the accepted span at
/// `position`: the nearest `max_antecedents` preceding accepted spans.
pub fn candidate_antecedents(position: usize, max_antecedents: usize) -> Range<usize> {
    position.saturating_sub(max_antecedents)..position
}

/// Gold mentions of width at most `max_width`, in span order; used instead
/// of scored pruning when oracle mentions are requested.
pub fn oracle_spans(doc: &Document, max_width: usize) -> Vec<Span> {
    let mut spans: Vec<Span> = doc
        .gold
        .mentions()
        .filter(|s| s.width() <= max_width && doc.within_one_sentence(*s))
        .collect();
    spans.sort_unstable();
    spans
}

/// Fraction of gold mentions among `accepted`; 1 when there are none.
pub fn mention_recall(accepted: &[Span], gold: &Clustering) -> f64 {
    let total = gold.num_mentions();
    if total == 0 {
        return 1.0;
    }
    let accepted: HashSet<Span> = accepted.iter().copied().collect();
    let found = gold.mentions().filter(|m| accepted.contains(m)).count();
    found as f64 / total as f64
}
