//! Antecedent decoding, cluster recovery, two-stage ensembling and the
//! prediction sidecar.

use std::fmt::Write as _;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Clustering, Document, Span};
use crate::diffcore::{softmax, Graph};
use crate::model::{CorefModel, ModelError, Pruning};
use crate::nn::Phase;
use crate::pruner::{prune_spans, span_budget};
use crate::scorer::{coreference_score, EPSILON_SCORE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Antecedent {
    Epsilon,
    /// Position in the accepted-span list.
    Span(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AntecedentDecision {
    pub best: Antecedent,
    /// `P(y_i = ε)` followed by the candidates in window order.
    pub distribution: Vec<f64>,
}

/// Highest-scoring antecedent per span, with `s(i, ε) = 0`. Ties go to ε,
/// then to the nearest candidate.
///
/// `scores[i][k]` is `s(i, j)` for the `k`-th position `j` of `candidates[i]`.
pub fn decode_antecedents(scores: &[Vec<f64>], candidates: &[Range<usize>]) -> Vec<AntecedentDecision> {
    scores
        .iter()
        .zip(candidates)
        .map(|(row, window)| {
            assert_eq!(row.len(), window.len(), "one score per candidate");
            let mut best = Antecedent::Epsilon;
            let mut best_score = EPSILON_SCORE;
            for (k, j) in window.clone().enumerate().rev() {
                if row[k] > best_score {
                    best = Antecedent::Span(j);
                    best_score = row[k];
                }
            }
            let mut logits = Vec::with_capacity(row.len() + 1);
            logits.push(EPSILON_SCORE);
            logits.extend_from_slice(row);
            AntecedentDecision {
                best,
                distribution: softmax(&logits),
            }
        })
        .collect()
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Connected components of the predicted links; singletons are dropped.
pub fn recover_clusters(spans: &[Span], decisions: &[AntecedentDecision]) -> Clustering {
    let mut uf = UnionFind::new(spans.len());
    for (i, d) in decisions.iter().enumerate() {
        if let Antecedent::Span(j) = d.best {
            uf.union(i, j);
        }
    }
    let mut groups: Vec<Vec<Span>> = vec![Vec::new(); spans.len()];
    for (i, &span) in spans.iter().enumerate() {
        let root = uf.find(i);
        groups[root].push(span);
    }
    Clustering::new(groups.into_iter().filter(|g| g.len() >= 2).collect()).expect("accepted spans are distinct")
}

/// Averaged scores of one document.
#[derive(Clone, Debug, PartialEq)]
pub struct DocumentScores {
    /// Every enumerated span, in span order.
    pub candidates: Vec<Span>,
    /// Mean `s_m` of each candidate.
    pub mention_scores: Vec<f64>,
    /// Indices into `candidates` of the spans kept by pruning.
    pub accepted: Vec<usize>,
    /// Antecedent windows over positions in `accepted`.
    pub windows: Vec<Range<usize>>,
    /// Mean `s_a` per accepted span and window position.
    pub antecedent_scores: Vec<Vec<f64>>,
    /// Mean head attention weights of each accepted span.
    pub attention: Vec<Vec<f64>>,
}

impl DocumentScores {
    pub fn accepted_spans(&self) -> Vec<Span> {
        self.accepted.iter().map(|&k| self.candidates[k]).collect()
    }

    /// `s(i, j)` for every accepted span and window position.
    pub fn pair_scores(&self) -> Vec<Vec<f64>> {
        let s_m = |p: usize| self.mention_scores[self.accepted[p]];
        self.windows
            .iter()
            .zip(&self.antecedent_scores)
            .enumerate()
            .map(|(i, (w, row))| w.clone().zip(row).map(|(j, &a)| coreference_score(s_m(i), s_m(j), a)).collect())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub doc_key: String,
    pub scores: DocumentScores,
    pub decisions: Vec<AntecedentDecision>,
    pub clustering: Clustering,
}

/// `mean += (x - mean) / k` for the `k`-th member, so identical members
/// reproduce their common value exactly.
fn accumulate(mean: &mut [f64], x: &[f64], k: usize) {
    for (m, &v) in mean.iter_mut().zip(x) {
        *m += (v - *m) / k as f64;
    }
}

/// Averages mention scores over `models` before one shared pruning pass,
/// then averages antecedent scores on the surviving spans.
pub fn ensemble_scores(models: &[&CorefModel], doc: &Document) -> Result<DocumentScores, ModelError> {
    let first = *models.first().ok_or_else(|| ModelError::Config("ensemble needs at least one model".into()))?;
    if let Some(bad) = models.iter().position(|m| !m.compatible_with(first)) {
        return Err(ModelError::Layout(format!("ensemble member {bad} differs from member 0")));
    }
    let mut graphs: Vec<Graph<'_>> = models.iter().map(|m| Graph::new(&m.params)).collect();
    let mut stages = Vec::with_capacity(models.len());
    let mut mention_scores: Vec<f64> = Vec::new();
    for (k, (model, g)) in models.iter().zip(graphs.iter_mut()).enumerate() {
        let stage = model.mention_stage(g, doc, None, &mut Phase::Eval)?;
        let values: Vec<f64> = stage.mention_scores.iter().map(|&s| g.scalar(s)).collect();
        if k == 0 {
            mention_scores = vec![0.0; values.len()];
        }
        accumulate(&mut mention_scores, &values, k + 1);
        stages.push(stage);
    }
    let candidates: Vec<Span> = stages[0].spans.iter().map(|n| n.span).collect();
    let accepted = if first.config.oracle_mentions {
        first.select(&graphs[0], doc, &stages[0], Pruning::Oracle)?
    } else {
        prune_spans(&candidates, &mention_scores, span_budget(first.config.spans_per_word, doc.num_tokens()))
    };

    let mut windows = Vec::new();
    let mut antecedent_scores: Vec<Vec<f64>> = Vec::new();
    let mut attention: Vec<Vec<f64>> = Vec::new();
    for (k, ((model, g), stage)) in models.iter().zip(graphs.iter_mut()).zip(&stages).enumerate() {
        let nodes = accepted.iter().map(|&a| stage.spans[a]).collect();
        let s_m = accepted.iter().map(|&a| stage.mention_scores[a]).collect();
        let pass = model.antecedent_stage(g, doc, nodes, s_m, &mut Phase::Eval)?;
        if k == 0 {
            windows = pass.candidates.clone();
            antecedent_scores = pass.antecedent_scores.iter().map(|r| vec![0.0; r.len()]).collect();
            attention = pass.nodes.iter().map(|n| vec![0.0; n.span.width()]).collect();
        }
        for (mean, row) in antecedent_scores.iter_mut().zip(&pass.antecedent_scores) {
            let values: Vec<f64> = row.iter().map(|&n| g.scalar(n)).collect();
            accumulate(mean, &values, k + 1);
        }
        for (mean, node) in attention.iter_mut().zip(&pass.nodes) {
            accumulate(mean, g.value(node.attention).data(), k + 1);
        }
    }
    Ok(DocumentScores {
        candidates,
        mention_scores,
        accepted,
        windows,
        antecedent_scores,
        attention,
    })
}

/// Decodes already averaged scores.
pub fn predict_from_scores(doc: &Document, scores: DocumentScores) -> Prediction {
    let decisions = decode_antecedents(&scores.pair_scores(), &scores.windows);
    let clustering = recover_clusters(&scores.accepted_spans(), &decisions);
    Prediction {
        doc_key: doc.doc_key(),
        scores,
        decisions,
        clustering,
    }
}

pub fn ensemble_predict(models: &[&CorefModel], doc: &Document) -> Result<Prediction, ModelError> {
    Ok(predict_from_scores(doc, ensemble_scores(models, doc)?))
}

/// The single-model path: an ensemble of one.
pub fn predict_antecedents(model: &CorefModel, doc: &Document) -> Result<Prediction, ModelError> {
    ensemble_predict(&[model], doc)
}

/// Predicts every document in parallel; output order follows `docs`.
pub fn predict_documents(models: &[&CorefModel], docs: &[Document]) -> Result<Vec<Prediction>, ModelError> {
    docs.par_iter().map(|d| ensemble_predict(models, d)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub span: [usize; 2],
    pub cluster: usize,
    pub tokens: Vec<String>,
    pub weights: Vec<f64>,
}

/// Head attention of every predicted mention, in cluster order.
pub fn attention_report(doc: &Document, prediction: &Prediction) -> Vec<AttentionRecord> {
    let accepted = prediction.scores.accepted_spans();
    let mut records = Vec::new();
    for (c, cluster) in prediction.clustering.clusters().iter().enumerate() {
        for span in cluster {
            let p = accepted.binary_search(span).expect("predicted mentions are accepted spans");
            records.push(AttentionRecord {
                span: [span.start, span.end],
                cluster: c,
                tokens: doc.tokens[span.start..=span.end].iter().map(|t| t.text.clone()).collect(),
                weights: prediction.scores.attention[p].clone(),
            });
        }
    }
    records
}

/// One line per mention: `doc_key  cluster  start-end  token(weight) ...`.
pub fn render_attention(doc_key: &str, records: &[AttentionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = write!(out, "{doc_key}\t{}\t{}-{}\t", r.cluster, r.span[0], r.span[1]);
        let cells: Vec<String> = r.tokens.iter().zip(&r.weights).map(|(t, w)| format!("{t}({w:.3})")).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
    }
    out
}

/// One JSON object per line of the prediction sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SidecarRecord {
    pub doc_key: String,
    /// Inclusive `[start, end]` token indices per mention.
    pub clusters: Vec<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<AttentionRecord>>,
}

impl SidecarRecord {
    pub fn new(doc: &Document, prediction: &Prediction, with_attention: bool) -> Self {
        SidecarRecord {
            doc_key: prediction.doc_key.clone(),
            clusters: prediction
                .clustering
                .clusters()
                .iter()
                .map(|c| c.iter().map(|s| [s.start, s.end]).collect())
                .collect(),
            attention: with_attention.then(|| attention_report(doc, prediction)),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("sidecar records serialise")
    }
}
