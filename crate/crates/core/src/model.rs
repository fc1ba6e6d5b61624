//! The full model: parameters, vocabularies and the two-stage forward pass
//! (mention scoring and pruning, then antecedent scoring).

use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};

use crate::config::ModelConfig;
use crate::corpus::{CharVocab, Document, Span};
use crate::diffcore::{Checkpoint, CheckpointError, DiffError, Graph, NodeId, ParameterRegistry};
use crate::encoder::{EncodedDocument, Encoder, SpanNode, WordEmbedder};
use crate::nn::Phase;
use crate::pruner::{candidate_antecedents, enumerate_spans, oracle_spans, prune_spans, span_budget};
use crate::scorer::{PairFeatures, ScoreError, Scorer};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("embedding tables have dimensions {found:?}, configuration expects {expected:?}")]
    EmbeddingDims { expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint does not match the model layout: {0}")]
    Layout(String),
    #[error("document {0} has no tokens")]
    EmptyDocument(String),
}

/// Which spans survive the mention stage.
#[derive(Clone, Copy, Debug)]
pub enum Pruning<'a> {
    /// Greedy non-crossing pruning by mention score.
    Scored,
    /// Exactly the gold mentions.
    Oracle,
    /// A caller-supplied set, in span order, all of which must be candidates.
    Fixed(&'a [Span]),
}

/// Every candidate span with its representation and mention score.
#[derive(Clone, Debug)]
pub struct MentionStage {
    pub encoded: EncodedDocument,
    pub spans: Vec<SpanNode>,
    pub mention_scores: Vec<NodeId>,
}

/// Accepted spans with antecedent scores for their candidate windows.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub accepted: Vec<Span>,
    pub nodes: Vec<SpanNode>,
    pub mention_scores: Vec<NodeId>,
    /// Positions in `accepted` of each span's candidate antecedents.
    pub candidates: Vec<Range<usize>>,
    /// `s_a(i, j)` for each candidate, parallel to `candidates`.
    pub antecedent_scores: Vec<Vec<NodeId>>,
    /// `s(i, j)` for each candidate, parallel to `candidates`.
    pub pair_scores: Vec<Vec<NodeId>>,
}

#[derive(Clone, Debug)]
pub struct CorefModel {
    pub config: ModelConfig,
    pub params: ParameterRegistry,
    pub char_vocab: CharVocab,
    pub embedder: Arc<WordEmbedder>,
    pub encoder: Encoder,
    pub scorer: Scorer,
}

const CONFIG_SECTION: &str = "model/config";
const CHARS_SECTION: &str = "model/chars";
const PARAM_PREFIX: &str = "param/";

impl CorefModel {
    pub fn new<R: Rng + ?Sized>(
        config: ModelConfig,
        char_vocab: CharVocab,
        embedder: Arc<WordEmbedder>,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::Config)?;
        if embedder.dims() != config.embedding_dims {
            return Err(ModelError::EmbeddingDims {
                expected: config.embedding_dims.clone(),
                found: embedder.dims(),
            });
        }
        let mut params = ParameterRegistry::new();
        let encoder = Encoder::register(&mut params, &config, char_vocab.len(), rng)?;
        let scorer = Scorer::register(&mut params, &config, encoder.features.clone(), rng)?;
        Ok(CorefModel {
            config,
            params,
            char_vocab,
            embedder,
            encoder,
            scorer,
        })
    }

    /// Models that can be ensembled or share parameters.
    pub fn compatible_with(&self, other: &CorefModel) -> bool {
        self.config == other.config && self.char_vocab == other.char_vocab && self.params.same_layout(&other.params)
    }

    /// Encodes the document and scores every candidate span of width at
    /// most `L` (or only `spans`, when given).
    pub fn mention_stage(
        &self,
        g: &mut Graph<'_>,
        doc: &Document,
        spans: Option<&[Span]>,
        phase: &mut Phase<'_>,
    ) -> Result<MentionStage, ModelError> {
        if doc.tokens.is_empty() {
            return Err(ModelError::EmptyDocument(doc.doc_key()));
        }
        let encoded = self.encoder.encode(g, doc, &self.embedder, &self.char_vocab, phase)?;
        let spans = match spans {
            Some(s) => s.to_vec(),
            None => enumerate_spans(doc, self.config.max_span_width),
        };
        let mut nodes = Vec::with_capacity(spans.len());
        let mut scores = Vec::with_capacity(spans.len());
        for span in spans {
            let node = self.encoder.span_representation(g, &encoded, span, phase)?;
            scores.push(self.scorer.mention_score(g, node.repr, phase)?);
            nodes.push(node);
        }
        Ok(MentionStage {
            encoded,
            spans: nodes,
            mention_scores: scores,
        })
    }

    /// Indices into `stage.spans` that survive pruning, in span order.
    pub fn select(&self, g: &Graph<'_>, doc: &Document, stage: &MentionStage, pruning: Pruning<'_>) -> Result<Vec<usize>, ModelError> {
        let spans: Vec<Span> = stage.spans.iter().map(|n| n.span).collect();
        match pruning {
            Pruning::Scored => {
                let scores: Vec<f64> = stage.mention_scores.iter().map(|&s| g.scalar(s)).collect();
                Ok(prune_spans(&spans, &scores, span_budget(self.config.spans_per_word, doc.num_tokens())))
            }
            Pruning::Oracle => Ok(positions_of(&spans, &oracle_spans(doc, self.config.max_span_width))),
            Pruning::Fixed(wanted) => {
                let found = positions_of(&spans, wanted);
                if found.len() != wanted.len() {
                    return Err(ModelError::Config("fixed spans must be candidate spans".into()));
                }
                Ok(found)
            }
        }
    }

    /// Antecedent scores for the accepted spans. `mention_scores` are the
    /// (possibly averaged) `s_m` nodes of the accepted spans.
    pub fn antecedent_stage(
        &self,
        g: &mut Graph<'_>,
        doc: &Document,
        nodes: Vec<SpanNode>,
        mention_scores: Vec<NodeId>,
        phase: &mut Phase<'_>,
    ) -> Result<ForwardPass, ModelError> {
        let accepted: Vec<Span> = nodes.iter().map(|n| n.span).collect();
        let mut candidates = Vec::with_capacity(accepted.len());
        let mut antecedent_scores = Vec::with_capacity(accepted.len());
        let mut pair_scores = Vec::with_capacity(accepted.len());
        for i in 0..accepted.len() {
            let window = candidate_antecedents(i, self.config.max_antecedents);
            let mut s_a = Vec::with_capacity(window.len());
            let mut s = Vec::with_capacity(window.len());
            for j in window.clone() {
                let features = PairFeatures::new(doc, accepted[i], accepted[j], i - j)?;
                let phi = self.scorer.pair_features(g, &features, phase)?;
                let a = self.scorer.antecedent_score(g, nodes[i].repr, nodes[j].repr, phi, phase)?;
                let unary = g.add(mention_scores[i], mention_scores[j])?;
                s.push(g.add(unary, a)?);
                s_a.push(a);
            }
            candidates.push(window);
            antecedent_scores.push(s_a);
            pair_scores.push(s);
        }
        Ok(ForwardPass {
            accepted,
            nodes,
            mention_scores,
            candidates,
            antecedent_scores,
            pair_scores,
        })
    }

    /// Both stages in one graph.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        doc: &Document,
        pruning: Pruning<'_>,
        phase: &mut Phase<'_>,
    ) -> Result<ForwardPass, ModelError> {
        let stage = self.mention_stage(g, doc, None, phase)?;
        let keep = self.select(g, doc, &stage, pruning)?;
        let nodes = keep.iter().map(|&k| stage.spans[k]).collect();
        let scores = keep.iter().map(|&k| stage.mention_scores[k]).collect();
        self.antecedent_stage(g, doc, nodes, scores, phase)
    }

    /// Configuration, character vocabulary and every parameter tensor.
    pub fn to_checkpoint(&self) -> Result<Checkpoint, ModelError> {
        let mut ckpt = Checkpoint::new();
        let config = serde_json::to_string(&self.config).map_err(|e| ModelError::Config(e.to_string()))?;
        ckpt.insert_text(CONFIG_SECTION, config)?;
        ckpt.insert_text(CHARS_SECTION, self.char_vocab.chars().iter().collect::<String>())?;
        for (_, name, value) in self.params.iter() {
            ckpt.insert_tensor(format!("{PARAM_PREFIX}{name}"), value.clone())?;
        }
        Ok(ckpt)
    }

    /// Rebuilds a model from `to_checkpoint` output. The fixed embeddings
    /// are not stored and must be supplied.
    pub fn from_checkpoint(ckpt: &Checkpoint, embedder: Arc<WordEmbedder>) -> Result<Self, ModelError> {
        let config: ModelConfig =
            serde_json::from_str(ckpt.text(CONFIG_SECTION)?).map_err(|e| ModelError::Config(e.to_string()))?;
        let vocab = CharVocab::from_chars(ckpt.text(CHARS_SECTION)?.chars());
        // initial values are overwritten below
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = CorefModel::new(config, vocab, embedder, &mut rng)?;
        model.load_params(ckpt)?;
        Ok(model)
    }

    /// Overwrites every parameter from `param/<name>` sections.
    pub fn load_params(&mut self, ckpt: &Checkpoint) -> Result<(), ModelError> {
        let ids: Vec<_> = self.params.ids().collect();
        for id in ids {
            let name = format!("{PARAM_PREFIX}{}", self.params.name(id));
            let stored = ckpt.tensor(&name)?;
            if stored.shape() != self.params.value(id).shape() {
                return Err(ModelError::Layout(format!(
                    "{name} has shape {:?}, expected {:?}",
                    stored.shape(),
                    self.params.value(id).shape()
                )));
            }
            *self.params.value_mut(id) = stored.clone();
        }
        let expected = self.params.len();
        let found = ckpt.names().filter(|n| n.starts_with(PARAM_PREFIX)).count();
        if found != expected {
            return Err(ModelError::Layout(format!("{found} stored parameters, model has {expected}")));
        }
        Ok(())
    }
}

fn positions_of(spans: &[Span], wanted: &[Span]) -> Vec<usize> {
    wanted.iter().filter_map(|w| spans.binary_search(w).ok()).collect()
}
