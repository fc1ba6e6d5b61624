//! Unary mention scores, pairwise antecedent scores and their combination
//! with the dummy antecedent fixed at zero.

use rand::Rng;

use crate::config::ModelConfig;
use crate::corpus::{Document, Genre, Span};
use crate::diffcore::{DiffError, Graph, NodeId, ParameterRegistry};
use crate::encoder::FeatureEmbeddings;
use crate::nn::{Ffnn, Phase};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("distance must be at least 1, got {0}")]
    Distance(usize),
    #[error("antecedent {antecedent} does not precede {span}")]
    Order { span: Span, antecedent: Span },
}

/// Upper bounds (inclusive) of the distance buckets; the last bucket is
/// open-ended.
const BUCKET_UPPER: [usize; 8] = [1, 2, 3, 4, 7, 15, 31, 63];

/// Buckets `[1, 2, 3, 4, 5-7, 8-15, 16-31, 32-63, 64+]` as indices 0..=8.
pub fn bucket_distance(d: usize) -> Result<usize, ScoreError> {
    if d == 0 {
        return Err(ScoreError::Distance(d));
    }
    Ok(BUCKET_UPPER.iter().position(|&hi| d <= hi).unwrap_or(BUCKET_UPPER.len()))
}

/// The discrete inputs of `φ(i, j)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairFeatures {
    pub same_speaker: bool,
    pub genre: Genre,
    pub distance_bucket: usize,
}

impl PairFeatures {
    /// `offset` is the distance between the two spans in the accepted-span
    /// list. Speakers are compared at each span's first token.
    pub fn new(doc: &Document, span: Span, antecedent: Span, offset: usize) -> Result<Self, ScoreError> {
        if antecedent >= span {
            return Err(ScoreError::Order { span, antecedent });
        }
        Ok(PairFeatures {
            same_speaker: doc.tokens[span.start].speaker == doc.tokens[antecedent.start].speaker,
            genre: doc.genre,
            distance_bucket: bucket_distance(offset)?,
        })
    }
}

/// `s(i, j) = s_m(i) + s_m(j) + s_a(i, j)`.
pub fn coreference_score(s_m_i: f64, s_m_j: f64, s_a: f64) -> f64 {
    s_m_i + s_m_j + s_a
}

/// The score of the dummy antecedent, `s(i, ε)`.
pub const EPSILON_SCORE: f64 = 0.0;

#[derive(Clone, Debug)]
pub struct Scorer {
    pub mention: Ffnn,
    pub antecedent: Ffnn,
    pub features: FeatureEmbeddings,
    pub hidden_dropout: f64,
}

impl Scorer {
    pub fn register<R: Rng + ?Sized>(
        reg: &mut ParameterRegistry,
        config: &ModelConfig,
        features: FeatureEmbeddings,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        let mention = Ffnn::register(reg, "mention", config.span_dim(), config.ffnn_depth, config.ffnn_size, rng)?;
        let antecedent = Ffnn::register(reg, "antecedent", config.pair_dim(), config.ffnn_depth, config.ffnn_size, rng)?;
        Ok(Scorer {
            mention,
            antecedent,
            features,
            hidden_dropout: config.hidden_dropout,
        })
    }

    /// `s_m(i) = w_m · FFNN_m(g_i)`.
    pub fn mention_score(&self, g: &mut Graph<'_>, repr: NodeId, phase: &mut Phase<'_>) -> Result<NodeId, DiffError> {
        self.mention.score(g, repr, phase, self.hidden_dropout)
    }

    /// `φ(i, j)`: speaker, genre and distance embeddings concatenated.
    pub fn pair_features(&self, g: &mut Graph<'_>, f: &PairFeatures, phase: &mut Phase<'_>) -> Result<NodeId, DiffError> {
        let speaker = g.param(self.features.same_speaker);
        let speaker = g.row(speaker, usize::from(f.same_speaker))?;
        let genre = g.param(self.features.genre);
        let genre = g.row(genre, f.genre.index())?;
        let distance = g.param(self.features.distance);
        let distance = g.row(distance, f.distance_bucket)?;
        let phi = g.concat(&[speaker, genre, distance])?;
        phase.dropout(g, phi, self.hidden_dropout)
    }

    /// `s_a(i, j) = w_a · FFNN_a([g_i, g_j, g_i ∘ g_j, φ(i, j)])`.
    pub fn antecedent_score(
        &self,
        g: &mut Graph<'_>,
        g_i: NodeId,
        g_j: NodeId,
        phi: NodeId,
        phase: &mut Phase<'_>,
    ) -> Result<NodeId, DiffError> {
        let product = g.mul(g_i, g_j)?;
        let input = g.concat(&[g_i, g_j, product, phi])?;
        self.antecedent.score(g, input, phase, self.hidden_dropout)
    }
}
