//! Hyperparameters. Defaults are the published settings.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Dimensions of the fixed pretrained embedding tables, concatenated in
    /// this order.
    pub embedding_dims: Vec<usize>,
    /// Exact-token lookup falls back to the lowercased token before zeros.
    pub lowercase_fallback: bool,
    pub char_embedding_size: usize,
    pub filter_widths: Vec<usize>,
    pub filter_size: usize,
    pub lstm_size: usize,
    pub ffnn_depth: usize,
    pub ffnn_size: usize,
    pub feature_size: usize,
    /// Maximum span width `L`.
    pub max_span_width: usize,
    /// Spans kept per word, `λ`.
    pub spans_per_word: f64,
    /// Maximum antecedents per span, `K`.
    pub max_antecedents: usize,
    pub embedding_dropout: f64,
    pub hidden_dropout: f64,
    /// Accept exactly the gold mentions instead of pruning by score.
    pub oracle_mentions: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dims: vec![300, 50],
            lowercase_fallback: true,
            char_embedding_size: 8,
            filter_widths: vec![3, 4, 5],
            filter_size: 50,
            lstm_size: 200,
            ffnn_depth: 2,
            ffnn_size: 150,
            feature_size: 20,
            max_span_width: 10,
            spans_per_word: 0.4,
            max_antecedents: 250,
            embedding_dropout: 0.5,
            hidden_dropout: 0.2,
            oracle_mentions: false,
        }
    }
}

impl ModelConfig {
    /// Word vector size: fixed embeddings plus character CNN output.
    pub fn word_dim(&self) -> usize {
        self.embedding_dims.iter().sum::<usize>() + self.filter_widths.len() * self.filter_size
    }

    pub fn context_dim(&self) -> usize {
        2 * self.lstm_size
    }

    /// `[x*_start, x*_end, x̂, φ(i)]`.
    pub fn span_dim(&self) -> usize {
        2 * self.context_dim() + self.word_dim() + self.feature_size
    }

    /// `[g_i, g_j, g_i ∘ g_j, φ(i, j)]`.
    pub fn pair_dim(&self) -> usize {
        3 * self.span_dim() + 3 * self.feature_size
    }

    pub fn validate(&self) -> Result<(), String> {
        let rate_ok = |r: f64| (0.0..1.0).contains(&r);
        if self.max_span_width < 1 {
            return Err("max_span_width must be at least 1".into());
        }
        if self.spans_per_word.is_nan() || self.spans_per_word <= 0.0 {
            return Err("spans_per_word must be positive".into());
        }
        if self.max_antecedents < 1 {
            return Err("max_antecedents must be at least 1".into());
        }
        if !rate_ok(self.embedding_dropout) || !rate_ok(self.hidden_dropout) {
            return Err("dropout rates must lie in [0, 1)".into());
        }
        if self.filter_widths.contains(&0) || self.filter_size == 0 {
            return Err("character CNN filters must be non-empty".into());
        }
        if self.lstm_size == 0 || self.ffnn_size == 0 || self.feature_size == 0 || self.char_embedding_size == 0 {
            return Err("layer sizes must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Learning rate is multiplied by `decay_rate` every `decay_steps` updates.
    pub decay_rate: f64,
    pub decay_steps: u64,
    pub max_epochs: usize,
    /// Training documents are cut to a random window of this many sentences.
    pub max_sentences: usize,
    /// Evaluate on the dev set every this many epochs.
    pub eval_every: usize,
    /// Evaluations without dev improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm clip; off when `None`.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_rate: 0.999,
            decay_steps: 100,
            max_epochs: 150,
            max_sentences: 50,
            eval_every: 1,
            patience: 10,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_epochs < 1 {
            return Err("max_epochs must be at least 1".into());
        }
        if self.max_sentences < 1 || self.eval_every < 1 || self.decay_steps < 1 {
            return Err("max_sentences, eval_every and decay_steps must be positive".into());
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err("learning_rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err("Adam moment rates must lie in [0, 1)".into());
        }
        Ok(())
    }
}
