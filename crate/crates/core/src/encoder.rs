//! Word representations, per-sentence bidirectional LSTMs and span
//! representations with head-finding attention.

use std::collections::HashMap;

use rand::Rng;

use crate::config::ModelConfig;
use crate::corpus::{CharVocab, Document, EmbeddingTable, Genre, Span};
use crate::diffcore::{
    init_glorot, init_normal, init_orthonormal, DiffError, Graph, NodeId, ParamId, ParameterRegistry, Tensor,
};
use crate::nn::{Ffnn, Phase};

/// Standard deviation of freshly initialised embedding rows.
const EMBEDDING_INIT_STD: f64 = 0.1;

/// The fixed part of the word vectors: pretrained tables concatenated in
/// order. Never trained.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WordEmbedder {
    tables: Vec<EmbeddingTable>,
}

impl WordEmbedder {
    pub fn new(tables: Vec<EmbeddingTable>) -> Self {
        WordEmbedder { tables }
    }

    pub fn dims(&self) -> Vec<usize> {
        self.tables.iter().map(EmbeddingTable::dim).collect()
    }

    pub fn dim(&self) -> usize {
        self.tables.iter().map(EmbeddingTable::dim).sum()
    }

    pub fn tables(&self) -> &[EmbeddingTable] {
        &self.tables
    }

    pub fn set_lowercase_fallback(&mut self, on: bool) {
        for t in &mut self.tables {
            t.set_lowercase_fallback(on);
        }
    }

    pub fn embed(&self, word: &str) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for t in &self.tables {
            t.lookup_into(word, &mut out);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct ConvFilter {
    pub width: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

/// 1-D convolutions over character embeddings with max-over-time pooling,
/// one bank of filters per window width.
#[derive(Clone, Debug)]
pub struct CharCnn {
    pub embeddings: ParamId,
    pub filters: Vec<ConvFilter>,
    emb_dim: usize,
    filter_size: usize,
}

impl CharCnn {
    pub fn register<R: Rng + ?Sized>(
        reg: &mut ParameterRegistry,
        vocab_size: usize,
        config: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        let emb_dim = config.char_embedding_size;
        let embeddings = reg.add(
            "char_cnn/embeddings",
            init_normal(vocab_size, emb_dim, EMBEDDING_INIT_STD, rng),
        )?;
        let mut filters = Vec::new();
        for &width in &config.filter_widths {
            let weight = reg.add(
                format!("char_cnn/width{width}/w"),
                init_glorot(config.filter_size, width * emb_dim, rng),
            )?;
            let bias = reg.add(format!("char_cnn/width{width}/b"), Tensor::zeros(vec![config.filter_size]))?;
            filters.push(ConvFilter { width, weight, bias });
        }
        Ok(CharCnn {
            embeddings,
            filters,
            emb_dim,
            filter_size: config.filter_size,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.filters.len() * self.filter_size
    }

    /// Character ids → pooled feature vector. Words shorter than a window
    /// are padded with zero embeddings up to the window width.
    pub fn forward(&self, g: &mut Graph<'_>, chars: &[usize]) -> Result<NodeId, DiffError> {
        let table = g.param(self.embeddings);
        let mut rows = Vec::with_capacity(chars.len());
        for &c in chars {
            rows.push(g.row(table, c)?);
        }
        let longest = self.filters.iter().map(|f| f.width).max().unwrap_or(1);
        if rows.len() < longest {
            let pad = g.input(Tensor::zeros(vec![self.emb_dim]))?;
            rows.resize(longest.max(rows.len()), pad);
        }
        let mut pooled = Vec::with_capacity(self.filters.len());
        for f in &self.filters {
            // padding only up to this filter's width
            let len = chars.len().max(f.width);
            let (w, b) = (g.param(f.weight), g.param(f.bias));
            let mut positions = Vec::with_capacity(len - f.width + 1);
            for p in 0..=len - f.width {
                let window = g.concat(&rows[p..p + f.width])?;
                positions.push(g.affine(w, window, b)?);
            }
            pooled.push(g.max_pool(&positions)?);
        }
        g.concat(&pooled)
    }
}

/// One direction of the LSTM. The cell gates the candidate by `f` and the
/// previous cell by `1 - f`; `b_f` is the forget-gate bias.
#[derive(Clone, Debug)]
pub struct LstmDirection {
    pub w_f: ParamId,
    pub w_o: ParamId,
    pub w_c: ParamId,
    pub b_f: ParamId,
    pub b_o: ParamId,
    pub b_c: ParamId,
    hidden: usize,
}

impl LstmDirection {
    pub fn register<R: Rng + ?Sized>(
        reg: &mut ParameterRegistry,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        let cols = input_dim + hidden;
        let w = |gate: &str, reg: &mut ParameterRegistry, rng: &mut R| {
            reg.add(format!("{name}/w_{gate}"), init_orthonormal(hidden, cols, rng))
        };
        let w_f = w("f", reg, rng)?;
        let w_o = w("o", reg, rng)?;
        let w_c = w("c", reg, rng)?;
        let b_f = reg.add(format!("{name}/b_f"), Tensor::zeros(vec![hidden]))?;
        let b_o = reg.add(format!("{name}/b_o"), Tensor::zeros(vec![hidden]))?;
        let b_c = reg.add(format!("{name}/b_c"), Tensor::zeros(vec![hidden]))?;
        Ok(LstmDirection {
            w_f,
            w_o,
            w_c,
            b_f,
            b_o,
            b_c,
            hidden,
        })
    }

    /// Runs over `inputs` (reversed when `reverse`), starting from zero
    /// state. `state_mask` is applied to the recurrent input at every step.
    /// Outputs are returned in input order.
    pub fn run(
        &self,
        g: &mut Graph<'_>,
        inputs: &[NodeId],
        reverse: bool,
        state_mask: Option<&[f64]>,
    ) -> Result<Vec<NodeId>, DiffError> {
        let zeros = g.input(Tensor::zeros(vec![self.hidden]))?;
        let ones = g.input(Tensor::vector(vec![1.0; self.hidden]))?;
        let (wf, wo, wc) = (g.param(self.w_f), g.param(self.w_o), g.param(self.w_c));
        let (bf, bo, bc) = (g.param(self.b_f), g.param(self.b_o), g.param(self.b_c));
        let mut h = zeros;
        let mut c = zeros;
        let mut out = vec![zeros; inputs.len()];
        let order: Vec<usize> = if reverse {
            (0..inputs.len()).rev().collect()
        } else {
            (0..inputs.len()).collect()
        };
        for t in order {
            let h_in = match state_mask {
                Some(m) => g.dropout(h, m.to_vec())?,
                None => h,
            };
            let xh = g.concat(&[inputs[t], h_in])?;
            let f_pre = g.affine(wf, xh, bf)?;
            let f = g.sigmoid(f_pre)?;
            let o_pre = g.affine(wo, xh, bo)?;
            let o = g.sigmoid(o_pre)?;
            let c_pre = g.affine(wc, xh, bc)?;
            let cand = g.tanh(c_pre)?;
            let keep = g.sub(ones, f)?;
            let new_part = g.mul(f, cand)?;
            let old_part = g.mul(keep, c)?;
            c = g.add(new_part, old_part)?;
            let tc = g.tanh(c)?;
            h = g.mul(o, tc)?;
            out[t] = h;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: LstmDirection,
    pub backward: LstmDirection,
}

impl BiLstm {
    pub fn register<R: Rng + ?Sized>(
        reg: &mut ParameterRegistry,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        Ok(BiLstm {
            forward: LstmDirection::register(reg, "lstm/fw", input_dim, hidden, rng)?,
            backward: LstmDirection::register(reg, "lstm/bw", input_dim, hidden, rng)?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }

    /// `x*_t = [h_fw, h_bw]` for one sentence. One recurrent dropout mask
    /// per direction is drawn and shared across all timesteps.
    pub fn encode_sentence(
        &self,
        g: &mut Graph<'_>,
        inputs: &[NodeId],
        phase: &mut Phase<'_>,
        state_dropout: f64,
    ) -> Result<Vec<NodeId>, DiffError> {
        let fw_mask = phase.mask(self.hidden(), state_dropout)?;
        let bw_mask = phase.mask(self.hidden(), state_dropout)?;
        let fw = self.forward.run(g, inputs, false, fw_mask.as_deref())?;
        let bw = self.backward.run(g, inputs, true, bw_mask.as_deref())?;
        fw.into_iter().zip(bw).map(|(a, b)| g.concat(&[a, b])).collect()
    }
}

/// Learned embeddings of the discrete features.
#[derive(Clone, Debug)]
pub struct FeatureEmbeddings {
    pub width: ParamId,
    pub same_speaker: ParamId,
    pub genre: ParamId,
    pub distance: ParamId,
}

impl FeatureEmbeddings {
    pub const DISTANCE_BUCKETS: usize = 9;

    pub fn register<R: Rng + ?Sized>(
        reg: &mut ParameterRegistry,
        max_width: usize,
        size: usize,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        Ok(FeatureEmbeddings {
            width: reg.add("features/width", init_normal(max_width, size, EMBEDDING_INIT_STD, rng))?,
            same_speaker: reg.add("features/same_speaker", init_normal(2, size, EMBEDDING_INIT_STD, rng))?,
            genre: reg.add("features/genre", init_normal(Genre::ALL.len(), size, EMBEDDING_INIT_STD, rng))?,
            distance: reg.add(
                "features/distance",
                init_normal(Self::DISTANCE_BUCKETS, size, EMBEDDING_INIT_STD, rng),
            )?,
        })
    }

    /// φ(i): the embedding of the span width.
    pub fn width(&self, g: &mut Graph<'_>, width: usize) -> Result<NodeId, DiffError> {
        let table = g.param(self.width);
        g.row(table, width - 1)
    }
}

/// Word vectors, contextual vectors and per-token attention logits for one
/// document.
#[derive(Clone, Debug)]
pub struct EncodedDocument {
    pub words: Vec<NodeId>,
    pub context: Vec<NodeId>,
    /// Vector of `α_t` over every token.
    pub alpha: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct SpanNode {
    pub span: Span,
    /// `g_i`.
    pub repr: NodeId,
    /// Softmax weights `a_{i,t}` over the span's tokens.
    pub attention: NodeId,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub char_cnn: CharCnn,
    pub lstm: BiLstm,
    pub attention: Ffnn,
    pub features: FeatureEmbeddings,
    pub embedding_dropout: f64,
    pub hidden_dropout: f64,
    pub max_span_width: usize,
}

impl Encoder {
    pub fn register<R: Rng + ?Sized>(
        reg: &mut ParameterRegistry,
        config: &ModelConfig,
        char_vocab_size: usize,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        let char_cnn = CharCnn::register(reg, char_vocab_size, config, rng)?;
        let lstm = BiLstm::register(reg, config.word_dim(), config.lstm_size, rng)?;
        let attention = Ffnn::register(reg, "attention", config.context_dim(), config.ffnn_depth, config.ffnn_size, rng)?;
        let features = FeatureEmbeddings::register(reg, config.max_span_width, config.feature_size, rng)?;
        Ok(Encoder {
            char_cnn,
            lstm,
            attention,
            features,
            embedding_dropout: config.embedding_dropout,
            hidden_dropout: config.hidden_dropout,
            max_span_width: config.max_span_width,
        })
    }

    /// Computes `x_t`, `x*_t` and `α_t` for every token.
    pub fn encode(
        &self,
        g: &mut Graph<'_>,
        doc: &Document,
        embedder: &WordEmbedder,
        vocab: &CharVocab,
        phase: &mut Phase<'_>,
    ) -> Result<EncodedDocument, DiffError> {
        let mut char_cache: HashMap<&str, NodeId> = HashMap::new();
        let mut words = Vec::with_capacity(doc.tokens.len());
        let mut context = Vec::with_capacity(doc.tokens.len());
        let word_dim = embedder.dim() + self.char_cnn.output_dim();
        for range in &doc.sentences {
            let mask = phase.mask(word_dim, self.embedding_dropout)?;
            let mut sentence = Vec::with_capacity(range.len());
            for tok in &doc.tokens[range.clone()] {
                let chars = match char_cache.get(tok.text.as_str()) {
                    Some(&n) => n,
                    None => {
                        let n = self.char_cnn.forward(g, &vocab.encode(&tok.text))?;
                        char_cache.insert(&tok.text, n);
                        n
                    }
                };
                let fixed = g.input(Tensor::vector(embedder.embed(&tok.text)))?;
                let x = g.concat(&[fixed, chars])?;
                let x = match &mask {
                    Some(m) => g.dropout(x, m.clone())?,
                    None => x,
                };
                sentence.push(x);
            }
            let ctx = self.lstm.encode_sentence(g, &sentence, phase, self.hidden_dropout)?;
            words.extend(sentence);
            context.extend(ctx);
        }
        let mut alphas = Vec::with_capacity(context.len());
        for &x in &context {
            alphas.push(self.attention.score(g, x, phase, self.hidden_dropout)?);
        }
        let alpha = g.concat(&alphas)?;
        Ok(EncodedDocument { words, context, alpha })
    }

    /// `x̂_i` and the attention weights for a span.
    pub fn head_attention(
        &self,
        g: &mut Graph<'_>,
        enc: &EncodedDocument,
        span: Span,
    ) -> Result<(NodeId, NodeId), DiffError> {
        let logits = g.slice(enc.alpha, span.start, span.width())?;
        let weights = g.softmax(logits)?;
        let head = g.weighted_sum(weights, &enc.words[span.start..=span.end])?;
        Ok((head, weights))
    }

    /// `g_i = [x*_start, x*_end, x̂_i, φ(i)]`.
    pub fn span_representation(
        &self,
        g: &mut Graph<'_>,
        enc: &EncodedDocument,
        span: Span,
        phase: &mut Phase<'_>,
    ) -> Result<SpanNode, DiffError> {
        if span.width() > self.max_span_width {
            return Err(DiffError::ShapeMismatch {
                op: "span_width",
                shapes: vec![vec![span.width()], vec![self.max_span_width]],
            });
        }
        let (head, attention) = self.head_attention(g, enc, span)?;
        let width = self.features.width(g, span.width())?;
        let width = phase.dropout(g, width, self.hidden_dropout)?;
        let repr = g.concat(&[enc.context[span.start], enc.context[span.end], head, width])?;
        Ok(SpanNode { span, repr, attention })
    }
}
