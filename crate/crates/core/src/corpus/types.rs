use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Inclusive token range `[start, end]` with document-global indices.
///
/// The derived ordering is span order: by start, then by end.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end, "span start {start} after end {end}");
        Span { start, end }
    }

    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }

    /// Strict partial overlap: each span holds exactly one endpoint of the
    /// other. Nesting and disjointness do not count.
    pub fn crosses(&self, other: &Span) -> bool {
        (self.start < other.start && other.start <= self.end && self.end < other.end)
            || (other.start < self.start && self.start <= other.end && other.end < self.end)
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

/// OntoNotes genres, taken from the first component of the document id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Genre {
    Bc,
    Bn,
    Mz,
    Nw,
    Pt,
    Tc,
    Wb,
}

impl Genre {
    pub const ALL: [Genre; 7] = [
        Genre::Bc,
        Genre::Bn,
        Genre::Mz,
        Genre::Nw,
        Genre::Pt,
        Genre::Tc,
        Genre::Wb,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> &'static str {
        match self {
            Genre::Bc => "bc",
            Genre::Bn => "bn",
            Genre::Mz => "mz",
            Genre::Nw => "nw",
            Genre::Pt => "pt",
            Genre::Tc => "tc",
            Genre::Wb => "wb",
        }
    }

    pub fn from_code(code: &str) -> Option<Genre> {
        Genre::ALL.into_iter().find(|g| g.code() == code)
    }

    /// `bc/cctv/00/cctv_0000` → `Bc`. Ids without a known prefix map to `Nw`.
    pub fn from_doc_id(doc_id: &str) -> Genre {
        doc_id
            .split('/')
            .next()
            .and_then(Genre::from_code)
            .unwrap_or(Genre::Nw)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub sentence: usize,
    pub speaker: String,
    /// Original CoNLL columns minus the coreference column, when the token
    /// came from a file. Used to write predictions back unchanged.
    pub columns: Option<Vec<String>>,
}

impl Token {
    pub fn new(text: impl Into<String>, sentence: usize, speaker: impl Into<String>) -> Self {
        Token {
            text: text.into(),
            sentence,
            speaker: speaker.into(),
            columns: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClusteringError {
    #[error("span {0} appears in more than one cluster")]
    Overlap(Span),
    #[error("empty cluster")]
    EmptyCluster,
}

/// A set of disjoint mention clusters, kept in canonical order: spans sorted
/// within each cluster, clusters sorted by their first span.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    clusters: Vec<Vec<Span>>,
}

impl Clustering {
    pub fn new(clusters: Vec<Vec<Span>>) -> Result<Self, ClusteringError> {
        let mut seen = HashMap::new();
        let mut out = Vec::with_capacity(clusters.len());
        for (ci, mut c) in clusters.into_iter().enumerate() {
            c.sort();
            c.dedup();
            if c.is_empty() {
                return Err(ClusteringError::EmptyCluster);
            }
            for s in &c {
                if seen.insert(*s, ci).is_some() {
                    return Err(ClusteringError::Overlap(*s));
                }
            }
            out.push(c);
        }
        out.sort();
        Ok(Clustering { clusters: out })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn clusters(&self) -> &[Vec<Span>] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn mentions(&self) -> impl Iterator<Item = Span> + '_ {
        self.clusters.iter().flatten().copied()
    }

    pub fn num_mentions(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }

    /// Mention → cluster index.
    pub fn mention_map(&self) -> HashMap<Span, usize> {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(ci, c)| c.iter().map(move |s| (*s, ci)))
            .collect()
    }

    pub fn without_singletons(&self) -> Clustering {
        Clustering {
            clusters: self.clusters.iter().filter(|c| c.len() > 1).cloned().collect(),
        }
    }

    pub fn has_singletons(&self) -> bool {
        self.clusters.iter().any(|c| c.len() < 2)
    }
}

/// A tokenized document with metadata and gold annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub part: u32,
    pub genre: Genre,
    pub tokens: Vec<Token>,
    /// Token index range of each sentence, contiguous and in order.
    pub sentences: Vec<Range<usize>>,
    pub gold: Clustering,
    /// Gold parse constituents, sorted and deduplicated; `None` when the
    /// source had no parse column.
    pub constituents: Option<Vec<Span>>,
}

impl Document {
    /// Builds a document from sentences of `(word, speaker)` pairs.
    pub fn from_sentences(
        doc_id: impl Into<String>,
        sentences: &[Vec<(&str, &str)>],
        gold: Clustering,
    ) -> Self {
        let doc_id = doc_id.into();
        let mut tokens = Vec::new();
        let mut ranges = Vec::new();
        for (si, sent) in sentences.iter().enumerate() {
            let start = tokens.len();
            for (w, spk) in sent {
                tokens.push(Token::new(*w, si, *spk));
            }
            ranges.push(start..tokens.len());
        }
        Document {
            genre: Genre::from_doc_id(&doc_id),
            doc_id,
            part: 0,
            tokens,
            sentences: ranges,
            gold,
            constituents: None,
        }
    }

    /// `<doc id>_<part>`, the key used to align gold and system files.
    pub fn doc_key(&self) -> String {
        format!("{}_{}", self.doc_id, self.part)
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn sentence_of(&self, token: usize) -> usize {
        self.tokens[token].sentence
    }

    pub fn span_text(&self, span: Span) -> String {
        self.tokens[span.start..=span.end]
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Every gold mention sorted in span order.
    pub fn gold_mentions(&self) -> Vec<Span> {
        let mut m: Vec<Span> = self.gold.mentions().collect();
        m.sort();
        m
    }

    pub fn within_one_sentence(&self, span: Span) -> bool {
        span.end < self.tokens.len() && self.sentence_of(span.start) == self.sentence_of(span.end)
    }
}

/// Groups cluster ids to spans, keeping id order; used by the parser.
pub(crate) fn clusters_from_ids(map: BTreeMap<u64, Vec<Span>>) -> Result<Clustering, ClusteringError> {
    Clustering::new(map.into_values().collect())
}
