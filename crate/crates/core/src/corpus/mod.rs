//! Documents, CoNLL-2012 I/O, pretrained embeddings and vocabularies.

mod conll;
mod embeddings;
mod types;

use std::collections::HashMap;

use rand::Rng;

pub use conll::{parse_conll, write_conll, write_conll_documents, ConllError};
pub use embeddings::{EmbeddingError, EmbeddingTable};
pub use types::{Clustering, ClusteringError, Document, Genre, Span, Token};

/// Keeps a uniformly chosen window of `max_sentences` contiguous sentences.
///
/// Token indices are re-based to the window, mentions outside it are
/// dropped, and clusters left with fewer than two mentions are removed.
pub fn truncate_document<R: Rng + ?Sized>(document: &Document, max_sentences: usize, rng: &mut R) -> Document {
    assert!(max_sentences >= 1);
    let n = document.sentences.len();
    if n <= max_sentences {
        return document.clone();
    }
    let first = rng.random_range(0..=n - max_sentences);
    window(document, first, max_sentences)
}

/// The sentences `[first, first + count)` of `document`, re-based.
pub fn window(document: &Document, first: usize, count: usize) -> Document {
    let sentences = &document.sentences[first..first + count];
    let lo = sentences[0].start;
    let hi = sentences[count - 1].end;
    let inside = |s: &Span| s.start >= lo && s.end < hi;
    let shift = |s: &Span| Span::new(s.start - lo, s.end - lo);

    let tokens = document.tokens[lo..hi]
        .iter()
        .map(|t| Token {
            sentence: t.sentence - first,
            ..t.clone()
        })
        .collect();
    let clusters: Vec<Vec<Span>> = document
        .gold
        .clusters()
        .iter()
        .map(|c| c.iter().filter(|s| inside(s)).map(shift).collect::<Vec<_>>())
        .filter(|c| c.len() >= 2)
        .collect();
    Document {
        doc_id: document.doc_id.clone(),
        part: document.part,
        genre: document.genre,
        tokens,
        sentences: sentences.iter().map(|r| r.start - lo..r.end - lo).collect(),
        gold: Clustering::new(clusters).expect("subset of a valid clustering"),
        constituents: document
            .constituents
            .as_ref()
            .map(|c| c.iter().filter(|s| inside(s)).map(shift).collect()),
    }
}

/// Character ids assigned by first occurrence; id 0 is reserved for
/// characters never seen while building.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    ids: HashMap<char, usize>,
}

impl CharVocab {
    pub const UNKNOWN: usize = 0;

    pub fn build<'a, I>(documents: I) -> Self
    where
        I: IntoIterator<Item = &'a Document>,
    {
        let mut v = CharVocab::from_chars(std::iter::empty());
        for doc in documents {
            for tok in &doc.tokens {
                for c in tok.text.chars() {
                    v.add(c);
                }
            }
        }
        v
    }

    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let mut v = CharVocab {
            chars: Vec::new(),
            ids: HashMap::new(),
        };
        for c in chars {
            v.add(c);
        }
        v
    }

    fn add(&mut self, c: char) {
        if !self.ids.contains_key(&c) {
            self.chars.push(c);
            self.ids.insert(c, self.chars.len());
        }
    }

    /// Number of ids including the unknown id.
    pub fn len(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn id(&self, c: char) -> usize {
        self.ids.get(&c).copied().unwrap_or(Self::UNKNOWN)
    }

    pub fn encode(&self, word: &str) -> Vec<usize> {
        word.chars().map(|c| self.id(c)).collect()
    }

    /// Known characters in id order (id = position + 1).
    pub fn chars(&self) -> &[char] {
        &self.chars
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn doc_with_sentences(n: usize, clusters: Vec<Vec<Span>>) -> Document {
        let sentences: Vec<Vec<(&str, &str)>> = (0..n).map(|_| vec![("w", "s"), ("x", "s")]).collect();
        Document::from_sentences("nw/t", &sentences, Clustering::new(clusters).unwrap())
    }

    #[test]
    fn short_documents_are_unchanged() {
        let d = doc_with_sentences(3, vec![]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(truncate_document(&d, 50, &mut rng), d);
    }

    #[test]
    fn long_documents_keep_exactly_max_sentences() {
        let d = doc_with_sentences(60, vec![]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let t = truncate_document(&d, 50, &mut rng);
            assert_eq!(t.sentences.len(), 50);
            assert_eq!(t.tokens.len(), 100);
            assert_eq!(t.sentences[0].start, 0);
        }
    }

    #[test]
    fn cluster_reduced_to_one_mention_is_removed() {
        // mentions in sentence 2 and sentence 55; window covers sentences 10..=59
        let d = doc_with_sentences(60, vec![vec![Span::new(4, 4), Span::new(110, 111)]]);
        let t = window(&d, 10, 50);
        assert!(t.gold.is_empty());
        let kept = window(&d, 0, 56);
        assert_eq!(kept.gold.num_mentions(), 2);
        let shifted = window(&doc_with_sentences(60, vec![vec![Span::new(40, 40), Span::new(110, 111)]]), 10, 50);
        assert_eq!(shifted.gold.clusters(), &[vec![Span::new(20, 20), Span::new(90, 91)]]);
    }

    #[test]
    fn char_vocab_reserves_unknown() {
        let d = Document::from_sentences("nw/a", &[vec![("ab", "s"), ("ba", "s")]], Clustering::empty());
        let v = CharVocab::build([&d]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.id('a'), 1);
        assert_eq!(v.id('b'), 2);
        assert_eq!(v.id('∆'), CharVocab::UNKNOWN);
        let empty = CharVocab::build(std::iter::empty::<&Document>());
        assert_eq!(empty.len(), 1);
    }
}
