//! Fixtures shared by the integration tests.

use coref_core::corpus::{Clustering, Document, EmbeddingTable, Span};
use coref_core::encoder::WordEmbedder;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NAMES: [&str; 6] = ["Alice", "Bob", "Carol", "Dmitri", "Erin", "Farid"];
const VERBS: [&str; 5] = ["met", "called", "thanked", "visited", "saw"];
const FILLER: [&str; 4] = ["today", "again", "later", "briefly"];

fn pronoun(name: &str) -> &'static str {
    match name {
        "Alice" | "Carol" | "Erin" => "she",
        _ => "he",
    }
}

/// A story of up to `sentences` sentences about two or three people. Each
/// sentence is `SUBJ VERB OBJ FILLER .` where the subject and object are a
/// name or a pronoun referring back to an earlier name.
pub fn story(id: usize, sentences: usize, rng: &mut impl Rng) -> Document {
    let size = rng.random_range(2..=3);
    let cast: Vec<&str> = NAMES.choose_multiple(rng, size).copied().collect();
    let mut tokens: Vec<Vec<(String, String)>> = Vec::new();
    let mut mentions: Vec<Vec<Span>> = vec![Vec::new(); cast.len()];
    let mut introduced = vec![false; cast.len()];
    let mut t = 0usize;
    for _ in 0..sentences {
        let a = rng.random_range(0..cast.len());
        let mut b = rng.random_range(0..cast.len());
        while b == a {
            b = rng.random_range(0..cast.len());
        }
        let mut sent = Vec::new();
        for (slot, who) in [(0, a), (2, b)] {
            if slot == 2 {
                sent.push((VERBS.choose(rng).unwrap().to_string(), "-".to_string()));
                t += 1;
            }
            let word = if introduced[who] && slot == 0 && pronoun(cast[who]) != pronoun(cast[b]) {
                pronoun(cast[who]).to_string()
            } else {
                cast[who].to_string()
            };
            introduced[who] = true;
            sent.push((word, "-".to_string()));
            mentions[who].push(Span::new(t, t));
            t += 1;
        }
        sent.push((FILLER.choose(rng).unwrap().to_string(), "-".to_string()));
        sent.push((".".to_string(), "-".to_string()));
        t += 2;
        tokens.push(sent);
    }
    let clusters: Vec<Vec<Span>> = mentions.into_iter().filter(|m| m.len() >= 2).collect();
    let borrowed: Vec<Vec<(&str, &str)>> = tokens
        .iter()
        .map(|s| s.iter().map(|(w, sp)| (w.as_str(), sp.as_str())).collect())
        .collect();
    Document::from_sentences(format!("nw/story_{id}"), &borrowed, Clustering::new(clusters).unwrap())
}

/// A random vector per distinct word of `docs`.
pub fn random_embeddings(docs: &[Document], dim: usize, seed: u64) -> WordEmbedder {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = EmbeddingTable::empty(dim);
    for d in docs {
        for tok in &d.tokens {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            table.insert(&tok.text, &v);
        }
    }
    WordEmbedder::new(vec![table])
}
