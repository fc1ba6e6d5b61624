//! Reader and writer for the CoNLL-2012 `*_conll` column format.
//!
//! Column layout (whitespace separated): document id, part number, word
//! index, word, POS, parse bit, predicate lemma, frameset, word sense,
//! speaker, named entities, predicate arguments..., coreference. Files with
//! fewer than 12 columns are accepted; the parse bit and speaker are then
//! treated as absent.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use super::types::{clusters_from_ids, Clustering, ClusteringError, Document, Genre, Span, Token};

const FULL_COLUMNS: usize = 12;
const PARSE_COLUMN: usize = 5;
const SPEAKER_COLUMN: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConllError {
    #[error("line {line}: coreference bracket for cluster {cluster} opened but never closed")]
    Unclosed { line: usize, cluster: u64 },
    #[error("line {line}: `{cluster})` closes a cluster that has no open bracket")]
    UnmatchedClose { line: usize, cluster: u64 },
    #[error("line {line}: expected {expected} columns, found {found}")]
    ColumnCount { line: usize, expected: usize, found: usize },
    #[error("line {line}: malformed coreference field `{field}`")]
    BadCorefField { line: usize, field: String },
    #[error("line {line}: malformed document header `{header}`")]
    BadHeader { line: usize, header: String },
    #[error("line {line}: token outside of a document")]
    OutsideDocument { line: usize },
    #[error("line {line}: `#begin document` before the previous document ended")]
    NestedDocument { line: usize },
    #[error("document `{doc}` is not terminated by `#end document`")]
    Unterminated { doc: String },
    #[error("line {line}: document has no tokens")]
    EmptyDocument { line: usize },
    #[error("line {line}: mention {span} crosses a sentence boundary")]
    CrossSentence { line: usize, span: Span },
    #[error("line {line}: {source}")]
    Clustering { line: usize, source: ClusteringError },
    #[error("line {line}: unbalanced parse bit")]
    BadParse { line: usize },
    #[error("predicted span {span} lies outside the document ({len} tokens)")]
    OutOfBounds { span: Span, len: usize },
    #[error("predicted clusters share span {0}")]
    SharedSpan(Span),
    #[error("mentions {0} and {1} of one cluster overlap by more than a token and cannot be bracketed")]
    CrossingInCluster(Span, Span),
}

#[derive(Default)]
struct DocBuilder {
    doc_id: String,
    part: u32,
    tokens: Vec<Token>,
    sentences: Vec<std::ops::Range<usize>>,
    sentence_start: usize,
    columns: Option<usize>,
    open: HashMap<u64, Vec<usize>>,
    open_line: HashMap<u64, usize>,
    clusters: BTreeMap<u64, Vec<Span>>,
    parse_stack: Vec<usize>,
    constituents: BTreeSet<Span>,
    has_parse: bool,
}

impl DocBuilder {
    fn close_sentence(&mut self) {
        if self.tokens.len() > self.sentence_start {
            self.sentences.push(self.sentence_start..self.tokens.len());
            self.sentence_start = self.tokens.len();
        }
    }

    fn add_token(&mut self, line: usize, cols: Vec<&str>) -> Result<(), ConllError> {
        let expected = *self.columns.get_or_insert(cols.len());
        if cols.len() != expected || cols.len() < 5 {
            return Err(ConllError::ColumnCount {
                line,
                expected: expected.max(5),
                found: cols.len(),
            });
        }
        let t = self.tokens.len();
        let full = cols.len() >= FULL_COLUMNS;
        let speaker = if full { cols[SPEAKER_COLUMN] } else { "-" };

        if full {
            self.read_parse_bit(line, cols[PARSE_COLUMN], t)?;
        }
        self.read_coref_field(line, cols[cols.len() - 1], t)?;

        self.tokens.push(Token {
            text: cols[3].to_string(),
            sentence: self.sentences.len(),
            speaker: speaker.to_string(),
            columns: Some(cols[..cols.len() - 1].iter().map(|s| s.to_string()).collect()),
        });
        Ok(())
    }

    fn read_parse_bit(&mut self, line: usize, bit: &str, t: usize) -> Result<(), ConllError> {
        if bit == "-" {
            return Ok(());
        }
        self.has_parse = true;
        for ch in bit.chars() {
            match ch {
                '(' => self.parse_stack.push(t),
                ')' => {
                    let start = self.parse_stack.pop().ok_or(ConllError::BadParse { line })?;
                    self.constituents.insert(Span::new(start, t));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn read_coref_field(&mut self, line: usize, field: &str, t: usize) -> Result<(), ConllError> {
        if field == "-" {
            return Ok(());
        }
        let bad = || ConllError::BadCorefField {
            line,
            field: field.to_string(),
        };
        for part in field.split('|') {
            let opens = part.starts_with('(');
            let closes = part.ends_with(')');
            let digits = part.trim_start_matches('(').trim_end_matches(')');
            let id: u64 = digits.parse().map_err(|_| bad())?;
            // "(" alone or ")" alone would parse as empty digits and fail above
            match (opens, closes) {
                (true, true) => {
                    if part.len() != digits.len() + 2 {
                        return Err(bad());
                    }
                    self.clusters.entry(id).or_default().push(Span::new(t, t));
                }
                (true, false) => {
                    self.open.entry(id).or_default().push(t);
                    self.open_line.entry(id).or_insert(line);
                }
                (false, true) => {
                    let start = self
                        .open
                        .get_mut(&id)
                        .and_then(Vec::pop)
                        .ok_or(ConllError::UnmatchedClose { line, cluster: id })?;
                    if self.open.get(&id).is_some_and(Vec::is_empty) {
                        self.open_line.remove(&id);
                    }
                    self.clusters.entry(id).or_default().push(Span::new(start, t));
                }
                (false, false) => return Err(bad()),
            }
        }
        Ok(())
    }

    fn finish(mut self, line: usize) -> Result<Document, ConllError> {
        self.close_sentence();
        if let Some((&cluster, _)) = self.open.iter().find(|(_, v)| !v.is_empty()) {
            return Err(ConllError::Unclosed {
                line: self.open_line.get(&cluster).copied().unwrap_or(line),
                cluster,
            });
        }
        if self.tokens.is_empty() {
            return Err(ConllError::EmptyDocument { line });
        }
        for spans in self.clusters.values() {
            for &span in spans {
                if self.tokens[span.start].sentence != self.tokens[span.end].sentence {
                    return Err(ConllError::CrossSentence { line, span });
                }
            }
        }
        let gold = clusters_from_ids(self.clusters).map_err(|source| ConllError::Clustering { line, source })?;
        Ok(Document {
            genre: Genre::from_doc_id(&self.doc_id),
            doc_id: self.doc_id,
            part: self.part,
            tokens: self.tokens,
            sentences: self.sentences,
            gold,
            constituents: self.has_parse.then(|| self.constituents.into_iter().collect()),
        })
    }
}

fn parse_header(line: usize, header: &str) -> Result<(String, u32), ConllError> {
    let bad = || ConllError::BadHeader {
        line,
        header: header.to_string(),
    };
    let rest = header.strip_prefix("#begin document").ok_or_else(bad)?.trim();
    let (id_part, part) = match rest.split_once(';') {
        Some((id, tail)) => {
            let num = tail.trim().strip_prefix("part").ok_or_else(bad)?.trim();
            (id.trim(), num.parse::<u32>().map_err(|_| bad())?)
        }
        None => (rest, 0),
    };
    let id = id_part
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .unwrap_or(id_part);
    if id.is_empty() {
        return Err(bad());
    }
    Ok((id.to_string(), part))
}

/// Parses every document in a `*_conll` text.
pub fn parse_conll(text: &str) -> Result<Vec<Document>, ConllError> {
    let mut docs = Vec::new();
    let mut current: Option<DocBuilder> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.starts_with("#begin document") {
            if current.is_some() {
                return Err(ConllError::NestedDocument { line });
            }
            let (doc_id, part) = parse_header(line, trimmed)?;
            current = Some(DocBuilder {
                doc_id,
                part,
                ..Default::default()
            });
        } else if trimmed.starts_with("#end document") {
            let builder = current.take().ok_or(ConllError::OutsideDocument { line })?;
            docs.push(builder.finish(line)?);
        } else if trimmed.is_empty() {
            if let Some(b) = current.as_mut() {
                b.close_sentence();
            }
        } else if trimmed.starts_with('#') {
            continue;
        } else {
            let b = current.as_mut().ok_or(ConllError::OutsideDocument { line })?;
            b.add_token(line, trimmed.split_whitespace().collect())?;
        }
    }
    if let Some(b) = current {
        return Err(ConllError::Unterminated { doc: b.doc_id });
    }
    Ok(docs)
}

/// Coreference column values for every token of a document of `len` tokens.
fn coref_fields(len: usize, predicted: &Clustering) -> Result<Vec<String>, ConllError> {
    let mut seen = BTreeSet::new();
    let mut opens: Vec<Vec<(usize, usize)>> = vec![Vec::new(); len];
    let mut singles: Vec<Vec<usize>> = vec![Vec::new(); len];
    let mut closes: Vec<Vec<(usize, usize)>> = vec![Vec::new(); len];
    for (id, cluster) in predicted.clusters().iter().enumerate() {
        // sharing only a boundary token is fine since closes are written first
        for (k, a) in cluster.iter().enumerate() {
            if let Some(b) = cluster[k + 1..].iter().find(|b| a.crosses(b) && a.end != b.start && b.end != a.start) {
                return Err(ConllError::CrossingInCluster(*a, *b));
            }
        }
        for &span in cluster {
            if span.end >= len || span.start > span.end {
                return Err(ConllError::OutOfBounds { span, len });
            }
            if !seen.insert(span) {
                return Err(ConllError::SharedSpan(span));
            }
            if span.start == span.end {
                singles[span.start].push(id);
            } else {
                opens[span.start].push((span.end, id));
                closes[span.end].push((span.start, id));
            }
        }
    }
    Ok((0..len)
        .map(|t| {
            // closes come first so a reader matching each close to the
            // latest open of its cluster never pairs it with a span opening
            // here; inner spans close first, outer spans open first
            opens[t].sort_by(|a, b| b.cmp(a));
            closes[t].sort_by(|a, b| b.cmp(a));
            let mut parts: Vec<String> = closes[t].iter().map(|(_, id)| format!("{id})")).collect();
            parts.extend(opens[t].iter().map(|(_, id)| format!("({id}")));
            parts.extend(singles[t].iter().map(|id| format!("({id})")));
            if parts.is_empty() {
                "-".to_string()
            } else {
                parts.join("|")
            }
        })
        .collect())
}

/// Serialises `document` with `predicted` in the coreference column.
/// Singleton clusters are dropped; cluster ids are dense from 0 in
/// canonical cluster order.
pub fn write_conll(document: &Document, predicted: &Clustering) -> Result<String, ConllError> {
    let predicted = predicted.without_singletons();
    let fields = coref_fields(document.tokens.len(), &predicted)?;
    let mut out = String::new();
    let _ = writeln!(out, "#begin document ({}); part {:03}", document.doc_id, document.part);
    for range in &document.sentences {
        for (wi, t) in range.clone().enumerate() {
            let tok = &document.tokens[t];
            let mut cols: Vec<String> = match &tok.columns {
                Some(c) => c.clone(),
                None => vec![
                    document.doc_id.clone(),
                    document.part.to_string(),
                    wi.to_string(),
                    tok.text.clone(),
                    "-".into(),
                    "-".into(),
                    "-".into(),
                    "-".into(),
                    "-".into(),
                    tok.speaker.clone(),
                    "*".into(),
                ],
            };
            cols.push(fields[t].clone());
            out.push_str(&cols.join("\t"));
            out.push('\n');
        }
        out.push('\n');
    }
    out.push_str("#end document\n");
    Ok(out)
}

/// Writes several documents into one file body.
pub fn write_conll_documents<'a, I>(items: I) -> Result<String, ConllError>
where
    I: IntoIterator<Item = (&'a Document, &'a Clustering)>,
{
    let mut out = String::new();
    for (doc, clustering) in items {
        out.push_str(&write_conll(doc, clustering)?);
    }
    Ok(out)
}
