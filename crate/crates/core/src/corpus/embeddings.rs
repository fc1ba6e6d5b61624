use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: expected {expected} values, found {found}")]
    Dimension {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: `{value}` is not a number")]
    Number { line: usize, value: String },
}

/// Fixed pretrained word vectors, L2-normalised on load.
///
/// Stored in single precision; looked up vectors are widened to `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    vectors: Vec<f32>,
    lowercase_fallback: bool,
}

impl EmbeddingTable {
    pub fn empty(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            index: HashMap::new(),
            vectors: Vec::new(),
            lowercase_fallback: true,
        }
    }

    /// Reads `token v1 v2 ... vd` lines. A leading `count dim` header line is
    /// skipped. Duplicate tokens keep their first vector.
    pub fn from_reader<R: BufRead>(reader: R, expected_dim: usize) -> Result<Self, EmbeddingError> {
        let mut table = EmbeddingTable::empty(expected_dim);
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|source| EmbeddingError::Io {
                path: "<reader>".into(),
                source,
            })?;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values: Vec<&str> = fields.collect();
            if line_no == 1 && values.len() == 1 && expected_dim != 1 && token.parse::<usize>().is_ok() {
                continue;
            }
            if values.len() != expected_dim {
                return Err(EmbeddingError::Dimension {
                    line: line_no,
                    expected: expected_dim,
                    found: values.len(),
                });
            }
            let mut v = Vec::with_capacity(expected_dim);
            for s in values {
                let x: f64 = s.parse().map_err(|_| EmbeddingError::Number {
                    line: line_no,
                    value: s.to_string(),
                })?;
                v.push(x);
            }
            table.insert(token, &v);
        }
        Ok(table)
    }

    pub fn load(path: &Path, expected_dim: usize) -> Result<Self, EmbeddingError> {
        let file = std::fs::File::open(path).map_err(|source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(std::io::BufReader::new(file), expected_dim)
    }

    /// Adds a vector (normalised to unit length; zero stays zero). Returns
    /// false and leaves the table unchanged if the token is already present.
    pub fn insert(&mut self, token: &str, vector: &[f64]) -> bool {
        assert_eq!(vector.len(), self.dim);
        if self.index.contains_key(token) {
            return false;
        }
        let norm = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        self.index.insert(token.to_string(), self.index.len());
        self.vectors.extend(vector.iter().map(|x| (x * scale) as f32));
        true
    }

    pub fn set_lowercase_fallback(&mut self, on: bool) {
        self.lowercase_fallback = on;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    fn stored(&self, token: &str) -> Option<&[f32]> {
        let row = self.index.get(token).copied().or_else(|| {
            if self.lowercase_fallback {
                self.index.get(&token.to_lowercase()).copied()
            } else {
                None
            }
        })?;
        Some(&self.vectors[row * self.dim..(row + 1) * self.dim])
    }

    /// Exact token, then lowercased token, then the zero vector.
    pub fn lookup(&self, token: &str) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim);
        self.lookup_into(token, &mut out);
        out
    }

    pub fn lookup_into(&self, token: &str, out: &mut Vec<f64>) {
        match self.stored(token) {
            Some(v) => out.extend(v.iter().map(|&x| x as f64)),
            None => out.extend(std::iter::repeat_n(0.0, self.dim)),
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.stored(token).is_some()
    }
}
