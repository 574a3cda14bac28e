//! Word embedding lookup with a reserved unknown-word row.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const UNK: &str = "<unk>";

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("embedding file has no vectors")]
    Empty,
    #[error("dimension must be positive")]
    ZeroDim,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Repr {
    words: Vec<String>,
    matrix: Array2<f64>,
}

/// Row 0 is the unknown-word vector. Lookups lowercase their input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Repr", into = "Repr")]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    pub matrix: Array2<f64>,
}

impl From<Repr> for EmbeddingTable {
    fn from(r: Repr) -> Self {
        let index = r.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self {
            words: r.words,
            index,
            matrix: r.matrix,
        }
    }
}

impl From<EmbeddingTable> for Repr {
    fn from(t: EmbeddingTable) -> Self {
        Repr {
            words: t.words,
            matrix: t.matrix,
        }
    }
}

impl EmbeddingTable {
    /// `rows[i]` is the vector of `words[i]`; the UNK row is prepended as
    /// zeros. Later duplicates of a (lowercased) word are ignored.
    pub fn from_rows(words: Vec<String>, rows: Vec<Vec<f64>>, dim: usize) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        let mut kept_words = vec![UNK.to_string()];
        let mut data = vec![0.0; dim];
        let mut index = HashMap::new();
        index.insert(UNK.to_string(), 0);
        for (w, row) in words.into_iter().zip(rows) {
            let w = w.to_lowercase();
            if index.contains_key(&w) {
                continue;
            }
            index.insert(w.clone(), kept_words.len());
            kept_words.push(w);
            data.extend_from_slice(&row);
        }
        let matrix = Array2::from_shape_vec((kept_words.len(), dim), data).expect("row lengths checked by caller");
        Ok(Self {
            words: kept_words,
            index,
            matrix,
        })
    }

    /// Parses `word v1 ... vD` lines. A first line of exactly two integers is
    /// taken as a `count dim` header and skipped.
    pub fn parse(text: &str) -> Result<Self, EmbeddingError> {
        let mut words = Vec::new();
        let mut rows = Vec::new();
        let mut dim = None;
        for (i, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                continue;
            }
            let err = |message: String| EmbeddingError::Parse { line: i + 1, message };
            let vals = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| err("non-numeric or non-finite value".into()))?;
            match dim {
                None if vals.is_empty() => return Err(err("word without vector".into())),
                None => dim = Some(vals.len()),
                Some(d) if d != vals.len() => return Err(err(format!("expected {d} values, found {}", vals.len()))),
                _ => {}
            }
            words.push(fields[0].to_string());
            rows.push(vals);
        }
        let dim = dim.ok_or(EmbeddingError::Empty)?;
        Self::from_rows(words, rows, dim)
    }

    /// Uniform(-0.5, 0.5) vectors for the given words.
    pub fn random(words: &[String], dim: usize, seed: u64) -> Result<Self, EmbeddingError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = words
            .iter()
            .map(|_| (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect())
            .collect();
        Self::from_rows(words.to_vec(), rows, dim)
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }

    /// Row index of a word, 0 when unknown.
    pub fn lookup(&self, word: &str) -> usize {
        if let Some(&i) = self.index.get(word) {
            return i;
        }
        self.index.get(&word.to_lowercase()).copied().unwrap_or(0)
    }

    pub fn vector(&self, word: &str) -> ArrayView1<'_, f64> {
        self.matrix.row(self.lookup(word))
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Text format with a `count dim` header. The UNK row is not written.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.words.len() - 1, self.dim());
        for (w, row) in self.words.iter().zip(self.matrix.rows()).skip(1) {
            out.push_str(w);
            for v in row {
                out.push(' ');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_detected() {
        let t = EmbeddingTable::parse("2 3\nscreen 1 2 3\nGood 0.5 0 -1\n").unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.len(), 3);
        assert_eq!(t.vector("SCREEN").to_vec(), vec![1.0, 2.0, 3.0]);
        assert_eq!(t.vector("good")[2], -1.0);
        assert_eq!(t.lookup("missing"), 0);
        assert_eq!(t.vector("missing").to_vec(), vec![0.0; 3]);
    }

    #[test]
    fn headerless_and_errors() {
        let t = EmbeddingTable::parse("a 1 2\nb 3 4\n").unwrap();
        assert_eq!(t.dim(), 2);
        assert!(matches!(
            EmbeddingTable::parse("a 1 2\nb 3\n"),
            Err(EmbeddingError::Parse { line: 2, .. })
        ));
        assert!(matches!(EmbeddingTable::parse("a 1 x\n"), Err(EmbeddingError::Parse { line: 1, .. })));
        assert_eq!(EmbeddingTable::parse("\n").unwrap_err(), EmbeddingError::Empty);
    }

    #[test]
    fn text_round_trip() {
        let t = EmbeddingTable::random(&["x".into(), "Y".into()], 3, 2).unwrap();
        assert_eq!(EmbeddingTable::parse(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn json_round_trip() {
        let t = EmbeddingTable::random(&["x".into(), "y".into()], 4, 1).unwrap();
        let back: EmbeddingTable = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.lookup("y"), 2);
    }
}
