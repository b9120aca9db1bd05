//! Clause-level corpus model: segmentation, tokenization, splits and the
//! line-delimited JSON corpus format.

mod io;
mod label;
mod segment;
mod vocab;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use io::{parse_corpus, read_corpus, write_corpus, write_corpus_to};
pub use label::{ElementLabel, NUM_LABELS};
pub use segment::{is_clause_delimiter, segment_paragraph, CLAUSE_DELIMITERS};
pub use vocab::{Vocabulary, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};

/// Clauses longer than this are truncated before entering the model.
pub const MAX_CLAUSE_TOKENS: usize = 128;
/// Paragraphs with more clauses than this are truncated before entering the model.
pub const MAX_PARAGRAPH_CLAUSES: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Clause {
    pub text: String,
    pub tokens: Vec<u32>,
    pub gold: Option<ElementLabel>,
    pub annotators: Option<Vec<(String, ElementLabel)>>,
    /// Precomputed clause representation for the external encoder mode.
    pub vector: Option<Vec<f64>>,
}

impl Clause {
    /// Untokenized clause; tokens are filled in when it joins a [`Corpus`].
    pub fn new(text: impl Into<String>, gold: Option<ElementLabel>) -> Self {
        Clause {
            text: text.into(),
            tokens: Vec::new(),
            gold,
            annotators: None,
            vector: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Paragraph {
    id: String,
    clauses: Vec<Clause>,
}

impl Paragraph {
    pub fn new(id: impl Into<String>, clauses: Vec<Clause>) -> Result<Self> {
        let id = id.into();
        if clauses.is_empty() {
            return Err(Error::invalid(format!("paragraph {id:?} has no clauses")));
        }
        if let Some(i) = clauses.iter().position(|c| c.text.is_empty()) {
            return Err(Error::invalid(format!("paragraph {id:?}: clause {i} is empty")));
        }
        Ok(Paragraph { id, clauses })
    }

    /// Segment raw paragraph text into unlabeled clauses. Returns `None` for
    /// text with no content.
    pub fn from_text(id: impl Into<String>, text: &str) -> Option<Self> {
        let clauses: Vec<Clause> = segment_paragraph(text)
            .into_iter()
            .map(|c| Clause::new(c, None))
            .collect();
        Paragraph::new(id, clauses).ok()
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    /// Gold labels of every clause, or an error naming the first unlabeled one.
    pub fn gold_labels(&self) -> Result<Vec<ElementLabel>> {
        self.clauses
            .iter()
            .enumerate()
            .map(|(i, c)| {
                c.gold.ok_or_else(|| {
                    Error::invalid(format!("paragraph {:?}: clause {i} has no gold label", self.id))
                })
            })
            .collect()
    }

    fn tokenized(mut self, vocab: &Vocabulary) -> Self {
        for clause in &mut self.clauses {
            clause.tokens = vocab.tokenize(&clause.text);
        }
        self
    }
}

/// An immutable set of paragraphs plus the vocabulary their tokens refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    paragraphs: Vec<Paragraph>,
    vocabulary: Vocabulary,
}

impl Corpus {
    /// Corpus with a character vocabulary built from its own text.
    pub fn new(paragraphs: Vec<Paragraph>) -> Result<Self> {
        let vocabulary =
            Vocabulary::build(paragraphs.iter().flat_map(|p| p.clauses.iter().map(|c| c.text.as_str())));
        Self::with_vocabulary(paragraphs, vocabulary)
    }

    /// Tokenize `paragraphs` against an existing vocabulary.
    pub fn with_vocabulary(paragraphs: Vec<Paragraph>, vocabulary: Vocabulary) -> Result<Self> {
        let mut seen = HashSet::with_capacity(paragraphs.len());
        for p in &paragraphs {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::invalid(format!("duplicate paragraph id {:?}", p.id)));
            }
        }
        let paragraphs = paragraphs.into_iter().map(|p| p.tokenized(&vocabulary)).collect();
        Ok(Corpus {
            paragraphs,
            vocabulary,
        })
    }

    /// Same paragraphs re-tokenized against `vocabulary`.
    pub fn retokenized(&self, vocabulary: &Vocabulary) -> Corpus {
        Corpus {
            paragraphs: self
                .paragraphs
                .iter()
                .cloned()
                .map(|p| p.tokenized(vocabulary))
                .collect(),
            vocabulary: vocabulary.clone(),
        }
    }

    pub fn paragraphs(&self) -> &[Paragraph] {
        &self.paragraphs
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn len(&self) -> usize {
        self.paragraphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paragraphs.is_empty()
    }

    pub fn num_clauses(&self) -> usize {
        self.paragraphs.iter().map(Paragraph::len).sum()
    }

    pub fn clauses(&self) -> impl Iterator<Item = &Clause> {
        self.paragraphs.iter().flat_map(|p| p.clauses.iter())
    }

    pub fn into_paragraphs(self) -> Vec<Paragraph> {
        self.paragraphs
    }

    /// SHA-256 over the paragraph ids in order; equal checksums mean equal splits.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.paragraphs {
            hasher.update(p.id.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }

    fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            paragraphs: indices.iter().map(|&i| self.paragraphs[i].clone()).collect(),
            vocabulary: self.vocabulary.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub train: Corpus,
    pub valid: Corpus,
    pub test: Corpus,
}

/// Shuffle paragraphs with a seeded permutation and cut them into
/// train/valid/test. Train and valid get `floor(N * r / sum)`; test takes the
/// remainder.
pub fn split_corpus(corpus: &Corpus, ratios: (u32, u32, u32), seed: u64) -> Result<CorpusSplit> {
    let (a, b, c) = ratios;
    if a == 0 || b == 0 || c == 0 {
        return Err(Error::invalid("split ratios must be positive"));
    }
    let n = corpus.len();
    if n < 3 {
        return Err(Error::invalid("corpus too small to split"));
    }
    let total = (a + b + c) as usize;
    let n_train = n * a as usize / total;
    let n_valid = n * b as usize / total;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    Ok(CorpusSplit {
        train: corpus.subset(&order[..n_train]),
        valid: corpus.subset(&order[n_train..n_train + n_valid]),
        test: corpus.subset(&order[n_train + n_valid..]),
    })
}
