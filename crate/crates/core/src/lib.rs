//! Clause-level fraud element identification.
//!
//! Complaint paragraphs are cut into clauses, and every clause is assigned
//! one of seven [`ElementLabel`]s by a hierarchical recurrent tagger.

pub mod analytics;
pub mod annotation;
pub mod cli;
pub mod corpus;
mod error;
pub mod model;
pub mod synthgen;
pub mod training;

pub use corpus::{Clause, Corpus, ElementLabel, Paragraph, Vocabulary, NUM_LABELS};
pub use error::{Error, Result};
