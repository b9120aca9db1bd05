use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Bijection between character tokens and integer ids.
///
/// Ids 0 and 1 are always `<pad>` and `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new()).expect("reserved tokens only")
    }
}

impl Vocabulary {
    /// Build a vocabulary from the tokens after the two reserved ones.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            index: HashMap::new(),
        };
        vocab.index.insert(PAD_TOKEN.to_string(), PAD_ID);
        vocab.index.insert(UNK_TOKEN.to_string(), UNK_ID);
        for token in tokens {
            let token = token.into();
            if token.contains(['\n', '\r']) || token.is_empty() {
                return Err(Error::invalid(format!(
                    "token {token:?} cannot be stored in a vocabulary file"
                )));
            }
            if vocab.index.contains_key(&token) {
                return Err(Error::invalid(format!("duplicate token {token:?}")));
            }
            vocab.index.insert(token.clone(), vocab.tokens.len() as u32);
            vocab.tokens.push(token);
        }
        Ok(vocab)
    }

    /// Character vocabulary over `texts` (minimum frequency 1), in code point
    /// order so the result does not depend on text order.
    pub fn build<'a, I>(texts: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let chars: BTreeSet<char> = texts
            .into_iter()
            .flat_map(str::chars)
            .filter(|c| *c != '\n' && *c != '\r')
            .collect();
        Self::from_tokens(chars.into_iter().map(String::from))
            .expect("distinct single characters")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        // The reserved ids are always present.
        false
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Character-level tokenization; unseen characters map to `<unk>`.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut buf = [0u8; 4];
        text.chars()
            .map(|c| self.id(c.encode_utf8(&mut buf)).unwrap_or(UNK_ID))
            .collect()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        for (line_no, reserved) in [PAD_TOKEN, UNK_TOKEN].into_iter().enumerate() {
            match lines.next() {
                Some(line) if line == reserved => {}
                other => {
                    return Err(Error::parse(
                        line_no + 1,
                        "token",
                        format!("expected reserved token {reserved}, found {other:?}"),
                    ))
                }
            }
        }
        let tokens: Vec<&str> = lines.collect();
        Self::from_tokens(tokens.iter().copied()).map_err(|e| Error::parse(0, "token", e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for token in &self.tokens {
            writeln!(out, "{token}").expect("write to vec");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}
