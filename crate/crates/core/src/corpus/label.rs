use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Functional role of a clause in a fraud complaint.
///
/// The integer codes are stable and used as row/column indices throughout
/// the crate (probability vectors, confusion matrices, transition tables).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ElementLabel {
    /// Content fabrication.
    CF = 0,
    /// Identity fabrication.
    IF = 1,
    /// Remittance excuse.
    RE = 2,
    /// Contact platform.
    CP = 3,
    /// Fraud realization.
    FR = 4,
    /// User demand.
    UD = 5,
    /// Non-fraudulent statement.
    NONE = 6,
}

pub const NUM_LABELS: usize = 7;

impl ElementLabel {
    pub const ALL: [ElementLabel; NUM_LABELS] = [
        ElementLabel::CF,
        ElementLabel::IF,
        ElementLabel::RE,
        ElementLabel::CP,
        ElementLabel::FR,
        ElementLabel::UD,
        ElementLabel::NONE,
    ];

    /// The six labels that carry a fraud element, i.e. everything but NONE.
    pub const ELEMENTS: [ElementLabel; NUM_LABELS - 1] = [
        ElementLabel::CF,
        ElementLabel::IF,
        ElementLabel::RE,
        ElementLabel::CP,
        ElementLabel::FR,
        ElementLabel::UD,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ElementLabel::CF => "CF",
            ElementLabel::IF => "IF",
            ElementLabel::RE => "RE",
            ElementLabel::CP => "CP",
            ElementLabel::FR => "FR",
            ElementLabel::UD => "UD",
            ElementLabel::NONE => "NONE",
        }
    }

    pub fn is_element(self) -> bool {
        self != ElementLabel::NONE
    }
}

impl fmt::Display for ElementLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ElementLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|label| label.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown label {s:?}")))
    }
}

impl Serialize for ElementLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ElementLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
