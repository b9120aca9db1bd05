use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use super::{Clause, Corpus, ElementLabel, Paragraph};
use crate::error::{Error, Result};

#[derive(Serialize)]
struct ClauseRecord<'a> {
    text: &'a str,
    gold: Option<ElementLabel>,
    annotators: Option<&'a [(String, ElementLabel)]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    vector: Option<&'a [f64]>,
}

#[derive(Serialize)]
struct ParagraphRecord<'a> {
    id: &'a str,
    clauses: Vec<ClauseRecord<'a>>,
}

/// Read a line-delimited JSON corpus; the vocabulary is built from its text.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text)
}

pub fn parse_corpus(text: &str) -> Result<Corpus> {
    let mut paragraphs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        paragraphs.push(parse_record(i + 1, line)?);
    }
    Corpus::new(paragraphs)
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    write_corpus_to(corpus, &mut out)?;
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_corpus_to(corpus: &Corpus, out: &mut impl Write) -> Result<()> {
    for p in corpus.paragraphs() {
        let record = ParagraphRecord {
            id: p.id(),
            clauses: p
                .clauses()
                .iter()
                .map(|c| ClauseRecord {
                    text: &c.text,
                    gold: c.gold,
                    annotators: c.annotators.as_deref(),
                    vector: c.vector.as_deref(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut *out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io("<corpus>", e))?;
    }
    Ok(())
}

fn parse_record(line: usize, text: &str) -> Result<Paragraph> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| Error::parse(line, "<record>", e.to_string()))?;
    let object = value
        .as_object()
        .ok_or_else(|| Error::parse(line, "<record>", "expected a JSON object"))?;

    let id = match object.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(Error::parse(line, "id", "expected a string")),
        None => return Err(Error::parse(line, "id", "missing")),
    };
    let clauses = match object.get("clauses") {
        Some(Value::Array(items)) => items,
        Some(_) => return Err(Error::parse(line, "clauses", "expected an array")),
        None => return Err(Error::parse(line, "clauses", "missing")),
    };
    if clauses.is_empty() {
        return Err(Error::parse(line, "clauses", "paragraph has no clauses"));
    }
    let clauses = clauses
        .iter()
        .enumerate()
        .map(|(i, item)| parse_clause(line, i, item))
        .collect::<Result<Vec<_>>>()?;
    Paragraph::new(id, clauses).map_err(|e| Error::parse(line, "clauses", e.to_string()))
}

fn parse_clause(line: usize, index: usize, value: &Value) -> Result<Clause> {
    let field = |name: &str| format!("clauses[{index}].{name}");
    let object: &Map<String, Value> = value
        .as_object()
        .ok_or_else(|| Error::parse(line, &format!("clauses[{index}]"), "expected a JSON object"))?;

    let text = match object.get("text") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(Value::String(_)) => return Err(Error::parse(line, &field("text"), "empty clause")),
        Some(_) => return Err(Error::parse(line, &field("text"), "expected a string")),
        None => return Err(Error::parse(line, &field("text"), "missing")),
    };
    let gold = match object.get("gold") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(
            s.parse::<ElementLabel>()
                .map_err(|e| Error::parse(line, &field("gold"), e.to_string()))?,
        ),
        Some(_) => return Err(Error::parse(line, &field("gold"), "expected a label string or null")),
    };
    let annotators = match object.get("annotators") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => Some(
            items
                .iter()
                .map(|item| parse_annotation(item).map_err(|m| Error::parse(line, &field("annotators"), m)))
                .collect::<Result<Vec<_>>>()?,
        ),
        Some(_) => return Err(Error::parse(line, &field("annotators"), "expected an array or null")),
    };
    let vector = match object.get("vector") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => Some(
            items
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| Error::parse(line, &field("vector"), "expected numbers")))
                .collect::<Result<Vec<_>>>()?,
        ),
        Some(_) => return Err(Error::parse(line, &field("vector"), "expected an array of numbers")),
    };
    Ok(Clause {
        text,
        tokens: Vec::new(),
        gold,
        annotators,
        vector,
    })
}

fn parse_annotation(value: &Value) -> std::result::Result<(String, ElementLabel), String> {
    match value.as_array().map(Vec::as_slice) {
        Some([Value::String(who), Value::String(label)]) => {
            let label = label.parse::<ElementLabel>().map_err(|e| e.to_string())?;
            Ok((who.clone(), label))
        }
        _ => Err("expected [annotator, label] pairs".to_string()),
    }
}
