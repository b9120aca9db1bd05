//! Adjudication of double-annotated clauses and Cohen's kappa agreement.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::corpus::{Clause, Corpus, ElementLabel, Paragraph, NUM_LABELS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", content = "label", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Agreed(ElementLabel),
    Resolved(ElementLabel),
    Discarded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AdjudicationResult {
    pub outcome: Outcome,
    pub used_third: bool,
}

impl AdjudicationResult {
    pub fn label(&self) -> Option<ElementLabel> {
        match self.outcome {
            Outcome::Agreed(l) | Outcome::Resolved(l) => Some(l),
            Outcome::Discarded => None,
        }
    }
}

/// Majority rule over two annotations plus an optional tie-breaker.
///
/// The third annotation is only consulted when the first two disagree, and
/// is then required.
pub fn adjudicate(
    a: ElementLabel,
    b: ElementLabel,
    third: Option<ElementLabel>,
) -> Result<AdjudicationResult> {
    if a == b {
        return Ok(AdjudicationResult {
            outcome: Outcome::Agreed(a),
            used_third: false,
        });
    }
    let third = third.ok_or_else(|| Error::invalid("third annotation required"))?;
    let outcome = if third == a || third == b {
        Outcome::Resolved(third)
    } else {
        Outcome::Discarded
    };
    Ok(AdjudicationResult {
        outcome,
        used_third: true,
    })
}

/// Unweighted Cohen's kappa over a 7x7 contingency of paired labels.
pub fn cohen_kappa(pairs: &[(ElementLabel, ElementLabel)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("kappa needs at least one pair"));
    }
    let n = pairs.len() as f64;
    let mut left = [0usize; NUM_LABELS];
    let mut right = [0usize; NUM_LABELS];
    let mut agree = 0usize;
    for &(a, b) in pairs {
        left[a.index()] += 1;
        right[b.index()] += 1;
        agree += usize::from(a == b);
    }
    let observed = agree as f64 / n;
    let expected: f64 = left
        .iter()
        .zip(&right)
        .map(|(&l, &r)| (l as f64 / n) * (r as f64 / n))
        .sum();
    // p_e reaches 1 only when both sides use one and the same label.
    if left == right && left.iter().filter(|&&c| c > 0).count() == 1 {
        return Err(Error::invalid("kappa undefined: degenerate marginals"));
    }
    Ok((observed - expected) / (1.0 - expected))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairKappa {
    pub a: String,
    pub b: String,
    pub kappa: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaReport {
    pub pairs: Vec<PairKappa>,
    pub mean_kappa: f64,
}

/// Kappa for every unordered annotator pair over the clauses both labeled,
/// plus the unweighted mean over pairs.
pub fn pairwise_kappa_report(corpus: &Corpus) -> Result<KappaReport> {
    let mut shared: BTreeMap<(String, String), Vec<(ElementLabel, ElementLabel)>> = BTreeMap::new();
    for clause in corpus.clauses() {
        let Some(annotations) = &clause.annotators else {
            continue;
        };
        for (i, (who_a, label_a)) in annotations.iter().enumerate() {
            for (who_b, label_b) in &annotations[i + 1..] {
                if who_a == who_b {
                    continue;
                }
                let (key, pair) = if who_a < who_b {
                    ((who_a.clone(), who_b.clone()), (*label_a, *label_b))
                } else {
                    ((who_b.clone(), who_a.clone()), (*label_b, *label_a))
                };
                shared.entry(key).or_default().push(pair);
            }
        }
    }
    if shared.is_empty() {
        return Err(Error::invalid("no annotator pair shares a clause"));
    }
    let pairs = shared
        .into_iter()
        .map(|((a, b), labels)| {
            let kappa = cohen_kappa(&labels)
                .map_err(|e| Error::invalid(format!("annotators {a} and {b}: {e}")))?;
            Ok(PairKappa {
                a,
                b,
                kappa,
                n: labels.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_kappa = pairs.iter().map(|p| p.kappa).sum::<f64>() / pairs.len() as f64;
    Ok(KappaReport { pairs, mean_kappa })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AdjudicationSummary {
    pub agreed: usize,
    pub resolved: usize,
    pub discarded: usize,
    /// Clauses without at least two annotations, passed through unchanged.
    pub untouched: usize,
    /// Paragraphs left with no clauses after discarding.
    pub dropped_paragraphs: usize,
}

/// Set gold labels from the first two annotations of every clause, using the
/// third (when present) as tie-breaker. Discarded clauses are removed.
pub fn adjudicate_corpus(corpus: &Corpus) -> Result<(Corpus, AdjudicationSummary)> {
    let mut summary = AdjudicationSummary::default();
    let mut paragraphs = Vec::with_capacity(corpus.len());
    for paragraph in corpus.paragraphs() {
        let mut kept: Vec<Clause> = Vec::with_capacity(paragraph.len());
        for (i, clause) in paragraph.clauses().iter().enumerate() {
            let labels: Vec<ElementLabel> = clause
                .annotators
                .as_deref()
                .unwrap_or_default()
                .iter()
                .map(|(_, l)| *l)
                .collect();
            if labels.len() < 2 {
                summary.untouched += 1;
                kept.push(clause.clone());
                continue;
            }
            let result = adjudicate(labels[0], labels[1], labels.get(2).copied())
                .map_err(|e| Error::invalid(format!("paragraph {:?} clause {i}: {e}", paragraph.id())))?;
            match result.outcome {
                Outcome::Agreed(_) => summary.agreed += 1,
                Outcome::Resolved(_) => summary.resolved += 1,
                Outcome::Discarded => summary.discarded += 1,
            }
            if let Some(label) = result.label() {
                let mut clause = clause.clone();
                clause.gold = Some(label);
                kept.push(clause);
            }
        }
        if kept.is_empty() {
            summary.dropped_paragraphs += 1;
        } else {
            paragraphs.push(Paragraph::new(paragraph.id(), kept)?);
        }
    }
    Ok((Corpus::with_vocabulary(paragraphs, corpus.vocabulary().clone())?, summary))
}
