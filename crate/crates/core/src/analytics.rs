//! Corpus statistics: per-label counts and novelty, positional stages,
//! successional-pair matrices, and confusion matrices.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::Serialize;

use crate::annotation::{pairwise_kappa_report, KappaReport};
use crate::corpus::{Corpus, ElementLabel, NUM_LABELS};
use crate::error::{Error, Result};

pub const NUM_STAGES: usize = 5;
const NUM_ELEMENTS: usize = NUM_LABELS - 1;

/// 1-based stage of the clause at 1-based `position` in a paragraph of
/// `len` clauses: the smallest `s` with `position / len <= s / n_stages`.
pub fn stage_of(position: usize, len: usize, n_stages: usize) -> usize {
    assert!(position >= 1 && position <= len, "position {position} outside 1..={len}");
    (n_stages * position).div_ceil(len)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelStats {
    pub label: ElementLabel,
    pub count: usize,
    pub proportion: f64,
    pub avg_length: f64,
    pub vocab_size: usize,
    /// `vocab_size / count`; zero for labels that never occur.
    pub novelty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryStats {
    pub total: usize,
    pub labels: Vec<LabelStats>,
}

impl CategoryStats {
    pub fn get(&self, label: ElementLabel) -> &LabelStats {
        &self.labels[label.index()]
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("statistic");
        for l in ElementLabel::ALL {
            write!(out, "\t{l}").unwrap();
        }
        out.push('\n');
        type Row = (&'static str, fn(&LabelStats) -> String);
        let rows: [Row; 5] = [
            ("clauses", |s| s.count.to_string()),
            ("proportion", |s| format!("{:.4}", s.proportion)),
            ("avg_length", |s| format!("{:.2}", s.avg_length)),
            ("vocab_size", |s| s.vocab_size.to_string()),
            ("novelty", |s| format!("{:.3}", s.novelty)),
        ];
        for (name, cell) in rows {
            out.push_str(name);
            for s in &self.labels {
                write!(out, "\t{}", cell(s)).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

pub fn categorical_stats(corpus: &Corpus) -> Result<CategoryStats> {
    let mut counts = [0usize; NUM_LABELS];
    let mut lengths = [0usize; NUM_LABELS];
    let mut vocab: Vec<HashSet<char>> = vec![HashSet::new(); NUM_LABELS];
    for p in corpus.paragraphs() {
        for (label, clause) in p.gold_labels()?.into_iter().zip(p.clauses()) {
            let k = label.index();
            counts[k] += 1;
            lengths[k] += clause.text.chars().count();
            vocab[k].extend(clause.text.chars());
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::invalid("empty corpus"));
    }
    let labels = ElementLabel::ALL
        .iter()
        .map(|&label| {
            let k = label.index();
            let count = counts[k];
            let vocab_size = vocab[k].len();
            let per_clause = |x: usize| if count == 0 { 0.0 } else { x as f64 / count as f64 };
            LabelStats {
                label,
                count,
                proportion: count as f64 / total as f64,
                avg_length: per_clause(lengths[k]),
                vocab_size,
                novelty: per_clause(vocab_size),
            }
        })
        .collect();
    Ok(CategoryStats { total, labels })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRow {
    pub label: ElementLabel,
    pub counts: Vec<usize>,
    /// Stage proportions; all zero when the label never occurs.
    pub proportions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageDistribution {
    pub n_stages: usize,
    pub labels: Vec<StageRow>,
}

impl StageDistribution {
    pub fn get(&self, label: ElementLabel) -> &StageRow {
        &self.labels[label.index()]
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("label");
        for s in 1..=self.n_stages {
            write!(out, "\tstage{s}").unwrap();
        }
        out.push('\n');
        for row in &self.labels {
            out.push_str(row.label.as_str());
            for p in &row.proportions {
                write!(out, "\t{p:.4}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

pub fn positional_distribution(corpus: &Corpus, n_stages: usize) -> Result<StageDistribution> {
    if n_stages == 0 {
        return Err(Error::invalid("need at least one stage"));
    }
    let mut counts = vec![vec![0usize; n_stages]; NUM_LABELS];
    for p in corpus.paragraphs() {
        let n = p.len();
        for (i, label) in p.gold_labels()?.into_iter().enumerate() {
            counts[label.index()][stage_of(i + 1, n, n_stages) - 1] += 1;
        }
    }
    let labels = ElementLabel::ALL
        .iter()
        .zip(counts)
        .map(|(&label, counts)| {
            let total: usize = counts.iter().sum();
            let proportions = counts
                .iter()
                .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                .collect();
            StageRow {
                label,
                counts,
                proportions,
            }
        })
        .collect();
    Ok(StageDistribution { n_stages, labels })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitionVariant {
    Original,
    Balanced,
}

/// Successional-pair matrix over the six non-NONE labels, indexed
/// `[previous][current]`. Columns are distributions over the previous label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionMatrix {
    pub variant: TransitionVariant,
    pub labels: Vec<ElementLabel>,
    pub pair_counts: Vec<Vec<usize>>,
    pub matrix: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn entry(&self, prev: ElementLabel, cur: ElementLabel) -> f64 {
        self.matrix[prev.index()][cur.index()]
    }

    pub fn column_sum(&self, cur: ElementLabel) -> f64 {
        self.matrix.iter().map(|row| row[cur.index()]).sum()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("previous\\current");
        for l in &self.labels {
            write!(out, "\t{l}").unwrap();
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.matrix) {
            out.push_str(l.as_str());
            for v in row {
                write!(out, "\t{v:.4}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Pairs of consecutive non-NONE clauses within each paragraph, formed after
/// NONE clauses are removed (so pairs may span a removed clause).
pub fn ordinal_relation(corpus: &Corpus, balanced: bool) -> Result<TransitionMatrix> {
    let mut pairs = vec![vec![0usize; NUM_ELEMENTS]; NUM_ELEMENTS];
    let mut element_counts = [0usize; NUM_ELEMENTS];
    let mut n_pairs = 0usize;
    for p in corpus.paragraphs() {
        let elements: Vec<usize> = p
            .gold_labels()?
            .into_iter()
            .filter(|l| l.is_element())
            .map(ElementLabel::index)
            .collect();
        for &e in &elements {
            element_counts[e] += 1;
        }
        for w in elements.windows(2) {
            pairs[w[0]][w[1]] += 1;
            n_pairs += 1;
        }
    }
    if n_pairs == 0 {
        return Err(Error::invalid("no successional pairs"));
    }

    let mut matrix = vec![vec![0.0; NUM_ELEMENTS]; NUM_ELEMENTS];
    for cur in 0..NUM_ELEMENTS {
        let parents: usize = (0..NUM_ELEMENTS).map(|prev| pairs[prev][cur]).sum();
        if parents == 0 {
            continue;
        }
        for prev in 0..NUM_ELEMENTS {
            matrix[prev][cur] = pairs[prev][cur] as f64 / parents as f64;
        }
    }

    if balanced {
        let total: usize = element_counts.iter().sum();
        for prev in 0..NUM_ELEMENTS {
            let prior = element_counts[prev] as f64 / total as f64;
            for v in &mut matrix[prev] {
                *v = if prior > 0.0 { *v / prior } else { 0.0 };
            }
        }
        for cur in 0..NUM_ELEMENTS {
            let sum: f64 = (0..NUM_ELEMENTS).map(|prev| matrix[prev][cur]).sum();
            if sum > 0.0 {
                for row in matrix.iter_mut() {
                    row[cur] /= sum;
                }
            }
        }
    }

    Ok(TransitionMatrix {
        variant: if balanced {
            TransitionVariant::Balanced
        } else {
            TransitionVariant::Original
        },
        labels: ElementLabel::ELEMENTS.to_vec(),
        pair_counts: pairs,
        matrix,
    })
}

/// `counts[gold][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; NUM_LABELS]; NUM_LABELS],
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..NUM_LABELS).map(|k| self.counts[k][k]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn gold_count(&self, label: ElementLabel) -> usize {
        self.counts[label.index()].iter().sum()
    }

    pub fn predicted_count(&self, label: ElementLabel) -> usize {
        self.counts.iter().map(|row| row[label.index()]).sum()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("gold\\predicted");
        for l in ElementLabel::ALL {
            write!(out, "\t{l}").unwrap();
        }
        out.push('\n');
        for (l, row) in ElementLabel::ALL.iter().zip(&self.counts) {
            out.push_str(l.as_str());
            for c in row {
                write!(out, "\t{c}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion_matrix(gold: &[ElementLabel], pred: &[ElementLabel]) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(Error::invalid(format!(
            "gold has {} labels but predictions have {}",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::invalid("no labels to compare"));
    }
    let mut counts = [[0usize; NUM_LABELS]; NUM_LABELS];
    for (g, p) in gold.iter().zip(pred) {
        counts[g.index()][p.index()] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Everything the `analyze` command reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub paragraphs: usize,
    pub clauses: usize,
    pub categorical: CategoryStats,
    pub positional: StageDistribution,
    /// `None` when the corpus has no successional pairs.
    pub ordinal_original: Option<TransitionMatrix>,
    pub ordinal_balanced: Option<TransitionMatrix>,
    /// `None` when no two annotators share a clause.
    pub kappa: Option<KappaReport>,
}

pub fn analyze(corpus: &Corpus) -> Result<AnalysisReport> {
    Ok(AnalysisReport {
        paragraphs: corpus.len(),
        clauses: corpus.num_clauses(),
        categorical: categorical_stats(corpus)?,
        positional: positional_distribution(corpus, NUM_STAGES)?,
        ordinal_original: ordinal_relation(corpus, false).ok(),
        ordinal_balanced: ordinal_relation(corpus, true).ok(),
        kappa: pairwise_kappa_report(corpus).ok(),
    })
}
