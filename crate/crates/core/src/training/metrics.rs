use std::fmt::Write as _;

use serde::Serialize;

use crate::analytics::{confusion_matrix, ConfusionMatrix};
use crate::corpus::ElementLabel;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelMetrics {
    pub label: ElementLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold count.
    pub support: usize,
    pub predicted: usize,
}

impl LabelMetrics {
    /// Whether the label occurs in gold or predictions.
    pub fn is_present(&self) -> bool {
        self.support > 0 || self.predicted > 0
    }
}

/// Accuracy, averaged precision/recall/F1, per-label scores and the
/// confusion matrix of one evaluation.
///
/// Macro averages run over labels that occur in the gold labels or the
/// predictions; a label absent from both has no defined precision or recall.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Harmonic mean of macro precision and macro recall; an alternative to
    /// the mean per-label F1.
    pub macro_pr_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub per_label: Vec<LabelMetrics>,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    #[default]
    Macro,
    Weighted,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl EvalReport {
    pub fn from_predictions(gold: &[ElementLabel], predicted: &[ElementLabel]) -> Result<Self> {
        Ok(Self::from_confusion(confusion_matrix(gold, predicted)?))
    }

    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let per_label: Vec<LabelMetrics> = ElementLabel::ALL
            .iter()
            .map(|&label| {
                let k = label.index();
                let tp = confusion.counts[k][k];
                let support = confusion.gold_count(label);
                let predicted = confusion.predicted_count(label);
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                LabelMetrics {
                    label,
                    precision,
                    recall,
                    f1: harmonic(precision, recall),
                    support,
                    predicted,
                }
            })
            .collect();

        let present: Vec<&LabelMetrics> = per_label.iter().filter(|m| m.is_present()).collect();
        let n = present.len().max(1) as f64;
        let macro_precision = present.iter().map(|m| m.precision).sum::<f64>() / n;
        let macro_recall = present.iter().map(|m| m.recall).sum::<f64>() / n;
        let macro_f1 = present.iter().map(|m| m.f1).sum::<f64>() / n;

        let total = confusion.total() as f64;
        let weighted = |f: fn(&LabelMetrics) -> f64| per_label.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total;

        EvalReport {
            accuracy: confusion.accuracy(),
            macro_precision,
            macro_recall,
            macro_f1,
            macro_pr_f1: harmonic(macro_precision, macro_recall),
            weighted_precision: weighted(|m| m.precision),
            weighted_recall: weighted(|m| m.recall),
            weighted_f1: weighted(|m| m.f1),
            per_label,
            confusion,
        }
    }

    /// `(precision, recall, f1)` under the chosen averaging.
    pub fn averaged(&self, averaging: Averaging) -> (f64, f64, f64) {
        match averaging {
            Averaging::Macro => (self.macro_precision, self.macro_recall, self.macro_f1),
            Averaging::Weighted => (self.weighted_precision, self.weighted_recall, self.weighted_f1),
        }
    }

    pub fn label(&self, label: ElementLabel) -> &LabelMetrics {
        &self.per_label[label.index()]
    }

    /// Per-label table in percent.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("label\tprecision\trecall\tf1\tsupport\n");
        for m in &self.per_label {
            writeln!(
                out,
                "{}\t{:.2}\t{:.2}\t{:.2}\t{}",
                m.label,
                100.0 * m.precision,
                100.0 * m.recall,
                100.0 * m.f1,
                m.support
            )
            .unwrap();
        }
        out
    }
}
