use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{evaluate, pretrain_local_encoder, train_full, EvalReport};
use crate::corpus::CorpusSplit;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParameters};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "no-gc")]
    NoGlobalContext,
    #[serde(rename = "no-lr")]
    NoLabelRefiner,
    /// Local encoder plus a linear head, no sequence layers.
    #[serde(rename = "baseline")]
    Baseline,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoGlobalContext, Variant::NoLabelRefiner, Variant::Baseline];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoGlobalContext => "no-gc",
            Variant::NoLabelRefiner => "no-lr",
            Variant::Baseline => "baseline",
        }
    }

    /// The model config for this variant, or `None` for the baseline.
    pub fn apply(self, base: &ModelConfig) -> Option<ModelConfig> {
        let (gc, lr) = match self {
            Variant::Full => (true, true),
            Variant::NoGlobalContext => (false, true),
            Variant::NoLabelRefiner => (true, false),
            Variant::Baseline => return None,
        };
        Some(ModelConfig {
            use_global_context: gc,
            use_label_refiner: lr,
            ..base.clone()
        })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub test: EvalReport,
    pub best_valid_f1: Option<f64>,
    /// Checksums of the train/valid/test splits this variant saw.
    pub split_checksums: [String; 3],
    #[serde(skip)]
    pub params: Option<ModelParameters>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Accuracy and macro precision/recall/F1 in percent.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("model\taccuracy\tprecision\trecall\tf1\n");
        for r in &self.rows {
            let t = &r.test;
            writeln!(
                out,
                "{}\t{:.2}\t{:.2}\t{:.2}\t{:.2}",
                r.variant,
                100.0 * t.accuracy,
                100.0 * t.macro_precision,
                100.0 * t.macro_recall,
                100.0 * t.macro_f1
            )
            .unwrap();
        }
        out
    }
}

/// Train and test every requested variant on one split with one seed. The
/// phase-1 encoder is trained once and shared; it is also the baseline.
pub fn run_ablation_suite(
    model_config: &ModelConfig,
    config: &TrainConfig,
    split: &CorpusSplit,
    variants: &[Variant],
) -> Result<AblationReport> {
    let checksums = [split.train.checksum(), split.valid.checksum(), split.test.checksum()];
    let (encoder, _) = pretrain_local_encoder(model_config, config, &split.train, Some(&split.valid))?;
    let mut rows = Vec::new();
    for &variant in variants {
        let row = match variant.apply(model_config) {
            None => AblationRow {
                variant,
                test: evaluate(&encoder, &split.test)?,
                best_valid_f1: None,
                split_checksums: checksums.clone(),
                params: None,
            },
            Some(cfg) => {
                let outcome = train_full(&cfg, config, Some(&encoder.local), &split.train, Some(&split.valid))?;
                AblationRow {
                    variant,
                    test: evaluate(&outcome.params, &split.test)?,
                    best_valid_f1: outcome.best_valid_f1,
                    split_checksums: checksums.clone(),
                    params: Some(outcome.params),
                }
            }
        };
        rows.push(row);
    }
    Ok(AblationReport {
        seed: config.seed,
        rows,
    })
}
