//! Two-phase training, evaluation and ablations.
//!
//! Phase 1 trains the local encoder with a linear head on independent
//! clauses. Phase 2 freezes it and trains the context encoder, classifier,
//! refiner and both output layers on whole paragraphs.

mod ablation;
mod metrics;
mod optim;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusSplit, ElementLabel, Paragraph};
use crate::error::{Error, Result};
use crate::model::{
    argmax, ClauseModel, EncoderKind, LocalEncoder, LocalGrad, ModelConfig, ModelParameters, Parameters, SavedModel,
};

pub use ablation::{run_ablation_suite, AblationReport, AblationRow, Variant};
pub use metrics::{Averaging, EvalReport, LabelMetrics};
pub use optim::{clip_grad_norm, Adam};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Decoupled weight decay; zero gives plain Adam.
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub phase1: PhaseConfig,
    pub phase2: PhaseConfig,
    /// Paragraphs per batch in phase 2, clauses per batch in phase 1.
    pub batch_size: usize,
    pub seed: u64,
    pub clip_norm: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig {
            epochs: 10,
            learning_rate: 2e-4,
            weight_decay: 0.0,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            phase1: PhaseConfig {
                epochs: 4,
                learning_rate: 2e-5,
                weight_decay: 0.01,
            },
            phase2: PhaseConfig::default(),
            batch_size: 32,
            seed: 0,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("phase1", &self.phase1), ("phase2", &self.phase2)] {
            if p.epochs == 0 {
                return Err(Error::invalid(format!("{name}.epochs must be at least 1")));
            }
            if !(p.learning_rate >= 0.0 && p.learning_rate.is_finite()) {
                return Err(Error::invalid(format!("{name}.learning_rate must be non-negative")));
            }
            if !(p.weight_decay >= 0.0 && p.weight_decay.is_finite()) {
                return Err(Error::invalid(format!("{name}.weight_decay must be non-negative")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::invalid("clip_norm must be positive"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub phase: u8,
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
}

pub fn write_log(records: &[LogRecord], out: &mut impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<log>", e))?;
    }
    Ok(())
}

pub fn save_log(records: &[LogRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_log(records, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    First,
    #[default]
    Refined,
}

/// Anything that assigns label distributions to a paragraph's clauses.
pub trait Tagger {
    fn paragraph_probs(&self, paragraph: &Paragraph, stage: Stage) -> Result<Vec<Vec<f64>>>;

    fn predict(&self, paragraph: &Paragraph, stage: Stage) -> Result<Vec<ElementLabel>> {
        Ok(self
            .paragraph_probs(paragraph, stage)?
            .iter()
            .map(|p| ElementLabel::from_index(argmax(p)).expect("seven outputs"))
            .collect())
    }
}

impl Tagger for ModelParameters {
    fn paragraph_probs(&self, paragraph: &Paragraph, stage: Stage) -> Result<Vec<Vec<f64>>> {
        let trace = self.forward(paragraph)?;
        Ok(match stage {
            Stage::First => trace.first_probs,
            Stage::Refined => trace.refined_probs.unwrap_or(trace.first_probs),
        })
    }
}

impl Tagger for ClauseModel {
    fn paragraph_probs(&self, paragraph: &Paragraph, _stage: Stage) -> Result<Vec<Vec<f64>>> {
        paragraph.clauses().iter().map(|c| self.probs(c)).collect()
    }
}

impl Tagger for SavedModel {
    fn paragraph_probs(&self, paragraph: &Paragraph, stage: Stage) -> Result<Vec<Vec<f64>>> {
        match self {
            SavedModel::Hierarchical(m) => m.paragraph_probs(paragraph, stage),
            SavedModel::Clause(m) => m.paragraph_probs(paragraph, stage),
        }
    }
}

fn report_and_loss(
    corpus: &Corpus,
    mut probs_of: impl FnMut(usize, &Paragraph) -> Result<Vec<Vec<f64>>>,
) -> Result<(EvalReport, f64)> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty corpus"));
    }
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    let mut loss = 0.0;
    for (i, p) in corpus.paragraphs().iter().enumerate() {
        let labels = p.gold_labels()?;
        let probs = probs_of(i, p)?;
        for (probs, y) in probs.iter().zip(&labels) {
            loss -= probs[y.index()].max(f64::MIN_POSITIVE).ln();
            pred.push(ElementLabel::from_index(argmax(probs)).expect("seven outputs"));
        }
        gold.extend(labels);
    }
    let n = gold.len() as f64;
    Ok((EvalReport::from_predictions(&gold, &pred)?, loss / n))
}

/// Metrics of the final-stage predictions (refined, or first-stage when the
/// refiner is disabled).
pub fn evaluate<T: Tagger + ?Sized>(model: &T, corpus: &Corpus) -> Result<EvalReport> {
    evaluate_stage(model, corpus, Stage::Refined)
}

pub fn evaluate_stage<T: Tagger + ?Sized>(model: &T, corpus: &Corpus, stage: Stage) -> Result<EvalReport> {
    Ok(report_and_loss(corpus, |_, p| model.paragraph_probs(p, stage))?.0)
}

fn record(phase: u8, epoch: usize, split: &str, loss: f64, report: &EvalReport) -> LogRecord {
    LogRecord {
        phase,
        epoch,
        split: split.to_string(),
        loss,
        accuracy: report.accuracy,
        macro_f1: report.macro_f1,
    }
}

fn training_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Train the local encoder and a clause-level head on independent clauses.
/// The returned model doubles as the independent-clause baseline.
pub fn pretrain_local_encoder(
    model_config: &ModelConfig,
    config: &TrainConfig,
    train: &Corpus,
    valid: Option<&Corpus>,
) -> Result<(ClauseModel, Vec<LogRecord>)> {
    config.validate()?;
    if model_config.encoder_kind == EncoderKind::External {
        return Err(Error::invalid("phase 1 not applicable to an external encoder"));
    }
    let clauses: Vec<(&crate::corpus::Clause, ElementLabel)> = train
        .clauses()
        .map(|c| {
            c.gold
                .map(|g| (c, g))
                .ok_or_else(|| Error::invalid("training clause without a gold label"))
        })
        .collect::<Result<_>>()?;
    if clauses.is_empty() {
        return Err(Error::invalid("empty training split"));
    }

    let mut model = ClauseModel::init(model_config, config.seed)?;
    let mut grads = model.zeros_like();
    let mut adam = Adam::new(config.phase1.learning_rate, config.phase1.weight_decay);
    let mut rng = training_rng(config.seed);
    let mut order: Vec<usize> = (0..clauses.len()).collect();
    let mut log = Vec::new();

    for epoch in 1..=config.phase1.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut gold, mut pred) = (0.0, Vec::new(), Vec::new());
        for batch in order.chunks(config.batch_size) {
            grads.zero();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (clause, label) = clauses[i];
                let trace = model.forward(clause, Some(&mut rng))?;
                loss -= trace.probs[label.index()].max(f64::MIN_POSITIVE).ln();
                gold.push(label);
                pred.push(ElementLabel::from_index(argmax(&trace.probs)).expect("seven outputs"));
                model.backward(&trace, label, scale, &mut grads);
            }
            clip_grad_norm(&mut grads, config.clip_norm, |_| true);
            adam.step(&mut model, &grads, |_| true);
        }
        let report = EvalReport::from_predictions(&gold, &pred)?;
        log.push(record(1, epoch, "train", loss / gold.len() as f64, &report));
        if let Some(valid) = valid.filter(|v| !v.is_empty()) {
            let (report, loss) = report_and_loss(valid, |_, p| model.paragraph_probs(p, Stage::Refined))?;
            log.push(record(1, epoch, "valid", loss, &report));
        }
    }
    Ok((model, log))
}

/// Paragraph indices in batches of similar clause count. Every index
/// appears exactly once; both the order within a length and the batch order
/// come from `rng`.
pub fn length_grouped_batches(lengths: &[usize], batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| lengths[i]);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

fn representations(params: &ModelParameters, corpus: &Corpus) -> Result<Vec<Vec<Vec<f64>>>> {
    corpus.paragraphs().iter().map(|p| params.encode_clauses(p)).collect()
}

fn phase2_trainable(kind: EncoderKind, name: &str) -> bool {
    match kind {
        EncoderKind::Trainable => !LocalEncoder::is_local_name(name),
        // No phase 1: the embedding feeds only the context encoder.
        EncoderKind::External => !name.starts_with("local."),
    }
}

/// Phase-2 optimiser state. The local encoder is frozen, so clause
/// representations are computed once up front.
pub struct FullTrainer<'a> {
    params: ModelParameters,
    grads: ModelParameters,
    adam: Adam,
    rng: ChaCha8Rng,
    config: TrainConfig,
    train: &'a Corpus,
    gold: Vec<Vec<ElementLabel>>,
    reps: Vec<Vec<Vec<f64>>>,
}

impl<'a> FullTrainer<'a> {
    pub fn new(
        model_config: &ModelConfig,
        config: &TrainConfig,
        encoder: Option<&LocalEncoder>,
        train: &'a Corpus,
    ) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::invalid("empty training split"));
        }
        let mut params = ModelParameters::init(model_config, config.seed)?;
        match (encoder, model_config.encoder_kind) {
            (Some(enc), _) => {
                let fresh = &params.local;
                if enc.embedding.shape() != fresh.embedding.shape()
                    || enc.gru.input_size() != fresh.gru.input_size()
                    || enc.gru.hidden_size() != fresh.gru.hidden_size()
                {
                    return Err(Error::invalid("pretrained encoder does not match the model config"));
                }
                params.local = enc.clone();
            }
            (None, EncoderKind::Trainable) => {
                return Err(Error::invalid("phase 2 needs phase-1 encoder weights"));
            }
            (None, EncoderKind::External) => {}
        }
        let gold = train.paragraphs().iter().map(Paragraph::gold_labels).collect::<Result<_>>()?;
        let reps = representations(&params, train)?;
        Ok(FullTrainer {
            grads: params.zeros_like(),
            adam: Adam::new(config.phase2.learning_rate, config.phase2.weight_decay),
            rng: training_rng(config.seed),
            config: config.clone(),
            params,
            train,
            gold,
            reps,
        })
    }

    pub fn params(&self) -> &ModelParameters {
        &self.params
    }

    pub fn into_params(self) -> ModelParameters {
        self.params
    }

    pub fn steps(&self) -> u64 {
        self.adam.steps()
    }

    /// Names of tensors phase 2 updates.
    pub fn is_trainable(&self, name: &str) -> bool {
        phase2_trainable(self.params.config.encoder_kind, name)
    }

    /// A fresh epoch's batches.
    pub fn batches(&mut self) -> Vec<Vec<usize>> {
        let lengths: Vec<usize> = self.train.paragraphs().iter().map(Paragraph::len).collect();
        length_grouped_batches(&lengths, self.config.batch_size, &mut self.rng)
    }

    /// One optimiser step on the given training paragraphs. Returns the mean
    /// loss and the training-mode predictions.
    pub fn step(&mut self, batch: &[usize]) -> Result<(f64, Vec<ElementLabel>)> {
        self.grads.zero();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut predictions = Vec::new();
        for &i in batch {
            let p = &self.train.paragraphs()[i];
            let trace = self.params.forward_with(p, Some(&self.reps[i]), Some(&mut self.rng))?;
            loss += self.params.loss(&trace, &self.gold[i])?;
            predictions.extend(trace.predictions());
            self.params.backward(&trace, &self.gold[i], scale, &mut self.grads, LocalGrad::Skip)?;
        }
        let kind = self.params.config.encoder_kind;
        let trainable = |name: &str| phase2_trainable(kind, name);
        clip_grad_norm(&mut self.grads, self.config.clip_norm, trainable);
        self.adam.step(&mut self.params, &self.grads, trainable);
        Ok((loss * scale, predictions))
    }

    /// Evaluation-mode mean loss over the training split.
    pub fn train_loss(&self) -> Result<f64> {
        let mut total = 0.0;
        for (i, p) in self.train.paragraphs().iter().enumerate() {
            let trace = self.params.forward_with(p, Some(&self.reps[i]), None)?;
            total += self.params.loss(&trace, &self.gold[i])?;
        }
        Ok(total / self.train.len() as f64)
    }
}

/// Result of phase 2.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation macro-F1 (the last
    /// epoch when no validation split is given).
    pub params: ModelParameters,
    pub log: Vec<LogRecord>,
    pub best_epoch: usize,
    pub best_valid_f1: Option<f64>,
}

pub fn train_full(
    model_config: &ModelConfig,
    config: &TrainConfig,
    encoder: Option<&LocalEncoder>,
    train: &Corpus,
    valid: Option<&Corpus>,
) -> Result<TrainOutcome> {
    let mut trainer = FullTrainer::new(model_config, config, encoder, train)?;
    let valid = valid.filter(|v| !v.is_empty());
    let valid_reps = match valid {
        Some(v) => Some(representations(&trainer.params, v)?),
        None => None,
    };
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ModelParameters)> = None;

    for epoch in 1..=config.phase2.epochs {
        let (mut loss, mut gold, mut pred) = (0.0, Vec::new(), Vec::new());
        for batch in trainer.batches() {
            let (l, p) = trainer.step(&batch)?;
            loss += l * batch.len() as f64;
            pred.extend(p);
            for &i in &batch {
                gold.extend_from_slice(&trainer.gold[i]);
            }
        }
        let report = EvalReport::from_predictions(&gold, &pred)?;
        log.push(record(2, epoch, "train", loss / train.len() as f64, &report));

        if let (Some(valid), Some(reps)) = (valid, &valid_reps) {
            let params = &trainer.params;
            let (report, loss) = report_and_loss(valid, |i, p| {
                let t = params.forward_with(p, Some(&reps[i]), None)?;
                Ok(t.output_probs().to_vec())
            })?;
            log.push(record(2, epoch, "valid", loss, &report));
            if best.as_ref().is_none_or(|(f1, _, _)| report.macro_f1 > *f1) {
                best = Some((report.macro_f1, epoch, params.clone()));
            }
        }
    }

    Ok(match best {
        Some((f1, epoch, params)) => TrainOutcome {
            params,
            log,
            best_epoch: epoch,
            best_valid_f1: Some(f1),
        },
        None => TrainOutcome {
            params: trainer.into_params(),
            log,
            best_epoch: config.phase2.epochs,
            best_valid_f1: None,
        },
    })
}

/// Both phases on a split. Returns the phase-1 clause model alongside.
pub fn train_pipeline(
    model_config: &ModelConfig,
    config: &TrainConfig,
    split: &CorpusSplit,
) -> Result<(Option<ClauseModel>, TrainOutcome)> {
    let valid = Some(&split.valid);
    let (clause, mut log) = match model_config.encoder_kind {
        EncoderKind::Trainable => {
            let (m, log) = pretrain_local_encoder(model_config, config, &split.train, valid)?;
            (Some(m), log)
        }
        EncoderKind::External => (None, Vec::new()),
    };
    let mut outcome = train_full(model_config, config, clause.as_ref().map(|m| &m.local), &split.train, valid)?;
    log.append(&mut outcome.log);
    outcome.log = log;
    Ok((clause, outcome))
}
