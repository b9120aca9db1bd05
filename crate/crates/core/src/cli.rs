//! `elemid` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
//! Every command writes a run manifest beside its output.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analytics::analyze;
use crate::annotation::adjudicate_corpus;
use crate::corpus::{read_corpus, split_corpus, write_corpus, Corpus, Paragraph};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, ModelConfig, SavedModel};
use crate::synthgen::{generate_context_task, generate_corpus_seeded, ContextTaskConfig, GeneratorConfig};
use crate::training::{
    evaluate_stage, pretrain_local_encoder, run_ablation_suite, save_log, train_pipeline, Stage, Tagger,
    TrainConfig, Variant,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "elemid", version, about = "Clause-level fraud element identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StageArg {
    First,
    Refined,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    NoGc,
    NoLr,
    Baseline,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::NoGc => Variant::NoGlobalContext,
            VariantArg::NoLr => Variant::NoLabelRefiner,
            VariantArg::Baseline => Variant::Baseline,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    /// Chain calibrated to the reference label statistics.
    Calibrated,
    /// Labels decidable only from context.
    Context,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cut raw paragraphs (one per line) into clauses.
    Segment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic labeled corpus.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1000)]
        paragraphs: usize,
        #[arg(long, value_enum, default_value = "calibrated")]
        task: TaskArg,
    },
    /// Corpus statistics as JSON, with TSV tables beside it.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Resolve annotator disagreements into gold labels.
    Adjudicate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split 8:1:1, run both training phases, save the checkpoint.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "full")]
        variant: VariantArg,
    },
    /// Score a checkpoint on a labeled corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "refined")]
        stage: StageArg,
    },
    /// Per-clause labels and probabilities as JSON lines.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "refined")]
        stage: StageArg,
    },
    /// Train every variant on one split and compare them on the test part.
    Ablate {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Restrict to these variants (repeatable).
        #[arg(long, value_enum)]
        variant: Vec<VariantArg>,
    },
}

/// Contents of `--config`. A run manifest is accepted too: its `config`
/// object is used.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub generator: Option<GeneratorConfig>,
    pub context_task: Option<ContextTaskConfig>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut value: Value = serde_json::from_str(&text)?;
        if value.get("command").is_some() {
            value = value.get("config").cloned().unwrap_or(Value::Null);
        }
        let config: RunConfig = serde_json::from_value(value)?;
        config.train.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    pub duration_secs: f64,
}

fn manifest_path_for(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("manifest.json")
    } else {
        let mut name = out.file_name().map(OsString::from).unwrap_or_default();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(suffix);
    out.with_file_name(name)
}

fn labeled(corpus: &Corpus) -> Result<()> {
    for p in corpus.paragraphs() {
        p.gold_labels()?;
    }
    Ok(())
}

struct Outcome {
    config: Value,
    seed: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    manifest_at: PathBuf,
}

fn resolved_seed(flag: Option<u64>, config: Option<u64>) -> u64 {
    flag.or(config).unwrap_or(0)
}

fn execute(command: Command) -> Result<Outcome> {
    match command {
        Command::Segment { input, out } => {
            let text = fs::read_to_string(&input).map_err(|e| Error::io(&input, e))?;
            let paragraphs: Vec<Paragraph> = text
                .lines()
                .filter_map(|line| Paragraph::from_text("", line))
                .enumerate()
                .map(|(i, p)| Paragraph::new(format!("para-{i:06}"), p.clauses().to_vec()))
                .collect::<Result<_>>()?;
            let corpus = Corpus::new(paragraphs)?;
            write_corpus(&corpus, &out)?;
            Ok(Outcome {
                config: json!({}),
                seed: 0,
                inputs: vec![input],
                outputs: vec![out.clone()],
                manifest_at: manifest_path_for(&out),
            })
        }

        Command::Generate {
            out,
            config,
            seed,
            paragraphs,
            task,
        } => {
            let run = RunConfig::load(config.as_deref())?;
            let (corpus, resolved, seed) = match task {
                TaskArg::Calibrated => {
                    let mut g = run.generator.clone().unwrap_or_else(GeneratorConfig::calibrated);
                    g.seed = resolved_seed(seed, run.generator.as_ref().map(|g| g.seed));
                    (generate_corpus_seeded(&g, paragraphs)?, json!({ "generator": g }), g.seed)
                }
                TaskArg::Context => {
                    let mut c = run.context_task.clone().unwrap_or_default();
                    c.seed = resolved_seed(seed, run.context_task.as_ref().map(|c| c.seed));
                    (generate_context_task(&c, paragraphs)?, json!({ "context_task": c }), c.seed)
                }
            };
            write_corpus(&corpus, &out)?;
            Ok(Outcome {
                config: json!({ "paragraphs": paragraphs, "task": format!("{task:?}").to_lowercase(), "config": resolved }),
                seed,
                inputs: config.into_iter().collect(),
                outputs: vec![out.clone()],
                manifest_at: manifest_path_for(&out),
            })
        }

        Command::Analyze { input, out } => {
            let corpus = read_corpus(&input)?;
            let report = analyze(&corpus)?;
            write_json(&out, &report)?;
            let mut outputs = vec![out.clone()];
            let mut tables = vec![
                (".categorical.tsv", report.categorical.to_tsv()),
                (".positional.tsv", report.positional.to_tsv()),
            ];
            if let Some(m) = &report.ordinal_original {
                tables.push((".ordinal.tsv", m.to_tsv()));
            }
            if let Some(m) = &report.ordinal_balanced {
                tables.push((".ordinal_balanced.tsv", m.to_tsv()));
            }
            for (suffix, text) in tables {
                let path = sibling(&out, suffix);
                write_text(&path, &text)?;
                outputs.push(path);
            }
            Ok(Outcome {
                config: json!({}),
                seed: 0,
                inputs: vec![input],
                outputs,
                manifest_at: manifest_path_for(&out),
            })
        }

        Command::Adjudicate { input, out } => {
            let corpus = read_corpus(&input)?;
            let (resolved, summary) = adjudicate_corpus(&corpus)?;
            write_corpus(&resolved, &out)?;
            Ok(Outcome {
                config: json!({ "summary": summary }),
                seed: 0,
                inputs: vec![input],
                outputs: vec![out.clone()],
                manifest_at: manifest_path_for(&out),
            })
        }

        Command::Train {
            input,
            out,
            config,
            seed,
            variant,
        } => {
            let mut run = RunConfig::load(config.as_deref())?;
            let corpus = read_corpus(&input)?;
            labeled(&corpus)?;
            run.train.seed = resolved_seed(seed, config.as_ref().map(|_| run.train.seed));
            run.model.vocab_size = corpus.vocabulary().len();
            let variant = Variant::from(variant);
            let split = split_corpus(&corpus, (8, 1, 1), run.train.seed)?;
            create_dir(&out)?;
            let mut outputs = Vec::new();
            for (name, part) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
                let path = out.join(format!("{name}.jsonl"));
                write_corpus(part, &path)?;
                outputs.push(path);
            }

            let (model, log) = match variant.apply(&run.model) {
                None => {
                    let (m, log) = pretrain_local_encoder(&run.model, &run.train, &split.train, Some(&split.valid))?;
                    (SavedModel::Clause(m), log)
                }
                Some(cfg) => {
                    run.model = cfg;
                    let (_, outcome) = train_pipeline(&run.model, &run.train, &split)?;
                    (SavedModel::Hierarchical(outcome.params), outcome.log)
                }
            };
            let checkpoint = Checkpoint {
                model,
                vocabulary: corpus.vocabulary().clone(),
            };
            let ckpt_path = out.join("model.ckpt");
            save_checkpoint(&checkpoint, &ckpt_path)?;
            // Score what was written, so the report matches a later `eval`.
            let reloaded = load_checkpoint(&ckpt_path)?;
            let report = evaluate_stage(&reloaded.model, &split.test, Stage::Refined)?;
            let log_path = out.join("train_log.jsonl");
            save_log(&log, &log_path)?;
            let report_path = out.join("test_report.json");
            write_json(&report_path, &report)?;
            outputs.extend([ckpt_path, log_path, report_path]);
            Ok(Outcome {
                config: json!({ "model": run.model, "train": run.train, "variant": variant }),
                seed: run.train.seed,
                inputs: vec![input],
                outputs,
                manifest_at: out.join("manifest.json"),
            })
        }

        Command::Eval {
            model,
            input,
            out,
            stage,
        } => {
            let checkpoint = load_checkpoint(&model)?;
            let corpus = read_corpus(&input)?.retokenized(&checkpoint.vocabulary);
            labeled(&corpus)?;
            let stage = stage_of(stage);
            let report = evaluate_stage(&checkpoint.model, &corpus, stage)?;
            write_json(&out, &report)?;
            Ok(Outcome {
                config: json!({ "model": checkpoint.model.config(), "stage": stage }),
                seed: 0,
                inputs: vec![model, input],
                outputs: vec![out.clone()],
                manifest_at: manifest_path_for(&out),
            })
        }

        Command::Predict {
            model,
            input,
            out,
            stage,
        } => {
            let checkpoint = load_checkpoint(&model)?;
            let corpus = read_corpus(&input)?.retokenized(&checkpoint.vocabulary);
            let stage = stage_of(stage);
            let mut text = String::new();
            for p in corpus.paragraphs() {
                let probs = checkpoint.model.paragraph_probs(p, stage)?;
                let labels = checkpoint.model.predict(p, stage)?;
                for (i, (probs, label)) in probs.iter().zip(labels).enumerate() {
                    let record = PredictionRecord {
                        paragraph_id: p.id().to_string(),
                        clause_index: i,
                        label: label.to_string(),
                        probs: probs.clone(),
                    };
                    text.push_str(&serde_json::to_string(&record)?);
                    text.push('\n');
                }
            }
            write_text(&out, &text)?;
            Ok(Outcome {
                config: json!({ "model": checkpoint.model.config(), "stage": stage }),
                seed: 0,
                inputs: vec![model, input],
                outputs: vec![out.clone()],
                manifest_at: manifest_path_for(&out),
            })
        }

        Command::Ablate {
            input,
            out,
            config,
            seed,
            variant,
        } => {
            let mut run = RunConfig::load(config.as_deref())?;
            let corpus = read_corpus(&input)?;
            labeled(&corpus)?;
            run.train.seed = resolved_seed(seed, config.as_ref().map(|_| run.train.seed));
            run.model.vocab_size = corpus.vocabulary().len();
            let variants: Vec<Variant> = if variant.is_empty() {
                Variant::ALL.to_vec()
            } else {
                variant.into_iter().map(Variant::from).collect()
            };
            let split = split_corpus(&corpus, (8, 1, 1), run.train.seed)?;
            let report = run_ablation_suite(&run.model, &run.train, &split, &variants)?;
            create_dir(&out)?;
            let tsv = out.join("ablation.tsv");
            write_text(&tsv, &report.to_tsv())?;
            let json_path = out.join("ablation.json");
            write_json(&json_path, &report)?;
            Ok(Outcome {
                config: json!({ "model": run.model, "train": run.train, "variants": variants }),
                seed: run.train.seed,
                inputs: vec![input],
                outputs: vec![tsv, json_path],
                manifest_at: out.join("manifest.json"),
            })
        }
    }
}

fn stage_of(stage: StageArg) -> Stage {
    match stage {
        StageArg::First => Stage::First,
        StageArg::Refined => Stage::Refined,
    }
}

/// One line of `predict` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub paragraph_id: String,
    pub clause_index: usize,
    pub label: String,
    pub probs: Vec<f64>,
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Segment { .. } => "segment",
        Command::Generate { .. } => "generate",
        Command::Analyze { .. } => "analyze",
        Command::Adjudicate { .. } => "adjudicate",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Predict { .. } => "predict",
        Command::Ablate { .. } => "ablate",
    }
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let name = command_name(&cli.command);
    let start = Instant::now();
    let result = std::panic::catch_unwind(|| execute(cli.command));
    match result {
        Ok(Ok(outcome)) => {
            let manifest = RunManifest {
                command: name.to_string(),
                config: outcome.config,
                seed: outcome.seed,
                inputs: outcome.inputs,
                outputs: outcome.outputs,
                version: env!("CARGO_PKG_VERSION").to_string(),
                duration_secs: start.elapsed().as_secs_f64(),
            };
            match write_json(&outcome.manifest_at, &manifest) {
                Ok(()) => EXIT_OK,
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_DATA
                }
            }
        }
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
        Err(_) => EXIT_INTERNAL,
    }
}
