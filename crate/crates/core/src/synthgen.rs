//! Seedable generator of labeled complaint corpora.
//!
//! Labels follow a first-order chain over [`ElementLabel`] whose transition
//! rows are reweighted by per-label stage affinities at every position, so
//! both positional skew and successional structure are controllable. Clause
//! text is drawn character by character from per-label and shared pools.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::{stage_of, NUM_STAGES};
use crate::corpus::{is_clause_delimiter, Clause, Corpus, ElementLabel, Paragraph, NUM_LABELS};
use crate::error::{Error, Result};

/// Label proportions of the reference complaint corpus, in label-code order.
pub const REFERENCE_PROPORTIONS: [f64; NUM_LABELS] = [0.1981, 0.0138, 0.0988, 0.0398, 0.1783, 0.0132, 0.4579];
/// Average clause length (characters) per label in the reference corpus.
pub const REFERENCE_AVG_LENGTH: [f64; NUM_LABELS] = [12.0, 12.0, 11.4, 10.5, 9.9, 10.0, 8.5];
/// Per-label vocabulary size in the reference corpus.
pub const REFERENCE_VOCAB_SIZE: [usize; NUM_LABELS] = [12_646, 2_337, 6_041, 3_597, 7_382, 1_595, 17_067];

const STOCHASTIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthSpec {
    pub mean: f64,
    pub spread: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabConfig {
    /// One pool per label in code order; every character is one token.
    pub label_pools: Vec<String>,
    pub shared_pool: String,
    /// Per-label probability of drawing from the label pool rather than the shared one.
    pub mixing: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub label_priors: Vec<f64>,
    /// `transition[previous][next]`, row-stochastic.
    pub transition: Vec<Vec<f64>>,
    /// `stage_affinity[label][stage]`, each row sums to one.
    pub stage_affinity: Vec<Vec<f64>>,
    pub vocab: VocabConfig,
    pub clause_length: Vec<LengthSpec>,
    /// Inclusive `[min, max]` clause count per paragraph.
    pub paragraph_length: (usize, usize),
    pub seed: u64,
}

fn check_distribution(name: &str, values: &[f64], len: usize) -> Result<()> {
    if values.len() != len {
        return Err(Error::invalid(format!("{name}: expected {len} entries, got {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(format!("{name}: entries must be finite and non-negative")));
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
        return Err(Error::invalid(format!("{name}: sums to {sum}, not 1")));
    }
    Ok(())
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        check_distribution("label_priors", &self.label_priors, NUM_LABELS)?;
        if self.transition.len() != NUM_LABELS {
            return Err(Error::invalid("transition: expected 7 rows"));
        }
        for (i, row) in self.transition.iter().enumerate() {
            check_distribution(&format!("transition[{i}]"), row, NUM_LABELS)?;
        }
        if self.stage_affinity.len() != NUM_LABELS {
            return Err(Error::invalid("stage_affinity: expected 7 rows"));
        }
        for (i, row) in self.stage_affinity.iter().enumerate() {
            check_distribution(&format!("stage_affinity[{i}]"), row, NUM_STAGES)?;
        }
        if self.vocab.label_pools.len() != NUM_LABELS || self.vocab.mixing.len() != NUM_LABELS {
            return Err(Error::invalid("vocab: expected one pool and one mixing weight per label"));
        }
        if self.vocab.mixing.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::invalid("vocab.mixing: weights must lie in [0, 1]"));
        }
        let pools = self.vocab.label_pools.iter().chain(std::iter::once(&self.vocab.shared_pool));
        for pool in pools {
            if let Some(c) = pool.chars().find(|c| is_clause_delimiter(*c) || c.is_whitespace()) {
                return Err(Error::invalid(format!("vocab: pool contains separator {c:?}")));
            }
        }
        if self.clause_length.len() != NUM_LABELS {
            return Err(Error::invalid("clause_length: expected one entry per label"));
        }
        if self.clause_length.iter().any(|l| !l.mean.is_finite() || l.mean < 0.0) {
            return Err(Error::invalid("clause_length: means must be finite and non-negative"));
        }
        let (min, max) = self.paragraph_length;
        if min < 1 || max < min {
            return Err(Error::invalid(format!("paragraph_length: invalid range [{min}, {max}]")));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: GeneratorConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Default configuration: proportions, clause lengths and vocabulary sizes
    /// follow the reference statistics, CF/IF/CP lean to the opening stages,
    /// FR/UD to the closing ones, NONE is flat, and every label tends to
    /// repeat itself.
    pub fn calibrated() -> Self {
        let stage_affinity = vec![
            vec![0.34, 0.26, 0.18, 0.13, 0.09], // CF
            vec![0.40, 0.25, 0.15, 0.12, 0.08], // IF
            vec![0.15, 0.22, 0.26, 0.22, 0.15], // RE
            vec![0.32, 0.26, 0.18, 0.14, 0.10], // CP
            vec![0.06, 0.12, 0.20, 0.28, 0.34], // FR
            vec![0.03, 0.05, 0.10, 0.22, 0.60], // UD
            vec![0.20, 0.20, 0.20, 0.20, 0.20], // NONE
        ];
        let self_weight = [0.55, 0.75, 0.55, 0.55, 0.55, 0.75, 0.3];

        const SHARED: usize = 400;
        let mut chars = pool_characters();
        let shared_pool: String = chars.by_ref().take(SHARED).collect();
        let label_pools = REFERENCE_VOCAB_SIZE
            .iter()
            .map(|&n| chars.by_ref().take(n.saturating_sub(SHARED)).collect())
            .collect();

        let mut config = GeneratorConfig {
            label_priors: REFERENCE_PROPORTIONS.iter().map(|p| p / REFERENCE_PROPORTIONS.iter().sum::<f64>()).collect(),
            transition: Vec::new(),
            stage_affinity,
            vocab: VocabConfig {
                label_pools,
                shared_pool,
                mixing: vec![0.85; NUM_LABELS],
            },
            clause_length: REFERENCE_AVG_LENGTH
                .iter()
                .map(|&mean| LengthSpec { mean, spread: 4 })
                .collect(),
            paragraph_length: (2, 10),
            seed: 0,
        };

        let target = config.label_priors.clone();
        config.fit_chain(&target, &self_weight);
        config
    }

    /// Rebuild the priors and a self-biased transition matrix
    /// (`T[p][k] = w_p [p == k] + (1 - w_p) base[k]`) so that the expected
    /// label mix, after stage reweighting, matches `target`.
    pub fn fit_chain(&mut self, target: &[f64], self_weight: &[f64]) {
        assert_eq!(target.len(), NUM_LABELS);
        assert_eq!(self_weight.len(), NUM_LABELS);
        let mut base = target.to_vec();
        for _ in 0..2000 {
            self.label_priors = base.clone();
            self.transition = self_biased_transition(&base, self_weight);
            let achieved = expected_label_proportions(self);
            let worst = (0..NUM_LABELS).map(|k| (achieved[k] - target[k]).abs()).fold(0.0, f64::max);
            if worst < 1e-10 {
                break;
            }
            for k in 0..NUM_LABELS {
                base[k] *= target[k] / achieved[k];
            }
            let sum: f64 = base.iter().sum();
            base.iter_mut().for_each(|b| *b /= sum);
        }
    }
}

fn self_biased_transition(base: &[f64], self_weight: &[f64]) -> Vec<Vec<f64>> {
    (0..NUM_LABELS)
        .map(|p| {
            let mut row: Vec<f64> = base.iter().map(|b| (1.0 - self_weight[p]) * b).collect();
            row[p] += self_weight[p];
            let sum: f64 = row.iter().sum();
            row.iter().map(|v| v / sum).collect()
        })
        .collect()
}

/// CJK ideographs from the unified block, extension A, then extension B.
fn pool_characters() -> impl Iterator<Item = char> {
    (0x4E00u32..=0x9FFF)
        .chain(0x3400..=0x4DBF)
        .chain(0x20000..=0x2A6DF)
        .filter_map(char::from_u32)
}

/// Reweight `weights` by the affinity of each label for `stage` (1-based).
/// Falls back to the raw weights if the reweighting removes all mass.
fn stage_weighted(config: &GeneratorConfig, weights: &[f64], stage: usize) -> Vec<f64> {
    let reweighted: Vec<f64> = weights
        .iter()
        .zip(&config.stage_affinity)
        .map(|(w, affinity)| w * affinity[stage - 1])
        .collect();
    let mass: f64 = reweighted.iter().sum();
    if mass > 0.0 {
        reweighted.iter().map(|w| w / mass).collect()
    } else {
        weights.to_vec()
    }
}

/// Exact expected label proportions over generated clauses, obtained by
/// propagating the label distribution along the chain for every paragraph
/// length.
pub fn expected_label_proportions(config: &GeneratorConfig) -> [f64; NUM_LABELS] {
    let (min, max) = config.paragraph_length;
    let mut mass = [0.0; NUM_LABELS];
    let mut clauses = 0.0;
    for n in min..=max {
        let mut dist = stage_weighted(config, &config.label_priors, stage_of(1, n, NUM_STAGES));
        for i in 1..=n {
            if i > 1 {
                let stage = stage_of(i, n, NUM_STAGES);
                let mut next = vec![0.0; NUM_LABELS];
                for (prev, &p) in dist.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let row = stage_weighted(config, &config.transition[prev], stage);
                    for (k, r) in row.iter().enumerate() {
                        next[k] += p * r;
                    }
                }
                dist = next;
            }
            for k in 0..NUM_LABELS {
                mass[k] += dist[k];
            }
            clauses += 1.0;
        }
    }
    mass.map(|m| m / clauses)
}

fn sample(weights: &[f64], rng: &mut impl Rng) -> usize {
    WeightedIndex::new(weights)
        .expect("validated distribution has positive mass")
        .sample(rng)
}

pub fn generate_label_sequence(config: &GeneratorConfig, n: usize, rng: &mut impl Rng) -> Result<Vec<ElementLabel>> {
    if n == 0 {
        return Err(Error::invalid("label sequence length must be at least 1"));
    }
    let mut labels = Vec::with_capacity(n);
    let first = stage_weighted(config, &config.label_priors, stage_of(1, n, NUM_STAGES));
    labels.push(sample(&first, rng));
    for i in 2..=n {
        let prev = *labels.last().unwrap();
        let row = stage_weighted(config, &config.transition[prev], stage_of(i, n, NUM_STAGES));
        labels.push(sample(&row, rng));
    }
    Ok(labels
        .into_iter()
        .map(|k| ElementLabel::from_index(k).unwrap())
        .collect())
}

/// Clause length: `floor(mean) + Bernoulli(frac(mean)) + U{-spread..=spread}`,
/// clamped to at least one, so the unclamped mean is exactly `mean`.
fn sample_length(spec: LengthSpec, rng: &mut impl Rng) -> usize {
    let whole = spec.mean.floor();
    let mut len = whole as i64;
    if rng.random::<f64>() < spec.mean - whole {
        len += 1;
    }
    let spread = spec.spread as i64;
    len += rng.random_range(-spread..=spread);
    len.max(1) as usize
}

/// Character pools resolved from a validated config.
#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    label_pools: Vec<Vec<char>>,
    shared_pool: Vec<char>,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let label_pools = config.vocab.label_pools.iter().map(|p| p.chars().collect()).collect();
        let shared_pool = config.vocab.shared_pool.chars().collect();
        Ok(Generator {
            config,
            label_pools,
            shared_pool,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn label_sequence(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<ElementLabel>> {
        generate_label_sequence(&self.config, n, rng)
    }

    pub fn clause_text(&self, label: ElementLabel, rng: &mut impl Rng) -> Result<String> {
        let k = label.index();
        let own = &self.label_pools[k];
        let shared = &self.shared_pool;
        let weight = self.config.vocab.mixing[k];
        let len = sample_length(self.config.clause_length[k], rng);
        let mut text = String::with_capacity(len * 3);
        for _ in 0..len {
            let pool = match (own.is_empty(), shared.is_empty()) {
                (true, true) => return Err(Error::invalid(format!("no characters available for {label}"))),
                (false, true) => own,
                (true, false) => shared,
                (false, false) => {
                    if rng.random::<f64>() < weight {
                        own
                    } else {
                        shared
                    }
                }
            };
            text.push(pool[rng.random_range(0..pool.len())]);
        }
        Ok(text)
    }

    pub fn corpus(&self, n_paragraphs: usize, rng: &mut impl Rng) -> Result<Corpus> {
        if n_paragraphs == 0 {
            return Err(Error::invalid("need at least one paragraph"));
        }
        let (min, max) = self.config.paragraph_length;
        let mut paragraphs = Vec::with_capacity(n_paragraphs);
        for i in 0..n_paragraphs {
            let n = rng.random_range(min..=max);
            let clauses = self
                .label_sequence(n, rng)?
                .into_iter()
                .map(|label| Ok(Clause::new(self.clause_text(label, rng)?, Some(label))))
                .collect::<Result<Vec<_>>>()?;
            paragraphs.push(Paragraph::new(format!("syn-{i:06}"), clauses)?);
        }
        Corpus::new(paragraphs)
    }
}

pub fn generate_clause_text(config: &GeneratorConfig, label: ElementLabel, rng: &mut impl Rng) -> Result<String> {
    Generator::new(config.clone())?.clause_text(label, rng)
}

pub fn generate_corpus(config: &GeneratorConfig, n_paragraphs: usize, rng: &mut impl Rng) -> Result<Corpus> {
    Generator::new(config.clone())?.corpus(n_paragraphs, rng)
}

/// Generate with a ChaCha8 stream seeded from `config.seed`.
pub fn generate_corpus_seeded(config: &GeneratorConfig, n_paragraphs: usize) -> Result<Corpus> {
    generate_corpus(config, n_paragraphs, &mut ChaCha8Rng::seed_from_u64(config.seed))
}

/// A task whose labels cannot be read off single clauses.
///
/// Paragraphs are sequences of runs. Only the first clause of a run carries
/// characters specific to its label; later clauses draw from one pool shared
/// by every run label, so their label follows from what came before. Clauses
/// from the closing pool are UD at the end of a paragraph and NONE at its
/// start. Pivot clauses are CP or UD depending on a paragraph topic that only
/// shows as one background character mixed into every clause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextTaskConfig {
    /// Inclusive range of runs per paragraph.
    pub runs: (usize, usize),
    /// Inclusive range of clauses per run.
    pub run_length: (usize, usize),
    /// Inclusive range of content characters per clause.
    pub clause_length: (usize, usize),
    pub opener_rate: f64,
    pub pivot_rate: f64,
    pub closing_rate: f64,
    /// Probability that a clause's background character matches the topic.
    pub topic_purity: f64,
    pub seed: u64,
}

impl Default for ContextTaskConfig {
    fn default() -> Self {
        ContextTaskConfig {
            runs: (2, 3),
            run_length: (1, 3),
            clause_length: (2, 4),
            opener_rate: 0.6,
            pivot_rate: 0.8,
            closing_rate: 0.8,
            topic_purity: 0.8,
            seed: 0,
        }
    }
}

const RUN_LABELS: [ElementLabel; 4] = [ElementLabel::CF, ElementLabel::IF, ElementLabel::RE, ElementLabel::FR];

struct TaskPools {
    cues: Vec<Vec<char>>,
    continuation: Vec<char>,
    closing: Vec<char>,
    filler: Vec<char>,
    pivot: Vec<char>,
    topics: [char; 2],
}

impl TaskPools {
    fn new() -> Self {
        let mut next = 0x4E00u32;
        let mut take = |n: usize| -> Vec<char> {
            let out = (0..n as u32).map(|i| char::from_u32(next + i).expect("CJK block")).collect();
            next += n as u32;
            out
        };
        let cues = (0..RUN_LABELS.len()).map(|_| take(5)).collect();
        let continuation = take(6);
        let closing = take(4);
        let filler = take(6);
        let pivot = take(4);
        let t = take(2);
        TaskPools {
            cues,
            continuation,
            closing,
            filler,
            pivot,
            topics: [t[0], t[1]],
        }
    }
}

impl ContextTaskConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("runs", self.runs), ("run_length", self.run_length), ("clause_length", self.clause_length)] {
            if lo == 0 || lo > hi {
                return Err(Error::invalid(format!("{name} must be a non-empty range of positive counts")));
            }
        }
        for (name, p) in [
            ("opener_rate", self.opener_rate),
            ("pivot_rate", self.pivot_rate),
            ("closing_rate", self.closing_rate),
            ("topic_purity", self.topic_purity),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

fn task_clause(pool: &[char], cfg: &ContextTaskConfig, background: char, rng: &mut impl Rng) -> String {
    let len = rng.random_range(cfg.clause_length.0..=cfg.clause_length.1);
    let mut chars: Vec<char> = (0..len).map(|_| pool[rng.random_range(0..pool.len())]).collect();
    chars.insert(rng.random_range(0..=len), background);
    chars.into_iter().collect()
}

/// Generate `n_paragraphs` of the context-dependent task from `config.seed`.
pub fn generate_context_task(config: &ContextTaskConfig, n_paragraphs: usize) -> Result<Corpus> {
    config.validate()?;
    if n_paragraphs == 0 {
        return Err(Error::invalid("need at least one paragraph"));
    }
    let pools = TaskPools::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut paragraphs = Vec::with_capacity(n_paragraphs);
    for i in 0..n_paragraphs {
        let topic = rng.random_range(0..2usize);
        let mut parts: Vec<(&[char], ElementLabel)> = Vec::new();
        if rng.random::<f64>() < config.opener_rate {
            let pool = if rng.random::<bool>() { &pools.closing } else { &pools.filler };
            parts.push((pool, ElementLabel::NONE));
        }
        let runs = rng.random_range(config.runs.0..=config.runs.1);
        let pivot_after = (rng.random::<f64>() < config.pivot_rate).then(|| rng.random_range(0..runs));
        for r in 0..runs {
            let k = rng.random_range(0..RUN_LABELS.len());
            let len = rng.random_range(config.run_length.0..=config.run_length.1);
            parts.push((&pools.cues[k], RUN_LABELS[k]));
            for _ in 1..len {
                parts.push((&pools.continuation, RUN_LABELS[k]));
            }
            if pivot_after == Some(r) {
                let label = if topic == 0 { ElementLabel::CP } else { ElementLabel::UD };
                parts.push((&pools.pivot, label));
            }
        }
        if rng.random::<f64>() < config.closing_rate {
            parts.push((&pools.closing, ElementLabel::UD));
        }
        let clauses = parts
            .into_iter()
            .map(|(pool, label)| {
                let background = if rng.random::<f64>() < config.topic_purity {
                    pools.topics[topic]
                } else {
                    pools.topics[1 - topic]
                };
                Clause::new(task_clause(pool, config, background, &mut rng), Some(label))
            })
            .collect();
        paragraphs.push(Paragraph::new(format!("ctx-{i:06}"), clauses)?);
    }
    Corpus::new(paragraphs)
}
