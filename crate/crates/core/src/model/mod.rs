//! Hierarchical clause tagger.
//!
//! A local encoder turns every clause into a vector `h_i`. A two-layer
//! bidirectional GRU over the whole paragraph's tokens is mean-pooled into a
//! context vector `c`. A first classifier GRU runs over `h_1..h_n` and emits
//! label distributions `P`; a refiner GRU reads `[P_i; h_i]` and emits the
//! final distributions `P'`. Both output layers see `[s_i; c]`.

mod checkpoint;
mod gru;
mod network;
mod tensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::NUM_LABELS;
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, SavedModel};
pub use gru::{BiGru, BiGruTrace, GruCell};
pub use network::{ClauseTrace, ForwardTrace, LocalGrad};
pub use tensor::{softmax, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Embedding plus a bidirectional GRU, trained in phase 1.
    Trainable,
    /// Clause vectors supplied with the data.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Per direction.
    pub hidden: usize,
    pub n_labels: usize,
    pub dropout: f64,
    pub encoder_kind: EncoderKind,
    pub use_global_context: bool,
    pub use_label_refiner: bool,
    pub aux_loss_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 2,
            embed_dim: 128,
            hidden: 256,
            n_labels: NUM_LABELS,
            dropout: 0.3,
            encoder_kind: EncoderKind::Trainable,
            use_global_context: true,
            use_label_refiner: true,
            aux_loss_weight: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::invalid("hidden must be positive"));
        }
        if self.embed_dim == 0 {
            return Err(Error::invalid("embed_dim must be positive"));
        }
        if self.vocab_size == 0 {
            return Err(Error::invalid("vocab_size must be positive"));
        }
        if self.n_labels != NUM_LABELS {
            return Err(Error::invalid(format!("n_labels must be {NUM_LABELS}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if !self.aux_loss_weight.is_finite() || self.aux_loss_weight < 0.0 {
            return Err(Error::invalid("aux_loss_weight must be a non-negative number"));
        }
        Ok(())
    }

    /// Width of a clause representation and of the context vector.
    pub fn repr_dim(&self) -> usize {
        2 * self.hidden
    }
}

/// Anything made of named tensors: optimisers, checkpoints and gradient
/// buffers walk parameters through this.
pub trait Parameters {
    fn tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn zero(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn sum_squares(&self) -> f64 {
        self.tensors().iter().map(|(_, t)| t.sum_squares()).sum()
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.data().iter().all(|v| v.is_finite()))
    }

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

fn push_gru<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, gru: &'a BiGru) {
    for (dir, cell) in [("fwd", &gru.fwd), ("bwd", &gru.bwd)] {
        for (name, t) in cell.named() {
            out.push((format!("{prefix}.{dir}.{name}"), t));
        }
    }
}

fn push_gru_mut<'a>(out: &mut Vec<(String, &'a mut Tensor)>, prefix: &str, gru: &'a mut BiGru) {
    for (dir, cell) in [("fwd", &mut gru.fwd), ("bwd", &mut gru.bwd)] {
        for (name, t) in cell.named_mut() {
            out.push((format!("{prefix}.{dir}.{name}"), t));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(out: usize, input: usize) -> Self {
        Linear {
            weight: Tensor::zeros(out, input),
            bias: Tensor::vector(out),
        }
    }

    pub fn init(out: usize, input: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: Tensor::uniform(out, input, 1.0 / (input as f64).sqrt(), rng),
            bias: Tensor::vector(out),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.data().to_vec();
        self.weight.matvec_acc(x, &mut y);
        y
    }

    /// Accumulate parameter gradients and return the input gradient.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Linear) -> Vec<f64> {
        grads.weight.outer_acc(dy, x);
        grads.bias.data_mut().iter_mut().zip(dy).for_each(|(g, d)| *g += d);
        let mut dx = vec![0.0; x.len()];
        self.weight.matvec_t_acc(dy, &mut dx);
        dx
    }
}

/// Token embedding plus the clause-level bidirectional GRU.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalEncoder {
    pub embedding: Tensor,
    pub gru: BiGru,
}

impl LocalEncoder {
    pub fn zeros(config: &ModelConfig) -> Self {
        LocalEncoder {
            embedding: Tensor::zeros(config.vocab_size, config.embed_dim),
            gru: BiGru::zeros(config.embed_dim, config.hidden),
        }
    }

    /// Embedding rows are drawn from uniform(-1, 1): a one-hot input has a
    /// fan-in of one.
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        LocalEncoder {
            embedding: Tensor::uniform(config.vocab_size, config.embed_dim, 1.0, rng),
            gru: BiGru::init(config.embed_dim, config.hidden, rng),
        }
    }

    fn push<'a>(&'a self, out: &mut Vec<(String, &'a Tensor)>) {
        out.push(("embedding".to_string(), &self.embedding));
        push_gru(out, "local", &self.gru);
    }

    fn push_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push(("embedding".to_string(), &mut self.embedding));
        push_gru_mut(out, "local", &mut self.gru);
    }

    pub fn is_local_name(name: &str) -> bool {
        name == "embedding" || name.starts_with("local.")
    }
}

/// Full hierarchical model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub config: ModelConfig,
    pub local: LocalEncoder,
    pub global: [BiGru; 2],
    pub classifier: BiGru,
    pub refiner: BiGru,
    pub out1: Linear,
    pub out2: Linear,
}

impl ModelParameters {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (e, h, r) = (config.embed_dim, config.hidden, config.repr_dim());
        Ok(ModelParameters {
            config: config.clone(),
            local: LocalEncoder::zeros(config),
            global: [BiGru::zeros(e, h), BiGru::zeros(r, h)],
            classifier: BiGru::zeros(r, h),
            refiner: BiGru::zeros(NUM_LABELS + r, h),
            out1: Linear::zeros(NUM_LABELS, 2 * r),
            out2: Linear::zeros(NUM_LABELS, 2 * r),
        })
    }

    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (e, h, r) = (config.embed_dim, config.hidden, config.repr_dim());
        let local = LocalEncoder::init(config, &mut rng);
        let global = [BiGru::init(e, h, &mut rng), BiGru::init(r, h, &mut rng)];
        let classifier = BiGru::init(r, h, &mut rng);
        let refiner = BiGru::init(NUM_LABELS + r, h, &mut rng);
        let out1 = Linear::init(NUM_LABELS, 2 * r, &mut rng);
        let out2 = Linear::init(NUM_LABELS, 2 * r, &mut rng);
        Ok(ModelParameters {
            config: config.clone(),
            local,
            global,
            classifier,
            refiner,
            out1,
            out2,
        })
    }

    /// A zero tensor of every parameter's shape, for accumulating gradients.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.zero();
        out
    }
}

impl Parameters for ModelParameters {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.local.push(&mut out);
        push_gru(&mut out, "global.0", &self.global[0]);
        push_gru(&mut out, "global.1", &self.global[1]);
        push_gru(&mut out, "classifier", &self.classifier);
        push_gru(&mut out, "refiner", &self.refiner);
        out.push(("out1.weight".into(), &self.out1.weight));
        out.push(("out1.bias".into(), &self.out1.bias));
        out.push(("out2.weight".into(), &self.out2.weight));
        out.push(("out2.bias".into(), &self.out2.bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.local.push_mut(&mut out);
        let [g0, g1] = &mut self.global;
        push_gru_mut(&mut out, "global.0", g0);
        push_gru_mut(&mut out, "global.1", g1);
        push_gru_mut(&mut out, "classifier", &mut self.classifier);
        push_gru_mut(&mut out, "refiner", &mut self.refiner);
        out.push(("out1.weight".into(), &mut self.out1.weight));
        out.push(("out1.bias".into(), &mut self.out1.bias));
        out.push(("out2.weight".into(), &mut self.out2.weight));
        out.push(("out2.bias".into(), &mut self.out2.bias));
        out
    }
}

/// Local encoder with a linear softmax head and no sequence layers. Used for
/// phase-1 pretraining and as the independent-clause baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ClauseModel {
    pub config: ModelConfig,
    pub local: LocalEncoder,
    pub head: Linear,
}

impl ClauseModel {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let local = LocalEncoder::init(config, &mut rng);
        let head = Linear::init(NUM_LABELS, config.repr_dim(), &mut rng);
        Ok(ClauseModel {
            config: config.clone(),
            local,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.zero();
        out
    }
}

impl Parameters for ClauseModel {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.local.push(&mut out);
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.local.push_mut(&mut out);
        out.push(("head.weight".into(), &mut self.head.weight));
        out.push(("head.bias".into(), &mut self.head.bias));
        out
    }
}

/// Mean cross-entropy of `probs` against `gold`.
pub fn cross_entropy(probs: &[Vec<f64>], gold: &[usize]) -> f64 {
    let n = probs.len() as f64;
    probs
        .iter()
        .zip(gold)
        .map(|(p, &y)| -p[y].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / n
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}
