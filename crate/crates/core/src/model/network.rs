use rand::{Rng, RngCore};

use super::gru::{BiGru, BiGruTrace};
use super::tensor::{concat, softmax};
use super::{argmax, cross_entropy, ClauseModel, EncoderKind, LocalEncoder, ModelParameters, Tensor};
use crate::corpus::{Clause, ElementLabel, Paragraph, NUM_LABELS};
use crate::error::{Error, Result};

/// Per-clause recurrent states and label distributions of one output stage.
pub type StageOutput = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Whether [`ModelParameters::backward`] should propagate into the local
/// encoder. Phase 2 keeps it frozen and skips that work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalGrad {
    Compute,
    Skip,
}

#[derive(Debug, Clone)]
struct LocalTape {
    tokens: Vec<u32>,
    inputs: Vec<Vec<f64>>,
    trace: BiGruTrace,
}

#[derive(Debug, Clone)]
struct GlobalTape {
    tokens: Vec<u32>,
    inputs: Vec<Vec<f64>>,
    layer0: BiGruTrace,
    mid: Vec<Vec<f64>>,
    mid_mask: Option<Vec<Vec<f64>>>,
    layer1: BiGruTrace,
}

#[derive(Debug, Clone)]
struct Tape {
    local: Option<Vec<LocalTape>>,
    global: Option<GlobalTape>,
    h_in: Vec<Vec<f64>>,
    h_mask: Option<Vec<Vec<f64>>>,
    classifier: BiGruTrace,
    s1_in: Vec<Vec<f64>>,
    s1_mask: Option<Vec<Vec<f64>>>,
    refiner: Option<(Vec<Vec<f64>>, BiGruTrace)>,
    s2_in: Vec<Vec<f64>>,
    s2_mask: Option<Vec<Vec<f64>>>,
}

/// Everything computed for one paragraph.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub clause_repr: Vec<Vec<f64>>,
    pub context: Vec<f64>,
    pub first_states: Vec<Vec<f64>>,
    pub first_probs: Vec<Vec<f64>>,
    /// `None` when the refiner is disabled.
    pub refined_states: Option<Vec<Vec<f64>>>,
    pub refined_probs: Option<Vec<Vec<f64>>>,
    tape: Tape,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.first_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_probs.is_empty()
    }

    /// Refined distributions, or first-stage ones without a refiner.
    pub fn output_probs(&self) -> &[Vec<f64>] {
        self.refined_probs.as_deref().unwrap_or(&self.first_probs)
    }

    pub fn predictions(&self) -> Vec<ElementLabel> {
        self.output_probs()
            .iter()
            .map(|p| ElementLabel::from_index(argmax(p)).expect("seven outputs"))
            .collect()
    }
}

fn dropout_masks(rows: usize, cols: usize, p: f64, rng: &mut Option<&mut dyn RngCore>) -> Option<Vec<Vec<f64>>> {
    let rng = rng.as_mut()?;
    if p == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(
        (0..rows)
            .map(|_| (0..cols).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect())
            .collect(),
    )
}

fn apply_mask(xs: &[Vec<f64>], mask: &Option<Vec<Vec<f64>>>) -> Vec<Vec<f64>> {
    match mask {
        None => xs.to_vec(),
        Some(m) => xs
            .iter()
            .zip(m)
            .map(|(x, m)| x.iter().zip(m).map(|(a, b)| a * b).collect())
            .collect(),
    }
}

fn mask_grad(ds: &mut [Vec<f64>], mask: &Option<Vec<Vec<f64>>>) {
    if let Some(m) = mask {
        for (d, m) in ds.iter_mut().zip(m) {
            d.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
        }
    }
}

/// Gradient through softmax: `p ⊙ (dp - <dp, p>)`.
fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(a, b)| a * (b - inner)).collect()
}

fn check_dim(name: &str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::Shape {
            name: name.to_string(),
            expected: vec![expected],
            actual: vec![v.len()],
        });
    }
    Ok(())
}

fn scatter_embedding(grad: &mut Tensor, tokens: &[u32], d_inputs: &[Vec<f64>]) {
    for (&tok, d) in tokens.iter().zip(d_inputs) {
        grad.row_mut(tok as usize).iter_mut().zip(d).for_each(|(g, v)| *g += v);
    }
}

fn gold_indices(gold: &[ElementLabel], n: usize) -> Result<Vec<usize>> {
    if gold.len() != n {
        return Err(Error::invalid(format!("{} gold labels for {n} clauses", gold.len())));
    }
    Ok(gold.iter().map(|l| l.index()).collect())
}

impl LocalEncoder {
    pub fn embed(&self, tokens: &[u32]) -> Result<Vec<Vec<f64>>> {
        let vocab = self.embedding.rows();
        tokens
            .iter()
            .map(|&t| {
                if (t as usize) < vocab {
                    Ok(self.embedding.row(t as usize).to_vec())
                } else {
                    Err(Error::invalid(format!("token id {t} outside vocabulary of {vocab}")))
                }
            })
            .collect()
    }

    fn encode_tape(&self, tokens: &[u32]) -> Result<LocalTape> {
        if tokens.is_empty() {
            return Err(Error::invalid("cannot encode an empty clause"));
        }
        let inputs = self.embed(tokens)?;
        let trace = self.gru.forward(&inputs);
        Ok(LocalTape {
            tokens: tokens.to_vec(),
            inputs,
            trace,
        })
    }

    /// Final forward state joined with the final backward state.
    pub fn encode(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        Ok(self.encode_tape(tokens)?.trace.final_states())
    }

    fn backward(&self, tape: &LocalTape, d_h: &[f64], grads: &mut LocalEncoder) {
        let d_inputs = self.gru.backward_final(&tape.inputs, &tape.trace, d_h, &mut grads.gru);
        scatter_embedding(&mut grads.embedding, &tape.tokens, &d_inputs);
    }
}

impl ModelParameters {
    pub fn encode_clause(&self, clause: &Clause) -> Result<Vec<f64>> {
        match self.config.encoder_kind {
            EncoderKind::Trainable => self.local.encode(&clause.tokens),
            EncoderKind::External => {
                let v = clause
                    .vector
                    .as_ref()
                    .ok_or_else(|| Error::invalid("external encoder requires a clause vector"))?;
                check_dim("clause vector", v, self.config.repr_dim())?;
                Ok(v.clone())
            }
        }
    }

    /// Representations for every clause of a paragraph.
    pub fn encode_clauses(&self, paragraph: &Paragraph) -> Result<Vec<Vec<f64>>> {
        paragraph.clauses().iter().map(|c| self.encode_clause(c)).collect()
    }

    pub fn encode_global_context(&self, paragraph: &Paragraph) -> Result<Vec<f64>> {
        let mut none = None;
        Ok(self.global_tape(paragraph, &mut none)?.0)
    }

    fn global_tape(&self, paragraph: &Paragraph, rng: &mut Option<&mut dyn RngCore>) -> Result<(Vec<f64>, GlobalTape)> {
        let tokens: Vec<u32> = paragraph.clauses().iter().flat_map(|c| c.tokens.iter().copied()).collect();
        if tokens.is_empty() {
            return Err(Error::invalid("paragraph has no tokens"));
        }
        let inputs = self.local.embed(&tokens)?;
        let layer0 = self.global[0].forward(&inputs);
        let mid_mask = dropout_masks(tokens.len(), self.config.repr_dim(), self.config.dropout, rng);
        let mid = apply_mask(&layer0.outputs, &mid_mask);
        let layer1 = self.global[1].forward(&mid);
        let mut c = vec![0.0; self.config.repr_dim()];
        for o in &layer1.outputs {
            c.iter_mut().zip(o).for_each(|(a, b)| *a += b);
        }
        let t = tokens.len() as f64;
        c.iter_mut().for_each(|v| *v /= t);
        Ok((
            c,
            GlobalTape {
                tokens,
                inputs,
                layer0,
                mid,
                mid_mask,
                layer1,
            },
        ))
    }

    fn output_layer(&self, gru: &BiGru, xs: &[Vec<f64>], c: &[f64], out: &super::Linear, mask: &Option<Vec<Vec<f64>>>) -> (BiGruTrace, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let trace = gru.forward(xs);
        let states_in = apply_mask(&trace.outputs, mask);
        let probs = states_in.iter().map(|s| softmax(&out.apply(&concat(s, c)))).collect();
        (trace, states_in, probs)
    }

    pub fn first_stage_classify(&self, h: &[Vec<f64>], c: &[f64]) -> Result<StageOutput> {
        let r = self.config.repr_dim();
        if h.is_empty() {
            return Err(Error::invalid("no clauses to classify"));
        }
        check_dim("context", c, r)?;
        for v in h {
            check_dim("clause representation", v, r)?;
        }
        let (trace, _, probs) = self.output_layer(&self.classifier, h, c, &self.out1, &None);
        Ok((trace.outputs, probs))
    }

    pub fn refine_labels(&self, h: &[Vec<f64>], p: &[Vec<f64>], c: &[f64]) -> Result<StageOutput> {
        let r = self.config.repr_dim();
        if h.is_empty() || h.len() != p.len() {
            return Err(Error::invalid("refiner needs one distribution per clause"));
        }
        check_dim("context", c, r)?;
        let xs: Vec<Vec<f64>> = p
            .iter()
            .zip(h)
            .map(|(p, h)| {
                check_dim("distribution", p, NUM_LABELS)?;
                check_dim("clause representation", h, r)?;
                Ok(concat(p, h))
            })
            .collect::<Result<_>>()?;
        let (trace, _, probs) = self.output_layer(&self.refiner, &xs, c, &self.out2, &None);
        Ok((trace.outputs, probs))
    }

    /// Evaluation-mode forward pass.
    pub fn forward(&self, paragraph: &Paragraph) -> Result<ForwardTrace> {
        self.forward_with(paragraph, None, None)
    }

    /// Forward pass with optional precomputed clause representations and an
    /// optional dropout source (training mode when present).
    pub fn forward_with(
        &self,
        paragraph: &Paragraph,
        representations: Option<&[Vec<f64>]>,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<ForwardTrace> {
        let cfg = &self.config;
        let r = cfg.repr_dim();
        let n = paragraph.len();
        if n == 0 {
            return Err(Error::invalid("empty paragraph"));
        }

        let (clause_repr, local) = match (representations, cfg.encoder_kind) {
            (Some(reps), _) => {
                if reps.len() != n {
                    return Err(Error::invalid("one representation per clause required"));
                }
                for v in reps {
                    check_dim("clause representation", v, r)?;
                }
                (reps.to_vec(), None)
            }
            (None, EncoderKind::External) => (self.encode_clauses(paragraph)?, None),
            (None, EncoderKind::Trainable) => {
                let tapes: Vec<LocalTape> = paragraph
                    .clauses()
                    .iter()
                    .map(|c| self.local.encode_tape(&c.tokens))
                    .collect::<Result<_>>()?;
                (tapes.iter().map(|t| t.trace.final_states()).collect(), Some(tapes))
            }
        };

        let (context, global) = if cfg.use_global_context {
            let (c, tape) = self.global_tape(paragraph, &mut rng)?;
            (c, Some(tape))
        } else {
            (vec![0.0; r], None)
        };

        let h_mask = dropout_masks(n, r, cfg.dropout, &mut rng);
        let h_in = apply_mask(&clause_repr, &h_mask);

        let s1_mask = dropout_masks(n, r, cfg.dropout, &mut rng);
        let (classifier, s1_in, first_probs) = self.output_layer(&self.classifier, &h_in, &context, &self.out1, &s1_mask);

        let mut s2_mask = None;
        let mut s2_in = Vec::new();
        let (refiner, refined_states, refined_probs) = if cfg.use_label_refiner {
            let xs: Vec<Vec<f64>> = first_probs.iter().zip(&h_in).map(|(p, h)| concat(p, h)).collect();
            s2_mask = dropout_masks(n, r, cfg.dropout, &mut rng);
            let (trace, states_in, probs) = self.output_layer(&self.refiner, &xs, &context, &self.out2, &s2_mask);
            s2_in = states_in;
            let states = trace.outputs.clone();
            (Some((xs, trace)), Some(states), Some(probs))
        } else {
            (None, None, None)
        };

        Ok(ForwardTrace {
            clause_repr,
            context,
            first_states: classifier.outputs.clone(),
            first_probs,
            refined_states,
            refined_probs,
            tape: Tape {
                local,
                global,
                h_in,
                h_mask,
                classifier,
                s1_in,
                s1_mask,
                refiner,
                s2_in,
                s2_mask,
            },
        })
    }

    /// `mean CE(P') + λ·mean CE(P)`, or `mean CE(P)` without the refiner.
    pub fn loss(&self, trace: &ForwardTrace, gold: &[ElementLabel]) -> Result<f64> {
        let y = gold_indices(gold, trace.len())?;
        let first = cross_entropy(&trace.first_probs, &y);
        Ok(match &trace.refined_probs {
            Some(p2) => cross_entropy(p2, &y) + self.config.aux_loss_weight * first,
            None => first,
        })
    }

    /// Accumulate the gradient of [`loss`](Self::loss) into `grads`, scaled
    /// by `scale` (used to average over a batch).
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        gold: &[ElementLabel],
        scale: f64,
        grads: &mut ModelParameters,
        local_grad: LocalGrad,
    ) -> Result<()> {
        let y = gold_indices(gold, trace.len())?;
        let tape = &trace.tape;
        let n = trace.len();
        let r = self.config.repr_dim();
        let w = scale / n as f64;

        let mut d_c = vec![0.0; r];
        let mut d_h_in = vec![vec![0.0; r]; n];
        let mut d_p1 = vec![vec![0.0; NUM_LABELS]; n];
        let first_weight = match (&tape.refiner, &trace.refined_probs) {
            (Some((xs, rtrace)), Some(p2)) => {
                let mut d_s2 = Vec::with_capacity(n);
                for i in 0..n {
                    let mut d_logits = p2[i].clone();
                    d_logits[y[i]] -= 1.0;
                    d_logits.iter_mut().for_each(|v| *v *= w);
                    let dx = self.out2.backward(&concat(&tape.s2_in[i], &trace.context), &d_logits, &mut grads.out2);
                    d_s2.push(dx[..r].to_vec());
                    d_c.iter_mut().zip(&dx[r..]).for_each(|(a, b)| *a += b);
                }
                mask_grad(&mut d_s2, &tape.s2_mask);
                let d_xs = self.refiner.backward(xs, rtrace, &d_s2, &mut grads.refiner);
                for (i, d) in d_xs.into_iter().enumerate() {
                    d_p1[i].copy_from_slice(&d[..NUM_LABELS]);
                    d_h_in[i].iter_mut().zip(&d[NUM_LABELS..]).for_each(|(a, b)| *a += b);
                }
                self.config.aux_loss_weight
            }
            _ => 1.0,
        };

        let mut d_s1 = Vec::with_capacity(n);
        for i in 0..n {
            let p = &trace.first_probs[i];
            let mut d_logits = softmax_backward(p, &d_p1[i]);
            for (k, v) in d_logits.iter_mut().enumerate() {
                let onehot = if k == y[i] { 1.0 } else { 0.0 };
                *v += first_weight * w * (p[k] - onehot);
            }
            let dx = self.out1.backward(&concat(&tape.s1_in[i], &trace.context), &d_logits, &mut grads.out1);
            d_s1.push(dx[..r].to_vec());
            d_c.iter_mut().zip(&dx[r..]).for_each(|(a, b)| *a += b);
        }
        mask_grad(&mut d_s1, &tape.s1_mask);
        let d_xs = self.classifier.backward(&tape.h_in, &tape.classifier, &d_s1, &mut grads.classifier);
        for (a, b) in d_h_in.iter_mut().zip(d_xs) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }

        if let Some(g) = &tape.global {
            let t = g.tokens.len() as f64;
            let d_top: Vec<f64> = d_c.iter().map(|v| v / t).collect();
            let d_out1 = vec![d_top; g.tokens.len()];
            let mut d_mid = self.global[1].backward(&g.mid, &g.layer1, &d_out1, &mut grads.global[1]);
            mask_grad(&mut d_mid, &g.mid_mask);
            let d_inputs = self.global[0].backward(&g.inputs, &g.layer0, &d_mid, &mut grads.global[0]);
            scatter_embedding(&mut grads.local.embedding, &g.tokens, &d_inputs);
        }

        if local_grad == LocalGrad::Compute {
            if let Some(tapes) = &tape.local {
                mask_grad(&mut d_h_in, &tape.h_mask);
                for (lt, d_h) in tapes.iter().zip(&d_h_in) {
                    self.local.backward(lt, d_h, &mut grads.local);
                }
            }
        }
        Ok(())
    }

    /// Evaluation-mode loss and a fresh gradient buffer.
    pub fn gradient(&self, paragraph: &Paragraph) -> Result<(f64, ModelParameters)> {
        let gold = paragraph.gold_labels()?;
        let trace = self.forward(paragraph)?;
        let loss = self.loss(&trace, &gold)?;
        let mut grads = self.zeros_like();
        self.backward(&trace, &gold, 1.0, &mut grads, LocalGrad::Compute)?;
        Ok((loss, grads))
    }

    pub fn predict(&self, paragraph: &Paragraph) -> Result<Vec<ElementLabel>> {
        Ok(self.forward(paragraph)?.predictions())
    }
}

/// One clause through a [`ClauseModel`].
#[derive(Debug, Clone)]
pub struct ClauseTrace {
    pub repr: Vec<f64>,
    pub probs: Vec<f64>,
    local: LocalTape,
    h_in: Vec<f64>,
    mask: Option<Vec<f64>>,
}

impl ClauseModel {
    pub fn forward(&self, clause: &Clause, rng: Option<&mut dyn RngCore>) -> Result<ClauseTrace> {
        let local = self.local.encode_tape(&clause.tokens)?;
        let repr = local.trace.final_states();
        let mut rng = rng;
        let mask = dropout_masks(1, repr.len(), self.config.dropout, &mut rng).map(|mut m| m.remove(0));
        let h_in = match &mask {
            Some(m) => repr.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => repr.clone(),
        };
        let probs = softmax(&self.head.apply(&h_in));
        Ok(ClauseTrace {
            repr,
            probs,
            local,
            h_in,
            mask,
        })
    }

    pub fn probs(&self, clause: &Clause) -> Result<Vec<f64>> {
        Ok(self.forward(clause, None)?.probs)
    }

    pub fn predict(&self, clause: &Clause) -> Result<ElementLabel> {
        Ok(ElementLabel::from_index(argmax(&self.probs(clause)?)).expect("seven outputs"))
    }

    /// Accumulate `scale · ∂CE/∂θ` into `grads`.
    pub fn backward(&self, trace: &ClauseTrace, gold: ElementLabel, scale: f64, grads: &mut ClauseModel) {
        let mut d_logits: Vec<f64> = trace.probs.iter().map(|p| p * scale).collect();
        d_logits[gold.index()] -= scale;
        let mut d_h = self.head.backward(&trace.h_in, &d_logits, &mut grads.head);
        if let Some(m) = &trace.mask {
            d_h.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
        }
        self.local.backward(&trace.local, &d_h, &mut grads.local);
    }
}
