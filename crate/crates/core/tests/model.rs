use elemid::model::{
    softmax, BiGru, EncoderKind, LocalGrad, ModelConfig, ModelParameters, Parameters, Tensor,
};
use elemid::{Clause, Corpus, ElementLabel, Paragraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus(paragraphs: &[&[(&str, ElementLabel)]]) -> Corpus {
    let ps = paragraphs
        .iter()
        .enumerate()
        .map(|(i, cs)| {
            let clauses = cs.iter().map(|(t, l)| Clause::new(*t, Some(*l))).collect();
            Paragraph::new(format!("p{i}"), clauses).unwrap()
        })
        .collect();
    Corpus::new(ps).unwrap()
}

fn tiny_corpus() -> Corpus {
    use ElementLabel::*;
    corpus(&[
        &[("甲乙丙", CF), ("丁戊", RE), ("己", NONE), ("乙丁庚", FR)],
        &[("庚辛", UD), ("甲壬癸", IF), ("丙", CP)],
    ])
}

fn config(vocab: usize, hidden: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        embed_dim: 8,
        hidden,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

/// Relative error with a small floor so that near-zero gradients compare on
/// an absolute scale.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn total_loss(params: &ModelParameters, corpus: &Corpus) -> f64 {
    corpus
        .paragraphs()
        .iter()
        .map(|p| {
            let t = params.forward(p).unwrap();
            params.loss(&t, &p.gold_labels().unwrap()).unwrap()
        })
        .sum()
}

fn finite_difference_check(cfg: &ModelConfig, corpus: &Corpus, seed: u64) -> f64 {
    let params = ModelParameters::init(cfg, seed).unwrap();
    let mut grads = params.zeros_like();
    for p in corpus.paragraphs() {
        let gold = p.gold_labels().unwrap();
        let trace = params.forward(p).unwrap();
        params.backward(&trace, &gold, 1.0, &mut grads, LocalGrad::Compute).unwrap();
    }
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|(_, t)| t.data().to_vec()).collect();
    let eps = 1e-5;
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for (k, g) in analytic.iter().enumerate() {
        for (i, &a) in g.iter().enumerate() {
            let orig = probe.tensors()[k].1.data()[i];
            probe.tensors_mut()[k].1.data_mut()[i] = orig + eps;
            let up = total_loss(&probe, corpus);
            probe.tensors_mut()[k].1.data_mut()[i] = orig - eps;
            let down = total_loss(&probe, corpus);
            probe.tensors_mut()[k].1.data_mut()[i] = orig;
            worst = worst.max(rel_err(a, (up - down) / (2.0 * eps)));
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let corpus = tiny_corpus();
    let cfg = config(corpus.vocabulary().len(), 8);
    let worst = finite_difference_check(&cfg, &corpus, 11);
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn gradients_match_finite_differences_for_ablations() {
    let corpus = tiny_corpus();
    for (gc, lr) in [(false, true), (true, false), (false, false)] {
        let cfg = ModelConfig {
            hidden: 4,
            use_global_context: gc,
            use_label_refiner: lr,
            ..config(corpus.vocabulary().len(), 4)
        };
        let worst = finite_difference_check(&cfg, &corpus, 5);
        assert!(worst < 1e-4, "gc={gc} lr={lr}: {worst}");
    }
}

#[test]
fn unused_parameters_get_zero_gradient() {
    let corpus = tiny_corpus();
    let cfg = ModelConfig {
        use_global_context: false,
        use_label_refiner: false,
        ..config(corpus.vocabulary().len(), 4)
    };
    let params = ModelParameters::init(&cfg, 1).unwrap();
    let (_, grads) = params.gradient(&corpus.paragraphs()[0]).unwrap();
    for (name, t) in grads.tensors() {
        let unused = name.starts_with("global.") || name.starts_with("refiner.") || name.starts_with("out2.");
        if unused {
            assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }
    assert!(grads.out1.weight.data().iter().any(|&v| v != 0.0));
}

#[test]
fn frozen_local_encoder_receives_no_gradient() {
    let corpus = tiny_corpus();
    let cfg = ModelConfig {
        use_global_context: false,
        ..config(corpus.vocabulary().len(), 4)
    };
    let params = ModelParameters::init(&cfg, 2).unwrap();
    let p = &corpus.paragraphs()[0];
    let trace = params.forward(p).unwrap();
    let mut grads = params.zeros_like();
    params.backward(&trace, &p.gold_labels().unwrap(), 1.0, &mut grads, LocalGrad::Skip).unwrap();
    assert_eq!(grads.local.sum_squares_all(), 0.0);
    assert!(grads.classifier.fwd.w_z.sum_squares() > 0.0);
}

trait LocalSum {
    fn sum_squares_all(&self) -> f64;
}

impl LocalSum for elemid::model::LocalEncoder {
    fn sum_squares_all(&self) -> f64 {
        self.embedding.sum_squares()
            + [&self.gru.fwd, &self.gru.bwd]
                .iter()
                .flat_map(|c| c.named().map(|(_, t)| t.sum_squares()))
                .sum::<f64>()
    }
}

#[test]
fn uniform_outputs_give_closed_form_loss() {
    let corpus = tiny_corpus();
    let cfg = config(corpus.vocabulary().len(), 4);
    let mut params = ModelParameters::init(&cfg, 3).unwrap();
    params.out1.weight.fill(0.0);
    params.out2.weight.fill(0.0);
    for p in corpus.paragraphs() {
        let t = params.forward(p).unwrap();
        for probs in t.first_probs.iter().chain(t.refined_probs.as_ref().unwrap()) {
            assert!(probs.iter().all(|&v| (v - 1.0 / 7.0).abs() < 1e-15));
        }
        let loss = params.loss(&t, &p.gold_labels().unwrap()).unwrap();
        assert!((loss - 1.5 * 7f64.ln()).abs() < 1e-12, "{loss}");
    }
}

#[test]
fn perfect_refined_output_with_zero_aux_weight_has_zero_loss() {
    let corpus = tiny_corpus();
    let cfg = ModelConfig {
        aux_loss_weight: 0.0,
        ..config(corpus.vocabulary().len(), 4)
    };
    let mut params = ModelParameters::init(&cfg, 3).unwrap();
    let p = &corpus.paragraphs()[0];
    let gold = p.gold_labels().unwrap();
    // Only the bias drives the refined logits, so every clause is pushed
    // towards one label; use a paragraph whose gold labels all agree.
    let uniform = Paragraph::new("u", p.clauses().iter().map(|c| Clause { gold: Some(gold[0]), ..c.clone() }).collect()).unwrap();
    params.out2.weight.fill(0.0);
    params.out2.bias.fill(-800.0);
    params.out2.bias.data_mut()[gold[0].index()] = 800.0;
    let t = params.forward(&uniform).unwrap();
    let loss = params.loss(&t, &uniform.gold_labels().unwrap()).unwrap();
    assert_eq!(loss, 0.0);
}

#[test]
fn softmax_ce_logit_gradient_is_p_minus_onehot() {
    let corpus = tiny_corpus();
    let cfg = ModelConfig {
        use_label_refiner: false,
        use_global_context: false,
        ..config(corpus.vocabulary().len(), 4)
    };
    let params = ModelParameters::init(&cfg, 9).unwrap();
    let p = &corpus.paragraphs()[1];
    let gold = p.gold_labels().unwrap();
    let t = params.forward(p).unwrap();
    let (_, grads) = params.gradient(p).unwrap();
    // The bias gradient of the first head equals Σ_i (P_i - onehot(y_i)) / n.
    let n = gold.len() as f64;
    for k in 0..7 {
        let expect: f64 = t
            .first_probs
            .iter()
            .zip(&gold)
            .map(|(probs, y)| probs[k] - if y.index() == k { 1.0 } else { 0.0 })
            .sum::<f64>()
            / n;
        assert!((grads.out1.bias.data()[k] - expect).abs() < 1e-14);
    }
}

#[test]
fn zero_recurrent_weights_encode_to_zero() {
    let corpus = tiny_corpus();
    let cfg = config(corpus.vocabulary().len(), 4);
    let mut params = ModelParameters::init(&cfg, 3).unwrap();
    params.local.gru = BiGru::zeros(8, 4);
    for clause in corpus.clauses() {
        assert_eq!(params.encode_clause(clause).unwrap(), vec![0.0; 8]);
    }
}

#[test]
fn single_token_clause_runs_one_step_each_way() {
    let corpus = tiny_corpus();
    let cfg = config(corpus.vocabulary().len(), 4);
    let mut params = ModelParameters::init(&cfg, 3).unwrap();
    params.local.gru.bwd = params.local.gru.fwd.clone();
    let clause = &corpus.paragraphs()[0].clauses()[2];
    assert_eq!(clause.tokens.len(), 1);
    let h = params.encode_clause(clause).unwrap();
    assert_eq!(h[..4], h[4..]);
}

#[test]
fn external_encoder_uses_supplied_vectors() {
    let corpus = tiny_corpus();
    let cfg = ModelConfig {
        encoder_kind: EncoderKind::External,
        ..config(corpus.vocabulary().len(), 2)
    };
    let params = ModelParameters::init(&cfg, 3).unwrap();
    let mut clause = corpus.paragraphs()[0].clauses()[0].clone();
    assert!(params.encode_clause(&clause).is_err());
    clause.vector = Some(vec![0.5, -1.0, 2.0, 0.0]);
    assert_eq!(params.encode_clause(&clause).unwrap(), vec![0.5, -1.0, 2.0, 0.0]);
    clause.vector = Some(vec![1.0]);
    assert!(params.encode_clause(&clause).is_err());
}

/// Straight-line GRU written independently of the library's kernels.
fn oracle_gru(w: &[&Tensor; 9], xs: &[Vec<f64>], reverse: bool) -> Vec<Vec<f64>> {
    let [wz, wr, wh, uz, ur, uh, bz, br, bh] = *w;
    let hsz = uz.rows();
    let mut out = vec![vec![]; xs.len()];
    let mut h = vec![0.0; hsz];
    let order: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    for t in order {
        let x = &xs[t];
        let mut next = vec![0.0; hsz];
        let mut r = vec![0.0; hsz];
        for j in 0..hsz {
            let mut a = br.data()[j];
            for i in 0..x.len() {
                a += wr.data()[j * x.len() + i] * x[i];
            }
            for i in 0..hsz {
                a += ur.data()[j * hsz + i] * h[i];
            }
            r[j] = sig(a);
        }
        for j in 0..hsz {
            let mut az = bz.data()[j];
            let mut ah = bh.data()[j];
            for i in 0..x.len() {
                az += wz.data()[j * x.len() + i] * x[i];
                ah += wh.data()[j * x.len() + i] * x[i];
            }
            for i in 0..hsz {
                az += uz.data()[j * hsz + i] * h[i];
                ah += uh.data()[j * hsz + i] * r[i] * h[i];
            }
            let z = sig(az);
            next[j] = (1.0 - z) * h[j] + z * ah.tanh();
        }
        h = next;
        out[t] = h.clone();
    }
    out
}

fn oracle_bigru(g: &BiGru, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let f = oracle_gru(&g.fwd.named().map(|(_, t)| t), xs, false);
    let b = oracle_gru(&g.bwd.named().map(|(_, t)| t), xs, true);
    f.into_iter().zip(b).map(|(mut a, b)| {
        a.extend(b);
        a
    }).collect()
}

#[test]
fn global_context_matches_straight_line_oracle() {
    let corpus = tiny_corpus();
    let cfg = config(corpus.vocabulary().len(), 5);
    let params = ModelParameters::init(&cfg, 21).unwrap();
    for p in corpus.paragraphs() {
        let tokens: Vec<u32> = p.clauses().iter().flat_map(|c| c.tokens.clone()).collect();
        let xs: Vec<Vec<f64>> = tokens.iter().map(|&t| params.local.embedding.row(t as usize).to_vec()).collect();
        let l1 = oracle_bigru(&params.global[0], &xs);
        let l2 = oracle_bigru(&params.global[1], &l1);
        let mut c = vec![0.0; 10];
        for s in &l2 {
            for (a, b) in c.iter_mut().zip(s) {
                *a += b / l2.len() as f64;
            }
        }
        let got = params.encode_global_context(p).unwrap();
        for (a, b) in got.iter().zip(&c) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn one_token_paragraph_context_is_its_single_state() {
    let corpus = corpus(&[&[("甲", ElementLabel::CF)]]);
    let cfg = config(corpus.vocabulary().len(), 3);
    let params = ModelParameters::init(&cfg, 4).unwrap();
    let p = &corpus.paragraphs()[0];
    let c = params.encode_global_context(p).unwrap();
    let xs = vec![params.local.embedding.row(2).to_vec()];
    let l1 = oracle_bigru(&params.global[0], &xs);
    let l2 = oracle_bigru(&params.global[1], &l1);
    for (a, b) in c.iter().zip(&l2[0]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn ablations_change_what_the_heads_see() {
    let corpus = tiny_corpus();
    let base = config(corpus.vocabulary().len(), 4);
    let no_gc = ModelConfig {
        use_global_context: false,
        ..base.clone()
    };
    let params = ModelParameters::init(&no_gc, 6).unwrap();
    let p = &corpus.paragraphs()[0];
    let t = params.forward(p).unwrap();
    assert!(t.context.iter().all(|&v| v == 0.0));
    assert_eq!(t.first_probs.len(), p.len());
    assert_eq!(t.refined_probs.as_ref().unwrap().len(), p.len());

    let no_lr = ModelConfig {
        use_label_refiner: false,
        ..base
    };
    let params = ModelParameters::init(&no_lr, 6).unwrap();
    let t = params.forward(p).unwrap();
    assert!(t.refined_probs.is_none());
    assert_eq!(t.output_probs(), &t.first_probs[..]);
}

#[test]
fn first_and_refined_heads_with_zero_weights_are_uniform() {
    let corpus = tiny_corpus();
    let cfg = config(corpus.vocabulary().len(), 4);
    let mut params = ModelParameters::init(&cfg, 8).unwrap();
    params.out1.weight.fill(0.0);
    let p = &corpus.paragraphs()[0];
    let h = params.encode_clauses(p).unwrap();
    let c = params.encode_global_context(p).unwrap();
    let (_, probs) = params.first_stage_classify(&h, &c).unwrap();
    assert!(probs.iter().flatten().all(|&v| (v - 1.0 / 7.0).abs() < 1e-15));

    let peaked: Vec<Vec<f64>> = (0..h.len()).map(|i| softmax(&[i as f64 * 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])).collect();
    params.out2.weight.fill(0.0);
    let (_, refined) = params.refine_labels(&h, &peaked, &c).unwrap();
    assert!(refined.iter().flatten().all(|&v| (v - 1.0 / 7.0).abs() < 1e-15));
    assert!(params.first_stage_classify(&h, &c[1..]).is_err());
}

#[test]
fn evaluation_is_deterministic_and_batch_independent() {
    let corpus = tiny_corpus();
    let cfg = ModelConfig {
        dropout: 0.3,
        ..config(corpus.vocabulary().len(), 4)
    };
    let params = ModelParameters::init(&cfg, 12).unwrap();
    let p = &corpus.paragraphs()[0];
    let a = params.forward(p).unwrap();
    let b = params.forward(p).unwrap();
    assert_eq!(a.refined_probs, b.refined_probs);
    assert_eq!(a.first_probs, b.first_probs);

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let train = params.forward_with(p, None, Some(&mut rng)).unwrap();
    assert_ne!(train.refined_probs, a.refined_probs);
}

#[test]
fn clause_order_matters() {
    let corpus = tiny_corpus();
    let cfg = config(corpus.vocabulary().len(), 4);
    let params = ModelParameters::init(&cfg, 13).unwrap();
    let p = &corpus.paragraphs()[0];
    let mut clauses = p.clauses().to_vec();
    clauses.swap(0, 3);
    let swapped = Paragraph::new("s", clauses).unwrap();
    let a = params.forward(p).unwrap();
    let b = params.forward(&swapped).unwrap();
    assert_ne!(a.refined_probs.unwrap()[1], b.refined_probs.unwrap()[1]);
}

#[test]
fn random_forward_passes_give_distributions() {
    let corpus = tiny_corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for seed in 0..50 {
        let cfg = ModelConfig {
            hidden: rng.random_range(1..6),
            ..config(corpus.vocabulary().len(), 1)
        };
        let params = ModelParameters::init(&cfg, seed).unwrap();
        for p in corpus.paragraphs() {
            let t = params.forward(p).unwrap();
            for probs in t.first_probs.iter().chain(t.refined_probs.as_ref().unwrap()) {
                assert_eq!(probs.len(), 7);
                assert!(probs.iter().all(|&v| v >= 0.0));
                assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
}
