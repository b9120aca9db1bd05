//! Independent reference computations for the integration tests. Nothing in
//! here calls into the code paths it is used to check.

#![allow(dead_code)]

use elemid::synthgen::GeneratorConfig;
use elemid::NUM_LABELS;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const STAGES: usize = 5;
const NONE: usize = 6;

/// Inverse-CDF draw from unnormalised weights.
fn draw(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap()
}

/// Stage by scanning bin edges with floating-point relative positions.
pub fn stage(i: usize, n: usize) -> usize {
    let r = i as f64 / n as f64;
    (1..=STAGES).find(|s| r <= *s as f64 / STAGES as f64 + 1e-12).unwrap()
}

/// Label-code sequences from a direct simulation of the configured chain.
pub fn simulate_chain(cfg: &GeneratorConfig, paragraphs: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (lo, hi) = cfg.paragraph_length;
    (0..paragraphs)
        .map(|_| {
            let n = lo + (rng.random::<f64>() * (hi - lo + 1) as f64) as usize;
            let mut seq: Vec<usize> = Vec::with_capacity(n);
            for i in 1..=n {
                let s = stage(i, n) - 1;
                let base = match seq.last() {
                    None => &cfg.label_priors,
                    Some(&p) => &cfg.transition[p],
                };
                let w: Vec<f64> = (0..NUM_LABELS).map(|k| base[k] * cfg.stage_affinity[k][s]).collect();
                seq.push(draw(&w, &mut rng));
            }
            seq
        })
        .collect()
}

pub fn label_proportions(seqs: &[Vec<usize>]) -> [f64; NUM_LABELS] {
    let mut c = [0.0; NUM_LABELS];
    let mut total = 0.0;
    for s in seqs {
        for &l in s {
            c[l] += 1.0;
            total += 1.0;
        }
    }
    c.map(|x| x / total)
}

/// `[label][stage]` proportions.
pub fn stage_distribution(seqs: &[Vec<usize>]) -> Vec<Vec<f64>> {
    let mut c = vec![vec![0.0; STAGES]; NUM_LABELS];
    for s in seqs {
        for (i, &l) in s.iter().enumerate() {
            c[l][stage(i + 1, s.len()) - 1] += 1.0;
        }
    }
    c.into_iter()
        .map(|row| {
            let t: f64 = row.iter().sum();
            row.into_iter().map(|x| if t > 0.0 { x / t } else { 0.0 }).collect()
        })
        .collect()
}

/// Column-conditional successional matrix over non-NONE labels.
pub fn successional_matrix(seqs: &[Vec<usize>]) -> Vec<Vec<f64>> {
    let mut c = vec![vec![0.0; NUM_LABELS - 1]; NUM_LABELS - 1];
    for s in seqs {
        let kept: Vec<usize> = s.iter().copied().filter(|&l| l != NONE).collect();
        for i in 1..kept.len() {
            c[kept[i - 1]][kept[i]] += 1.0;
        }
    }
    for cur in 0..NUM_LABELS - 1 {
        let t: f64 = (0..NUM_LABELS - 1).map(|p| c[p][cur]).sum();
        for row in c.iter_mut() {
            if t > 0.0 {
                row[cur] /= t;
            }
        }
    }
    c
}

/// Adjacent same-label proportion over all consecutive pairs.
pub fn self_pair_rate(seqs: &[Vec<usize>]) -> f64 {
    let (mut same, mut pairs) = (0.0, 0.0);
    for s in seqs {
        for w in s.windows(2) {
            pairs += 1.0;
            if w[0] == w[1] {
                same += 1.0;
            }
        }
    }
    same / pairs
}

/// Central finite difference of a scalar function.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, step: f64) -> f64 {
    (f(x + step) - f(x - step)) / (2.0 * step)
}
