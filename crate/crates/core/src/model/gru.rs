//! Gated recurrent units with an explicit backward pass.
//!
//! ```text
//! z_t = σ(W_z x_t + U_z h_{t-1} + b_z)
//! r_t = σ(W_r x_t + U_r h_{t-1} + b_r)
//! ĥ_t = tanh(W_h x_t + U_h (r_t ⊙ h_{t-1}) + b_h)
//! h_t = (1 - z_t) ⊙ h_{t-1} + z_t ⊙ ĥ_t
//! ```

use rand::Rng;

use super::tensor::{sigmoid, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

/// Intermediate values of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    candidate: Vec<f64>,
    gated_prev: Vec<f64>,
}

impl GruCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruCell {
            w_z: Tensor::zeros(hidden, input),
            w_r: Tensor::zeros(hidden, input),
            w_h: Tensor::zeros(hidden, input),
            u_z: Tensor::zeros(hidden, hidden),
            u_r: Tensor::zeros(hidden, hidden),
            u_h: Tensor::zeros(hidden, hidden),
            b_z: Tensor::vector(hidden),
            b_r: Tensor::vector(hidden),
            b_h: Tensor::vector(hidden),
        }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let kx = 1.0 / (input as f64).sqrt();
        let kh = 1.0 / (hidden as f64).sqrt();
        GruCell {
            w_z: Tensor::uniform(hidden, input, kx, rng),
            w_r: Tensor::uniform(hidden, input, kx, rng),
            w_h: Tensor::uniform(hidden, input, kx, rng),
            u_z: Tensor::uniform(hidden, hidden, kh, rng),
            u_r: Tensor::uniform(hidden, hidden, kh, rng),
            u_h: Tensor::uniform(hidden, hidden, kh, rng),
            b_z: Tensor::vector(hidden),
            b_r: Tensor::vector(hidden),
            b_h: Tensor::vector(hidden),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_z.cols()
    }

    pub fn hidden_size(&self) -> usize {
        self.u_z.rows()
    }

    pub fn named(&self) -> [(&'static str, &Tensor); 9] {
        [
            ("w_z", &self.w_z),
            ("w_r", &self.w_r),
            ("w_h", &self.w_h),
            ("u_z", &self.u_z),
            ("u_r", &self.u_r),
            ("u_h", &self.u_h),
            ("b_z", &self.b_z),
            ("b_r", &self.b_r),
            ("b_h", &self.b_h),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Tensor); 9] {
        [
            ("w_z", &mut self.w_z),
            ("w_r", &mut self.w_r),
            ("w_h", &mut self.w_h),
            ("u_z", &mut self.u_z),
            ("u_r", &mut self.u_r),
            ("u_h", &mut self.u_h),
            ("b_z", &mut self.b_z),
            ("b_r", &mut self.b_r),
            ("b_h", &mut self.b_h),
        ]
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64]) -> (Vec<f64>, StepCache) {
        let hidden = self.hidden_size();
        let mut z = self.b_z.data().to_vec();
        self.w_z.matvec_acc(x, &mut z);
        self.u_z.matvec_acc(h_prev, &mut z);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));

        let mut r = self.b_r.data().to_vec();
        self.w_r.matvec_acc(x, &mut r);
        self.u_r.matvec_acc(h_prev, &mut r);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));

        let gated_prev: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let mut candidate = self.b_h.data().to_vec();
        self.w_h.matvec_acc(x, &mut candidate);
        self.u_h.matvec_acc(&gated_prev, &mut candidate);
        candidate.iter_mut().for_each(|v| *v = v.tanh());

        let h: Vec<f64> = (0..hidden)
            .map(|j| (1.0 - z[j]) * h_prev[j] + z[j] * candidate[j])
            .collect();
        let cache = StepCache {
            h_prev: h_prev.to_vec(),
            z,
            r,
            candidate,
            gated_prev,
        };
        (h, cache)
    }

    /// Run over `xs` from a zero state, left to right or right to left.
    /// Outputs and caches are indexed by sequence position either way.
    pub fn run(&self, xs: &[Vec<f64>], reverse: bool) -> (Vec<Vec<f64>>, Vec<StepCache>) {
        let n = xs.len();
        let mut outputs = vec![Vec::new(); n];
        let mut caches: Vec<Option<StepCache>> = vec![None; n];
        let mut h = vec![0.0; self.hidden_size()];
        for step in 0..n {
            let t = if reverse { n - 1 - step } else { step };
            let (next, cache) = self.step(&xs[t], &h);
            outputs[t] = next.clone();
            caches[t] = Some(cache);
            h = next;
        }
        (outputs, caches.into_iter().map(Option::unwrap).collect())
    }

    /// Backpropagate through a [`run`](Self::run). `d_outputs[t]` is the loss
    /// gradient w.r.t. the output at position `t`; parameter gradients are
    /// accumulated into `grads` and input gradients returned by position.
    pub fn backward(
        &self,
        xs: &[Vec<f64>],
        caches: &[StepCache],
        d_outputs: &[Vec<f64>],
        reverse: bool,
        grads: &mut GruCell,
    ) -> Vec<Vec<f64>> {
        let n = xs.len();
        let hidden = self.hidden_size();
        let mut d_xs = vec![vec![0.0; self.input_size()]; n];
        let mut carry = vec![0.0; hidden];
        for step in (0..n).rev() {
            let t = if reverse { n - 1 - step } else { step };
            let c = &caches[t];
            let x = &xs[t];
            let dh: Vec<f64> = carry.iter().zip(&d_outputs[t]).map(|(a, b)| a + b).collect();

            let mut dh_prev: Vec<f64> = (0..hidden).map(|j| dh[j] * (1.0 - c.z[j])).collect();
            let da_h: Vec<f64> = (0..hidden)
                .map(|j| dh[j] * c.z[j] * (1.0 - c.candidate[j] * c.candidate[j]))
                .collect();
            let da_z: Vec<f64> = (0..hidden)
                .map(|j| dh[j] * (c.candidate[j] - c.h_prev[j]) * c.z[j] * (1.0 - c.z[j]))
                .collect();

            let mut d_gated = vec![0.0; hidden];
            self.u_h.matvec_t_acc(&da_h, &mut d_gated);
            let da_r: Vec<f64> = (0..hidden)
                .map(|j| d_gated[j] * c.h_prev[j] * c.r[j] * (1.0 - c.r[j]))
                .collect();
            for j in 0..hidden {
                dh_prev[j] += d_gated[j] * c.r[j];
            }

            grads.w_h.outer_acc(&da_h, x);
            grads.u_h.outer_acc(&da_h, &c.gated_prev);
            grads.w_z.outer_acc(&da_z, x);
            grads.u_z.outer_acc(&da_z, &c.h_prev);
            grads.w_r.outer_acc(&da_r, x);
            grads.u_r.outer_acc(&da_r, &c.h_prev);
            for (b, d) in [(&mut grads.b_h, &da_h), (&mut grads.b_z, &da_z), (&mut grads.b_r, &da_r)] {
                b.data_mut().iter_mut().zip(d).for_each(|(g, v)| *g += v);
            }

            self.u_z.matvec_t_acc(&da_z, &mut dh_prev);
            self.u_r.matvec_t_acc(&da_r, &mut dh_prev);
            let dx = &mut d_xs[t];
            self.w_h.matvec_t_acc(&da_h, dx);
            self.w_z.matvec_t_acc(&da_z, dx);
            self.w_r.matvec_t_acc(&da_r, dx);

            carry = dh_prev;
        }
        d_xs
    }
}

/// Forward and backward cells whose outputs are concatenated per position.
#[derive(Debug, Clone, PartialEq)]
pub struct BiGru {
    pub fwd: GruCell,
    pub bwd: GruCell,
}

#[derive(Debug, Clone)]
pub struct BiGruTrace {
    /// `[forward_t; backward_t]` at every position.
    pub outputs: Vec<Vec<f64>>,
    fwd_states: Vec<Vec<f64>>,
    bwd_states: Vec<Vec<f64>>,
    fwd_caches: Vec<StepCache>,
    bwd_caches: Vec<StepCache>,
}

impl BiGruTrace {
    /// Final forward state (last position) joined with the final backward
    /// state (first position).
    pub fn final_states(&self) -> Vec<f64> {
        let mut out = self.fwd_states.last().expect("non-empty sequence").clone();
        out.extend_from_slice(&self.bwd_states[0]);
        out
    }
}

impl BiGru {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        BiGru {
            fwd: GruCell::zeros(input, hidden),
            bwd: GruCell::zeros(input, hidden),
        }
    }

    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let fwd = GruCell::init(input, hidden, rng);
        let bwd = GruCell::init(input, hidden, rng);
        BiGru { fwd, bwd }
    }

    pub fn hidden_size(&self) -> usize {
        self.fwd.hidden_size()
    }

    pub fn input_size(&self) -> usize {
        self.fwd.input_size()
    }

    pub fn forward(&self, xs: &[Vec<f64>]) -> BiGruTrace {
        let (fwd_states, fwd_caches) = self.fwd.run(xs, false);
        let (bwd_states, bwd_caches) = self.bwd.run(xs, true);
        let outputs = fwd_states
            .iter()
            .zip(&bwd_states)
            .map(|(f, b)| super::tensor::concat(f, b))
            .collect();
        BiGruTrace {
            outputs,
            fwd_states,
            bwd_states,
            fwd_caches,
            bwd_caches,
        }
    }

    /// `d_outputs[t]` has length `2 * hidden`, split between the two cells.
    pub fn backward(
        &self,
        xs: &[Vec<f64>],
        trace: &BiGruTrace,
        d_outputs: &[Vec<f64>],
        grads: &mut BiGru,
    ) -> Vec<Vec<f64>> {
        let hidden = self.hidden_size();
        let (d_fwd, d_bwd): (Vec<Vec<f64>>, Vec<Vec<f64>>) = d_outputs
            .iter()
            .map(|d| (d[..hidden].to_vec(), d[hidden..].to_vec()))
            .unzip();
        let mut d_xs = self.fwd.backward(xs, &trace.fwd_caches, &d_fwd, false, &mut grads.fwd);
        let d_back = self.bwd.backward(xs, &trace.bwd_caches, &d_bwd, true, &mut grads.bwd);
        for (a, b) in d_xs.iter_mut().zip(d_back) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        d_xs
    }

    /// Backward pass when only [`BiGruTrace::final_states`] was consumed.
    pub fn backward_final(
        &self,
        xs: &[Vec<f64>],
        trace: &BiGruTrace,
        d_final: &[f64],
        grads: &mut BiGru,
    ) -> Vec<Vec<f64>> {
        let hidden = self.hidden_size();
        let n = xs.len();
        let mut d_outputs = vec![vec![0.0; 2 * hidden]; n];
        d_outputs[n - 1][..hidden].copy_from_slice(&d_final[..hidden]);
        d_outputs[0][hidden..].copy_from_slice(&d_final[hidden..]);
        self.backward(xs, trace, &d_outputs, grads)
    }
}
