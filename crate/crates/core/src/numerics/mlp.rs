use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is linked
use num_traits::Float;

use crate::error::check_dim;
use crate::{Error, Result, Rng};

/// Multi-layer perceptron with `tanh` hidden units and a linear output.
///
/// Parameters are kept in one flat buffer so optimizers, Polyak averaging and
/// snapshots can treat every network alike. Layer `l` stores its weight matrix
/// row-major (`out x in`) followed by its bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer activations recorded by [`Mlp::forward_tape`], consumed by
/// [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    values: Vec<f64>,
    offsets: Vec<usize>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        let last = self.offsets.len() - 2;
        &self.values[self.offsets[last]..self.offsets[last + 1]]
    }

    pub fn input(&self) -> &[f64] {
        &self.values[self.offsets[0]..self.offsets[1]]
    }

    fn layer(&self, l: usize) -> &[f64] {
        &self.values[self.offsets[l]..self.offsets[l + 1]]
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Uniform `±1/sqrt(fan_in)` initialisation.
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for p in &mut net.params[offset..offset + w[0] * w[1] + w[1]] {
                *p = rng.uniform_range(-bound, bound);
            }
            offset += w[0] * w[1] + w[1];
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(alloc::format!(
                "layer sizes must hold at least two positive entries, got {sizes:?}"
            )));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        })
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        check_dim("mlp parameters", net.params.len(), params.len())?;
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_tape(input)?.output().to_vec())
    }

    pub fn forward_tape(&self, input: &[f64]) -> Result<Tape> {
        check_dim("mlp input", self.input_dim(), input.len())?;
        let total: usize = self.sizes.iter().sum();
        let mut values = Vec::with_capacity(total);
        let mut offsets = Vec::with_capacity(self.sizes.len() + 1);
        offsets.push(0);
        values.extend_from_slice(input);
        offsets.push(values.len());

        let n_layers = self.sizes.len() - 1;
        let mut p = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let x_start = offsets[l];
            let weights = &self.params[p..p + fan_in * fan_out];
            let bias = &self.params[p + fan_in * fan_out..p + fan_in * fan_out + fan_out];
            for o in 0..fan_out {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let x = &values[x_start..x_start + fan_in];
                let z = bias[o] + dot(row, x);
                values.push(if l + 1 < n_layers { z.tanh() } else { z });
            }
            offsets.push(values.len());
            p += fan_in * fan_out + fan_out;
        }
        Ok(Tape { values, offsets })
    }

    /// Accumulates into `param_grad` the gradient of a scalar loss whose
    /// derivative with respect to the network output is `output_grad`, and
    /// returns the derivative with respect to the input.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64], param_grad: &mut [f64]) -> Result<Vec<f64>> {
        check_dim("mlp output gradient", self.output_dim(), output_grad.len())?;
        check_dim("mlp parameter gradient", self.params.len(), param_grad.len())?;
        check_dim("mlp tape", self.sizes.len() + 1, tape.offsets.len())?;
        check_dim("mlp tape input", self.input_dim(), tape.input().len())?;

        let n_layers = self.sizes.len() - 1;
        let mut delta = output_grad.to_vec();
        let mut p_end = self.params.len();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < n_layers {
                for (d, h) in delta.iter_mut().zip(tape.layer(l + 1)) {
                    *d *= 1.0 - h * h;
                }
            }
            let p = p_end - (fan_in * fan_out + fan_out);
            let x = tape.layer(l);
            let weights = &self.params[p..p + fan_in * fan_out];
            let (w_grad, b_grad) = param_grad[p..p_end].split_at_mut(fan_in * fan_out);
            let mut next = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                b_grad[o] += d;
                if d == 0.0 {
                    continue;
                }
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let g_row = &mut w_grad[o * fan_in..(o + 1) * fan_in];
                for i in 0..fan_in {
                    g_row[i] += d * x[i];
                    next[i] += d * row[i];
                }
            }
            delta = next;
            p_end = p;
        }
        Ok(delta)
    }
}

/// Dot product with four running sums, which the compiler can vectorise.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
