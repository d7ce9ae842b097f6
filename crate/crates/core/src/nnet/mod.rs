//! Feed-forward LeakyReLU networks with a scalar linear output.
//!
//! All parameters of a network live in one flat vector. Layer `l` maps
//! `sizes[l]` inputs to `sizes[l + 1]` outputs; its weights are stored input
//! major (`w[i * outputs + j]` connects input `i` to output `j`) followed by
//! its biases. Inputs are standardized with per-feature shift/scale constants
//! and the raw output is mapped back to target units with an output
//! shift/scale, so the weights always work on unit-scale data.

mod adam;
mod io;
mod stats;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use stats::RunningStats;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_HUBER_DELTA: f64 = 1.0;

/// Huber loss of `prediction - target` and its derivative with respect to the
/// prediction. Quadratic inside `|e| <= delta`, linear outside.
pub fn huber_loss(prediction: f64, target: f64, delta: f64) -> (f64, f64) {
    let e = prediction - target;
    if e.abs() <= delta {
        (0.5 * e * e, e)
    } else {
        (delta * (e.abs() - 0.5 * delta), delta * e.signum())
    }
}

#[inline]
fn leaky(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        slope * z
    }
}

/// Multilayer perceptron with LeakyReLU hidden units and one linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNetwork {
    sizes: Vec<usize>,
    params: Vec<f64>,
    slope: f64,
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
    output_shift: f64,
    output_scale: f64,
}

impl MlpNetwork {
    /// Zero-initialized network with identity normalization.
    pub fn zeros(input: usize, hidden: &[usize]) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let count = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Self {
            sizes,
            params: vec![0.0; count],
            slope: DEFAULT_LEAKY_SLOPE,
            input_shift: vec![0.0; input],
            input_scale: vec![1.0; input],
            output_shift: 0.0,
            output_scale: 1.0,
        }
    }

    /// Uniform fan-in scaled initialization: hidden weights in
    /// `±sqrt(6 / fan_in)`, output weights in `±sqrt(1 / fan_in)`, zero biases.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(input, hidden);
        let layers = net.layer_count();
        for l in 0..layers {
            let fan_in = net.sizes[l] as f64;
            let bound = if l + 1 == layers { (1.0 / fan_in).sqrt() } else { (6.0 / fan_in).sqrt() };
            let (w, _) = net.layer_range(l);
            for p in &mut net.params[w] {
                *p = rng.random_range(-bound..bound);
            }
        }
        net
    }

    pub fn with_slope(mut self, slope: f64) -> Self {
        self.slope = slope;
        self
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Index ranges of the weights and biases of layer `l` in the flat vector.
    pub fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let offset: usize = self.sizes.windows(2).take(l).map(|w| w[0] * w[1] + w[1]).sum();
        let w_len = self.sizes[l] * self.sizes[l + 1];
        (offset..offset + w_len, offset + w_len..offset + w_len + self.sizes[l + 1])
    }

    pub fn input_normalization(&self) -> (&[f64], &[f64]) {
        (&self.input_shift, &self.input_scale)
    }

    pub fn output_normalization(&self) -> (f64, f64) {
        (self.output_shift, self.output_scale)
    }

    /// Sets `x_norm = (x - shift) / scale` per feature. Non-positive or
    /// non-finite scales are replaced by 1.
    pub fn set_input_normalization(&mut self, shift: &[f64], scale: &[f64]) -> Result<()> {
        self.check_len("input normalization", shift.len())?;
        self.check_len("input normalization", scale.len())?;
        self.input_shift = shift.to_vec();
        self.input_scale = scale.iter().map(|s| if s.is_finite() && *s > 0.0 { *s } else { 1.0 }).collect();
        Ok(())
    }

    /// Sets `y = shift + scale * raw_output`.
    pub fn set_output_normalization(&mut self, shift: f64, scale: f64) {
        self.output_shift = shift;
        self.output_scale = if scale.is_finite() && scale > 0.0 { scale } else { 1.0 };
    }

    fn check_len(&self, context: &'static str, actual: usize) -> Result<()> {
        if actual == self.input_dim() {
            Ok(())
        } else {
            Err(Error::Dimension {
                context,
                expected: self.input_dim(),
                actual,
            })
        }
    }

    fn max_width(&self) -> usize {
        *self.sizes.iter().max().expect("non-empty sizes")
    }

    /// Scalar output for one input vector.
    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        let mut out = [0.0];
        self.forward_batch(input, &mut out)?;
        Ok(out[0])
    }

    /// Evaluates `out.len()` inputs stored row-major in `inputs`.
    pub fn forward_batch(&self, inputs: &[f64], out: &mut [f64]) -> Result<()> {
        let n = out.len();
        let d = self.input_dim();
        if inputs.len() != n * d {
            return Err(Error::Dimension {
                context: "forward input",
                expected: n * d,
                actual: inputs.len(),
            });
        }
        let width = self.max_width();
        let mut cur = vec![0.0; n * width];
        let mut next = vec![0.0; n * width];
        for s in 0..n {
            for i in 0..d {
                cur[s * d + i] = (inputs[s * d + i] - self.input_shift[i]) / self.input_scale[i];
            }
        }
        let layers = self.layer_count();
        for l in 0..layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let (wr, br) = self.layer_range(l);
            let w = &self.params[wr];
            let b = &self.params[br];
            for s in 0..n {
                let row = &mut next[s * fan_out..(s + 1) * fan_out];
                row.copy_from_slice(b);
                for (i, a) in cur[s * fan_in..(s + 1) * fan_in].iter().enumerate() {
                    if *a != 0.0 {
                        for (r, wij) in row.iter_mut().zip(&w[i * fan_out..(i + 1) * fan_out]) {
                            *r += a * wij;
                        }
                    }
                }
                if l + 1 < layers {
                    for r in row.iter_mut() {
                        *r = leaky(*r, self.slope);
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        for (s, o) in out.iter_mut().enumerate() {
            *o = self.output_shift + self.output_scale * cur[s];
        }
        Ok(())
    }

    /// Mean Huber loss over a minibatch, measured on the standardized target
    /// `(target - output_shift) / output_scale` against the raw output.
    pub fn loss(&self, inputs: &[f64], targets: &[f64], delta: f64) -> Result<f64> {
        let mut pred = vec![0.0; targets.len()];
        self.forward_batch(inputs, &mut pred)?;
        let n = targets.len() as f64;
        Ok(pred
            .iter()
            .zip(targets)
            .map(|(p, t)| {
                huber_loss(
                    (p - self.output_shift) / self.output_scale,
                    (t - self.output_shift) / self.output_scale,
                    delta,
                )
                .0
            })
            .sum::<f64>()
            / n)
    }

    /// Reverse-mode gradient of [`MlpNetwork::loss`] with respect to every
    /// parameter. Returns `(mean loss, gradient)`.
    pub fn backward(&self, inputs: &[f64], targets: &[f64], delta: f64) -> Result<(f64, Vec<f64>)> {
        let n = targets.len();
        if n == 0 {
            return Err(Error::InvalidArgument("backward needs a non-empty minibatch".into()));
        }
        let d = self.input_dim();
        if inputs.len() != n * d {
            return Err(Error::Dimension {
                context: "backward input",
                expected: n * d,
                actual: inputs.len(),
            });
        }
        let layers = self.layer_count();
        let ranges: Vec<_> = (0..layers).map(|l| self.layer_range(l)).collect();
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;

        // Per-sample activations: acts[0] is the standardized input,
        // acts[l + 1] the post-activation output of layer l.
        let mut acts: Vec<Vec<f64>> = self.sizes.iter().map(|s| vec![0.0; *s]).collect();
        let mut pre: Vec<Vec<f64>> = self.sizes[1..].iter().map(|s| vec![0.0; *s]).collect();
        let width = self.max_width();
        let mut delta_cur = vec![0.0; width];
        let mut delta_prev = vec![0.0; width];
        let inv_n = 1.0 / n as f64;

        for s in 0..n {
            for i in 0..d {
                acts[0][i] = (inputs[s * d + i] - self.input_shift[i]) / self.input_scale[i];
            }
            for l in 0..layers {
                let fan_out = self.sizes[l + 1];
                let (wr, br) = (&ranges[l].0, &ranges[l].1);
                let w = &self.params[wr.clone()];
                let z = &mut pre[l];
                z.copy_from_slice(&self.params[br.clone()]);
                for (i, a) in acts[l].iter().enumerate() {
                    if *a != 0.0 {
                        for (zj, wij) in z.iter_mut().zip(&w[i * fan_out..(i + 1) * fan_out]) {
                            *zj += a * wij;
                        }
                    }
                }
                let out = &mut acts[l + 1];
                if l + 1 < layers {
                    for (o, zj) in out.iter_mut().zip(z.iter()) {
                        *o = leaky(*zj, self.slope);
                    }
                } else {
                    out.copy_from_slice(z);
                }
            }
            let raw = acts[layers][0];
            let target = (targets[s] - self.output_shift) / self.output_scale;
            let (loss, dl) = huber_loss(raw, target, delta);
            total += loss;

            delta_cur[0] = dl * inv_n;
            for l in (0..layers).rev() {
                let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
                let (wr, br) = (&ranges[l].0, &ranges[l].1);
                let dz = &delta_cur[..fan_out];
                for (gb, dj) in grad[br.clone()].iter_mut().zip(dz) {
                    *gb += dj;
                }
                let gw = &mut grad[wr.clone()];
                for (i, a) in acts[l].iter().enumerate() {
                    if *a != 0.0 {
                        for (g, dj) in gw[i * fan_out..(i + 1) * fan_out].iter_mut().zip(dz) {
                            *g += a * dj;
                        }
                    }
                }
                if l > 0 {
                    let w = &self.params[wr.clone()];
                    for i in 0..fan_in {
                        let back: f64 = w[i * fan_out..(i + 1) * fan_out].iter().zip(dz).map(|(a, b)| a * b).sum();
                        let slope = if pre[l - 1][i] > 0.0 { 1.0 } else { self.slope };
                        delta_prev[i] = back * slope;
                    }
                    std::mem::swap(&mut delta_cur, &mut delta_prev);
                }
            }
        }
        Ok((total * inv_n, grad))
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}
