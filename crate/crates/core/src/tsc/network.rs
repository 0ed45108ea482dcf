//! Fully-convolutional time-series classifier.
//!
//! Three blocks of same-padded convolution, batch normalization and ReLU,
//! then global average pooling over time and a dense softmax head.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::autodiff::{softmax_rows, BatchStats, Gradients, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_len: usize,
    pub kernel_sizes: Vec<usize>,
    pub channels: Vec<usize>,
    pub classes: usize,
}

impl Architecture {
    pub fn standard(input_len: usize) -> Self {
        Architecture { input_len, kernel_sizes: vec![7, 5, 3], channels: vec![32, 64, 32], classes: 2 }
    }

    pub fn blocks(&self) -> usize {
        self.kernel_sizes.len()
    }
}

/// Convolution, batch normalization, ReLU. The convolution has no bias:
/// normalization would subtract it again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvBlock {
    /// `[out, in, kernel]`
    pub weight: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub architecture: Architecture,
    pub blocks: Vec<ConvBlock>,
    /// `[classes, channels]`
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

/// Leaf handles for one forward pass, in [`Network::params`] order.
pub struct ParamVars(Vec<Var>);

impl Network {
    pub fn init<R: Rng + ?Sized>(architecture: Architecture, rng: &mut R) -> Self {
        let mut blocks = Vec::with_capacity(architecture.blocks());
        let mut cin = 1;
        for (&k, &cout) in architecture.kernel_sizes.iter().zip(&architecture.channels) {
            let std = (2.0 / (cin * k) as f64).sqrt();
            let normal = Normal::new(0.0, std).unwrap();
            let w = (0..cout * cin * k).map(|_| normal.sample(rng)).collect();
            blocks.push(ConvBlock {
                weight: Tensor::new(vec![cout, cin, k], w),
                gamma: Tensor::filled(vec![cout], 1.0),
                beta: Tensor::zeros(vec![cout]),
                running_mean: vec![0.0; cout],
                running_var: vec![1.0; cout],
            });
            cin = cout;
        }
        let normal = Normal::new(0.0, (1.0 / cin as f64).sqrt()).unwrap();
        let classes = architecture.classes;
        let hw = (0..classes * cin).map(|_| normal.sample(rng)).collect();
        Network {
            architecture,
            blocks,
            head_weight: Tensor::new(vec![classes, cin], hw),
            head_bias: Tensor::zeros(vec![classes]),
        }
    }

    /// Trainable tensors in a fixed order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend([&b.weight, &b.gamma, &b.beta]);
        }
        out.extend([&self.head_weight, &self.head_bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend([&mut b.weight, &mut b.gamma, &mut b.beta]);
        }
        out.extend([&mut self.head_weight, &mut self.head_bias]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
            && self.blocks.iter().all(|b| b.running_mean.iter().chain(&b.running_var).all(|v| v.is_finite()))
    }

    fn input_tensor(&self, inputs: &[f64]) -> Tensor {
        let len = self.architecture.input_len;
        assert_eq!(inputs.len() % len, 0, "inputs must be whole series");
        Tensor::new(vec![1, inputs.len() / len, len], inputs.to_vec())
    }

    /// Training-mode forward pass. `inputs` holds whole series back to
    /// back. Returns the tape, the loss node, the parameter leaves and the
    /// per-block batch statistics.
    pub fn forward_loss(&self, inputs: &[f64], targets: &[usize]) -> (Tape, Var, ParamVars, Vec<BatchStats>) {
        let mut tape = Tape::new();
        let mut vars = Vec::new();
        let mut stats = Vec::new();
        let mut h = tape.leaf(self.input_tensor(inputs));
        for b in &self.blocks {
            let w = tape.leaf(b.weight.clone());
            let g = tape.leaf(b.gamma.clone());
            let beta = tape.leaf(b.beta.clone());
            vars.extend([w, g, beta]);
            let c = tape.conv1d(h, w, None);
            let (n, s) = tape.batch_norm(c, g, beta);
            stats.push(s);
            h = tape.relu(n);
        }
        let pooled = tape.mean_over_length(h);
        let hw = tape.leaf(self.head_weight.clone());
        let hb = tape.leaf(self.head_bias.clone());
        vars.extend([hw, hb]);
        let logits = tape.dense(pooled, hw, hb);
        let loss = tape.softmax_cross_entropy(logits, targets);
        (tape, loss, ParamVars(vars), stats)
    }

    /// Loss and parameter gradients (in [`Network::params`] order) on one
    /// batch, plus the batch statistics.
    pub fn loss_and_grads(&self, inputs: &[f64], targets: &[usize]) -> (f64, Vec<Vec<f64>>, Vec<BatchStats>) {
        let (tape, loss, vars, stats) = self.forward_loss(inputs, targets);
        let grads: Gradients = tape.backward(loss);
        let lens: Vec<usize> = self.params().iter().map(|t| t.len()).collect();
        let g = vars.0.iter().zip(lens).map(|(&v, n)| grads.of(v, n)).collect();
        (tape.value(loss).data[0], g, stats)
    }

    /// Training-mode loss only; used by gradient checks.
    pub fn loss(&self, inputs: &[f64], targets: &[usize]) -> f64 {
        let (tape, loss, _, _) = self.forward_loss(inputs, targets);
        tape.value(loss).data[0]
    }

    /// Fold batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[BatchStats], momentum: f64) {
        for (b, s) in self.blocks.iter_mut().zip(stats) {
            let unbias = if s.count > 1 { s.count as f64 / (s.count - 1) as f64 } else { 1.0 };
            for c in 0..s.mean.len() {
                b.running_mean[c] = (1.0 - momentum) * b.running_mean[c] + momentum * s.mean[c];
                b.running_var[c] = (1.0 - momentum) * b.running_var[c] + momentum * s.var[c] * unbias;
            }
        }
    }

    /// Inference-mode class probabilities, `[batch, classes]` row-major.
    pub fn predict(&self, inputs: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let mut h = tape.leaf(self.input_tensor(inputs));
        for b in &self.blocks {
            let w = tape.leaf(b.weight.clone());
            let c = tape.conv1d(h, w, None);
            let n = tape.batch_norm_fixed(c, &b.gamma.data, &b.beta.data, &b.running_mean, &b.running_var);
            h = tape.relu(n);
        }
        let pooled = tape.mean_over_length(h);
        let hw = tape.leaf(self.head_weight.clone());
        let hb = tape.leaf(self.head_bias.clone());
        let logits = tape.dense(pooled, hw, hb);
        softmax_rows(&tape.value(logits).data, self.architecture.classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn standard_layout() {
        let net = Network::init(Architecture::standard(25), &mut substream(1, 0));
        let shapes: Vec<Vec<usize>> = net.params().iter().map(|t| t.shape.clone()).collect();
        assert_eq!(shapes[0], vec![32, 1, 7]);
        assert_eq!(shapes[3], vec![64, 32, 5]);
        assert_eq!(shapes[6], vec![32, 64, 3]);
        assert_eq!(shapes[9], vec![2, 32]);
        assert_eq!(net.param_count(), 32 * 7 + 32 * 2 + 64 * 32 * 5 + 64 * 2 + 32 * 64 * 3 + 32 * 2 + 64 + 2);
    }

    #[test]
    fn predictions_are_distributions() {
        let net = Network::init(Architecture::standard(10), &mut substream(2, 0));
        let inputs: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let p = net.predict(&inputs);
        assert_eq!(p.len(), 6);
        for row in p.chunks(2) {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
