//! A small reverse-mode differentiation tape over batched 1-D activations.
//!
//! Activations are stored channel-major, `[channels, batch, length]`, so
//! that per-channel reductions (batch normalization) and the convolution's
//! inner products run over contiguous memory. The tape records each
//! operation with whatever it needs for its vector-Jacobian product and
//! replays them in reverse in [`Tape::backward`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape {shape:?} does not match data");
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![value; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    /// Same-padded stride-1 convolution. `cols` is the im2col matrix
    /// `[cin * k, batch * len]` of the input.
    Conv1d { input: Var, weight: Var, bias: Option<Var>, cols: Vec<f64>, kernel: usize },
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Relu { input: Var },
    /// `[c, b, l] -> [c, b]`
    MeanOverLength { input: Var },
    /// `[c, b] -> [b, o]` with weight `[o, c]`.
    Dense { input: Var, weight: Var, bias: Var },
    /// Mean cross-entropy of softmax(logits `[b, o]`).
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Per-channel batch statistics from a training-mode normalization.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Values per channel the statistics were computed over.
    pub count: usize,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub const BN_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Var {
        let x = self.value(input);
        let w = self.value(weight);
        let (cin, batch, len) = (x.shape[0], x.shape[1], x.shape[2]);
        let (cout, wcin, kernel) = (w.shape[0], w.shape[1], w.shape[2]);
        assert_eq!(cin, wcin, "conv input channels");
        let cols = im2col(&x.data, cin, batch, len, kernel);
        let b = bias.map(|v| self.value(v).data.clone()).unwrap_or_else(|| vec![0.0; cout]);
        let out = conv_forward(&cols, &w.data, &b, cout, cin * kernel, batch * len);
        self.push(Tensor::new(vec![cout, batch, len], out), Op::Conv1d { input, weight, bias, cols, kernel })
    }

    /// Training-mode normalization over batch and length. Returns the
    /// output and the batch statistics used.
    pub fn batch_norm(&mut self, input: Var, gamma: Var, beta: Var) -> (Var, BatchStats) {
        let x = self.value(input);
        let channels = x.shape[0];
        let m = x.len() / channels;
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; channels];
        let mut mean = vec![0.0; channels];
        let mut var = vec![0.0; channels];
        for c in 0..channels {
            let row = &x.data[c * m..(c + 1) * m];
            let mu = row.iter().sum::<f64>() / m as f64;
            let v = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
            let is = 1.0 / (v + BN_EPS).sqrt();
            for j in 0..m {
                let h = (row[j] - mu) * is;
                xhat[c * m + j] = h;
                out[c * m + j] = g[c] * h + b[c];
            }
            mean[c] = mu;
            var[c] = v;
            inv_std[c] = is;
        }
        let shape = x.shape.clone();
        let v = self.push(Tensor::new(shape, out), Op::BatchNorm { input, gamma, beta, xhat, inv_std });
        (v, BatchStats { mean, var, count: m })
    }

    /// Inference-mode normalization with fixed statistics. Not
    /// differentiated; the result is recorded as a leaf.
    pub fn batch_norm_fixed(&mut self, input: Var, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64]) -> Var {
        let x = self.value(input);
        let channels = x.shape[0];
        let m = x.len() / channels;
        let mut out = x.data.clone();
        for c in 0..channels {
            let is = 1.0 / (var[c] + BN_EPS).sqrt();
            for v in &mut out[c * m..(c + 1) * m] {
                *v = gamma[c] * (*v - mean[c]) * is + beta[c];
            }
        }
        let shape = x.shape.clone();
        self.leaf(Tensor::new(shape, out))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = Tensor::new(x.shape.clone(), x.data.iter().map(|&v| v.max(0.0)).collect());
        self.push(out, Op::Relu { input })
    }

    pub fn mean_over_length(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let (c, b, l) = (x.shape[0], x.shape[1], x.shape[2]);
        let out: Vec<f64> = x.data.chunks(l).map(|row| row.iter().sum::<f64>() / l as f64).collect();
        self.push(Tensor::new(vec![c, b], out), Op::MeanOverLength { input })
    }

    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Var {
        let x = self.value(input);
        let w = self.value(weight);
        let bias_v = &self.value(bias).data;
        let (c, b) = (x.shape[0], x.shape[1]);
        let o = w.shape[0];
        assert_eq!(w.shape[1], c, "dense input width");
        let mut out = vec![0.0; b * o];
        for s in 0..b {
            for k in 0..o {
                let mut acc = bias_v[k];
                for ch in 0..c {
                    acc += w.data[k * c + ch] * x.data[ch * b + s];
                }
                out[s * o + k] = acc;
            }
        }
        self.push(Tensor::new(vec![b, o], out), Op::Dense { input, weight, bias })
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let z = self.value(logits);
        let (b, o) = (z.shape[0], z.shape[1]);
        assert_eq!(targets.len(), b);
        let probs = softmax_rows(&z.data, o);
        let loss = targets.iter().enumerate().map(|(s, &t)| -probs[s * o + t].max(f64::MIN_POSITIVE).ln()).sum::<f64>()
            / b as f64;
        self.push(Tensor::new(vec![1], vec![loss]), Op::SoftmaxCrossEntropy { logits, targets: targets.to_vec(), probs })
    }

    /// Gradients of scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![1.0; self.nodes[output.0].value.len()]);
        for i in (0..=output.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(dy);
                    continue;
                }
                Op::Conv1d { input, weight, bias, cols, kernel } => {
                    let x = self.value(*input);
                    let w = self.value(*weight);
                    let (cin, batch, len) = (x.shape[0], x.shape[1], x.shape[2]);
                    let cout = w.shape[0];
                    let rows = cin * kernel;
                    let n = batch * len;
                    let dw: Vec<f64> = dy
                        .par_chunks(n)
                        .flat_map_iter(|drow| cols.chunks(n).map(move |crow| dot(drow, crow)))
                        .collect();
                    let db: Vec<f64> = dy.chunks(n).map(|r| r.iter().sum()).collect();
                    let mut dcols = vec![0.0; rows * n];
                    dcols.par_chunks_mut(n).enumerate().for_each(|(r, out)| {
                        for co in 0..cout {
                            axpy(w.data[co * rows + r], &dy[co * n..(co + 1) * n], out);
                        }
                    });
                    let dx = col2im(&dcols, cin, batch, len, *kernel);
                    accumulate(&mut grads, *input, dx);
                    accumulate(&mut grads, *weight, dw);
                    if let Some(bias) = bias {
                        accumulate(&mut grads, *bias, db);
                    }
                }
                Op::BatchNorm { input, gamma, beta, xhat, inv_std } => {
                    let channels = inv_std.len();
                    let m = dy.len() / channels;
                    let g = &self.value(*gamma).data;
                    let mut dx = vec![0.0; dy.len()];
                    let mut dg = vec![0.0; channels];
                    let mut db = vec![0.0; channels];
                    for c in 0..channels {
                        let r = c * m..(c + 1) * m;
                        let (dyr, xh) = (&dy[r.clone()], &xhat[r.clone()]);
                        let sum_dy: f64 = dyr.iter().sum();
                        let sum_dy_xh = dot(dyr, xh);
                        dg[c] = sum_dy_xh;
                        db[c] = sum_dy;
                        let scale = g[c] * inv_std[c] / m as f64;
                        for (j, out) in dx[r].iter_mut().enumerate() {
                            *out = scale * (m as f64 * dyr[j] - sum_dy - xh[j] * sum_dy_xh);
                        }
                    }
                    accumulate(&mut grads, *input, dx);
                    accumulate(&mut grads, *gamma, dg);
                    accumulate(&mut grads, *beta, db);
                }
                Op::Relu { input } => {
                    let x = &self.value(*input).data;
                    let dx = dy.iter().zip(x).map(|(&d, &v)| if v > 0.0 { d } else { 0.0 }).collect();
                    accumulate(&mut grads, *input, dx);
                }
                Op::MeanOverLength { input } => {
                    let l = self.value(*input).shape[2];
                    let dx = dy.iter().flat_map(|&d| std::iter::repeat_n(d / l as f64, l)).collect();
                    accumulate(&mut grads, *input, dx);
                }
                Op::Dense { input, weight, bias } => {
                    let x = self.value(*input);
                    let w = self.value(*weight);
                    let (c, b) = (x.shape[0], x.shape[1]);
                    let o = w.shape[0];
                    let mut dx = vec![0.0; c * b];
                    let mut dw = vec![0.0; o * c];
                    let mut db = vec![0.0; o];
                    for s in 0..b {
                        for k in 0..o {
                            let d = dy[s * o + k];
                            db[k] += d;
                            for ch in 0..c {
                                dw[k * c + ch] += d * x.data[ch * b + s];
                                dx[ch * b + s] += d * w.data[k * c + ch];
                            }
                        }
                    }
                    accumulate(&mut grads, *input, dx);
                    accumulate(&mut grads, *weight, dw);
                    accumulate(&mut grads, *bias, db);
                }
                Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                    let b = targets.len();
                    let o = probs.len() / b;
                    let scale = dy[0] / b as f64;
                    let mut dz: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (s, &t) in targets.iter().enumerate() {
                        dz[s * o + t] -= scale;
                    }
                    accumulate(&mut grads, *logits, dz);
                }
            }
        }
        Gradients { grads }
    }
}

pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to a leaf, zero-filled if it did not influence
    /// the output.
    pub fn of(&self, v: Var, len: usize) -> Vec<f64> {
        self.grads[v.0].clone().unwrap_or_else(|| vec![0.0; len])
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators keep the loop vectorizable without reassociation
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for j in 0..4 {
            acc[j] += a[4 * i + j] * b[4 * i + j];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Rows `ci * k + tap`, columns `b * len + t`; entry is
/// `x[ci, b, t + tap - k/2]` or 0 outside the sequence.
fn im2col(x: &[f64], cin: usize, batch: usize, len: usize, kernel: usize) -> Vec<f64> {
    let pad = (kernel / 2) as isize;
    let n = batch * len;
    let mut cols = vec![0.0; cin * kernel * n];
    for ci in 0..cin {
        for tap in 0..kernel {
            let off = tap as isize - pad;
            let row = &mut cols[(ci * kernel + tap) * n..(ci * kernel + tap + 1) * n];
            for b in 0..batch {
                let src = &x[(ci * batch + b) * len..(ci * batch + b + 1) * len];
                let dst = &mut row[b * len..(b + 1) * len];
                let lo = (-off).max(0) as usize;
                let hi = (len as isize - off).min(len as isize).max(0) as usize;
                for t in lo..hi {
                    dst[t] = src[(t as isize + off) as usize];
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], cin: usize, batch: usize, len: usize, kernel: usize) -> Vec<f64> {
    let pad = (kernel / 2) as isize;
    let n = batch * len;
    let mut x = vec![0.0; cin * n];
    for ci in 0..cin {
        for tap in 0..kernel {
            let off = tap as isize - pad;
            let row = &cols[(ci * kernel + tap) * n..(ci * kernel + tap + 1) * n];
            for b in 0..batch {
                let src = &row[b * len..(b + 1) * len];
                let dst = &mut x[(ci * batch + b) * len..(ci * batch + b + 1) * len];
                let lo = (-off).max(0) as usize;
                let hi = (len as isize - off).min(len as isize).max(0) as usize;
                for t in lo..hi {
                    dst[(t as isize + off) as usize] += src[t];
                }
            }
        }
    }
    x
}

fn conv_forward(cols: &[f64], w: &[f64], bias: &[f64], cout: usize, rows: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; cout * n];
    out.par_chunks_mut(n).enumerate().for_each(|(co, orow)| {
        orow.fill(bias[co]);
        for r in 0..rows {
            axpy(w[co * rows + r], &cols[r * n..(r + 1) * n], orow);
        }
    });
    out
}

pub fn softmax_rows(z: &[f64], width: usize) -> Vec<f64> {
    let mut p = vec![0.0; z.len()];
    for (zr, pr) in z.chunks(width).zip(p.chunks_mut(width)) {
        let max = zr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (pi, &zi) in pr.iter_mut().zip(zr) {
            *pi = (zi - max).exp();
            sum += *pi;
        }
        pr.iter_mut().for_each(|pi| *pi /= sum);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
        let h = 1e-6;
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        a[i] += h;
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    }

    #[test]
    fn conv_matches_direct_sum() {
        // cin 2, batch 2, len 5, cout 1, k 3
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..6).map(|i| 0.1 * i as f64 - 0.2).collect();
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::new(vec![2, 2, 5], x.clone()));
        let wv = tape.leaf(Tensor::new(vec![1, 2, 3], w.clone()));
        let bv = tape.leaf(Tensor::new(vec![1], vec![0.5]));
        let y = tape.conv1d(xv, wv, Some(bv));
        let out = &tape.value(y).data;
        for b in 0..2 {
            for t in 0..5 {
                let mut acc = 0.5;
                for ci in 0..2 {
                    for k in 0..3 {
                        let src = t as isize + k as isize - 1;
                        if (0..5).contains(&src) {
                            acc += w[ci * 3 + k] * x[(ci * 2 + b) * 5 + src as usize];
                        }
                    }
                }
                assert!((out[b * 5 + t] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn small_graph_gradients_match_differences() {
        let x: Vec<f64> = (0..24).map(|i| ((i * 7 % 11) as f64 / 5.0) - 1.0).collect();
        let build = |xs: &[f64], params: &[f64]| -> (Tape, Var, Var, Var) {
            let mut tape = Tape::new();
            let xv = tape.leaf(Tensor::new(vec![1, 3, 8], xs.to_vec()));
            let wv = tape.leaf(Tensor::new(vec![2, 1, 3], params[..6].to_vec()));
            let bv = tape.leaf(Tensor::new(vec![2], params[6..8].to_vec()));
            let c = tape.conv1d(xv, wv, Some(bv));
            let g = tape.leaf(Tensor::new(vec![2], params[8..10].to_vec()));
            let be = tape.leaf(Tensor::new(vec![2], params[10..12].to_vec()));
            let (n, _) = tape.batch_norm(c, g, be);
            let r = tape.relu(n);
            let p = tape.mean_over_length(r);
            let dw = tape.leaf(Tensor::new(vec![2, 2], params[12..16].to_vec()));
            let db = tape.leaf(Tensor::new(vec![2], params[16..18].to_vec()));
            let z = tape.dense(p, dw, db);
            let loss = tape.softmax_cross_entropy(z, &[0, 1, 1]);
            (tape, loss, wv, xv)
        };
        let params: Vec<f64> =
            vec![0.3, -0.2, 0.5, 0.1, 0.4, -0.6, 0.05, -0.1, 1.2, 0.8, 0.1, -0.2, 0.7, -0.3, 0.2, 0.9, 0.0, 0.1];
        let (tape, loss, wv, xv) = build(&x, &params);
        let grads = tape.backward(loss);
        let gw = grads.of(wv, 6);
        let gx = grads.of(xv, 24);
        for i in 0..6 {
            let num = numeric_grad(|p| { let (t, l, _, _) = build(&x, p); t.value(l).data[0] }, &params, i);
            assert!((num - gw[i]).abs() < 1e-7, "w{i}: {num} vs {}", gw[i]);
        }
        for i in [0, 5, 11, 23] {
            let num = numeric_grad(|xs| { let (t, l, _, _) = build(xs, &params); t.value(l).data[0] }, &x, i);
            assert!((num - gx[i]).abs() < 1e-7, "x{i}: {num} vs {}", gx[i]);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_rows(&[1.0, 2.0, 1000.0, -1000.0], 2);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-15);
        assert_eq!(p[2], 1.0);
    }
}
