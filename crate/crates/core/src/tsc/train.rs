use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DRIFT, SELECTION};
use super::network::{Architecture, Network};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, substream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
    pub bn_momentum: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 1e-3,
            epochs: 12,
            batch_size: 64,
            seed: 7,
            validation_fraction: 0.2,
            lr_decay: 0.85,
            bn_momentum: 0.1,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation fraction must lie in (0, 1)".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr decay must lie in (0, 1]".into()));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::Config("batch-norm momentum must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Weights from the epoch with the best validation accuracy.
    pub network: Network,
    pub best_epoch: usize,
    pub validation_accuracy: f64,
    pub history: Vec<EpochStats>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &Network) -> Self {
        let zeros: Vec<Vec<f64>> = net.params().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam { m: zeros.clone(), v: zeros, step: 0 }
    }

    fn update(&mut self, net: &mut Network, grads: &[Vec<f64>], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for (((p, g), m), v) in net.params_mut().into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..g.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                p.data[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Stratified split: the first `fraction` of each class (after a seeded
/// shuffle) goes to validation.
fn stratified_split(labels: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = substream(seed, 0);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [DRIFT, SELECTION] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_val = ((idx.len() as f64) * fraction).round() as usize;
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    val.sort_unstable();
    (train, val)
}

fn gather(data: &Dataset, idx: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let mut x = Vec::with_capacity(idx.len() * data.series_len);
    let mut y = Vec::with_capacity(idx.len());
    for &i in idx {
        x.extend_from_slice(data.series(i));
        y.push(data.labels[i]);
    }
    (x, y)
}

/// Selection-class probabilities for every sample of `data`.
pub fn predict_dataset(net: &Network, data: &Dataset) -> Vec<f64> {
    predict_indices(net, data, &(0..data.len()).collect::<Vec<_>>())
}

fn predict_indices(net: &Network, data: &Dataset, idx: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(512) {
        let (x, _) = gather(data, chunk);
        out.extend(net.predict(&x).chunks(2).map(|p| p[SELECTION]));
    }
    out
}

/// Fraction of samples whose selection probability falls on the side of
/// 0.5 matching their label.
pub fn accuracy(net: &Network, data: &Dataset) -> f64 {
    accuracy_on(net, data, &(0..data.len()).collect::<Vec<_>>())
}

fn accuracy_on(net: &Network, data: &Dataset, idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    let probs = predict_indices(net, data, idx);
    let correct = idx.iter().zip(&probs).filter(|(&i, &p)| (p > 0.5) == (data.labels[i] == SELECTION)).count();
    correct as f64 / idx.len() as f64
}

pub fn train(data: &Dataset, hyper: &Hyperparams) -> Result<TrainOutcome> {
    hyper.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let n_sel = data.labels.iter().filter(|&&l| l == SELECTION).count();
    if n_sel * 2 != data.len() {
        return Err(Error::Config(format!("training set is unbalanced: {n_sel} of {} are selection", data.len())));
    }
    let (mut train_idx, val_idx) = stratified_split(&data.labels, hyper.validation_fraction, derive_seed(hyper.seed, 1));
    if train_idx.len() < 2 || val_idx.is_empty() {
        return Err(Error::Config("training set too small to split".into()));
    }
    let mut net = Network::init(Architecture::standard(data.series_len), &mut substream(derive_seed(hyper.seed, 2), 0));
    let mut adam = Adam::new(&net);
    let mut best: Option<(f64, usize, Network)> = None;
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut lr = hyper.learning_rate;
    let shuffle_seed = derive_seed(hyper.seed, 3);

    for epoch in 0..hyper.epochs {
        train_idx.shuffle(&mut substream(shuffle_seed, epoch as u64));
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in train_idx.chunks(hyper.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let (x, y) = gather(data, chunk);
            let (loss, grads, stats) = net.loss_and_grads(&x, &y);
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            adam.update(&mut net, &grads, lr);
            net.update_running_stats(&stats, hyper.bn_momentum);
            loss_sum += loss;
            batches += 1;
        }
        if !net.is_finite() {
            return Err(Error::Divergence { epoch, batch: batches, loss: f64::NAN });
        }
        let val_acc = accuracy_on(&net, data, &val_idx);
        history.push(EpochStats { epoch, train_loss: loss_sum / batches.max(1) as f64, validation_accuracy: val_acc });
        if best.as_ref().is_none_or(|(acc, _, _)| val_acc > *acc) {
            best = Some((val_acc, epoch, net.clone()));
        }
        lr *= hyper.lr_decay;
    }
    let (validation_accuracy, best_epoch, network) = best.expect("at least one epoch");
    Ok(TrainOutcome { network, best_epoch, validation_accuracy, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tsc::dataset::SampleMeta;

    fn toy(n_per_class: usize, len: usize) -> Dataset {
        let mut d = Dataset { series_len: len, inputs: Vec::new(), labels: Vec::new(), meta: Vec::new(), redraws: 0 };
        let meta = SampleMeta { population_size: 100, selection_coeff: 0.0, generations: 10, initial_freq: 0.5 };
        for i in 0..2 * n_per_class {
            let label = i % 2;
            d.inputs.extend(std::iter::repeat_n(label as f64, len));
            d.labels.push(label);
            d.meta.push(meta);
        }
        d
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let data = toy(40, 8);
        let hyper = Hyperparams { epochs: 50, batch_size: 16, lr_decay: 1.0, ..Hyperparams::default() };
        let out = train(&data, &hyper).unwrap();
        assert_eq!(out.validation_accuracy, 1.0);
        assert!(out.network.is_finite());
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy(10, 8);
        let hyper = Hyperparams { epochs: 2, batch_size: 8, ..Hyperparams::default() };
        let a = train(&data, &hyper).unwrap();
        let b = train(&data, &hyper).unwrap();
        assert_eq!(a.network, b.network);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn huge_learning_rate_diverges_or_survives_without_nan() {
        let data = toy(10, 8);
        let hyper = Hyperparams { epochs: 3, learning_rate: 1e300, ..Hyperparams::default() };
        match train(&data, &hyper) {
            Ok(out) => assert!(out.network.is_finite()),
            Err(e) => assert!(matches!(e, Error::Divergence { .. })),
        }
    }

    #[test]
    fn invalid_hyperparams() {
        let data = toy(10, 8);
        assert!(train(&data, &Hyperparams { learning_rate: 0.0, ..Hyperparams::default() }).is_err());
        assert!(train(&data, &Hyperparams { epochs: 0, ..Hyperparams::default() }).is_err());
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let (train, val) = stratified_split(&labels, 0.2, 3);
        assert_eq!(val.len(), 20);
        assert_eq!(val.iter().filter(|&&i| labels[i] == 1).count(), 10);
        assert_eq!(train.len() + val.len(), 100);
    }
}
