//! Neural time-series classification of drift versus selection.
//!
//! A small convolutional network is trained on Wright-Fisher simulations
//! with and without selection, then applied to corpus series after they are
//! resampled to the network's fixed input length. A series is called
//! selection when the network's selection probability exceeds 0.5.

pub mod autodiff;
pub mod dataset;
pub mod network;
pub mod train;

use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binning::BinnedSeries;
use crate::error::{Error, Result};

pub use dataset::{generate_dataset, resample_series, resample_to_length, Dataset, SampleMeta, TrainingConfig, DRIFT, SELECTION};
pub use network::{Architecture, Network};
pub use train::{accuracy, predict_dataset, train, EpochStats, Hyperparams, TrainOutcome};

pub const MODEL_MAGIC: &str = "DRIFTSEL-TSC";
pub const MODEL_VERSION: u32 = 1;
pub const CLASSIFICATION_HEADER: &str = "verb\tgroup\tprobability\tverdict";
/// Probability above which a series is called selection.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// Inputs are resampled to this many equispaced points.
    pub series_len: usize,
    /// Values are used as raw frequencies, clamped to this interval.
    pub clamp: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub config: TrainingConfig,
    pub hyperparams: Hyperparams,
    pub config_hash: String,
    pub epochs: usize,
    pub best_epoch: usize,
    pub validation_accuracy: f64,
    pub history: Vec<EpochStats>,
    pub redraws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TscModel {
    pub normalization: Normalization,
    pub network: Network,
    pub metadata: TrainingMetadata,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_hash(config: &TrainingConfig, hyper: &Hyperparams) -> String {
    let json = serde_json::to_string(&(config, hyper)).expect("configs serialize");
    sha256_hex(json.as_bytes())
}

impl TscModel {
    pub fn architecture(&self) -> &Architecture {
        &self.network.architecture
    }

    /// Simulate a training set from `config` and fit a network to it.
    pub fn train_from_config(config: &TrainingConfig, hyper: &Hyperparams) -> Result<Self> {
        let data = generate_dataset(config)?;
        let outcome = train(&data, hyper)?;
        Ok(Self::from_outcome(config, hyper, outcome, data.redraws))
    }

    pub fn from_outcome(config: &TrainingConfig, hyper: &Hyperparams, outcome: TrainOutcome, redraws: usize) -> Self {
        TscModel {
            normalization: Normalization { series_len: config.series_len, clamp: (0.0, 1.0) },
            metadata: TrainingMetadata {
                config: config.clone(),
                hyperparams: hyper.clone(),
                config_hash: config_hash(config, hyper),
                epochs: outcome.history.len(),
                best_epoch: outcome.best_epoch,
                validation_accuracy: outcome.validation_accuracy,
                history: outcome.history,
                redraws,
            },
            network: outcome.network,
        }
    }

    /// Selection probability of a series already at the input length.
    pub fn probability(&self, input: &[f64]) -> f64 {
        self.probabilities(input)[0]
    }

    /// Selection probabilities for series stored back to back.
    pub fn probabilities(&self, inputs: &[f64]) -> Vec<f64> {
        let (lo, hi) = self.normalization.clamp;
        let clamped: Vec<f64> = inputs.iter().map(|v| v.clamp(lo, hi)).collect();
        self.network.predict(&clamped).chunks(2).map(|p| p[SELECTION]).collect()
    }

    pub fn to_text(&self) -> String {
        let body = serde_json::to_string(self).expect("model serializes");
        format!("{MODEL_MAGIC} {MODEL_VERSION}\n{body}\n")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (header, body) = text.split_once('\n').ok_or_else(|| Error::Model("missing header line".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(MODEL_MAGIC) {
            return Err(Error::Model(format!("not a model file (expected `{MODEL_MAGIC}` header)")));
        }
        let version: u32 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| Error::Model("missing version".into()))?;
        if version != MODEL_VERSION {
            return Err(Error::Model(format!("unsupported model version {version}")));
        }
        let model: TscModel = serde_json::from_str(body.trim()).map_err(|e| Error::Model(e.to_string()))?;
        if !model.network.is_finite() {
            return Err(Error::Model("weights are not finite".into()));
        }
        if model.network.architecture.input_len != model.normalization.series_len {
            return Err(Error::Model("input length and normalization disagree".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TscVerdict {
    Selection,
    Drift,
}

impl fmt::Display for TscVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TscVerdict::Selection => "SELECTION",
            TscVerdict::Drift => "DRIFT",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub verb: String,
    pub probability: f64,
    pub verdict: TscVerdict,
}

impl Classification {
    pub fn from_probability(verb: &str, probability: f64) -> Self {
        let verdict = if probability > DECISION_THRESHOLD { TscVerdict::Selection } else { TscVerdict::Drift };
        Classification { verb: verb.to_string(), probability, verdict }
    }
}

pub fn classify(model: &TscModel, series: &BinnedSeries) -> Result<Classification> {
    let input = resample_series(series, model.normalization.series_len)?;
    Ok(Classification::from_probability(&series.verb, model.probability(&input)))
}

/// Classification report rows; `groups` pairs each classification with its
/// verb group label.
pub fn classifications_to_tsv(rows: &[(Classification, String)]) -> String {
    let mut out = String::from(CLASSIFICATION_HEADER);
    out.push('\n');
    for (c, group) in rows {
        writeln!(out, "{}\t{}\t{:.4}\t{}", c.verb, group, c.probability, c.verdict).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> TscModel {
        let config = TrainingConfig { samples_per_class: 8, series_len: 10, binning_mirror: false, ..TrainingConfig::default() };
        let hyper = Hyperparams { epochs: 1, batch_size: 4, ..Hyperparams::default() };
        TscModel::train_from_config(&config, &hyper).unwrap()
    }

    #[test]
    fn verdict_follows_threshold() {
        assert_eq!(Classification::from_probability("a", 0.51).verdict, TscVerdict::Selection);
        assert_eq!(Classification::from_probability("a", 0.5).verdict, TscVerdict::Drift);
        assert_eq!(Classification::from_probability("a", 0.07).verdict, TscVerdict::Drift);
    }

    #[test]
    fn model_text_round_trip() {
        let model = tiny_model();
        let back = TscModel::from_text(&model.to_text()).unwrap();
        assert_eq!(back, model);
        assert!(model.to_text().starts_with("DRIFTSEL-TSC 1\n"));
    }

    #[test]
    fn bad_model_files() {
        assert!(TscModel::from_text("hello\n{}").is_err());
        assert!(TscModel::from_text("DRIFTSEL-TSC 9\n{}").is_err());
        assert!(TscModel::from_text("DRIFTSEL-TSC 1\n{not json").is_err());
    }

    #[test]
    fn classify_short_series_fails() {
        let model = tiny_model();
        let s = BinnedSeries::from_points("v", vec![1700.0], vec![0.3], vec![10]).unwrap();
        assert!(classify(&model, &s).is_err());
        let s = BinnedSeries::from_points("v", vec![1700.0, 1800.0, 1900.0], vec![0.1, 0.5, 0.9], vec![10; 3]).unwrap();
        let c = classify(&model, &s).unwrap();
        assert!((0.0..=1.0).contains(&c.probability));
    }
}
