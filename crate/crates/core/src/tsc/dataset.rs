//! Labelled drift / selection series simulated from the Wright-Fisher model.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::{bin_equal_count, BinnedSeries, BinningOptions};
use crate::error::{Error, Result};
use crate::ingest::{CountRecord, Source, Variant};
use crate::rng::{substream, StreamRng};
use crate::wf::{simulate_with, WfParams};

pub const DRIFT: usize = 0;
pub const SELECTION: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub n_range: (u64, u64),
    /// Range of `|s|` for selection samples, sampled log-uniformly.
    pub s_range: (f64, f64),
    pub t_range: (u64, u64),
    pub x0_range: (f64, f64),
    pub series_len: usize,
    pub samples_per_class: usize,
    pub seed: u64,
    /// Pass simulations through token sampling and equal-count binning, as
    /// corpus data are, before resampling.
    pub binning_mirror: bool,
    /// Total synthetic tokens per simulated series when mirroring.
    pub mirror_tokens: (u64, u64),
    /// Draw the sign of `s` at random; otherwise selection always favours
    /// the focal variant.
    pub random_sign: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            n_range: (100, 5000),
            s_range: (0.005, 0.2),
            t_range: (50, 500),
            x0_range: (0.1, 0.9),
            series_len: 25,
            samples_per_class: 25_000,
            seed: 20_240_601,
            binning_mirror: true,
            mirror_tokens: (1_000, 20_000),
            random_sign: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_range.0 < 2 || self.n_range.0 > self.n_range.1 {
            return bad(format!("population range {:?} must satisfy 2 <= min <= max", self.n_range));
        }
        if !(self.s_range.0 > 0.0 && self.s_range.0 <= self.s_range.1 && self.s_range.1 < 1.0) {
            return bad(format!("|s| range {:?} must satisfy 0 < min <= max < 1", self.s_range));
        }
        if self.t_range.0 < 1 || self.t_range.0 > self.t_range.1 {
            return bad(format!("generation range {:?} must satisfy 1 <= min <= max", self.t_range));
        }
        if !(0.0 < self.x0_range.0 && self.x0_range.0 <= self.x0_range.1 && self.x0_range.1 < 1.0) {
            return bad(format!("x0 range {:?} must lie inside (0, 1)", self.x0_range));
        }
        if self.series_len < 4 {
            return bad("series length must be at least 4".into());
        }
        if self.samples_per_class < 1 {
            return bad("samples per class must be at least 1".into());
        }
        if self.binning_mirror && (self.mirror_tokens.0 < 4 || self.mirror_tokens.0 > self.mirror_tokens.1) {
            return bad(format!("mirror token range {:?} must satisfy 4 <= min <= max", self.mirror_tokens));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub population_size: u64,
    pub selection_coeff: f64,
    pub generations: u64,
    pub initial_freq: f64,
}

impl SampleMeta {
    pub fn scaled_selection(&self) -> f64 {
        2.0 * self.population_size as f64 * self.selection_coeff
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub series_len: usize,
    /// Series back to back, `len() * series_len` values.
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    pub meta: Vec<SampleMeta>,
    /// Simulations discarded as uninformative and drawn again.
    pub redraws: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn series(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.series_len..(i + 1) * self.series_len]
    }

    /// Keep only samples for which `keep` holds.
    pub fn filter(&self, mut keep: impl FnMut(usize, &SampleMeta) -> bool) -> Dataset {
        let mut out = Dataset { series_len: self.series_len, inputs: Vec::new(), labels: Vec::new(), meta: Vec::new(), redraws: 0 };
        for i in 0..self.len() {
            if keep(self.labels[i], &self.meta[i]) {
                out.inputs.extend_from_slice(self.series(i));
                out.labels.push(self.labels[i]);
                out.meta.push(self.meta[i]);
            }
        }
        out
    }
}

/// Interpolate a series at `len` equispaced points of its normalized time
/// axis. Values are clamped to `[0, 1]`.
pub fn resample_to_length(times: &[f64], values: &[f64], len: usize) -> Result<Vec<f64>> {
    if times.len() != values.len() {
        return Err(Error::Parameter("times and values differ in length".into()));
    }
    if times.len() < 2 {
        return Err(Error::SeriesTooSmall(format!("resampling needs at least 2 points, got {}", times.len())));
    }
    if len < 2 {
        return Err(Error::Parameter("output length must be at least 2".into()));
    }
    let (t0, t1) = (times[0], times[times.len() - 1]);
    if !(t1 > t0) {
        return Err(Error::DegenerateSeries("series spans no time".into()));
    }
    let u: Vec<f64> = times.iter().map(|t| (t - t0) / (t1 - t0)).collect();
    let mut out = Vec::with_capacity(len);
    let mut seg = 0;
    for j in 0..len {
        let g = j as f64 / (len - 1) as f64;
        while seg + 2 < u.len() && u[seg + 1] <= g {
            seg += 1;
        }
        let (ua, ub) = (u[seg], u[seg + 1]);
        let v = if ub > ua {
            let w = ((g - ua) / (ub - ua)).clamp(0.0, 1.0);
            values[seg] + w * (values[seg + 1] - values[seg])
        } else {
            values[seg + 1]
        };
        out.push(v.clamp(0.0, 1.0));
    }
    Ok(out)
}

pub fn resample_series(series: &BinnedSeries, len: usize) -> Result<Vec<f64>> {
    resample_to_length(&series.times, &series.freq_have, len)
}

fn uniform_int<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (u64, u64)) -> u64 {
    rng.random_range(lo..=hi)
}

fn uniform_real<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draw the simulation parameters for one sample of class `label`.
fn draw_params(config: &TrainingConfig, label: usize, rng: &mut StreamRng) -> SampleMeta {
    let population_size = uniform_int(rng, config.n_range);
    let generations = uniform_int(rng, config.t_range);
    let x0 = uniform_real(rng, config.x0_range);
    let initial_freq = (x0 * population_size as f64).round() / population_size as f64;
    let selection_coeff = if label == SELECTION {
        let (lo, hi) = config.s_range;
        let s = uniform_real(rng, (lo.ln(), hi.ln())).exp();
        if config.random_sign && rng.random_bool(0.5) {
            -s
        } else {
            s
        }
    } else {
        0.0
    };
    SampleMeta { population_size, selection_coeff, generations, initial_freq }
}

/// Spread `tokens` evenly over the generations of `freqs` and draw the
/// HAVE count of each generation binomially.
fn mirror_through_binning(freqs: &[f64], tokens: u64, rng: &mut StreamRng) -> Result<BinnedSeries> {
    let points = freqs.len() as u64;
    let base = tokens / points;
    let extra = tokens % points;
    let mut records = Vec::with_capacity(2 * freqs.len());
    for (g, &x) in freqs.iter().enumerate() {
        let n = base + u64::from((g as u64) < extra);
        if n == 0 {
            continue;
        }
        let have = Binomial::new(n, x.clamp(0.0, 1.0)).unwrap().sample(rng);
        records.push(CountRecord::new("sim", Variant::Be, g as i32, n - have, Source::Eebo));
        records.push(CountRecord::new("sim", Variant::Have, g as i32, have, Source::Eebo));
    }
    bin_equal_count(&records, &BinningOptions::default())
}

/// One labelled, fixed-length series from substream `index`.
pub(crate) fn generate_sample(config: &TrainingConfig, label: usize, index: u64) -> (Vec<f64>, SampleMeta, usize) {
    let mut rng = substream(config.seed, index);
    let mut redraws = 0;
    loop {
        let meta = draw_params(config, label, &mut rng);
        let params = WfParams {
            population_size: meta.population_size,
            selection_coeff: meta.selection_coeff,
            initial_freq: meta.initial_freq,
            generations: meta.generations,
            seed: config.seed,
        };
        let traj = simulate_with(&params, &mut rng);
        if traj.absorbed_at == Some(0) {
            redraws += 1;
            continue;
        }
        let series = if config.binning_mirror {
            let tokens = uniform_int(&mut rng, config.mirror_tokens);
            match mirror_through_binning(&traj.freqs, tokens, &mut rng)
                .and_then(|b| resample_series(&b, config.series_len))
            {
                Ok(s) => s,
                Err(_) => {
                    redraws += 1;
                    continue;
                }
            }
        } else {
            let times: Vec<f64> = (0..traj.freqs.len()).map(|g| g as f64).collect();
            resample_to_length(&times, &traj.freqs, config.series_len).expect("trajectory has >= 2 points")
        };
        return (series, meta, redraws);
    }
}

/// Balanced dataset: even indices are drift samples, odd indices selection
/// samples. Sample `i` uses substream `i` of `config.seed`.
pub fn generate_dataset(config: &TrainingConfig) -> Result<Dataset> {
    config.validate()?;
    let total = 2 * config.samples_per_class;
    let samples: Vec<(Vec<f64>, SampleMeta, usize)> =
        (0..total).into_par_iter().map(|i| generate_sample(config, i % 2, i as u64)).collect();
    let mut data = Dataset {
        series_len: config.series_len,
        inputs: Vec::with_capacity(total * config.series_len),
        labels: Vec::with_capacity(total),
        meta: Vec::with_capacity(total),
        redraws: 0,
    };
    for (i, (series, meta, redraws)) in samples.into_iter().enumerate() {
        data.inputs.extend(series);
        data.labels.push(i % 2);
        data.meta.push(meta);
        data.redraws += redraws;
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(binning_mirror: bool) -> TrainingConfig {
        TrainingConfig { samples_per_class: 20, binning_mirror, ..TrainingConfig::default() }
    }

    #[test]
    fn zero_samples_rejected() {
        let c = TrainingConfig { samples_per_class: 0, ..TrainingConfig::default() };
        assert!(matches!(generate_dataset(&c), Err(Error::Config(_))));
        let c = TrainingConfig { n_range: (500, 100), ..TrainingConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn datasets_are_reproducible() {
        for mirror in [false, true] {
            let a = generate_dataset(&small(mirror)).unwrap();
            let b = generate_dataset(&small(mirror)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 40);
            assert_eq!(a.labels.iter().filter(|&&l| l == SELECTION).count(), 20);
            assert!(a.inputs.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn drift_samples_are_neutral() {
        let data = generate_dataset(&small(false)).unwrap();
        for (l, m) in data.labels.iter().zip(&data.meta) {
            assert_eq!(*l == DRIFT, m.selection_coeff == 0.0);
            if *l == SELECTION {
                assert!((0.005..=0.2).contains(&m.selection_coeff.abs()));
            }
        }
    }

    #[test]
    fn resample_identity_on_equispaced_input() {
        let values: Vec<f64> = (0..25).map(|i| ((i * 13) % 25) as f64 / 24.0).collect();
        let times: Vec<f64> = (0..25).map(|i| 1700.0 + 4.0 * i as f64).collect();
        let out = resample_to_length(&times, &values, 25).unwrap();
        for (a, b) in out.iter().zip(&values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_linear_segment() {
        let out = resample_to_length(&[0.0, 1.0], &[0.0, 1.0], 5).unwrap();
        assert_eq!(out, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn resample_needs_two_points() {
        assert!(resample_to_length(&[1.0], &[0.3], 5).is_err());
        assert!(resample_to_length(&[1.0, 1.0], &[0.3, 0.4], 5).is_err());
    }
}
