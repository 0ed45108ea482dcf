//! Haploid Wright-Fisher dynamics for two competing variants.
//!
//! The focal variant has frequency `x` and relative fitness `1 + s`. Each
//! generation the parental frequency is reweighted by selection,
//!
//! ```text
//! p' = x (1 + s) / (1 + s x)
//! ```
//!
//! and the offspring generation is a binomial sample of `N` individuals with
//! success probability `p'`. With `s = 0` this is pure drift, the null model
//! used by both the frequency increment test and the classifier.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{substream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WfParams {
    pub population_size: u64,
    pub selection_coeff: f64,
    pub initial_freq: f64,
    pub generations: u64,
    pub seed: u64,
}

impl WfParams {
    pub fn neutral(population_size: u64, initial_freq: f64, generations: u64, seed: u64) -> Self {
        WfParams { population_size, selection_coeff: 0.0, initial_freq, generations, seed }
    }

    pub fn validate(&self) -> Result<()> {
        check_step_params(self.population_size, self.selection_coeff)?;
        if self.generations < 1 {
            return Err(Error::Parameter("generations must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.initial_freq) {
            return Err(Error::Parameter(format!(
                "initial frequency {} outside [0, 1]",
                self.initial_freq
            )));
        }
        Ok(())
    }

    /// Population-scaled selection strength `2Ns`.
    pub fn scaled_selection(&self) -> f64 {
        2.0 * self.population_size as f64 * self.selection_coeff
    }
}

fn check_step_params(population_size: u64, selection_coeff: f64) -> Result<()> {
    if population_size < 2 {
        return Err(Error::Parameter(format!(
            "population size must be at least 2, got {population_size}"
        )));
    }
    if !(selection_coeff > -1.0) || !selection_coeff.is_finite() {
        return Err(Error::Parameter(format!(
            "selection coefficient must be finite and > -1, got {selection_coeff}"
        )));
    }
    Ok(())
}

/// Expected offspring frequency after selection, before sampling.
pub fn selected_freq(x: f64, s: f64) -> f64 {
    x * (1.0 + s) / (1.0 + s * x)
}

/// One Wright-Fisher generation. Returns `k / N` with `k ~ Binomial(N, p')`.
pub fn wf_step<R: Rng + ?Sized>(x: f64, population_size: u64, s: f64, rng: &mut R) -> Result<f64> {
    check_step_params(population_size, s)?;
    Ok(step_unchecked(x, population_size, s, rng))
}

#[inline]
fn step_unchecked<R: Rng + ?Sized>(x: f64, n: u64, s: f64, rng: &mut R) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let p = selected_freq(x, s).clamp(0.0, 1.0);
    let k = Binomial::new(n, p).expect("p in [0, 1]").sample(rng);
    k as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub params: WfParams,
    /// Frequency of the focal variant, indexed by generation.
    pub freqs: Vec<f64>,
    /// First generation at which the path hit 0 or 1.
    pub absorbed_at: Option<u64>,
}

impl Trajectory {
    pub fn final_freq(&self) -> f64 {
        *self.freqs.last().expect("trajectory has at least one point")
    }

    /// Tab-separated export with a `# N=.. s=.. x0=.. seed=..` header.
    pub fn to_tsv(&self) -> String {
        let p = &self.params;
        let mut out = format!(
            "# N={} s={} x0={} seed={}\n",
            p.population_size, p.selection_coeff, p.initial_freq, p.seed
        );
        for (g, x) in self.freqs.iter().enumerate() {
            writeln!(out, "{g}\t{x}").unwrap();
        }
        out
    }
}

/// Simulate with the parameters' own seed, on substream 0.
pub fn simulate(params: &WfParams) -> Result<Trajectory> {
    simulate_replicate(params, 0)
}

/// Simulate replicate `index` of an ensemble keyed by `params.seed`.
pub fn simulate_replicate(params: &WfParams, index: u64) -> Result<Trajectory> {
    params.validate()?;
    let mut rng = substream(params.seed, index);
    Ok(simulate_with(params, &mut rng))
}

pub(crate) fn simulate_with(params: &WfParams, rng: &mut StreamRng) -> Trajectory {
    let n = params.population_size;
    let s = params.selection_coeff;
    let mut freqs = Vec::with_capacity(params.generations as usize + 1);
    let mut x = params.initial_freq;
    let mut absorbed_at = (x == 0.0 || x == 1.0).then_some(0);
    freqs.push(x);
    for g in 1..=params.generations {
        x = step_unchecked(x, n, s, rng);
        if absorbed_at.is_none() && (x == 0.0 || x == 1.0) {
            absorbed_at = Some(g);
        }
        freqs.push(x);
    }
    Trajectory { params: *params, freqs, absorbed_at }
}

/// Final frequencies of `replicates` independent runs, in replicate order.
pub fn ensemble_final_freqs(params: &WfParams, replicates: u64) -> Result<Vec<f64>> {
    params.validate()?;
    Ok((0..replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(params.seed, i);
            run_until(params, params.generations, &mut rng).0
        })
        .collect())
}

/// Iterate until absorption or `cap` generations. Returns the final
/// frequency and the number of generations run.
fn run_until(params: &WfParams, cap: u64, rng: &mut StreamRng) -> (f64, u64) {
    let mut x = params.initial_freq;
    let mut g = 0;
    while g < cap && x > 0.0 && x < 1.0 {
        x = step_unchecked(x, params.population_size, params.selection_coeff, rng);
        g += 1;
    }
    (x, g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixationEstimate {
    /// Fixed runs over absorbed runs.
    pub probability: f64,
    pub fixed: u64,
    pub lost: u64,
    /// Runs still polymorphic at the generation cap; excluded from
    /// `probability`.
    pub unabsorbed: u64,
    pub replicates: u64,
    pub generation_cap: u64,
    /// Set when more than 10% of replicates hit the cap.
    pub cap_warning: bool,
}

/// Default cap used by [`estimate_fixation_prob`]: ample for any absorption
/// time of order `N` generations.
pub fn default_generation_cap(population_size: u64) -> u64 {
    (100 * population_size).max(10_000)
}

/// Fraction of replicates absorbed at frequency 1. `params.generations` is
/// ignored; runs continue until absorption or the default cap.
pub fn estimate_fixation_prob(params: &WfParams, replicates: u64) -> Result<FixationEstimate> {
    estimate_fixation_prob_capped(params, replicates, default_generation_cap(params.population_size))
}

pub fn estimate_fixation_prob_capped(
    params: &WfParams,
    replicates: u64,
    generation_cap: u64,
) -> Result<FixationEstimate> {
    check_step_params(params.population_size, params.selection_coeff)?;
    if !(0.0..=1.0).contains(&params.initial_freq) {
        return Err(Error::Parameter("initial frequency outside [0, 1]".into()));
    }
    if replicates == 0 {
        return Err(Error::Parameter("replicates must be at least 1".into()));
    }
    let finals: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(params.seed, i);
            run_until(params, generation_cap, &mut rng).0
        })
        .collect();
    let fixed = finals.iter().filter(|&&x| x == 1.0).count() as u64;
    let lost = finals.iter().filter(|&&x| x == 0.0).count() as u64;
    let unabsorbed = replicates - fixed - lost;
    if fixed + lost == 0 {
        return Err(Error::NoAbsorption { cap: generation_cap });
    }
    Ok(FixationEstimate {
        probability: fixed as f64 / (fixed + lost) as f64,
        fixed,
        lost,
        unabsorbed,
        replicates,
        generation_cap,
        cap_warning: unabsorbed * 10 > replicates,
    })
}

/// Kimura's diffusion approximation to the fixation probability.
pub fn diffusion_fixation_prob(population_size: u64, s: f64, x0: f64) -> f64 {
    if s == 0.0 {
        return x0;
    }
    let two_ns = 2.0 * population_size as f64 * s;
    (-(two_ns * x0)).exp_m1() / (-two_ns).exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: u64, s: f64, x0: f64, t: u64, seed: u64) -> WfParams {
        WfParams { population_size: n, selection_coeff: s, initial_freq: x0, generations: t, seed }
    }

    #[test]
    fn absorbing_states_are_fixed_points() {
        let mut rng = substream(1, 0);
        for &s in &[0.0, 0.3, -0.5] {
            assert_eq!(wf_step(0.0, 50, s, &mut rng).unwrap(), 0.0);
            assert_eq!(wf_step(1.0, 50, s, &mut rng).unwrap(), 1.0);
        }
    }

    #[test]
    fn step_rejects_bad_parameters() {
        let mut rng = substream(1, 0);
        assert!(wf_step(0.5, 1, 0.0, &mut rng).is_err());
        assert!(wf_step(0.5, 100, -1.0, &mut rng).is_err());
        assert!(wf_step(0.5, 100, f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn neutral_step_mean_matches_binomial() {
        let mut rng = substream(11, 0);
        let draws = 100_000;
        let sum: f64 = (0..draws).map(|_| wf_step(0.5, 100, 0.0, &mut rng).unwrap()).sum();
        let mean = sum / draws as f64;
        let tol = 3.0 * 0.05 / (draws as f64).sqrt();
        assert!((mean - 0.5).abs() < tol, "mean {mean}");
    }

    #[test]
    fn fixed_population_stays_fixed() {
        let t = simulate(&params(100, 0.0, 1.0, 50, 7)).unwrap();
        assert_eq!(t.freqs.len(), 51);
        assert!(t.freqs.iter().all(|&x| x == 1.0));
        assert_eq!(t.absorbed_at, Some(0));
    }

    #[test]
    fn same_seed_same_path() {
        let p = params(100, 0.0, 0.5, 10, 42);
        assert_eq!(simulate(&p).unwrap(), simulate(&p).unwrap());
    }

    #[test]
    fn frequencies_live_on_the_grid() {
        let t = simulate(&params(37, 0.05, 10.0 / 37.0, 300, 3)).unwrap();
        assert_eq!(t.freqs[0], 10.0 / 37.0);
        for &x in &t.freqs[1..] {
            let k = x * 37.0;
            assert!((k - k.round()).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&x));
        }
        if let Some(g) = t.absorbed_at {
            let v = t.freqs[g as usize];
            assert!(t.freqs[g as usize..].iter().all(|&x| x == v));
        }
    }

    #[test]
    fn zero_start_never_fixes() {
        let est = estimate_fixation_prob(&params(100, 0.0, 0.0, 1, 5), 100).unwrap();
        assert_eq!(est.probability, 0.0);
        assert_eq!(est.fixed, 0);
    }

    #[test]
    fn neutral_fixation_equals_start_frequency() {
        let est = estimate_fixation_prob(&params(100, 0.0, 0.3, 1, 19), 10_000).unwrap();
        assert!((est.probability - 0.3).abs() < 0.015, "{est:?}");
        assert!(!est.cap_warning);
    }

    #[test]
    fn tight_cap_raises_warning() {
        let est = estimate_fixation_prob_capped(&params(1000, 0.0, 0.5, 1, 2), 200, 5);
        // nothing absorbs within 5 generations at N = 1000
        assert!(matches!(est, Err(Error::NoAbsorption { cap: 5 })));
        let est = estimate_fixation_prob_capped(&params(20, 0.0, 0.5, 1, 2), 400, 20).unwrap();
        assert!(est.cap_warning);
        assert_eq!(est.fixed + est.lost + est.unabsorbed, 400);
    }

    #[test]
    fn diffusion_formula_limits() {
        assert_eq!(diffusion_fixation_prob(100, 0.0, 0.25), 0.25);
        let p = diffusion_fixation_prob(1000, 0.01, 0.1);
        let expected = (1.0 - (-2.0f64).exp()) / (1.0 - (-20.0f64).exp());
        assert!((p - expected).abs() < 1e-12);
    }

    #[test]
    fn export_header_and_rows() {
        let t = simulate(&params(100, 0.0, 0.5, 3, 1)).unwrap();
        let tsv = t.to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[0], "# N=100 s=0 x0=0.5 seed=1");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "0\t0.5");
    }
}
