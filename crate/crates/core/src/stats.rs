//! Student and noncentral t probabilities.

use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn central_t(dof: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, dof).expect("dof > 0")
}

/// Two-sided p-value of a t statistic.
pub fn t_two_sided_p(t: f64, dof: f64) -> f64 {
    (2.0 * central_t(dof).sf(t.abs())).min(1.0)
}

/// Upper `q` quantile of the central t distribution.
pub fn t_upper_quantile(q: f64, dof: f64) -> f64 {
    central_t(dof).inverse_cdf(1.0 - q)
}

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One Kronrod panel: (integral estimate, error estimate).
fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let pair = f(c - x) + f(c + x);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod quadrature to an absolute tolerance.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64) -> f64 {
    fn recurse(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, whole: (f64, f64), depth: u32) -> f64 {
        let (value, err) = whole;
        if err <= tol || depth == 0 {
            return value;
        }
        let m = 0.5 * (a + b);
        let left = gk15(f, a, m);
        let right = gk15(f, m, b);
        recurse(f, a, m, 0.5 * tol, left, depth - 1) + recurse(f, m, b, 0.5 * tol, right, depth - 1)
    }
    recurse(&f, a, b, abs_tol, gk15(&f, a, b), 40)
}

const QUAD_TOL: f64 = 1e-10;

/// CDF of the noncentral t distribution with `dof` degrees of freedom and
/// noncentrality `ncp`.
///
/// Uses `T = (Z + ncp) / W` with `W = sqrt(V / dof)`, `V ~ chi2(dof)`, so
/// `P(T <= t) = E[Phi(t W - ncp)]`, integrated over the density of `W`.
pub fn noncentral_t_cdf(t: f64, dof: f64, ncp: f64) -> f64 {
    let half = 0.5 * dof;
    // log density of W: log 2 + half*log(half) - lnGamma(half) + (dof-1) log w - half w^2
    let log_norm = std::f64::consts::LN_2 + half * half.ln() - ln_gamma(half);
    let density = move |w: f64| {
        if w <= 0.0 {
            return if dof == 1.0 { log_norm.exp() } else { 0.0 };
        }
        (log_norm + (dof - 1.0) * w.ln() - half * w * w).exp()
    };
    let spread = 12.0 / (2.0 * dof).sqrt();
    let lo = (1.0 - spread).max(0.0);
    let hi = 1.0 + spread.max(8.0 / dof.sqrt());
    let p = integrate(|w| density(w) * normal_cdf(t * w - ncp), lo, hi, QUAD_TOL);
    p.clamp(0.0, 1.0)
}

/// Probability that a two-sided one-sample t test on `n` observations at
/// level `alpha` rejects, given standardized effect `d`.
pub fn one_sample_t_power(d: f64, n: usize, alpha: f64) -> f64 {
    let dof = (n - 1) as f64;
    let crit = t_upper_quantile(alpha / 2.0, dof);
    let ncp = d * (n as f64).sqrt();
    let upper = 1.0 - noncentral_t_cdf(crit, dof, ncp);
    let lower = noncentral_t_cdf(-crit, dof, ncp);
    (upper + lower).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_of_polynomial_and_gaussian() {
        let v = integrate(|x| x * x * x - 2.0 * x, 0.0, 2.0, 1e-12);
        assert!((v - 0.0).abs() < 1e-12);
        let g = integrate(|x| (-x * x / 2.0).exp(), -10.0, 10.0, 1e-12);
        assert!((g - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn zero_ncp_matches_central_t() {
        for &dof in &[1.0, 2.0, 5.0, 19.0, 80.0] {
            for &t in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
                let central = central_t(dof).cdf(t);
                let nc = noncentral_t_cdf(t, dof, 0.0);
                assert!((central - nc).abs() < 1e-8, "dof {dof} t {t}: {central} vs {nc}");
            }
        }
    }

    #[test]
    fn noncentral_reference_values() {
        // Exact for dof = 1: P(T <= 0) = Phi(-ncp).
        assert!((noncentral_t_cdf(0.0, 1.0, 1.5) - normal_cdf(-1.5)).abs() < 1e-9);
        // Large dof approaches the shifted normal.
        let v = noncentral_t_cdf(2.0, 1e6, 1.0);
        assert!((v - normal_cdf(1.0)).abs() < 1e-4);
    }

    #[test]
    fn null_power_is_alpha() {
        for &n in &[3, 10, 40] {
            assert!((one_sample_t_power(0.0, n, 0.05) - 0.05).abs() < 1e-6);
        }
    }

    #[test]
    fn two_sided_p_values() {
        assert!((t_two_sided_p(0.0, 5.0) - 1.0).abs() < 1e-12);
        let crit = t_upper_quantile(0.025, 9.0);
        assert!((t_two_sided_p(crit, 9.0) - 0.05).abs() < 1e-9);
        assert!((t_two_sided_p(-crit, 9.0) - 0.05).abs() < 1e-9);
    }
}
