//! Gaussian kernel density estimator with bandwidth `h = beta^{-1/2}`,
//! its first two derivatives, and the rescaled field
//! `F_n(t) = n^{-1/2} sum_i (t - X_i) exp(-beta (t - X_i)^2 / 2)`,
//! whose zero up-crossings are exactly the modes of the estimator.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Kernel support truncation, in bandwidths.
pub const WINDOW: f64 = 10.0;

/// Exponents below this are flushed to zero.
const EXP_FLOOR: f64 = -745.0;

#[inline]
pub(crate) fn flushed_exp(x: f64) -> f64 {
    if x < EXP_FLOOR {
        0.0
    } else {
        x.exp()
    }
}

/// A realized sample `X_1..X_n` together with the inverse squared bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    samples: Vec<f64>,
    beta: f64,
}

impl SampleSet {
    /// Sorts `samples` and validates them.
    pub fn new(mut samples: Vec<f64>, beta: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("sample set is empty"));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::invalid(format!("beta must be positive and finite, got {beta}")));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("samples must be finite"));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { samples, beta })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn bandwidth(&self) -> f64 {
        self.beta.sqrt().recip()
    }

    pub fn min(&self) -> f64 {
        self.samples[0]
    }

    pub fn max(&self) -> f64 {
        self.samples[self.samples.len() - 1]
    }

    /// Same samples under a different bandwidth.
    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.samples.clone(), beta)
    }

    /// Samples with `|t - X_i| <= radius`.
    pub fn window(&self, t: f64, radius: f64) -> &[f64] {
        let lo = self.samples.partition_point(|&x| x < t - radius);
        let hi = self.samples.partition_point(|&x| x <= t + radius);
        &self.samples[lo..hi]
    }

    /// Samples that can contribute more than `e^{-W^2/2}` of a kernel at `t`.
    pub fn kernel_window(&self, t: f64) -> &[f64] {
        self.window(t, WINDOW * self.bandwidth())
    }
}

/// Derivative order for [`kde_eval`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    Value,
    First,
    Second,
}

impl TryFrom<u8> for Order {
    type Error = Error;

    fn try_from(k: u8) -> Result<Self> {
        match k {
            0 => Ok(Order::Value),
            1 => Ok(Order::First),
            2 => Ok(Order::Second),
            _ => Err(Error::invalid(format!("derivative order {k} not supported"))),
        }
    }
}

/// `(P(t), P'(t), P''(t))` of the estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

fn check_t(t: f64) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("evaluation point must be finite, got {t}")))
    }
}

/// Value and first two derivatives of the KDE at `t`, summing over the
/// samples inside the kernel window.
pub fn kde_jet(s: &SampleSet, t: f64) -> Result<Jet> {
    check_t(t)?;
    let beta = s.beta;
    let (mut v, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for &x in s.kernel_window(t) {
        let u = t - x;
        let g = flushed_exp(-0.5 * beta * u * u);
        v += g;
        d1 += u * g;
        d2 += (beta * u * u - 1.0) * g;
    }
    let c = (beta / (2.0 * PI)).sqrt() / s.n() as f64;
    Ok(Jet {
        value: c * v,
        first: -c * beta * d1,
        second: c * beta * d2,
    })
}

/// `P(t)`, `P'(t)` or `P''(t)`.
///
/// Samples farther than `WINDOW` bandwidths from `t` are skipped; the
/// absolute error this introduces is at most [`truncation_bound`].
pub fn kde_eval(s: &SampleSet, t: f64, order: Order) -> Result<f64> {
    let jet = kde_jet(s, t)?;
    Ok(match order {
        Order::Value => jet.value,
        Order::First => jet.first,
        Order::Second => jet.second,
    })
}

/// Upper bound on the windowing error of [`kde_eval`]: every skipped sample
/// contributes at most `sqrt(beta/2pi) beta^{k/2} (1 + W^2) e^{-W^2/2} / n`.
pub fn truncation_bound(beta: f64, order: Order) -> f64 {
    let k = match order {
        Order::Value => 0,
        Order::First => 1,
        Order::Second => 2,
    };
    (beta / (2.0 * PI)).sqrt() * beta.powf(k as f64 / 2.0) * (1.0 + WINDOW * WINDOW) * (-0.5 * WINDOW * WINDOW).exp()
}

/// `(F_n(t), F_n'(t))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldValue {
    pub f: f64,
    pub fprime: f64,
}

/// `F_n(t)` and its derivative by direct summation of the per-sample terms
/// `(t - X) e^{-beta (t-X)^2/2}` and `(1 - beta (t-X)^2) e^{-beta (t-X)^2/2}`.
pub fn field_f(s: &SampleSet, t: f64) -> Result<FieldValue> {
    check_t(t)?;
    let beta = s.beta;
    let (mut f, mut fp) = (0.0, 0.0);
    for &x in s.kernel_window(t) {
        let u = t - x;
        let bu2 = beta * u * u;
        let g = flushed_exp(-0.5 * bu2);
        f += u * g;
        fp += (1.0 - bu2) * g;
    }
    let c = (s.n() as f64).sqrt().recip();
    Ok(FieldValue { f: c * f, fprime: c * fp })
}

/// `F_n` and `F_n'` on the uniform grid `t_k = start + k * step`, `k < len`.
///
/// Each sample scatters into the grid points inside its kernel window. The
/// Gaussian factors along the grid follow the recurrence
/// `g(u + s) = g(u) r(u)`, `r(u + s) = r(u) e^{-beta s^2}`, so only three
/// exponentials are needed per sample.
pub fn field_grid(s: &SampleSet, start: f64, step: f64, len: usize) -> Result<Vec<FieldValue>> {
    check_t(start)?;
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::invalid(format!("grid step must be positive, got {step}")));
    }
    let beta = s.beta;
    let radius = WINDOW * s.bandwidth();
    let mut f = vec![0.0; len];
    let mut fp = vec![0.0; len];
    if len == 0 {
        return Ok(Vec::new());
    }
    let q = (-beta * step * step).exp();
    let last = (len - 1) as f64;
    for &x in &s.samples {
        let k_lo = ((x - radius - start) / step).ceil().max(0.0);
        let k_hi = ((x + radius - start) / step).floor().min(last);
        if k_lo > k_hi {
            continue;
        }
        let (k_lo, k_hi) = (k_lo as usize, k_hi as usize);
        let k_c = (((x - start) / step).round().max(k_lo as f64) as usize).min(k_hi);
        let u_c = start + k_c as f64 * step - x;
        let g_c = (-0.5 * beta * u_c * u_c).exp();

        let mut g = g_c;
        let mut r = (-beta * u_c * step - 0.5 * beta * step * step).exp();
        for k in k_c..=k_hi {
            let u = start + k as f64 * step - x;
            f[k] += u * g;
            fp[k] += (1.0 - beta * u * u) * g;
            g *= r;
            r *= q;
        }
        let mut g = g_c;
        let mut r = (beta * u_c * step - 0.5 * beta * step * step).exp();
        for k in (k_lo..k_c).rev() {
            g *= r;
            r *= q;
            let u = start + k as f64 * step - x;
            f[k] += u * g;
            fp[k] += (1.0 - beta * u * u) * g;
        }
    }
    let c = (s.n() as f64).sqrt().recip();
    Ok(f.into_iter()
        .zip(fp)
        .map(|(f, fp)| FieldValue { f: c * f, fprime: c * fp })
        .collect())
}

/// Draws `n` iid standard normal samples from a ChaCha8 stream keyed by `seed`.
pub fn draw_samples(n: usize, beta: f64, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::invalid("cannot draw an empty sample set (n = 0)"));
    }
    let mut rng = rng_from_seed(seed);
    let samples: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    SampleSet::new(samples, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Unwindowed summation over every sample.
    fn brute(xs: &[f64], beta: f64, t: f64, order: u8) -> f64 {
        let n = xs.len() as f64;
        xs.iter()
            .map(|&x| {
                let u = t - x;
                let k = (beta / (2.0 * PI)).sqrt() * (-beta * u * u / 2.0).exp();
                match order {
                    0 => k,
                    1 => -beta * u * k,
                    _ => (beta * beta * u * u - beta) * k,
                }
            })
            .sum::<f64>()
            / n
    }

    #[test]
    fn single_kernel_at_center() {
        let s = SampleSet::new(vec![0.0], 1.0).unwrap();
        let v = kde_eval(&s, 0.0, Order::Value).unwrap();
        assert!((v - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert_eq!(kde_eval(&s, 0.0, Order::First).unwrap(), 0.0);
    }

    #[test]
    fn two_samples_match_direct_sum() {
        let s = SampleSet::new(vec![1.0, -1.0], 9.0).unwrap();
        let got = kde_eval(&s, 0.0, Order::Value).unwrap();
        let want = brute(&[-1.0, 1.0], 9.0, 0.0, 0);
        assert!((got - want).abs() <= 1e-15 * want);
        // 3/sqrt(2pi) e^{-9/2}
        assert!((want - 3.0 / (2.0 * PI).sqrt() * (-4.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn invalid_inputs() {
        assert!(SampleSet::new(vec![], 1.0).is_err());
        assert!(SampleSet::new(vec![0.0], 0.0).is_err());
        assert!(SampleSet::new(vec![f64::NAN], 1.0).is_err());
        let s = SampleSet::new(vec![0.0], 1.0).unwrap();
        assert!(kde_eval(&s, f64::INFINITY, Order::Value).is_err());
        assert!(field_f(&s, f64::NAN).is_err());
        assert!(draw_samples(0, 1.0, 1).is_err());
        assert!(Order::try_from(3).is_err());
    }

    #[test]
    fn field_single_sample() {
        let s = SampleSet::new(vec![0.0], 1.0).unwrap();
        let at0 = field_f(&s, 0.0).unwrap();
        assert_eq!(at0.f, 0.0);
        let at1 = field_f(&s, 1.0).unwrap();
        assert!((at1.f - (-0.5f64).exp()).abs() < 1e-15);
        assert!(at1.fprime.abs() < 1e-15);
    }

    #[test]
    fn draws_are_deterministic() {
        let a = draw_samples(5, 1.0, 42).unwrap();
        let b = draw_samples(5, 1.0, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, draw_samples(5, 1.0, 43).unwrap());
        let one = draw_samples(1, 1.0, 9).unwrap();
        assert!(one.samples()[0].is_finite());
    }

    #[test]
    fn draws_have_standard_moments() {
        let n = 1_000_000;
        let s = draw_samples(n, 1.0, 1).unwrap();
        let mean = s.samples().iter().sum::<f64>() / n as f64;
        let var = s.samples().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn normalization() {
        let s = draw_samples(50, 25.0, 3).unwrap();
        let h = s.bandwidth();
        let (a, b) = (s.min() - 10.0 * h, s.max() + 10.0 * h);
        let m = 200_000;
        let dx = (b - a) / m as f64;
        let mut total = 0.0;
        for k in 0..=m {
            let w = if k == 0 || k == m { 0.5 } else { 1.0 };
            total += w * kde_eval(&s, a + k as f64 * dx, Order::Value).unwrap();
        }
        assert!((total * dx - 1.0).abs() < 1e-6, "{}", total * dx);
    }

    #[test]
    fn grid_matches_pointwise_field() {
        let s = draw_samples(2000, 400.0, 11).unwrap();
        let h = s.bandwidth();
        let start = s.min() - 3.0 * h;
        let step = h / 8.0;
        let len = ((s.max() + 3.0 * h - start) / step).ceil() as usize + 1;
        let grid = field_grid(&s, start, step, len).unwrap();
        let scale = (s.n() as f64).sqrt();
        for (k, g) in grid.iter().enumerate().step_by(37) {
            let direct = field_f(&s, start + k as f64 * step).unwrap();
            assert!((g.f - direct.f).abs() < 1e-11 * scale, "k={k}");
            assert!((g.fprime - direct.fprime).abs() < 1e-11 * scale, "k={k}");
        }
    }

    fn sample_set() -> impl Strategy<Value = SampleSet> {
        (prop::collection::vec(-3.0f64..3.0, 1..30), 0.5f64..200.0)
            .prop_map(|(xs, beta)| SampleSet::new(xs, beta).unwrap())
    }

    proptest! {
        #[test]
        fn negation_equivariance(s in sample_set(), t in -4.0f64..4.0) {
            let neg = SampleSet::new(s.samples().iter().map(|x| -x).collect(), s.beta()).unwrap();
            let a = kde_eval(&s, t, Order::Value).unwrap();
            let b = kde_eval(&neg, -t, Order::Value).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }

        #[test]
        fn field_identity(s in sample_set(), t in -4.0f64..4.0) {
            let fv = field_f(&s, t).unwrap();
            let d1 = kde_eval(&s, t, Order::First).unwrap();
            let n = s.n() as f64;
            let beta = s.beta();
            let via = -(2.0 * PI * n / beta.powi(3)).sqrt() * d1;
            prop_assert!((fv.f - via).abs() <= 1e-10 * fv.f.abs().max(1e-300) + 1e-300);
        }

        #[test]
        fn derivatives_match_finite_differences(s in sample_set(), t in -3.0f64..3.0) {
            let h = 1e-5 * s.bandwidth();
            let p = |x, o| kde_eval(&s, x, o).unwrap();
            let d1 = p(t, Order::First);
            let d2 = p(t, Order::Second);
            // Second differences of values at this step are swamped by
            // rounding (~eps * P / step^2), so the second derivative is
            // checked against a central difference of the first.
            let fd1 = (p(t + h, Order::Value) - p(t - h, Order::Value)) / (2.0 * h);
            let fd2 = (p(t + h, Order::First) - p(t - h, Order::First)) / (2.0 * h);
            // Derivatives can vanish, so errors are relative to beta^{k/2} P.
            let v = p(t, Order::Value);
            prop_assert!((fd1 - d1).abs() <= 1e-6 * (s.beta().sqrt() * v).max(d1.abs()));
            prop_assert!((fd2 - d2).abs() <= 1e-6 * (s.beta() * v).max(d2.abs()));
        }

        #[test]
        fn windowed_within_bound(s in sample_set(), t in -4.0f64..4.0) {
            for (k, order) in [Order::Value, Order::First, Order::Second].into_iter().enumerate() {
                let got = kde_eval(&s, t, order).unwrap();
                let want = brute(s.samples(), s.beta(), t, k as u8);
                // Rounding scale: the same sum with every term made positive.
                let mags: Vec<f64> = s.samples().iter().map(|&x| brute(&[x], s.beta(), t, k as u8).abs()).collect();
                let rounding = 1e-13 * mags.iter().sum::<f64>() / s.n() as f64;
                prop_assert!((got - want).abs() <= truncation_bound(s.beta(), order) + rounding);
            }
        }
    }
}
