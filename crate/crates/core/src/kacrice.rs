//! Moments of the Kac-Rice field `(F_n(t), F_n'(t))` for standard normal
//! samples, belt parameters, the localization intervals `T` and `T'`, and
//! the Gaussian-approximation Kac-Rice mode density.
//!
//! With `G(t) = (t - X) e^{-beta (t-X)^2/2}` and `X ~ N(0, 1)`, the field is a
//! normalized sum of iid copies of `(G, G')`, so its mean is
//! `sqrt(n) (E G, E G')` and its covariance is the covariance of `(G, G')`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use libm::erfc;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::quad::Adaptive;

/// The five raw moments of `(G, G')` in closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawMoments {
    /// `E G`
    pub g: f64,
    /// `E G'`
    pub gp: f64,
    /// `E G^2`
    pub gg: f64,
    /// `E G G'`
    pub ggp: f64,
    /// `E G'^2`
    pub gpgp: f64,
}

/// Closed forms obtained by completing the square against the `N(t, 1)`
/// weight: first moments use `u = z - t/(beta+1)`, second moments
/// `u = z - t/(2 beta + 1)`.
pub fn raw_moments(t: f64, beta: f64) -> RawMoments {
    let b1 = beta + 1.0;
    let e1 = (-beta * t * t / (2.0 * b1)).exp();
    let b2 = 2.0 * beta + 1.0;
    let e2 = (-beta * t * t / b2).exp();
    let (t2, t3, t4) = (t * t, t * t * t, t * t * t * t);
    let (beta2, beta3, beta4) = (beta * beta, beta * beta * beta, beta * beta * beta * beta);
    RawMoments {
        g: e1 * t / b1.powf(1.5),
        gp: e1 * (1.0 + beta - beta * t2) / b1.powf(2.5),
        gg: e2 * (t2 + b2) / b2.powf(2.5),
        ggp: e2 * (-2.0 * beta2 * t + beta * t - beta * t3 + t) / b2.powf(3.5),
        gpgp: e2
            * (12.0 * beta4 + 4.0 * beta3 * (t2 + 5.0) + beta2 * (t4 - 2.0 * t2 + 15.0)
                - 2.0 * beta * (t2 - 3.0)
                + 1.0)
            / b2.powf(4.5),
    }
}

/// Mean and covariance of `(F_n(t), F_n'(t))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentPack {
    pub t: f64,
    pub beta: f64,
    pub n: u64,
    pub mu: [f64; 2],
    pub sigma: [[f64; 2]; 2],
    /// `true` for the closed forms, `false` for the leading-order asymptotics.
    pub exact: bool,
}

impl MomentPack {
    pub fn det(&self) -> f64 {
        self.sigma[0][0] * self.sigma[1][1] - self.sigma[0][1] * self.sigma[1][0]
    }

    pub fn is_positive_definite(&self) -> bool {
        self.sigma[0][0] > 0.0 && self.det() > 0.0 && self.sigma[0][0].is_finite() && self.det().is_finite()
    }

    /// Symmetric inverse square root of `sigma`.
    pub fn whitening(&self) -> Result<[[f64; 2]; 2]> {
        inv_sqrt_spd(self.sigma)
    }
}

/// Symmetric inverse square root of a 2×2 symmetric positive-definite matrix.
pub(crate) fn inv_sqrt_spd(m: [[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let (a, b, c) = (m[0][0], m[0][1], m[1][1]);
    let det = a * c - b * b;
    if !(a > 0.0 && det > 0.0 && det.is_finite()) {
        return Err(Error::InvalidMoment(format!("matrix [[{a}, {b}], [{b}, {c}]] is not positive definite")));
    }
    // sqrt(M) = (M + sqrt(det) I) / sqrt(tr + 2 sqrt(det)), then invert.
    let sd = det.sqrt();
    let tau = (a + c + 2.0 * sd).sqrt();
    let (ra, rb, rc) = ((a + sd) / tau, b / tau, (c + sd) / tau);
    let rdet = ra * rc - rb * rb;
    Ok([[rc / rdet, -rb / rdet], [-rb / rdet, ra / rdet]])
}

/// Exact mean and covariance from [`raw_moments`].
pub fn exact_moments(t: f64, beta: f64, n: u64) -> MomentPack {
    let r = raw_moments(t, beta);
    let sn = (n as f64).sqrt();
    let off = r.ggp - r.g * r.gp;
    MomentPack {
        t,
        beta,
        n,
        mu: [sn * r.g, sn * r.gp],
        sigma: [[r.gg - r.g * r.g, off], [off, r.gpgp - r.gp * r.gp]],
        exact: true,
    }
}

/// Leading-order mean `n^{1/2} beta^{-3/2} e^{-t^2/2} (t, 1 - t^2)` and
/// covariance `2^{-5/2} beta^{-3/2} e^{-t^2/2} [[2, -t], [-t, 3 beta]]`.
///
/// The covariance stops being positive definite once `t^2 >= 6 beta`.
pub fn asymptotic_moments(t: f64, beta: f64, n: u64) -> MomentPack {
    let e = (-0.5 * t * t).exp();
    let m = (n as f64).sqrt() * beta.powf(-1.5) * e;
    let c = 2f64.powf(-2.5) * beta.powf(-1.5) * e;
    MomentPack {
        t,
        beta,
        n,
        mu: [m * t, m * (1.0 - t * t)],
        sigma: [[2.0 * c, -t * c], [-t * c, 3.0 * beta * c]],
        exact: false,
    }
}

/// Belt parameters: near the zero set of `F_n`, the Gaussian exponent
/// `|Sigma^{-1/2}((0, y) - mu)|^2` is approximately `A + alpha (y - delta)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeltParams {
    pub a: f64,
    pub alpha: f64,
    pub delta: f64,
    /// `delta + sqrt(A / alpha)`, the split point between the two Edgeworth error regimes.
    pub big_delta: f64,
}

/// Belt parameters built from the asymptotic moments:
/// `alpha = (2^{5/2}/3) beta^{1/2} e^{t^2/2}` (twice the prefactor of the
/// leading form of `Sigma^{-1}`), `A = (3/2) beta alpha mu_1^2` and
/// `delta = (mu_1 / t)(1 - t^2/2)`, extended continuously through `t = 0`.
pub fn belt_params(t: f64, beta: f64, n: u64) -> BeltParams {
    let mp = asymptotic_moments(t, beta, n);
    let alpha = 2f64.powf(2.5) / 3.0 * beta.sqrt() * (0.5 * t * t).exp();
    let mu1 = mp.mu[0];
    let a = 1.5 * beta * alpha * mu1 * mu1;
    // mu_1 / t without the division, so t = 0 takes the limit value.
    let mu1_over_t = (n as f64).sqrt() * beta.powf(-1.5) * (-0.5 * t * t).exp();
    let delta = mu1_over_t * (1.0 - 0.5 * t * t);
    BeltParams {
        a,
        alpha,
        delta,
        big_delta: delta + (a / alpha).sqrt(),
    }
}

/// A closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn symmetric(half_width: f64) -> Self {
        Self {
            lo: -half_width,
            hi: half_width,
        }
    }

    pub fn len(&self) -> f64 {
        (self.hi - self.lo).max(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0.0
    }

    pub fn contains(&self, t: f64) -> bool {
        self.lo <= t && t <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Label of the `omega` rule recorded in output files.
pub const OMEGA_RULE: &str = "sqrt(loglog)";

/// `omega(beta) = max(1, sqrt(log log beta))`; equals 1 whenever `log log beta` is undefined or below 1.
pub fn omega(beta: f64) -> f64 {
    let ll = beta.ln().ln();
    if ll.is_nan() || ll <= 1.0 {
        1.0
    } else {
        ll.sqrt()
    }
}

/// The localization intervals `T` and `T'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Belts {
    /// `|t| <= sqrt(2 log n - log beta - omega)`, `None` when the radicand is nonpositive.
    pub t: Option<Interval>,
    /// `|t| <= sqrt(2 log n - 3 log beta)`, `None` when `beta > n^{2/3}`.
    pub tprime: Option<Interval>,
    pub omega: f64,
}

/// Where a point sits relative to the belts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    InTPrime,
    InTNotTPrime,
    OutsideT,
}

impl Belts {
    pub fn classify(&self, t: f64) -> Region {
        match (self.t, self.tprime) {
            (_, Some(tp)) if tp.contains(t) => Region::InTPrime,
            (Some(tt), _) if tt.contains(t) => Region::InTNotTPrime,
            _ => Region::OutsideT,
        }
    }

    /// Right half of `T \ T'`.
    pub fn right_belt(&self) -> Option<Interval> {
        let t = self.t?;
        let inner = self.tprime.map_or(0.0, |tp| tp.hi);
        (t.hi > inner).then(|| Interval::new(inner, t.hi))
    }
}

/// `T` and `T'` for `n` samples. `T'` is clipped to `T` so that `T' ⊆ T`
/// also holds at small `beta`, where the raw radicands would reverse order.
pub fn intervals_t(n: u64, beta: f64) -> Belts {
    let ln_n = (n as f64).ln();
    let ln_b = beta.ln();
    let w = omega(beta);
    let rt = 2.0 * ln_n - ln_b - w;
    let t = (rt > 0.0).then(|| Interval::symmetric(rt.sqrt()));
    let rtp = 2.0 * ln_n - 3.0 * ln_b;
    let tprime = match t {
        Some(tt) if beta <= (n as f64).powf(2.0 / 3.0) && rtp > 0.0 => {
            Some(Interval::symmetric(rtp.sqrt().min(tt.hi)))
        }
        _ => None,
    };
    Belts { t, tprime, omega: w }
}

#[inline]
fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[inline]
pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `∫_0^∞ y p(0, y) dy` for a bivariate normal density `p` with the pack's
/// moments. Conditioning on the first coordinate being zero leaves a normal
/// law with mean `m` and standard deviation `s` for the second, so the
/// integral is `p_1(0) (s phi(m/s) + m Phi(m/s))`.
pub fn kr_density(mp: &MomentPack) -> Result<f64> {
    if !mp.is_positive_definite() {
        return Err(Error::InvalidMoment(format!(
            "covariance at t = {} is not positive definite (det = {:e})",
            mp.t,
            mp.det()
        )));
    }
    let [[a, b], [_, c]] = mp.sigma;
    let [m1, m2] = mp.mu;
    let marginal = (-0.5 * m1 * m1 / a).exp() / (2.0 * PI * a).sqrt();
    let m = m2 - b / a * m1;
    let s = (c - b * b / a).sqrt();
    let x = m / s;
    Ok(marginal * s * positive_part_mean(x))
}

/// `φ(x) + xΦ(x) = E[max(x + Z, 0)]`. Below `x = -3` the direct sum cancels badly, so it is
/// written as `φ(x) / (1 + z D(z))` with `z = -x` and `D` the tail of the Mills-ratio
/// continued fraction.
fn positive_part_mean(x: f64) -> f64 {
    if x > -3.0 {
        return std_normal_pdf(x) + x * std_normal_cdf(x);
    }
    let z = -x;
    let mut d = z;
    for k in (2..=80).rev() {
        d = z + k as f64 / d;
    }
    std_normal_pdf(x) / (1.0 + z * d)
}

/// Expected number of up-crossings of `F_n` over `region` under the Gaussian
/// approximation with exact moments.
pub fn kr_integral(n: u64, beta: f64, region: Interval) -> Result<f64> {
    if region.is_empty() {
        return Ok(0.0);
    }
    let q = Adaptive {
        abs_tol: 1e-6 * beta.sqrt() * region.len(),
        rel_tol: 0.0,
        max_intervals: 20_000,
    };
    let density = |t: f64| kr_density(&exact_moments(t, beta, n)).unwrap_or(0.0);
    // Split at the origin and at unit steps so the belt peaks are resolved from the start.
    let mut breaks = vec![region.lo];
    let mut k = region.lo.floor() + 1.0;
    while k < region.hi {
        breaks.push(k);
        k += 0.5;
    }
    breaks.push(region.hi);
    Ok(q.integrate_pieces(density, &breaks)?.value)
}

/// `∫_0^∞ u^k e^{-alpha u^2} du = Γ((k+1)/2) alpha^{-(k+1)/2} / 2`.
pub fn gaussian_moment(k: u32, alpha: f64) -> f64 {
    let p = (k as f64 + 1.0) / 2.0;
    0.5 * gamma(p) * alpha.powf(-p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::gauss_hermite;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Raw moments by Gauss–Hermite quadrature after completing the square,
    /// independent of the closed forms.
    fn quadrature_raw(t: f64, beta: f64) -> [f64; 5] {
        let rule = gauss_hermite(200);
        let moment = |power: f64, f: &dyn Fn(f64) -> f64| {
            let c = power * beta + 1.0;
            let shift = t / c;
            let scale = (2.0 / c).sqrt();
            let pref = (-power * beta * t * t / (2.0 * c)).exp() / (2.0 * PI).sqrt() * scale;
            pref * rule.sum(|x| f(scale * x + shift))
        };
        [
            moment(1.0, &|z| z),
            moment(1.0, &|z| 1.0 - beta * z * z),
            moment(2.0, &|z| z * z),
            moment(2.0, &|z| z * (1.0 - beta * z * z)),
            moment(2.0, &|z| (1.0 - beta * z * z).powi(2)),
        ]
    }

    #[test]
    fn closed_forms_at_reference_points() {
        let r = raw_moments(0.0, 1.0);
        assert_relative_eq!(r.gp, 2f64.powf(-1.5), max_relative = 1e-15);
        assert_eq!(exact_moments(0.0, 5.0, 7).mu[0], 0.0);
        let r = raw_moments(1.0, 3.0);
        assert_relative_eq!(r.g, (-0.375f64).exp() / 8.0, max_relative = 1e-15);
        assert_relative_eq!(r.g, 0.085_911_16, max_relative = 1e-7);
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for &beta in &[0.3, 1.0, 7.0, 100.0, 1e4] {
            for &t in &[-3.0, -0.7, 0.0, 0.4, 1.0, 2.5, 5.0] {
                let r = raw_moments(t, beta);
                let q = quadrature_raw(t, beta);
                // Moments that vanish by symmetry are compared on the scale
                // of their Cauchy–Schwarz bound.
                let scale = [r.gg.sqrt(), r.gpgp.sqrt(), r.gg, (r.gg * r.gpgp).sqrt(), r.gpgp];
                for ((got, want), sc) in [r.g, r.gp, r.gg, r.ggp, r.gpgp].iter().zip(q).zip(scale) {
                    assert!((got - want).abs() <= 1e-10 * want.abs().max(1e-6 * sc), "t={t} beta={beta}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn asymptotic_reference_values() {
        let mp = asymptotic_moments(0.0, 4.0, 9);
        assert_eq!(mp.mu, [0.0, 3.0 / 8.0]);
        let mp = asymptotic_moments(0.5, 4.0, 9);
        assert!(mp.sigma[0][1] < 0.0);
    }

    #[test]
    fn belt_params_at_origin() {
        let bp = belt_params(0.0, 300.0, 100_000);
        assert_eq!(bp.a, 0.0);
        assert_relative_eq!(bp.delta, 1e5f64.sqrt() * 300f64.powf(-1.5), max_relative = 1e-14);
        assert!(bp.big_delta >= bp.delta);
        // Continuous extension: nearby t gives nearly the same delta.
        let near = belt_params(1e-6, 300.0, 100_000);
        assert_relative_eq!(near.delta, bp.delta, max_relative = 1e-9);
    }

    #[test]
    fn a_t_scaling_ratio_is_bounded() {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for &beta in &[100.0, 300.0, 1000.0, 3000.0, 1e4] {
            let n = 1_000_000u64;
            let Some(t_int) = intervals_t(n, beta).t else { continue };
            for k in 1..=40 {
                let t = t_int.hi * k as f64 / 40.0;
                let bp = belt_params(t, beta, n);
                let r = bp.a / (beta.powf(-1.5) * n as f64 * t * t * (-0.5 * t * t).exp());
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        assert!(lo > 0.1 && hi < 10.0, "ratio range [{lo}, {hi}]");
    }

    #[test]
    fn interval_reference_values() {
        let b = intervals_t(10_000, 100.0);
        let tp = b.tprime.unwrap();
        assert_relative_eq!(tp.hi, (2.0 * 1e4f64.ln() - 3.0 * 100f64.ln()).sqrt(), max_relative = 1e-15);
        assert!((tp.hi - 2.1460).abs() < 1e-4);
        assert!(intervals_t(10_000, 500.0).tprime.is_none());
        assert!(intervals_t(10_000, 1e9).t.is_none());
        assert_eq!(omega(2.0), 1.0);
        assert_eq!(omega(0.5), 1.0);
        assert_relative_eq!(omega(1e6), 1e6f64.ln().ln().sqrt());
    }

    #[test]
    fn tprime_never_exceeds_t() {
        for &beta in &[1.01, 1.2, 1.5, 2.0, 10.0, 100.0] {
            let b = intervals_t(1000, beta);
            if let (Some(t), Some(tp)) = (b.t, b.tprime) {
                assert!(tp.hi <= t.hi);
            }
        }
    }

    #[test]
    fn kr_density_standard_case() {
        let mp = MomentPack {
            t: 0.0,
            beta: 1.0,
            n: 1,
            mu: [0.0, 0.0],
            sigma: [[1.0, 0.0], [0.0, 1.0]],
            exact: true,
        };
        assert_relative_eq!(kr_density(&mp).unwrap(), 1.0 / (2.0 * PI), max_relative = 1e-15);
        let bad = MomentPack {
            sigma: [[1.0, 2.0], [2.0, 1.0]],
            ..mp
        };
        assert!(matches!(kr_density(&bad), Err(Error::InvalidMoment(_))));
    }

    #[test]
    fn kr_density_is_even() {
        for &t in &[0.3, 1.1, 2.7, 3.9] {
            let a = kr_density(&exact_moments(t, 300.0, 100_000)).unwrap();
            let b = kr_density(&exact_moments(-t, 300.0, 100_000)).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn e_to_minus_a_below_one_off_origin() {
        assert_eq!((-belt_params(0.0, 100.0, 10_000).a).exp(), 1.0);
        for k in 1..50 {
            let t = k as f64 * 0.1;
            assert!((-belt_params(t, 100.0, 10_000).a).exp() < 1.0);
            assert!((-belt_params(-t, 100.0, 10_000).a).exp() < 1.0);
        }
    }

    #[test]
    fn gaussian_moment_values() {
        assert_relative_eq!(gaussian_moment(0, 1.0), PI.sqrt() / 2.0, max_relative = 1e-14);
        assert_relative_eq!(gaussian_moment(1, 1.0), 0.5, max_relative = 1e-14);
        // Γ(5/2) = 3√π/4
        let want = 0.5 * 0.75 * PI.sqrt() * 2f64.powf(-2.5);
        assert_relative_eq!(gaussian_moment(4, 2.0), want, max_relative = 1e-14);
        let q = Adaptive::new(1e-14, 1e-13)
            .integrate(|u| u.powi(4) * (-2.0 * u * u).exp(), 0.0, 30.0)
            .unwrap();
        assert_relative_eq!(gaussian_moment(4, 2.0), q.value, max_relative = 1e-12);
    }

    #[test]
    fn positive_part_mean_is_continuous_and_accurate_in_the_tail() {
        let lo = positive_part_mean(-3.0 - 1e-12);
        let hi = positive_part_mean(-3.0 + 1e-12);
        assert_relative_eq!(lo, hi, max_relative = 1e-11);
        // E[max(x + Z, 0)] ~ φ(x) / x² (1 - 3/x² + 15/x⁴) as x → -∞
        let x = -40.0f64;
        let asym = std_normal_pdf(x) / (x * x) * (1.0 - 3.0 / (x * x) + 15.0 / x.powi(4));
        assert_relative_eq!(positive_part_mean(x), asym, max_relative = 1e-7);
        let q = Adaptive::new(0.0, 1e-13)
            .integrate(std_normal_cdf, -60.0, -12.0)
            .unwrap();
        assert_relative_eq!(positive_part_mean(-12.0), q.value, max_relative = 1e-10);
    }

    #[test]
    fn kr_integral_of_empty_region() {
        assert_eq!(kr_integral(1000, 10.0, Interval::new(1.0, 1.0)).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn parity(t in 0.0f64..4.0, beta in 0.5f64..1e4, n in 1u64..1_000_000) {
            for exact in [true, false] {
                let f = if exact { exact_moments } else { asymptotic_moments };
                let (p, m) = (f(t, beta, n), f(-t, beta, n));
                prop_assert_eq!(m.mu[0], -p.mu[0]);
                prop_assert_eq!(m.mu[1], p.mu[1]);
                prop_assert_eq!(m.sigma[0][0], p.sigma[0][0]);
                prop_assert_eq!(m.sigma[1][1], p.sigma[1][1]);
                prop_assert_eq!(m.sigma[0][1], -p.sigma[0][1]);
            }
        }

        #[test]
        fn exact_covariance_positive_definite(t in -6.0f64..6.0, beta in 0.1f64..1e4) {
            let mp = exact_moments(t, beta, 10);
            prop_assert!(mp.sigma[0][0] > 0.0 && mp.sigma[1][1] > 0.0);
            prop_assert!(mp.det() > 0.0);
        }

        #[test]
        fn whitening_inverts_covariance(t in -3.0f64..3.0, beta in 1.0f64..1e3) {
            let mp = exact_moments(t, beta, 10);
            let w = mp.whitening().unwrap();
            let s = mp.sigma;
            // W S W = I
            let ws = [[w[0][0]*s[0][0]+w[0][1]*s[1][0], w[0][0]*s[0][1]+w[0][1]*s[1][1]],
                      [w[1][0]*s[0][0]+w[1][1]*s[1][0], w[1][0]*s[0][1]+w[1][1]*s[1][1]]];
            for i in 0..2 { for j in 0..2 {
                let v = ws[i][0]*w[0][j] + ws[i][1]*w[1][j];
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((v - want).abs() < 1e-9);
            }}
        }
    }
}
