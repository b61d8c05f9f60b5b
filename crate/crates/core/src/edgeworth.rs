//! Third-order Edgeworth correction for the standardized Kac-Rice field.
//!
//! `Y = Sigma^{-1/2} ((G, G') - E(G, G'))` is the whitened single-sample
//! vector; its third cumulants `kappa^{(k, 3-k)} = E[Y_1^k Y_2^{3-k}]` define
//! the correction `psi`, and `phi + n^{-1/2} psi` is the two-term Edgeworth
//! model for the density of `n^{-1/2} sum_i Y_i`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::gkde::WINDOW;
use crate::kacrice::{exact_moments, inv_sqrt_spd, std_normal_cdf};
use crate::quad::{gauss_hermite, Adaptive};
use crate::rng::{derive_seed, rng_from_seed};

/// Gauss–Hermite nodes used for the raw moments.
pub const HERMITE_NODES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeworthPack {
    pub t: f64,
    pub beta: f64,
    /// `kappa[k] = kappa^{(k, 3-k)}`, `k` counting powers of the first coordinate.
    pub kappa: [f64; 4],
    /// `E |Y|^3`.
    pub eta3: f64,
    /// `(beta e^{t^2})^{1/4}`.
    pub eta_bound3: f64,
    /// `(E G, E G')` for one sample.
    pub mean: [f64; 2],
    /// Covariance of `(G, G')` for one sample.
    pub sigma: [[f64; 2]; 2],
    /// `Sigma^{-1/2}`.
    pub whitening: [[f64; 2]; 2],
}

/// Raw moments `E[G^a G'^b]`, `a + b <= 3`, indexed `[a][b]`.
///
/// `E[G^a G'^b] = (2 pi)^{-1/2} ∫ z^a (1 - beta z^2)^b e^{-m beta z^2/2 - (z-t)^2/2} dz`
/// with `m = a + b`. Completing the square (`c = m beta + 1`, `u = z - t/c`)
/// leaves a polynomial against `e^{-c u^2/2}`, which Gauss–Hermite integrates
/// exactly.
pub fn raw_moment_table(t: f64, beta: f64) -> [[f64; 4]; 4] {
    let rule = gauss_hermite(HERMITE_NODES);
    let mut table = [[0.0; 4]; 4];
    table[0][0] = 1.0;
    for m in 1..=3usize {
        let c = m as f64 * beta + 1.0;
        let shift = t / c;
        let scale = (2.0 / c).sqrt();
        let pref = (-(m as f64) * beta * t * t / (2.0 * c)).exp() / (2.0 * PI).sqrt() * scale;
        for a in 0..=m {
            let b = m - a;
            if t == 0.0 && a % 2 == 1 {
                // Odd in z; exact zero rather than a rounding residue.
                table[a][b] = 0.0;
                continue;
            }
            table[a][b] = pref
                * rule.sum(|x| {
                    let z = scale * x + shift;
                    z.powi(a as i32) * (1.0 - beta * z * z).powi(b as i32)
                });
        }
    }
    table
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Standardized third cumulants, `eta_3` and the whitening data at `(t, beta)`.
pub fn standardized_cumulants(t: f64, beta: f64) -> Result<EdgeworthPack> {
    if !(t.is_finite() && beta.is_finite() && beta > 0.0) {
        return Err(Error::invalid(format!("need finite t and positive beta, got t = {t}, beta = {beta}")));
    }
    let raw = raw_moment_table(t, beta);
    let (g0, p0) = (raw[1][0], raw[0][1]);
    // Central moments M[a][b] = E[(G - g0)^a (G' - p0)^b].
    let mut central = [[0.0; 4]; 4];
    for a in 0..=3usize {
        for b in 0..=(3 - a) {
            let mut acc = 0.0;
            for i in 0..=a {
                for j in 0..=b {
                    acc += binom(a, i) * binom(b, j) * (-g0).powi((a - i) as i32) * (-p0).powi((b - j) as i32) * raw[i][j];
                }
            }
            central[a][b] = acc;
        }
    }
    let sigma = [[central[2][0], central[1][1]], [central[1][1], central[0][2]]];
    let w = inv_sqrt_spd(sigma)?;

    let mut kappa = [0.0; 4];
    for (k, slot) in kappa.iter_mut().enumerate() {
        let coords: [usize; 3] = std::array::from_fn(|i| usize::from(i >= k));
        let mut acc = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    let zeros = [a, b, c].iter().filter(|&&i| i == 0).count();
                    acc += w[coords[0]][a] * w[coords[1]][b] * w[coords[2]][c] * central[zeros][3 - zeros];
                }
            }
        }
        *slot = acc;
    }

    let y_norm3 = |z: f64| {
        let e = (-0.5 * beta * z * z).exp();
        let d = [z * e - g0, (1.0 - beta * z * z) * e - p0];
        let y0 = w[0][0] * d[0] + w[0][1] * d[1];
        let y1 = w[1][0] * d[0] + w[1][1] * d[1];
        (y0 * y0 + y1 * y1).powf(1.5) * (-0.5 * (z - t) * (z - t)).exp() / (2.0 * PI).sqrt()
    };
    let h = beta.sqrt().recip();
    let mut breaks: Vec<f64> = [-12.0, -6.0, -3.0, -1.0, 0.0, 1.0, 3.0, 6.0, 12.0]
        .iter()
        .map(|k| k * h)
        .chain([t - 12.0, t + 12.0])
        .filter(|&z| z >= t - 12.0 && z <= t + 12.0)
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let eta3 = Adaptive {
        abs_tol: 0.0,
        rel_tol: 1e-10,
        max_intervals: 20_000,
    }
    .integrate_pieces(y_norm3, &breaks)
    .map_err(|e| Error::Numeric(format!("eta_3 quadrature at t = {t}, beta = {beta}: {e}")))?
    .value;

    Ok(EdgeworthPack {
        t,
        beta,
        kappa,
        eta3,
        eta_bound3: (beta * (t * t).exp()).powf(0.25),
        mean: [g0, p0],
        sigma,
        whitening: w,
    })
}

/// Probabilists' Hermite polynomial `He_k(x)`.
pub fn hermite(k: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if k == 0 {
        return 1.0;
    }
    for j in 1..k {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Bivariate Hermite polynomial `H^alpha(x) = (-1)^{|alpha|} phi^{-1} ∂^alpha phi`
/// for the standard bivariate normal, which factorizes into `He_{a1}(x1) He_{a2}(x2)`.
pub fn hermite2(alpha: [usize; 2], x: [f64; 2]) -> f64 {
    hermite(alpha[0], x[0]) * hermite(alpha[1], x[1])
}

/// Standard bivariate normal density.
pub fn phi2(x: [f64; 2]) -> f64 {
    (-0.5 * (x[0] * x[0] + x[1] * x[1])).exp() / (2.0 * PI)
}

const FACT: [f64; 4] = [1.0, 1.0, 2.0, 6.0];

/// `psi(x) = phi(x) sum_k kappa^{(k,3-k)} / (k! (3-k)!) H^{(k,3-k)}(x)`.
pub fn psi_eval(ep: &EdgeworthPack, x: [f64; 2]) -> f64 {
    let sum: f64 = (0..4)
        .map(|k| ep.kappa[k] / (FACT[k] * FACT[3 - k]) * hermite2([k, 3 - k], x))
        .sum();
    phi2(x) * sum
}

/// `phi(x) + n^{-1/2} psi(x)`. Not a true density: it can dip below zero in the tails.
pub fn edgeworth_density(ep: &EdgeworthPack, n: u64, x: [f64; 2]) -> f64 {
    phi2(x) + psi_eval(ep, x) / (n as f64).sqrt()
}

/// Histogram domain half-width and bins per axis for [`validity_diagnostic`].
pub const HIST_HALF_WIDTH: f64 = 6.0;
pub const HIST_BINS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityRecord {
    pub n: u64,
    pub beta: f64,
    pub t: f64,
    pub trials: usize,
    pub seed: u64,
    pub bins: usize,
    pub half_width: f64,
    /// L1 distance between binned empirical masses and `phi`.
    pub l1_normal: f64,
    /// L1 distance to `phi + n^{-1/2} psi`.
    pub l1_edgeworth: f64,
    pub improved: bool,
    /// `sum_b sqrt(2 p_b (1 - p_b) / (pi trials))` over empirical bin masses: the
    /// L1 distance expected from binomial noise alone.
    pub noise_floor: f64,
    pub kappa: [f64; 4],
}

/// `∫_a^b He_j(u) phi(u) du`.
fn hermite_mass(j: usize, a: f64, b: f64) -> f64 {
    if j == 0 {
        return std_normal_cdf(b) - std_normal_cdf(a);
    }
    let pdf = |u: f64| (-0.5 * u * u).exp() / (2.0 * PI).sqrt();
    hermite(j - 1, a) * pdf(a) - hermite(j - 1, b) * pdf(b)
}

fn std_normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Draws from `N(0, 1)` conditioned on `[a, b]` by inversion, working in
/// whichever tail keeps the probabilities away from 1.
fn truncated_normal<R: Rng>(rng: &mut R, a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        let (lo, hi) = (std_normal_cdf(-b), std_normal_cdf(-a));
        -std_normal_quantile(lo + (hi - lo) * rng.gen::<f64>())
    } else if b <= 0.0 {
        let (lo, hi) = (std_normal_cdf(a), std_normal_cdf(b));
        std_normal_quantile(lo + (hi - lo) * rng.gen::<f64>())
    } else {
        let left = 0.5 - std_normal_cdf(a);
        let right = std_normal_cdf(b) - 0.5;
        if rng.gen::<f64>() * (left + right) < left {
            truncated_normal(rng, a, 0.0)
        } else {
            truncated_normal(rng, 0.0, b)
        }
    }
}

/// Probability that a standard normal lands in `[a, b]`.
fn normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        std_normal_cdf(-a) - std_normal_cdf(-b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
}

/// Simulates `trials` standardized field vectors `Sigma^{-1/2}((F_n, F_n')(t) - mu_t)`,
/// bins them on `[-6, 6]^2` (60×60) and reports L1 distances to `phi` and to
/// `phi + n^{-1/2} psi`.
///
/// Only samples inside the kernel window around `t` are drawn: their count is
/// binomial and, given the count, they are iid truncated normals. Samples
/// outside contribute below `e^{-W^2/2}` to the field, the same truncation
/// the KDE evaluation uses.
pub fn validity_diagnostic(n: u64, beta: f64, t: f64, trials: usize, seed: u64) -> Result<ValidityRecord> {
    if trials < 100 {
        return Err(Error::invalid(format!("validity diagnostic needs at least 100 trials, got {trials}")));
    }
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    let ep = standardized_cumulants(t, beta)?;
    let mp = exact_moments(t, beta, n);
    let w = ep.whitening;
    let radius = WINDOW / beta.sqrt();
    let (a, b) = (t - radius, t + radius);
    let p_win = normal_mass(a, b).clamp(0.0, 1.0);
    let binomial = Binomial::new(n, p_win).map_err(|e| Error::Numeric(format!("binomial({n}, {p_win}): {e}")))?;
    let scale = (n as f64).sqrt().recip();
    let bin_width = 2.0 * HIST_HALF_WIDTH / HIST_BINS as f64;

    let counts = (0..trials)
        .into_par_iter()
        .fold(
            || vec![0u64; HIST_BINS * HIST_BINS],
            |mut acc, trial| {
                let mut rng = rng_from_seed(derive_seed(seed, &[trial as u64]));
                let k = binomial.sample(&mut rng);
                let (mut f, mut fp) = (0.0, 0.0);
                for _ in 0..k {
                    let x = truncated_normal(&mut rng, a, b);
                    let u = t - x;
                    let bu2 = beta * u * u;
                    let g = (-0.5 * bu2).exp();
                    f += u * g;
                    fp += (1.0 - bu2) * g;
                }
                let d = [scale * f - mp.mu[0], scale * fp - mp.mu[1]];
                let y = [w[0][0] * d[0] + w[0][1] * d[1], w[1][0] * d[0] + w[1][1] * d[1]];
                let i = ((y[0] + HIST_HALF_WIDTH) / bin_width).floor();
                let j = ((y[1] + HIST_HALF_WIDTH) / bin_width).floor();
                if (0.0..HIST_BINS as f64).contains(&i) && (0.0..HIST_BINS as f64).contains(&j) {
                    acc[i as usize * HIST_BINS + j as usize] += 1;
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; HIST_BINS * HIST_BINS],
            |mut x, y| {
                x.iter_mut().zip(y).for_each(|(a, b)| *a += b);
                x
            },
        );

    let edges: Vec<f64> = (0..=HIST_BINS)
        .map(|i| -HIST_HALF_WIDTH + i as f64 * bin_width)
        .collect();
    let inv_sqrt_n = scale;
    let (mut l1_normal, mut l1_edgeworth, mut noise_floor) = (0.0, 0.0, 0.0);
    for i in 0..HIST_BINS {
        let (x0, x1) = (edges[i], edges[i + 1]);
        let hx: [f64; 4] = std::array::from_fn(|j| hermite_mass(j, x0, x1));
        for j in 0..HIST_BINS {
            let (y0, y1) = (edges[j], edges[j + 1]);
            let hy: [f64; 4] = std::array::from_fn(|j| hermite_mass(j, y0, y1));
            let normal = hx[0] * hy[0];
            let psi: f64 = (0..4)
                .map(|k| ep.kappa[k] / (FACT[k] * FACT[3 - k]) * hx[k] * hy[3 - k])
                .sum();
            let empirical = counts[i * HIST_BINS + j] as f64 / trials as f64;
            l1_normal += (empirical - normal).abs();
            noise_floor += (2.0 * empirical * (1.0 - empirical) / (PI * trials as f64)).sqrt();
            l1_edgeworth += (empirical - normal - inv_sqrt_n * psi).abs();
        }
    }

    Ok(ValidityRecord {
        n,
        beta,
        t,
        trials,
        seed,
        bins: HIST_BINS,
        half_width: HIST_HALF_WIDTH,
        l1_normal,
        l1_edgeworth,
        improved: l1_edgeworth <= l1_normal,
        noise_floor,
        kappa: ep.kappa,
    })
}
