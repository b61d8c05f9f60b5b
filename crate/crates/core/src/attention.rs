//! Self-attention dynamics on the unit circle.
//!
//! Particle `i` sits at `x_i = (cos θ_i, sin θ_i)` and moves by
//! `dx_i/dτ = Σ_j softmax_j(β⟨x_i, x_j⟩) P⊥_{x_i}(x_j)`. On the circle this is
//! the angle equation `θ_i' = Σ_j w_ij sin(θ_j − θ_i)` with
//! `w_ij ∝ e^{β cos(θ_j − θ_i)}`, which is what the integrator advances.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Largest stable step relative to `1/β`.
pub const MAX_STEP_BETA: f64 = 0.1;
pub const DEFAULT_GAP_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    angles: Vec<f64>,
    beta: f64,
    time: f64,
}

fn wrap(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if w >= TAU {
        0.0
    } else {
        w
    }
}

impl ParticleState {
    /// Angles are wrapped into `[0, 2π)`.
    pub fn new(angles: Vec<f64>, beta: f64) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::invalid("need at least one particle"));
        }
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::invalid(format!("beta must be positive and finite, got {beta}")));
        }
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("angles must be finite"));
        }
        Ok(Self {
            angles: angles.into_iter().map(wrap).collect(),
            beta,
            time: 0.0,
        })
    }

    /// `n` iid uniform angles.
    pub fn uniform(n: usize, beta: f64, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        Self::new((0..n).map(|_| rng.gen::<f64>() * TAU).collect(), beta)
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn n(&self) -> usize {
        self.angles.len()
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.angles.iter().map(|a| [a.cos(), a.sin()]).collect()
    }

    /// `Σ_{i,j} e^{β(⟨x_i, x_j⟩ − 1)}`, the interaction energy scaled by `e^{-β}`.
    pub fn energy(&self) -> f64 {
        let b = self.beta;
        self.angles
            .iter()
            .map(|&ti| self.angles.iter().map(|&tj| (b * ((tj - ti).cos() - 1.0)).exp()).sum::<f64>())
            .sum()
    }
}

/// Velocities `dx_i/dτ` from the softmax form, O(n²). The self term fixes the
/// largest logit at `β`, which is subtracted before exponentiating.
pub fn attention_rhs(state: &ParticleState) -> Vec<[f64; 2]> {
    velocity_direct(&state.angles, state.beta)
        .into_iter()
        .zip(&state.angles)
        .map(|(w, &a)| [-w * a.sin(), w * a.cos()])
        .collect()
}

/// Angular velocities `θ_i'`, O(n²).
pub fn velocity_direct(angles: &[f64], beta: f64) -> Vec<f64> {
    angles
        .iter()
        .map(|&ti| {
            let (mut num, mut den) = (0.0, 0.0);
            for &tj in angles {
                let d = tj - ti;
                let w = (beta * (d.cos() - 1.0)).exp();
                num += w * d.sin();
                den += w;
            }
            num / den
        })
        .collect()
}

/// `I_k(β) e^{-β}` for `k = 0..`, truncated once terms fall below `1e-18`
/// of the leading one. Miller's backward recurrence, normalized with
/// `I_0 + 2 Σ I_k = e^β`.
pub fn scaled_bessel_i(beta: f64) -> Vec<f64> {
    let start = (92.0 * beta).sqrt().ceil() as usize + 30;
    let mut vals = vec![0.0; start + 2];
    vals[start] = 1.0;
    for k in (1..=start).rev() {
        vals[k - 1] = vals[k + 1] + 2.0 * k as f64 / beta * vals[k];
        if vals[k - 1] > 1e250 {
            vals.iter_mut().for_each(|v| *v *= 1e-250);
        }
    }
    let norm = vals[0] + 2.0 * vals[1..].iter().sum::<f64>();
    let mut out: Vec<f64> = vals.iter().map(|v| v / norm).collect();
    let cut = out.iter().position(|&v| v < 1e-18 * out[0]).unwrap_or(out.len());
    out.truncate(cut.max(1));
    out
}

/// Angular velocities through the expansion
/// `e^{β cos Δ} = I_0 + 2 Σ_k I_k cos kΔ`, so that
/// `Σ_j e^{β cos Δ_ij} = e^β (Ĩ_0 n + 2 Σ_k Ĩ_k Re(S_k z̄_i^k))` and
/// `Σ_j e^{β cos Δ_ij} sin Δ_ij = e^β (2/β) Σ_k k Ĩ_k Im(S_k z̄_i^k)`,
/// with `S_k = Σ_j z_j^k`. Costs O(nK).
pub fn velocity_fourier(angles: &[f64], beta: f64, coeffs: &[f64]) -> Vec<f64> {
    let n = angles.len();
    let kmax = coeffs.len() - 1;
    let zr: Vec<f64> = angles.iter().map(|a| a.cos()).collect();
    let zi: Vec<f64> = angles.iter().map(|a| a.sin()).collect();
    // Split real/imaginary arrays with particles innermost, so each power
    // step is independent across particles. Powers are rebuilt in the second
    // pass rather than stored.
    let advance = |pr: &mut [f64], pi: &mut [f64]| {
        for j in 0..n {
            let (a, b) = (pr[j], pi[j]);
            pr[j] = a * zr[j] - b * zi[j];
            pi[j] = a * zi[j] + b * zr[j];
        }
    };
    let (mut pr, mut pi) = (zr.clone(), zi.clone());
    let mut sums = Vec::with_capacity(kmax);
    for k in 1..=kmax {
        if k > 1 {
            advance(&mut pr, &mut pi);
        }
        sums.push((pr.iter().sum::<f64>(), pi.iter().sum::<f64>()));
    }
    pr.copy_from_slice(&zr);
    pi.copy_from_slice(&zi);
    let mut den = vec![coeffs[0] * n as f64; n];
    let mut num = vec![0.0; n];
    for k in 1..=kmax {
        if k > 1 {
            advance(&mut pr, &mut pi);
        }
        // Re and Im of S_k conj(z_i)^k.
        let (sr, si) = sums[k - 1];
        let (cd, cn) = (2.0 * coeffs[k], k as f64 * coeffs[k]);
        for i in 0..n {
            den[i] += cd * (sr * pr[i] + si * pi[i]);
            num[i] += cn * (si * pr[i] - sr * pi[i]);
        }
    }
    num.iter().zip(&den).map(|(a, d)| 2.0 / beta * a / d).collect()
}

enum Kernel {
    Direct,
    Fourier(Vec<f64>),
}

impl Kernel {
    fn pick(n: usize, beta: f64) -> Self {
        let coeffs = scaled_bessel_i(beta);
        if 2 * coeffs.len() < n {
            Kernel::Fourier(coeffs)
        } else {
            Kernel::Direct
        }
    }

    fn velocity(&self, angles: &[f64], beta: f64) -> Vec<f64> {
        match self {
            Kernel::Direct => velocity_direct(angles, beta),
            Kernel::Fourier(c) => velocity_fourier(angles, beta, c),
        }
    }
}

/// `steps` classical RK4 steps of size `dt` on the angles, wrapping back to
/// `[0, 2π)` after each step. Requires `dt ≤ 0.1/β`.
pub fn integrate(state: &ParticleState, dt: f64, steps: usize) -> Result<ParticleState> {
    let beta = state.beta;
    if !(dt > 0.0 && dt <= MAX_STEP_BETA / beta * (1.0 + 1e-12)) {
        return Err(Error::invalid(format!("dt = {dt} outside (0, {}]", MAX_STEP_BETA / beta)));
    }
    let kernel = Kernel::pick(state.n(), beta);
    let mut theta = state.angles.clone();
    let mut stage = vec![0.0; theta.len()];
    for step in 0..steps {
        let k1 = kernel.velocity(&theta, beta);
        let offset = |k: &[f64], h: f64, out: &mut Vec<f64>| {
            out.iter_mut().zip(&theta).zip(k).for_each(|((o, t), v)| *o = t + h * v);
        };
        offset(&k1, 0.5 * dt, &mut stage);
        let k2 = kernel.velocity(&stage, beta);
        offset(&k2, 0.5 * dt, &mut stage);
        let k3 = kernel.velocity(&stage, beta);
        offset(&k3, dt, &mut stage);
        let k4 = kernel.velocity(&stage, beta);
        for (i, t) in theta.iter_mut().enumerate() {
            *t = wrap(*t + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Numeric(format!("non-finite angle after step {}", step + 1)));
        }
    }
    Ok(ParticleState {
        angles: theta,
        beta,
        time: state.time + dt * steps as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub count: usize,
    /// Circular means, in `[0, 2π)`.
    pub centers: Vec<f64>,
    pub sizes: Vec<usize>,
}

/// Groups particles whose circular neighbor gap is below
/// `gap_fraction · 2π/√β`.
pub fn count_clusters(state: &ParticleState, gap_fraction: f64) -> ClusterReport {
    let threshold = gap_fraction * TAU / state.beta.sqrt();
    let mut sorted = state.angles.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let gap_after = |i: usize| {
        if i + 1 < n {
            sorted[i + 1] - sorted[i]
        } else {
            sorted[0] + TAU - sorted[n - 1]
        }
    };
    let cuts: Vec<usize> = (0..n).filter(|&i| gap_after(i) >= threshold).collect();
    let groups: Vec<Vec<f64>> = if cuts.is_empty() {
        vec![sorted.clone()]
    } else {
        // Each group starts right after a cut and runs to the next cut, wrapping.
        cuts.iter()
            .enumerate()
            .map(|(c, &cut)| {
                let end = cuts[(c + 1) % cuts.len()];
                let mut g = Vec::new();
                let mut i = (cut + 1) % n;
                loop {
                    g.push(sorted[i]);
                    if i == end {
                        break;
                    }
                    i = (i + 1) % n;
                }
                g
            })
            .collect()
    };
    let centers = groups
        .iter()
        .map(|g| {
            let (s, c) = g.iter().fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
            wrap(s.atan2(c))
        })
        .collect();
    ClusterReport {
        count: groups.len(),
        centers,
        sizes: groups.iter().map(Vec::len).collect(),
    }
}

/// Cluster-count run: uniform start, horizon `τ = 20`, `dt = 0.05/β`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub n: usize,
    pub beta: f64,
    pub tau: f64,
    pub dt: f64,
    pub gap_fraction: f64,
}

impl Protocol {
    pub fn standard(n: usize, beta: f64) -> Self {
        Self {
            n,
            beta,
            tau: 20.0,
            dt: 0.05 / beta,
            gap_fraction: DEFAULT_GAP_FRACTION,
        }
    }

    pub fn steps(&self) -> usize {
        (self.tau / self.dt).round() as usize
    }

    pub fn run(&self, seed: u64) -> Result<(ParticleState, ClusterReport)> {
        let init = ParticleState::uniform(self.n, self.beta, seed)?;
        let end = integrate(&init, self.dt, self.steps())?;
        let report = count_clusters(&end, self.gap_fraction);
        Ok((end, report))
    }

    /// Independent runs seeded by `derive_seed(master, [run])`, in run order.
    pub fn run_many(&self, master: u64, runs: usize) -> Result<Vec<ClusterReport>> {
        (0..runs)
            .into_par_iter()
            .map(|r| self.run(derive_seed(master, &[r as u64])).map(|(_, rep)| rep))
            .collect()
    }
}

/// Shortest signed angular difference `a − b` in `(−π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}
