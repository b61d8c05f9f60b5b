//! Monte Carlo sweeps over `β`, power-law fits, belt statistics and the
//! mode-location histogram, plus CSV/JSON persistence.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gkde::{draw_samples, WINDOW};
use crate::kacrice::{exact_moments, intervals_t, kr_density, omega, OMEGA_RULE};
use crate::modes::find_modes;
use crate::rng::derive_seed;

/// One trial of a sweep. Field names are the CSV header.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub seed: u64,
    pub n: u64,
    pub beta: f64,
    pub trial: u64,
    pub mode_count: usize,
    pub in_tprime: usize,
    pub in_t_not_tprime: usize,
    pub outside_t: usize,
}

pub const CSV_HEADER: &str = "seed,n,beta,trial,mode_count,in_tprime,in_t_not_tprime,outside_t";

/// A trial's record together with its mode locations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub record: SweepRecord,
    pub modes: Vec<f64>,
}

/// `points` values from `lo` to `hi` inclusive, evenly spaced in `log β`.
pub fn geometric_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || points == 0 || (points == 1 && hi != lo) {
        return Err(Error::invalid(format!("bad geometric grid [{lo}, {hi}] with {points} points")));
    }
    if points == 1 {
        return Ok(vec![lo]);
    }
    let ratio = (hi / lo).ln() / (points - 1) as f64;
    Ok((0..points)
        .map(|i| match i {
            0 => lo,
            i if i == points - 1 => hi,
            i => lo * (ratio * i as f64).exp(),
        })
        .collect())
}

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("beta must be positive and finite, got {beta}")))
    }
}

/// `trials` independent trials at one `β`; trial `k` uses the seed
/// `derive_seed(master_seed, [beta_index, k])`.
pub fn run_trials(n: u64, beta: f64, beta_index: usize, trials: usize, master_seed: u64) -> Result<Vec<TrialOutcome>> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    check_beta(beta)?;
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let seed = derive_seed(master_seed, &[beta_index as u64, trial as u64]);
            let samples = draw_samples(n as usize, beta, seed)?;
            let report = find_modes(&samples)?;
            let c = report.counts_by_region;
            Ok(TrialOutcome {
                record: SweepRecord {
                    seed,
                    n,
                    beta,
                    trial: trial as u64,
                    mode_count: report.mode_count,
                    in_tprime: c.in_tprime,
                    in_t_not_tprime: c.in_t_not_tprime,
                    outside_t: c.outside_t,
                },
                modes: report.maxima().collect(),
            })
        })
        .collect()
}

/// Records for every `(β, trial)` pair, ordered by `β` index then trial.
pub fn run_sweep(n: u64, betas: &[f64], trials: usize, master_seed: u64) -> Result<Vec<SweepRecord>> {
    if betas.is_empty() {
        return Err(Error::invalid("beta grid is empty"));
    }
    betas.iter().try_for_each(|&b| check_beta(b))?;
    let mut out = Vec::with_capacity(betas.len() * trials);
    for (i, &beta) in betas.iter().enumerate() {
        out.extend(run_trials(n, beta, i, trials, master_seed)?.into_iter().map(|o| o.record));
    }
    Ok(out)
}

/// Per-`β` statistics of a set of records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaStats {
    pub beta: f64,
    pub trials: usize,
    pub mean: f64,
    pub stderr: f64,
    pub mean_in_tprime: f64,
    pub mean_in_t_not_tprime: f64,
    pub mean_outside_t: f64,
}

/// Groups records by `β` (ascending). Integer sums keep the result
/// independent of record order.
pub fn beta_stats(records: &[SweepRecord]) -> Vec<BetaStats> {
    #[derive(Default)]
    struct Acc {
        k: u64,
        s: u64,
        s2: u128,
        tp: u64,
        tn: u64,
        out: u64,
    }
    let mut groups: BTreeMap<u64, Acc> = BTreeMap::new();
    for r in records {
        // Positive floats order like their bit patterns.
        let a = groups.entry(r.beta.to_bits()).or_default();
        let m = r.mode_count as u64;
        a.k += 1;
        a.s += m;
        a.s2 += (m as u128) * (m as u128);
        a.tp += r.in_tprime as u64;
        a.tn += r.in_t_not_tprime as u64;
        a.out += r.outside_t as u64;
    }
    groups
        .into_iter()
        .map(|(bits, a)| {
            let k = a.k as f64;
            let mean = a.s as f64 / k;
            let stderr = if a.k > 1 {
                // Exact integer numerator for the sample variance.
                let num = (a.k as u128 * a.s2 - (a.s as u128) * (a.s as u128)) as f64;
                (num / (k * (k - 1.0)) / k).sqrt()
            } else {
                0.0
            };
            BetaStats {
                beta: f64::from_bits(bits),
                trials: a.k as usize,
                mean,
                stderr,
                mean_in_tprime: a.tp as f64 / k,
                mean_in_t_not_tprime: a.tn as f64 / k,
                mean_outside_t: a.out as f64 / k,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub amplitude: f64,
    pub exponent: f64,
    pub r2: f64,
    pub points: usize,
}

/// Least squares of `log mean` on `log β`.
pub fn fit_means(betas: &[f64], means: &[f64]) -> Result<FitResult> {
    if betas.len() != means.len() {
        return Err(Error::invalid("betas and means differ in length"));
    }
    if betas.len() < 3 {
        return Err(Error::InsufficientData(format!("power-law fit needs at least 3 beta values, got {}", betas.len())));
    }
    if betas.iter().chain(means).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::invalid("power-law fit needs positive finite betas and means"));
    }
    let x: Vec<f64> = betas.iter().map(|b| b.ln()).collect();
    let y: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let k = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / k, y.iter().sum::<f64>() / k);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("power-law fit needs distinct beta values".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(FitResult {
        amplitude: intercept.exp(),
        exponent: slope,
        r2: r2.clamp(0.0, 1.0),
        points: x.len(),
    })
}

/// Power law through the per-`β` mean mode counts.
pub fn power_law_fit(records: &[SweepRecord]) -> Result<FitResult> {
    let stats = beta_stats(records);
    let betas: Vec<f64> = stats.iter().map(|s| s.beta).collect();
    let means: Vec<f64> = stats.iter().map(|s| s.mean).collect();
    fit_means(&betas, &means)
}

/// Parameters that produced a sweep, echoed into its summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n: u64,
    pub betas: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
    pub window: f64,
    pub omega_rule: String,
}

impl SweepConfig {
    pub fn new(n: u64, betas: Vec<f64>, trials: usize, master_seed: u64) -> Self {
        Self {
            n,
            betas,
            trials,
            master_seed,
            window: WINDOW,
            omega_rule: OMEGA_RULE.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub n: u64,
    pub omega_rule: String,
    pub fit: FitResult,
    pub betas: Vec<f64>,
    pub means: Vec<f64>,
    pub stderrs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<SweepConfig>,
}

pub fn summarize(n: u64, records: &[SweepRecord], config: Option<SweepConfig>) -> Result<SweepSummary> {
    let stats = beta_stats(records);
    let betas: Vec<f64> = stats.iter().map(|s| s.beta).collect();
    let means: Vec<f64> = stats.iter().map(|s| s.mean).collect();
    Ok(SweepSummary {
        n,
        omega_rule: OMEGA_RULE.to_string(),
        fit: fit_means(&betas, &means)?,
        betas,
        means,
        stderrs: stats.iter().map(|s| s.stderr).collect(),
        config,
    })
}

pub fn write_records_csv<W: Write>(records: &[SweepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<SweepRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::invalid(format!("unexpected CSV header {:?}", header.join(","))));
    }
    let records: Vec<SweepRecord> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    for r in &records {
        if r.in_tprime + r.in_t_not_tprime + r.outside_t != r.mode_count {
            return Err(Error::invalid(format!("record (beta {}, trial {}) does not sum across regions", r.beta, r.trial)));
        }
    }
    Ok(records)
}

/// Whether the mean number of modes outside `T` at `(n, β)` is within three
/// times `2 sqrt(β e^{ω(β)})`.
pub fn tail_check(records: &[SweepRecord], n: u64, beta: f64) -> Result<bool> {
    let sel: Vec<_> = records.iter().filter(|r| r.n == n && r.beta == beta).collect();
    if sel.is_empty() {
        return Err(Error::InsufficientData(format!("no records at n = {n}, beta = {beta}")));
    }
    let mean = sel.iter().map(|r| r.outside_t as f64).sum::<f64>() / sel.len() as f64;
    Ok(mean <= 3.0 * tail_bound(beta))
}

/// `2 sqrt(β e^{ω(β)})`.
pub fn tail_bound(beta: f64) -> f64 {
    2.0 * (beta * omega(beta).exp()).sqrt()
}

/// Pooled mode locations on `[-L, L]`, `L` = right end of `T` plus one,
/// next to the Kac-Rice density at the bin centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeHistogram {
    pub n: u64,
    pub beta: f64,
    pub trials: usize,
    pub half_width: f64,
    /// Right end of `T`.
    pub t_end: f64,
    pub centers: Vec<f64>,
    pub counts: Vec<u64>,
    /// Modes outside `[-L, L]`.
    pub overflow: u64,
    /// Empirical density over the bins with centre in `T`, unit mass there; zero elsewhere.
    pub empirical: Vec<f64>,
    /// `kr_density` normalized the same way.
    pub kac_rice: Vec<f64>,
    /// `∫_T |empirical - kac_rice|`.
    pub l1: f64,
}

impl ModeHistogram {
    pub fn bin_width(&self) -> f64 {
        2.0 * self.half_width / self.counts.len() as f64
    }

    /// Mirrored bin pairs agree to within `rel` of their mean count, or four
    /// binomial standard deviations when that is larger (sparse bins).
    pub fn is_symmetric(&self, rel: f64) -> bool {
        let b = self.counts.len();
        (0..b / 2).all(|i| {
            let (x, y) = (self.counts[i] as f64, self.counts[b - 1 - i] as f64);
            (x - y).abs() <= (rel * 0.5 * (x + y)).max(4.0 * (x + y).sqrt())
        })
    }
}

/// Histogram of pooled mode locations from `modes` (collected over `trials` trials).
pub fn histogram_from_modes(n: u64, beta: f64, trials: usize, modes: &[f64], bins: usize) -> Result<ModeHistogram> {
    if bins < 20 {
        return Err(Error::invalid(format!("need at least 20 bins, got {bins}")));
    }
    check_beta(beta)?;
    let belts = intervals_t(n, beta);
    let t = belts
        .t
        .ok_or_else(|| Error::invalid(format!("T is empty at n = {n}, beta = {beta}")))?;
    let half_width = t.hi + 1.0;
    let width = 2.0 * half_width / bins as f64;
    let mut counts = vec![0u64; bins];
    let mut overflow = 0;
    for &m in modes {
        let idx = ((m + half_width) / width).floor();
        if idx >= 0.0 && (idx as usize) < bins {
            counts[idx as usize] += 1;
        } else {
            overflow += 1;
        }
    }
    let centers: Vec<f64> = (0..bins).map(|i| -half_width + (i as f64 + 0.5) * width).collect();
    let inside: Vec<bool> = centers.iter().map(|&c| t.contains(c)).collect();
    let kr: Vec<f64> = centers
        .iter()
        .zip(&inside)
        .map(|(&c, &ins)| if ins { kr_density(&exact_moments(c, beta, n)) } else { Ok(0.0) })
        .collect::<Result<_>>()?;
    let normalize = |v: Vec<f64>| -> Vec<f64> {
        let mass: f64 = v.iter().zip(&inside).filter(|(_, &i)| i).map(|(x, _)| x * width).sum();
        v.iter()
            .zip(&inside)
            .map(|(x, &i)| if i && mass > 0.0 { x / mass } else { 0.0 })
            .collect()
    };
    let empirical = normalize(counts.iter().map(|&c| c as f64).collect());
    let kac_rice = normalize(kr);
    let l1 = empirical.iter().zip(&kac_rice).map(|(a, b)| (a - b).abs() * width).sum();
    Ok(ModeHistogram {
        n,
        beta,
        trials,
        half_width,
        t_end: t.hi,
        centers,
        counts,
        overflow,
        empirical,
        kac_rice,
        l1,
    })
}

/// Runs `trials` trials at `(n, β)` and bins their modes.
pub fn mode_histogram(n: u64, beta: f64, trials: usize, bins: usize, master_seed: u64) -> Result<ModeHistogram> {
    if bins < 20 {
        return Err(Error::invalid(format!("need at least 20 bins, got {bins}")));
    }
    let outcomes = run_trials(n, beta, 0, trials, master_seed)?;
    let modes: Vec<f64> = outcomes.iter().flat_map(|o| o.modes.iter().copied()).collect();
    histogram_from_modes(n, beta, trials, &modes, bins)
}
