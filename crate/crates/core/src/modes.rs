//! Enumeration of the critical points of a realized KDE.
//!
//! Critical points are sign changes of `P'`, equivalently of `F_n`. They are
//! bracketed on a grid of step `h/8`, refined by bisection, and classified by
//! crossing direction: an up-crossing of `F_n` (down-crossing of `P'`) is a
//! maximum. Tangential zeros of `P'` have probability zero and are not
//! reported.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gkde::{field_f, field_grid, flushed_exp, kde_jet, SampleSet, WINDOW};
use crate::kacrice::{intervals_t, Belts, Region};

/// Grid step for bracketing, in bandwidths.
pub const GRID_FRACTION: f64 = 1.0 / 8.0;
/// Padding beyond the extreme samples, in bandwidths.
pub const PADDING: f64 = 3.0;
/// Relative bisection width.
pub const BISECTION_WIDTH: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Maximum,
    Minimum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub location: f64,
    pub kind: Kind,
    /// KDE height at `location`.
    pub value: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionCounts {
    pub in_tprime: usize,
    pub in_t_not_tprime: usize,
    pub outside_t: usize,
}

impl RegionCounts {
    pub fn total(&self) -> usize {
        self.in_tprime + self.in_t_not_tprime + self.outside_t
    }

    fn add(&mut self, region: Region) {
        match region {
            Region::InTPrime => self.in_tprime += 1,
            Region::InTNotTPrime => self.in_t_not_tprime += 1,
            Region::OutsideT => self.outside_t += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub criticals: Vec<CriticalPoint>,
    pub mode_count: usize,
    pub counts_by_region: RegionCounts,
}

impl ModeReport {
    pub fn maxima(&self) -> impl Iterator<Item = f64> + '_ {
        self.criticals
            .iter()
            .filter(|c| c.kind == Kind::Maximum)
            .map(|c| c.location)
    }

    pub fn minima(&self) -> impl Iterator<Item = f64> + '_ {
        self.criticals
            .iter()
            .filter(|c| c.kind == Kind::Minimum)
            .map(|c| c.location)
    }
}

/// Bisects `f` on `[a, b]`, where `f(a)` and `f(b)` have opposite signs (or one is zero).
fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    let width = BISECTION_WIDTH * a.abs().max(b.abs()).max(1.0);
    while b - a > width {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// A number with the sign of `F_n(t)`, for points where the windowed sum is
/// exactly zero (gaps wider than the kernel window). Compares the positive and
/// negative parts of the sum in log space; only samples within `W h` of the
/// nearest one on each side matter, the rest are below `e^{-W^2/2}` of it.
fn far_sign(s: &SampleSet, t: f64) -> f64 {
    let xs = s.samples();
    let beta = s.beta();
    let reach = WINDOW * s.bandwidth();
    let log_sum = |ds: &mut dyn Iterator<Item = f64>| {
        let logs: Vec<f64> = ds.map(|d| d.ln() - 0.5 * beta * d * d).collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
    };
    let below = xs.partition_point(|&x| x < t);
    let above = xs.partition_point(|&x| x <= t);
    let left = match below.checked_sub(1) {
        Some(i) => {
            let d0 = t - xs[i];
            log_sum(&mut xs[..below].iter().rev().map(|x| t - x).take_while(|&d| d <= d0 + reach))
        }
        None => f64::NEG_INFINITY,
    };
    let right = match xs.get(above) {
        Some(&x0) => {
            let d0 = x0 - t;
            log_sum(&mut xs[above..].iter().map(|x| x - t).take_while(|&d| d <= d0 + reach))
        }
        None => f64::NEG_INFINITY,
    };
    match (left == f64::NEG_INFINITY, right == f64::NEG_INFINITY) {
        (true, true) => 0.0,
        (true, false) => -1.0,
        (false, true) => 1.0,
        _ => left - right,
    }
}

/// Every critical point of the KDE, in increasing order.
pub fn find_modes(s: &SampleSet) -> Result<ModeReport> {
    let h = s.bandwidth();
    let step = GRID_FRACTION * h;
    let start = s.min() - PADDING * h;
    let end = s.max() + PADDING * h;
    let len = ((end - start) / step).ceil() as usize + 1;
    let mut grid = field_grid(s, start, step, len)?;
    let at = |k: usize| start + k as f64 * step;
    for (k, g) in grid.iter_mut().enumerate() {
        if g.f == 0.0 {
            g.f = far_sign(s, at(k));
        }
    }
    let f = |t: f64| match field_f(s, t).map(|v| v.f) {
        Ok(v) if v == 0.0 => far_sign(s, t),
        Ok(v) => v,
        Err(_) => f64::NAN,
    };
    let fp = |t: f64| field_f(s, t).map(|v| v.fprime).unwrap_or(f64::NAN);

    // Zeros of F_n with the direction of crossing (true = up-crossing).
    let mut roots: Vec<(f64, bool)> = Vec::new();
    for k in 0..len - 1 {
        let (a, b) = (at(k), at(k + 1));
        let (fa, fb) = (grid[k].f, grid[k + 1].f);
        if fa == 0.0 {
            // Exact zero on the grid: keep it only when it is a genuine crossing.
            if k > 0 && grid[k - 1].f != 0.0 && (grid[k - 1].f < 0.0) != (fb < 0.0) {
                roots.push((a, fb > 0.0));
            }
            continue;
        }
        if fb == 0.0 {
            continue;
        }
        if (fa < 0.0) != (fb < 0.0) {
            roots.push((bisect(f, a, b, fa), fb > 0.0));
        } else if (grid[k].fprime < 0.0) != (grid[k + 1].fprime < 0.0) {
            // F_n has an extremum inside the cell; a pair of zeros hides
            // there when the extremum crosses the axis.
            let tm = bisect(fp, a, b, grid[k].fprime);
            let fm = f(tm);
            if fm != 0.0 && (fm < 0.0) != (fa < 0.0) {
                roots.push((bisect(f, a, tm, fa), fm > 0.0));
                roots.push((bisect(f, tm, b, fm), fb > 0.0));
            }
        }
    }

    let belts = intervals_t(s.n() as u64, s.beta());
    build_report(s, &roots, &belts)
}

fn build_report(s: &SampleSet, roots: &[(f64, bool)], belts: &Belts) -> Result<ModeReport> {
    let mut criticals = Vec::with_capacity(roots.len());
    let mut counts = RegionCounts::default();
    for &(location, up) in roots {
        let kind = if up { Kind::Maximum } else { Kind::Minimum };
        if kind == Kind::Maximum {
            counts.add(belts.classify(location));
        }
        criticals.push(CriticalPoint {
            location,
            kind,
            value: kde_jet(s, location)?.value,
        });
    }
    let mode_count = counts.total();
    let report = ModeReport {
        criticals,
        mode_count,
        counts_by_region: counts,
    };
    check_alternation(&report)?;
    Ok(report)
}

fn check_alternation(r: &ModeReport) -> Result<()> {
    let ok = !r.criticals.is_empty()
        && r.criticals.first().map(|c| c.kind) == Some(Kind::Maximum)
        && r.criticals.last().map(|c| c.kind) == Some(Kind::Maximum)
        && r.criticals.windows(2).all(|w| w[0].kind != w[1].kind && w[0].location < w[1].location);
    if ok {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "critical points do not alternate max/min ({} found)",
            r.criticals.len()
        )))
    }
}

/// Default mean-shift tolerance, relative to the bandwidth.
pub const MEAN_SHIFT_TOL: f64 = 1e-10;
pub const MEAN_SHIFT_MAX_ITERS: usize = 100_000;

/// Gaussian mean-shift `t <- sum X_i w_i(t) / sum w_i(t)` with
/// `w_i(t) = exp(-beta (t - X_i)^2 / 2)`. Stops once a step is shorter than `tol`.
pub fn mean_shift(s: &SampleSet, start: f64, max_iters: usize, tol: f64) -> Result<f64> {
    if !start.is_finite() {
        return Err(Error::invalid(format!("mean-shift start must be finite, got {start}")));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("mean-shift tolerance must be positive, got {tol}")));
    }
    let beta = s.beta();
    // exp underflows past 38.6 bandwidths, so this window is the full sum.
    let radius = 38.6 * s.bandwidth();
    let mut t = start;
    for _ in 0..max_iters {
        let (mut num, mut den) = (0.0, 0.0);
        for &x in s.window(t, radius) {
            let u = t - x;
            let w = flushed_exp(-0.5 * beta * u * u);
            num += w * x;
            den += w;
        }
        if den == 0.0 {
            return Err(Error::DivergedStart { start });
        }
        let next = num / den;
        let done = (next - t).abs() < tol;
        t = next;
        if done {
            break;
        }
    }
    Ok(t)
}

/// Mean-shift with the default tolerance `1e-10 h` and iteration cap.
pub fn mean_shift_default(s: &SampleSet, start: f64) -> Result<f64> {
    mean_shift(s, start, MEAN_SHIFT_MAX_ITERS, MEAN_SHIFT_TOL * s.bandwidth())
}

/// Scale-space bound: a Gaussian mixture has at most as many modes in
/// `(a, ∞)` as it has components centered in `[a, ∞)`, and symmetrically on
/// `(-∞, -a)`.
pub fn scale_space_check(s: &SampleSet, report: &ModeReport, a: f64) -> bool {
    let xs = s.samples();
    let right_modes = report.maxima().filter(|&m| m > a).count();
    let right_samples = xs.len() - xs.partition_point(|&x| x < a);
    let left_modes = report.maxima().filter(|&m| m < -a).count();
    let left_samples = xs.partition_point(|&x| x <= -a);
    right_modes <= right_samples && left_modes <= left_samples
}
