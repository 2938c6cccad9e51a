//! Ground truth from the points themselves: sorted fractional parts of √n,
//! gaps, windows, the void statistic and the smoothed count.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
pub use crate::fixed::{frac_sqrt, Frac128};
use crate::testfn::{BumpFunction, TestFunctionSet};

pub const MIN_N: u64 = 100;
pub const MAX_N: u64 = 100_000_000;

/// `{√n}` for `N ≤ n < 2N`, sorted by value then by `n`.
#[derive(Debug, Clone)]
pub struct FracSequence {
    n: u64,
    values: Vec<Frac128>,
    sources: Vec<u64>,
}

fn sorted_points(range: std::ops::Range<u64>) -> (Vec<Frac128>, Vec<u64>) {
    let mut pts: Vec<(Frac128, u64)> = range.into_par_iter().map(|n| (frac_sqrt(n), n)).collect();
    pts.par_sort_unstable();
    pts.into_iter().unzip()
}

pub fn build_sequence(n: u64) -> Result<FracSequence> {
    if !(MIN_N..=MAX_N).contains(&n) {
        return invalid(format!("N = {n} must lie in [{MIN_N}, {MAX_N}]"));
    }
    let (values, sources) = sorted_points(n..2 * n);
    Ok(FracSequence { n, values, sources })
}

impl FracSequence {
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn values(&self) -> &[Frac128] {
        &self.values
    }

    pub fn sources(&self) -> &[u64] {
        &self.sources
    }

    /// Circular gaps: successor minus value, the last one wrapping past 1.
    pub fn gaps(&self) -> Vec<Frac128> {
        let m = self.values.len();
        (0..m)
            .map(|i| self.values[(i + 1) % m].sub(self.values[i]))
            .collect()
    }

    /// Largest circular gap as a real number.
    pub fn max_gap(&self) -> f64 {
        self.gaps()
            .into_iter()
            .max()
            .map(|g| g.to_f64())
            .unwrap_or(1.0)
    }

    fn lower_bound(&self, x: Frac128) -> usize {
        self.values.partition_point(|&v| v < x)
    }

    /// `𝒩(x; s, N)`: points in `[x, x + s/N)` mod 1.
    pub fn count_in_window(&self, x: Frac128, s: f64) -> u64 {
        match Frac128::width(s, self.n) {
            None => self.values.len() as u64,
            Some(w) => self.count_span(x, w),
        }
    }

    fn count_span(&self, x: Frac128, w: Frac128) -> u64 {
        let end = x.add(w);
        let a = self.lower_bound(x);
        let b = self.lower_bound(end);
        if end >= x {
            (b - a) as u64
        } else {
            (self.values.len() - a + b) as u64
        }
    }

    /// `𝒱(s, N) = Σ_gaps max(g − s/N, 0)`, accumulated exactly in fixed point.
    pub fn void_statistic(&self, s: f64) -> f64 {
        let w = match Frac128::width(s, self.n) {
            None => return 0.0,
            Some(w) => w,
        };
        let mut carry = 0u32;
        let mut acc = 0u128;
        for g in self.gaps() {
            // a single point has one gap of the full circle, stored as 0
            let full = self.values.len() == 1;
            if full || g > w {
                let (sum, over) = acc.overflowing_add(g.sub(w).0);
                acc = sum;
                carry += over as u32;
            }
        }
        carry as f64 + Frac128(acc).to_f64()
    }

    /// `(𝒱(L, N), (1/N)·Σ_gaps max(N·g − L, 0))`. The second component is
    /// formed in floating point from the scaled gaps.
    pub fn void_gap_functional(&self, l: f64) -> (f64, f64) {
        let nf = self.n as f64;
        let over: f64 = self
            .gaps()
            .iter()
            .map(|g| (nf * g.to_f64() - l).max(0.0))
            .sum();
        (self.void_statistic(l), over / nf)
    }

    pub fn gap_report(&self, bins: usize, bin_max: f64) -> Result<GapReport> {
        if bins < 10 {
            return invalid(format!("bins = {bins} must be at least 10"));
        }
        if !(bin_max > 0.0 && bin_max.is_finite()) {
            return invalid("bin_max must be positive");
        }
        let nf = self.n as f64;
        let scaled: Vec<f64> = self.gaps().iter().map(|g| g.to_f64() * nf).collect();
        let width = bin_max / bins as f64;
        let mut counts = vec![0u64; bins + 1];
        for &t in &scaled {
            let k = if t >= bin_max {
                bins
            } else {
                ((t / width) as usize).min(bins - 1)
            };
            counts[k] += 1;
        }
        let m = scaled.len() as f64;
        let mut hist: Vec<HistBin> = (0..bins)
            .map(|k| {
                let lo = k as f64 * width;
                let hi = lo + width;
                HistBin {
                    lo,
                    hi,
                    count: counts[k],
                    density: counts[k] as f64 / (m * width),
                    exp_density: (-(lo + 0.5 * width)).exp(),
                }
            })
            .collect();
        hist.push(HistBin {
            lo: bin_max,
            hi: f64::INFINITY,
            count: counts[bins],
            density: 0.0,
            exp_density: 0.0,
        });
        let mean = scaled.iter().sum::<f64>() / m;
        let min = scaled.iter().copied().fold(f64::INFINITY, f64::min);
        let max = scaled.iter().copied().fold(0.0, f64::max);
        let mut report = GapReport {
            n: self.n,
            bins: hist,
            mean,
            min,
            max,
            sup_exp_deviation: 0.0,
        };
        report.sup_exp_deviation = report.sup_deviation(0.0, 2.0_f64.min(bin_max));
        Ok(report)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
    pub density: f64,
    pub exp_density: f64,
}

/// Histogram of `N·gap` with an overflow bin last.
#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub n: u64,
    pub bins: Vec<HistBin>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Sup over bins inside [0, 2] of |density − e^{−t}|.
    pub sup_exp_deviation: f64,
}

impl GapReport {
    fn finite_bins_within(&self, lo: f64, hi: f64) -> impl Iterator<Item = &HistBin> {
        self.bins
            .iter()
            .filter(move |b| b.hi.is_finite() && b.lo >= lo - 1e-12 && b.hi <= hi + 1e-12)
    }

    pub fn sup_deviation(&self, lo: f64, hi: f64) -> f64 {
        self.finite_bins_within(lo, hi)
            .map(|b| (b.density - b.exp_density).abs())
            .fold(0.0, f64::max)
    }

    /// max/min bin density over bins inside [lo, hi].
    pub fn flatness_ratio(&self, lo: f64, hi: f64) -> f64 {
        let d: Vec<f64> = self.finite_bins_within(lo, hi).map(|b| b.density).collect();
        let mx = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mn = d.iter().copied().fold(f64::INFINITY, f64::min);
        mx / mn
    }

    pub fn total_count(&self) -> u64 {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_lo,bin_hi,count,density,exp_density")?;
        for b in &self.bins {
            writeln!(
                w,
                "{:.16e},{},{},{:.16e},{:.16e}",
                b.lo,
                fmt_hi(b.hi),
                b.count,
                b.density,
                b.exp_density
            )?;
        }
        Ok(())
    }
}

fn fmt_hi(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "inf".to_string()
    }
}

/// `R(x) = Σ_n V(n/N)·Φ(N·(√n − x))` with Φ periodized mod 1, summed over the
/// support of V.
#[derive(Debug, Clone)]
pub struct SmoothedCount {
    n: u64,
    window: BumpFunction,
    values: Vec<Frac128>,
    weights: Vec<f64>,
}

impl SmoothedCount {
    pub fn new(n: u64, tf: &TestFunctionSet) -> Result<Self> {
        Self::with_bumps(n, &tf.window, &tf.weight)
    }

    pub fn with_bumps(n: u64, window: &BumpFunction, weight: &BumpFunction) -> Result<Self> {
        if !(MIN_N..=MAX_N).contains(&n) {
            return invalid(format!("N = {n} must lie in [{MIN_N}, {MAX_N}]"));
        }
        let (vl, vh) = weight.support();
        let nf = n as f64;
        let lo = ((vl * nf).floor() as u64).max(1);
        let hi = (vh * nf).ceil() as u64;
        let (vals, srcs) = sorted_points(lo..hi + 1);
        let mut values = Vec::with_capacity(vals.len());
        let mut weights = Vec::with_capacity(vals.len());
        for (v, m) in vals.into_iter().zip(srcs) {
            let wt = weight.eval(m as f64 / nf);
            if wt > 0.0 {
                values.push(v);
                weights.push(wt);
            }
        }
        let (wl, wh) = window.support();
        if wh - wl >= nf {
            return invalid("window support must be shorter than N");
        }
        Ok(SmoothedCount {
            n,
            window: window.clone(),
            values,
            weights,
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Σ_n V(n/N) over the stored points.
    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn eval(&self, x: Frac128) -> f64 {
        let nf = self.n as f64;
        let (lo, hi) = self.window.support();
        let start = x.add(Frac128::from_f64(lo / nf));
        let width = Frac128::from_f64((hi - lo) / nf);
        let end = start.add(width);
        let a = self.values.partition_point(|&v| v < start);
        let mut total = 0.0;
        let mut add = |i: usize| {
            let off = self.values[i].sub(start).to_f64() * nf + lo;
            total += self.weights[i] * self.window.eval(off);
        };
        if end >= start {
            let b = self.values.partition_point(|&v| v < end);
            (a..b).for_each(&mut add);
        } else {
            let b = self.values.partition_point(|&v| v < end);
            (a..self.values.len()).for_each(&mut add);
            (0..b).for_each(&mut add);
        }
        total
    }
}
