//! Moments of the lattice sum against the minor-arc measure and their main term.
//!
//! The main term is evaluated on the dual side. With
//! `F̌(y) = ∫F(ξ, η)e(yξ)dξ = ½∫V(x²)e(−ηx/2)Φ(θ + y/(2x))dx`, which has compact
//! support in y, the coupled integral becomes
//! `H(τ, η) = ∫ŵ_Δ(σ)·Π F̌_i(σ − τ_i)dσ` with `ŵ_Δ(σ) = Δ⁻³ŵ(σ/Δ³)`.
//! Writing `t = t₀·1 + d`, the constraint `⟨u, t⟩ = 0` only involves d, and
//! the sum over t₀ of `ŵ_Δ(σ + t₀/v)` is exactly v.

use std::collections::HashMap;
use std::sync::OnceLock;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::arith::u_cap;
use crate::error::{invalid, Error, Result};
use crate::minorarc::{LatticeSum, MinorArcMeasure, ModulusPhases};
use crate::osc::EdgeTransform;
use crate::quad::{gauss_legendre, integrate, QuadSpec};
use crate::testfn::{e, BumpFunction, TestFunctionSet};

pub const MAX_K: u32 = 3;
pub const DEFAULT_T_CAP: i64 = 1024;
pub const DEFAULT_V_NODES: usize = 32;
pub const DEFAULT_THETA_NODES: usize = 16;
pub const DEFAULT_Y_STEP: f64 = 1.0 / 1024.0;
/// The lattice sum is cut at `v ≤ XI_CAP_FACTOR·Δ³·√N`.
pub const XI_CAP_FACTOR: f64 = 1.0;

fn check_k(k: u32) -> Result<()> {
    if !(1..=MAX_K).contains(&k) {
        return invalid(format!("k = {k} must lie in 1..={MAX_K}"));
    }
    Ok(())
}

/// Default cut for the lattice sum: past `|ξ| = Δ³` no pair is resonant.
pub fn default_lhs_v_cap(delta: f64, n: u64) -> i64 {
    (XI_CAP_FACTOR * delta.powi(3) * (n as f64).sqrt()).ceil() as i64
}

/// `(1/L)·Σ_arcs Σ_j ω_j R̃(a/q − t_j/N)^k`.
pub fn moment_lhs(
    mu: &MinorArcMeasure,
    tf: &TestFunctionSet,
    n: u64,
    delta: f64,
    k: u32,
) -> Result<f64> {
    check_k(k)?;
    let v_cap = default_lhs_v_cap(delta, n);
    let sum = LatticeSum::new(tf, n, delta, v_cap, mu.theta_max())?;
    moment_lhs_with(mu, &sum, k, v_cap)
}

pub fn moment_lhs_with(mu: &MinorArcMeasure, sum: &LatticeSum, k: u32, v_cap: i64) -> Result<f64> {
    check_k(k)?;
    mu.sum_over_arcs_with(
        || None::<ModulusPhases>,
        |cache, fp| {
            if cache.as_ref().is_none_or(|c| c.modulus() != fp.q) {
                *cache = Some(sum.phases(fp.q)?);
            }
            let c = sum.coefficients_with(cache.as_ref().expect("filled"), fp, v_cap)?;
            Ok(mu
                .nodes()
                .iter()
                .map(|&(t, w)| w * sum.eval(&c, t).powi(k as i32))
                .sum())
        },
    )
}

/// The x-rule for `F̌` at one y: `(x_j, ½w_j V(x_j²)Φ(θ + y/(2x_j)))`, with
/// breaks where either bump changes regime and `freq` cycles per unit x.
fn dual_rule(tf: &TestFunctionSet, theta: f64, y: f64, freq: f64) -> Vec<(f64, f64)> {
    let v = &tf.weight;
    let phi = &tf.window;
    let (vl, vh) = v.support();
    let (vpl, vph) = v.plateau();
    let (xl, xh) = (vl.max(0.0).sqrt(), vh.sqrt());
    let (lo, hi) = phi.support();
    let (pl, ph) = phi.plateau();
    let mut cuts = vec![xl, xh, vpl.max(0.0).sqrt(), vph.sqrt()];
    if y != 0.0 {
        for s in [lo, pl, ph, hi] {
            if s != theta {
                cuts.push(y / (2.0 * (s - theta)));
            }
        }
    }
    cuts.retain(|&x| x >= xl && x <= xh && x.is_finite());
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let m = 0.5 * (a + b);
        let s = theta + y / (2.0 * m);
        if phi.eval(s) == 0.0 || v.eval(m * m) == 0.0 {
            continue;
        }
        let ramp = (lo < s && s < pl)
            || (ph < s && s < hi)
            || (vl < m * m && m * m < vpl)
            || (vph < m * m && m * m < vh);
        let panels = if ramp { 4 } else { 1 } + ((b - a) * freq).ceil() as usize;
        let (gx, gw) = gl16();
        let step = (b - a) / panels as f64;
        for p in 0..panels {
            let c = a + (p as f64 + 0.5) * step;
            for (x, wt) in gx
                .iter()
                .zip(gw)
                .map(|(x, w)| (c + 0.5 * step * x, 0.5 * step * w))
            {
                let val = 0.5 * v.eval(x * x) * phi.eval(theta + y / (2.0 * x));
                if val != 0.0 {
                    out.push((x, wt * val));
                }
            }
        }
    }
    out
}

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(16))
}

/// `y` range outside which `F̌` vanishes for every η.
fn dual_support(tf: &TestFunctionSet, theta: f64) -> (f64, f64) {
    let (vl, vh) = tf.weight.support();
    let (xl, xh) = (vl.max(0.0).sqrt(), vh.sqrt());
    let (lo, hi) = tf.window.support();
    let ends = [
        2.0 * xl * (lo - theta),
        2.0 * xh * (lo - theta),
        2.0 * xl * (hi - theta),
        2.0 * xh * (hi - theta),
    ];
    (
        ends.iter().copied().fold(f64::INFINITY, f64::min),
        ends.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    )
}

/// `F̌(y) = ∫F_θ(ξ, η)e(yξ)dξ`.
pub fn f_dual(tf: &TestFunctionSet, theta: f64, eta: f64, y: f64) -> Complex64 {
    dual_rule(tf, theta, y, 0.5 * eta.abs() + 1.0)
        .iter()
        .map(|&(x, w)| e(-0.5 * eta * x) * w)
        .sum()
}

/// `F̌` on the grid `y = j·h`, `j0 ≤ j < j0 + len`, for `η = u·eta_unit`, `u = 1..=u_max`.
struct DualTable {
    j0: i64,
    rows: Vec<Vec<Complex64>>,
}

impl DualTable {
    fn build(tf: &TestFunctionSet, theta: f64, eta_unit: f64, u_max: i64, h: f64) -> Self {
        let (ymin, ymax) = dual_support(tf, theta);
        let j0 = (ymin / h).floor() as i64 - 1;
        let j1 = (ymax / h).ceil() as i64 + 1;
        let len = (j1 - j0 + 1) as usize;
        let freq = 0.5 * eta_unit * u_max as f64 + 1.0;
        let mut rows = vec![vec![Complex64::new(0.0, 0.0); len]; u_max as usize];
        let mut pw = vec![Complex64::new(0.0, 0.0); u_max as usize];
        for i in 0..len {
            let y = (j0 + i as i64) as f64 * h;
            pw.iter_mut().for_each(|p| *p = Complex64::new(0.0, 0.0));
            for (x, w) in dual_rule(tf, theta, y, freq) {
                let base = e(-0.5 * eta_unit * x);
                let mut z = base * w;
                for p in pw.iter_mut() {
                    *p += z;
                    z *= base;
                }
            }
            for (row, p) in rows.iter_mut().zip(&pw) {
                row[i] = *p;
            }
        }
        DualTable { j0, rows }
    }

    /// `F̌` for `η = u·eta_unit` at grid index j.
    #[inline]
    fn get(&self, u: i64, j: i64) -> Complex64 {
        let i = j - self.j0;
        let row = &self.rows[u.unsigned_abs() as usize - 1];
        if i < 0 || i as usize >= row.len() {
            return Complex64::new(0.0, 0.0);
        }
        if u > 0 {
            row[i as usize]
        } else {
            row[i as usize].conj()
        }
    }
}

/// `ŵ_Δ(σ) = Δ⁻³ŵ(σ/Δ³)` for the coupling bump.
struct CouplingTransform {
    scale: f64,
    w: EdgeTransform,
}

impl CouplingTransform {
    fn new(w: &BumpFunction, delta: f64) -> Result<Self> {
        Ok(CouplingTransform {
            scale: delta.powi(3),
            w: EdgeTransform::full_range(w, 1.0 / 128.0)?,
        })
    }

    fn eval(&self, sigma: f64) -> f64 {
        self.w.eval(sigma / self.scale).re / self.scale
    }
}

/// `H(τ, η) = ∫Π F_θ(ξ_i, η_i)e(−⟨τ, ξ⟩)w(Δ³Σξ_i)dξ`, evaluated as
/// `∫ŵ_Δ(σ)Π F̌_i(σ − τ_i)dσ` by adaptive quadrature.
pub fn h_eval(
    tf: &TestFunctionSet,
    theta: f64,
    delta: f64,
    tau: &[f64],
    eta: &[f64],
) -> Result<Complex64> {
    let k = tau.len();
    if k == 0 || k > MAX_K as usize || eta.len() != k {
        return invalid("t and u must have the same length in 1..=3");
    }
    let wt = CouplingTransform::new(&tf.w_bump, delta)?;
    let (ymin, ymax) = dual_support(tf, theta);
    let lo = tau
        .iter()
        .map(|t| t + ymin)
        .fold(f64::NEG_INFINITY, f64::max);
    let hi = tau.iter().map(|t| t + ymax).fold(f64::INFINITY, f64::min);
    if lo >= hi {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let (vl, vh) = tf.weight.support();
    let mut breaks = Vec::new();
    for &t in tau {
        for s in [
            tf.window.support().0,
            tf.window.plateau().0,
            tf.window.plateau().1,
            tf.window.support().1,
        ] {
            for x in [vl.max(0.0).sqrt(), vh.sqrt()] {
                breaks.push(t + 2.0 * x * (s - theta));
            }
        }
    }
    let freq = eta.iter().map(|h| h.abs()).sum::<f64>() + 2.0;
    let spec = QuadSpec::new(1e-10)
        .with_frequency(freq)
        .with_max_panels(200_000);
    let r = integrate(
        |s| {
            let mut p = Complex64::new(wt.eval(s), 0.0);
            for (&t, &h) in tau.iter().zip(eta) {
                p *= f_dual(tf, theta, h, s - t);
            }
            p
        },
        lo,
        hi,
        &breaks,
        spec,
    )?;
    Ok(r.value)
}

/// Vectors u ∈ ℤᵏ with `Σu_i = 0` and `1 ≤ |u_i| ≤ u_cap`, in lexicographic order.
pub fn u_vectors(k: u32, u_cap: i64) -> Vec<Vec<i64>> {
    let k = k as usize;
    let mut out = Vec::new();
    if k < 2 {
        return out;
    }
    let vals: Vec<i64> = (-u_cap..=u_cap).filter(|&u| u != 0).collect();
    let mut cur = vec![0i64; k];
    fn rec(
        i: usize,
        k: usize,
        vals: &[i64],
        cap: i64,
        cur: &mut Vec<i64>,
        out: &mut Vec<Vec<i64>>,
    ) {
        if i == k - 1 {
            let last = -cur[..k - 1].iter().sum::<i64>();
            if last != 0 && last.abs() <= cap {
                cur[k - 1] = last;
                out.push(cur.clone());
            }
            return;
        }
        for &v in vals {
            cur[i] = v;
            rec(i + 1, k, vals, cap, cur, out);
        }
    }
    rec(0, k, &vals, u_cap, &mut cur, &mut out);
    out
}

/// Offsets d with `d_1 = 0`, `⟨u, d⟩ = 0` and `|d_i| ≤ d_max`.
pub fn offset_vectors(u: &[i64], d_max: i64) -> Vec<Vec<i64>> {
    let k = u.len();
    let mut out = Vec::new();
    let mut cur = vec![0i64; k];
    fn rec(i: usize, u: &[i64], d_max: i64, cur: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if i == u.len() {
            if u.iter().zip(cur.iter()).map(|(a, b)| a * b).sum::<i64>() == 0 {
                out.push(cur.clone());
            }
            return;
        }
        for d in -d_max..=d_max {
            cur[i] = d;
            rec(i + 1, u, d_max, cur, out);
        }
    }
    if k > 0 {
        rec(1, u, d_max, &mut cur, &mut out);
    }
    out
}

/// All `(u, t)` with `1 ≤ |u_i| ≤ u_cap`, `|t_i| ≤ t_cap`, `⟨1, u⟩ = 0 = ⟨u, t⟩`,
/// built as `t = t₁·1 + d`.
pub fn constraint_pairs(k: u32, u_cap: i64, t_cap: i64) -> Vec<(Vec<i64>, Vec<i64>)> {
    let mut out = Vec::new();
    for u in u_vectors(k, u_cap) {
        for d in offset_vectors(&u, 2 * t_cap) {
            let lo = d.iter().map(|x| -t_cap - x).max().unwrap_or(-t_cap);
            let hi = d.iter().map(|x| t_cap - x).min().unwrap_or(t_cap);
            for t0 in lo..=hi {
                out.push((u.clone(), d.iter().map(|x| t0 + x).collect()));
            }
        }
    }
    out.sort();
    out
}

/// Truncation settings for the main term.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RhsCaps {
    pub u_cap: i64,
    pub t_cap: i64,
    pub v_nodes: usize,
    pub theta_nodes: usize,
    pub y_step: f64,
}

impl RhsCaps {
    pub fn new(delta: f64) -> Self {
        RhsCaps {
            u_cap: u_cap(delta),
            t_cap: DEFAULT_T_CAP,
            v_nodes: DEFAULT_V_NODES,
            theta_nodes: DEFAULT_THETA_NODES,
            y_step: DEFAULT_Y_STEP,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RhsValue {
    /// head + tail
    pub value: f64,
    /// Terms with `|t_i| ≤ t_cap`.
    pub head: f64,
    /// The remaining t, summed in closed form.
    pub tail: f64,
    pub imag: f64,
}

/// Gauss nodes on the support of φ, split at its plateau.
fn theta_rule(phi: &BumpFunction, count: usize) -> Vec<(f64, f64)> {
    let (lo, hi) = phi.support();
    let (pl, ph) = phi.plateau();
    let mut pieces = vec![(lo, pl), (ph, hi)];
    if ph > pl {
        pieces.insert(1, (pl, ph));
    }
    let per = (count / pieces.len()).max(1);
    let (gx, gw) = gauss_legendre(per);
    let mut out = Vec::new();
    for (a, b) in pieces {
        for (x, w) in gx.iter().zip(&gw) {
            let t = 0.5 * (a + b) + 0.5 * (b - a) * x;
            out.push((t, 0.5 * (b - a) * w * phi.eval(t)));
        }
    }
    out
}

/// `(2/3Δ²)∫∫_Δ^{2Δ} Σ_{u,t} H_θ(t/v, 2u/v) v^{1−k} dv φ(θ)dθ`.
pub fn moment_rhs(tf: &TestFunctionSet, delta: f64, k: u32, caps: &RhsCaps) -> Result<RhsValue> {
    check_k(k)?;
    if caps.u_cap < 1 || caps.t_cap < 1 || caps.v_nodes < 1 || caps.theta_nodes < 2 {
        return invalid("caps must be positive");
    }
    if !(caps.y_step > 0.0 && caps.y_step <= 0.01) {
        return invalid("y_step must lie in (0, 1/100]");
    }
    if delta.powi(4) <= 0.5 {
        return invalid("the t-sum closes only for Δ⁴ > 1/2");
    }
    let us = u_vectors(k, caps.u_cap);
    if us.is_empty() {
        return Ok(RhsValue {
            value: 0.0,
            head: 0.0,
            tail: 0.0,
            imag: 0.0,
        });
    }
    let thetas = theta_rule(&tf.phi_bump, caps.theta_nodes);
    let (gx, gw) = gauss_legendre(caps.v_nodes);
    let wt = CouplingTransform::new(&tf.w_bump, delta)?;
    let width = thetas
        .iter()
        .map(|&(t, _)| {
            let (a, b) = dual_support(tf, t);
            b - a
        })
        .fold(0.0, f64::max);
    let parts: Vec<(Complex64, f64)> = (0..caps.v_nodes)
        .into_par_iter()
        .map(|i| {
            let v = 1.5 * delta + 0.5 * delta * gx[i];
            let wv = 0.5 * delta * gw[i] * v.powi(1 - k as i32);
            let m = (1.0 / (v * caps.y_step)).ceil() as i64;
            let h = 1.0 / (m as f64 * v);
            let d_max = (width * v).ceil() as i64 + 1;
            let offsets: Vec<(usize, Vec<Vec<i64>>)> = us
                .iter()
                .enumerate()
                .map(|(n, u)| (n, offset_vectors(u, d_max)))
                .collect();
            let mut windows: HashMap<(i64, i64), Vec<f64>> = HashMap::new();
            let mut head = Complex64::new(0.0, 0.0);
            let mut tail = 0.0;
            for &(theta, w_theta) in &thetas {
                let table = DualTable::build(tf, theta, 2.0 / v, caps.u_cap, h);
                let len = table.rows[0].len() as i64;
                for (n, ds) in &offsets {
                    let u = &us[*n];
                    for d in ds {
                        let key = (*d.iter().min().unwrap(), *d.iter().max().unwrap());
                        let p = windows.entry(key).or_insert_with(|| {
                            window_sum(&wt, caps.t_cap, key, m, h, table.j0, len)
                        });
                        let mut full = Complex64::new(0.0, 0.0);
                        let mut part = Complex64::new(0.0, 0.0);
                        for (i, pi) in p.iter().enumerate() {
                            let j = table.j0 + i as i64;
                            let mut prod = Complex64::new(1.0, 0.0);
                            for (&ui, &di) in u.iter().zip(d) {
                                prod *= table.get(ui, j - di * m);
                                if prod == Complex64::new(0.0, 0.0) {
                                    break;
                                }
                            }
                            full += prod;
                            part += prod * pi;
                        }
                        let c = h * wv * w_theta;
                        head += part * c;
                        tail += ((full * v - part) * c).re;
                    }
                }
            }
            (head, tail)
        })
        .collect();
    let norm = 2.0 / (3.0 * delta * delta);
    let head: Complex64 = parts.iter().map(|p| p.0).sum::<Complex64>() * norm;
    let tail: f64 = parts.iter().map(|p| p.1).sum::<f64>() * norm;
    let value = head.re + tail;
    if head.im.abs() > 1e-8 * value.abs().max(1.0) {
        return Err(Error::SymmetryViolation { residue: head.im });
    }
    if tail.abs() > 0.01 * head.re.abs() {
        return Err(Error::TruncationTooCoarse {
            head: head.re,
            tail,
        });
    }
    Ok(RhsValue {
        value,
        head: head.re,
        tail,
        imag: head.im,
    })
}

/// `Σ_{t₀} ŵ_Δ(σ_j + t₀/v)` over `|t₀ + d_i| ≤ t_cap` on the grid `σ_j = j·h`,
/// `h = 1/(mv)`, via running sums along stride m.
fn window_sum(
    wt: &CouplingTransform,
    t_cap: i64,
    (dmin, dmax): (i64, i64),
    m: i64,
    h: f64,
    j0: i64,
    len: i64,
) -> Vec<f64> {
    let a = -t_cap - dmin;
    let b = t_cap - dmax;
    if b < a {
        return vec![0.0; len as usize];
    }
    let lo = j0 + a * m;
    let hi = j0 + len - 1 + b * m;
    let mut s = vec![0.0; (hi - lo + 1) as usize];
    for idx in 0..s.len() {
        let g = wt.eval((lo + idx as i64) as f64 * h);
        s[idx] = g + if idx >= m as usize {
            s[idx - m as usize]
        } else {
            0.0
        };
    }
    (0..len)
        .map(|i| {
            let top = (j0 + i + b * m - lo) as usize;
            let below = j0 + i + (a - 1) * m - lo;
            s[top] - if below >= 0 { s[below as usize] } else { 0.0 }
        })
        .collect()
}

/// Both sides of the moment formula.
#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub k: u32,
    pub n: u64,
    pub delta: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_error: f64,
    pub rhs_head: f64,
    pub rhs_tail: f64,
    pub lhs_v_cap: i64,
    pub arcs: u64,
    pub caps: RhsCaps,
}

pub fn moment_compare(
    mu: &MinorArcMeasure,
    tf: &TestFunctionSet,
    n: u64,
    delta: f64,
    k: u32,
    caps: &RhsCaps,
) -> Result<MomentReport> {
    check_k(k)?;
    let v_cap = default_lhs_v_cap(delta, n);
    let sum = LatticeSum::new(tf, n, delta, v_cap, mu.theta_max())?;
    let lhs = moment_lhs_with(mu, &sum, k, v_cap)?;
    let r = moment_rhs(tf, delta, k, caps)?;
    Ok(MomentReport {
        k,
        n,
        delta,
        lhs,
        rhs: r.value,
        rel_error: (lhs - r.value).abs() / r.value.abs().max(1e-12),
        rhs_head: r.head,
        rhs_tail: r.tail,
        lhs_v_cap: v_cap,
        arcs: mu.arc_count(),
        caps: *caps,
    })
}
