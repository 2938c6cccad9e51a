//! The closed formula for R on minor arcs, the minor-arc measure and the
//! statistics integrated against it.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use num_complex::Complex64;
use num_integer::Integer;
use rayon::prelude::*;
use serde::Serialize;

use crate::arith::{
    default_v_cap, divisors, enumerate_bset, mobius, mod_inverse, u_cap, FareyPoint, LatticePair,
    QSet,
};
use crate::error::{invalid, Error, Result};
use crate::fixed::Frac128;
use crate::osc::{EdgeTransform, FKernel, FRule};
use crate::quad::{composite_gl, gauss_legendre, integrate_real, QuadSpec};
use crate::seq::{FracSequence, SmoothedCount};
use crate::testfn::{e, BumpFunction, TestFunctionSet};

pub const THETA_NODES: usize = 64;
/// R is treated as zero below this value.
pub const ZERO_THRESHOLD: f64 = 1e-9;

/// `e(−q̄²u²/4v + u²/4vq²)` with `q̄` the inverse of q mod 4|v|.
pub fn bset_phase(q: u64, p: LatticePair) -> Result<Complex64> {
    let m = 4 * p.v.unsigned_abs() as i128;
    let qbar = mod_inverse(q as i128, m)?;
    let u = p.u as i128;
    let r = (qbar * qbar % m) * (u * u % m) % m;
    let first = -(p.v.signum() as f64) * (r as f64 / m as f64);
    let qf = q as f64;
    let second = (p.u as f64).powi(2) / (4.0 * p.v as f64 * qf * qf);
    Ok(e(first + second))
}

/// Second argument of F for the pair `(u, v)` at modulus q: `2u√N/q`.
#[inline]
pub fn eta_argument(u: i64, q: u64, n: u64) -> f64 {
    2.0 * u as f64 * (n as f64).sqrt() / q as f64
}

/// The lattice sum at `a/q − θ/N`, `θ = k.theta()`, over pairs with `|v| ≤ v_cap`.
pub fn r_tilde(fp: FareyPoint, k: &FKernel, n: u64, delta: f64, v_cap: i64) -> Result<f64> {
    let rn = (n as f64).sqrt();
    let mut s = Complex64::new(0.0, 0.0);
    for p in enumerate_bset(fp, delta, v_cap) {
        let f = k.f_eval(p.v as f64 / rn, eta_argument(p.u, fp.q, n))?;
        s += bset_phase(fp.q, p)? * f;
    }
    if s.im.abs() > 1e-6 {
        return Err(Error::SymmetryViolation { residue: s.im });
    }
    Ok(s.re)
}

/// Batched evaluation of the lattice sum over many arcs and angles.
///
/// Pairs come in conjugate couples `(u, v)`, `(−u, −v)`, so only `v > 0` is
/// visited. The factor `e(2ξθx)` is expanded in powers of θ, which leaves a
/// fixed Gauss rule per pair and a short polynomial per angle.
#[derive(Debug, Clone)]
pub struct LatticeSum {
    n: u64,
    u_cap: i64,
    v_cap: i64,
    theta_max: f64,
    q_min: f64,
    nodes: Vec<f64>,
    /// `w_j x_j V(x_j²) Φ̂(2ξ_v x_j)` for v = 1..=v_cap
    amp: Vec<Vec<Complex64>>,
    /// Taylor order needed at each v
    orders: Vec<usize>,
}

/// Taylor coefficients in θ of the lattice sum on one arc.
#[derive(Debug, Clone)]
pub struct ArcCoefficients {
    pub fp: FareyPoint,
    /// Number of pairs, counting both signs of v.
    pub pairs: usize,
    coeffs: Vec<Complex64>,
}

/// `e(−u√N x_j/q)` for `u = 1..=Δ⁴`, shared by the arcs of one modulus.
#[derive(Debug, Clone)]
pub struct ModulusPhases {
    q: u64,
    table: Vec<Vec<Complex64>>,
}

impl ModulusPhases {
    pub fn modulus(&self) -> u64 {
        self.q
    }
}

fn taylor_order(z: f64) -> usize {
    let mut order = 0;
    let mut term = 1.0;
    while term > 1e-16 && order < 80 {
        order += 1;
        term *= z / order as f64;
    }
    order
}

impl LatticeSum {
    /// Moduli passed later must be at least `Δ√N`.
    pub fn new(
        tf: &TestFunctionSet,
        n: u64,
        delta: f64,
        v_cap: i64,
        theta_max: f64,
    ) -> Result<Self> {
        if v_cap < 1 {
            return invalid("v_cap must be at least 1");
        }
        if !(0.0..=0.5).contains(&theta_max) {
            return invalid("theta_max must lie in [0, 1/2]");
        }
        let rn = (n as f64).sqrt();
        let q_min = delta * rn;
        let xi_max = v_cap as f64 / rn;
        let (wl, wh) = tf.window.support();
        let x_max = tf.weight.support().1.sqrt();
        let u_cap = u_cap(delta);
        let eta_max = 2.0 * u_cap as f64 * rn / q_min;
        let max_freq = 2.0 * xi_max * wl.abs().max(wh.abs()) + 0.5 * eta_max;
        let rule = FRule::with_density(tf, max_freq, 2, 1.0);
        let phi = EdgeTransform::new(&tf.window, 2.0 * xi_max * x_max)?;
        let amp = (1..=v_cap)
            .into_par_iter()
            .map(|v| {
                let xi = v as f64 / rn;
                rule.nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&x, &w)| phi.eval(2.0 * xi * x) * w)
                    .collect()
            })
            .collect();
        let orders = (1..=v_cap)
            .map(|v| taylor_order(2.0 * TAU * v as f64 / rn * theta_max * x_max))
            .collect();
        Ok(LatticeSum {
            n,
            u_cap,
            v_cap,
            theta_max,
            q_min,
            nodes: rule.nodes,
            amp,
            orders,
        })
    }

    pub fn v_cap(&self) -> i64 {
        self.v_cap
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }

    pub fn nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn phases(&self, q: u64) -> Result<ModulusPhases> {
        if (q as f64) < self.q_min * (1.0 - 1e-12) {
            return invalid(format!("modulus {q} is below {}", self.q_min));
        }
        let c = (self.n as f64).sqrt() / q as f64;
        let table = (1..=self.u_cap)
            .map(|u| self.nodes.iter().map(|&x| e(-(u as f64) * c * x)).collect())
            .collect();
        Ok(ModulusPhases { q, table })
    }

    /// Coefficients at `fp` for pairs with `|v| ≤ v_cap`.
    pub fn coefficients(&self, fp: FareyPoint, v_cap: i64) -> Result<ArcCoefficients> {
        self.coefficients_with(&self.phases(fp.q)?, fp, v_cap)
    }

    pub fn coefficients_with(
        &self,
        ph: &ModulusPhases,
        fp: FareyPoint,
        v_cap: i64,
    ) -> Result<ArcCoefficients> {
        if v_cap > self.v_cap {
            return invalid(format!(
                "v_cap {v_cap} exceeds the tabulated {}",
                self.v_cap
            ));
        }
        if ph.q != fp.q {
            return invalid("phase table belongs to another modulus");
        }
        let rn = (self.n as f64).sqrt();
        let top = self.orders[v_cap.max(1) as usize - 1];
        let mut coeffs = vec![Complex64::new(0.0, 0.0); top + 1];
        let mut b = coeffs.clone();
        let pairs = positive_pairs(fp, self.u_cap, v_cap)?;
        for p in &pairs {
            let order = self.orders[p.v as usize - 1];
            b[..=order]
                .iter_mut()
                .for_each(|x| *x = Complex64::new(0.0, 0.0));
            let row = &ph.table[p.u.unsigned_abs() as usize - 1];
            let amp = &self.amp[p.v as usize - 1];
            for j in 0..self.nodes.len() {
                let x = self.nodes[j];
                let c = if p.u > 0 { row[j] } else { row[j].conj() };
                let mut z = amp[j] * c;
                for bk in b[..=order].iter_mut() {
                    *bk += z;
                    z *= x;
                }
            }
            let phase = bset_phase(fp.q, *p)?;
            let xi = p.v as f64 / rn;
            let mut xp = 1.0;
            for (c, bk) in coeffs.iter_mut().zip(&b[..=order]) {
                *c += phase * bk * xp;
                xp *= xi;
            }
        }
        Ok(ArcCoefficients {
            fp,
            pairs: 2 * pairs.len(),
            coeffs,
        })
    }

    /// The lattice sum at `a/q − θ/N`; `|θ| ≤ theta_max` is assumed.
    pub fn eval(&self, c: &ArcCoefficients, theta: f64) -> f64 {
        debug_assert!(theta.abs() <= self.theta_max * (1.0 + 1e-12));
        let z = Complex64::new(0.0, 2.0 * TAU * theta);
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, ck) in c.coeffs.iter().enumerate().rev() {
            acc = acc * z / (k as f64 + 1.0) + ck;
        }
        2.0 * acc.re
    }

    pub fn r_tilde(&self, fp: FareyPoint, theta: f64, v_cap: i64) -> Result<f64> {
        if theta.abs() > self.theta_max * (1.0 + 1e-12) {
            return invalid(format!(
                "|theta| = {} exceeds {}",
                theta.abs(),
                self.theta_max
            ));
        }
        Ok(self.eval(&self.coefficients(fp, v_cap)?, theta))
    }
}

/// The pairs of the B-set with `v > 0`, ordered by v then u, found from
/// `v ≡ u·(2a)⁻¹ mod q`.
pub fn positive_pairs(fp: FareyPoint, u_cap: i64, v_cap: i64) -> Result<Vec<LatticePair>> {
    let q = fp.q as i128;
    let inv = mod_inverse(2 * fp.a as i128, q)?;
    let mut out = Vec::new();
    for u in (-u_cap..=u_cap).filter(|&u| u != 0) {
        let mut v = (u as i128 * inv).rem_euclid(q) as i64;
        if v == 0 {
            v += fp.q as i64;
        }
        while v <= v_cap {
            if (v as u64).gcd(&fp.q) == 1 {
                out.push(LatticePair { u, v });
            }
            v += fp.q as i64;
        }
    }
    out.sort_by_key(|p| (p.v, p.u));
    Ok(out)
}

/// `(N/L)·Σ_{(a,q)=1, q ∈ Q} φ(N(a/q − x)) dx` on the circle, integrated by a
/// fixed rule in `t = N(a/q − x)` over the support of φ.
#[derive(Debug, Clone)]
pub struct MinorArcMeasure {
    qset: QSet,
    phi: BumpFunction,
    l: u64,
    arcs: Vec<FareyPoint>,
    nodes: Vec<(f64, f64)>,
}

const ARC_CHUNK: usize = 2048;

impl MinorArcMeasure {
    pub fn new(qset: &QSet, tf: &TestFunctionSet) -> Result<Self> {
        Self::with_nodes(qset, tf, THETA_NODES)
    }

    /// `count` Gauss nodes split evenly over the ramps (and plateau, if any) of φ.
    pub fn with_nodes(qset: &QSet, tf: &TestFunctionSet, count: usize) -> Result<Self> {
        if qset.is_empty() {
            return Err(Error::EmptyQSet);
        }
        let phi = tf.phi_bump.clone();
        let (lo, hi) = phi.support();
        let (pl, ph) = phi.plateau();
        let mut pieces = vec![(lo, pl), (ph, hi)];
        if ph > pl {
            pieces.insert(1, (pl, ph));
        }
        if count < 2 * pieces.len() || !count.is_multiple_of(pieces.len()) {
            return invalid(format!(
                "node count {count} does not split over {} pieces",
                pieces.len()
            ));
        }
        let (gx, gw) = gauss_legendre(count / pieces.len());
        let mut nodes = Vec::with_capacity(count);
        for (a, b) in pieces {
            for (x, w) in gx.iter().zip(&gw) {
                let t = 0.5 * (a + b) + 0.5 * (b - a) * x;
                nodes.push((t, 0.5 * (b - a) * w * phi.eval(t)));
            }
        }
        let mut arcs = Vec::new();
        for q in qset.moduli() {
            arcs.extend(
                (1..=q)
                    .filter(|a| a.gcd(&q) == 1)
                    .map(|a| FareyPoint { a, q }),
            );
        }
        let l = arcs.len() as u64;
        Ok(MinorArcMeasure {
            qset: qset.clone(),
            phi,
            l,
            arcs,
            nodes,
        })
    }

    pub fn qset(&self) -> &QSet {
        &self.qset
    }

    pub fn phi(&self) -> &BumpFunction {
        &self.phi
    }

    /// `L = Σ φ(q)`.
    pub fn arc_count(&self) -> u64 {
        self.l
    }

    /// Arcs ordered by q, then a.
    pub fn arcs(&self) -> &[FareyPoint] {
        &self.arcs
    }

    /// `(t_j, w_j φ(t_j))`.
    pub fn nodes(&self) -> &[(f64, f64)] {
        &self.nodes
    }

    pub fn total_mass(&self) -> f64 {
        self.nodes.iter().map(|&(_, w)| w).sum()
    }

    pub fn theta_max(&self) -> f64 {
        self.phi.max_abs_support()
    }

    /// `a/q − t/N`.
    pub fn point(fp: FareyPoint, t: f64, n: u64) -> Frac128 {
        let shift = Frac128::from_f64(t.abs() / n as f64);
        let c = Frac128::from_ratio(fp.a as i128, fp.q);
        if t >= 0.0 {
            c.sub(shift)
        } else {
            c.add(shift)
        }
    }

    /// `(1/L)·Σ_arcs f(arc)`, summed in fixed chunks so the result does not
    /// depend on the thread count.
    pub fn sum_over_arcs<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(FareyPoint) -> Result<f64> + Sync,
    {
        let parts: Vec<f64> = self
            .arcs
            .par_chunks(ARC_CHUNK)
            .map(|c| c.iter().try_fold(0.0, |acc, &fp| Ok(acc + f(fp)?)))
            .collect::<Result<_>>()?;
        Ok(parts.iter().sum::<f64>() / self.l as f64)
    }

    /// As [`sum_over_arcs`](Self::sum_over_arcs) with scratch state made once per chunk.
    pub fn sum_over_arcs_with<S, I, F>(&self, init: I, f: F) -> Result<f64>
    where
        I: Fn() -> S + Sync,
        F: Fn(&mut S, FareyPoint) -> Result<f64> + Sync,
    {
        let parts: Vec<f64> = self
            .arcs
            .par_chunks(ARC_CHUNK)
            .map(|c| {
                let mut state = init();
                c.iter()
                    .try_fold(0.0, |acc, &fp| Ok(acc + f(&mut state, fp)?))
            })
            .collect::<Result<_>>()?;
        Ok(parts.iter().sum::<f64>() / self.l as f64)
    }

    /// `(1/L)·Σ_arcs Σ_j ω_j g(arc, t_j)` with g given the whole node list per arc.
    pub fn arc_average<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(FareyPoint, &[(f64, f64)]) -> Result<f64> + Sync,
    {
        self.sum_over_arcs(|fp| f(fp, &self.nodes))
    }
}

/// `∫ f dμ`.
pub fn measure_integrate<F>(mu: &MinorArcMeasure, integrand: F, n: u64) -> f64
where
    F: Fn(Frac128) -> f64 + Sync,
{
    let s = mu.sum_over_arcs(|fp| {
        Ok(mu
            .nodes
            .iter()
            .map(|&(t, w)| w * integrand(MinorArcMeasure::point(fp, t, n)))
            .sum())
    });
    s.expect("integrand is infallible")
}

/// `∫ 1(𝒩(x; s, N) = 0) dμ`.
pub fn restricted_void(mu: &MinorArcMeasure, seq: &FracSequence, s: f64) -> Result<f64> {
    if !(s > 0.0 && s.is_finite()) {
        return invalid("s must be positive");
    }
    Ok(measure_integrate(
        mu,
        |x| {
            if seq.count_in_window(x, s) == 0 {
                1.0
            } else {
                0.0
            }
        },
        seq.n(),
    ))
}

/// `∫ 1(R(x; N) = 0) dμ`. Needs `N > 100/η`.
pub fn smoothed_void(mu: &MinorArcMeasure, tf: &TestFunctionSet, n: u64) -> Result<f64> {
    if n as f64 <= 100.0 / tf.eta_smooth {
        return invalid(format!("N = {n} must exceed 100/eta"));
    }
    Ok(smoothed_void_with(mu, &SmoothedCount::new(n, tf)?))
}

pub fn smoothed_void_with(mu: &MinorArcMeasure, r: &SmoothedCount) -> f64 {
    measure_integrate(
        mu,
        |x| if r.eval(x) < ZERO_THRESHOLD { 1.0 } else { 0.0 },
        r.n(),
    )
}

/// One row of the residual table.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Prop3Row {
    pub q: u64,
    pub a: u64,
    pub theta: f64,
    pub v_cap: i64,
    pub r_direct: f64,
    pub r_formula: f64,
    pub residual: f64,
}

/// Direct R against `Φ̂(0)V̂(0) + 2R̃` on many arcs.
#[derive(Debug, Clone)]
pub struct Prop3Study {
    main: f64,
    count: SmoothedCount,
    sum: LatticeSum,
}

impl Prop3Study {
    pub fn new(
        tf: &TestFunctionSet,
        n: u64,
        delta: f64,
        v_cap_max: i64,
        theta_max: f64,
    ) -> Result<Self> {
        Ok(Prop3Study {
            main: tf.main_term(),
            count: SmoothedCount::new(n, tf)?,
            sum: LatticeSum::new(tf, n, delta, v_cap_max, theta_max)?,
        })
    }

    pub fn lattice(&self) -> &LatticeSum {
        &self.sum
    }

    /// Rows for each cap in `v_caps`, sharing one direct evaluation.
    pub fn rows(&self, fp: FareyPoint, theta: f64, v_caps: &[i64]) -> Result<Vec<Prop3Row>> {
        let r_direct = self
            .count
            .eval(MinorArcMeasure::point(fp, theta, self.count.n()));
        v_caps
            .iter()
            .map(|&v_cap| {
                let r_formula = self.main + 2.0 * self.sum.r_tilde(fp, theta, v_cap)?;
                Ok(Prop3Row {
                    q: fp.q,
                    a: fp.a,
                    theta,
                    v_cap,
                    r_direct,
                    r_formula,
                    residual: (r_direct - r_formula).abs(),
                })
            })
            .collect()
    }
}

/// `|R(a/q − θ/N) − Φ̂(0)V̂(0) − 2R̃|` with `v_cap = ⌈Δ√N⌉`, every F by
/// adaptive quadrature.
pub fn prop3_residual(
    fp: FareyPoint,
    tf: &TestFunctionSet,
    n: u64,
    theta: f64,
    delta: f64,
) -> Result<f64> {
    let k = FKernel::new(tf, theta)?;
    let t = r_tilde(fp, &k, n, delta, default_v_cap(delta, n))?;
    let r = SmoothedCount::new(n, tf)?.eval(MinorArcMeasure::point(fp, theta, n));
    Ok((r - tf.main_term() - 2.0 * t).abs())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct JutilaReport {
    /// `∫₀¹ |1 − χ̃|²`.
    pub value: f64,
    /// `Q⁴/(Δ²L²) + Q^{2.1}/L²`.
    pub bound: f64,
    pub ratio: f64,
    pub head: f64,
    pub tail: f64,
    pub max_ell: u64,
}

/// `Σ_{ℓ≠0} |φ̂(ℓ/N)|² (Σ_q c_q(ℓ))² / L²`, summed for `|ℓ| ≤ max_ell` plus a
/// continuum estimate of the rest.
///
/// `Σ_q c_q(ℓ) = Σ_{d | ℓ} g(d)` with `g(d) = d·Σ_{dm ∈ Q} μ(m)`, so the square
/// is a sum of `g(d)g(d′)` over the multiples of `lcm(d, d′)`.
pub fn jutila_l2(mu: &MinorArcMeasure, n: u64, max_ell: u64) -> Result<JutilaReport> {
    if max_ell < n {
        return invalid(format!("max_ell = {max_ell} must be at least N = {n}"));
    }
    let mut g: BTreeMap<u64, i128> = BTreeMap::new();
    for q in mu.qset.moduli() {
        for d in divisors(q) {
            *g.entry(d).or_default() += mobius(q / d) as i128 * d as i128;
        }
    }
    g.retain(|_, v| *v != 0);
    let mut coef: BTreeMap<u64, i128> = BTreeMap::new();
    for (&d1, &g1) in &g {
        for (&d2, &g2) in &g {
            let m = d1.lcm(&d2);
            if m <= max_ell {
                *coef.entry(m).or_default() += g1 * g2;
            }
        }
    }
    let nf = n as f64;
    let xi_top = max_ell as f64 / nf;
    let phi = EdgeTransform::full_range(&mu.phi, 1.0 / 128.0)?;
    let tail_int = TailIntegral::new(&phi, xi_top);
    let coef: Vec<(u64, f64)> = coef.into_iter().map(|(m, c)| (m, c as f64)).collect();
    let terms: Vec<(f64, f64)> = coef
        .par_iter()
        .map(|&(m, c)| {
            let top = max_ell / m;
            let s: f64 = (1..=top)
                .map(|j| phi.eval((j * m) as f64 / nf).norm_sqr())
                .sum();
            // Σ_{j > top} f(jm/N) ≈ (N/m)∫_{top·m/N}^∞ f − f(top·m/N)/2
            let edge = (top * m) as f64 / nf;
            let rest = nf / m as f64 * tail_int.beyond(edge) - 0.5 * phi.eval(edge).norm_sqr();
            (2.0 * c * s, 2.0 * c * rest)
        })
        .collect();
    let l2 = (mu.l as f64).powi(2);
    let head = terms.iter().map(|t| t.0).sum::<f64>() / l2;
    let tail = terms.iter().map(|t| t.1).sum::<f64>() / l2;
    if tail.abs() > 0.1 * head.abs() {
        return Err(Error::TruncationTooCoarse { head, tail });
    }
    let value = head + tail;
    let q = mu.qset.q_real();
    let delta = mu.qset.delta;
    let bound = q.powi(4) / (delta * delta * l2) + q.powf(2.1) / l2;
    Ok(JutilaReport {
        value,
        bound,
        ratio: value / bound,
        head,
        tail,
        max_ell,
    })
}

/// `∫_ξ^∞ |φ̂|²` from unit cells summed downward from where the ramp profile
/// is cut off.
struct TailIntegral<'a> {
    phi: &'a EdgeTransform,
    start: f64,
    cells: Vec<f64>,
}

impl<'a> TailIntegral<'a> {
    fn new(phi: &'a EdgeTransform, from: f64) -> Self {
        let end = phi.cutoff();
        let start = from.floor();
        let count = (end - start).max(0.0).ceil() as usize;
        let (gx, gw) = gauss_legendre(16);
        let mut cells = vec![0.0; count + 1];
        for i in (0..count).rev() {
            let mid = start + i as f64 + 0.5;
            let c: f64 = gx
                .iter()
                .zip(&gw)
                .map(|(x, w)| 0.5 * w * phi.eval(mid + 0.5 * x).norm_sqr())
                .sum();
            cells[i] = cells[i + 1] + c;
        }
        TailIntegral { phi, start, cells }
    }

    fn beyond(&self, xi: f64) -> f64 {
        let k = ((xi - self.start).floor().max(0.0) as usize).min(self.cells.len() - 1);
        let top = self.start + k as f64 + 1.0;
        if xi >= top {
            return 0.0;
        }
        let panels = (top - xi).ceil() as usize;
        let part: f64 = composite_gl(xi, top, panels, 16)
            .iter()
            .map(|&(x, w)| w * self.phi.eval(x).norm_sqr())
            .sum();
        part + self.cells.get(k + 1).copied().unwrap_or(0.0)
    }
}

/// `∫₀¹ |1 − χ̃|²` arc by arc, for families whose arcs are disjoint.
pub fn jutila_l2_direct(mu: &MinorArcMeasure, n: u64) -> Result<f64> {
    let (lo, hi) = mu.phi.support();
    let q_max = mu.qset.moduli().max().unwrap_or(1) as f64;
    if (hi - lo) / n as f64 >= 1.0 / (q_max * q_max) {
        return invalid("arcs overlap");
    }
    let lf = mu.l as f64;
    let nf = n as f64;
    let (pl, ph) = mu.phi.plateau();
    let scale = nf / lf;
    let (arc, _) = integrate_real(
        |s| (1.0 - scale * mu.phi.eval(s)).powi(2),
        lo,
        hi,
        &[pl, ph],
        QuadSpec::new(1e-13 * (hi - lo) * (scale * mu.phi.height()).powi(2).max(1.0)),
    )?;
    Ok(1.0 - lf * (hi - lo) / nf + arc / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::{build_qset, build_qset_with_band, default_prime_floor, QMode};
    use crate::osc::PhiHatTable;
    use crate::seq::build_sequence;
    use crate::testfn::Normalization;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn desk(n: u64) -> QSet {
        build_qset(2.0, n, QMode::DeskPrimePair, default_prime_floor(2.0)).unwrap()
    }

    #[test]
    fn phase_is_conjugate_under_sign_flip() {
        let q = 17 * 23;
        for (u, v) in [(3, 5), (-7, 11), (16, 1), (1, 250)] {
            let a = bset_phase(q, LatticePair { u, v }).unwrap();
            let b = bset_phase(q, LatticePair { u: -u, v: -v }).unwrap();
            assert!((a.conj() - b).norm() < 1e-14);
        }
    }

    #[test]
    fn positive_pairs_match_enumeration() {
        for (a, q) in [(1u64, 10403u64), (77, 5003), (1234, 4087), (2, 391)] {
            let fp = FareyPoint::new(a, q).unwrap();
            for delta in [1.5, 2.0, 2.5] {
                let want: Vec<_> = enumerate_bset(fp, delta, 3000)
                    .into_iter()
                    .filter(|p| p.v > 0)
                    .collect();
                assert_eq!(positive_pairs(fp, u_cap(delta), 3000).unwrap(), want);
            }
        }
    }

    #[test]
    fn empty_bset_gives_zero() {
        let tf = TestFunctionSet::default();
        let k = FKernel::new(&tf, 0.0).unwrap();
        let fp = FareyPoint::new(5000, 10403).unwrap();
        assert!(enumerate_bset(fp, 2.0, 1).is_empty());
        assert_eq!(r_tilde(fp, &k, 10_000, 2.0, 1).unwrap(), 0.0);
        let sum = LatticeSum::new(&tf, 10_000, 2.0, 1, 0.01).unwrap();
        assert_eq!(sum.r_tilde(fp, 0.003, 1).unwrap(), 0.0);
    }

    #[test]
    fn doubled_cap_is_stable_on_example() {
        let tf = TestFunctionSet::default();
        let k = FKernel::new(&tf, 0.0).unwrap();
        let fp = FareyPoint::new(1, 101 * 103).unwrap();
        let cap = default_v_cap(2.0, 10_000);
        let a = r_tilde(fp, &k, 10_000, 2.0, cap).unwrap();
        let b = r_tilde(fp, &k, 10_000, 2.0, 2 * cap).unwrap();
        assert!(a != 0.0);
        assert_eq!(a, b);
    }

    #[test]
    fn batched_sum_matches_adaptive() {
        let tf = TestFunctionSet::default();
        let n = 1_000_000;
        let table = Arc::new(PhiHatTable::build(&tf.window));
        let sum = LatticeSum::new(&tf, n, 2.0, 2000, 0.01).unwrap();
        let qs = desk(n);
        for (i, m) in qs.members.iter().step_by(7).take(3).enumerate() {
            let fp = FareyPoint::new(1 + 37 * i as u64, m.q).unwrap();
            for theta in [0.0, 0.004, -0.01] {
                let k = FKernel::with_table(&tf, theta, table.clone()).unwrap();
                let a = r_tilde(fp, &k, n, 2.0, 2000).unwrap();
                let b = sum.r_tilde(fp, theta, 2000).unwrap();
                assert!((a - b).abs() < 1e-7, "{a} {b}");
            }
        }
        let fp = FareyPoint::new(1, qs.members[0].q).unwrap();
        assert!(sum.r_tilde(fp, 0.02, 10).is_err());
        assert!(sum.r_tilde(fp, 0.0, 2001).is_err());
        assert!(sum
            .r_tilde(FareyPoint::new(1, 101).unwrap(), 0.0, 10)
            .is_err());
    }

    /// With a wide smooth window the formula is accurate already at this scale.
    #[test]
    fn formula_reproduces_direct_count_for_smooth_window() {
        let n = 1_000_000u64;
        let win =
            BumpFunction::new((0.0, 1.5), Some((0.5, 1.0)), Normalization::PlateauOne).unwrap();
        let wt =
            BumpFunction::new((0.9, 2.1), Some((1.2, 1.8)), Normalization::PlateauOne).unwrap();
        let tf = TestFunctionSet::default()
            .with_window(win)
            .with_weight(wt)
            .unwrap();
        let study = Prop3Study::new(&tf, n, 4.0, 8000, 0.005).unwrap();
        let mut worst = 0.0f64;
        for a in [1u64, 2, 77, 1234, 4000] {
            let fp = FareyPoint::new(a, 5003).unwrap();
            for theta in [0.0, 0.005] {
                worst = worst.max(study.rows(fp, theta, &[8000]).unwrap()[0].residual);
            }
        }
        assert!(worst < 2e-3, "{worst}");
    }

    #[test]
    fn measure_mass_and_locality() {
        let n = 1_000_000;
        let tf = TestFunctionSet::default();
        let qs = desk(n);
        let mu = MinorArcMeasure::new(&qs, &tf).unwrap();
        assert_eq!(mu.arc_count(), qs.arc_count());
        assert!((mu.total_mass() - 1.0).abs() < 1e-12);
        assert!((measure_integrate(&mu, |_| 1.0, n) - 1.0).abs() < 1e-12);
        let target = mu.arcs()[123];
        let centre = Frac128::from_ratio(target.a as i128, target.q);
        let near = |x: Frac128| {
            let d = x.sub(centre).to_f64();
            d.min(1.0 - d) < 0.011 / n as f64
        };
        let one = measure_integrate(&mu, |x| if near(x) { 1.0 } else { 0.0 }, n);
        let l = mu.arc_count() as f64;
        assert!((one * l - 1.0).abs() < 1e-12);
        assert!(MinorArcMeasure::with_nodes(&qs, &tf, 63).is_err());
    }

    #[test]
    fn measure_is_linear_and_monotone() {
        let n = 10_000;
        let tf = TestFunctionSet::default();
        let mu = MinorArcMeasure::new(&desk(n), &tf).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let (c1, c2): (f64, f64) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let (k1, k2): (f64, f64) = (rng.gen_range(1.0..50.0), rng.gen_range(1.0..50.0));
            let f = |x: Frac128| (TAU * k1 * x.to_f64()).sin();
            let g = |x: Frac128| (TAU * k2 * x.to_f64()).cos().abs();
            let lin = measure_integrate(&mu, |x| c1 * f(x) + c2 * g(x), n);
            let sep = c1 * measure_integrate(&mu, f, n) + c2 * measure_integrate(&mu, g, n);
            assert!((lin - sep).abs() < 1e-12);
            let mid = measure_integrate(&mu, g, n);
            assert!(measure_integrate(&mu, |x| g(x) - 0.1, n) <= mid);
            assert!(mid <= measure_integrate(&mu, |x| g(x) + f(x).abs(), n));
        }
    }

    /// An arc uniformly, then t from the density φ by rejection.
    fn sample(mu: &MinorArcMeasure, rng: &mut impl Rng, n: u64) -> Frac128 {
        let arc = mu.arcs()[rng.gen_range(0..mu.arcs().len())];
        let (lo, hi) = mu.phi().support();
        let top = mu.phi().height();
        loop {
            let t = rng.gen_range(lo..hi);
            if rng.gen_range(0.0..top) < mu.phi().eval(t) {
                return MinorArcMeasure::point(arc, t, n);
            }
        }
    }

    #[test]
    fn measure_against_monte_carlo() {
        let n = 10_000;
        let tf = TestFunctionSet::default();
        let mu = MinorArcMeasure::new(&desk(n), &tf).unwrap();
        let r = SmoothedCount::new(n, &tf).unwrap();
        let exact = measure_integrate(&mu, |x| r.eval(x), n);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = 100_000;
        let xs: Vec<f64> = (0..m).map(|_| r.eval(sample(&mu, &mut rng, n))).collect();
        let mean = xs.iter().sum::<f64>() / m as f64;
        let var = xs.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let se = (var / m as f64).sqrt();
        assert!((exact - mean).abs() < 3.0 * se, "{exact} {mean} {se}");
    }

    #[test]
    fn void_limits_and_monte_carlo() {
        let n = 10_000;
        let tf = TestFunctionSet::default();
        let mu = MinorArcMeasure::new(&desk(n), &tf).unwrap();
        let seq = build_sequence(n).unwrap();
        let big = seq.max_gap() * n as f64 * 1.0001;
        assert_eq!(restricted_void(&mu, &seq, big).unwrap(), 0.0);
        assert!((restricted_void(&mu, &seq, 1e-9).unwrap() - 1.0).abs() < 1e-6);
        let v = restricted_void(&mu, &seq, 1.0).unwrap();
        assert!((0.0..=1.0).contains(&v));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 100_000;
        let hits = (0..m)
            .filter(|_| seq.count_in_window(sample(&mu, &mut rng, n), 1.0) == 0)
            .count();
        let p = hits as f64 / m as f64;
        let se = (p * (1.0 - p) / m as f64).sqrt();
        // the 64-node rule on a discontinuous integrand adds its own error
        assert!((v - p).abs() < 3.0 * se + 2e-3, "{v} {p} {se}");
        assert!(restricted_void(&mu, &seq, 0.0).is_err());
    }

    #[test]
    fn smoothed_void_brackets_restricted() {
        let n = 100_000;
        let tf = TestFunctionSet::default();
        let mu = MinorArcMeasure::new(&desk(n), &tf).unwrap();
        let seq = build_sequence(n).unwrap();
        let (s, eta) = (1.0, tf.eta_smooth);
        let plain = restricted_void(&mu, &seq, s).unwrap();
        // inner bumps must also keep n inside [N, 2N)
        let inner =
            BumpFunction::new((0.0, s), Some((eta, s - eta)), Normalization::PlateauOne).unwrap();
        let inner_v = BumpFunction::new(
            (1.0, 2.0),
            Some((1.0 + eta, 2.0 - eta)),
            Normalization::PlateauOne,
        )
        .unwrap();
        let outer =
            BumpFunction::new((-eta, s + eta), Some((0.0, s)), Normalization::PlateauOne).unwrap();
        let v_in = smoothed_void_with(
            &mu,
            &SmoothedCount::with_bumps(n, &inner, &inner_v).unwrap(),
        );
        let v_out = smoothed_void_with(
            &mu,
            &SmoothedCount::with_bumps(n, &outer, &tf.weight).unwrap(),
        );
        assert!(v_in >= plain && plain >= v_out, "{v_in} {plain} {v_out}");
        let v = smoothed_void(&mu, &tf, n).unwrap();
        assert!((v - plain).abs() <= 8.0 * (1.0 + s) * eta);
        let g = 2.0 * seq.max_gap() * n as f64 + 1.0;
        let wide =
            BumpFunction::new((0.0, g), Some((eta, g - eta)), Normalization::PlateauOne).unwrap();
        assert_eq!(
            smoothed_void_with(
                &mu,
                &SmoothedCount::with_bumps(n, &wide, &tf.weight).unwrap()
            ),
            0.0
        );
        assert!(smoothed_void(&mu, &tf, 10_000).is_err());
    }

    #[test]
    fn jutila_one_prime_matches_direct() {
        let n = 10_000;
        let tf = TestFunctionSet::default();
        let qs = QSet::from_moduli(2.0, n, &[307]).unwrap();
        let mu = MinorArcMeasure::new(&qs, &tf).unwrap();
        let direct = jutila_l2_direct(&mu, n).unwrap();
        let r = jutila_l2(&mu, n, 400 * n).unwrap();
        assert!(
            ((r.value - direct) / direct).abs() < 1e-6,
            "{} {direct}",
            r.value
        );
        assert!(r.tail.abs() < 0.1 * r.head);
        assert!(jutila_l2(&mu, n, n - 1).is_err());
    }

    #[test]
    fn jutila_family_and_sharper_phi() {
        let n = 10_000;
        let tf = TestFunctionSet::default();
        let qs = build_qset_with_band(2.0, n, QMode::DeskPrimePair, 3, (3, 40)).unwrap();
        let mu = MinorArcMeasure::new(&qs, &tf).unwrap();
        let r = jutila_l2(&mu, n, 400 * n).unwrap();
        let direct = jutila_l2_direct(&mu, n).unwrap();
        assert!(
            ((r.value - direct) / direct).abs() < 1e-6,
            "{} {direct}",
            r.value
        );
        let sharp =
            BumpFunction::with_apex((-0.005, 0.005), 0.0, Normalization::UnitIntegral).unwrap();
        let mu2 = MinorArcMeasure::new(&qs, &tf.clone().with_phi(sharp).unwrap()).unwrap();
        let r2 = jutila_l2(&mu2, n, 800 * n).unwrap();
        assert!(r2.value > r.value);
    }

    #[test]
    fn doubling_nodes_moves_smooth_statistics_little() {
        let tf = TestFunctionSet::default();
        let n = 1_000_000;
        let qs = desk(n);
        let sum = LatticeSum::new(&tf, n, 2.0, 2000, 0.01).unwrap();
        let stat = |mu: &MinorArcMeasure| {
            mu.arc_average(|fp, nodes| {
                let c = sum.coefficients(fp, 2000)?;
                Ok(nodes
                    .iter()
                    .map(|&(t, w)| w * sum.eval(&c, t).powi(2))
                    .sum())
            })
            .unwrap()
        };
        let small = QSet {
            members: qs.members[..2].to_vec(),
            ..qs
        };
        let a = stat(&MinorArcMeasure::with_nodes(&small, &tf, 64).unwrap());
        let b = stat(&MinorArcMeasure::with_nodes(&small, &tf, 128).unwrap());
        assert!((a - b).abs() < 1e-7 * a.abs().max(1.0), "{a} {b}");
    }
}
