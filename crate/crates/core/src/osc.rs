//! The oscillatory weight F(ξ, η), the Fresnel-type identity, decay probes
//! and the transform of W(y) = y·V(y²).

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::quad::{composite_gl, integrate, QuadSpec};
use crate::testfn::{
    e, ramp_profile_cos, ramp_profile_cos_derivative, BumpFunction, TestFunctionSet,
};

/// Cubic Hermite interpolation on a uniform grid starting at 0.
#[derive(Debug, Clone)]
pub struct HermiteTable {
    step: f64,
    values: Vec<Complex64>,
    derivs: Vec<Complex64>,
}

impl HermiteTable {
    pub fn from_samples(step: f64, values: Vec<Complex64>, derivs: Vec<Complex64>) -> Self {
        assert_eq!(values.len(), derivs.len());
        assert!(values.len() >= 2);
        HermiteTable {
            step,
            values,
            derivs,
        }
    }

    pub fn range(&self) -> f64 {
        self.step * (self.values.len() - 1) as f64
    }

    /// Interpolated value at `y ∈ [0, range]`.
    #[inline]
    pub fn eval(&self, y: f64) -> Complex64 {
        let u = y / self.step;
        let k = (u as usize).min(self.values.len() - 2);
        let t = u - k as f64;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        self.values[k] * h00
            + self.derivs[k] * (h10 * self.step)
            + self.values[k + 1] * h01
            + self.derivs[k + 1] * (h11 * self.step)
    }
}

/// Tabulated Φ̂ on `|y| ≤ y_max`, using Φ̂(−y) = conj Φ̂(y).
#[derive(Debug, Clone)]
pub struct PhiHatTable {
    window: BumpFunction,
    table: HermiteTable,
}

pub const PHI_HAT_STEP: f64 = 1.0 / 512.0;
pub const PHI_HAT_RANGE: f64 = 40.0;

impl PhiHatTable {
    pub fn build(window: &BumpFunction) -> Self {
        Self::build_with(window, PHI_HAT_RANGE, PHI_HAT_STEP)
    }

    pub fn build_with(window: &BumpFunction, y_max: f64, step: f64) -> Self {
        let nodes = window.weighted_nodes(y_max);
        let count = (y_max / step).ceil() as usize + 1;
        let mut values = vec![Complex64::new(0.0, 0.0); count];
        let mut derivs = vec![Complex64::new(0.0, 0.0); count];
        // e(−y x_j) advanced by a per-node rotation, reseeded every block
        const BLOCK: usize = 256;
        let rot: Vec<Complex64> = nodes.iter().map(|&(x, _)| e(-step * x)).collect();
        let mut z: Vec<Complex64> = vec![Complex64::new(1.0, 0.0); nodes.len()];
        for k in 0..count {
            if k % BLOCK == 0 {
                let y = k as f64 * step;
                for (zj, &(x, _)) in z.iter_mut().zip(&nodes) {
                    *zj = e(-y * x);
                }
            }
            let mut v = Complex64::new(0.0, 0.0);
            let mut d = Complex64::new(0.0, 0.0);
            for ((zj, rj), &(x, w)) in z.iter_mut().zip(&rot).zip(&nodes) {
                let t = *zj * w;
                v += t;
                d += t * x;
                *zj *= rj;
            }
            values[k] = v;
            derivs[k] = d * Complex64::new(0.0, -TAU);
        }
        PhiHatTable {
            window: window.clone(),
            table: HermiteTable::from_samples(step, values, derivs),
        }
    }

    pub fn range(&self) -> f64 {
        self.table.range()
    }

    #[inline]
    pub fn eval_in_range(&self, y: f64) -> Complex64 {
        if y >= 0.0 {
            self.table.eval(y)
        } else {
            self.table.eval(-y).conj()
        }
    }

    /// Φ̂(y); arguments outside the table go to the adaptive transform.
    pub fn eval(&self, y: f64) -> Result<Complex64> {
        if y.abs() <= self.range() {
            Ok(self.eval_in_range(y))
        } else {
            self.window.fourier_transform(y)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FQuad {
    pub abs_tol: f64,
    pub max_panels: usize,
}

impl Default for FQuad {
    fn default() -> Self {
        FQuad {
            abs_tol: 1e-9,
            max_panels: 4000,
        }
    }
}

/// `F_θ(ξ, η) = ∫ Φ̂(2ξx) e(2ξθx) x V(x²) e(−ηx/2) dx` for a fixed θ.
#[derive(Debug, Clone)]
pub struct FKernel {
    tf: TestFunctionSet,
    theta: f64,
    quad: FQuad,
    table: Arc<PhiHatTable>,
}

impl FKernel {
    pub fn new(tf: &TestFunctionSet, theta: f64) -> Result<Self> {
        Self::with_table(tf, theta, Arc::new(PhiHatTable::build(&tf.window)))
    }

    pub fn with_table(tf: &TestFunctionSet, theta: f64, table: Arc<PhiHatTable>) -> Result<Self> {
        if !theta.is_finite() {
            return invalid("theta must be finite");
        }
        Ok(FKernel {
            tf: tf.clone(),
            theta,
            quad: FQuad::default(),
            table,
        })
    }

    pub fn with_quad(mut self, quad: FQuad) -> Result<Self> {
        if !(quad.abs_tol >= 1e-12) {
            return invalid("target error must be at least 1e-12");
        }
        self.quad = quad;
        Ok(self)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn tf(&self) -> &TestFunctionSet {
        &self.tf
    }

    pub fn table(&self) -> &Arc<PhiHatTable> {
        &self.table
    }

    /// Integration range `√(support of V)` and the breakpoints `√(plateau of V)`.
    pub fn x_range(&self) -> (f64, f64, [f64; 2]) {
        x_range(&self.tf.weight)
    }

    fn spec(&self, xi: f64, eta: f64) -> QuadSpec {
        let (_, wh) = self.tf.window.support();
        let (wl, _) = self.tf.window.support();
        let freq =
            2.0 * xi.abs() * wh.abs().max(wl.abs()) + (2.0 * xi * self.theta - 0.5 * eta).abs();
        QuadSpec::new(self.quad.abs_tol)
            .with_frequency(freq)
            .with_max_panels(self.quad.max_panels)
    }

    fn integrate_with(
        &self,
        xi: f64,
        eta: f64,
        phi_hat: impl Fn(f64) -> Result<Complex64>,
    ) -> Result<Complex64> {
        let (lo, hi, br) = self.x_range();
        let v = &self.tf.weight;
        let mut err = None;
        let r = integrate(
            |x| {
                let w = x * v.eval(x * x);
                if w == 0.0 {
                    return Complex64::new(0.0, 0.0);
                }
                let p = match phi_hat(2.0 * xi * x) {
                    Ok(p) => p,
                    Err(e) => {
                        err = Some(e);
                        Complex64::new(0.0, 0.0)
                    }
                };
                p * e(2.0 * xi * self.theta * x - 0.5 * eta * x) * w
            },
            lo,
            hi,
            &br,
            self.spec(xi, eta),
        )?;
        if let Some(e) = err {
            return Err(e);
        }
        Ok(r.value)
    }

    /// Adaptive evaluation with tabulated Φ̂.
    pub fn f_eval(&self, xi: f64, eta: f64) -> Result<Complex64> {
        self.integrate_with(xi, eta, |y| self.table.eval(y))
    }

    /// Same integral with Φ̂ from the adaptive transform at every node.
    pub fn f_eval_unmemoized(&self, xi: f64, eta: f64) -> Result<Complex64> {
        self.integrate_with(xi, eta, |y| self.tf.window.fourier_transform(y))
    }

    /// Φ̂(0)·½V̂(0), a bound for |F| everywhere.
    pub fn trivial_bound(&self) -> f64 {
        self.tf.window.integral() * 0.5 * self.tf.weight.integral()
    }
}

fn x_range(weight: &BumpFunction) -> (f64, f64, [f64; 2]) {
    let (vl, vh) = weight.support();
    let (pl, ph) = weight.plateau();
    (
        vl.max(0.0).sqrt(),
        vh.sqrt(),
        [pl.max(0.0).sqrt(), ph.sqrt()],
    )
}

/// A fixed Gauss rule on the x-range of F, carrying `w_j·x_j·V(x_j²)`.
///
/// For one (ξ, θ) the factor `Φ̂(2ξx_j)e(2ξθx_j)` is formed once; F at many η
/// is then a dot product with `e(−ηx_j/2)`.
#[derive(Debug, Clone)]
pub struct FRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl FRule {
    /// `max_freq` bounds the oscillation (cycles per unit x) of the integrand.
    pub fn new(tf: &TestFunctionSet, max_freq: f64) -> Self {
        Self::with_density(tf, max_freq, 6, 2.0)
    }

    /// 16-point Gauss panels: `ramp_panels` on each ramp of W and
    /// `panels_per_cycle` per cycle of `max_freq` elsewhere.
    pub fn with_density(
        tf: &TestFunctionSet,
        max_freq: f64,
        ramp_panels: usize,
        panels_per_cycle: f64,
    ) -> Self {
        const ORDER: usize = 16;
        let (lo, hi, [b1, b2]) = x_range(&tf.weight);
        let per = |len: f64| ((len * max_freq * panels_per_cycle).ceil() as usize).max(1);
        let mut pts = Vec::new();
        pts.extend(composite_gl(lo, b1, ramp_panels.max(per(b1 - lo)), ORDER));
        pts.extend(composite_gl(b1, b2, per(b2 - b1).max(2), ORDER));
        pts.extend(composite_gl(b2, hi, ramp_panels.max(per(hi - b2)), ORDER));
        let v = &tf.weight;
        let (nodes, weights) = pts
            .into_iter()
            .map(|(x, w)| (x, w * x * v.eval(x * x)))
            .unzip();
        FRule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `g_j = w_j W(x_j) Φ̂(2ξx_j) e(2ξθx_j)`.
    pub fn prepare(&self, table: &PhiHatTable, xi: f64, theta: f64) -> Result<Vec<Complex64>> {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| Ok(table.eval(2.0 * xi * x)? * e(2.0 * xi * theta * x) * w))
            .collect()
    }

    /// `Σ_j g_j e(−ηx_j/2)`.
    #[inline]
    pub fn apply(&self, g: &[Complex64], eta: f64) -> Complex64 {
        let mut s = Complex64::new(0.0, 0.0);
        for (gj, &x) in g.iter().zip(&self.nodes) {
            s += gj * e(-0.5 * eta * x);
        }
        s
    }
}

/// `Ŵ(ξ)` for `W(y) = y·V(y²)`.
pub fn w_hat(tf: &TestFunctionSet, xi: f64) -> Result<Complex64> {
    let (lo, hi, br) = x_range(&tf.weight);
    let v = &tf.weight;
    let spec = QuadSpec::new(1e-11).with_frequency(xi);
    Ok(integrate(|y| e(-xi * y) * (y * v.eval(y * y)), lo, hi, &br, spec)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Xi,
    Eta,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub axis: Axis,
    pub order: u32,
    pub theta: f64,
    /// Sup of the normalized quantity over included points.
    pub sup: f64,
    pub argmax: (f64, f64),
    pub included: usize,
    pub excluded: usize,
    /// Largest |F| seen, against the trivial bound.
    pub max_abs: f64,
    pub trivial_bound: f64,
}

/// Along ξ: sup of |F|(1 + |ξ|^A). Along η: sup of |F|(1 + |η|^A)/(1 + |ξ|^A)
/// over points with |η| > 50|ξθ|.
pub fn decay_probe(
    k: &FKernel,
    axis: Axis,
    order: u32,
    grid: &[(f64, f64)],
) -> Result<ProbeReport> {
    if order > 8 {
        return invalid("decay order must be at most 8");
    }
    let mut rep = ProbeReport {
        axis,
        order,
        theta: k.theta,
        sup: 0.0,
        argmax: (0.0, 0.0),
        included: 0,
        excluded: 0,
        max_abs: 0.0,
        trivial_bound: k.trivial_bound(),
    };
    let a = order as i32;
    for &(xi, eta) in grid {
        let ratio = match axis {
            Axis::Xi => 1.0 + xi.abs().powi(a),
            Axis::Eta => {
                if eta.abs() <= 50.0 * (xi * k.theta).abs() {
                    rep.excluded += 1;
                    continue;
                }
                (1.0 + eta.abs().powi(a)) / (1.0 + xi.abs().powi(a))
            }
        };
        let f = k.f_eval(xi, eta)?.norm();
        rep.included += 1;
        rep.max_abs = rep.max_abs.max(f);
        if f * ratio > rep.sup {
            rep.sup = f * ratio;
            rep.argmax = (xi, eta);
        }
    }
    Ok(rep)
}

/// Tabulated `k(τ)` of the ramp profile for `0 ≤ τ ≤ τ_max`; zero beyond
/// `PROFILE_CUTOFF`, where |k| < 1e−12.
#[derive(Debug, Clone)]
pub struct ProfileTable {
    table: HermiteTable,
}

pub const PROFILE_CUTOFF: f64 = 160.0;

impl ProfileTable {
    pub fn build(tau_max: f64) -> Result<Self> {
        Self::build_with(tau_max, 1.0 / 256.0)
    }

    pub fn build_with(tau_max: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && step <= 0.25) {
            return invalid("profile step must lie in (0, 1/4]");
        }
        let tau_max = tau_max.clamp(1.0, PROFILE_CUTOFF);
        let count = (tau_max / step).ceil() as usize + 1;
        let mut values = Vec::with_capacity(count);
        let mut derivs = Vec::with_capacity(count);
        for i in 0..count {
            let t = i as f64 * step;
            values.push(Complex64::new(ramp_profile_cos(t)?, 0.0));
            derivs.push(Complex64::new(ramp_profile_cos_derivative(t)?, 0.0));
        }
        Ok(ProfileTable {
            table: HermiteTable::from_samples(step, values, derivs),
        })
    }

    /// Built once per step and shared.
    pub fn full_range(step: f64) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<u64, Arc<ProfileTable>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(t) = cache.lock().expect("profile cache").get(&step.to_bits()) {
            return Ok(t.clone());
        }
        let t = Arc::new(Self::build_with(PROFILE_CUTOFF, step)?);
        cache
            .lock()
            .expect("profile cache")
            .insert(step.to_bits(), t.clone());
        Ok(t)
    }

    /// `k(τ)`, with `k` even.
    pub fn eval(&self, tau: f64) -> f64 {
        let t = tau.abs();
        if t > PROFILE_CUTOFF {
            0.0
        } else if t > self.table.range() {
            ramp_profile_cos(t).unwrap_or(0.0)
        } else {
            self.table.eval(t).re
        }
    }
}

/// f̂ from the edge pieces with a tabulated ramp profile. Cheap enough for
/// sums over millions of frequencies.
#[derive(Debug, Clone)]
pub struct EdgeTransform {
    pieces: [(f64, f64, f64); 2],
    integral: f64,
    profile: Arc<ProfileTable>,
}

impl EdgeTransform {
    /// Accurate for `|ξ| ≤ xi_max` and beyond the profile cutoff.
    pub fn new(f: &BumpFunction, xi_max: f64) -> Result<Self> {
        let (a, b) = f.ramp_widths();
        Ok(EdgeTransform {
            pieces: f.edge_pieces(),
            integral: f.integral(),
            profile: Arc::new(ProfileTable::build(a.max(b) * xi_max.abs())?),
        })
    }

    /// Tabulated out to where f̂ is cut off, with a coarser profile step.
    pub fn full_range(f: &BumpFunction, step: f64) -> Result<Self> {
        Ok(EdgeTransform {
            pieces: f.edge_pieces(),
            integral: f.integral(),
            profile: ProfileTable::full_range(step)?,
        })
    }

    /// Beyond this |ξ| the transform is treated as zero.
    pub fn cutoff(&self) -> f64 {
        let [(_, w1, _), (_, w2, _)] = self.pieces;
        PROFILE_CUTOFF / w1.min(w2)
    }

    pub fn eval(&self, xi: f64) -> Complex64 {
        if xi == 0.0 {
            return Complex64::new(self.integral, 0.0);
        }
        let [(c1, w1, h), (c2, w2, _)] = self.pieces;
        let k1 = self.profile.eval(xi * w1);
        let k2 = self.profile.eval(xi * w2);
        // h(k1 e1 − k2 e2)/(2πiξ) with e1 − e2 formed without cancellation
        let m = 0.5 * (c1 + c2);
        let d = 0.5 * (c2 - c1);
        let diff = e(-xi * m) * ((TAU * xi * d).sin() / (std::f64::consts::PI * xi));
        let rest = e(-xi * c2) * ((k1 - k2) / TAU / xi) * Complex64::new(0.0, -1.0);
        (diff * k1 + rest) * h
    }
}

/// Both sides of `∫e(−vy²)f(y)dy = e(−sgn v/8)/√(2|v|)·∫e(ξ²/4v)f̂(ξ)dξ`.
///
/// The left side is direct adaptive quadrature. The right side writes f̂ as a
/// sum of two edge pieces `a_j(ξ)e(−ξc_j)` with slowly varying amplitudes,
/// integrates on `|ξ| ≤ Ξ` and adds a two-term integration-by-parts tail.
#[derive(Debug, Clone)]
pub struct FresnelCheck {
    f: BumpFunction,
    profile: ProfileTable,
    v_max: f64,
}

impl FresnelCheck {
    pub fn new(f: &BumpFunction, v_max: f64) -> Result<Self> {
        if !(v_max > 0.0) {
            return invalid("v_max must be positive");
        }
        let (a, b) = f.ramp_widths();
        let xi_max = Self::cutoff_for(f, v_max);
        let profile = ProfileTable::build(a.max(b) * xi_max)?;
        Ok(FresnelCheck {
            f: f.clone(),
            profile,
            v_max,
        })
    }

    fn cutoff_for(f: &BumpFunction, v: f64) -> f64 {
        let v = v.abs();
        (74.0 * v.sqrt())
            .max(8.0 * v * f.max_abs_support())
            .max(40.0)
    }

    pub fn lhs(&self, v: f64) -> Result<Complex64> {
        let f = &self.f;
        let (lo, hi) = f.support();
        let (pl, ph) = f.plateau();
        let spec = QuadSpec::new(1e-12).with_frequency(2.0 * v.abs() * f.max_abs_support());
        Ok(integrate(|y| e(-v * y * y) * f.eval(y), lo, hi, &[pl, ph], spec)?.value)
    }

    fn amplitude(&self, xi: f64, width: f64, h: f64) -> Complex64 {
        Complex64::new(0.0, -h * self.profile.eval(xi * width) / (TAU * xi))
    }

    fn f_hat(&self, xi: f64) -> Result<Complex64> {
        if xi.abs() < 1.0 {
            return self.f.fourier_transform(xi);
        }
        Ok(self
            .f
            .edge_pieces()
            .iter()
            .map(|&(c, w, h)| self.amplitude(xi, w, h) * e(-xi * c))
            .sum())
    }

    pub fn rhs(&self, v: f64) -> Result<Complex64> {
        if v == 0.0 {
            return invalid("v must be nonzero");
        }
        if v.abs() > self.v_max {
            return invalid("v exceeds the tabulated range");
        }
        let big = Self::cutoff_for(&self.f, v);
        let xm = self.f.max_abs_support();
        let freq = big / (2.0 * v.abs()) + xm;
        let spec = QuadSpec::new(1e-11)
            .with_frequency(freq)
            .with_max_panels(200_000);
        let mut err = None;
        let core = integrate(
            |xi| match self.f_hat(xi) {
                Ok(fh) => fh * e(xi * xi / (4.0 * v)),
                Err(e) => {
                    err = Some(e);
                    Complex64::new(0.0, 0.0)
                }
            },
            -big,
            big,
            &[-1.0, 1.0],
            spec,
        )?;
        if let Some(e) = err {
            return Err(e);
        }
        // tails of ∫ a(ξ) e(φ(ξ)), φ(ξ) = ξ²/4v − ξc, by two integrations by parts
        let two_pi_i = Complex64::new(0.0, TAU);
        let mut tail = Complex64::new(0.0, 0.0);
        for &(c, w, h) in &self.f.edge_pieces() {
            let dphi = |xi: f64| xi / (2.0 * v) - c;
            let g = |xi: f64| self.amplitude(xi, w, h) / dphi(xi);
            let dg = |xi: f64| {
                let d = 1e-3 * big;
                (g(xi + d) - g(xi - d)) / (2.0 * d)
            };
            for (end, sign) in [(big, -1.0), (-big, 1.0)] {
                let ph = e(end * end / (4.0 * v) - end * c);
                tail +=
                    ph * (g(end) / two_pi_i - dg(end) / (two_pi_i * two_pi_i * dphi(end))) * sign;
            }
        }
        let pref = e(-v.signum() / 8.0) / (2.0 * v.abs()).sqrt();
        Ok(pref * (core.value + tail))
    }
}

/// `(LHS, RHS)` of the Fresnel-type identity for one `v`.
pub fn fresnel_identity_check(v: f64, f: &BumpFunction) -> Result<(Complex64, Complex64)> {
    let c = FresnelCheck::new(f, v.abs())?;
    Ok((c.lhs(v)?, c.rhs(v)?))
}
