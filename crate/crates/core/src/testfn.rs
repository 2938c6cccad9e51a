//! Smooth compactly supported bumps built from the mollifier ramp, and the
//! four-function family (window, weight, arc density, coupling) used throughout.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quad::{composite_gl, gauss_legendre, integrate, QuadSpec};

/// `e(x) = exp(2πix)`.
#[inline]
pub fn e(x: f64) -> Complex64 {
    let (s, c) = (TAU * x).sin_cos();
    Complex64::new(c, s)
}

/// Smooth monotone step from 0 at t ≤ 0 to 1 at t ≥ 1.
///
/// With m(y) = exp(−1/(1−y²)) this is m(1−t)/(m(1−t)+m(t)); it satisfies
/// ramp(t) + ramp(1−t) = 1.
pub fn ramp(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    // m(t)/m(1-t) = exp(g)
    let g = 1.0 / (t * (2.0 - t)) - 1.0 / (1.0 - t * t);
    1.0 / (1.0 + g.exp())
}

/// Derivative of [`ramp`].
pub fn ramp_derivative(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    let g = 1.0 / (t * (2.0 - t)) - 1.0 / (1.0 - t * t);
    let a = t * (2.0 - t);
    let b = 1.0 - t * t;
    let dg = -(2.0 - 2.0 * t) / (a * a) - 2.0 * t / (b * b);
    let s = 1.0 / (1.0 + g.exp());
    if s == 0.0 || s == 1.0 {
        return 0.0;
    }
    -s * (1.0 - s) * dg
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    PlateauOne,
    UnitIntegral,
}

/// `height · ramp` up on `[lo, plat_lo]`, flat on `[plat_lo, plat_hi]`, down on `[plat_hi, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpFunction {
    lo: f64,
    hi: f64,
    plat_lo: f64,
    plat_hi: f64,
    normalization: Normalization,
    height: f64,
}

impl BumpFunction {
    /// `plateau = None` gives an apex at the midpoint of the support.
    pub fn new(
        support: (f64, f64),
        plateau: Option<(f64, f64)>,
        normalization: Normalization,
    ) -> Result<Self> {
        let (lo, hi) = support;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return invalid(format!("bad support ({lo}, {hi})"));
        }
        let mid = 0.5 * (lo + hi);
        let (pl, ph) = plateau.unwrap_or((mid, mid));
        if !(pl <= ph) {
            return invalid(format!("bad plateau [{pl}, {ph}]"));
        }
        if !(lo < pl && ph < hi) {
            return invalid(format!(
                "plateau [{pl}, {ph}] must sit strictly inside the support ({lo}, {hi}); zero ramp width is not smooth"
            ));
        }
        let mut f = BumpFunction {
            lo,
            hi,
            plat_lo: pl,
            plat_hi: ph,
            normalization,
            height: 1.0,
        };
        if normalization == Normalization::UnitIntegral {
            f.height = 1.0 / f.shape_integral();
        }
        Ok(f)
    }

    pub fn with_apex(support: (f64, f64), apex: f64, normalization: Normalization) -> Result<Self> {
        Self::new(support, Some((apex, apex)), normalization)
    }

    /// `c · f`, keeping the support. Used to build degenerate families (c = 0).
    pub fn scaled(mut self, c: f64) -> Self {
        self.height *= c;
        self
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn plateau(&self) -> (f64, f64) {
        (self.plat_lo, self.plat_hi)
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    /// Widths of the rising and falling ramps.
    pub fn ramp_widths(&self) -> (f64, f64) {
        (self.plat_lo - self.lo, self.hi - self.plat_hi)
    }

    pub fn max_abs_support(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.lo || x >= self.hi {
            0.0
        } else if x < self.plat_lo {
            self.height * ramp((x - self.lo) / (self.plat_lo - self.lo))
        } else if x <= self.plat_hi {
            self.height
        } else {
            self.height * ramp((self.hi - x) / (self.hi - self.plat_hi))
        }
    }

    fn shape_integral(&self) -> f64 {
        0.5 * ((self.hi - self.lo) + (self.plat_hi - self.plat_lo))
    }

    /// Exact integral; each ramp contributes half its width.
    pub fn integral(&self) -> f64 {
        self.height * self.shape_integral()
    }

    fn breaks(&self) -> [f64; 2] {
        [self.plat_lo, self.plat_hi]
    }

    /// `f̂(ξ) = ∫ f(x) e(−ξx) dx` by adaptive quadrature, absolute error ≤ 1e−10.
    pub fn fourier_transform(&self, xi: f64) -> Result<Complex64> {
        self.transform_with(xi, 1e-10, |_| 1.0)
    }

    /// `d/dξ f̂(ξ) = ∫ (−2πix) f(x) e(−ξx) dx`.
    pub fn fourier_transform_derivative(&self, xi: f64) -> Result<Complex64> {
        let v = self.transform_with(xi, 1e-10, |x| x)?;
        Ok(v * Complex64::new(0.0, -TAU))
    }

    fn transform_with(&self, xi: f64, tol: f64, weight: impl Fn(f64) -> f64) -> Result<Complex64> {
        if self.height == 0.0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        let spec = QuadSpec::new(tol).with_frequency(xi);
        let r = integrate(
            |x| e(-xi * x) * (self.eval(x) * weight(x)),
            self.lo,
            self.hi,
            &self.breaks(),
            spec,
        )?;
        Ok(r.value)
    }

    /// `f̂(ξ)` through f̂(ξ) = ĝ(ξ)/(2πiξ) with g = f′ supported on the two
    /// ramps. Each ramp contributes `±height·k(ξ·width)/(2πiξ)·e(−ξ·centre)`
    /// with `k` the real profile transform of [`ramp_profile_cos`]. Returns the
    /// pieces `(centre, width, ±height)`.
    pub fn edge_pieces(&self) -> [(f64, f64, f64); 2] {
        let (a, b) = self.ramp_widths();
        [
            (self.lo + 0.5 * a, a, self.height),
            (self.hi - 0.5 * b, b, -self.height),
        ]
    }

    /// Alternative evaluation of f̂ from [`edge_pieces`](Self::edge_pieces).
    pub fn fourier_transform_edges(&self, xi: f64) -> Result<Complex64> {
        if xi == 0.0 {
            return Ok(Complex64::new(self.integral(), 0.0));
        }
        let denom = Complex64::new(0.0, TAU * xi);
        let mut s = Complex64::new(0.0, 0.0);
        for (c, w, h) in self.edge_pieces() {
            s += e(-xi * c) * (h * ramp_profile_cos(xi * w)?);
        }
        Ok(s / denom)
    }

    /// Nodes and weights (weight already multiplied by f) of a composite
    /// Gauss rule resolving the ramps and `max_freq` cycles per unit length.
    pub fn weighted_nodes(&self, max_freq: f64) -> Vec<(f64, f64)> {
        const ORDER: usize = 16;
        let (gx, gw) = gauss_legendre(ORDER);
        let mut out = Vec::new();
        let mut push = |a: f64, b: f64, panels: usize| {
            let h = (b - a) / panels as f64;
            for p in 0..panels {
                let c = a + (p as f64 + 0.5) * h;
                for (x, w) in gx.iter().zip(&gw) {
                    let t = c + 0.5 * h * x;
                    out.push((t, 0.5 * h * w * self.eval(t)));
                }
            }
        };
        let per = |len: f64| ((len * max_freq * 2.0).ceil() as usize).max(1);
        let (wl, wr) = self.ramp_widths();
        push(self.lo, self.plat_lo, 6.max(per(wl)));
        if self.plat_hi > self.plat_lo {
            push(self.plat_lo, self.plat_hi, per(self.plat_hi - self.plat_lo));
        }
        push(self.plat_hi, self.hi, 6.max(per(wr)));
        out
    }
}

/// `k(τ) = ∫₀¹ ramp′(t) cos(2πτ(t − 1/2)) dt`. Since ramp′ is symmetric about
/// 1/2, the transform of the ramp profile is `e(−τ/2)·k(τ)`.
pub fn ramp_profile_cos(tau: f64) -> Result<f64> {
    profile_moment(tau, false)
}

/// `k′(τ)`.
pub fn ramp_profile_cos_derivative(tau: f64) -> Result<f64> {
    profile_moment(tau, true)
}

fn profile_moment(tau: f64, derivative: bool) -> Result<f64> {
    if !tau.is_finite() {
        return invalid("profile argument must be finite");
    }
    let panels = 16 + (2.0 * tau.abs()).ceil() as usize;
    let s = composite_gl(0.0, 1.0, panels, 16)
        .into_iter()
        .map(|(t, w)| {
            let arg = TAU * (t - 0.5);
            let v = if derivative {
                -arg * (arg * tau).sin()
            } else {
                (arg * tau).cos()
            };
            w * ramp_derivative(t) * v
        })
        .sum();
    Ok(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub order: u32,
    pub sup: f64,
    pub argmax: f64,
    pub points: usize,
}

/// Sup over the grid of |f̂(ξ)|·(1 + |ξ|^A).
pub fn check_decay(f: &BumpFunction, order: u32, grid: &[f64]) -> Result<DecayReport> {
    if order > 12 {
        return invalid("decay order must be at most 12");
    }
    if grid.is_empty() {
        return invalid("empty frequency grid");
    }
    let mut sup = 0.0;
    let mut argmax = grid[0];
    for &xi in grid {
        let v = f.fourier_transform(xi)?.norm() * (1.0 + xi.abs().powi(order as i32));
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite decay value at {xi}"
            )));
        }
        if v > sup {
            sup = v;
            argmax = xi;
        }
    }
    Ok(DecayReport {
        order,
        sup,
        argmax,
        points: grid.len(),
    })
}

/// Run-config parameters of the test-function family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFnParams {
    pub eta: f64,
    pub s: f64,
    /// Half-width of the arc density's support.
    pub phi_support: f64,
    /// Half-width of the coupling function's support.
    pub w_support: f64,
}

impl Default for TestFnParams {
    fn default() -> Self {
        TestFnParams {
            eta: 1.0 / 200.0,
            s: 1.0,
            phi_support: 0.01,
            w_support: 0.5,
        }
    }
}

/// Window Φ, weight V, arc density φ and coupling w.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunctionSet {
    pub eta_smooth: f64,
    pub s: f64,
    pub window: BumpFunction,
    pub weight: BumpFunction,
    pub phi_bump: BumpFunction,
    pub w_bump: BumpFunction,
}

impl TestFunctionSet {
    pub fn new(p: TestFnParams) -> Result<Self> {
        if !(p.eta > 0.0 && p.eta < 0.01) {
            return invalid(format!("eta = {} must lie in (0, 1/100)", p.eta));
        }
        if !(p.s > 0.0 && p.s.is_finite()) {
            return invalid(format!("s = {} must be positive", p.s));
        }
        if !(p.phi_support > 0.0 && p.phi_support <= 0.01) {
            return invalid(format!(
                "phi_support = {} must lie in (0, 1/100]",
                p.phi_support
            ));
        }
        if !(p.w_support > 0.0 && p.w_support <= 0.5) {
            return invalid(format!("w_support = {} must lie in (0, 1/2]", p.w_support));
        }
        let eta = p.eta;
        let window = BumpFunction::new(
            (0.0, p.s + eta),
            Some((eta, p.s)),
            Normalization::PlateauOne,
        )?;
        let weight = BumpFunction::new(
            (1.0 - eta, 2.0 + eta),
            Some((1.0, 2.0)),
            Normalization::PlateauOne,
        )?;
        let c = p.phi_support;
        let phi_bump = BumpFunction::with_apex((-c, c), 0.0, Normalization::UnitIntegral)?;
        let w = p.w_support;
        let w_bump = BumpFunction::with_apex((-w, w), 0.0, Normalization::PlateauOne)?;
        Self::from_parts(eta, p.s, window, weight, phi_bump, w_bump)
    }

    /// Assemble from explicit bumps, checking the family's structural requirements.
    pub fn from_parts(
        eta_smooth: f64,
        s: f64,
        window: BumpFunction,
        weight: BumpFunction,
        phi_bump: BumpFunction,
        w_bump: BumpFunction,
    ) -> Result<Self> {
        let (vl, vh) = weight.support();
        if !(vl >= 0.5 && vh <= 3.0) {
            return invalid("weight support must lie in (1/2, 3)");
        }
        let (pl, ph) = phi_bump.support();
        if !(pl >= -0.01 && ph <= 0.01) || phi_bump.normalization() != Normalization::UnitIntegral {
            return invalid("arc density must be unit-integral with support in [-1/100, 1/100]");
        }
        if (pl + ph).abs() > 1e-15
            || (phi_bump.eval(0.3 * ph) - phi_bump.eval(-0.3 * ph)).abs() > 0.0
        {
            return invalid("arc density must be symmetric about 0");
        }
        let (wl, wh) = w_bump.support();
        if !(wl >= -0.5 && wh <= 0.5) || (w_bump.eval(0.0) - 1.0).abs() > 1e-15 {
            return invalid("coupling function must live in (-1/2, 1/2) with w(0) = 1");
        }
        Ok(TestFunctionSet {
            eta_smooth,
            s,
            window,
            weight,
            phi_bump,
            w_bump,
        })
    }

    pub fn with_window(mut self, window: BumpFunction) -> Self {
        self.window = window;
        self
    }

    pub fn with_weight(mut self, weight: BumpFunction) -> Result<Self> {
        let (vl, vh) = weight.support();
        if !(vl >= 0.5 && vh <= 3.0) {
            return invalid("weight support must lie in (1/2, 3)");
        }
        self.weight = weight;
        Ok(self)
    }

    pub fn with_phi(self, phi_bump: BumpFunction) -> Result<Self> {
        Self::from_parts(
            self.eta_smooth,
            self.s,
            self.window,
            self.weight,
            phi_bump,
            self.w_bump,
        )
    }

    /// Φ̂(0)·V̂(0), the mean of the smoothed count.
    pub fn main_term(&self) -> f64 {
        self.window.integral() * self.weight.integral()
    }
}

impl Default for TestFunctionSet {
    fn default() -> Self {
        TestFunctionSet::new(TestFnParams::default()).expect("default parameters are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn window_values() {
        let phi =
            BumpFunction::new((0.0, 2.1), Some((0.1, 2.0)), Normalization::PlateauOne).unwrap();
        assert_eq!(phi.eval(1.0), 1.0);
        assert_eq!(phi.eval(-0.5), 0.0);
        let m = phi.eval(0.05);
        assert!(m > 0.0 && m < 1.0);
        assert!((m - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ramp_is_monotone_and_symmetric() {
        let mut prev = 0.0;
        for i in 0..=20_000 {
            let t = i as f64 / 20_000.0;
            let r = ramp(t);
            assert!(r >= prev, "t = {t}");
            assert!((r + ramp(1.0 - t) - 1.0).abs() < 1e-15);
            prev = r;
        }
    }

    #[test]
    fn ramp_derivative_matches_difference_quotient() {
        for i in 1..100 {
            let t = i as f64 / 100.0;
            let h = 1e-6;
            let fd = (ramp(t + h) - ramp(t - h)) / (2.0 * h);
            assert!((fd - ramp_derivative(t)).abs() < 1e-7, "t = {t}");
        }
    }

    #[test]
    fn zero_ramp_width_rejected() {
        assert!(
            BumpFunction::new((0.0, 1.0), Some((0.0, 0.5)), Normalization::PlateauOne).is_err()
        );
        assert!(
            BumpFunction::new((0.0, 1.0), Some((0.5, 1.0)), Normalization::PlateauOne).is_err()
        );
        assert!(BumpFunction::new((1.0, 1.0), None, Normalization::PlateauOne).is_err());
    }

    #[test]
    fn plateau_one_invariants_on_grid() {
        let tf = TestFunctionSet::default();
        for f in [&tf.window, &tf.weight, &tf.w_bump] {
            let (lo, hi) = f.support();
            let (pl, ph) = f.plateau();
            for i in 0..10_000 {
                let x = lo - 0.1 + (hi - lo + 0.2) * i as f64 / 9_999.0;
                let v = f.eval(x);
                assert!((0.0..=1.0).contains(&v));
                if x <= lo || x >= hi {
                    assert_eq!(v, 0.0);
                }
                if x >= pl && x <= ph {
                    assert_eq!(v, 1.0);
                }
            }
        }
        assert_eq!(tf.w_bump.eval(0.0), 1.0);
    }

    #[test]
    fn unit_integral_phi() {
        let tf = TestFunctionSet::default();
        let f = &tf.phi_bump;
        let (v, _) =
            crate::quad::integrate_real(|x| f.eval(x), -0.01, 0.01, &[0.0], QuadSpec::new(1e-12))
                .unwrap();
        assert!((v - 1.0).abs() < 1e-10);
        let t = f.fourier_transform(0.0).unwrap();
        assert!((t.re - 1.0).abs() < 1e-10 && t.im.abs() < 1e-12);
    }

    #[test]
    fn weight_integral_against_simpson() {
        let tf = TestFunctionSet::default();
        let v = &tf.weight;
        let simp = simpson(|x| v.eval(x), 0.99, 2.01, 400_000);
        let ft = v.fourier_transform(0.0).unwrap();
        assert!((ft.re - simp).abs() < 1e-9, "{} {}", ft.re, simp);
        assert!((v.integral() - 1.0 - tf.eta_smooth).abs() < 1e-15);
        assert!((ft.re - v.integral()).abs() < 1e-10);
    }

    #[test]
    fn transform_routes_agree() {
        let tf = TestFunctionSet::default();
        for f in [&tf.window, &tf.weight, &tf.phi_bump, &tf.w_bump] {
            for &xi in &[0.3, -1.7, 5.0, 40.0, -250.0, 1000.0] {
                let a = f.fourier_transform(xi).unwrap();
                let b = f.fourier_transform_edges(xi).unwrap();
                assert!(
                    (a - b).norm() < 1e-10 * f.height().max(1.0),
                    "xi = {xi}: {a} {b}"
                );
                assert!(a.norm() <= f.integral() + 1e-10);
            }
        }
    }

    #[test]
    fn ramp_profile_against_adaptive() {
        let (k0, _) = crate::quad::integrate_real(
            ramp_derivative,
            0.0,
            1.0,
            &[0.5],
            QuadSpec::new(1e-12),
        )
        .unwrap();
        assert!((k0 - 1.0).abs() < 1e-11, "{k0}");
        assert!((k0 - 1.0).abs() < 1e-11);
        for &tau in &[0.4, 3.3, 17.0, 61.5] {
            let (want, _) = crate::quad::integrate_real(
                |t| ramp_derivative(t) * (TAU * tau * (t - 0.5)).cos(),
                0.0,
                1.0,
                &[0.5],
                QuadSpec::new(1e-12).with_frequency(tau),
            )
            .unwrap();
            assert!(
                (ramp_profile_cos(tau).unwrap() - want).abs() < 1e-11,
                "tau = {tau}"
            );
            assert!(
                (ramp_profile_cos(-tau).unwrap() - ramp_profile_cos(tau).unwrap()).abs() < 1e-14
            );
            let h = 1e-5;
            let fd = (ramp_profile_cos(tau + h).unwrap() - ramp_profile_cos(tau - h).unwrap())
                / (2.0 * h);
            assert!(
                (ramp_profile_cos_derivative(tau).unwrap() - fd).abs() < 1e-8,
                "tau = {tau}"
            );
        }
    }

    #[test]
    fn derivative_transform_matches_difference() {
        let tf = TestFunctionSet::default();
        let f = &tf.window;
        for &xi in &[0.0, 0.7, -3.2, 12.5] {
            let h = 1e-5;
            let fd = (f.fourier_transform(xi + h).unwrap() - f.fourier_transform(xi - h).unwrap())
                / (2.0 * h);
            let d = f.fourier_transform_derivative(xi).unwrap();
            assert!((fd - d).norm() < 1e-6);
        }
    }

    #[test]
    fn weighted_nodes_integrate_transform() {
        let tf = TestFunctionSet::default();
        let f = &tf.window;
        let nodes = f.weighted_nodes(40.0);
        for &xi in &[0.0, 3.3, -17.0, 40.0] {
            let s: Complex64 = nodes.iter().map(|&(x, w)| e(-xi * x) * w).sum();
            let a = f.fourier_transform(xi).unwrap();
            assert!((s - a).norm() < 1e-11, "xi = {xi}: {}", (s - a).norm());
        }
    }

    #[test]
    fn decay_probe_reports() {
        let tf = TestFunctionSet::default();
        assert!(check_decay(&tf.window, 4, &[]).is_err());
        assert!(check_decay(&tf.window, 13, &[1.0]).is_err());
        let grid: Vec<f64> = (0..=200).map(|i| i as f64 * 0.5).collect();
        let r = check_decay(&tf.w_bump, 4, &grid).unwrap();
        assert!(r.sup.is_finite() && r.sup > 0.0);
    }

    #[test]
    fn family_validation() {
        let mut p = TestFnParams::default();
        p.eta = 0.02;
        assert!(TestFunctionSet::new(p).is_err());
        let tf = TestFunctionSet::default();
        let (lo, hi) = tf.weight.support();
        assert!(lo > 0.5 && hi < 3.0);
        assert!((tf.main_term() - 1.005).abs() < 1e-15);
        let json = serde_json::to_string(&TestFnParams::default()).unwrap();
        assert!(
            json.contains("\"eta\"") && json.contains("phi_support") && json.contains("w_support")
        );
    }

    proptest! {
        #[test]
        fn bump_bounded_and_supported(lo in -5.0f64..5.0, len in 0.01f64..4.0, a in 0.05f64..0.45, b in 0.55f64..0.95, x in -10.0f64..10.0) {
            let hi = lo + len;
            let f = BumpFunction::new((lo, hi), Some((lo + a * len, lo + b * len)), Normalization::PlateauOne).unwrap();
            let v = f.eval(x);
            prop_assert!((0.0..=1.0).contains(&v));
            if x <= lo || x >= hi { prop_assert_eq!(v, 0.0); }
        }

        #[test]
        fn transform_bounded_by_integral(xi in -200.0f64..200.0) {
            let tf = TestFunctionSet::default();
            let t = tf.window.fourier_transform(xi).unwrap();
            prop_assert!(t.norm() <= tf.window.integral() + 1e-10);
        }
    }
}
