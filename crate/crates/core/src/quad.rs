//! Gauss–Legendre rules and adaptive Gauss–Kronrod integration for complex integrands.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Nodes and weights of the n-point Gauss–Legendre rule on [-1, 1], ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (z * p - p0) / (z * z - 1.0);
    (p, d)
}

/// Composite Gauss–Legendre rule: `panels` equal panels of `order` nodes each on [a, b].
pub fn composite_gl(a: f64, b: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let c = lo + 0.5 * h;
        for (xi, wi) in x.iter().zip(&w) {
            out.push((c + 0.5 * h * xi, 0.5 * h * wi));
        }
    }
    out
}

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_22,
    0.0,
];

const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_35,
    0.295_524_224_714_752_87,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_725,
    0.054_755_896_574_351_995,
    0.075_039_674_810_919_96,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_84,
    0.134_709_217_311_473_34,
    0.142_775_938_577_060_09,
    0.147_739_104_901_338_49,
    0.149_445_554_002_916_9,
];

/// One 21-point Kronrod panel: (estimate, error estimate).
pub fn gk21<F: FnMut(f64) -> Complex64>(f: &mut F, a: f64, b: f64) -> (Complex64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[10];
    let mut rg = Complex64::new(0.0, 0.0);
    let mut abs_k = fc.re.abs() * WGK[10] + fc.im.abs() * WGK[10];
    let mut fv1 = [Complex64::new(0.0, 0.0); 10];
    let mut fv2 = [Complex64::new(0.0, 0.0); 10];
    for j in 0..10 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        rk += (f1 + f2) * WGK[j];
        abs_k += WGK[j] * (f1.re.abs() + f2.re.abs() + f1.im.abs() + f2.im.abs());
        if j % 2 == 1 {
            rg += (f1 + f2) * WG[j / 2];
        }
    }
    // mean deviation for the QUADPACK error heuristic, per component
    let mean = rk * 0.5;
    let mut asc_re = WGK[10] * (fc.re - mean.re).abs();
    let mut asc_im = WGK[10] * (fc.im - mean.im).abs();
    for j in 0..10 {
        asc_re += WGK[j] * ((fv1[j].re - mean.re).abs() + (fv2[j].re - mean.re).abs());
        asc_im += WGK[j] * ((fv1[j].im - mean.im).abs() + (fv2[j].im - mean.im).abs());
    }
    let scale = h.abs();
    let est = rk * h;
    let diff = (rk - rg) * h;
    let err = component_error(diff.re.abs(), asc_re * scale, abs_k * scale)
        + component_error(diff.im.abs(), asc_im * scale, abs_k * scale);
    (est, err)
}

fn component_error(diff: f64, resasc: f64, resabs: f64) -> f64 {
    let mut err = diff;
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    let floor = 50.0 * f64::EPSILON * resabs;
    if floor > err {
        err = floor;
    }
    err
}

/// Settings for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadSpec {
    pub abs_tol: f64,
    pub max_panels: usize,
    /// Upper bound on the integrand's oscillation frequency (cycles per unit length).
    pub frequency: f64,
}

impl QuadSpec {
    pub fn new(abs_tol: f64) -> Self {
        QuadSpec {
            abs_tol,
            max_panels: 20_000,
            frequency: 0.0,
        }
    }

    pub fn with_frequency(mut self, freq: f64) -> Self {
        self.frequency = freq.abs();
        self
    }

    pub fn with_max_panels(mut self, n: usize) -> Self {
        self.max_panels = n;
        self
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadValue {
    pub value: Complex64,
    pub error: f64,
}

struct Panel {
    a: f64,
    b: f64,
    est: Complex64,
    err: f64,
}

impl PartialEq for Panel {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Panel {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Adaptive integration of `f` over `[a, b]` split at `breaks`.
///
/// If `spec.frequency * (b - a) > 8` each initial segment is cut so that no
/// panel spans more than one oscillation.
pub fn integrate<F: FnMut(f64) -> Complex64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    spec: QuadSpec,
) -> Result<QuadValue> {
    if a == b {
        return Ok(QuadValue {
            value: Complex64::new(0.0, 0.0),
            error: 0.0,
        });
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut cuts = vec![lo];
    let mut inner: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|&x| x > lo && x < hi)
        .collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    cuts.extend(inner);
    cuts.push(hi);

    let oscillatory = spec.frequency * (hi - lo) > 8.0;
    let mut heap = BinaryHeap::new();
    let mut total = Complex64::new(0.0, 0.0);
    let mut total_err = 0.0;
    for w in cuts.windows(2) {
        let len = w[1] - w[0];
        let pieces = if oscillatory {
            ((spec.frequency * len).ceil() as usize).max(1)
        } else {
            1
        };
        let step = len / pieces as f64;
        for p in 0..pieces {
            let pa = w[0] + p as f64 * step;
            let pb = if p + 1 == pieces { w[1] } else { pa + step };
            let (est, err) = gk21(&mut f, pa, pb);
            total += est;
            total_err += err;
            heap.push(Panel {
                a: pa,
                b: pb,
                est,
                err,
            });
        }
    }

    while total_err > spec.abs_tol {
        if heap.len() >= spec.max_panels {
            return Err(Error::Quadrature {
                achieved: total_err,
                target: spec.abs_tol,
            });
        }
        let worst = heap.pop().expect("nonempty panel heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            return Err(Error::Quadrature {
                achieved: total_err,
                target: spec.abs_tol,
            });
        }
        let (e1, r1) = gk21(&mut f, worst.a, mid);
        let (e2, r2) = gk21(&mut f, mid, worst.b);
        total += e1 + e2 - worst.est;
        total_err += r1 + r2 - worst.err;
        heap.push(Panel {
            a: worst.a,
            b: mid,
            est: e1,
            err: r1,
        });
        heap.push(Panel {
            a: mid,
            b: worst.b,
            est: e2,
            err: r2,
        });
    }
    // re-sum in a fixed order to shed accumulated update drift
    let mut panels: Vec<Panel> = heap.into_vec();
    panels.sort_by(|p, q| p.a.total_cmp(&q.a));
    let value: Complex64 = panels.iter().map(|p| p.est).sum();
    let error: f64 = panels.iter().map(|p| p.err).sum();
    Ok(QuadValue {
        value: value * sign,
        error,
    })
}

/// Real-valued convenience wrapper around [`integrate`].
pub fn integrate_real<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    spec: QuadSpec,
) -> Result<(f64, f64)> {
    let r = integrate(|x| Complex64::new(f(x), 0.0), a, b, breaks, spec)?;
    Ok((r.value.re, r.error))
}
