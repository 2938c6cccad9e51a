//! Exact integer kernel: inverses, totients, Ramanujan and Gauss sums, the
//! modulus family and its lattice pairs, and the phase-reduction identity.

use num_bigint::BigInt;
use num_complex::Complex64;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::testfn::e;

pub const GAUSS_SUM_LIMIT: u64 = 1_000_000;

pub fn gcd(a: i128, b: i128) -> i128 {
    a.gcd(&b)
}

/// `y ∈ [1, m)` with `x·y ≡ 1 (mod m)`.
pub fn mod_inverse(x: i128, m: i128) -> Result<i128> {
    if m < 2 {
        return invalid(format!("modulus {m} must be at least 2"));
    }
    let r = x.extended_gcd(&m);
    if r.gcd != 1 {
        return Err(Error::NotInvertible {
            value: x,
            modulus: m,
        });
    }
    Ok(r.x.rem_euclid(m))
}

/// Prime factorization by trial division, primes ascending.
pub fn factorize(mut n: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut p = 2u64;
    while p * p <= n {
        if n.is_multiple_of(p) {
            let mut k = 0;
            while n.is_multiple_of(p) {
                n /= p;
                k += 1;
            }
            out.push((p, k));
        }
        p += if p == 2 { 1 } else { 2 };
    }
    if n > 1 {
        out.push((n, 1));
    }
    out
}

pub fn is_prime(n: u64) -> bool {
    n >= 2 && factorize(n).first() == Some(&(n, 1))
}

pub fn euler_phi(q: u64) -> u64 {
    assert!(q >= 1);
    factorize(q)
        .iter()
        .fold(q, |acc, &(p, _)| acc / p * (p - 1))
}

pub fn mobius(n: u64) -> i64 {
    assert!(n >= 1);
    let f = factorize(n);
    if f.iter().any(|&(_, k)| k > 1) {
        0
    } else if f.len().is_multiple_of(2) {
        1
    } else {
        -1
    }
}

pub fn divisors(n: u64) -> Vec<u64> {
    let mut d = vec![1u64];
    for (p, k) in factorize(n) {
        let len = d.len();
        let mut pk = 1;
        for _ in 0..k {
            pk *= p;
            for i in 0..len {
                d.push(d[i] * pk);
            }
        }
    }
    d.sort_unstable();
    d
}

/// `c_q(ℓ) = Σ_{d | q, d | ℓ} μ(q/d)·d`.
pub fn ramanujan_sum(q: u64, l: i64) -> i64 {
    let l = l.unsigned_abs();
    divisors(q)
        .into_iter()
        .filter(|&d| l.is_multiple_of(d))
        .map(|d| mobius(q / d) * d as i64)
        .sum()
}

/// `G(a, b; c) = Σ_{x mod c} e((a x² + b x)/c)`, summed for x ascending.
pub fn gauss_sum_direct(a: i64, b: i64, c: u64) -> Result<Complex64> {
    if c == 0 {
        return invalid("modulus must be positive");
    }
    if c > GAUSS_SUM_LIMIT {
        return Err(Error::BruteForceLimit {
            len: c,
            limit: GAUSS_SUM_LIMIT,
        });
    }
    let c = c as i128;
    let a = (a as i128).rem_euclid(c);
    let b = (b as i128).rem_euclid(c);
    let mut s = Complex64::new(0.0, 0.0);
    for x in 0..c {
        let r = (a * x % c * x + b * x) % c;
        s += e(r as f64 / c as f64);
    }
    Ok(s)
}

/// Closed form of `G(1, u; 4v)`: zero for odd u, else √2·√(4v)·e(1/8)·e(−(u/2)²/(4v)).
pub fn gauss_sum_closed(u: i64, v: u64) -> Complex64 {
    assert!(v >= 1);
    if u % 2 != 0 {
        return Complex64::new(0.0, 0.0);
    }
    let m = 4 * v as i128;
    let h = (u / 2) as i128;
    let r = (h * h).rem_euclid(m);
    let amp = (2.0 * m as f64).sqrt();
    e(0.125) * e(-(r as f64) / m as f64) * amp
}

/// Components `inv(jh)/i, inv(ih)/j, inv(ij)/h` (inverses taken mod |i|, |j|, |h|)
/// whose sum is `1/(ijh)` mod 1.
pub fn crt_phase_split(i: i64, j: i64, h: i64) -> Result<[BigRational; 3]> {
    let (i, j, h) = (i as i128, j as i128, h as i128);
    if i == 0 || j == 0 || h == 0 || gcd(i, j) != 1 || gcd(i, h) != 1 || gcd(j, h) != 1 {
        return Err(Error::NotCoprime([i, j, h]));
    }
    let comp = |m: i128, rest: i128| -> BigRational {
        if m.abs() == 1 {
            return BigRational::zero();
        }
        let inv = mod_inverse(rest.rem_euclid(m.abs()), m.abs()).expect("coprime checked");
        BigRational::new(BigInt::from(inv), BigInt::from(m))
    };
    Ok([comp(i, j * h), comp(j, i * h), comp(h, i * j)])
}

/// Fractional part of a rational in [0, 1).
pub fn frac(x: &BigRational) -> BigRational {
    x - x.floor()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QMode {
    Paper,
    DeskPrimePair,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct QMember {
    pub q: u64,
    pub a: u64,
    pub b: u64,
}

impl Serialize for QMember {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.q, self.a, self.b].serialize(s)
    }
}

impl<'de> Deserialize<'de> for QMember {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [q, a, b] = <[u64; 3]>::deserialize(d)?;
        Ok(QMember { q, a, b })
    }
}

/// The modulus family: squarefree `q = a·b ∈ [Q, 2Q]`, `Q = Δ√N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSet {
    pub delta: f64,
    pub n: u64,
    pub mode: QMode,
    pub prime_floor: u64,
    pub a_band: (u64, u64),
    pub members: Vec<QMember>,
}

/// `⌈Δ⁴⌉`: the smallest prime floor keeping `gcd(v, q) = 1` automatic on lattice pairs.
pub fn default_prime_floor(delta: f64) -> u64 {
    (delta.powi(4) - 1e-9).ceil().max(3.0) as u64
}

pub fn default_a_band(prime_floor: u64) -> (u64, u64) {
    (prime_floor + 1, 2 * (prime_floor + 1))
}

impl QSet {
    pub fn q_real(&self) -> f64 {
        self.delta * (self.n as f64).sqrt()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn moduli(&self) -> impl Iterator<Item = u64> + '_ {
        self.members.iter().map(|m| m.q)
    }

    /// `L = Σ φ(q)`: the number of arcs.
    pub fn arc_count(&self) -> u64 {
        self.moduli().map(euler_phi).sum()
    }

    /// A family from explicit moduli (each recorded as `q = q·1`).
    pub fn from_moduli(delta: f64, n: u64, qs: &[u64]) -> Result<QSet> {
        let mut members: Vec<QMember> = qs.iter().map(|&q| QMember { q, a: q, b: 1 }).collect();
        members.sort();
        members.dedup_by_key(|m| m.q);
        if members.is_empty() {
            return Err(Error::EmptyQSet);
        }
        if members.iter().any(|m| m.q < 2) {
            return invalid("moduli must be at least 2");
        }
        Ok(QSet {
            delta,
            n,
            mode: QMode::Explicit,
            prime_floor: 0,
            a_band: (0, 0),
            members,
        })
    }
}

/// Build the family with the default a-band for the mode.
pub fn build_qset(delta: f64, n: u64, mode: QMode, prime_floor: u64) -> Result<QSet> {
    let band = match mode {
        QMode::Paper => {
            let q = delta * (n as f64).sqrt();
            let t = q.powf(1e-3);
            (t.ceil() as u64, (2.0 * t).floor() as u64)
        }
        _ => default_a_band(prime_floor),
    };
    build_qset_with_band(delta, n, mode, prime_floor, band)
}

pub fn build_qset_with_band(
    delta: f64,
    n: u64,
    mode: QMode,
    prime_floor: u64,
    band: (u64, u64),
) -> Result<QSet> {
    if n < 100 {
        return invalid(format!("N = {n} must be at least 100"));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return invalid(format!("Delta = {delta} must be positive"));
    }
    let q_real = delta * (n as f64).sqrt();
    let q_lo = q_real.ceil() as u64;
    let q_hi = (2.0 * q_real).floor() as u64;
    let mut members = Vec::new();
    match mode {
        QMode::Explicit => return invalid("explicit families are built with QSet::from_moduli"),
        QMode::Paper => {
            // every prime factor must exceed Δ^2001
            let floor = delta.powf(2001.0);
            if floor.is_finite() && floor < q_hi as f64 {
                let floor = floor as u64;
                for q in q_lo..=q_hi {
                    let f = factorize(q);
                    if f.iter().any(|&(p, k)| k > 1 || p <= floor) {
                        continue;
                    }
                    if let Some(a) = divisors(q)
                        .into_iter()
                        .find(|&d| d >= band.0 && d <= band.1)
                    {
                        members.push(QMember { q, a, b: q / a });
                    }
                }
            }
        }
        QMode::DeskPrimePair => {
            if prime_floor < 3 {
                return invalid(format!("prime floor {prime_floor} must be at least 3"));
            }
            for a in band.0.max(prime_floor + 1)..=band.1 {
                if !is_prime(a) {
                    continue;
                }
                let b_lo = q_lo.div_ceil(a).max(prime_floor + 1);
                let b_hi = q_hi / a;
                for b in b_lo..=b_hi {
                    if b != a && is_prime(b) {
                        members.push(QMember { q: a * b, a, b });
                    }
                }
            }
        }
    }
    members.sort();
    members.dedup_by_key(|m| m.q);
    if members.is_empty() {
        return Err(Error::EmptyQSet);
    }
    Ok(QSet {
        delta,
        n,
        mode,
        prime_floor,
        a_band: band,
        members,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FareyPoint {
    pub a: u64,
    pub q: u64,
}

impl FareyPoint {
    pub fn new(a: u64, q: u64) -> Result<Self> {
        if q < 1 || a < 1 || a > q || (a as i128).gcd(&(q as i128)) != 1 {
            return invalid(format!(
                "{a}/{q} is not a reduced fraction with 1 <= a <= q"
            ));
        }
        Ok(FareyPoint { a, q })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticePair {
    pub u: i64,
    pub v: i64,
}

/// `⌊Δ⁴⌋`.
pub fn u_cap(delta: f64) -> i64 {
    (delta.powi(4) + 1e-9).floor() as i64
}

/// `⌈Δ√N⌉`.
pub fn default_v_cap(delta: f64, n: u64) -> i64 {
    (delta * (n as f64).sqrt() - 1e-9).ceil() as i64
}

/// Pairs `(u, v)` with `1 ≤ |u| ≤ Δ⁴`, `u ≡ 2va (mod q)`, `0 < |v| ≤ v_cap`,
/// `gcd(v, q) = 1`, ordered by v then u.
pub fn enumerate_bset(fp: FareyPoint, delta: f64, v_cap: i64) -> Vec<LatticePair> {
    let umax = u_cap(delta);
    let q = fp.q as i64;
    let mut out = Vec::new();
    for v in -v_cap..=v_cap {
        if v == 0 || (v as i128).gcd(&(q as i128)) != 1 {
            continue;
        }
        let r = ((2 * v as i128 * fp.a as i128).rem_euclid(q as i128)) as i64;
        // smallest u ≡ r with u >= -umax
        let mut u = r - ((r + umax) / q) * q;
        while u <= umax {
            if u != 0 {
                out.push(LatticePair { u, v });
            }
            u += q;
        }
    }
    out
}

/// Both sides of the phase-reduction identity, reduced mod 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReduction {
    pub lhs: BigRational,
    pub rhs: BigRational,
    pub ell: Vec<i64>,
}

impl PhaseReduction {
    pub fn residue(&self) -> BigRational {
        frac(&(&self.lhs - &self.rhs))
    }
}

/// Evaluate `Σ q̄²u_i²/(4v_i)` (q̄ inverse of q mod 4|v_i|) against
/// `−u₁·inv(4v₁)_{q²}·Σu_i/q² + u₁·inv(4v₁²)_q·Σℓ_i/q + Σu_i²/(4v_i q²)` mod 1,
/// where `u₁v_i = u_i v₁ + qℓ_i`.
pub fn phase_reduction_check(q: i64, u: &[i64], v: &[i64]) -> Result<PhaseReduction> {
    if u.len() != v.len() || u.is_empty() {
        return invalid("u and v must be nonempty and of equal length");
    }
    if q % 2 == 0 || q == 0 {
        return invalid(format!("q = {q} must be odd"));
    }
    let q = q as i128;
    let qa = q.abs();
    let (u1, v1) = (u[0] as i128, v[0] as i128);
    let mut ell = Vec::with_capacity(u.len());
    for (idx, (&ui, &vi)) in u.iter().zip(v).enumerate() {
        let (ui, vi) = (ui as i128, vi as i128);
        if vi == 0 || ui == 0 {
            return Err(Error::HypothesisFailed {
                index: idx,
                reason: "u_i and v_i must be nonzero".into(),
            });
        }
        if gcd(4 * ui * vi, q) != 1 {
            return Err(Error::HypothesisFailed {
                index: idx,
                reason: "gcd(4 u_i v_i, q) != 1".to_string(),
            });
        }
        let d = u1 * vi - ui * v1;
        if d % q != 0 {
            return Err(Error::HypothesisFailed {
                index: idx,
                reason: format!("u_1 v_i - u_i v_1 = {d} is not divisible by q"),
            });
        }
        ell.push((d / q) as i64);
    }
    let big = |x: i128| BigInt::from(x);
    let mut lhs = BigRational::zero();
    let mut corr = BigRational::zero();
    for (&ui, &vi) in u.iter().zip(v) {
        let (ui, vi) = (ui as i128, vi as i128);
        let m = 4 * vi.abs();
        let qbar = mod_inverse(q.rem_euclid(m), m)?;
        lhs += BigRational::new(big(qbar) * big(qbar) * big(ui) * big(ui), big(4 * vi));
        corr += BigRational::new(big(ui * ui), big(4 * vi) * big(q) * big(q));
    }
    let q2 = qa * qa;
    let su: i128 = u.iter().map(|&x| x as i128).sum();
    let sl: i128 = ell.iter().map(|&x| x as i128).sum();
    let inv4v1 = mod_inverse((4 * v1).rem_euclid(q2), q2)?;
    let inv4v1sq = mod_inverse((4 * v1 * v1).rem_euclid(qa), qa.max(2)).unwrap_or(0);
    let a_term = BigRational::new(big(u1) * big(inv4v1) * big(su), big(q2));
    let b_term = BigRational::new(big(u1) * big(inv4v1sq) * big(sl), big(qa));
    let rhs = -a_term + b_term + corr;
    Ok(PhaseReduction {
        lhs: frac(&lhs),
        rhs: frac(&rhs),
        ell,
    })
}

/// Totient-weighted density checks on a family.
#[derive(Debug, Clone, Serialize)]
pub struct PhiStats {
    pub epsilon: f64,
    pub window_sum: f64,
    pub scaled_full_sum: f64,
    pub window_rel_dev: f64,
    pub phi_sum: f64,
    pub phi_sum_model: f64,
    pub phi_sum_rel_dev: f64,
    pub members: usize,
}

pub fn qset_phi_stats(qs: &QSet, epsilon: f64) -> Result<PhiStats> {
    if qs.is_empty() {
        return Err(Error::EmptyQSet);
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return invalid("epsilon must lie in (0, 1]");
    }
    let q_real = qs.q_real();
    let ratio = |q: u64| euler_phi(q) as f64 / q as f64;
    let full: f64 = qs.moduli().map(ratio).sum();
    let window: f64 = qs
        .moduli()
        .filter(|&q| q as f64 <= (1.0 + epsilon) * q_real)
        .map(ratio)
        .sum();
    let phi_sum: f64 = qs.moduli().map(|q| euler_phi(q) as f64).sum();
    let model = 1.5 * q_real * full;
    let scaled = epsilon * full;
    let rel = |a: f64, b: f64| if b == 0.0 { 0.0 } else { ((a - b) / b).abs() };
    Ok(PhiStats {
        epsilon,
        window_sum: window,
        scaled_full_sum: scaled,
        window_rel_dev: if epsilon == 1.0 {
            0.0
        } else {
            rel(window, scaled)
        },
        phi_sum,
        phi_sum_model: model,
        phi_sum_rel_dev: rel(phi_sum, model),
        members: qs.len(),
    })
}

/// Random admissible tuple: v_i = (u_i v_1 + q ℓ_i)/u_1 needs u_1 | (u_i v_1 + q ℓ_i).
pub fn random_admissible(rng: &mut impl Rng) -> (i64, Vec<i64>, Vec<i64>) {
    loop {
        let q = 2 * rng.gen_range(1..5000i64) + 1;
        let k = rng.gen_range(1..=4usize);
        let u1 = {
            let x = rng.gen_range(1..=20i64);
            if rng.gen_bool(0.5) {
                x
            } else {
                -x
            }
        };
        let v1 = rng.gen_range(-500..=500i64);
        if v1 == 0 || (4 * u1 * v1).gcd(&q) != 1 {
            continue;
        }
        let mut u = vec![u1];
        let mut v = vec![v1];
        let mut ok = true;
        for _ in 1..k {
            let mut found = false;
            for _ in 0..200 {
                let ui = rng.gen_range(-40..=40i64);
                let li = rng.gen_range(-30..=30i64);
                let num = ui * v1 + q * li;
                if ui != 0 && num % u1 == 0 && num != 0 {
                    let vi = num / u1;
                    if (4 * ui * vi).gcd(&q) == 1 {
                        u.push(ui);
                        v.push(vi);
                        found = true;
                        break;
                    }
                }
            }
            if !found {
                ok = false;
                break;
            }
        }
        if ok {
            return (q, u, v);
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GaussClosedSweep {
    pub checked: u64,
    /// `max |closed − direct| / √(4v)`
    pub max_scaled_deviation: f64,
}

/// `gauss_sum_closed(u, v)` against `gauss_sum_direct(1, u; 4v)` for `1 ≤ v ≤ v_max`, `|u| ≤ u_max`.
pub fn gauss_closed_sweep(v_max: u64, u_max: i64) -> Result<GaussClosedSweep> {
    let rows: Vec<(u64, f64)> = (1..=v_max)
        .into_par_iter()
        .map(|v| {
            let scale = (4.0 * v as f64).sqrt();
            let mut worst = 0.0f64;
            for u in -u_max..=u_max {
                let d = (gauss_sum_closed(u, v) - gauss_sum_direct(1, u, 4 * v)?).norm() / scale;
                worst = worst.max(d);
            }
            Ok(((2 * u_max + 1) as u64, worst))
        })
        .collect::<Result<_>>()?;
    Ok(GaussClosedSweep {
        checked: rows.iter().map(|r| r.0).sum(),
        max_scaled_deviation: rows.iter().map(|r| r.1).fold(0.0, f64::max),
    })
}

/// `G(a, b; c)` for every `b mod c` at once, by a length-c DFT.
pub fn gauss_sums_all_b(a: i64, c: u64, planner: &mut FftPlanner<f64>) -> Vec<Complex64> {
    let cc = c as i128;
    let a = (a as i128).rem_euclid(cc);
    let mut buf: Vec<Complex64> = (0..cc)
        .map(|x| e((a * x % cc * x % cc) as f64 / c as f64))
        .collect();
    // Σ_x f(x)e(bx/c) is the inverse transform at b
    planner.plan_fft_inverse(c as usize).process(&mut buf);
    buf
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GaussVanishingSweep {
    pub checked: u64,
    /// `max |G(a, b; c)| / c` over triples with `gcd(a, c) ∤ b`.
    pub max_ratio: f64,
}

/// Every `(a, b, c)` with `c ≤ c_max`, `a, b mod c`, `gcd(a, c) ∤ b`.
pub fn gauss_vanishing_sweep(c_max: u64) -> Result<GaussVanishingSweep> {
    if c_max < 1 {
        return invalid("c_max must be positive");
    }
    let rows: Vec<(u64, f64)> = (1..=c_max)
        .into_par_iter()
        .map(|c| {
            let mut planner = FftPlanner::new();
            let (mut n, mut worst) = (0u64, 0.0f64);
            for a in 0..c {
                let d = a.gcd(&c);
                if d == 1 {
                    continue;
                }
                for (b, g) in gauss_sums_all_b(a as i64, c, &mut planner)
                    .iter()
                    .enumerate()
                {
                    if !(b as u64).is_multiple_of(d) {
                        n += 1;
                        worst = worst.max(g.norm() / c as f64);
                    }
                }
            }
            (n, worst)
        })
        .collect();
    Ok(GaussVanishingSweep {
        checked: rows.iter().map(|r| r.0).sum(),
        max_ratio: rows.iter().map(|r| r.1).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseSweep {
    pub checked: u64,
    pub nonzero: u64,
    pub first_failure: Option<(i64, Vec<i64>, Vec<i64>)>,
}

/// `phase_reduction_check` on `count` random admissible tuples from a seeded stream.
pub fn phase_reduction_sweep(count: u64, seed: u64) -> Result<PhaseSweep> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = PhaseSweep {
        checked: 0,
        nonzero: 0,
        first_failure: None,
    };
    for _ in 0..count {
        let (q, u, v) = random_admissible(&mut rng);
        out.checked += 1;
        if !phase_reduction_check(q, &u, &v)?.residue().is_zero() {
            out.nonzero += 1;
            out.first_failure.get_or_insert((q, u, v));
        }
    }
    Ok(out)
}
