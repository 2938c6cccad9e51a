//! Fractions in [0, 1) stored as `u128` multiples of 2^-128.
//!
//! Wrapping arithmetic on the raw word is arithmetic mod 1.

use std::fmt;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Frac128(pub u128);

impl Frac128 {
    pub const ZERO: Frac128 = Frac128(0);

    /// `a / q mod 1`, truncated to 128 bits.
    pub fn from_ratio(a: i128, q: u64) -> Frac128 {
        assert!(q > 0);
        let a = a.rem_euclid(q as i128) as u128;
        let q = q as u128;
        let hi = (a << 64) / q;
        let rem = (a << 64) % q;
        let lo = (rem << 64) / q;
        Frac128((hi << 64) | lo)
    }

    /// Nearest representable value to `x mod 1`.
    pub fn from_f64(x: f64) -> Frac128 {
        let r = x.rem_euclid(1.0);
        if r >= 1.0 {
            return Frac128(0);
        }
        // split so the conversion keeps all 53 bits
        let hi = (r * 18446744073709551616.0).floor();
        let lo = ((r * 18446744073709551616.0 - hi) * 18446744073709551616.0).round();
        let v = ((hi as u128) << 64).wrapping_add(lo as u128);
        Frac128(v)
    }

    pub fn to_f64(self) -> f64 {
        let hi = (self.0 >> 64) as u64 as f64;
        let lo = (self.0 as u64) as f64;
        (hi + lo / 18446744073709551616.0) / 18446744073709551616.0
    }

    pub fn add(self, o: Frac128) -> Frac128 {
        Frac128(self.0.wrapping_add(o.0))
    }

    pub fn sub(self, o: Frac128) -> Frac128 {
        Frac128(self.0.wrapping_sub(o.0))
    }

    pub fn neg(self) -> Frac128 {
        Frac128(self.0.wrapping_neg())
    }

    /// Width of a window `s/N` as a fraction; saturates to the full circle.
    pub fn width(s: f64, n: u64) -> Option<Frac128> {
        let w = s / n as f64;
        if w >= 1.0 {
            None
        } else {
            Some(Frac128::from_f64(w.max(0.0)))
        }
    }
}

impl fmt::Debug for Frac128 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Frac128({:.20})", self.to_f64())
    }
}

/// Fractional part of √n with error below 2^-94.
///
/// Integer square root gives the integer part `r`; the fractional part `F`
/// (in units of 2^-96) starts from a double estimate of `d / (√n + r)` and is
/// refined by two Newton steps whose residual is formed exactly.
pub fn frac_sqrt(n: u64) -> Frac128 {
    assert!(n <= 1 << 62, "frac_sqrt requires n <= 2^62");
    let r = n.isqrt();
    let d = n - r * r;
    if d == 0 {
        return Frac128::ZERO;
    }
    let root = (n as f64).sqrt();
    let guess = d as f64 / (root + r as f64);
    let max_f = (1u128 << 96) - 1;
    let mut f = ((guess * 2f64.powi(96)) as u128).min(max_f);
    for _ in 0..2 {
        let resid = residual_scaled(r, d, f);
        let two_root = 2.0 * (r as f64 + f as f64 / 2f64.powi(96));
        let step = (resid / two_root).round();
        if step >= 0.0 {
            f = f.saturating_sub(step as u128);
        } else {
            f = (f + (-step) as u128).min(max_f);
        }
    }
    Frac128(f << 32)
}

/// `((r·2^96 + f)^2 − n·2^192) / 2^96` with the large cancelling parts
/// formed exactly in integers.
fn residual_scaled(r: u64, d: u64, f: u128) -> f64 {
    let two_rf = 2 * (r as u128) * f;
    let d_shift = (d as u128) << 96;
    let a = two_rf.wrapping_sub(d_shift) as i128;
    let mask = (1u128 << 48) - 1;
    let fh = f >> 48;
    let fl = f & mask;
    let e_int = a + (fh * fh) as i128;
    let cross = 2 * fh * fl + ((fl * fl) >> 48);
    e_int as f64 + cross as f64 / 2f64.powi(48)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// floor(frac(√n) · 2^200) from big-integer square root.
    fn oracle_200(n: u64) -> BigUint {
        let big = BigUint::from(n) << 400u32;
        let s = big.sqrt();
        let int_part = BigUint::from(n.isqrt()) << 200u32;
        s - int_part
    }

    fn err_bits(n: u64) -> f64 {
        let got = BigUint::from(frac_sqrt(n).0) << 72u32;
        let want = oracle_200(n);
        let diff = if got > want {
            &got - &want
        } else {
            &want - &got
        };
        let bits = diff.bits();
        if bits == 0 {
            f64::NEG_INFINITY
        } else {
            bits as f64 - 200.0
        }
    }

    #[test]
    fn known_values() {
        assert_eq!(frac_sqrt(1_000_000), Frac128::ZERO);
        assert_eq!(frac_sqrt(2).to_f64(), 0.414_213_562_373_095_03_f64);
        let s = format!("{:.20}", frac_sqrt(5).to_f64());
        assert!(s.starts_with("0.236067977499789"), "{s}");
        // 24 digits of √2 - 1 from the raw word
        let want = BigUint::parse_bytes(b"41421356237309504880168", 10).unwrap();
        let got = (BigUint::from(frac_sqrt(2).0) * BigUint::from(10u32).pow(23)) >> 128u32;
        let diff = if got > want {
            &got - &want
        } else {
            &want - &got
        };
        assert!(diff <= BigUint::from(1u32));
    }

    #[test]
    fn random_against_big_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for i in 0..100_000 {
            let n: u64 = match i % 3 {
                0 => rng.gen_range(1..=(1u64 << 62)),
                1 => rng.gen_range(1..=1u64 << 20),
                _ => {
                    let r: u64 = rng.gen_range(1..(1u64 << 31));
                    r * r + rng.gen_range(0..=2 * r).min((1u64 << 62) - r * r)
                }
            };
            let e = err_bits(n);
            assert!(e <= -80.0, "n = {n}: error 2^{e}");
        }
    }

    #[test]
    fn extremes() {
        for n in [
            1u64,
            2,
            3,
            4,
            (1 << 62) - 1,
            1 << 62,
            (1u64 << 31) * (1u64 << 31) - 1,
        ] {
            assert!(err_bits(n) <= -90.0, "n = {n}");
        }
    }

    #[test]
    fn ratio_and_wrap() {
        let third = Frac128::from_ratio(1, 3);
        assert!((third.to_f64() - 1.0 / 3.0).abs() < 1e-17);
        assert_eq!(Frac128::from_ratio(-1, 3), Frac128::from_ratio(2, 3));
        let x = Frac128::from_f64(0.75).add(Frac128::from_f64(0.5));
        assert!((x.to_f64() - 0.25).abs() < 1e-17);
        assert!((Frac128::from_f64(-0.25).to_f64() - 0.75).abs() < 1e-17);
    }

    proptest! {
        #[test]
        fn frac_sqrt_in_unit_interval_and_squares_vanish(r in 1u64..(1u64 << 31)) {
            prop_assert_eq!(frac_sqrt(r * r), Frac128::ZERO);
            let v = frac_sqrt(r * r + 1).to_f64();
            prop_assert!(v > 0.0 && v < 1.0);
        }

        #[test]
        fn f64_roundtrip(x in 0.0f64..1.0) {
            prop_assert!((Frac128::from_f64(x).to_f64() - x).abs() <= f64::EPSILON * x.max(1e-300));
        }
    }
}
