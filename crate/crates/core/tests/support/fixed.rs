//! Binary fixed-point reals on `BigInt` with 256 fractional bits, enough to
//! evaluate the bound formula far beyond `f64` precision.

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

const FRAC_BITS: u32 = 256;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Fixed(BigInt);

impl Fixed {
    pub fn from_int(n: i64) -> Self {
        Fixed(BigInt::from(n) << FRAC_BITS)
    }

    /// Exact conversion of a finite `f64`.
    pub fn from_f64(x: f64) -> Self {
        assert!(x.is_finite());
        if x == 0.0 {
            return Fixed(BigInt::zero());
        }
        let bits = x.to_bits();
        let sign = if bits >> 63 == 0 { 1 } else { -1 };
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mantissa, e) = if exp == 0 { (frac, -1074) } else { (frac | (1u64 << 52), exp - 1075) };
        let m = BigInt::from(mantissa) * sign;
        let shift = e + FRAC_BITS as i64;
        assert!(shift >= 0, "{x} too small for exact conversion");
        Fixed(m << shift as u32)
    }

    pub fn to_f64(&self) -> f64 {
        // Keep 64 significant bits, then scale by an exact power of two.
        let bits = self.0.bits() as i64;
        let drop = (bits - 64).max(0);
        let top = (&self.0 >> drop as u32).to_f64().unwrap();
        top * 2f64.powi((drop - FRAC_BITS as i64) as i32)
    }

    pub fn add(&self, o: &Self) -> Self {
        Fixed(&self.0 + &o.0)
    }

    pub fn sub(&self, o: &Self) -> Self {
        Fixed(&self.0 - &o.0)
    }

    pub fn mul(&self, o: &Self) -> Self {
        Fixed((&self.0 * &o.0) >> FRAC_BITS)
    }

    pub fn div(&self, o: &Self) -> Self {
        Fixed((&self.0 << FRAC_BITS) / &o.0)
    }

    fn div_int(&self, n: u64) -> Self {
        Fixed(&self.0 / BigInt::from(n))
    }

    fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn sqrt(&self) -> Self {
        assert!(!self.0.is_negative());
        Fixed((&self.0 << FRAC_BITS).sqrt())
    }

    /// `e^x` by halving the argument until the Taylor series converges fast,
    /// then squaring back.
    pub fn exp(&self) -> Self {
        if self.0.is_negative() {
            return Fixed::from_int(1).div(&Fixed(-self.0.clone()).exp());
        }
        let halvings = (self.0.bits() as i64 - FRAC_BITS as i64 + 8).max(0) as u32;
        let r = Fixed(&self.0 >> halvings);
        let mut sum = Fixed::from_int(1);
        let mut term = Fixed::from_int(1);
        for n in 1.. {
            term = term.mul(&r).div_int(n);
            if term.is_zero() {
                break;
            }
            sum = sum.add(&term);
        }
        for _ in 0..halvings {
            sum = sum.mul(&sum);
        }
        sum
    }

    /// `2·atanh(z)` for `|z| < 1`, i.e. `ln((1+z)/(1−z))`.
    fn two_atanh(z: &Self) -> Self {
        let z2 = z.mul(z);
        let mut power = z.clone();
        let mut sum = Fixed(BigInt::zero());
        for k in 0u64.. {
            let term = power.div_int(2 * k + 1);
            if term.is_zero() {
                break;
            }
            sum = sum.add(&term);
            power = power.mul(&z2);
        }
        Fixed(sum.0 * 2)
    }

    /// Natural logarithm of a positive value.
    pub fn ln(&self) -> Self {
        assert!(self.0.is_positive());
        let one = Fixed::from_int(1);
        // self = 2^k · m with m in [1, 2).
        let k = self.0.bits() as i64 - 1 - FRAC_BITS as i64;
        let m = if k >= 0 { Fixed(&self.0 >> k as u32) } else { Fixed(&self.0 << (-k) as u32) };
        let ln_m = Self::two_atanh(&m.sub(&one).div(&m.add(&one)));
        let ln2 = Self::two_atanh(&one.div(&Fixed::from_int(3)));
        let k_fixed = Fixed(BigInt::from(k) << FRAC_BITS);
        k_fixed.mul(&ln2).add(&ln_m)
    }

    pub fn one() -> Self {
        Fixed(BigInt::one() << FRAC_BITS)
    }
}

/// `(d+√d)·e^{2√d/α} / (d−1+e^{2√d/α}) · √(½ ln(|Θ|/ρ))` in fixed point.
pub fn bound_reference(alpha: f64, degree: f64, rho: f64, hypotheses: f64) -> f64 {
    let d = Fixed::from_f64(degree);
    let root = d.sqrt();
    let e = Fixed::from_int(2).mul(&root).div(&Fixed::from_f64(alpha)).exp();
    let prefactor = d.add(&root).mul(&e).div(&d.sub(&Fixed::one()).add(&e));
    let log_term = Fixed::from_f64(hypotheses).div(&Fixed::from_f64(rho)).ln();
    let half = Fixed::one().div(&Fixed::from_int(2));
    prefactor.mul(&half.mul(&log_term).sqrt()).to_f64()
}

