//! Exact rational scalars.
//!
//! Backed by arbitrary-precision integers so gcd chains over filter output
//! sets never overflow. `BigRational` keeps values in lowest terms with a
//! positive denominator.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Rational = BigRational;

/// Largest denominator accepted when recovering a rational from a float.
pub const MAX_RECOVERED_DENOMINATOR: i64 = 1_000_000;

pub fn ratio(numer: i64, denom: i64) -> Rational {
    Rational::new(BigInt::from(numer), BigInt::from(denom))
}

pub fn integer(v: i64) -> Rational {
    Rational::from_integer(BigInt::from(v))
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Recovers the simplest rational matching a float.
///
/// Walks the continued-fraction convergents of `x` until one agrees with it to
/// within a few ulps. Values that need a denominator above
/// [`MAX_RECOVERED_DENOMINATOR`] are treated as irrational.
pub fn from_f64(x: f64) -> Result<Rational> {
    if !x.is_finite() {
        return Err(Error::Representation(x.to_string()));
    }
    let tol = 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE);
    // convergent recurrences seeded with h_{-2}=0, h_{-1}=1, k_{-2}=1, k_{-1}=0
    let (mut h_prev, mut h) = (0i128, 1i128);
    let (mut k_prev, mut k) = (1i128, 0i128);
    let mut rem = x;
    for _ in 0..64 {
        let a = rem.floor();
        if a.abs() > 1e15 {
            break;
        }
        let ai = a as i128;
        let h_next = ai * h + h_prev;
        let k_next = ai * k + k_prev;
        if k_next > MAX_RECOVERED_DENOMINATOR as i128 {
            break;
        }
        h_prev = h;
        h = h_next;
        k_prev = k;
        k = k_next;
        if (x - h as f64 / k as f64).abs() <= tol {
            return Ok(Rational::new(BigInt::from(h), BigInt::from(k)));
        }
        let frac = rem - a;
        if frac == 0.0 {
            break;
        }
        rem = 1.0 / frac;
    }
    Err(Error::Representation(x.to_string()))
}

/// Generator `g >= 0` of the additive group spanned by `values`, so that the
/// group equals `g * Z`.
///
/// For reduced fractions this is gcd of numerators over lcm of denominators.
pub fn group_generator(values: &[Rational]) -> Rational {
    let mut num_gcd = BigInt::zero();
    let mut den_lcm = BigInt::one();
    for v in values {
        if v.is_zero() {
            continue;
        }
        num_gcd = num_gcd.gcd(&v.numer().abs());
        den_lcm = den_lcm.lcm(v.denom());
    }
    if num_gcd.is_zero() {
        Rational::zero()
    } else {
        Rational::new(num_gcd, den_lcm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn generator_examples() {
        assert_eq!(group_generator(&[ratio(1, 2), ratio(3, 2)]), ratio(1, 2));
        assert_eq!(group_generator(&[integer(0)]), integer(0));
        // {r - yhat} for r = 2, four binary agents, half-half moving average
        let set: Vec<Rational> = [4, -4, 3, 2, 1, 0, -1, -2, -3]
            .iter()
            .map(|&n| ratio(n, 2))
            .collect();
        assert_eq!(group_generator(&set), ratio(1, 2));
        assert_eq!(group_generator(&[ratio(1, 2), ratio(1, 3)]), ratio(1, 6));
    }

    #[test]
    fn recovers_simple_fractions() {
        assert_eq!(from_f64(0.5).unwrap(), ratio(1, 2));
        assert_eq!(from_f64(1.0 / 3.0).unwrap(), ratio(1, 3));
        assert_eq!(from_f64(0.1).unwrap(), ratio(1, 10));
        assert_eq!(from_f64(-4.01).unwrap(), ratio(-401, 100));
        assert_eq!(from_f64(2.0).unwrap(), integer(2));
        assert_eq!(from_f64(0.0).unwrap(), integer(0));
        assert!(from_f64(std::f64::consts::PI).is_err());
        assert!(from_f64(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn generator_divides_every_element(
            nums in prop::collection::vec((-500i64..500, 1i64..60), 1..8)
        ) {
            let values: Vec<Rational> = nums.iter().map(|&(n, d)| ratio(n, d)).collect();
            let g = group_generator(&values);
            if values.iter().all(|v| v.is_zero()) {
                prop_assert!(g.is_zero());
            } else {
                prop_assert!(g.is_positive());
                for v in &values {
                    prop_assert!((v / &g).is_integer());
                }
                // maximality: 2g does not divide everything
                let two_g = &g * integer(2);
                prop_assert!(values.iter().any(|v| !(v / &two_g).is_integer()));
            }
        }

        #[test]
        fn recovery_is_exact_for_small_fractions(n in -10_000i64..10_000, d in 1i64..2_000) {
            let r = ratio(n, d);
            prop_assert_eq!(from_f64(to_f64(&r)).unwrap(), r);
        }
    }
}
