//! Elements of `Q_p` at a fixed absolute precision.
//!
//! A [`PadicScalar`] is `p^val * unit + O(p^prec)` with `unit` coprime to `p` and
//! known modulo `p^(prec - val)`. When every digit below `prec` vanishes the scalar
//! is BOTTOM: it is indistinguishable from zero at its precision, and any test that
//! would need those digits reports that fact instead of guessing.

use std::cmp::{max, min};
use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute precision, in units of `val_p`.
pub const DEFAULT_PREC: i64 = 60;

/// Exact rational valuation.
pub type Val = num_rational::Ratio<i64>;

/// `p^k` as a big integer.
pub fn pow_p(p: u32, k: u64) -> BigUint {
    BigUint::from(p).pow(k as u32)
}

/// Largest `k` with `p^k | x`, or `None` for `x = 0`.
pub fn val_p_uint(x: &BigUint, p: u32) -> Option<u64> {
    if x.is_zero() {
        return None;
    }
    let pb = BigUint::from(p);
    let mut v = 0;
    let mut cur = x.clone();
    loop {
        let (q, r) = cur.div_rem(&pb);
        if !r.is_zero() {
            return Some(v);
        }
        cur = q;
        v += 1;
    }
}

/// Largest `k` with `p^k | n` for a nonzero machine integer.
pub fn val_p_u64(mut n: u64, p: u64) -> u32 {
    assert!(n != 0, "val_p of zero");
    let mut v = 0;
    while n.is_multiple_of(p) {
        n /= p;
        v += 1;
    }
    v
}

/// Reduce a signed integer into `[0, modulus)`.
pub fn reduce_signed(x: &BigInt, modulus: &BigUint) -> BigUint {
    let m = BigInt::from_biguint(Sign::Plus, modulus.clone());
    let r = x.mod_floor(&m);
    r.to_biguint().expect("mod_floor is nonnegative")
}

/// Inverse of a unit modulo `p^k` (`k >= 1`).
pub fn inv_mod(x: &BigUint, modulus: &BigUint) -> Option<BigUint> {
    if modulus.is_one() {
        return Some(BigUint::zero());
    }
    let a = BigInt::from_biguint(Sign::Plus, x.clone());
    let m = BigInt::from_biguint(Sign::Plus, modulus.clone());
    let e = a.extended_gcd(&m);
    if !e.gcd.is_one() {
        return None;
    }
    Some(e.x.mod_floor(&m).to_biguint().unwrap())
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PadicScalar {
    p: u32,
    val: Option<i64>,
    unit: BigUint,
    prec: i64,
}

impl PadicScalar {
    /// The scalar `value + O(p^prec)`.
    pub fn new(p: u32, value: &BigInt, prec: i64) -> Self {
        Self::from_scaled(p, value, 0, prec)
    }

    pub fn from_i64(p: u32, value: i64, prec: i64) -> Self {
        Self::new(p, &BigInt::from(value), prec)
    }

    /// `p^shift * value + O(p^prec)`.
    pub fn from_scaled(p: u32, value: &BigInt, shift: i64, prec: i64) -> Self {
        if value.is_zero() || shift >= prec {
            return Self::bottom(p, prec);
        }
        let v0 = val_p_uint(value.magnitude(), p).unwrap() as i64;
        let val = shift + v0;
        if val >= prec {
            return Self::bottom(p, prec);
        }
        let stripped = value / BigInt::from(pow_p(p, v0 as u64));
        let unit = reduce_signed(&stripped, &pow_p(p, (prec - val) as u64));
        PadicScalar { p, val: Some(val), unit, prec }
    }

    /// Build from explicit parts; `unit` need not be reduced or coprime to `p`.
    pub fn from_parts(p: u32, val: Option<i64>, unit: BigUint, prec: i64) -> Self {
        match val {
            None => Self::bottom(p, prec),
            Some(v) => Self::from_scaled(p, &BigInt::from(unit), v, prec),
        }
    }

    /// The class of zero at precision `prec`.
    pub fn bottom(p: u32, prec: i64) -> Self {
        PadicScalar { p, val: None, unit: BigUint::zero(), prec }
    }

    pub fn zero(p: u32, prec: i64) -> Self {
        Self::bottom(p, prec)
    }

    pub fn one(p: u32, prec: i64) -> Self {
        Self::from_i64(p, 1, prec)
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    /// `None` means BOTTOM.
    pub fn valuation(&self) -> Option<i64> {
        self.val
    }

    pub fn unit(&self) -> &BigUint {
        &self.unit
    }

    pub fn prec(&self) -> i64 {
        self.prec
    }

    pub fn is_bottom(&self) -> bool {
        self.val.is_none()
    }

    /// Lower bound on the valuation: the true one, or `prec` for BOTTOM.
    pub fn val_lower_bound(&self) -> i64 {
        self.val.unwrap_or(self.prec)
    }

    pub fn is_integral(&self) -> bool {
        self.val_lower_bound() >= 0
    }

    /// Representative in `[0, p^prec)` of an integral scalar.
    pub fn residue(&self) -> Option<BigUint> {
        match self.val {
            None if self.prec >= 0 => Some(BigUint::zero()),
            None => None,
            Some(v) if v >= 0 => Some(&self.unit * pow_p(self.p, v as u64)),
            Some(_) => None,
        }
    }

    /// Signed integer `p^val * unit` for `val >= 0`, or the rational pair otherwise.
    pub fn to_ratio(&self) -> (BigInt, BigInt) {
        match self.val {
            None => (BigInt::zero(), BigInt::one()),
            Some(v) if v >= 0 => (BigInt::from(&self.unit * pow_p(self.p, v as u64)), BigInt::one()),
            Some(v) => (BigInt::from(self.unit.clone()), BigInt::from(pow_p(self.p, (-v) as u64))),
        }
    }

    fn check_same_p(&self, other: &Self) {
        assert_eq!(self.p, other.p, "p-adic scalars over different primes");
    }

    pub fn add(&self, other: &Self) -> Self {
        self.check_same_p(other);
        let prec = min(self.prec, other.prec);
        let (va, vb) = match (self.val, other.val) {
            (None, None) => return Self::bottom(self.p, prec),
            (Some(a), None) => return Self::from_parts(self.p, Some(a), self.unit.clone(), prec),
            (None, Some(b)) => return Self::from_parts(self.p, Some(b), other.unit.clone(), prec),
            (Some(a), Some(b)) => (a, b),
        };
        let v = min(va, vb);
        if v >= prec {
            return Self::bottom(self.p, prec);
        }
        let sa = &self.unit * pow_p(self.p, (va - v) as u64);
        let sb = &other.unit * pow_p(self.p, (vb - v) as u64);
        Self::from_scaled(self.p, &BigInt::from(sa + sb), v, prec)
    }

    pub fn neg(&self) -> Self {
        match self.val {
            None => self.clone(),
            Some(v) => {
                let m = pow_p(self.p, (self.prec - v) as u64);
                PadicScalar { p: self.p, val: Some(v), unit: (&m - &self.unit) % &m, prec: self.prec }
            }
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.check_same_p(other);
        let cap = max(self.prec, other.prec);
        let prec = min(cap, min(self.prec + other.val_lower_bound(), other.prec + self.val_lower_bound()));
        match (self.val, other.val) {
            (Some(a), Some(b)) => {
                let v = a + b;
                if v >= prec {
                    return Self::bottom(self.p, prec);
                }
                let m = pow_p(self.p, (prec - v) as u64);
                PadicScalar { p: self.p, val: Some(v), unit: (&self.unit * &other.unit) % m, prec }
            }
            _ => Self::bottom(self.p, prec),
        }
    }

    /// Multiplicative inverse; the relative precision is preserved and capped at `prec`.
    pub fn inv(&self) -> Result<Self> {
        let v = self.val.ok_or(Error::DivisionByZero)?;
        let rel = self.prec - v;
        let prec = min(self.prec, -v + rel);
        if -v >= prec {
            return Ok(Self::bottom(self.p, prec));
        }
        let m = pow_p(self.p, rel as u64);
        let u = inv_mod(&self.unit, &m).expect("unit part is invertible");
        let m2 = pow_p(self.p, (prec + v) as u64);
        Ok(PadicScalar { p: self.p, val: Some(-v), unit: u % m2, prec })
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        Ok(self.mul(&other.inv()?))
    }

    /// Multiply by `p^k` (any sign); exact.
    pub fn shift(&self, k: i64) -> Self {
        PadicScalar { p: self.p, val: self.val.map(|v| v + k), unit: self.unit.clone(), prec: self.prec + k }
    }

    /// Lower the precision cap to `prec` (no-op if already lower).
    pub fn truncate(&self, prec: i64) -> Self {
        if prec >= self.prec {
            return self.clone();
        }
        Self::from_parts(self.p, self.val, self.unit.clone(), prec)
    }
}

impl fmt::Display for PadicScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.val {
            None => write!(f, "O({}^{})", self.p, self.prec),
            Some(v) => write!(f, "{}^{} * {} + O({}^{})", self.p, v, self.unit, self.p, self.prec),
        }
    }
}

fn parse_power(s: &str) -> Result<(u32, i64)> {
    let (b, e) = s.trim().split_once('^').ok_or_else(|| Error::Parse(format!("expected p^k, got `{s}`")))?;
    let p = b.trim().parse::<u32>().map_err(|e| Error::Parse(e.to_string()))?;
    let k = e.trim().parse::<i64>().map_err(|e| Error::Parse(e.to_string()))?;
    Ok((p, k))
}

impl FromStr for PadicScalar {
    type Err = Error;

    /// Parses `p^v * u + O(p^N)` or `O(p^N)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, tail) = match s.rfind("O(") {
            Some(i) => (&s[..i], &s[i..]),
            None => return Err(Error::Parse(format!("missing O(p^N) term in `{s}`"))),
        };
        let inner = tail
            .strip_prefix("O(")
            .and_then(|t| t.strip_suffix(')'))
            .ok_or_else(|| Error::Parse(format!("bad precision term `{tail}`")))?;
        let (p, prec) = parse_power(inner)?;
        let head = head.trim().trim_end_matches('+').trim();
        if head.is_empty() {
            return Ok(Self::bottom(p, prec));
        }
        let (pw, u) = head.split_once('*').ok_or_else(|| Error::Parse(format!("expected p^v * u, got `{head}`")))?;
        let (p2, v) = parse_power(pw)?;
        if p2 != p {
            return Err(Error::Parse("mismatched primes".into()));
        }
        let unit = u.trim().parse::<BigInt>().map_err(|e| Error::Parse(e.to_string()))?;
        if unit.is_negative() {
            return Err(Error::Parse("unit must be a nonnegative residue".into()));
        }
        Ok(Self::from_scaled(p, &unit, v, prec))
    }
}

/// JSON shape `{"p":…, "val":…, "unit":"…", "prec":…}`; `val` is null for BOTTOM.
#[derive(Serialize, Deserialize)]
struct ScalarJson {
    p: u32,
    val: Option<i64>,
    unit: String,
    prec: i64,
}

impl Serialize for PadicScalar {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ScalarJson { p: self.p, val: self.val, unit: self.unit.to_string(), prec: self.prec }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PadicScalar {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = ScalarJson::deserialize(d)?;
        let unit = j.unit.parse::<BigUint>().map_err(serde::de::Error::custom)?;
        Ok(PadicScalar::from_parts(j.p, j.val, unit, j.prec))
    }
}

/// Serde adapter writing exact rationals as `"7/6"` strings.
pub mod val_serde {
    use super::Val;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Val, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Val, D::Error> {
        let s = String::deserialize(d)?;
        s.parse::<Val>().map_err(|e| D::Error::custom(format!("bad rational `{s}`: {e}")))
    }

    pub mod opt {
        use super::Val;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &Option<Val>, s: S) -> std::result::Result<S::Ok, S::Error> {
            match v {
                Some(v) => s.serialize_some(&v.to_string()),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Val>, D::Error> {
            let s = Option::<String>::deserialize(d)?;
            s.map(|s| s.parse::<Val>().map_err(serde::de::Error::custom)).transpose()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(p: u32, v: i64) -> PadicScalar {
        PadicScalar::from_i64(p, v, DEFAULT_PREC)
    }

    #[test]
    fn additive_inverse_is_bottom() {
        let one = s(3, 1);
        let r = one.add(&s(3, -1));
        assert!(r.is_bottom());
        assert_eq!(r.prec(), DEFAULT_PREC);
    }

    #[test]
    fn ultrametric_distinct_valuations() {
        let r = s(3, 1).add(&s(3, 9));
        assert_eq!(r.valuation(), Some(0));
    }

    #[test]
    fn carry_into_valuation() {
        for p in [2u32, 3, 5, 7] {
            let r = s(p, 1).add(&s(p, p as i64 - 1));
            assert_eq!(r.valuation(), Some(1));
            assert_eq!(r.unit(), &BigUint::one());
        }
    }

    #[test]
    fn inverse_and_products() {
        assert_eq!(s(3, 1).inv().unwrap(), s(3, 1));
        assert_eq!(s(3, 3).mul(&s(3, 3)).valuation(), Some(2));
        let sh = s(3, 1).shift(-3);
        assert_eq!(sh.valuation(), Some(-3));
        assert_eq!(sh.prec(), DEFAULT_PREC - 3);
        assert_eq!(PadicScalar::bottom(3, 10).inv(), Err(Error::DivisionByZero));
    }

    #[test]
    fn inverse_times_self_is_one() {
        let x = s(5, 7 * 25);
        let y = x.inv().unwrap();
        assert_eq!(y.valuation(), Some(-2));
        let one = x.mul(&y);
        assert_eq!(one.valuation(), Some(0));
        assert_eq!(one.unit(), &BigUint::one());
    }

    #[test]
    fn precision_tracks_shifts() {
        let a = s(3, 2).shift(-5);
        let b = s(3, 1);
        assert_eq!(a.add(&b).prec(), DEFAULT_PREC - 5);
        let c = PadicScalar::from_i64(3, 1, 10).add(&PadicScalar::from_i64(3, 3i64.pow(12), 60));
        assert_eq!(c.prec(), 10);
        assert_eq!(c.valuation(), Some(0));
    }

    #[test]
    fn bottom_propagates_conservatively() {
        let b = PadicScalar::bottom(3, 5);
        let x = s(3, 9);
        let prod = b.mul(&x);
        assert!(prod.is_bottom());
        assert_eq!(prod.prec(), 7);
        assert_eq!(b.add(&x).valuation(), Some(2));
        assert!(PadicScalar::bottom(3, 1).add(&s(3, 9)).is_bottom());
    }

    #[test]
    fn display_parse_examples() {
        let x = PadicScalar::from_scaled(3, &BigInt::from(7), -2, 20);
        assert_eq!(x.to_string(), "3^-2 * 7 + O(3^20)");
        assert_eq!("3^-2 * 7 + O(3^20)".parse::<PadicScalar>().unwrap(), x);
        assert_eq!("O(3^20)".parse::<PadicScalar>().unwrap(), PadicScalar::bottom(3, 20));
        let j = serde_json::to_string(&x).unwrap();
        assert_eq!(j, r#"{"p":3,"val":-2,"unit":"7","prec":20}"#);
        assert_eq!(serde_json::from_str::<PadicScalar>(&j).unwrap(), x);
    }

    fn arb_scalar(p: u32) -> impl Strategy<Value = PadicScalar> {
        (any::<i64>(), -5i64..5).prop_map(move |(n, sh)| PadicScalar::from_scaled(p, &BigInt::from(n), sh, 40))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn valuation_is_additive(a in arb_scalar(3), b in arb_scalar(3)) {
            let prod = a.mul(&b);
            if let (Some(va), Some(vb)) = (a.valuation(), b.valuation()) {
                if va + vb < prod.prec() {
                    prop_assert_eq!(prod.valuation(), Some(va + vb));
                }
            }
        }

        #[test]
        fn ring_axioms_on_integers(x in any::<i32>(), y in any::<i32>(), z in any::<i32>()) {
            let p = 5;
            let (a, b, c) = (s(p, x as i64), s(p, y as i64), s(p, z as i64));
            prop_assert_eq!(a.mul(&b.add(&c)), a.mul(&b).add(&a.mul(&c)));
            prop_assert_eq!(a.add(&b), b.add(&a));
            prop_assert_eq!(a.mul(&b).mul(&c), a.mul(&b.mul(&c)));
            prop_assert_eq!(
                a.mul(&b),
                PadicScalar::new(p, &(BigInt::from(x) * BigInt::from(y)), DEFAULT_PREC)
            );
        }

        #[test]
        fn string_and_json_round_trip(a in arb_scalar(7)) {
            let txt = a.to_string();
            prop_assert_eq!(txt.parse::<PadicScalar>().unwrap(), a.clone());
            let j = serde_json::to_string(&a).unwrap();
            prop_assert_eq!(serde_json::from_str::<PadicScalar>(&j).unwrap(), a);
        }
    }

    #[test]
    fn val_additivity_ten_thousand_samples() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let a = PadicScalar::from_scaled(3, &BigInt::from(rng.gen_range(1i64..1 << 40)), rng.gen_range(-4..4), 50);
            let b = PadicScalar::from_scaled(3, &BigInt::from(rng.gen_range(1i64..1 << 40)), rng.gen_range(-4..4), 50);
            let (va, vb) = (a.valuation().unwrap(), b.valuation().unwrap());
            assert_eq!(a.mul(&b).valuation(), Some(va + vb));
        }
    }
}
