//! The cyclotomic tower `K_n = Q_p(zeta_{p^(n+s)})` over `K_0 = Q_p(zeta_{p^s})`.
//!
//! Elements of `K_n` are stored in the power basis `zeta^0, …, zeta^(phi-1)` with
//! `phi = p^(n+s-1) (p-1)`. This basis is a `Z_p`-basis of `O_{K_n}`, so an element
//! lies in `p^k O_{K_n}` exactly when all of its coordinates do. Coordinates share a
//! single absolute precision: a [`TowerElement`] is `p^scale * sum c_e zeta^e` known
//! modulo `p^prec O_{K_n}`, with residues `c_e` in `[0, p^(prec-scale))`.
//!
//! The Galois group of `K_n / K_0` is cyclic of order `p^n`, generated by
//! `g_0 = sigma_{1+p^s}`; `g_k = g_0^(p^k)` generates `Gal(K_inf / K_k)`.

use std::borrow::Cow;
use std::cmp::{max, min};
use std::sync::OnceLock;

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::differentials::DifferentData;
use crate::error::{Error, Result};
use crate::padic::{inv_mod, pow_p, reduce_signed, PadicScalar, Val, DEFAULT_PREC};

/// Largest field degree `[K_max : Q_p]` the tower will build.
pub const MAX_DEGREE: usize = 4096;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerParams {
    pub p: u32,
    pub s: u32,
    pub max_level: usize,
    pub prec: i64,
}

impl TowerParams {
    /// Parameters with the base offset derived from `p` (1 for odd `p`, 2 for `p = 2`).
    pub fn new(p: u32, max_level: usize, prec: i64) -> Self {
        TowerParams { p, s: if p == 2 { 2 } else { 1 }, max_level, prec }
    }

    pub fn default_for(p: u32) -> Self {
        let max_level = if p == 2 { 3 } else { 4 };
        Self::new(p, max_level, DEFAULT_PREC)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p;
        if p < 2 || (2..p).take_while(|d| d * d <= p).any(|d| p.is_multiple_of(d)) {
            return Err(Error::InvalidParams(format!("{p} is not prime")));
        }
        let want_s = if p == 2 { 2 } else { 1 };
        if self.s != want_s {
            return Err(Error::InvalidParams(format!("s must be {want_s} for p = {p}")));
        }
        if self.max_level < 1 {
            return Err(Error::InvalidParams("max_level must be at least 1".into()));
        }
        if self.prec < 4 {
            return Err(Error::InvalidParams("precision must be at least 4".into()));
        }
        let exp = self.max_level as u32 + self.s;
        let order = (p as u64).checked_pow(exp).filter(|o| *o < (1 << 31));
        let degree = order.map(|o| (o / p as u64) * (p as u64 - 1));
        match degree {
            Some(d) if d as usize <= MAX_DEGREE => Ok(()),
            _ => Err(Error::InvalidParams(format!("degree of K_{} exceeds the limit {MAX_DEGREE}", self.max_level))),
        }
    }
}

#[derive(Clone, Debug)]
struct LevelData {
    /// `p^(n+s)`, the order of zeta.
    order: u64,
    /// `p^(n+s-1)`.
    block: usize,
    /// `[K_n : Q_p]`.
    phi: usize,
}

/// An element of some `K_n`; see the module docs for the representation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TowerElement {
    level: usize,
    scale: i64,
    prec: i64,
    coeffs: Vec<BigUint>,
}

impl TowerElement {
    pub fn level(&self) -> usize {
        self.level
    }

    /// Absolute precision: the element is known modulo `p^prec O_{K_n}`.
    pub fn prec(&self) -> i64 {
        self.prec
    }

    /// `floor(val_p(x))`, or `prec` when the element is zero at precision.
    pub fn scale(&self) -> i64 {
        self.scale
    }

    /// Raw residues relative to `p^scale`.
    pub fn raw_coeffs(&self) -> &[BigUint] {
        &self.coeffs
    }

    /// True when every coordinate vanishes at the working precision.
    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero())
    }

    pub fn is_integral(&self) -> bool {
        self.scale >= 0
    }
}

impl Serialize for TowerElement {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ElementLiteral {
            level: self.level,
            scale: self.scale,
            prec: Some(self.prec),
            coeffs: self.coeffs.iter().map(|c| serde_json::Value::String(c.to_string())).collect(),
        }
        .serialize(s)
    }
}

/// Galois element `sigma_a` of `K_n / K_0` with `a = (1+p^s)^t mod p^(n+s)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaloisElement {
    pub level: usize,
    /// `t` modulo `p^level`; the character value `c(g_0^t) = t`.
    pub exponent: u64,
    /// The induced unit `a`, congruent to 1 modulo `p^s`.
    pub unit: u64,
}

/// `x = sum_i x_i rho_n^i` with `x_i` in `K_0`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RhoExpansion {
    pub level: usize,
    pub coeffs: Vec<TowerElement>,
}

/// Coefficient-array form of an element, used for literals and reports.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementLiteral {
    pub level: usize,
    #[serde(default)]
    pub scale: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prec: Option<i64>,
    pub coeffs: Vec<serde_json::Value>,
}

fn mod_pow_u64(mut base: u64, mut e: u64, m: u64) -> u64 {
    let mut r = 1 % m;
    base %= m;
    while e > 0 {
        if e & 1 == 1 {
            r = ((r as u128 * base as u128) % m as u128) as u64;
        }
        base = ((base as u128 * base as u128) % m as u128) as u64;
        e >>= 1;
    }
    r
}

fn bits(x: &BigUint) -> u64 {
    x.bits()
}

/// Full product of two integer polynomials by Kronecker substitution.
fn kronecker_mul(a: &[BigUint], b: &[BigUint]) -> Vec<BigUint> {
    let out_len = a.len() + b.len() - 1;
    let ba = a.iter().map(bits).max().unwrap_or(0);
    let bb = b.iter().map(bits).max().unwrap_or(0);
    let terms = min(a.len(), b.len()) as u64;
    let slot_bits = ba + bb + (64 - terms.leading_zeros() as u64) + 1;
    let sw = slot_bits.div_ceil(32) as usize;
    let pack = |v: &[BigUint]| {
        let mut words = vec![0u32; v.len() * sw];
        for (i, c) in v.iter().enumerate() {
            let d = c.to_u32_digits();
            words[i * sw..i * sw + d.len()].copy_from_slice(&d);
        }
        BigUint::new(words)
    };
    let prod = pack(a) * pack(b);
    let digits = prod.to_u32_digits();
    (0..out_len)
        .map(|i| {
            let lo = i * sw;
            if lo >= digits.len() {
                BigUint::zero()
            } else {
                BigUint::from_slice(&digits[lo..min(lo + sw, digits.len())])
            }
        })
        .collect()
}

/// The tower together with cached binomial tables and powers of `p`.
#[derive(Debug)]
pub struct Tower {
    params: TowerParams,
    levels: Vec<LevelData>,
    pow_cache: Vec<BigUint>,
    /// Pascal triangle modulo `p`, rows `0..=phi_max`.
    pascal_mod_p: Vec<Vec<u32>>,
    /// Exact Pascal triangle, rows `0..=phi_max`.
    pascal: Vec<Vec<BigUint>>,
    /// Differents over `K_0` and over `Q_p`, filled on first use.
    pub(crate) different_cache: [Vec<OnceLock<DifferentData>>; 2],
}

impl Tower {
    pub fn new(params: TowerParams) -> Result<Self> {
        params.validate()?;
        let p = params.p as u64;
        let levels: Vec<LevelData> = (0..=params.max_level)
            .map(|n| {
                let order = p.pow(n as u32 + params.s);
                let block = (order / p) as usize;
                LevelData { order, block, phi: block * (p as usize - 1) }
            })
            .collect();
        let phi_max = levels.last().unwrap().phi;
        let pow_cache = (0..(4 * params.prec.max(0) as u64 + 64)).map(|k| pow_p(params.p, k)).collect();
        let mut pascal_mod_p: Vec<Vec<u32>> = Vec::with_capacity(phi_max + 1);
        let mut pascal: Vec<Vec<BigUint>> = Vec::with_capacity(phi_max + 1);
        for r in 0..=phi_max {
            let mut row = vec![BigUint::one(); r + 1];
            let mut rowp = vec![1u32; r + 1];
            for k in 1..r {
                row[k] = &pascal[r - 1][k - 1] + &pascal[r - 1][k];
                rowp[k] = (pascal_mod_p[r - 1][k - 1] + pascal_mod_p[r - 1][k]) % params.p;
            }
            pascal.push(row);
            pascal_mod_p.push(rowp);
        }
        let top = params.max_level;
        let cache = || (0..=top).map(|_| OnceLock::new()).collect();
        Ok(Tower { params, levels, pow_cache, pascal_mod_p, pascal, different_cache: [cache(), cache()] })
    }

    pub fn params(&self) -> &TowerParams {
        &self.params
    }

    pub fn p(&self) -> u32 {
        self.params.p
    }

    pub fn s(&self) -> u32 {
        self.params.s
    }

    pub fn max_level(&self) -> usize {
        self.params.max_level
    }

    pub fn prec(&self) -> i64 {
        self.params.prec
    }

    /// `[K_n : Q_p] = p^(n+s-1)(p-1)`.
    pub fn degree(&self, n: usize) -> usize {
        self.level(n).phi
    }

    /// `[K_0 : Q_p]`.
    pub fn base_degree(&self) -> usize {
        self.levels[0].phi
    }

    /// `[K_n : K_0] = p^n`.
    pub fn relative_degree(&self, n: usize) -> usize {
        (self.params.p as usize).pow(n as u32)
    }

    /// `val_p(rho_n) = 1 / [K_n : Q_p]`.
    pub fn uniformizer_valuation(&self, n: usize) -> Val {
        Val::new(1, self.degree(n) as i64)
    }

    fn level(&self, n: usize) -> &LevelData {
        assert!(n <= self.params.max_level, "level {n} beyond tower height {}", self.params.max_level);
        &self.levels[n]
    }

    pub(crate) fn pp(&self, k: i64) -> Cow<'_, BigUint> {
        assert!(k >= 0, "negative power of p");
        match self.pow_cache.get(k as usize) {
            Some(v) => Cow::Borrowed(v),
            None => Cow::Owned(pow_p(self.params.p, k as u64)),
        }
    }

    pub(crate) fn binomial(&self, n: usize, k: usize) -> &BigUint {
        &self.pascal[n][k]
    }

    // ---------------------------------------------------------------------
    // construction

    /// Normalize raw coordinates `p^scale * coeffs` known modulo `p^prec`.
    fn normalize(&self, level: usize, scale: i64, prec: i64, mut coeffs: Vec<BigUint>) -> TowerElement {
        let phi = self.level(level).phi;
        debug_assert_eq!(coeffs.len(), phi);
        let digits = prec - scale;
        if digits <= 0 {
            return self.bottom(level, prec);
        }
        let m = self.pp(digits);
        for c in coeffs.iter_mut() {
            if *c >= *m {
                *c %= &*m;
            }
        }
        let p = self.params.p;
        let mut vmin = digits;
        for c in coeffs.iter() {
            if c.is_zero() {
                continue;
            }
            if (c % p).is_zero() {
                let v = crate::padic::val_p_uint(c, p).unwrap() as i64;
                vmin = vmin.min(v);
            } else {
                vmin = 0;
                break;
            }
        }
        if vmin >= digits {
            return self.bottom(level, prec);
        }
        if vmin > 0 {
            let d = self.pp(vmin);
            for c in coeffs.iter_mut() {
                *c /= &*d;
            }
        }
        TowerElement { level, scale: scale + vmin, prec, coeffs }
    }

    /// Zero at precision `prec`.
    pub fn bottom(&self, level: usize, prec: i64) -> TowerElement {
        TowerElement { level, scale: prec, prec, coeffs: vec![BigUint::zero(); self.level(level).phi] }
    }

    pub fn zero(&self, level: usize) -> TowerElement {
        self.bottom(level, self.params.prec)
    }

    pub fn from_int(&self, level: usize, n: i64) -> TowerElement {
        let mut c = vec![BigInt::zero(); self.degree(level)];
        c[0] = BigInt::from(n);
        self.from_ints(level, &c, 0, self.params.prec)
    }

    pub fn one(&self, level: usize) -> TowerElement {
        self.from_int(level, 1)
    }

    /// `p^shift * sum coeffs[e] zeta^e + O(p^prec)`; `coeffs` may be shorter than the degree.
    pub fn from_ints(&self, level: usize, coeffs: &[BigInt], shift: i64, prec: i64) -> TowerElement {
        let phi = self.degree(level);
        assert!(coeffs.len() <= phi, "too many coordinates for level {level}");
        let digits = prec - shift;
        if digits <= 0 {
            return self.bottom(level, prec);
        }
        let m = self.pp(digits).into_owned();
        let mut out: Vec<BigUint> = coeffs.iter().map(|c| reduce_signed(c, &m)).collect();
        out.resize(phi, BigUint::zero());
        self.normalize(level, shift, prec, out)
    }

    pub fn from_i64s(&self, level: usize, coeffs: &[i64]) -> TowerElement {
        let c: Vec<BigInt> = coeffs.iter().map(|&v| BigInt::from(v)).collect();
        self.from_ints(level, &c, 0, self.params.prec)
    }

    /// Element with the given scalar coordinates in the zeta basis.
    pub fn from_scalars(&self, level: usize, coeffs: &[PadicScalar]) -> TowerElement {
        let phi = self.degree(level);
        assert!(coeffs.len() <= phi);
        let prec = coeffs.iter().map(|c| c.prec()).min().unwrap_or(self.params.prec);
        let scale = coeffs.iter().map(|c| c.val_lower_bound()).min().unwrap_or(prec).min(prec);
        let mut out = vec![BigUint::zero(); phi];
        for (o, c) in out.iter_mut().zip(coeffs) {
            if let Some(v) = c.valuation() {
                *o = c.unit() * &*self.pp(v - scale);
            }
        }
        self.normalize(level, scale, prec, out)
    }

    /// Coordinates in the zeta basis as scalars.
    pub fn coeffs(&self, x: &TowerElement) -> Vec<PadicScalar> {
        let p = self.params.p;
        x.coeffs.iter().map(|c| PadicScalar::from_scaled(p, &BigInt::from(c.clone()), x.scale, x.prec)).collect()
    }

    /// `zeta_{p^(n+s)}^e` for any integer `e`.
    pub fn zeta_pow(&self, level: usize, e: i64) -> TowerElement {
        let ld = self.level(level);
        let e = e.rem_euclid(ld.order as i64) as usize;
        let mut v = vec![BigUint::zero(); ld.order as usize];
        v[e] = BigUint::one();
        let prec = self.params.prec;
        let coeffs = self.reduce_cyclotomic(level, v, &self.pp(prec));
        self.normalize(level, 0, prec, coeffs)
    }

    pub fn zeta(&self, level: usize) -> TowerElement {
        self.zeta_pow(level, 1)
    }

    /// The uniformizer `rho_n = zeta_{p^(n+s)} - 1`.
    pub fn uniformizer(&self, level: usize) -> TowerElement {
        self.sub(&self.zeta(level), &self.one(level))
    }

    pub fn to_literal(&self, x: &TowerElement) -> ElementLiteral {
        serde_json::from_value(serde_json::to_value(x).expect("elements serialize")).expect("literal shape")
    }

    pub fn from_literal(&self, lit: &ElementLiteral) -> Result<TowerElement> {
        if lit.level > self.max_level() {
            return Err(Error::Domain(format!("level {} beyond tower height", lit.level)));
        }
        if lit.coeffs.len() > self.degree(lit.level) {
            return Err(Error::Domain(format!(
                "{} coordinates given, degree of K_{} is {}",
                lit.coeffs.len(),
                lit.level,
                self.degree(lit.level)
            )));
        }
        let coeffs = lit
            .coeffs
            .iter()
            .map(|v| match v {
                serde_json::Value::Number(n) => {
                    n.as_i64().map(BigInt::from).ok_or_else(|| Error::Parse(format!("bad coordinate {n}")))
                }
                serde_json::Value::String(s) => {
                    s.parse::<BigInt>().map_err(|e| Error::Parse(format!("bad coordinate `{s}`: {e}")))
                }
                other => Err(Error::Parse(format!("bad coordinate {other}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let prec = lit.prec.unwrap_or(self.params.prec);
        Ok(self.from_ints(lit.level, &coeffs, lit.scale, prec))
    }

    // ---------------------------------------------------------------------
    // reduction helpers

    /// Reduce a polynomial in zeta of any length to the canonical basis, modulo `m`.
    fn reduce_cyclotomic(&self, level: usize, mut v: Vec<BigUint>, m: &BigUint) -> Vec<BigUint> {
        let ld = self.level(level);
        let order = ld.order as usize;
        if v.len() > order {
            let tail = v.split_off(order);
            for (e, c) in tail.into_iter().enumerate() {
                v[e % order] += c;
            }
        }
        v.resize(order, BigUint::zero());
        for c in v.iter_mut() {
            if *c >= *m {
                *c %= m;
            }
        }
        let p = self.params.p as usize;
        let b = ld.block;
        for r in 0..b {
            let top = std::mem::take(&mut v[r + (p - 1) * b]);
            if top.is_zero() {
                continue;
            }
            let neg = m - &top;
            for i in 0..p - 1 {
                let c = &mut v[r + i * b];
                *c += &neg;
                if *c >= *m {
                    *c -= m;
                }
            }
        }
        v.truncate(ld.phi);
        v
    }

    /// Bring two elements to a common level.
    fn align<'a>(&self, a: &'a TowerElement, b: &'a TowerElement) -> (Cow<'a, TowerElement>, Cow<'a, TowerElement>) {
        use std::cmp::Ordering::*;
        match a.level.cmp(&b.level) {
            Equal => (Cow::Borrowed(a), Cow::Borrowed(b)),
            Less => (Cow::Owned(self.embed(a, b.level)), Cow::Borrowed(b)),
            Greater => (Cow::Borrowed(a), Cow::Owned(self.embed(b, a.level))),
        }
    }

    // ---------------------------------------------------------------------
    // ring operations

    pub fn add(&self, a: &TowerElement, b: &TowerElement) -> TowerElement {
        let (a, b) = self.align(a, b);
        let prec = min(a.prec, b.prec);
        let scale = min(a.scale, b.scale);
        if scale >= prec {
            return self.bottom(a.level, prec);
        }
        let fa = self.pp(a.scale - scale);
        let fb = self.pp(b.scale - scale);
        let coeffs = a
            .coeffs
            .iter()
            .zip(&b.coeffs)
            .map(|(x, y)| {
                let mut r = if a.scale == scale { x.clone() } else { x * &*fa };
                if b.scale == scale {
                    r += y;
                } else {
                    r += y * &*fb;
                }
                r
            })
            .collect();
        self.normalize(a.level, scale, prec, coeffs)
    }

    /// Equality modulo the smaller of the two precisions.
    pub fn agree(&self, a: &TowerElement, b: &TowerElement) -> bool {
        self.sub(a, b).is_zero()
    }

    pub fn neg(&self, a: &TowerElement) -> TowerElement {
        if a.is_zero() {
            return a.clone();
        }
        let m = self.pp(a.prec - a.scale);
        let coeffs = a.coeffs.iter().map(|c| if c.is_zero() { BigUint::zero() } else { &*m - c }).collect();
        TowerElement { level: a.level, scale: a.scale, prec: a.prec, coeffs }
    }

    pub fn sub(&self, a: &TowerElement, b: &TowerElement) -> TowerElement {
        self.add(a, &self.neg(b))
    }

    pub fn mul(&self, a: &TowerElement, b: &TowerElement) -> TowerElement {
        let (a, b) = self.align(a, b);
        let prec = min(max(a.prec, b.prec), min(a.prec + b.scale, b.prec + a.scale));
        let scale = a.scale + b.scale;
        if scale >= prec || a.is_zero() || b.is_zero() {
            return self.bottom(a.level, prec);
        }
        let m = self.pp(prec - scale).into_owned();
        let trim =
            |v: &[BigUint]| -> Vec<BigUint> { v.iter().map(|c| if *c >= m { c % &m } else { c.clone() }).collect() };
        let prod = kronecker_mul(&trim(&a.coeffs), &trim(&b.coeffs));
        let coeffs = self.reduce_cyclotomic(a.level, prod, &m);
        self.normalize(a.level, scale, prec, coeffs)
    }

    pub fn square(&self, a: &TowerElement) -> TowerElement {
        self.mul(a, a)
    }

    pub fn pow(&self, a: &TowerElement, mut e: u64) -> TowerElement {
        let mut result = self.one(a.level);
        let mut base = a.clone();
        while e > 0 {
            if e & 1 == 1 {
                result = self.mul(&result, &base);
            }
            e >>= 1;
            if e > 0 {
                base = self.square(&base);
            }
        }
        result
    }

    /// Multiply by `p^k`; exact for any sign of `k`.
    pub fn shift(&self, a: &TowerElement, k: i64) -> TowerElement {
        TowerElement { level: a.level, scale: a.scale + k, prec: a.prec + k, coeffs: a.coeffs.clone() }
    }

    pub fn scalar_mul(&self, c: &PadicScalar, a: &TowerElement) -> TowerElement {
        let cs = self.from_scalars(0, std::slice::from_ref(c));
        self.mul(&self.embed(&cs, a.level), a)
    }

    pub fn mul_int(&self, c: i64, a: &TowerElement) -> TowerElement {
        self.mul(&self.from_int(a.level, c), a)
    }

    /// Lower the precision of `a` to at most `prec`.
    pub fn truncate(&self, a: &TowerElement, prec: i64) -> TowerElement {
        if prec >= a.prec {
            return a.clone();
        }
        self.normalize(a.level, a.scale.min(prec), prec, {
            let f = self.pp((a.scale - a.scale.min(prec)).max(0));
            a.coeffs.iter().map(|c| c * &*f).collect()
        })
    }

    /// Multiplicative inverse, computed from norms down the tower.
    pub fn inv(&self, a: &TowerElement) -> Result<TowerElement> {
        if a.is_zero() {
            return Err(Error::DivisionByZero);
        }
        if a.level == 0 {
            let ld = self.level(0);
            let mut conj = self.one(0);
            for u in 2..ld.order {
                if u % self.params.p as u64 != 0 {
                    conj = self.mul(&conj, &self.apply_unit(u, a));
                }
            }
            let norm = self.mul(a, &conj);
            let coords = self.coeffs(&norm);
            if coords[1..].iter().any(|c| !c.is_bottom()) {
                return Err(Error::InsufficientPrecision("norm to Q_p did not land in Q_p".into()));
            }
            let ninv = coords[0].inv()?;
            return Ok(self.scalar_mul(&ninv, &conj));
        }
        let n = a.level;
        let mut conj = self.one(n);
        for g in self.relative_group(n - 1, n).into_iter().skip(1) {
            conj = self.mul(&conj, &self.apply_unit(g, a));
        }
        let norm = self.restrict(&self.mul(a, &conj), n - 1)?;
        let ninv = self.inv(&norm)?;
        Ok(self.mul(&conj, &self.embed(&ninv, n)))
    }

    pub fn div(&self, a: &TowerElement, b: &TowerElement) -> Result<TowerElement> {
        Ok(self.mul(a, &self.inv(b)?))
    }

    // ---------------------------------------------------------------------
    // moving between levels

    /// The inclusion `K_n -> K_m`, `zeta_n = zeta_m^(p^(m-n))`.
    pub fn embed(&self, x: &TowerElement, m: usize) -> TowerElement {
        assert!(m >= x.level, "cannot embed level {} into {m}", x.level);
        if m == x.level {
            return x.clone();
        }
        let step = (self.params.p as usize).pow((m - x.level) as u32);
        let mut coeffs = vec![BigUint::zero(); self.degree(m)];
        for (e, c) in x.coeffs.iter().enumerate() {
            coeffs[e * step] = c.clone();
        }
        TowerElement { level: m, scale: x.scale, prec: x.prec, coeffs }
    }

    /// View an element of `K_m` that lies in `K_n` as an element of `K_n`.
    pub fn restrict(&self, x: &TowerElement, n: usize) -> Result<TowerElement> {
        assert!(n <= x.level);
        if n == x.level {
            return Ok(x.clone());
        }
        let step = (self.params.p as usize).pow((x.level - n) as u32);
        if x.coeffs.iter().enumerate().any(|(e, c)| e % step != 0 && !c.is_zero()) {
            return Err(Error::InsufficientPrecision(format!(
                "element of K_{} does not vanish outside K_{n} at precision {}",
                x.level, x.prec
            )));
        }
        let coeffs = x.coeffs.iter().step_by(step).cloned().collect();
        Ok(TowerElement { level: n, scale: x.scale, prec: x.prec, coeffs })
    }

    /// True when the element lies in `K_n` (its coordinates vanish off the `K_n` positions).
    pub fn lies_in(&self, x: &TowerElement, n: usize) -> bool {
        n >= x.level || self.restrict(x, n).is_ok()
    }

    // ---------------------------------------------------------------------
    // Galois action

    /// `g_0^t` acting on `K_n`.
    pub fn galois(&self, level: usize, t: u64) -> GaloisElement {
        let p = self.params.p as u64;
        let modn = p.pow(level as u32);
        let order = self.level(level).order;
        let gen = 1 + p.pow(self.params.s);
        let t = t % modn.max(1);
        GaloisElement { level, exponent: t, unit: mod_pow_u64(gen, t, order) }
    }

    /// `g_k = g_0^(p^k)` acting on `K_n`; it generates `Gal(K_inf / K_k)`.
    pub fn generator_chain(&self, level: usize, k: u32) -> GaloisElement {
        let p = self.params.p as u64;
        let modn = p.pow(level as u32);
        let t = if (k as usize) >= level { 0 } else { p.pow(k) % modn };
        self.galois(level, t)
    }

    /// Apply `sigma_a: zeta -> zeta^a` for a unit `a` modulo the order of zeta.
    pub(crate) fn apply_unit(&self, a: u64, x: &TowerElement) -> TowerElement {
        let ld = self.level(x.level);
        let a = a % ld.order;
        if a == 1 || x.is_zero() {
            return x.clone();
        }
        let mut v = vec![BigUint::zero(); ld.order as usize];
        for (e, c) in x.coeffs.iter().enumerate() {
            if !c.is_zero() {
                v[((e as u64 * a) % ld.order) as usize] = c.clone();
            }
        }
        let m = self.pp(x.prec - x.scale);
        let coeffs = self.reduce_cyclotomic(x.level, v, &m);
        self.normalize(x.level, x.scale, x.prec, coeffs)
    }

    /// `g(x)` for `x` at a level not above `g.level`.
    pub fn galois_apply(&self, g: &GaloisElement, x: &TowerElement) -> TowerElement {
        assert!(x.level <= g.level, "Galois element of level {} applied to level {}", g.level, x.level);
        self.apply_unit(g.unit, x)
    }

    /// Units `a` with `sigma_a` running over `Gal(K_m / K_n)`, identity first.
    pub fn relative_group(&self, n: usize, m: usize) -> Vec<u64> {
        assert!(n <= m);
        let p = self.params.p as u64;
        let order = self.level(m).order;
        let gen = mod_pow_u64(1 + p.pow(self.params.s), p.pow(n as u32), order);
        let count = p.pow((m - n) as u32);
        let mut out = Vec::with_capacity(count as usize);
        let mut a = 1u64;
        for _ in 0..count {
            out.push(a);
            a = ((a as u128 * gen as u128) % order as u128) as u64;
        }
        out
    }

    // ---------------------------------------------------------------------
    // traces, norms, projectors

    /// `Tr_{K_m / K_n}(x)` as the sum of the conjugates of `x`.
    pub fn trace_down(&self, x: &TowerElement, n: usize) -> Result<TowerElement> {
        let m = x.level;
        assert!(n <= m, "trace to a higher level");
        if n == m {
            return Ok(x.clone());
        }
        let ld = self.level(m);
        let mut acc = vec![BigUint::zero(); ld.order as usize];
        for a in self.relative_group(n, m) {
            for (e, c) in x.coeffs.iter().enumerate() {
                if !c.is_zero() {
                    acc[((e as u64 * a) % ld.order) as usize] += c;
                }
            }
        }
        let md = self.pp(x.prec - x.scale);
        let coeffs = self.reduce_cyclotomic(m, acc, &md);
        let full = self.normalize(m, x.scale, x.prec, coeffs);
        self.restrict(&full, n)
    }

    /// `N_{K_m / K_n}(x)`, computed one layer at a time; each layer is the product
    /// of the `p` conjugates over the layer below.
    pub fn norm_down(&self, x: &TowerElement, n: usize) -> Result<TowerElement> {
        assert!(n <= x.level, "norm to a higher level");
        let mut y = x.clone();
        while y.level > n {
            let l = y.level;
            let mut prod = y.clone();
            for a in self.relative_group(l - 1, l).into_iter().skip(1) {
                prod = self.mul(&prod, &self.apply_unit(a, &y));
            }
            y = self.restrict(&prod, l - 1)?;
        }
        Ok(y)
    }

    /// Tate's normalized trace `R_n(x) = p^(-k) Tr_{K_(n+k)/K_n}(x)`; the identity below level `n`.
    pub fn normalized_trace(&self, x: &TowerElement, n: usize) -> Result<TowerElement> {
        if x.level <= n {
            return Ok(self.embed(x, n));
        }
        let k = (x.level - n) as i64;
        if x.prec - k < 1 {
            return Err(Error::InsufficientPrecision(format!(
                "R_{n} from level {} needs {k} guard digits, element has precision {}",
                x.level, x.prec
            )));
        }
        let tr = self.trace_down(x, n)?;
        Ok(self.shift(&tr, -k))
    }

    /// `R_n^perp = R_n - R_(n-1)` (and `R_0^perp = R_0`), landing in `K_n`.
    pub fn perp_project(&self, x: &TowerElement, n: usize) -> Result<TowerElement> {
        if n > x.level {
            return Ok(self.bottom(n, x.prec));
        }
        let rn = self.normalized_trace(x, n)?;
        if n == 0 {
            return Ok(rn);
        }
        let rn1 = self.normalized_trace(x, n - 1)?;
        Ok(self.sub(&rn, &self.embed(&rn1, n)))
    }

    // ---------------------------------------------------------------------
    // valuation and rho-expansions

    /// Exact `val_p(x)`.
    ///
    /// `x = p^scale y` with `y` primitive, and `val_p(y) = j / [K_n : Q_p]` where `j`
    /// is the `rho_n`-adic order of `y mod p` in `F_p[rho_n]/(rho_n^phi)`.
    pub fn valuation(&self, x: &TowerElement) -> Result<Val> {
        if x.is_zero() {
            return Err(Error::ValuationOfZero);
        }
        let p = self.params.p;
        let phi = self.degree(x.level);
        let red: Vec<u32> = x.coeffs.iter().map(|c| (c % p).iter_u32_digits().next().unwrap_or(0)).collect();
        for j in 0..phi {
            let mut s = 0u64;
            for (e, &c) in red.iter().enumerate().skip(j) {
                if c != 0 {
                    s += c as u64 * self.pascal_mod_p[e][j] as u64;
                }
            }
            if !s.is_multiple_of(p as u64) {
                return Ok(Val::from_integer(x.scale) + Val::new(j as i64, phi as i64));
            }
        }
        Err(Error::Internal("primitive element vanished modulo p".into()))
    }

    /// `rho_0`-adic coordinates over `Z_p` of a level-0 coordinate block.
    pub(crate) fn rho0_coords(&self, block: &[BigUint]) -> Vec<BigUint> {
        let f = block.len();
        (0..f)
            .map(|j| {
                let mut s = BigUint::zero();
                for (q, b) in block.iter().enumerate().skip(j) {
                    if !b.is_zero() {
                        s += b * self.binomial(q, j);
                    }
                }
                s
            })
            .collect()
    }

    /// Write `x in K_n` as `sum_{i < p^n} x_i rho_n^i` with `x_i in K_0`.
    pub fn to_rho_basis(&self, x: &TowerElement) -> RhoExpansion {
        let n = x.level;
        let e = self.relative_degree(n);
        let f = self.base_degree();
        let mut blocks: Vec<Vec<BigUint>> = vec![vec![BigUint::zero(); f]; e];
        for q in 0..f {
            for j in 0..e {
                let mut s = BigUint::zero();
                for r in j..e {
                    let c = &x.coeffs[q * e + r];
                    if !c.is_zero() {
                        s += c * self.binomial(r, j);
                    }
                }
                blocks[j][q] = s;
            }
        }
        let coeffs = blocks.into_iter().map(|b| self.normalize(0, x.scale, x.prec, b)).collect();
        RhoExpansion { level: n, coeffs }
    }

    /// Inverse of [`Tower::to_rho_basis`].
    pub fn from_rho_basis(&self, r: &RhoExpansion) -> TowerElement {
        let n = r.level;
        let e = self.relative_degree(n);
        let f = self.base_degree();
        assert_eq!(r.coeffs.len(), e, "rho expansion of the wrong length");
        let prec = r.coeffs.iter().map(|c| c.prec).min().unwrap_or(self.params.prec);
        let scale = r.coeffs.iter().map(|c| c.scale).min().unwrap_or(prec).min(prec);
        let m = self.pp(prec - scale).into_owned();
        let lifted: Vec<Vec<BigInt>> = r
            .coeffs
            .iter()
            .map(|c| {
                let fct = self.pp(c.scale.min(prec) - scale);
                c.coeffs.iter().map(|v| BigInt::from(v * &*fct)).collect()
            })
            .collect();
        let mut out = vec![BigUint::zero(); self.degree(n)];
        for q in 0..f {
            let col: Vec<BigInt> = (0..e).map(|j| lifted[j][q].clone()).collect();
            for (rr, v) in binomial_inverse(self, &col).into_iter().enumerate() {
                out[q * e + rr] = reduce_signed(&v, &m);
            }
        }
        self.normalize(n, scale, prec, out)
    }

    /// `val_p` of an element of `K_0` from its `rho_0`-adic coordinates.
    pub fn valuation_level0(&self, x: &TowerElement) -> Result<Val> {
        assert_eq!(x.level, 0);
        if x.is_zero() {
            return Err(Error::ValuationOfZero);
        }
        let f = self.base_degree() as i64;
        let p = self.params.p;
        let coords = self.rho0_coords(&x.coeffs);
        let digits = (x.prec - x.scale) as u64;
        coords
            .iter()
            .enumerate()
            .filter_map(|(j, c)| {
                let v = crate::padic::val_p_uint(c, p)?;
                (v < digits).then(|| Val::from_integer(x.scale + v as i64) + Val::new(j as i64, f))
            })
            .min()
            .ok_or(Error::ValuationOfZero)
    }

    /// `val_p(x) = min_i (val_p(x_i) + i val_p(rho_n))` over the rho expansion over `K_0`.
    pub fn valuation_via_rho(&self, x: &TowerElement) -> Result<Val> {
        let r = self.to_rho_basis(x);
        let step = self.uniformizer_valuation(x.level);
        r.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero())
            .map(|(i, c)| self.valuation_level0(c).map(|v| v + step * i as i64))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .min()
            .ok_or(Error::ValuationOfZero)
    }

    /// `Z_p`-coordinates of `x` in the basis `rho_n^j`, `j < [K_n : Q_p]`, relative to `p^scale`.
    pub(crate) fn rho_coords_over_qp(&self, x: &TowerElement) -> Vec<BigUint> {
        self.rho0_coords(&x.coeffs)
    }

    /// Element `p^scale * sum c_j rho_n^j` from `Z_p`-coordinates.
    pub(crate) fn from_rho_coords_over_qp(
        &self,
        level: usize,
        coords: &[BigInt],
        scale: i64,
        prec: i64,
    ) -> TowerElement {
        let v = binomial_inverse(self, coords);
        self.from_ints(level, &v, scale, prec)
    }

    /// Integral lattice coordinates: the `rho_0`-adic `Z_p`-coordinates of each `x_i`
    /// in the rho expansion over `K_0`, flattened as `i * [K_0:Q_p] + j`.
    ///
    /// Requires an integral element known to precision at least `modulus_exp`; the
    /// result is reduced modulo `p^modulus_exp`.
    pub fn lattice_coords(&self, x: &TowerElement, modulus_exp: i64) -> Result<Vec<BigUint>> {
        if !x.is_zero() && x.scale < 0 {
            return Err(Error::Domain("lattice coordinates of a non-integral element".into()));
        }
        if x.prec < modulus_exp {
            return Err(Error::InsufficientPrecision(format!(
                "element known to p^{}, lattice needs p^{modulus_exp}",
                x.prec
            )));
        }
        let m = self.pp(modulus_exp).into_owned();
        let f = self.pp(x.scale.max(0).min(modulus_exp)).into_owned();
        let r = self.to_rho_basis(x);
        let mut out = Vec::with_capacity(self.degree(x.level));
        for c in &r.coeffs {
            // blocks carry their own scale after normalization
            let fc = self.pp((c.scale - x.scale).max(0).min(modulus_exp)).into_owned();
            for v in self.rho0_coords(&c.coeffs) {
                if c.is_zero() {
                    out.push(BigUint::zero());
                } else {
                    out.push((v * &fc * &f) % &m);
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`Tower::lattice_coords`] for exact integer coordinates.
    pub fn from_lattice_coords(&self, level: usize, coords: &[BigInt], prec: i64) -> TowerElement {
        let e = self.relative_degree(level);
        let f = self.base_degree();
        assert_eq!(coords.len(), e * f);
        let mut out = vec![BigInt::zero(); self.degree(level)];
        let blocks: Vec<Vec<BigInt>> = coords.chunks(f).map(|c| binomial_inverse(self, c)).collect();
        for q in 0..f {
            let col: Vec<BigInt> = (0..e).map(|j| blocks[j][q].clone()).collect();
            for (r, v) in binomial_inverse(self, &col).into_iter().enumerate() {
                out[q * e + r] = v;
            }
        }
        self.from_ints(level, &out, 0, prec)
    }

    /// Invert a scalar when it is a unit-free power of `p` times a unit; helper for callers
    /// that divide by known constants.
    pub fn inverse_unit_mod(&self, u: &BigUint, digits: i64) -> Option<BigUint> {
        inv_mod(u, &self.pp(digits))
    }
}

/// `b_e = sum_{j >= e} C(j, e) (-1)^(j-e) c_j`: coordinates in powers of `zeta - 1`
/// back to powers of `zeta`.
fn binomial_inverse(t: &Tower, c: &[BigInt]) -> Vec<BigInt> {
    let len = c.len();
    (0..len)
        .map(|e| {
            let mut s = BigInt::zero();
            for (j, cj) in c.iter().enumerate().skip(e) {
                if cj.is_zero() {
                    continue;
                }
                let term = cj * BigInt::from_biguint(Sign::Plus, t.binomial(j, e).clone());
                if (j - e) % 2 == 0 {
                    s += term;
                } else {
                    s -= term;
                }
            }
            s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t3() -> Tower {
        Tower::new(TowerParams::new(3, 3, 40)).unwrap()
    }

    fn v(a: i64, b: i64) -> Val {
        Val::new(a, b)
    }

    fn random_integral(t: &Tower, level: usize, rng: &mut ChaCha8Rng) -> TowerElement {
        let c: Vec<BigInt> = (0..t.degree(level)).map(|_| BigInt::from(rng.gen_range(-1000i64..1000))).collect();
        t.from_ints(level, &c, 0, t.prec())
    }

    #[test]
    fn params_validation() {
        assert!(TowerParams::new(4, 2, 60).validate().is_err());
        assert!(TowerParams { p: 3, s: 2, max_level: 2, prec: 60 }.validate().is_err());
        assert!(TowerParams::new(3, 0, 60).validate().is_err());
        assert!(TowerParams::new(3, 12, 60).validate().is_err());
        assert!(TowerParams::new(2, 3, 60).validate().is_ok());
    }

    #[test]
    fn uniformizer_valuations() {
        let t = t3();
        assert_eq!(t.valuation(&t.uniformizer(0)).unwrap(), v(1, 2));
        assert_eq!(t.valuation(&t.uniformizer(1)).unwrap(), v(1, 6));
        let t2 = Tower::new(TowerParams::new(2, 3, 40)).unwrap();
        assert_eq!(t2.valuation(&t2.uniformizer(2)).unwrap(), v(1, 8));
    }

    #[test]
    fn embedding_rho0_in_level_one() {
        let t = t3();
        let r1 = t.uniformizer(1);
        let expected = t.add(&t.add(&t.pow(&r1, 3), &t.mul_int(3, &t.square(&r1))), &t.mul_int(3, &r1));
        assert_eq!(t.embed(&t.uniformizer(0), 1), expected);
        assert_eq!(t.embed(&t.one(0), 2), t.one(2));
    }

    #[test]
    fn galois_examples() {
        let t = t3();
        let g = t.galois(1, 1);
        assert_eq!(g.unit, 4);
        assert_eq!(t.galois_apply(&g, &t.one(1)), t.one(1));
        assert_eq!(t.galois_apply(&g, &t.zeta(1)), t.zeta_pow(1, 4));
        let z3 = t.zeta_pow(1, 3);
        assert_eq!(t.galois_apply(&g, &z3), z3);
        assert_eq!(t.generator_chain(3, 1).unit, mod_pow_u64(4, 3, 81));
    }

    #[test]
    fn trace_and_norm_examples() {
        let t = t3();
        assert_eq!(t.trace_down(&t.one(1), 0).unwrap(), t.from_int(0, 3));
        assert!(t.trace_down(&t.zeta(1), 0).unwrap().is_zero());
        assert_eq!(t.norm_down(&t.uniformizer(1), 0).unwrap(), t.uniformizer(0));
        assert_eq!(t.norm_down(&t.uniformizer(3), 0).unwrap(), t.uniformizer(0));
    }

    #[test]
    fn norm_matches_full_conjugate_product() {
        let t = t3();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let x = random_integral(&t, 2, &mut rng);
            let mut full = t.one(2);
            for a in t.relative_group(0, 2) {
                full = t.mul(&full, &t.apply_unit(a, &x));
            }
            assert_eq!(t.embed(&t.norm_down(&x, 0).unwrap(), 2), full);
        }
    }

    #[test]
    fn normalized_trace_examples() {
        let t = t3();
        let x = t.from_i64s(0, &[5, -7]);
        assert_eq!(t.normalized_trace(&x, 0).unwrap(), x);
        assert!(t.normalized_trace(&t.zeta(1), 0).unwrap().is_zero());
        assert!(t.agree(&t.normalized_trace(&t.uniformizer(1), 0).unwrap(), &t.from_int(0, -1)));
    }

    #[test]
    fn normalized_trace_is_coordinate_projection() {
        // in the zeta basis R_n keeps exactly the exponents divisible by p^(m-n)
        let t = t3();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_integral(&t, 3, &mut rng);
        for n in 0..=3 {
            let r = t.embed(&t.normalized_trace(&x, n).unwrap(), 3);
            let step = 3usize.pow(3 - n as u32);
            for (e, (a, b)) in t.coeffs(&r).iter().zip(t.coeffs(&x)).enumerate() {
                if e % step == 0 {
                    assert!(a.sub(&b).is_bottom());
                } else {
                    assert!(a.is_bottom());
                }
            }
        }
    }

    #[test]
    fn perp_projection_examples() {
        let t = t3();
        assert!(t.agree(&t.perp_project(&t.zeta(1), 1).unwrap(), &t.zeta(1)));
        let x = t.embed(&t.from_i64s(1, &[1, 2, 3, 4, 5, 6]), 2);
        assert!(t.perp_project(&x, 2).unwrap().is_zero());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x = random_integral(&t, 3, &mut rng);
            let mut sum = t.zero(3);
            for n in 0..=3 {
                sum = t.add(&sum, &t.perp_project(&x, n).unwrap());
            }
            assert!(t.sub(&sum, &x).is_zero());
        }
    }

    #[test]
    fn valuation_examples() {
        let t = t3();
        let r0 = t.uniformizer(0);
        let r1 = t.uniformizer(1);
        let d = t.sub(&t.pow(&r1, 3), &r0);
        assert_eq!(t.valuation(&d).unwrap(), v(7, 6));
        let x = t.mul_int(3, &t.zeta_pow(1, 2));
        assert_eq!(t.valuation(&x).unwrap(), v(1, 1));
        assert_eq!(t.valuation(&t.zero(2)), Err(Error::ValuationOfZero));
    }

    #[test]
    fn valuation_agrees_with_rho_expansion_route() {
        let t = t3();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for level in 0..=3 {
            for _ in 0..30 {
                let mut x = random_integral(&t, level, &mut rng);
                let k = rng.gen_range(0..20);
                x = t.mul(&x, &t.pow(&t.uniformizer(level), k));
                assert_eq!(t.valuation(&x).unwrap(), t.valuation_via_rho(&x).unwrap());
            }
        }
    }

    #[test]
    fn rho_basis_examples_and_round_trip() {
        let t = t3();
        let r = t.to_rho_basis(&t.uniformizer(2));
        assert_eq!(r.coeffs[1], t.one(0));
        assert!(r.coeffs.iter().enumerate().all(|(i, c)| i == 1 || c.is_zero()));
        let z = t.to_rho_basis(&t.zeta(1));
        assert_eq!(z.coeffs, vec![t.one(0), t.one(0), t.zero(0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let level = rng.gen_range(0..=3);
            let x = random_integral(&t, level, &mut rng);
            assert_eq!(t.from_rho_basis(&t.to_rho_basis(&x)), x);
        }
    }

    #[test]
    fn embeddings_are_isometric() {
        let t = t3();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..100 {
            let x = t.mul(&random_integral(&t, 1, &mut rng), &t.pow(&t.uniformizer(1), rng.gen_range(0..9)));
            assert_eq!(t.valuation(&t.embed(&x, 3)).unwrap(), t.valuation(&x).unwrap());
        }
    }

    #[test]
    fn inverse_round_trip() {
        let t = t3();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for level in 0..=2 {
            for _ in 0..5 {
                let x = random_integral(&t, level, &mut rng);
                let y = t.inv(&x).unwrap();
                let one = t.mul(&x, &y);
                assert!(t.sub(&one, &t.one(level)).is_zero(), "x * x^-1 != 1 at level {level}");
            }
        }
        assert_eq!(t.inv(&t.zero(1)), Err(Error::DivisionByZero));
    }

    #[test]
    fn lattice_coordinate_round_trip() {
        let t = t3();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for level in 0..=3 {
            let x = random_integral(&t, level, &mut rng);
            let c: Vec<BigInt> = t.lattice_coords(&x, 30).unwrap().into_iter().map(BigInt::from).collect();
            let y = t.from_lattice_coords(level, &c, 30);
            assert!(t.sub(&t.truncate(&x, 30), &y).is_zero());
        }
    }

    #[test]
    fn literal_round_trip() {
        let t = t3();
        let x = t.shift(&t.from_i64s(2, &[1, -4, 9]), -2);
        let lit = t.to_literal(&x);
        let json = serde_json::to_string(&lit).unwrap();
        let back: ElementLiteral = serde_json::from_str(&json).unwrap();
        assert_eq!(t.from_literal(&back).unwrap(), x);
        let short: ElementLiteral = serde_json::from_str(r#"{"level":1,"coeffs":[0,1]}"#).unwrap();
        assert_eq!(t.from_literal(&short).unwrap(), t.zeta(1));
    }
}
