//! Kahler differentials of the tower, the kernel of `d`, and lattices built from it.
//!
//! `O_{K_n}` is monogenic over both `Z_p` and `O_{K_0}`, generated by `rho_n`, so
//! `Omega = O_{K_n} dρ_n ≅ O_{K_n} / 𝔡` and a differential is stored as the coefficient
//! of `dρ_n` together with the valuation of the different. Two classes agree when their
//! representatives differ by an element of valuation at least `val 𝔡`.

use num_bigint::BigInt;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{self, Commensurability, LatticeBasis};
use crate::padic::{val_p_u64, val_serde, Val};
use crate::tower::{RhoExpansion, Tower, TowerElement};

/// Base ring of the differentials.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Base {
    /// Over `Z_p`.
    Qp,
    /// Over `O_{K_0}`.
    K0,
}

impl Base {
    fn slot(self) -> usize {
        match self {
            Base::K0 => 0,
            Base::Qp => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DifferentData {
    pub level: usize,
    pub base: Base,
    #[serde(with = "val_serde")]
    pub val_different: Val,
    /// `g'(rho_n)` for the minimal polynomial `g` of `rho_n` over the base.
    pub generator: TowerElement,
    /// Coefficients of `g`, constant term first, as elements of the base field
    /// (level 0 for `K_0`, level-0 rationals for `Q_p`).
    pub min_poly: Vec<TowerElement>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OmegaClass {
    pub level: usize,
    pub base: Base,
    /// Coefficient of `d rho_n`.
    pub rep: TowerElement,
    #[serde(with = "val_serde")]
    pub val_different: Val,
}

impl OmegaClass {
    /// A class is zero when its representative lies in the different (ties count as zero).
    pub fn is_zero(&self, tower: &Tower) -> Result<bool> {
        if self.rep.is_zero() {
            if Val::from_integer(self.rep.prec()) < self.val_different {
                return Err(Error::InsufficientPrecision(format!(
                    "representative vanishes only to p^{}, different has valuation {}",
                    self.rep.prec(),
                    self.val_different
                )));
            }
            return Ok(true);
        }
        Ok(tower.valuation(&self.rep)? >= self.val_different)
    }

    /// `min(val rep, val 𝔡)`: the valuation that governs annihilators.
    pub fn effective_valuation(&self, tower: &Tower) -> Result<Val> {
        if self.is_zero(tower)? {
            Ok(self.val_different)
        } else {
            tower.valuation(&self.rep)
        }
    }

    pub fn scale(&self, tower: &Tower, x: &TowerElement) -> OmegaClass {
        OmegaClass { rep: tower.mul(&self.rep, x), ..self.clone() }
    }

    pub fn add(&self, tower: &Tower, other: &OmegaClass) -> OmegaClass {
        assert_eq!((self.level, self.base), (other.level, other.base));
        OmegaClass { rep: tower.add(&self.rep, &other.rep), ..self.clone() }
    }

    pub fn sub(&self, tower: &Tower, other: &OmegaClass) -> OmegaClass {
        assert_eq!((self.level, self.base), (other.level, other.base));
        OmegaClass { rep: tower.sub(&self.rep, &other.rep), ..self.clone() }
    }

    /// Class equality in `O / 𝔡`.
    pub fn same_class(&self, tower: &Tower, other: &OmegaClass) -> Result<bool> {
        self.sub(tower, other).is_zero(tower)
    }
}

/// `val_p(𝔡_{K_n/Q_p}) = (n+s) - 1/(p-1)`.
pub fn conductor_discriminant_valuation(tower: &Tower, n: usize) -> Val {
    Val::from_integer((n as u32 + tower.s()) as i64) - Val::new(1, tower.p() as i64 - 1)
}

fn horner_derivative(tower: &Tower, poly: &[TowerElement], at: &TowerElement) -> TowerElement {
    let mut acc = tower.zero(at.level());
    for (i, c) in poly.iter().enumerate().skip(1).rev() {
        acc = tower.add(&tower.mul(&acc, at), &tower.mul_int(i as i64, &tower.embed(c, at.level())));
    }
    acc
}

fn different_over_k0(tower: &Tower, n: usize) -> Result<DifferentData> {
    let rho = tower.uniformizer(n);
    // prod over Gal(K_n/K_0) of (X - sigma(rho)), constant term first
    let mut poly = vec![tower.one(n)];
    for a in tower.relative_group(0, n) {
        let root = tower.neg(&tower.apply_unit(a, &rho));
        let mut next = vec![tower.zero(n); poly.len() + 1];
        for (i, c) in poly.iter().enumerate() {
            next[i + 1] = tower.add(&next[i + 1], c);
            next[i] = tower.add(&next[i], &tower.mul(c, &root));
        }
        poly = next;
    }
    let poly = poly
        .iter()
        .map(|c| tower.restrict(c, 0))
        .collect::<Result<Vec<_>>>()
        .map_err(|_| Error::Internal(format!("minimal polynomial of rho_{n} has coefficients outside K_0")))?;
    certify_eisenstein(tower, &poly, tower.uniformizer_valuation(0), n)?;
    let generator = horner_derivative(tower, &poly, &rho);
    let val_different = tower.valuation(&generator)?;
    Ok(DifferentData { level: n, base: Base::K0, val_different, generator, min_poly: poly })
}

fn different_over_qp(tower: &Tower, n: usize) -> Result<DifferentData> {
    // Phi_{p^(n+s)}(1 + X) = sum_{i<p} (1+X)^(i p^(n+s-1)), integer coefficients
    let p = tower.p() as usize;
    let block = tower.degree(n) / (p - 1);
    let mut coeffs = vec![BigInt::zero(); tower.degree(n) + 1];
    for i in 0..p {
        let e = i * block;
        for (j, c) in coeffs.iter_mut().enumerate().take(e + 1) {
            *c += BigInt::from(tower.binomial(e, j).clone());
        }
    }
    let poly: Vec<TowerElement> =
        coeffs.iter().map(|c| tower.from_ints(0, std::slice::from_ref(c), 0, tower.prec())).collect();
    certify_eisenstein(tower, &poly, Val::from_integer(1), n)?;
    let generator = horner_derivative(tower, &poly, &tower.uniformizer(n));
    let val_different = tower.valuation(&generator)?;
    Ok(DifferentData { level: n, base: Base::Qp, val_different, generator, min_poly: poly })
}

fn certify_eisenstein(tower: &Tower, poly: &[TowerElement], base_uniformizer: Val, n: usize) -> Result<()> {
    let deg = poly.len() - 1;
    let fail = |why: &str| Error::Internal(format!("minimal polynomial of rho_{n} is not Eisenstein: {why}"));
    if !tower.agree(&poly[deg], &tower.one(0)) {
        return Err(fail("not monic"));
    }
    if tower.valuation(&poly[0]).ok() != Some(base_uniformizer) {
        return Err(fail("constant term is not a uniformizer of the base"));
    }
    for c in &poly[1..deg] {
        if !c.is_zero() && tower.valuation(c)? <= Val::zero() {
            return Err(fail("middle coefficient is a unit"));
        }
    }
    Ok(())
}

/// The different of `K_n` over the given base, with the generator `g'(rho_n)`.
pub fn different(tower: &Tower, n: usize, base: Base) -> Result<DifferentData> {
    assert!(n <= tower.max_level());
    let cell = &tower.different_cache[base.slot()][n];
    if let Some(d) = cell.get() {
        return Ok(d.clone());
    }
    let d = match base {
        Base::K0 => different_over_k0(tower, n)?,
        Base::Qp => different_over_qp(tower, n)?,
    };
    Ok(cell.get_or_init(|| d).clone())
}

fn require_integral(x: &TowerElement) -> Result<()> {
    if !x.is_zero() && !x.is_integral() {
        return Err(Error::Domain("d is defined on integral elements only".into()));
    }
    Ok(())
}

/// `dx` as the class of `sum_i i x_i rho_n^(i-1)` in `O_{K_n}/𝔡`.
pub fn d_map(tower: &Tower, x: &TowerElement, base: Base) -> Result<OmegaClass> {
    require_integral(x)?;
    let n = x.level();
    let val_different = different(tower, n, base)?.val_different;
    let rep = match base {
        Base::K0 => {
            let r = tower.to_rho_basis(x);
            let len = r.coeffs.len();
            let mut coeffs: Vec<TowerElement> = (1..len).map(|i| tower.mul_int(i as i64, &r.coeffs[i])).collect();
            coeffs.push(tower.bottom(0, x.prec()));
            tower.from_rho_basis(&RhoExpansion { level: n, coeffs })
        }
        Base::Qp => {
            if x.is_zero() {
                tower.bottom(n, x.prec())
            } else {
                let c = tower.rho_coords_over_qp(x);
                let mut d: Vec<BigInt> = c.iter().enumerate().skip(1).map(|(j, v)| BigInt::from(v * j)).collect();
                d.push(BigInt::zero());
                tower.from_rho_coords_over_qp(n, &d, x.scale(), x.prec())
            }
        }
    };
    Ok(OmegaClass { level: n, base, rep, val_different })
}

/// The class of `d rho_n`.
pub fn d_rho(tower: &Tower, n: usize, base: Base) -> Result<OmegaClass> {
    d_map(tower, &tower.uniformizer(n), base)
}

/// Whether `ω2 = x ω1` for some integral `x`, with a witness when it does.
pub fn annihilator_divides(tower: &Tower, w1: &OmegaClass, w2: &OmegaClass) -> Result<(bool, Option<TowerElement>)> {
    if (w1.level, w1.base) != (w2.level, w2.base) {
        return Err(Error::Domain("classes live in different modules".into()));
    }
    let v1 = w1.effective_valuation(tower)?;
    let v2 = w2.effective_valuation(tower)?;
    if v2 < v1 {
        return Ok((false, None));
    }
    if w2.is_zero(tower)? {
        return Ok((true, Some(tower.zero(w1.level))));
    }
    let x = tower.div(&w2.rep, &w1.rep)?;
    Ok((true, Some(x)))
}

/// `d rho_n = tau d rho_m` inside `Omega` at level `m`.
pub fn transition_factor(tower: &Tower, n: usize, m: usize, base: Base) -> Result<TowerElement> {
    Ok(d_map(tower, &tower.embed(&tower.uniformizer(n), m), base)?.rep)
}

/// Image of a class under `Omega_{K_n} -> Omega_{K_m}`.
pub fn omega_transition(tower: &Tower, w: &OmegaClass, m: usize) -> Result<OmegaClass> {
    let tau = transition_factor(tower, w.level, m, w.base)?;
    Ok(OmegaClass {
        level: m,
        base: w.base,
        rep: tower.mul(&tower.embed(&w.rep, m), &tau),
        val_different: different(tower, m, w.base)?.val_different,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InclusionReport {
    pub from_level: usize,
    pub to_level: usize,
    pub checked: usize,
    /// Indices of samples whose zero-ness changed under the transition.
    pub failures: Vec<usize>,
}

impl InclusionReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Check on samples that `Omega_{K_n} -> Omega_{K_m}` is injective: classes are zero
/// after the transition exactly when they were zero before.
pub fn omega_inclusion_check(tower: &Tower, n: usize, m: usize, samples: &[OmegaClass]) -> Result<InclusionReport> {
    assert!(n < m);
    let mut failures = Vec::new();
    for (idx, w) in samples.iter().enumerate() {
        assert_eq!(w.level, n);
        let img = omega_transition(tower, w, m)?;
        if w.is_zero(tower)? != img.is_zero(tower)? {
            failures.push(idx);
        }
    }
    Ok(InclusionReport { from_level: n, to_level: m, checked: samples.len(), failures })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BaseChange {
    pub over_qp: OmegaClass,
    pub over_k0: OmegaClass,
    /// `r = ceil(val 𝔡_{K_0/Q_p})`.
    pub r: i64,
    /// The `Q_p` differential maps to the `K_0` differential under the quotient.
    pub quotient_compatible: bool,
    /// The discrepancy lies in the kernel of the quotient and is killed by `p^r`.
    pub kernel_killed: bool,
}

/// Compare `dx` over `Z_p` and over `O_{K_0}`.
pub fn base_change_compare(tower: &Tower, x: &TowerElement) -> Result<BaseChange> {
    let over_qp = d_map(tower, x, Base::Qp)?;
    let over_k0 = d_map(tower, x, Base::K0)?;
    let r = base_change_exponent(tower);
    let diff = tower.sub(&over_qp.rep, &over_k0.rep);
    let quotient = OmegaClass { rep: diff.clone(), ..over_k0.clone() };
    let killed = OmegaClass { rep: tower.shift(&diff, r), ..over_qp.clone() };
    Ok(BaseChange {
        quotient_compatible: quotient.is_zero(tower)?,
        kernel_killed: killed.is_zero(tower)?,
        over_qp,
        over_k0,
        r,
    })
}

/// `ceil(val_p 𝔡_{K_0/Q_p})`.
pub fn base_change_exponent(tower: &Tower) -> i64 {
    conductor_discriminant_valuation(tower, 0).ceil().to_integer()
}

fn ceil_nonneg(v: Val) -> i64 {
    v.ceil().to_integer().max(0)
}

/// `rho_0^c` in `K_0`.
fn rho0_pow(tower: &Tower, c: i64) -> TowerElement {
    tower.pow(&tower.uniformizer(0), c as u64)
}

/// Exponents `c_i` with `kernel(n) = sum_i rho_0^(c_i) O_{K_0} rho_n^i`.
pub fn kernel_exponents(tower: &Tower, n: usize) -> Vec<i64> {
    let f = tower.base_degree() as i64;
    let e = tower.relative_degree(n) as i64;
    let p = tower.p() as u64;
    (0..e)
        .map(|i| {
            if i == 0 {
                return 0;
            }
            let t = Val::from_integer(n as i64 - val_p_u64(i as u64, p) as i64) - Val::new(i - 1, f * e);
            ceil_nonneg(t * f)
        })
        .collect()
}

/// `O_{K_n}^{d=0}` relative to the chosen base.
///
/// Over `K_0` the terms `i x_i rho_n^(i-1)` of `dx` have pairwise distinct valuations,
/// so `dx = 0` splits into one condition per coefficient; the same holds over `Q_p`
/// with the `Z_p`-coordinates in the `rho_n`-power basis.
pub fn kernel_lattice(tower: &Tower, n: usize, base: Base) -> Result<LatticeBasis> {
    match base {
        Base::K0 => {
            let f = tower.base_degree();
            let exps = kernel_exponents(tower, n);
            let mut gens = Vec::with_capacity(tower.degree(n));
            for (i, c) in exps.iter().enumerate() {
                for j in 0..f {
                    let mut coeffs = vec![tower.zero(0); exps.len()];
                    coeffs[i] = rho0_pow(tower, c + j as i64);
                    gens.push(tower.from_rho_basis(&RhoExpansion { level: n, coeffs }));
                }
            }
            LatticeBasis::from_elements(tower, n, &gens, (n as u32).max(1))
        }
        Base::Qp => {
            let vd = different(tower, n, Base::Qp)?.val_different;
            let phi = tower.degree(n) as i64;
            let p = tower.p() as u64;
            let gens: Vec<TowerElement> = (0..phi)
                .map(|j| {
                    let e =
                        if j == 0 { 0 } else { ceil_nonneg(vd - val_p_u64(j as u64, p) as i64 - Val::new(j - 1, phi)) };
                    let mut c = vec![BigInt::zero(); phi as usize];
                    c[j as usize] = BigInt::from(1);
                    tower.from_rho_coords_over_qp(n, &c, e, tower.prec())
                })
                .collect();
            LatticeBasis::from_elements(tower, n, &gens, ceil_nonneg(vd).max(1) as u32)
        }
    }
}

/// `sum_{m <= n} p^m O_{K_m}`.
pub fn theorem_b_lattice(tower: &Tower, n: usize) -> Result<LatticeBasis> {
    let f = tower.base_degree();
    let mut gens = Vec::new();
    for m in 0..=n {
        let rho = tower.uniformizer(m);
        let mut power = tower.from_int(m, 1);
        for _ in 0..tower.relative_degree(m) {
            let scaled = tower.shift(&power, m as i64);
            for j in 0..f {
                gens.push(tower.embed(&tower.mul(&tower.embed(&rho0_pow(tower, j as i64), m), &scaled), n));
            }
            power = tower.mul(&power, &rho);
        }
    }
    LatticeBasis::from_elements(tower, n, &gens, (n as u32).max(1))
}

/// Commensurability constants of two lattices, from elementary divisors and
/// confirmed by membership of scaled generators.
pub fn commensurability_check(l1: &LatticeBasis, l2: &LatticeBasis) -> Result<Commensurability> {
    let c = lattice::commensurability(l1, l2)?;
    let (mp, mm) = (l1.scaling_into(l2), l2.scaling_into(l1));
    if (c.c_plus, c.c_minus) != (mp, mm) {
        return Err(Error::Internal(format!(
            "elementary divisors give ({}, {}), membership gives ({mp}, {mm})",
            c.c_plus, c.c_minus
        )));
    }
    Ok(c)
}

/// `val(rho_{n+1}^(pk) - rho_n^k)`, or `None` when the difference vanishes.
pub fn rho_congruence(tower: &Tower, n: usize, k: u64) -> Result<Option<Val>> {
    let p = tower.p() as u64;
    let hi = tower.pow(&tower.uniformizer(n + 1), p * k);
    let lo = tower.embed(&tower.pow(&tower.uniformizer(n), k), n + 1);
    let d = tower.sub(&hi, &lo);
    if d.is_zero() {
        return Ok(None);
    }
    tower.valuation(&d).map(Some)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MembershipCertificate {
    /// Index `k` of the piece; the tail uses `0`.
    pub k: usize,
    pub level: usize,
    pub element: TowerElement,
    /// Claimed `y in p^claim O_{K_level}`.
    pub claimed_membership: i64,
    pub verified: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlatDecomposition {
    pub level: usize,
    pub n1: usize,
    pub pieces: Vec<MembershipCertificate>,
    pub tail: MembershipCertificate,
    /// `sum y_k + tail - x` vanishes at working precision.
    pub exact: bool,
}

impl FlatDecomposition {
    pub fn all_verified(&self) -> bool {
        self.exact && self.tail.verified && self.pieces.iter().all(|c| c.verified)
    }
}

fn certify(k: usize, y: TowerElement, claim: i64) -> Result<MembershipCertificate> {
    let verified = if y.is_zero() {
        if y.prec() < claim {
            return Err(Error::InsufficientPrecision(format!(
                "piece {k} vanishes only to p^{}, claim needs p^{claim}",
                y.prec()
            )));
        }
        true
    } else {
        // the zeta basis is integral, so y in p^c O iff its floor valuation is >= c
        y.scale() >= claim
    };
    Ok(MembershipCertificate { k, level: y.level(), element: y, claimed_membership: claim, verified })
}

/// Split `x` with `dx = 0` into pieces `y_k in p^(n-k+1-n_1) O_{K_(n-k+1)}` and a tail
/// in `O_{K_(n_1)}`, by peeling off the coefficients of `rho` at exponents prime to `p`.
pub fn flat_decompose(tower: &Tower, x: &TowerElement, n1: usize) -> Result<FlatDecomposition> {
    let n = x.level();
    if !d_map(tower, x, Base::K0)?.is_zero(tower)? {
        return Err(Error::Domain("flat_decompose needs dx = 0".into()));
    }
    let p = tower.p() as usize;
    let mut pieces = Vec::new();
    let mut current = x.clone();
    let steps = n.saturating_sub(n1);
    for k in 1..=steps {
        let lvl = n - k + 1;
        let r = tower.to_rho_basis(&current);
        let coeffs: Vec<TowerElement> = r.coeffs.iter().step_by(p).cloned().collect();
        let lower = tower.from_rho_basis(&RhoExpansion { level: lvl - 1, coeffs });
        let y = tower.sub(&current, &tower.embed(&lower, lvl));
        pieces.push(certify(k, y, (lvl - n1) as i64)?);
        current = lower;
    }
    let tail = certify(0, current, 0)?;
    let mut sum = tower.embed(&tail.element, n);
    for c in &pieces {
        sum = tower.add(&sum, &tower.embed(&c.element, n));
    }
    let exact = tower.agree(&sum, x);
    Ok(FlatDecomposition { level: n, n1, pieces, tail, exact })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DivisibilityReport {
    /// `(m, i_max(m))` for `m` from the level of `x` to `M`.
    pub per_level: Vec<(usize, u32)>,
    pub sup: u32,
    /// First level at which the supremum is attained.
    pub reached_at: usize,
    /// The supremum is attained strictly below `M`.
    pub stabilized: bool,
}

/// `d(O_{K_m})` plus `p^i`-scaling, as a lattice in rho-coordinates containing `p^m O`.
fn scaled_image_lattice(tower: &Tower, m: usize, i: u32) -> Result<LatticeBasis> {
    let f = tower.base_degree();
    let e = tower.relative_degree(m);
    let k = (m as u32).max(1);
    let p = tower.p() as u64;
    let modulus = p.pow(k);
    let dim = e * f;
    let mut gens = Vec::with_capacity(dim);
    for idx in 1..e {
        // d(rho_0^j rho_m^idx) = idx rho_0^j rho_m^(idx-1) d rho_m
        let scale = ((idx as u64 % modulus) * (p.pow(i.min(k)) % modulus)) % modulus;
        for j in 0..f {
            let mut g = vec![0u64; dim];
            g[(idx - 1) * f + j] = scale;
            gens.push(g);
        }
    }
    LatticeBasis::from_coords(m, tower.p(), k, dim, gens)
}

/// `d(O_{K_m})` inside `Omega = O/p^m O`, in rho-coordinates.
pub fn differential_image_lattice(tower: &Tower, m: usize) -> Result<LatticeBasis> {
    scaled_image_lattice(tower, m, 0)
}

/// For each level `m` up to `max_m`, the largest `i` with `dx in p^i d(O_{K_m})`.
pub fn divisibility_exponent(tower: &Tower, x: &TowerElement, max_m: usize) -> Result<DivisibilityReport> {
    let n = x.level();
    if d_map(tower, x, Base::K0)?.is_zero(tower)? {
        return Err(Error::Domain("divisibility exponent of a zero differential".into()));
    }
    let mut per_level = Vec::new();
    for m in n..=max_m {
        let w = d_map(tower, &tower.embed(x, m), Base::K0)?;
        let coords: Vec<BigInt> =
            tower.lattice_coords(&w.rep, m.max(1) as i64)?.into_iter().map(BigInt::from).collect();
        let mut best = 0;
        for i in 1..=m as u32 {
            if scaled_image_lattice(tower, m, i)?.contains_coords(&coords) {
                best = i;
            } else {
                break;
            }
        }
        per_level.push((m, best));
    }
    let sup = per_level.iter().map(|(_, i)| *i).max().unwrap_or(0);
    let reached_at = per_level.iter().find(|(_, i)| *i == sup).map(|(m, _)| *m).unwrap_or(n);
    Ok(DivisibilityReport { per_level, sup, reached_at, stabilized: reached_at < max_m })
}

/// Least `c >= 0` with `p^(n+c) O_{K_n}` inside `kernel(n)`.
pub fn trivial_inclusion_shift(tower: &Tower, n: usize) -> Result<u32> {
    let full = LatticeBasis::full(tower, n)?;
    let ker = kernel_lattice(tower, n, Base::K0)?;
    Ok(full.scaling_into(&ker).saturating_sub(n as u32))
}
