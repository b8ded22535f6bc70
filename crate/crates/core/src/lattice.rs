//! Full-rank `Z_p`-lattices inside `O_{K_n}`.
//!
//! Coordinates refine the `rho_n`-power basis over `O_{K_0}` through the `rho_0`-power
//! basis of `O_{K_0}`: index `i * [K_0:Q_p] + j` is the coefficient of `rho_0^j rho_n^i`
//! (see [`Tower::lattice_coords`]). Every lattice stored here contains `p^K O_{K_n}` for
//! its recorded modulus exponent `K`, so it is determined by its image in
//! `(Z/p^K)^d` and all reductions run on machine words.
//!
//! The reduced form is lower triangular: generator `r` vanishes above row `r`, has
//! `p^(v_r)` on row `r`, and its entries below row `j` are reduced modulo `p^(v_j)`.
//! A pivot with `v_r = K` is the implicit generator `p^K e_r`.

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::padic::{val_p_u64, PadicScalar};
use crate::tower::{Tower, TowerElement};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeBasis {
    pub level: usize,
    pub p: u32,
    /// `K` with `p^K O_{K_n}` contained in the lattice.
    pub modulus_exp: u32,
    /// Pivot valuations `v_r`.
    pub pivots: Vec<u32>,
    /// Generator columns modulo `p^K`; `columns[r][r] = p^(v_r)` (0 when `v_r = K`).
    pub columns: Vec<Vec<u64>>,
}

/// Entry of a serialized basis matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedEntry {
    pub val: Option<u32>,
    pub value: String,
}

/// Result of comparing two lattices of the same rank.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commensurability {
    /// Least `c >= 0` with `p^c L1` inside `L2`.
    pub c_plus: u32,
    /// Least `c >= 0` with `p^c L2` inside `L1`.
    pub c_minus: u32,
    /// Elementary-divisor valuations of the transition matrix `B2^-1 B1`, sorted.
    pub elementary_divisors: Vec<i64>,
}

struct Modulus {
    p: u64,
    k: u32,
    m: u64,
}

impl Modulus {
    fn new(p: u32, k: u32) -> Result<Self> {
        let m = (p as u64)
            .checked_pow(k)
            .filter(|m| *m < (1 << 62))
            .ok_or_else(|| Error::Domain(format!("lattice modulus {p}^{k} too large")))?;
        Ok(Modulus { p: p as u64, k, m })
    }

    fn mul(&self, a: u64, b: u64) -> u64 {
        ((a as u128 * b as u128) % self.m as u128) as u64
    }

    fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.m - b
        }
    }

    /// `val_p` of a residue, `k` for zero.
    fn val(&self, a: u64) -> u32 {
        if a == 0 {
            self.k
        } else {
            val_p_u64(a, self.p).min(self.k)
        }
    }

    fn pow(&self, e: u32) -> u64 {
        if e >= self.k {
            0
        } else {
            self.p.pow(e)
        }
    }

    fn inv_unit(&self, u: u64) -> u64 {
        // extended Euclid on i128
        let (mut a, mut b) = (u as i128, self.m as i128);
        let (mut x0, mut x1) = (1i128, 0i128);
        while b != 0 {
            let q = a / b;
            (a, b) = (b, a - q * b);
            (x0, x1) = (x1, x0 - q * x1);
        }
        debug_assert_eq!(a, 1);
        x0.rem_euclid(self.m as i128) as u64
    }

    fn axpy(&self, h: &mut [u64], f: u64, g: &[u64]) {
        // h -= f * g
        if f == 0 {
            return;
        }
        for (x, y) in h.iter_mut().zip(g) {
            if *y != 0 {
                *x = self.sub(*x, self.mul(f, *y));
            }
        }
    }
}

impl LatticeBasis {
    /// Lattice spanned by the given coordinate vectors together with `p^K Z_p^d`.
    pub fn from_coords(level: usize, p: u32, modulus_exp: u32, dim: usize, gens: Vec<Vec<u64>>) -> Result<Self> {
        let md = Modulus::new(p, modulus_exp)?;
        let mut work: Vec<Vec<u64>> = gens
            .into_iter()
            .map(|mut g| {
                assert_eq!(g.len(), dim, "generator of the wrong length");
                g.iter_mut().for_each(|x| *x %= md.m);
                g
            })
            .filter(|g| g.iter().any(|x| *x != 0))
            .collect();
        let mut pivots = Vec::with_capacity(dim);
        let mut columns = Vec::with_capacity(dim);
        for r in 0..dim {
            let mut best: Option<(u32, usize)> = None;
            for (idx, g) in work.iter().enumerate() {
                if g[r] != 0 {
                    let v = md.val(g[r]);
                    if best.is_none_or(|(bv, _)| v < bv) {
                        best = Some((v, idx));
                    }
                }
            }
            let Some((v, idx)) = best else {
                pivots.push(modulus_exp);
                let mut col = vec![0u64; dim];
                col[r] = md.pow(modulus_exp);
                columns.push(col);
                continue;
            };
            let mut g = work.swap_remove(idx);
            let unit = g[r] / md.p.pow(v);
            let uinv = md.inv_unit(unit);
            g.iter_mut().for_each(|x| *x = md.mul(*x, uinv));
            let pv = md.p.pow(v);
            for h in work.iter_mut() {
                if h[r] != 0 {
                    let f = h[r] / pv;
                    md.axpy(h, f, &g);
                }
            }
            let ann_f = md.pow(modulus_exp - v);
            if ann_f != 0 {
                let ann: Vec<u64> = g.iter().map(|x| md.mul(*x, ann_f)).collect();
                if ann.iter().any(|x| *x != 0) {
                    work.push(ann);
                }
            }
            work.retain(|h| h.iter().any(|x| *x != 0));
            pivots.push(v);
            columns.push(g);
        }
        // canonical reduction of the entries below each pivot
        for i in 0..dim {
            for j in i + 1..dim {
                let vj = pivots[j];
                if vj >= modulus_exp {
                    continue;
                }
                let pv = md.p.pow(vj);
                let f = columns[i][j] / pv;
                if f != 0 {
                    let (head, tail) = columns.split_at_mut(j);
                    md.axpy(&mut head[i], f, &tail[0]);
                }
            }
        }
        Ok(LatticeBasis { level, p, modulus_exp, pivots, columns })
    }

    /// Lattice spanned by integral elements of `K_n` and `p^K O_{K_n}`.
    pub fn from_elements(tower: &Tower, level: usize, gens: &[TowerElement], modulus_exp: u32) -> Result<Self> {
        let dim = tower.degree(level);
        let coords = gens
            .iter()
            .map(|g| {
                let g = tower.embed(g, level);
                let c = tower.lattice_coords(&g, modulus_exp as i64)?;
                Ok(c.iter().map(|x| x.to_u64().unwrap()).collect())
            })
            .collect::<Result<Vec<Vec<u64>>>>()?;
        Self::from_coords(level, tower.p(), modulus_exp, dim, coords)
    }

    /// The whole of `O_{K_n}`.
    pub fn full(tower: &Tower, level: usize) -> Result<Self> {
        let dim = tower.degree(level);
        let gens = (0..dim)
            .map(|r| {
                let mut c = vec![0u64; dim];
                c[r] = 1;
                c
            })
            .collect();
        Self::from_coords(level, tower.p(), 1, dim, gens)
    }

    pub fn dim(&self) -> usize {
        self.pivots.len()
    }

    /// `log_p [Z_p^d : L]`.
    pub fn index_exponent(&self) -> u64 {
        self.pivots.iter().map(|v| *v as u64).sum()
    }

    fn modulus(&self) -> Modulus {
        Modulus::new(self.p, self.modulus_exp).expect("validated at construction")
    }

    /// Membership of a coordinate vector given as exact integers.
    pub fn contains_coords(&self, coords: &[BigInt]) -> bool {
        let md = self.modulus();
        let mbig = BigInt::from(md.m);
        let mut v: Vec<u64> = coords
            .iter()
            .map(|c| {
                let r = ((c % &mbig) + &mbig) % &mbig;
                r.to_u64().unwrap()
            })
            .collect();
        self.reduce_in_place(&md, &mut v)
    }

    fn reduce_in_place(&self, md: &Modulus, v: &mut [u64]) -> bool {
        for r in 0..self.dim() {
            if v[r] == 0 {
                continue;
            }
            let pr = self.pivots[r];
            if pr >= self.modulus_exp {
                return false;
            }
            let pv = md.p.pow(pr);
            if !v[r].is_multiple_of(pv) {
                return false;
            }
            let f = v[r] / pv;
            md.axpy(v, f, &self.columns[r]);
        }
        true
    }

    /// Membership of an element of `K_n`; non-integral elements are never members.
    pub fn contains(&self, tower: &Tower, x: &TowerElement) -> Result<bool> {
        if x.is_zero() {
            return Ok(true);
        }
        if !x.is_integral() {
            return Ok(false);
        }
        let x = tower.embed(x, self.level);
        let c = tower.lattice_coords(&x, self.modulus_exp as i64)?;
        let md = self.modulus();
        let mut v: Vec<u64> = c.iter().map(|x| x.to_u64().unwrap()).collect();
        Ok(self.reduce_in_place(&md, &mut v))
    }

    /// `p^c L`.
    pub fn scaled(&self, c: u32) -> Result<Self> {
        let k = self.modulus_exp + c;
        let md = Modulus::new(self.p, k)?;
        let f = md.pow(c);
        let gens = self.columns.iter().enumerate().map(|(r, col)| {
            let mut g: Vec<u64> = col.iter().map(|x| md.mul(*x, f)).collect();
            if self.pivots[r] >= self.modulus_exp {
                g[r] = md.pow(self.modulus_exp + c);
            }
            g
        });
        Self::from_coords(self.level, self.p, k, self.dim(), gens.collect())
    }

    /// Generator columns as exact integer vectors (pivots `p^K` made explicit).
    pub fn integer_columns(&self) -> Vec<Vec<BigInt>> {
        self.columns
            .iter()
            .enumerate()
            .map(|(r, col)| {
                let mut c: Vec<BigInt> = col.iter().map(|x| BigInt::from(*x)).collect();
                if self.pivots[r] >= self.modulus_exp {
                    c[r] = BigInt::from(self.p).pow(self.modulus_exp);
                }
                c
            })
            .collect()
    }

    /// Generators as elements of `K_n`.
    pub fn generators(&self, tower: &Tower) -> Vec<TowerElement> {
        self.integer_columns().iter().map(|c| tower.from_lattice_coords(self.level, c, tower.prec())).collect()
    }

    /// True when `self` is contained in `other`.
    pub fn is_sublattice_of(&self, other: &LatticeBasis) -> bool {
        self.integer_columns().iter().all(|c| other.contains_coords(c))
    }

    /// Least `c >= 0` with `p^c self` contained in `other`, found by membership.
    pub fn scaling_into(&self, other: &LatticeBasis) -> u32 {
        self.integer_columns()
            .iter()
            .map(|col| {
                (0..=other.modulus_exp)
                    .find(|&c| {
                        let f = BigInt::from(self.p).pow(c);
                        let v: Vec<BigInt> = col.iter().map(|x| x * &f).collect();
                        other.contains_coords(&v)
                    })
                    .expect("p^K lies in every lattice")
            })
            .max()
            .unwrap_or(0)
    }

    /// Valuation-annotated matrix, one row per coordinate.
    pub fn annotated_matrix(&self) -> Vec<Vec<AnnotatedEntry>> {
        let md = self.modulus();
        let cols = self.integer_columns();
        (0..self.dim())
            .map(|row| {
                cols.iter()
                    .map(|c| {
                        let x = &c[row];
                        let val = if x.is_zero() { None } else { x.to_u64().map(|u| val_p_u64(u, md.p)) };
                        AnnotatedEntry { val, value: x.to_string() }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Valuations of the elementary divisors of a square matrix over `Q_p`, by
/// valuation-greedy elimination (lowest valuation first, then lowest row, then column).
pub fn elementary_divisor_valuations(mut m: Vec<Vec<PadicScalar>>) -> Result<Vec<i64>> {
    let mut out = Vec::with_capacity(m.len());
    let mut cols: Vec<usize> = (0..m.first().map_or(0, |r| r.len())).collect();
    while !m.is_empty() {
        let mut best: Option<(i64, usize, usize)> = None;
        for (i, row) in m.iter().enumerate() {
            for &j in &cols {
                if let Some(v) = row[j].valuation() {
                    if best.is_none_or(|(bv, _, _)| v < bv) {
                        best = Some((v, i, j));
                    }
                }
            }
        }
        let Some((v, i, j)) = best else {
            return Err(Error::InsufficientPrecision("remaining block vanished before reaching full rank".into()));
        };
        out.push(v);
        let pivot_row = m.swap_remove(i);
        let pinv = pivot_row[j].inv()?;
        for row in m.iter_mut() {
            if row[j].is_bottom() {
                continue;
            }
            let f = row[j].mul(&pinv);
            for &c in &cols {
                if !pivot_row[c].is_bottom() {
                    row[c] = row[c].sub(&f.mul(&pivot_row[c]));
                }
            }
        }
        cols.retain(|&c| c != j);
    }
    out.sort_unstable();
    Ok(out)
}

/// Commensurability constants of two lattices of the same rank, from the elementary
/// divisors of the transition matrix `X` with `B2 X = B1`.
pub fn commensurability(l1: &LatticeBasis, l2: &LatticeBasis) -> Result<Commensurability> {
    if l1.dim() != l2.dim() {
        return Err(Error::Domain(format!("rank mismatch: {} vs {}", l1.dim(), l2.dim())));
    }
    if l1.p != l2.p {
        return Err(Error::Domain("lattices over different primes".into()));
    }
    let p = l1.p;
    let d = l1.dim();
    let sum2: i64 = l2.index_exponent() as i64;
    let prec = 2 * sum2 + (l1.modulus_exp + l2.modulus_exp) as i64 + 64;
    let b1 = l1.integer_columns();
    let b2 = l2.integer_columns();
    let scal = |x: &BigInt| PadicScalar::new(p, x, prec);
    // forward substitution, one column of B1 at a time; column c of X
    let mut x: Vec<Vec<PadicScalar>> = vec![Vec::with_capacity(d); d];
    for col in &b1 {
        let mut sol: Vec<PadicScalar> = Vec::with_capacity(d);
        for j in 0..d {
            let mut acc = scal(&col[j]);
            for (i, si) in sol.iter().enumerate() {
                let e = &b2[i][j];
                if !e.is_zero() && !si.is_bottom() {
                    acc = acc.sub(&scal(e).mul(si));
                }
            }
            sol.push(acc.shift(-(l2.pivots[j] as i64)));
        }
        for (j, v) in sol.into_iter().enumerate() {
            x[j].push(v);
        }
    }
    let eds = elementary_divisor_valuations(x)?;
    let c_plus = (-eds.first().copied().unwrap_or(0)).max(0) as u32;
    let c_minus = eds.last().copied().unwrap_or(0).max(0) as u32;
    Ok(Commensurability { c_plus, c_minus, elementary_divisors: eds })
}
