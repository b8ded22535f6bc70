//! Seeded random elements for property runs and constant estimation.

use num_bigint::{BigInt, RandBigInt};
use num_traits::Zero;
use rand::Rng;

use crate::lattice::LatticeBasis;
use crate::tower::{Tower, TowerElement};

/// Uniformly random element of `O_{K_n} / p^prec`.
pub fn random_integral<R: Rng>(tower: &Tower, level: usize, rng: &mut R) -> TowerElement {
    let m = tower.pp(tower.prec()).into_owned();
    let c: Vec<BigInt> = (0..tower.degree(level)).map(|_| BigInt::from(rng.gen_biguint_below(&m))).collect();
    tower.from_ints(level, &c, 0, tower.prec())
}

/// Random element with small signed coordinates.
pub fn random_small<R: Rng>(tower: &Tower, level: usize, bound: i64, rng: &mut R) -> TowerElement {
    let c: Vec<BigInt> = (0..tower.degree(level)).map(|_| BigInt::from(rng.gen_range(-bound..=bound))).collect();
    tower.from_ints(level, &c, 0, tower.prec())
}

/// Random unit of `O_{K_n}`: the residue of `x` is the coordinate sum modulo `p`.
pub fn random_unit<R: Rng>(tower: &Tower, level: usize, rng: &mut R) -> TowerElement {
    let p = tower.p();
    loop {
        let x = random_integral(tower, level, rng);
        if x.scale() != 0 {
            continue;
        }
        let residue: u64 = x.raw_coeffs().iter().map(|c| (c % p).iter_u64_digits().next().unwrap_or(0)).sum();
        if !residue.is_multiple_of(p as u64) {
            return x;
        }
    }
}

/// Random nonzero element with a random valuation shift by a power of the uniformizer.
pub fn random_nonzero<R: Rng>(tower: &Tower, level: usize, max_shift: u64, rng: &mut R) -> TowerElement {
    loop {
        let u = random_unit(tower, level, rng);
        let x = tower.mul(&u, &tower.pow(&tower.uniformizer(level), rng.gen_range(0..=max_shift)));
        if !x.is_zero() {
            return x;
        }
    }
}

/// Random `Z`-combination of the lattice generators with coefficients in `[-bound, bound]`.
pub fn random_lattice_element<R: Rng>(tower: &Tower, lattice: &LatticeBasis, bound: i64, rng: &mut R) -> TowerElement {
    let cols = lattice.integer_columns();
    let mut acc = vec![BigInt::zero(); lattice.dim()];
    for col in &cols {
        let f = BigInt::from(rng.gen_range(-bound..=bound));
        if f.is_zero() {
            continue;
        }
        for (a, c) in acc.iter_mut().zip(col) {
            *a += &f * c;
        }
    }
    tower.from_lattice_coords(lattice.level, &acc, tower.prec())
}
