use cyclotower::differentials::{self, Base};
use cyclotower::lattice::LatticeBasis;
use cyclotower::sampling;
use cyclotower::{Tower, TowerParams, Val};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tower(p: u32, levels: usize) -> Tower {
    Tower::new(TowerParams::new(p, levels, 60)).unwrap()
}

#[test]
fn differents_match_discriminant_formula() {
    for (p, levels) in [(3, 3), (2, 3), (5, 1)] {
        let t = tower(p, levels);
        // val of the different of Q_p(zeta_{p^r}) is r - 1/(p-1); over K_0 subtract the base part.
        let total = |n: usize| Val::from_integer((n as u32 + t.s()) as i64) - Val::new(1, p as i64 - 1);
        for n in 0..=levels {
            let qp = differentials::different(&t, n, Base::Qp).unwrap();
            let k0 = differentials::different(&t, n, Base::K0).unwrap();
            assert_eq!(qp.val_different, total(n), "p={p} n={n}");
            assert_eq!(k0.val_different, total(n) - total(0), "p={p} n={n}");
            assert_eq!(t.valuation(&k0.generator).unwrap(), k0.val_different);
        }
    }
}

#[test]
fn d_examples_at_level_one() {
    let t = tower(3, 2);
    let drho = differentials::d_rho(&t, 1, Base::K0).unwrap();
    assert!(!drho.is_zero(&t).unwrap());
    assert_eq!(drho.effective_valuation(&t).unwrap(), Val::from_integer(0));
    let rho0 = t.embed(&t.uniformizer(0), 1);
    assert!(differentials::d_map(&t, &rho0, Base::K0).unwrap().is_zero(&t).unwrap());
    // d(3 rho_1) = 3 d rho_1 has valuation exactly val(different) = 1: the tie is zero.
    let three_rho = t.mul_int(3, &t.uniformizer(1));
    assert!(differentials::d_map(&t, &three_rho, Base::K0).unwrap().is_zero(&t).unwrap());
    // d(rho_1^2) = 2 rho_1 d rho_1 is nonzero, of valuation 1/6.
    let w = differentials::d_map(&t, &t.square(&t.uniformizer(1)), Base::K0).unwrap();
    assert_eq!(w.effective_valuation(&t).unwrap(), Val::new(1, 6));
    let non_integral = t.shift(&t.one(1), -1);
    assert!(differentials::d_map(&t, &non_integral, Base::K0).is_err());
}

#[test]
fn leibniz_rule() {
    let t = tower(3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..1000 {
        let level = 1 + i % 2;
        let base = if i % 3 == 0 { Base::Qp } else { Base::K0 };
        let x = sampling::random_integral(&t, level, &mut rng);
        let y = sampling::random_integral(&t, level, &mut rng);
        let dxy = differentials::d_map(&t, &t.mul(&x, &y), base).unwrap();
        let dx = differentials::d_map(&t, &x, base).unwrap();
        let dy = differentials::d_map(&t, &y, base).unwrap();
        let rhs = dx.scale(&t, &y).add(&t, &dy.scale(&t, &x));
        assert!(dxy.same_class(&t, &rhs).unwrap());
    }
}

#[test]
fn d_is_additive_and_kills_base() {
    let t = tower(3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let x = sampling::random_integral(&t, 2, &mut rng);
        let a = t.embed(&sampling::random_integral(&t, 0, &mut rng), 2);
        let lhs = differentials::d_map(&t, &t.add(&x, &a), Base::K0).unwrap();
        let rhs = differentials::d_map(&t, &x, Base::K0).unwrap();
        assert!(lhs.same_class(&t, &rhs).unwrap());
    }
}

fn vp(mut i: usize, p: usize) -> i64 {
    let mut k = 0;
    while i.is_multiple_of(p) {
        i /= p;
        k += 1;
    }
    k
}

#[test]
fn kernel_exponents_match_brute_force() {
    for (p, levels) in [(3, 3), (2, 3)] {
        let t = tower(p, levels);
        let v0 = t.uniformizer_valuation(0);
        for n in 1..=levels {
            let vn = t.uniformizer_valuation(n);
            let vd = differentials::different(&t, n, Base::K0).unwrap().val_different;
            let exps = differentials::kernel_exponents(&t, n);
            for (i, &c) in exps.iter().enumerate().skip(1) {
                // least c with val(i rho_0^c rho_n^(i-1)) >= val(different)
                let vp_i = Val::from_integer(vp(i, p as usize));
                let term = |c: i64| v0 * c + vn * (i as i64 - 1) + vp_i;
                let mut want = 0;
                while term(want) < vd {
                    want += 1;
                }
                assert_eq!(c, want, "p={p} n={n} i={i}");
            }
        }
    }
}

#[test]
fn kernel_lattice_elements_are_closed() {
    let t = tower(3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in 1..=3 {
        let ker = differentials::kernel_lattice(&t, n, Base::K0).unwrap();
        for g in ker.generators(&t) {
            assert!(differentials::d_map(&t, &g, Base::K0).unwrap().is_zero(&t).unwrap());
        }
        for _ in 0..20 {
            let x = sampling::random_lattice_element(&t, &ker, 50, &mut rng);
            assert!(differentials::d_map(&t, &x, Base::K0).unwrap().is_zero(&t).unwrap());
        }
        // dx = 0 for an integral x forces x into the lattice.
        for _ in 0..50 {
            let x = sampling::random_integral(&t, n, &mut rng);
            let closed = differentials::d_map(&t, &x, Base::K0).unwrap().is_zero(&t).unwrap();
            assert_eq!(closed, ker.contains(&t, &x).unwrap());
        }
    }
}

#[test]
fn kernel_index_matches_image() {
    let t = tower(3, 3);
    for n in 1..=3 {
        let ker = differentials::kernel_lattice(&t, n, Base::K0).unwrap();
        let img = differentials::differential_image_lattice(&t, n).unwrap();
        let len_omega = n as u64 * t.degree(n) as u64;
        assert_eq!(ker.index_exponent(), len_omega - img.index_exponent(), "n={n}");
    }
}

#[test]
fn kernel_versus_sum_of_scaled_rings() {
    let t = tower(3, 3);
    for n in 1..=3 {
        let ker = differentials::kernel_lattice(&t, n, Base::K0).unwrap();
        let tb = differentials::theorem_b_lattice(&t, n).unwrap();
        assert!(tb.is_sublattice_of(&ker));
        let c = differentials::commensurability_check(&ker, &tb).unwrap();
        if n == 1 {
            assert_eq!((c.c_plus, c.c_minus), (0, 0));
        }
    }
    let full = LatticeBasis::full(&t, 2).unwrap();
    let ker = differentials::kernel_lattice(&t, 2, Base::K0).unwrap();
    assert!(ker.is_sublattice_of(&full));
    assert!(!full.is_sublattice_of(&ker));
}

#[test]
fn rho_congruence_examples() {
    let t = tower(3, 2);
    assert_eq!(differentials::rho_congruence(&t, 0, 1).unwrap(), Some(Val::new(7, 6)));
    for n in 0..2 {
        let base = differentials::rho_congruence(&t, n, 1).unwrap().unwrap();
        assert_eq!(base, Val::from_integer(1) + t.uniformizer_valuation(n + 1));
    }
}

#[test]
fn base_change_examples() {
    let t = tower(3, 2);
    assert_eq!(differentials::base_change_exponent(&t), 1);
    let b = differentials::base_change_compare(&t, &t.zeta(2)).unwrap();
    assert_eq!(b.r, 1);
    assert!(b.quotient_compatible);
    assert!(b.kernel_killed);
}

#[test]
fn omega_transition_is_injective_on_samples() {
    let t = tower(3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let samples: Vec<_> = (0..30)
        .map(|_| differentials::d_map(&t, &sampling::random_integral(&t, 1, &mut rng), Base::K0).unwrap())
        .collect();
    let report = differentials::omega_inclusion_check(&t, 1, 2, &samples).unwrap();
    assert!(report.passed(), "{:?}", report.failures);
}
