use cyclotower::completion::{self, PerpSeries, PerpTerm};
use cyclotower::sampling;
use cyclotower::{Tower, TowerParams, Val};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t3() -> Tower {
    Tower::new(TowerParams::new(3, 3, 60)).unwrap()
}

#[test]
fn series_of_zeta9() {
    let t = t3();
    let z = t.zeta(1);
    let s = completion::perp_series_decompose(&t, &z).unwrap();
    assert!(s.perpendicular);
    assert_eq!(s.terms.len(), 1);
    assert_eq!(s.terms[0].n, 1);
    assert_eq!(s.decay_margin, Some(Val::from_integer(-1)));
    assert_eq!(completion::w2_valuation(&t, &z).unwrap(), -1);
}

#[test]
fn w2_examples() {
    let t = t3();
    assert_eq!(completion::w2_valuation(&t, &t.one(2)).unwrap(), 0);
    assert_eq!(completion::w2_valuation(&t, &t.from_int(0, 9)).unwrap(), 2);
    assert_eq!(completion::w2_valuation(&t, &t.uniformizer(0)).unwrap(), 0);
    // rho_1 = -1 + zeta_9 splits into a unit at level 0 and a unit at level 1.
    assert_eq!(completion::w2_valuation(&t, &t.uniformizer(1)).unwrap(), -1);
    assert_eq!(completion::w2_valuation(&t, &t.mul_int(3, &t.zeta(1))).unwrap(), 0);
    assert_eq!(completion::w2_valuation(&t, &t.mul_int(9, &t.zeta(2))).unwrap(), 0);
    assert!(completion::w2_valuation(&t, &t.zero(1)).is_err());
}

#[test]
fn w2_properties_on_samples() {
    let t = t3();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let x = sampling::random_nonzero(&t, 3, 4, &mut rng);
        let y = sampling::random_nonzero(&t, 3, 4, &mut rng);
        let (wx, wy) = (completion::w2_valuation(&t, &x).unwrap(), completion::w2_valuation(&t, &y).unwrap());
        let sum = t.add(&x, &y);
        if !sum.is_zero() {
            assert!(completion::w2_valuation(&t, &sum).unwrap() >= wx.min(wy));
        }
        assert_eq!(completion::w2_valuation(&t, &t.mul_int(3, &x)).unwrap(), wx + 1);
        assert!(completion::w2_valuation(&t, &t.mul(&x, &y)).unwrap() >= wx + wy - 3);
    }
}

#[test]
fn series_roundtrip_and_perpendicularity() {
    let t = t3();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let x = sampling::random_integral(&t, 3, &mut rng);
        let s = completion::perp_series_decompose(&t, &x).unwrap();
        assert!(s.perpendicular);
        assert!(t.agree(&completion::series_reconstruct(&t, &s), &x));
        for term in &s.terms {
            if term.n > 0 {
                assert!(t.normalized_trace(&term.x, term.n - 1).unwrap().is_zero());
            }
        }
    }
}

#[test]
fn from_terms_checks_levels() {
    let t = t3();
    let bad = vec![PerpTerm { n: 2, x: t.zeta(1) }];
    assert!(PerpSeries::from_terms(&t, bad).is_err());
    let not_perp = vec![PerpTerm { n: 1, x: t.one(1) }];
    assert!(!PerpSeries::from_terms(&t, not_perp).unwrap().perpendicular);
    let empty = PerpSeries::from_terms(&t, vec![PerpTerm { n: 1, x: t.zero(1) }]).unwrap();
    assert!(empty.is_zero());
    assert_eq!(empty.decay_margin, None);
}

#[test]
fn membership_examples() {
    let t = t3();
    let z = t.zeta(1);
    let strict = completion::membership_r(&t, &z, 0).unwrap();
    assert!(!strict.strict);
    assert!(!strict.accepted);
    assert_eq!(strict.failing_level, Some(1));
    let slack = completion::membership_r(&t, &z, 1).unwrap();
    assert!(slack.accepted);
    assert_eq!(slack.decay, Some(Val::from_integer(-1)));
    let three_z = t.mul_int(3, &z);
    let c = completion::membership_r(&t, &three_z, 0).unwrap();
    assert!(c.strict && c.accepted);
}

#[test]
fn flatness_of_zeta9() {
    let t = t3();
    let z = t.zeta(1);
    let margins = completion::flatness_test(&t, &z, 2).unwrap();
    // (g_0 - 1) zeta_9 = zeta_9 (zeta_9^3 - 1) has valuation 1/2.
    assert_eq!(margins[0].margin, Some(Val::new(1, 2)));
    assert_eq!(margins[1].margin, None);
    assert_eq!(margins[2].margin, None);
    let cert = completion::membership_r(&t, &t.mul_int(3, &z), 0).unwrap();
    let forced = completion::forced_margins(&cert, 1);
    assert_eq!(forced[0], Some(Val::from_integer(1)));
    assert_eq!(forced[1], None);
}

#[test]
fn inversion_roundtrip() {
    let t = t3();
    let x = t.add(&t.one(2), &t.mul_int(3, &t.zeta(2)));
    let s = completion::perp_series_decompose(&t, &x).unwrap();
    let inv = completion::series_invert(&t, &s, 1).unwrap();
    let y = completion::series_reconstruct(&t, &inv.series);
    assert!(t.agree(&t.mul(&x, &y), &t.one(2)));
    assert!(inv.input_accepted);
    assert!(inv.output_accepted);
    assert!(completion::series_invert(&t, &PerpSeries::from_terms(&t, vec![]).unwrap(), 1).is_err());
}

#[test]
fn converse_bound_arithmetic() {
    let b = completion::converse_bound(Val::new(3, 2), Val::from_integer(1), Val::new(1, 3));
    assert_eq!(b, Val::new(-5, 6));
}
