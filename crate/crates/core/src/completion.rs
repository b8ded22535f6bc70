//! Finite model of the completion of `K_inf` for the lattice valuation `w'_2`.
//!
//! An element is split into its perpendicular parts `x = sum_n R_n^perp(x)` with
//! `R_n^perp(x) in K_n^perp`. The lattice `M = (+)_n p^n O_{K_n}^perp` defines
//! `w'_2(x) = floor(min_n (val R_n^perp(x) - n))`; a [`PerpSeries`] is a finite list of
//! such parts together with its decay margin.

use num_traits::Zero;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::padic::{val_serde, Val};
use crate::tower::{Tower, TowerElement};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PerpTerm {
    pub n: usize,
    pub x: TowerElement,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PerpSeries {
    /// Nonzero parts, in increasing `n`.
    pub terms: Vec<PerpTerm>,
    /// `min_n (val x_n - n)`; `None` for the zero series.
    #[serde(with = "val_serde::opt")]
    pub decay_margin: Option<Val>,
    /// Every term with `n >= 1` was checked to satisfy `R_(n-1)(x_n) = 0`.
    pub perpendicular: bool,
}

impl PerpSeries {
    /// Series from explicit parts; zero parts are dropped and perpendicularity is checked.
    pub fn from_terms(tower: &Tower, terms: Vec<PerpTerm>) -> Result<Self> {
        let mut terms: Vec<PerpTerm> = terms.into_iter().filter(|t| !t.x.is_zero()).collect();
        terms.sort_by_key(|t| t.n);
        if terms.windows(2).any(|w| w[0].n == w[1].n) {
            return Err(Error::Domain("perpendicular parts must have distinct levels".into()));
        }
        let mut perpendicular = true;
        let mut margin: Option<Val> = None;
        for t in &terms {
            if t.x.level() != t.n {
                return Err(Error::Domain(format!("part at n = {} lives at level {}", t.n, t.x.level())));
            }
            if t.n >= 1 && !tower.normalized_trace(&t.x, t.n - 1)?.is_zero() {
                perpendicular = false;
            }
            let m = tower.valuation(&t.x)? - t.n as i64;
            margin = Some(margin.map_or(m, |v| v.min(m)));
        }
        Ok(PerpSeries { terms, decay_margin: margin, perpendicular })
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Highest level present (0 for the zero series).
    pub fn level(&self) -> usize {
        self.terms.iter().map(|t| t.n).max().unwrap_or(0)
    }

    pub fn term(&self, n: usize) -> Option<&TowerElement> {
        self.terms.iter().find(|t| t.n == n).map(|t| &t.x)
    }
}

/// `x = sum_{n <= m} R_n^perp(x)`.
pub fn perp_series_decompose(tower: &Tower, x: &TowerElement) -> Result<PerpSeries> {
    let terms =
        (0..=x.level()).map(|n| Ok(PerpTerm { n, x: tower.perp_project(x, n)? })).collect::<Result<Vec<_>>>()?;
    PerpSeries::from_terms(tower, terms)
}

/// Sum of the parts, at the highest level present.
pub fn series_reconstruct(tower: &Tower, s: &PerpSeries) -> TowerElement {
    let top = s.level();
    let mut acc = tower.zero(top);
    for t in &s.terms {
        acc = tower.add(&acc, &tower.embed(&t.x, top));
    }
    acc
}

/// `w'_2(x) = floor(min_n (val R_n^perp(x) - n))`.
pub fn w2_valuation(tower: &Tower, x: &TowerElement) -> Result<i64> {
    if x.is_zero() {
        return Err(Error::ValuationOfZero);
    }
    let s = perp_series_decompose(tower, x)?;
    s.decay_margin.map(|m| m.floor().to_integer()).ok_or(Error::ValuationOfZero)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Component {
    pub n: usize,
    /// `y_n = p^-n R_n^perp(y)`.
    pub y: TowerElement,
    #[serde(with = "val_serde::opt")]
    pub val: Option<Val>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RCertificate {
    pub slack: i64,
    pub components: Vec<Component>,
    /// All `y_n` integral.
    pub strict: bool,
    /// All `y_n` in `p^-slack O_{K_n}`.
    pub accepted: bool,
    /// First level where the slack test fails.
    pub failing_level: Option<usize>,
    /// `min_n val(y_n)`; `None` when every component vanishes.
    #[serde(with = "val_serde::opt")]
    pub decay: Option<Val>,
}

/// Write `y = sum p^n y_n` with `y_n in K_n^perp` and test `y_n in p^-slack O_{K_n}`.
pub fn membership_r(tower: &Tower, y: &TowerElement, slack: i64) -> Result<RCertificate> {
    let mut components = Vec::new();
    let mut strict = true;
    let mut failing_level = None;
    let mut decay: Option<Val> = None;
    for n in 0..=y.level() {
        let yn = tower.shift(&tower.perp_project(y, n)?, -(n as i64));
        let val = if yn.is_zero() { None } else { Some(tower.valuation(&yn)?) };
        if let Some(v) = val {
            strict &= v >= Val::zero();
            if v < Val::from_integer(-slack) && failing_level.is_none() {
                failing_level = Some(n);
            }
            decay = Some(decay.map_or(v, |d| d.min(v)));
        }
        components.push(Component { n, y: yn, val });
    }
    Ok(RCertificate { slack, components, strict, accepted: failing_level.is_none(), failing_level, decay })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlatnessMargin {
    pub k: u32,
    /// `val((g_k - 1) y) - k`; `None` when `g_k` fixes `y`.
    #[serde(with = "val_serde::opt")]
    pub margin: Option<Val>,
}

/// Margins `val((g_0^(p^k) - 1) y) - k` for `k = 0..=k_max`.
pub fn flatness_test(tower: &Tower, y: &TowerElement, k_max: u32) -> Result<Vec<FlatnessMargin>> {
    let m = y.level();
    (0..=k_max)
        .map(|k| {
            let g = tower.generator_chain(m, k);
            let diff = tower.sub(&tower.galois_apply(&g, y), y);
            let margin = if diff.is_zero() { None } else { Some(tower.valuation(&diff)? - k as i64) };
            Ok(FlatnessMargin { k, margin })
        })
        .collect()
}

/// Lower bound on each margin forced by membership: `(g_k - 1)` kills the parts at
/// levels `<= k`, and a part `p^n y_n` with `n > k` contributes valuation `>= n + val y_n`.
pub fn forced_margins(cert: &RCertificate, k_max: u32) -> Vec<Option<Val>> {
    (0..=k_max)
        .map(|k| {
            cert.components
                .iter()
                .filter(|c| c.n as u32 > k)
                .filter_map(|c| c.val.map(|v| v + (c.n as i64 - k as i64)))
                .min()
        })
        .collect()
}

/// Bound on `val(y_(k+1))` forced by the margin at `k`, given the trace slack `c2`
/// and the inverse bound `c3` for `1 - g_k` on perpendicular parts.
pub fn converse_bound(margin: Val, c2: Val, c3: Val) -> Val {
    margin - 1 - c2 - c3
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Inversion {
    pub series: PerpSeries,
    pub input_accepted: bool,
    pub output_accepted: bool,
}

/// Invert the element represented by a series and decompose the inverse.
pub fn series_invert(tower: &Tower, s: &PerpSeries, slack: i64) -> Result<Inversion> {
    if s.is_zero() {
        return Err(Error::DivisionByZero);
    }
    let y = series_reconstruct(tower, s);
    let inv = tower.inv(&y)?;
    Ok(Inversion {
        series: perp_series_decompose(tower, &inv)?,
        input_accepted: membership_r(tower, &y, slack)?.accepted,
        output_accepted: membership_r(tower, &inv, slack)?.accepted,
    })
}
