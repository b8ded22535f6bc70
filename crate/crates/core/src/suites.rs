//! Verification suites. Each suite runs one family of checks against a tower and its
//! [`ConstantsReport`], recording every assertion with witness data. Suites are pure
//! functions of the tower, the constants, the seed and the sample budget.

use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::completion::{self, PerpSeries, PerpTerm};
use crate::constants::ConstantsReport;
use crate::differentials::{self as diff, Base};
use crate::error::{Error, Result};
use crate::lattice::LatticeBasis;
use crate::padic::{val_p_u64, Val};
use crate::sampling;
use crate::tower::{Tower, TowerElement};

pub const SUITES: [&str; 12] = [
    "tatediff",
    "fonemb",
    "rnbdd",
    "gaminv",
    "rhoval",
    "theorem-b",
    "fouvar",
    "nopdiv",
    "base-change",
    "rnk2",
    "diffvec",
    "theorem-a-shadow",
];

/// Sample counts per suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub trace_samples: usize,
    pub perp_samples: usize,
    pub kernel_samples: usize,
    pub divisibility_samples: usize,
    pub series_samples: usize,
    pub inversion_samples: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            trace_samples: 1000,
            perp_samples: 200,
            kernel_samples: 50,
            divisibility_samples: 20,
            series_samples: 100,
            inversion_samples: 20,
        }
    }
}

impl Budget {
    /// Small budget for smoke runs.
    pub fn quick() -> Self {
        Budget {
            trace_samples: 40,
            perp_samples: 20,
            kernel_samples: 8,
            divisibility_samples: 4,
            series_samples: 12,
            inversion_samples: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assertion {
    pub id: String,
    /// Short neutral name of the statement being checked.
    pub anchor: String,
    pub passed: bool,
    pub detail: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub budget: Budget,
    pub passed: bool,
    pub assertions: Vec<Assertion>,
}

impl SuiteReport {
    pub fn failures(&self) -> impl Iterator<Item = &Assertion> {
        self.assertions.iter().filter(|a| !a.passed)
    }

    pub fn assertion(&self, id: &str) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.id == id)
    }
}

pub struct Context<'a> {
    pub tower: &'a Tower,
    pub constants: &'a ConstantsReport,
    pub seed: u64,
    pub budget: Budget,
}

struct Recorder {
    anchor: &'static str,
    out: Vec<Assertion>,
}

impl Recorder {
    fn new(anchor: &'static str) -> Self {
        Recorder { anchor, out: Vec::new() }
    }

    fn check(&mut self, id: impl Into<String>, passed: bool, detail: Value) {
        self.out.push(Assertion { id: id.into(), anchor: self.anchor.into(), passed, detail });
    }

    fn anchor(&mut self, anchor: &'static str) -> &mut Self {
        self.anchor = anchor;
        self
    }
}

fn v(x: Val) -> Value {
    Value::String(x.to_string())
}

fn ov(x: Option<Val>) -> Value {
    x.map_or(Value::Null, v)
}

fn suite_rng(seed: u64, suite: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = SUITES.iter().position(|s| *s == suite).unwrap_or(SUITES.len()) as u64;
    rng.set_stream(0x5eed_0000 + idx);
    rng
}

/// One derived seed per sample so that parallel evaluation stays deterministic.
fn sample_seeds(rng: &mut ChaCha8Rng, count: usize) -> Vec<u64> {
    (0..count).map(|_| rng.gen()).collect()
}

fn top(ctx: &Context, cap: usize) -> usize {
    ctx.tower.max_level().min(cap)
}

pub fn run_suite(name: &str, ctx: &Context) -> Result<SuiteReport> {
    let assertions = match name {
        "tatediff" => tatediff(ctx)?,
        "fonemb" => fonemb(ctx)?,
        "rnbdd" => rnbdd(ctx)?,
        "gaminv" => gaminv(ctx)?,
        "rhoval" => rhoval(ctx)?,
        "theorem-b" => theorem_b(ctx)?,
        "fouvar" => fouvar(ctx)?,
        "nopdiv" => nopdiv(ctx)?,
        "base-change" => base_change(ctx)?,
        "rnk2" => rnk2(ctx)?,
        "diffvec" => diffvec(ctx)?,
        "theorem-a-shadow" => theorem_a_shadow(ctx)?,
        other => return Err(Error::UnknownSuite(other.to_string())),
    };
    Ok(SuiteReport {
        suite: name.to_string(),
        seed: ctx.seed,
        budget: ctx.budget,
        passed: assertions.iter().all(|a| a.passed),
        assertions,
    })
}

pub fn run_all(ctx: &Context) -> Result<Vec<SuiteReport>> {
    SUITES.iter().map(|s| run_suite(s, ctx)).collect()
}

fn tatediff(ctx: &Context) -> Result<Vec<Assertion>> {
    let t = ctx.tower;
    let c = ctx.constants;
    let mut r = Recorder::new("different growth over K_0");
    let base = diff::conductor_discriminant_valuation(t, 0);
    let qp0 = diff::different(t, 0, Base::Qp)?.val_different;
    r.anchor("different of K_0 over Q_p").check(
        "different-qp-n0",
        qp0 == base,
        json!({"computed": v(qp0), "oracle": v(base)}),
    );
    let mut prev: Option<Val> = None;
    for n in 0..=t.max_level() {
        let d = diff::different(t, n, Base::K0)?;
        let oracle = diff::conductor_discriminant_valuation(t, n) - base;
        let gen_val = t.valuation(&d.generator)?;
        r.anchor("different growth over K_0").check(
            format!("different-k0-n{n}"),
            d.val_different == oracle && oracle == Val::from_integer(n as i64) && gen_val == d.val_different,
            json!({"n": n, "computed": v(d.val_different), "oracle": v(oracle), "generator_val": v(gen_val)}),
        );
        let qp = diff::different(t, n, Base::Qp)?.val_different;
        r.anchor("transitivity of differents").check(
            format!("different-tower-n{n}"),
            qp == d.val_different + qp0,
            json!({"n": n, "over_qp": v(qp), "over_k0": v(d.val_different), "k0_over_qp": v(qp0)}),
        );
        let p = t.p() as i64;
        let drift = (d.val_different - n as i64 - c.b).abs();
        let bound = c.a / p.pow(n as u32);
        r.anchor("different drift bound").check(
            format!("drift-n{n}"),
            drift <= bound,
            json!({"n": n, "drift": v(drift), "bound": v(bound)}),
        );
        if let Some(pv) = prev {
            r.anchor("unbounded differents").check(
                format!("different-increasing-n{n}"),
                d.val_different > pv,
                json!({"n": n, "previous": v(pv), "current": v(d.val_different)}),
            );
        }
        prev = Some(d.val_different);
    }
    r.anchor("cyclotomic drift constants").check(
        "drift-constants-zero",
        c.a.is_zero() && c.b.is_zero(),
        json!({"a": v(c.a), "b": v(c.b)}),
    );
    Ok(r.out)
}

fn fonemb(ctx: &Context) -> Result<Vec<Assertion>> {
    let t = ctx.tower;
    let c = ctx.constants;
    let p = t.p() as i64;
    let mut r = Recorder::new("norm congruence");
    for cell in &c.norm_cells {
        r.check(
            format!("norm-cell-n{}-k{}", cell.n, cell.k),
            cell.min > Val::zero(),
            json!({"n": cell.n, "k": cell.k, "min": v(cell.min), "witness": cell.witness, "samples": cell.samples}),
        );
    }
    // (rho_0 -/+ rho_1^p) is the sum of binom(p,i) rho_1^i for 0 < i < p, led by the i = 1 term.
    let rho1 = t.uniformizer(1);
    let norm = t.norm_down(&rho1, 0)?;
    let direct = t.valuation(&t.sub(&t.embed(&norm, 1), &t.pow(&rho1, p as u64)))? - t.uniformizer_valuation(1) * p;
    let oracle = Val::one() - t.uniformizer_valuation(1) * (p - 1);
    r.check(
        "witness-rho1",
        direct == oracle && c.c_norm <= direct,
        json!({"x": "rho_1", "n": 0, "k": 1, "computed": v(direct), "oracle": v(oracle), "c_norm": v(c.c_norm)}),
    );
    let mut product = t.one(1);
    for a in t.relative_group(0, 1) {
        product = t.mul(&product, &t.apply_unit(a, &rho1));
    }
    r.anchor("norm as product of conjugates").check(
        "norm-conjugate-product",
        t.agree(&t.embed(&norm, 1), &product),
        json!({"x": "rho_1", "norm": t.to_literal(&norm)}),
    );
    let target = Val::new(1, p - 1);
    let scaled = c.c_norm * p.pow(c.m_c);
    let minimal = c.m_c == 0 || c.c_norm * p.pow(c.m_c - 1) < target;
    r.anchor("definition of m_c").check(
        "m-c-minimal",
        scaled >= target && minimal,
        json!({"c_norm": v(c.c_norm), "m_c": c.m_c, "p^m_c c_norm": v(scaled)}),
    );
    Ok(r.out)
}

fn rnbdd(ctx: &Context) -> Result<Vec<Assertion>> {
    let t = ctx.tower;
    let c = ctx.constants;
    let l = t.max_level();
    let mut r = Recorder::new("normalized trace bound");
    for cell in &c.trace_cells {
        r.check(
            format!("trace-cell-n{}-k{}", cell.n, cell.k),
            Val::from_integer(c.c2_star) >= cell.c2,
            json!({"n": cell.n, "k": cell.k, "c2": v(cell.c2), "witness_power": cell.witness, "c2_star": c.c2_star}),
        );
    }
    let mut rng = suite_rng(ctx.seed, "rnbdd");
    let seeds = sample_seeds(&mut rng, ctx.budget.trace_samples);
    let max_shift = t.degree(l) as u64;
    // per sample: (trace violations, perp violations, identity failures)
    let tallies = seeds
        .par_iter()
        .map(|&s| -> Result<(usize, usize, usize)> {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let x = sampling::random_nonzero(t, l, max_shift, &mut rng);
            let vx = t.valuation(&x)?;
            let traces = (0..=l).map(|n| t.normalized_trace(&x, n)).collect::<Result<Vec<_>>>()?;
            let mut bad_trace = 0;
            let mut bad_perp = 0;
            for n in 0..l {
                let c2 = c.trace_cell(n, l - n).map(|cell| cell.c2).unwrap_or_default();
                if !traces[n].is_zero() && t.valuation(&traces[n])? < vx - c2 {
                    bad_trace += 1;
                }
            }
            for n in 0..=l {
                let perp = if n == 0 { traces[0].clone() } else { t.sub(&traces[n], &t.embed(&traces[n - 1], n)) };
                if !perp.is_zero() && t.valuation(&perp)? < Val::from_integer(-c.c2_star) {
                    bad_perp += 1;
                }
            }
            let y = sampling::random_integral(t, l / 2, &mut rng);
            let id_fail = usize::from(!t.agree(&t.normalized_trace(&y, y.level())?, &y));
            Ok((bad_trace, bad_perp, id_fail))
        })
        .collect::<Result<Vec<_>>>()?;
    let sum = |f: fn(&(usize, usize, usize)) -> usize| tallies.iter().map(f).sum::<usize>();
    r.check(
        "trace-bound-samples",
        sum(|x| x.0) == 0,
        json!({"samples": tallies.len(), "level": l, "violations": sum(|x| x.0)}),
    );
    r.anchor("perpendicular parts of integers").check(
        "perp-integrality-samples",
        sum(|x| x.1) == 0,
        json!({"samples": tallies.len(), "level": l, "c2_star": c.c2_star, "violations": sum(|x| x.1)}),
    );
    r.anchor("R_n is the identity on K_n").check(
        "trivial-cell",
        sum(|x| x.2) == 0,
        json!({"samples": tallies.len(), "failures": sum(|x| x.2)}),
    );
    Ok(r.out)
}

/// `val((1 - g_n) x) - val(x)`, or `None` when `g_n` fixes `x`.
fn gamma_gain(t: &Tower, n: usize, x: &TowerElement) -> Result<Option<Val>> {
    let g = t.generator_chain(x.level(), n as u32);
    let y = t.sub(x, &t.galois_apply(&g, x));
    if y.is_zero() {
        return Ok(None);
    }
    Ok(Some(t.valuation(&y)? - t.valuation(x)?))
}

/// Effective inverse bound for `1 - g_n` on `K_m^perp`: elementary divisors bound the
/// coordinate valuations, and the floor of a valuation can hide up to `1 - 1/phi_m`.
pub fn gamma_inverse_slack(t: &Tower, c3: i64, m: usize) -> Val {
    Val::from_integer(c3 + 1) - Val::new(1, t.degree(m) as i64)
}

fn gaminv(ctx: &Context) -> Result<Vec<Assertion>> {
    let t = ctx.tower;
    let c = ctx.constants;
    let p = t.p() as usize;
    let c3 = Val::from_integer(c.c3_star);
    let mut r = Recorder::new("inverse of 1 - g_n on perpendicular parts");
    for cell in &c.gamma_cells {
        let m = cell.n + cell.k;
        let mut worst: Option<Val> = None;
        let mut violations = 0;
        for j in (0..t.degree(m)).filter(|j| j % p != 0) {
            let x = t.zeta_pow(m, j as i64);
            match gamma_gain(t, cell.n, &x)? {
                Some(gain) => {
                    if gain > c3 {
                        violations += 1;
                    }
                    worst = Some(worst.map_or(gain, |w| w.max(gain)));
                }
                None => violations += 1,
            }
        }
        r.check(
            format!("gamma-basis-n{}-k{}", cell.n, cell.k),
            violations == 0,
            json!({"n": cell.n, "k": cell.k, "dim": cell.dim, "c3": cell.c3, "c3_star": c.c3_star,
                   "max_gain": ov(worst), "violations": violations}),
        );
    }
    let mut rng = suite_rng(ctx.seed, "gaminv");
    let seeds = sample_seeds(&mut rng, ctx.budget.perp_samples);
    let cells: Vec<(usize, usize)> = c.gamma_cells.iter().map(|g| (g.n, g.k)).collect();
    let results = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &s)| -> Result<Option<(usize, usize, Val)>> {
            let (n, k) = cells[i % cells.len()];
            let m = n + k;
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let x = t.perp_project(&sampling::random_integral(t, m, &mut rng), m)?;
            if x.is_zero() {
                return Ok(None);
            }
            Ok(gamma_gain(t, n, &x)?.map(|gain| (n, k, gain)))
        })
        .collect::<Result<Vec<_>>>()?;
    let gains: Vec<(usize, usize, Val)> = results.into_iter().flatten().collect();
    let strict: Vec<&(usize, usize, Val)> = gains.iter().filter(|(_, _, gain)| *gain > c3).collect();
    let effective: Vec<&(usize, usize, Val)> =
        gains.iter().filter(|(n, k, gain)| *gain > gamma_inverse_slack(t, c.c3_star, n + k)).collect();
    let worst = gains.iter().map(|x| x.2).max();
    r.anchor("inverse bound on sampled perpendicular parts").check(
        "gamma-samples",
        strict.is_empty() && gains.len() == ctx.budget.perp_samples,
        json!({"samples": gains.len(), "c3_star": c.c3_star, "max_gain": ov(worst),
               "violations": strict.iter().map(|(n, k, g)| json!([n, k, v(*g)])).take(5).collect::<Vec<_>>(),
               "violation_count": strict.len(), "effective_bound_violations": effective.len()}),
    );
    Ok(r.out)
}

fn rhoval(ctx: &Context) -> Result<Vec<Assertion>> {
    let t = ctx.tower;
    let c = ctx.constants;
    let p = t.p() as u64;
    let mut r = Recorder::new("congruence of consecutive uniformizers");
    let kmax = p.pow(3);
    for n in 0..t.max_level() {
        let mut violations = Vec::new();
        let mut min_slack: Option<Val> = None;
        for k in 1..=kmax {
            let bound = Val::from_integer(val_p_u64(k, p) as i64 - c.m_c as i64);
            if let Some(val) = diff::rho_congruence(t, n, k)? {
                let slack = val - bound;
                min_slack = Some(min_slack.map_or(slack, |m| m.min(slack)));
                if val < bound {
                    violations.push(k);
                }
            }
        }
        r.check(
            format!("rho-congruence-n{n}"),
            violations.is_empty(),
            json!({"n": n, "k_max": kmax, "m_c": c.m_c, "min_slack": ov(min_slack), "violations": violations}),
        );
    }
    // rho_1^p - rho_0 = -sum_{0<i<p} binom(p,i) rho_1^i up to sign, so its valuation is 1 + val(rho_1).
    let base = diff::rho_congruence(t, 0, 1)?;
    let oracle = Val::one() + t.uniformizer_valuation(1);
    r.check("rho-congruence-base", base == Some(oracle), json!({"computed": ov(base), "oracle": v(oracle)}));
    Ok(r.out)
}

fn theorem_b(ctx: &Context) -> Result<Vec<Assertion>> {
    let t = ctx.tower;
    let c = ctx.constants;
    let mut r = Recorder::new("commensurability of kernel and p-power lattices");
    let mut rng = suite_rng(ctx.seed, "theorem-b");
    for n in 1..=t.max_level() {
        let ker = diff::kernel_lattice(t, n, Base::K0)?;
        let tb = diff::theorem_b_lattice(t, n)?;
        let cm = diff::commensurability_check(&ker, &tb)?;
        let detail = json!({"n": n, "c_plus": cm.c_plus, "c_minus": cm.c_minus, "n0": c.n0, "n1": c.n1,
                            "elementary_divisors": cm.elementary_divisors});
        r.anchor("commensurability of kernel and p-power lattices").check(
            format!("commensurability-n{n}"),
            cm.c_plus <= c.n0 && cm.c_minus <= c.n1,
            detail.clone(),
        );
        r.anchor("kernel inside scaled p-power lattice").check(
            format!("commensurability-converse-n{n}"),
            cm.c_plus <= c.n1 && cm.c_minus <= c.n0,
            detail,
        );
        // [O : ker d] = |d(O)| = |Omega| / [Omega : d(O)], with |Omega| = p^(n deg K_n).
        let image = diff::differential_image_lattice(t, n)?;
        let oracle = (n * t.degree(n)) as u64 - image.index_exponent();
        r.anchor("kernel index").check(
            format!("kernel-index-n{n}"),
            ker.index_exponent() == oracle,
            json!({"n": n, "index": ker.index_exponent(), "oracle": oracle}),
        );
        if n >= 2 {
            let lower = diff::kernel_lattice(t, n - 1, Base::K0)?;
            let mut mismatches = 0;
            let mut samples = lower.generators(t);
            for _ in 0..30 {
                let y = sampling::random_small(t, n - 1, 50, &mut rng);
                samples.push(t.mul_int(t.p().pow(rng.gen_range(0..n as u32)) as i64, &y));
            }
            for y in &samples {
                if ker.contains(t, &t.embed(y, n))? != lower.contains(t, y)? {
                    mismatches += 1;
                }
            }
            r.anchor("kernel restricts to lower kernel").check(
                format!("kernel-nested-n{n}"),
                mismatches == 0,
                json!({"n": n, "samples": samples.len(), "mismatches": mismatches}),
            );
        }
    }
    if t.p() == 3 {
        let cm = diff::commensurability_check(&diff::kernel_lattice(t, 1, Base::K0)?, &diff::theorem_b_lattice(t, 1)?)?;
        r.anchor("equality at level one").check(
            "equal-at-level-1",
            (cm.c_plus, cm.c_minus) == (0, 0),
            json!({"c_plus": cm.c_plus, "c_minus": cm.c_minus}),
        );
    }
    let shifts = &c.n0_per_level;
    r.anchor("p^(n+n_0) O inside the kernel").check(
        "trivial-inclusion",
        shifts.iter().all(|s| *s <= c.n0),
        json!({"n0": c.n0, "per_level": shifts}),
    );
    Ok(r.out)
}

/// `sum_{n_1 <= m <= n} p^(m - n_1) O_{K_m}` as a lattice at level `n`.
fn flat_target_lattice(t: &Tower, n: usize, n1: usize) -> Result<LatticeBasis> {
    let f = t.base_degree();
    let mut gens = Vec::new();
    for m in n1.min(n)..=n {
        let scale = t.from_int(n, t.p().pow((m - n1.min(m)) as u32) as i64);
        for i in 0..t.relative_degree(m) {
            for j in 0..f {
                let g = t.mul(&t.pow(&t.uniformizer(0), j as u64), &t.pow(&t.uniformizer(m), i as u64));
                gens.push(t.mul(&scale, &t.embed(&g, n)));
            }
        }
    }
    LatticeBasis::from_elements(t, n, &gens, n.max(1) as u32)
}

fn fouvar(ctx: &Context) -> Result<Vec<Assertion>> {
    let t = ctx.tower;
    let n1 = ctx.constants.n1 as usize;
    let n = top(ctx, 3);
    let mut r = Recorder::new("flat decomposition of kernel elements");
    let ker = diff::kernel_lattice(t, n, Base::K0)?;
    let mut rng = suite_rng(ctx.seed, "fouvar");
    let seeds = sample_seeds(&mut rng, ctx.budget.kernel_samples);
    let runs = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let x = sampling::random_lattice_element(t, &ker, 1 << 20, &mut rng);
            diff::flat_decompose(t, &x, n1)
        })
        .collect::<Result<Vec<_>>>()?;
    let failed: Vec<usize> = runs.iter().enumerate().filter(|(_, d)| !d.all_verified()).map(|(i, _)| i).collect();
    r.check(
        format!("kernel-samples-n{n}"),
        failed.is_empty(),
        json!({"n": n, "n1": n1, "samples": runs.len(), "pieces_per_sample": n.saturating_sub(n1),
               "failed_samples": failed}),
    );
    let x = t.mul_int(t.p().pow(n as u32) as i64, &t.uniformizer(n));
    let d = diff::flat_decompose(t, &x, n1)?;
    r.check(
        format!("p-power-uniformizer-n{n}"),
        d.all_verified(),
        serde_json::to_value(&d).map_err(|e| Error::Internal(e.to_string()))?,
    );
    // p^(n_1) O_{K_(n_1)} + O_{K_0} lies in the kernel at level n_1, hence at level n.
    let lo = n1.min(n);
    let low = t.mul_int(t.p().pow(lo as u32) as i64, &t.zeta(lo));
    let low = t.embed(&t.add(&low, &t.from_int(lo, 2)), n);
    let d = diff::flat_decompose(t, &low, n1)?;
    let trivial = d.all_verified() && d.pieces.iter().all(|c| c.element.is_zero());
    r.check(
        "low-level-element",
        trivial && t.agree(&t.embed(&d.tail.element, n), &low),
        json!({"n": n, "n1": n1, "pieces": d.pieces.len()}),
    );
    let target = flat_target_lattice(t, n, n1)?;
    r.anchor("kernel inside the flat sum").check(
        format!("kernel-inclusion-n{n}"),
        ker.is_sublattice_of(&target),
        json!({"n": n, "n1": n1, "kernel_index": ker.index_exponent(), "target_index": target.index_exponent()}),
    );
    Ok(r.out)
}

fn nopdiv(ctx: &Context) -> Result<Vec<Assertion>> {
    let t = ctx.tower;
    let c = ctx.constants;
    let l = t.max_level();
    let bound = c.n0 as i64 + c.n1 as i64 + c.c2_star;
    let mut r = Recorder::new("no p-divisible differentials");
    let mut rng = suite_rng(ctx.seed, "nopdiv");
    let start_cap = l.saturating_sub(1).clamp(1, 2);
    let mut xs = vec![t.uniformizer(1)];
    while xs.len() < ctx.budget.divisibility_samples.max(1) {
        let level = rng.gen_range(1..=start_cap);
        let x = sampling::random_integral(t, level, &mut rng);
        if !diff::d_map(t, &x, Base::K0)?.is_zero(t)? {
            xs.push(x);
        }
    }
    let reports = xs.par_iter().map(|x| diff::divisibility_exponent(t, x, l)).collect::<Result<Vec<_>>>()?;
    let bad: Vec<usize> = reports
        .iter()
        .enumerate()
        .filter(|(_, rep)| !(rep.stabilized && rep.sup as i64 <= bound))
        .map(|(i, _)| i)
        .collect();
    r.check(
        "stabilized-and-bounded",
        bad.is_empty(),
        json!({"samples": reports.len(), "max_level": l, "bound": bound,
               "sups": reports.iter().map(|x| x.sup).collect::<Vec<_>>(),
               "reached_at": reports.iter().map(|x| x.reached_at).collect::<Vec<_>>(), "failed": bad}),
    );
    // p d(rho_1) is already zero at level 1, so the scaling check starts at level 2.
    if l < 2 {
        return Ok(r.out);
    }
    let lvl = 2;
    let x = t.uniformizer(lvl);
    let px = t.mul_int(t.p() as i64, &x);
    let a = diff::divisibility_exponent(t, &x, l)?;
    let b = diff::divisibility_exponent(t, &px, l)?;
    let ok = a
        .per_level
        .iter()
        .zip(&b.per_level)
        .filter(|((m, i), _)| (*i as usize) < *m)
        .all(|((_, i), (_, j))| *j == i + 1);
    r.anchor("p-linearity of d").check(format!("scaling-rho{lvl}"), ok, json!({"x": a.per_level, "px": b.per_level}));
    Ok(r.out)
}

fn base_change(ctx: &Context) -> Result<Vec<Assertion>> {
    let t = ctx.tower;
    let rexp = diff::base_change_exponent(t);
    let mut r = Recorder::new("base change of differentials");
    for n in 0..=top(ctx, 2) {
        let qp = diff::kernel_lattice(t, n, Base::Qp)?;
        let k0 = diff::kernel_lattice(t, n, Base::K0)?;
        let cm = diff::commensurability_check(&qp, &k0)?;
        r.check(
            format!("kernel-lattices-n{n}"),
            cm.c_plus == 0 && cm.c_minus as i64 <= rexp,
            json!({"n": n, "r": rexp, "c_plus": cm.c_plus, "c_minus": cm.c_minus}),
        );
    }
    let x0 = t.add(&t.uniformizer(0), &t.from_int(0, 1));
    let b = diff::base_change_compare(t, &x0)?;
    r.check(
        "base-element",
        b.over_k0.is_zero(t)? && b.kernel_killed && b.quotient_compatible,
        json!({"r": b.r, "over_qp_zero": b.over_qp.is_zero(t)?}),
    );
    let mut rng = suite_rng(ctx.seed, "base-change");
    let mut bad = Vec::new();
    let count = 20;
    for i in 0..count {
        let level = rng.gen_range(0..=top(ctx, 2));
        let x = sampling::random_integral(t, level, &mut rng);
        let b = diff::base_change_compare(t, &x)?;
        if !(b.quotient_compatible && b.kernel_killed) {
            bad.push(i);
        }
    }
    r.check("random-elements", bad.is_empty(), json!({"samples": count, "failed": bad}));
    Ok(r.out)
}

fn rnk2(ctx: &Context) -> Result<Vec<Assertion>> {
    let t = ctx.tower;
    let c = ctx.constants;
    let m = top(ctx, 3);
    let mut r = Recorder::new("unique perpendicular decomposition");
    let mut rng = suite_rng(ctx.seed, "rnk2");
    let seeds = sample_seeds(&mut rng, ctx.budget.series_samples);
    // (roundtrip, perpendicular, nonzero, perturbation, w2 lower bound)
    let flags = seeds
        .par_iter()
        .map(|&s| -> Result<[bool; 5]> {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let x = sampling::random_nonzero(t, m, 4, &mut rng);
            let series = completion::perp_series_decompose(t, &x)?;
            let back = completion::series_reconstruct(t, &series);
            let n = rng.gen_range(0..=m);
            let delta = t.perp_project(&sampling::random_integral(t, n, &mut rng), n)?;
            let mut terms: Vec<PerpTerm> =
                (0..=m).map(|k| PerpTerm { n: k, x: series.term(k).cloned().unwrap_or_else(|| t.zero(k)) }).collect();
            terms[n].x = t.add(&terms[n].x, &delta);
            let perturbed = PerpSeries::from_terms(t, terms.clone())?;
            let again = completion::perp_series_decompose(t, &completion::series_reconstruct(t, &perturbed))?;
            let recovered = (0..=m).all(|k| {
                let a = again.term(k).cloned().unwrap_or_else(|| t.zero(k));
                t.agree(&a, &terms[k].x)
            });
            let w2 = completion::w2_valuation(t, &x)?;
            let lower = series.terms.iter().all(|term| {
                t.valuation(&term.x).map(|val| val >= Val::from_integer(w2 + term.n as i64)).unwrap_or(false)
            });
            Ok([t.agree(&back, &x), series.perpendicular, !series.is_zero(), recovered, lower])
        })
        .collect::<Result<Vec<_>>>()?;
    let count = |i: usize| flags.iter().filter(|f| !f[i]).count();
    r.check("roundtrip", count(0) == 0, json!({"level": m, "samples": flags.len(), "failures": count(0)}));
    r.check("perpendicular-terms", count(1) == 0, json!({"failures": count(1)}));
    r.anchor("zero series iff zero element");
    let zero = completion::perp_series_decompose(t, &t.zero(m))?;
    let empty = completion::series_reconstruct(t, &PerpSeries::from_terms(t, vec![])?);
    r.check(
        "zero-series",
        zero.is_zero() && empty.is_zero() && count(2) == 0,
        json!({"nonzero_elements_with_zero_series": count(2)}),
    );
    r.anchor("unique perpendicular decomposition").check(
        "perturbation-recovered",
        count(3) == 0,
        json!({"failures": count(3)}),
    );
    r.anchor("perpendicular parts bounded by w2").check("w2-lower-bound", count(4) == 0, json!({"failures": count(4)}));

    let pairs = ctx.budget.series_samples.min(50);
    let checks = sample_seeds(&mut rng, pairs)
        .par_iter()
        .map(|&s| -> Result<[bool; 3]> {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let x = sampling::random_nonzero(t, m, 6, &mut rng);
            let y = sampling::random_nonzero(t, m, 6, &mut rng);
            let (wx, wy) = (completion::w2_valuation(t, &x)?, completion::w2_valuation(t, &y)?);
            let sum = t.add(&x, &y);
            let ultra = sum.is_zero() || completion::w2_valuation(t, &sum)? >= wx.min(wy);
            let mult = completion::w2_valuation(t, &t.mul(&x, &y))? >= wx + wy - c.c2_star;
            let homog = completion::w2_valuation(t, &t.mul_int(t.p() as i64, &x))? == wx + 1;
            Ok([ultra, mult, homog])
        })
        .collect::<Result<Vec<_>>>()?;
    let bad = |i: usize| checks.iter().filter(|f| !f[i]).count();
    r.anchor("w2 ultrametric").check("w2-ultrametric", bad(0) == 0, json!({"pairs": pairs, "failures": bad(0)}));
    r.anchor("w2 quasi-multiplicative").check(
        "w2-quasi-multiplicative",
        bad(1) == 0,
        json!({"pairs": pairs, "slack": c.c2_star, "failures": bad(1)}),
    );
    r.anchor("w2 homogeneous").check("w2-homogeneous", bad(2) == 0, json!({"pairs": pairs, "failures": bad(2)}));
    Ok(r.out)
}

/// Random element `sum_n p^n u_n` with `u_n` the top perpendicular part of an integer at level `n`.
fn random_r_member(t: &Tower, m: usize, rng: &mut ChaCha8Rng) -> Result<TowerElement> {
    let mut y = t.zero(m);
    for n in 0..=m {
        let u = t.perp_project(&sampling::random_integral(t, n, rng), n)?;
        y = t.add(&y, &t.embed(&t.mul_int(t.p().pow(n as u32) as i64, &u), m));
    }
    Ok(y)
}

fn infinite_or_at_least(margin: Option<Val>, floor: Option<Val>, zero_floor: Val) -> bool {
    match (margin, floor) {
        (None, _) => true,
        (Some(mv), Some(f)) => mv >= f,
        (Some(mv), None) => mv >= zero_floor,
    }
}

fn diffvec(ctx: &Context) -> Result<Vec<Assertion>> {
    let t = ctx.tower;
    let c = ctx.constants;
    let l = t.max_level();
    let p = t.p() as i64;
    let slack = c.c2_star;
    let mut r = Recorder::new("flat vectors are the R-members");
    let mut rng = suite_rng(ctx.seed, "diffvec");
    let kmax = l.saturating_sub(1) as u32;
    let precision_floor = Val::from_integer(t.prec() - 2 * l as i64 - slack);

    let members = sample_seeds(&mut rng, ctx.budget.series_samples.min(40))
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            random_r_member(t, l, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut forward_fail = Vec::new();
    for (i, y) in members.iter().enumerate() {
        let cert = completion::membership_r(t, y, slack)?;
        let margins = completion::flatness_test(t, y, kmax)?;
        let forced = completion::forced_margins(&cert, kmax);
        let ok = cert.accepted
            && margins.iter().zip(&forced).all(|(mg, f)| infinite_or_at_least(mg.margin, *f, precision_floor));
        if !ok {
            forward_fail.push(i);
        }
    }
    r.check(
        "members-are-flat",
        forward_fail.is_empty(),
        json!({"samples": members.len(), "slack": slack, "k_max": kmax, "failed": forward_fail}),
    );

    let base = t.add(&t.uniformizer(0), &t.from_int(0, 5));
    let fixed = completion::flatness_test(t, &t.embed(&base, l), kmax)?;
    r.check("base-field-fixed", fixed.iter().all(|m| m.margin.is_none()), json!({"k_max": kmax}));

    r.anchor("roots of unity are not flat");
    let cap = Val::new(1, p - 1);
    let mut family = Vec::new();
    for m in 1..=l {
        let z = t.zeta(m);
        let cert = completion::membership_r(t, &z, 0)?;
        let margins = completion::flatness_test(t, &z, kmax.max(m as u32))?;
        let finite: Vec<Val> = margins.iter().filter_map(|x| x.margin).collect();
        let first = margins[0].margin;
        let oracle = Val::new(1, p.pow(m as u32 - 1) * (p - 1));
        let top_k = margins[m - 1].margin.map(|x| x + (m as i64 - 1));
        let bounded = finite.iter().all(|x| *x <= cap) && margins[m..].iter().all(|x| x.margin.is_none());
        r.check(
            format!("zeta-level-{m}"),
            !cert.accepted && first == Some(oracle) && bounded && top_k == Some(cap),
            json!({"m": m, "failing_level": cert.failing_level, "margins": margins.iter().map(|x| ov(x.margin)).collect::<Vec<_>>(),
                   "margin_0_oracle": v(oracle), "last_unshifted": ov(top_k)}),
        );
        family.push(top_k);
    }
    if p == 3 && t.s() == 1 {
        let m = completion::flatness_test(t, &t.zeta(1), 0)?;
        r.check("zeta9-margin", m[0].margin == Some(Val::new(1, 2)), json!({"margin": ov(m[0].margin)}));
    }
    r.check(
        "zeta-family-constant",
        family.iter().all(|x| *x == Some(cap)),
        json!({"values": family.iter().map(|x| ov(*x)).collect::<Vec<_>>()}),
    );

    r.anchor("margins bound the perpendicular parts");
    let mut corpus: Vec<TowerElement> = members.clone();
    corpus.extend((1..=l).map(|m| t.embed(&t.zeta(m), l)));
    corpus.extend(
        sample_seeds(&mut rng, 20).iter().map(|&s| sampling::random_integral(t, l, &mut ChaCha8Rng::seed_from_u64(s))),
    );
    let c2 = c.c2_max;
    let mut converse_fail = Vec::new();
    let mut checked = 0;
    for (i, y) in corpus.iter().enumerate() {
        let cert = completion::membership_r(t, y, slack)?;
        let margins = completion::flatness_test(t, y, kmax)?;
        for mg in &margins {
            let k = mg.k as usize;
            let (Some(margin), Some(val)) = (mg.margin, cert.components[k + 1].val) else { continue };
            checked += 1;
            let c3 = gamma_inverse_slack(t, c.c3_star, k + 1);
            if val < completion::converse_bound(margin, c2, c3) {
                converse_fail.push(json!([i, k]));
            }
        }
    }
    r.check(
        "converse-bound",
        converse_fail.is_empty(),
        json!({"elements": corpus.len(), "checked": checked, "c2": v(c2), "c3_star": c.c3_star, "failed": converse_fail}),
    );

    r.anchor("R is closed under inversion");
    let units = sample_seeds(&mut rng, ctx.budget.inversion_samples)
        .par_iter()
        .map(|&s| -> Result<TowerElement> {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let y = random_r_member(t, l, &mut rng)?;
            Ok(t.add(&t.one(l), &t.mul_int(p, &y)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut closure = Vec::new();
    let mut involution = Vec::new();
    for (i, u) in units.iter().enumerate() {
        let s = completion::perp_series_decompose(t, u)?;
        let inv = completion::series_invert(t, &s, slack)?;
        if !(inv.input_accepted && inv.output_accepted) {
            closure.push(i);
        }
        let twice = completion::series_invert(t, &inv.series, slack)?;
        if !t.agree(&completion::series_reconstruct(t, &twice.series), u) {
            involution.push(i);
        }
    }
    r.check("inverse-accepted", closure.is_empty(), json!({"samples": units.len(), "slack": slack, "failed": closure}));
    r.check("double-inverse", involution.is_empty(), json!({"samples": units.len(), "failed": involution}));
    let q = t.mul_int(p, &t.zeta(1));
    let u = t.add(&t.one(1), &q);
    let inv = completion::series_reconstruct(
        t,
        &completion::series_invert(t, &completion::perp_series_decompose(t, &u)?, slack)?.series,
    );
    let mut geo = t.zero(1);
    let mut term = t.one(1);
    let neg = t.neg(&q);
    for _ in 0..=t.prec() {
        geo = t.add(&geo, &term);
        term = t.mul(&term, &neg);
    }
    r.check("geometric-series", t.agree(&inv, &geo), json!({"element": "1 + p zeta"}));
    Ok(r.out)
}

fn theorem_a_shadow(ctx: &Context) -> Result<Vec<Assertion>> {
    let t = ctx.tower;
    let mut r = Recorder::new("valuation and w2 topologies differ");
    let mut gaps = Vec::new();
    for m in 1..=t.max_level() {
        let x = t.mul_int(t.p().pow(m as u32) as i64, &t.zeta(m));
        let val = t.valuation(&x)?;
        let w2 = completion::w2_valuation(t, &x)?;
        r.check(
            format!("witness-level-{m}"),
            val == Val::from_integer(m as i64) && w2 == 0,
            json!({"m": m, "val": v(val), "w2": w2}),
        );
        gaps.push(val - w2);
    }
    let growth: Vec<Val> = gaps.windows(2).map(|w| w[1] - w[0]).collect();
    r.check(
        "gap-growth",
        growth.iter().all(|g| *g >= Val::one()),
        json!({"gaps": gaps.iter().map(|g| v(*g)).collect::<Vec<_>>()}),
    );
    Ok(r.out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::estimate_constants;
    use crate::tower::TowerParams;

    #[test]
    fn quick_suites_pass_on_small_tower() {
        let t = Tower::new(TowerParams::new(3, 2, 40)).unwrap();
        let c = estimate_constants(&t, 1, 20).unwrap();
        let ctx = Context { tower: &t, constants: &c, seed: 1, budget: Budget::quick() };
        for name in SUITES {
            let rep = run_suite(name, &ctx).unwrap();
            let fails: Vec<_> = rep.failures().map(|a| (&a.id, &a.detail)).collect();
            assert!(rep.passed, "{name}: {fails:?}");
        }
    }

    #[test]
    fn unknown_suite() {
        let t = Tower::new(TowerParams::new(3, 1, 30)).unwrap();
        let c = estimate_constants(&t, 1, 5).unwrap();
        let ctx = Context { tower: &t, constants: &c, seed: 1, budget: Budget::quick() };
        assert!(matches!(run_suite("nope", &ctx), Err(Error::UnknownSuite(_))));
    }
}
