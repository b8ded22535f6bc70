//! Runs the twelve acceptance criteria at desk scale (p = 3, four levels, precision 60)
//! and prints one line per criterion.

use std::process::ExitCode;
use std::time::Instant;

use cyclotower::constants::{self, DEFAULT_UNIT_SAMPLES};
use cyclotower::suites::{self, Budget, Context, SuiteReport};
use cyclotower::{Tower, TowerParams};
use serde_json::{json, Value};

const SEED: u64 = 1;

/// `(assertion id, detail field, exact value)`.
type Exact = (&'static str, &'static str, &'static str);

/// Criterion number, short title, suite, and exact values that must appear in the suite.
const CRITERIA: [(u32, &str, &str, &[Exact]); 12] = [
    (1, "different valuations over K_0 and Q_p", "tatediff", &[("drift-constants-zero", "a", "0")]),
    (2, "norm congruence constant", "fonemb", &[("witness-rho1", "computed", "2/3")]),
    (3, "normalized trace bound", "rnbdd", &[]),
    (4, "inverse bound for 1 - g on perpendicular parts", "gaminv", &[]),
    (5, "uniformizer congruences", "rhoval", &[("rho-congruence-base", "computed", "7/6")]),
    (
        6,
        "kernel lattice commensurability",
        "theorem-b",
        &[("equal-at-level-1", "c_plus", "0"), ("equal-at-level-1", "c_minus", "0")],
    ),
    (7, "flat decomposition of kernel elements", "fouvar", &[]),
    (8, "bounded p-divisibility of differentials", "nopdiv", &[]),
    (9, "perpendicular series round trip", "rnk2", &[]),
    (10, "membership and flatness margins", "diffvec", &[("zeta9-margin", "margin", "1/2")]),
    (11, "valuation gap on the witness family", "theorem-a-shadow", &[]),
    (12, "base change between Z_p and O_K0", "base-change", &[]),
];

fn as_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn exact_values_hold(report: &SuiteReport, expected: &[Exact]) -> Vec<String> {
    expected
        .iter()
        .filter_map(|(id, field, want)| {
            let got = report.assertion(id).and_then(|a| a.detail.get(*field)).map(as_text);
            (got.as_deref() != Some(*want)).then(|| format!("{id}.{field} = {got:?}, expected {want}"))
        })
        .collect()
}

fn main() -> ExitCode {
    let start = Instant::now();
    let tower = Tower::new(TowerParams::new(3, 4, 60)).expect("desk-scale tower");
    let c = constants::estimate_constants(&tower, SEED, DEFAULT_UNIT_SAMPLES).expect("constants");
    println!(
        "constants: c_norm = {}, m_c = {}, c2* = {}, c3* = {}, n0 = {}, n1 = {} ({:.1}s)",
        c.c_norm,
        c.m_c,
        c.c2_star,
        c.c3_star,
        c.n0,
        c.n1,
        start.elapsed().as_secs_f64()
    );
    let ctx = Context { tower: &tower, constants: &c, seed: SEED, budget: Budget::default() };
    let mut failed = 0;
    for (num, title, suite, expected) in CRITERIA {
        let t0 = Instant::now();
        let (ok, detail) = match suites::run_suite(suite, &ctx) {
            Ok(report) => {
                let mut problems: Vec<String> = report.failures().map(|a| format!("{} {}", a.id, a.detail)).collect();
                problems.extend(exact_values_hold(&report, expected));
                let summary = json!({"assertions": report.assertions.len(), "failures": problems});
                (problems.is_empty() && report.passed, summary)
            }
            Err(e) => (false, json!({"error": e.to_string()})),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {num:>2} [{suite}] {title}: {} ({:.1}s) {detail}",
            if ok { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/12 passed in {:.1}s", 12 - failed, start.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
