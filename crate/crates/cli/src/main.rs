use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use cyclotower::completion;
use cyclotower::constants::{self, DEFAULT_UNIT_SAMPLES};
use cyclotower::differentials;
use cyclotower::report::{self, Report, ReportKind};
use cyclotower::suites::{self, Budget, Context, SUITES};
use cyclotower::tower::ElementLiteral;
use cyclotower::{Error, Result, Tower, TowerElement, TowerParams};

/// Exact computations in the cyclotomic p-adic tower and verification of its estimates.
#[derive(Parser, Debug)]
#[command(name = "tower", version)]
struct Cli {
    #[command(flatten)]
    tower: TowerArgs,
    /// Seed for every sampled quantity.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct TowerArgs {
    /// JSON file with `{p, s, max_level, prec}`; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Prime p; changing it resets s to the default for that prime.
    #[arg(long, global = true)]
    p: Option<u32>,
    /// Base offset: 1 for odd p, 2 for p = 2.
    #[arg(long, global = true)]
    s: Option<u32>,
    /// Height of the tower.
    #[arg(long, global = true)]
    levels: Option<usize>,
    /// Absolute precision in p-adic digits.
    #[arg(long, global = true)]
    prec: Option<i64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Describe the tower: degrees, uniformizer valuations, differents.
    Build,
    /// Compute the tower constants.
    Constants {
        /// Random units per norm cell.
        #[arg(long, default_value_t = DEFAULT_UNIT_SAMPLES)]
        units: usize,
    },
    /// Run one suite, or `all`.
    Verify {
        suite: String,
        #[arg(long, default_value_t = DEFAULT_UNIT_SAMPLES)]
        units: usize,
        /// Use the small sample budget.
        #[arg(long)]
        quick: bool,
    },
    /// Split a kernel element into flat pieces.
    Decompose {
        #[command(flatten)]
        element: ElementArg,
        /// Override the computed n_1.
        #[arg(long)]
        n1: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_UNIT_SAMPLES)]
        units: usize,
    },
    /// Lattice valuation of an element.
    W2 {
        #[command(flatten)]
        element: ElementArg,
    },
    /// Perpendicular series, membership certificate and flatness margins.
    Series {
        #[command(flatten)]
        element: ElementArg,
        /// Integrality slack for the membership test; defaults to the exact c_2^*.
        #[arg(long)]
        slack: Option<i64>,
        /// Also invert the element through its series.
        #[arg(long)]
        invert: bool,
    },
}

#[derive(Args, Debug)]
struct ElementArg {
    /// Element literal `{"level":n,"coeffs":[...],"scale":k}`, or `@path` to a file holding one.
    #[arg(long)]
    element: String,
}

fn load_params(args: &TowerArgs) -> Result<TowerParams> {
    let mut params = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<TowerParams>(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        }
        None => TowerParams::default_for(args.p.unwrap_or(3)),
    };
    if let Some(p) = args.p.filter(|p| *p != params.p) {
        params = TowerParams { s: TowerParams::new(p, 1, 1).s, p, ..params };
    }
    if let Some(s) = args.s {
        params.s = s;
    }
    if let Some(l) = args.levels {
        params.max_level = l;
    }
    if let Some(prec) = args.prec {
        params.prec = prec;
    }
    Ok(params)
}

fn load_element(tower: &Tower, arg: &ElementArg) -> Result<TowerElement> {
    let text = match arg.element.strip_prefix('@') {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{path}: {e}")))?,
        None => arg.element.clone(),
    };
    let lit: ElementLiteral = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("element literal: {e}")))?;
    tower.from_literal(&lit)
}

fn run(cli: &Cli) -> Result<Report> {
    let params = load_params(&cli.tower)?;
    let tower = Tower::new(params.clone())?;
    let seed = cli.seed;
    match &cli.command {
        Command::Build => Report::new(ReportKind::Build, &params, None, true, report::tower_summary(&tower)?),
        Command::Constants { units } => {
            let c = constants::estimate_constants(&tower, seed, *units)?;
            Report::new(ReportKind::Constants, &params, Some(seed), true, c)
        }
        Command::Verify { suite, units, quick } => {
            let names: Vec<&str> = match suite.as_str() {
                "all" => SUITES.to_vec(),
                s if SUITES.contains(&s) => vec![s],
                other => return Err(Error::UnknownSuite(other.to_string())),
            };
            let c = constants::estimate_constants(&tower, seed, *units)?;
            let budget = if *quick { Budget::quick() } else { Budget::default() };
            let ctx = Context { tower: &tower, constants: &c, seed, budget };
            let reports = names.iter().map(|s| suites::run_suite(s, &ctx)).collect::<Result<Vec<_>>>()?;
            let passed = reports.iter().all(|r| r.passed);
            for r in &reports {
                for a in r.failures() {
                    eprintln!("FAIL {}::{} {}", r.suite, a.id, a.detail);
                }
            }
            Report::new(ReportKind::Verify, &params, Some(seed), passed, json!({"constants": c, "suites": reports}))
        }
        Command::Decompose { element, n1, units } => {
            let x = load_element(&tower, element)?;
            let n1 = match n1 {
                Some(n) => *n,
                None => constants::estimate_constants(&tower, seed, *units)?.n1 as usize,
            };
            let d = differentials::flat_decompose(&tower, &x, n1)?;
            Report::new(ReportKind::Decompose, &params, Some(seed), d.all_verified(), d)
        }
        Command::W2 { element } => {
            let x = load_element(&tower, element)?;
            let body = json!({
                "element": x,
                "w2": completion::w2_valuation(&tower, &x)?,
                "valuation": tower.valuation(&x)?.to_string(),
            });
            Report::new(ReportKind::W2, &params, None, true, body)
        }
        Command::Series { element, slack, invert } => {
            let x = load_element(&tower, element)?;
            let slack = match slack {
                Some(s) => *s,
                None => constants::c2_star(&tower)?,
            };
            let series = completion::perp_series_decompose(&tower, &x)?;
            let roundtrip = tower.agree(&completion::series_reconstruct(&tower, &series), &x);
            let membership = completion::membership_r(&tower, &x, slack)?;
            let flatness = completion::flatness_test(&tower, &x, x.level() as u32)?;
            let mut body = json!({
                "series": series,
                "roundtrip": roundtrip,
                "membership": membership,
                "flatness": flatness,
            });
            if *invert {
                body["inverse"] = report::to_value(&completion::series_invert(&tower, &series, slack)?)?;
            }
            let passed = roundtrip && series.perpendicular;
            Report::new(ReportKind::Series, &params, None, passed, body)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let report = match run(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let written = match &cli.out {
        Some(path) => report::emit_report(&report, path),
        None => report::canonical_json(&report).map(|s| print!("{s}")),
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
