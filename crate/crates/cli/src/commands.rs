//! Subcommand bodies. Each returns an [`Outcome`]; `main` prints it and exits with its code.

use std::path::Path;

use fairshare_core::fairness::audit;
use fairshare_core::io::{parse_allocation, parse_district, parse_problem, to_json, LoadedProblem, ProblemFile};
use fairshare_core::kkm::kkm_search;
use fairshare_core::lottery::{bvn_decompose, Lottery};
use fairshare_core::market::{solve_equilibrium, verify_equilibrium};
use fairshare_core::num::Rational;
use fairshare_core::schoolchoice::{deferred_acceptance, district_to_problem, EndowmentPolicy};
use fairshare_core::{Allocation, Error, FairnessReport, Result};
use num_traits::Zero;
use serde_json::{json, Value};

use crate::config::{Method, RunConfig};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_AUDIT_FAIL: i32 = 1;
/// Unreadable, malformed or invalid input, including bad configuration.
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NO_IR: i32 = 3;
/// The solver gave up without a certified answer.
pub const EXIT_SOLVER: i32 = 4;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub code: i32,
    pub output: Value,
    pub diagnostics: Vec<String>,
}

impl Outcome {
    fn verdict(pass: bool, output: Value) -> Self {
        Self {
            code: if pass { EXIT_PASS } else { EXIT_AUDIT_FAIL },
            output,
            diagnostics: Vec::new(),
        }
    }

    fn failure(e: &Error) -> Self {
        Self {
            code: exit_code(e),
            output: json!({ "error": e.to_string() }),
            diagnostics: vec![e.to_string()],
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NoIrAllocation => EXIT_NO_IR,
        Error::BudgetExhausted(_) | Error::NonConvergence(_) | Error::Lp(_) => EXIT_SOLVER,
        _ => EXIT_INPUT,
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))
}

fn write(path: Option<&Path>, value: &Value) -> Result<()> {
    if let Some(path) = path {
        let text = to_json(value)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::Parse(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn value<T: serde::Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Parse(e.to_string()))
}

fn finish(r: Result<Outcome>) -> Outcome {
    r.unwrap_or_else(|e| Outcome::failure(&e))
}

/// IR, NJE and PO at `eps` (exact versions when `eps = 0`).
fn passes(report: &FairnessReport, eps: &Rational) -> bool {
    if eps.is_zero() {
        report.passes_exact()
    } else {
        report.passes_eps()
    }
}

/// Solves a parsed problem; the output holds the solution and the audit.
pub fn solve(loaded: &LoadedProblem, cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate_for(&loaded.problem)?;
    match cfg.method {
        Method::Kkm => {
            let cert = kkm_search(&loaded.problem, loaded.cs(), &cfg.kkm_config())?;
            let pass = cert.audit.passes_eps();
            let audit = value(&cert.audit)?;
            Ok(Outcome::verdict(
                pass,
                json!({ "method": "kkm", "allocation": value(&cert.allocation)?, "certificate": value(&cert)?, "audit": audit }),
            ))
        }
        Method::Market => {
            if loaded.cs().is_some() {
                return Err(Error::Precondition(
                    "the market solver does not take a constraint structure".into(),
                ));
            }
            let eq = solve_equilibrium(&loaded.problem, &cfg.market_config())?;
            let verdict = verify_equilibrium(&eq.price, &eq.allocation, &loaded.problem, &cfg.tolerances)?;
            Ok(Outcome::verdict(
                verdict.passes,
                json!({ "method": "market", "allocation": value(&eq.allocation)?, "equilibrium": value(&eq)?, "audit": value(&verdict)? }),
            ))
        }
    }
}

/// `solve`: writes the solution to `cfg.out` and the audit to `cfg.audit_out`.
pub fn cmd_solve(problem: &Path, cfg: &RunConfig) -> Outcome {
    finish((|| {
        let loaded = parse_problem(&read(problem)?)?;
        let outcome = solve(&loaded, cfg)?;
        write(cfg.out.as_deref(), &outcome.output)?;
        write(cfg.audit_out.as_deref(), &outcome.output["audit"])?;
        Ok(outcome)
    })())
}

pub fn check(loaded: &LoadedProblem, x: &Allocation, eps: &Rational) -> Result<(FairnessReport, bool)> {
    let report = audit(x, &loaded.problem, loaded.cs(), eps)?;
    let pass = passes(&report, eps);
    Ok((report, pass))
}

/// `check`: exact audit of a given allocation.
pub fn cmd_check(problem: &Path, allocation: &Path, eps: &Rational) -> Outcome {
    finish((|| {
        let loaded = parse_problem(&read(problem)?)?;
        let x = parse_allocation(&read(allocation)?)?;
        let (report, pass) = check(&loaded, &x, eps)?;
        Ok(Outcome::verdict(pass, value(&report)?))
    })())
}

fn lottery_output(loaded: &LoadedProblem, x: &Allocation) -> Result<(Lottery, bool)> {
    let lottery = bvn_decompose(x, &loaded.problem, loaded.cs())?;
    let (n, l) = (loaded.problem.num_agents(), loaded.problem.num_objects());
    let exact = lottery.expectation(n, l) == *x && lottery.total_weight() == Rational::from_integer(1.into());
    Ok((lottery, exact))
}

/// `decompose`: lottery over deterministic assignments whose mean is the allocation.
pub fn cmd_decompose(problem: &Path, allocation: &Path) -> Outcome {
    finish((|| {
        let loaded = parse_problem(&read(problem)?)?;
        let x = parse_allocation(&read(allocation)?)?;
        x.check(&loaded.problem)?;
        let (lottery, exact) = lottery_output(&loaded, &x)?;
        Ok(Outcome::verdict(
            exact,
            json!({ "atoms": lottery.atoms.len(), "reconstructs": exact, "lottery": value(&lottery)? }),
        ))
    })())
}

/// `district`: deferred acceptance, then the district as an allocation problem
/// solved with the configured method and, without diversity bounds, its lottery.
pub fn cmd_district(district: &Path, policy: EndowmentPolicy, cfg: &RunConfig) -> Outcome {
    finish((|| {
        let d = parse_district(&read(district)?)?;
        let matching = deferred_acceptance(&d)?;
        let dp = district_to_problem(&d, policy)?;
        let loaded = LoadedProblem {
            problem: dp.problem,
            constraints: dp.constraints,
            endowments: Some(dp.endowments),
        };
        let solved = solve(&loaded, cfg)?;
        let x: Allocation =
            serde_json::from_value(solved.output["allocation"].clone()).map_err(|e| Error::Parse(e.to_string()))?;
        let lottery = if loaded.cs().is_none() {
            let (lottery, exact) = lottery_output(&loaded, &x)?;
            if !exact {
                return Err(Error::NonConvergence(
                    "lottery does not reproduce the allocation".into(),
                ));
            }
            value(&lottery)?
        } else {
            Value::Null
        };
        let file = ProblemFile::from_problem(&loaded.problem, loaded.cs(), loaded.endowments.as_deref());
        let output = json!({
            "deferred_acceptance": value(&matching)?,
            "problem": value(&file)?,
            "solution": solved.output,
            "lottery": lottery,
        });
        write(cfg.out.as_deref(), &output)?;
        write(cfg.audit_out.as_deref(), &output["solution"]["audit"])?;
        Ok(Outcome {
            code: solved.code,
            output,
            diagnostics: solved.diagnostics,
        })
    })())
}
