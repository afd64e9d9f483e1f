//! Acceptance suite. One line per criterion; exits non-zero if any fails.
//!
//! Runs under `cargo test` (no libtest harness, so output is never captured).

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use fairshare_cli::commands::{cmd_check, EXIT_PASS};
use fairshare_cli::RunConfig;
use fairshare_core::examples::{five_agent_problem, three_school_district};
use fairshare_core::fairness::{audit, Justification};
use fairshare_core::kkm::{kkm_search, KKMConfig};
use fairshare_core::lottery::bvn_decompose;
use fairshare_core::lp::{LinearProgram, Sense};
use fairshare_core::market::{
    demand, expenditure, income_envy_violations, income_schedule, phi, satiation_value, solve_equilibrium,
    verify_equilibrium, MarketConfig, MarketData,
};
use fairshare_core::num::{int, rat, Rational};
use fairshare_core::random::{
    clone_instance, common_favorite_instance, large_cap_instance, random_price, rng, unit_demand_allocation,
    unit_demand_instance,
};
use fairshare_core::schoolchoice::deferred_acceptance;
use fairshare_core::{Allocation, AllocationProblem};
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Verdict);

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// The solver settings the CLI uses by default (polish grid 1/10^6).
fn run_config(eps: &Rational) -> KKMConfig {
    RunConfig {
        epsilon: eps.clone(),
        ..RunConfig::default()
    }
    .kkm_config()
}

fn f(x: &Rational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

// ---------------------------------------------------------------- criterion 1

fn five_agent_audit() -> Verdict {
    let started = Instant::now();
    let out = cmd_check(&data("five_agent.json"), &data("five_agent_allocation.json"), &int(0));
    let elapsed = started.elapsed();
    let mut problems = Vec::new();
    if out.code != EXIT_PASS {
        problems.push(format!("exit {}", out.code));
    }
    let r: fairshare_core::FairnessReport = match serde_json::from_value(out.output) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("unreadable report: {e}")),
    };
    let slacks = [int(1), int(0), rat(7, 6), rat(7, 6), rat(7, 6)];
    if r.ir.slacks != slacks || !r.ir.passes {
        problems.push(format!("IR slacks {:?}", r.ir.slacks));
    }
    match r.envy.facts.as_slice() {
        [e] if e.envier == 0
            && e.envied == 1
            && e.gap == rat(1, 2)
            && e.justification == Justification::Unjustified
            && e.witness_value == int(1)
            && e.witness_reservation == int(2) => {}
        facts => problems.push(format!("envy facts {facts:?}")),
    }
    match r.pareto("po") {
        Some(c) if c.optimum.is_zero() && c.passes => {}
        c => problems.push(format!("PO certificate {c:?}")),
    }
    if !r.envy.nje || !r.exchange_envy.nje {
        problems.push("justified envy reported".into());
    }
    if elapsed >= Duration::from_secs(1) {
        problems.push(format!("took {elapsed:?}"));
    }
    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            format!("slacks (1,0,7/6,7/6,7/6), one unjustified envy 1->2 gap 1/2, PO optimum 0, NJE both ways, {elapsed:.0?}")
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------- criterion 2

fn district() -> Verdict {
    let mut d = three_school_district();
    let names = |d: &fairshare_core::schoolchoice::District| -> Vec<String> {
        deferred_acceptance(d)
            .map(|m| {
                m.assignment
                    .iter()
                    .map(|a| a.map_or("-".to_string(), |k| d.schools[k].name.clone()))
                    .collect()
            })
            .unwrap_or_default()
    };
    let before = names(&d);
    d.schools[0].priority = Some(vec!["1".into(), "3".into(), "2".into()]);
    let after = names(&d);
    verdict(
        before == ["b", "a", "c"] && after == ["c", "b", "a"],
        format!("before {before:?}, after the priority swap {after:?}"),
    )
}

// ---------------------------------------------------------------- criterion 3

fn kkm_instances() -> Vec<(String, AllocationProblem)> {
    let mut out = vec![("five-agent".to_string(), five_agent_problem())];
    for s in 0..50u64 {
        let n = 2 + (s % 4) as usize;
        let l = 2 + ((s / 4) % 3) as usize;
        out.push((format!("seed {s} n{n} l{l}"), unit_demand_instance(s, n, l).problem));
    }
    out
}

fn kkm_certification() -> Verdict {
    let eps = rat(1, 100);
    let cfg = run_config(&eps);
    let instances = kkm_instances();
    let mut certified = 0;
    let mut bad = Vec::new();
    let mut failed = Vec::new();
    let mut worst = Duration::ZERO;
    for (name, p) in &instances {
        let started = Instant::now();
        let res = kkm_search(p, None, &cfg);
        worst = worst.max(started.elapsed());
        match res {
            Ok(c) => match audit(&c.allocation, p, None, &eps) {
                // independent re-audit of the returned allocation
                Ok(r) if r.passes_eps() && c.audit.passes_eps() => certified += 1,
                Ok(_) => bad.push(name.clone()),
                Err(e) => bad.push(format!("{name}: {e}")),
            },
            Err(e) => failed.push(format!("{name}: {e}")),
        }
    }
    let rate = certified as f64 / instances.len() as f64;
    let mut detail = format!(
        "{certified}/{} certified eps-IR, eps-PO, eps-NJE at eps=1/100 ({:.1}%), worst {worst:.1?}",
        instances.len(),
        100.0 * rate
    );
    if !failed.is_empty() {
        detail += &format!("; uncertified: {}", failed.join(", "));
    }
    if !bad.is_empty() {
        detail += &format!("; certificates failing re-audit: {}", bad.join(", "));
    }
    verdict(
        rate >= 0.95 && bad.is_empty() && worst < Duration::from_secs(600),
        detail,
    )
}

// ---------------------------------------------------------------- criterion 4

fn market_equilibria() -> Verdict {
    let cfg = MarketConfig::default();
    let mut tol = cfg.tolerances;
    tol.tol_clear = 1e-6;
    tol.tol_budget = 1e-8;
    let mut lines = Vec::new();
    let mut all = true;
    for (class, make) in [
        ("large caps", large_cap_instance as fn(u64, usize, usize) -> _),
        ("common favorite", common_favorite_instance),
    ] {
        let mut ok = 0;
        let mut failures = Vec::new();
        for s in 0..50u64 {
            let n = 2 + (s % 4) as usize;
            let l = 2 + ((s / 4) % 3) as usize;
            let p = make(500 + s, n, l).problem;
            let res =
                solve_equilibrium(&p, &cfg).and_then(|eq| verify_equilibrium(&eq.price, &eq.allocation, &p, &tol));
            match res {
                Ok(v) if v.passes && v.ir_ok && v.nje_ok && v.po_ok => ok += 1,
                Ok(v) => failures.push(format!("seed {s}: {}", v.failures.join(" / "))),
                Err(e) => failures.push(format!("seed {s}: {e}")),
            }
        }
        all &= failures.is_empty();
        let mut line = format!("{class} {ok}/50");
        if !failures.is_empty() {
            line += &format!(" [{}]", failures.join("; "));
        }
        lines.push(line);
    }
    verdict(
        all,
        format!(
            "{} verified at tol_clear 1e-6, tol_budget 1e-8 with exact audits",
            lines.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- criterion 5

fn median(lo: &Rational, m: &Rational, hi: &Rational) -> Rational {
    m.clone().max(lo.clone()).min(hi.clone())
}

fn income_identities() -> Verdict {
    let mut violations = [0usize; 4];
    let mut r = rng(77);
    let mut pairs = 0;
    let gens = [
        unit_demand_instance,
        large_cap_instance,
        common_favorite_instance,
        clone_instance,
    ];
    while pairs < 1000 {
        let k = pairs / 10;
        let n = 2 + r.gen_range(0..7);
        let l = 2 + r.gen_range(0..4);
        let p = gens[k % gens.len()](9000 + k as u64, n, l).problem;
        for _ in 0..10 {
            pairs += 1;
            let price = random_price(&mut r, l, 24);
            let s = match income_schedule(&price, &MarketData::<Rational>::new(&p)) {
                Ok(s) => s,
                Err(_) => {
                    violations[0] += 1;
                    continue;
                }
            };
            // p.Q recomputed here, incomes summed here
            let value: Rational = price.iter().zip(&p.capacities).map(|(a, b)| a * b).sum();
            let total: Rational = s.incomes.iter().sum();
            if total != value {
                violations[0] += 1;
            }
            if (0..n).any(|i| s.e_res[i] > s.incomes[i]) {
                violations[1] += 1;
            }
            // income envy: a poorer unsatiated agent only faces richer agents held at their reservation cost
            let envy_ok = (0..n).all(|i| {
                (0..n).all(|j| {
                    i == j || !(s.incomes[i] < s.incomes[j] && s.incomes[i] < s.e_sat[i]) || s.incomes[j] == s.e_res[j]
                })
            });
            if !envy_ok || envy_ok != income_envy_violations(&s).is_empty() {
                violations[2] += 1;
            }
            let top = s.e_sat.iter().cloned().fold(value.clone(), Rational::max);
            let grid: Vec<Rational> = (0..100).map(|t| top.clone() * rat(t, 99)).collect();
            let own: Vec<Rational> = grid
                .iter()
                .map(|m| (0..n).map(|i| median(&s.e_res[i], m, &s.e_sat[i])).sum::<Rational>() - &value)
                .collect();
            let theirs: Vec<Rational> = grid.iter().map(|m| phi(m, &s.e_res, &s.e_sat, &s.value)).collect();
            if own != theirs || own.windows(2).any(|w| w[0] > w[1]) {
                violations[3] += 1;
            }
        }
    }
    verdict(
        violations.iter().all(|&v| v == 0),
        format!(
            "{pairs} pairs: identity {} / floor {} / income envy {} / monotone schedule {} violations",
            violations[0], violations[1], violations[2], violations[3]
        ),
    )
}

// ---------------------------------------------------------------- criterion 6

/// min p.x s.t. v.x >= target, sum x <= cap, x >= 0, by the simplex.
fn lp_expenditure(v: &[Rational], cap: &Rational, price: &[Rational], target: &Rational) -> Option<Rational> {
    let l = v.len();
    let mut lp = LinearProgram::<Rational>::new(l);
    lp.add_row((0..l).map(|k| (k, v[k].clone())).collect(), Sense::Ge, target.clone());
    lp.add_row((0..l).map(|k| (k, int(1))).collect(), Sense::Le, cap.clone());
    for (k, pk) in price.iter().enumerate() {
        lp.set_objective(k, -pk.clone());
    }
    lp.solve().ok().map(|s| -s.objective)
}

/// max v.x s.t. p.x <= m, sum x <= cap, x >= 0.
fn lp_demand_value(v: &[Rational], cap: &Rational, price: &[Rational], m: &Rational) -> Option<Rational> {
    let l = v.len();
    let mut lp = LinearProgram::<Rational>::new(l);
    lp.add_row((0..l).map(|k| (k, price[k].clone())).collect(), Sense::Le, m.clone());
    lp.add_row((0..l).map(|k| (k, int(1))).collect(), Sense::Le, cap.clone());
    for (k, vk) in v.iter().enumerate() {
        lp.set_objective(k, vk.clone());
    }
    lp.solve().ok().map(|s| s.objective)
}

/// Grid points of {x >= 0, sum x <= cap} with step cap/steps.
fn grid_points(l: usize, steps: i64) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..l {
        out = out
            .into_iter()
            .flat_map(|pt: Vec<i64>| {
                let used: i64 = pt.iter().sum();
                (0..=steps - used).map(move |t| {
                    let mut q = pt.clone();
                    q.push(t);
                    q
                })
            })
            .collect();
    }
    out
}

fn expenditure_and_demand() -> Verdict {
    let mut r = rng(606);
    let mut problems = Vec::new();
    let mut worst = 0f64;
    for t in 0..500 {
        let l = 2 + r.gen_range(0..4);
        let v: Vec<Rational> = (0..l).map(|_| int(r.gen_range(0..=9))).collect();
        let v = if v.iter().all(Zero::is_zero) {
            vec![int(1); l]
        } else {
            v
        };
        let cap = rat(r.gen_range(1..=8), r.gen_range(1..=3));
        let price = random_price(&mut r, l, 30);
        let sat = satiation_value(&v, &cap);
        let target = sat.clone() * rat(r.gen_range(0..=20), 20);
        let m = rat(r.gen_range(0..=40), 10);

        let exact = expenditure(&v, &cap, &price, &target);
        let oracle = lp_expenditure(&v, &cap, &price, &target);
        match (&exact, &oracle) {
            (Ok(a), Some(b)) if a == b => {}
            _ => problems.push(format!("triple {t}: exact expenditure {exact:?} vs {oracle:?}")),
        }
        let vf: Vec<f64> = v.iter().map(f).collect();
        let pf: Vec<f64> = price.iter().map(f).collect();
        if let (Ok(e), Some(b)) = (expenditure(&vf, &f(&cap), &pf, &f(&target)), &oracle) {
            let gap = (e - f(b)).abs();
            worst = worst.max(gap);
            if gap > 1e-9 {
                problems.push(format!("triple {t}: float expenditure off by {gap:e}"));
            }
        } else {
            problems.push(format!("triple {t}: float expenditure failed"));
        }

        let best = lp_demand_value(&v, &cap, &price, &m);
        let x = demand(&v, &cap, &price, &m);
        match (&x, &best) {
            (Ok(x), Some(best)) => {
                let u: Rational = x.iter().zip(&v).map(|(a, b)| a * b).sum();
                let cost: Rational = x.iter().zip(&price).map(|(a, b)| a * b).sum();
                let load: Rational = x.iter().sum();
                if &u != best || cost > m || load > cap || x.iter().any(Signed::is_negative) {
                    problems.push(format!("triple {t}: demand {x:?} utility {u} vs {best}"));
                }
            }
            _ => problems.push(format!("triple {t}: demand {x:?} vs {best:?}")),
        }
        if let (Ok(xf), Some(best)) = (demand(&vf, &f(&cap), &pf, &f(&m)), &best) {
            let u: f64 = xf.iter().zip(&vf).map(|(a, b)| a * b).sum();
            let gap = (u - f(best)).abs();
            worst = worst.max(gap);
            if gap > 1e-9 {
                problems.push(format!("triple {t}: float demand utility off by {gap:e}"));
            }
        }

        // grid: no feasible grid bundle beats the oracles
        if l <= 3 {
            let steps = 12;
            for g in grid_points(l, steps) {
                let xg: Vec<Rational> = g.iter().map(|&k| cap.clone() * rat(k, steps)).collect();
                let u: Rational = xg.iter().zip(&v).map(|(a, b)| a * b).sum();
                let c: Rational = xg.iter().zip(&price).map(|(a, b)| a * b).sum();
                if u >= target && oracle.as_ref().is_some_and(|e| &c < e) {
                    problems.push(format!("triple {t}: grid bundle cheaper than the oracle"));
                    break;
                }
                if c <= m && best.as_ref().is_some_and(|b| &u > b) {
                    problems.push(format!("triple {t}: grid bundle beats the demand oracle"));
                    break;
                }
            }
        }
    }
    let n = problems.len();
    problems.truncate(5);
    verdict(
        n == 0,
        format!(
            "500 triples, exact expenditure equal to the LP optimum, worst float gap {worst:.1e}, {n} mismatches{}",
            if n > 0 {
                format!(" [{}]", problems.join("; "))
            } else {
                String::new()
            }
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn decomposition() -> Verdict {
    let mut problems = Vec::new();
    let mut most = 0usize;
    for s in 0..100u64 {
        let mut r = rng(s);
        let n = r.gen_range(2..=7);
        let l = r.gen_range(1..=5);
        let (p, x) = unit_demand_allocation(3000 + s, n, l);
        let lot = match bvn_decompose(&x, &p, None) {
            Ok(lot) => lot,
            Err(e) => {
                problems.push(format!("seed {s}: {e}"));
                continue;
            }
        };
        let (n, l) = (p.num_agents(), p.num_objects());
        let mut sum = Allocation::zeros(n, l);
        let mut weight = Rational::zero();
        let feasible = lot.atoms.iter().all(|a| {
            weight += &a.weight;
            for (row, arow) in sum.rows.iter_mut().zip(&a.assignment.rows) {
                for (c, v) in row.iter_mut().zip(arow) {
                    *c += a.weight.clone() * v;
                }
            }
            let rows = &a.assignment.rows;
            a.weight.is_positive()
                && rows.iter().flatten().all(|v| v.is_zero() || v.is_one())
                && rows.iter().all(|row| row.iter().sum::<Rational>() <= int(1))
                && (0..l).all(|k| rows.iter().map(|row| row[k].clone()).sum::<Rational>() <= p.capacities[k])
        });
        most = most.max(lot.atoms.len());
        if sum != x {
            problems.push(format!("seed {s}: reconstruction differs"));
        }
        if !weight.is_one() {
            problems.push(format!("seed {s}: weights sum to {weight}"));
        }
        if !feasible {
            problems.push(format!("seed {s}: infeasible atom"));
        }
        if lot.atoms.len() > x.nnz() {
            problems.push(format!("seed {s}: {} atoms > nnz {}", lot.atoms.len(), x.nnz()));
        }
    }
    verdict(
        problems.is_empty(),
        format!(
            "100 allocations, exact reconstruction, unit weight, feasible atoms, at most nnz atoms (max {most}){}",
            if problems.is_empty() {
                String::new()
            } else {
                format!(" [{}]", problems.join("; "))
            }
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

fn equal_treatment() -> Verdict {
    let eps = rat(1, 100);
    let cfg = run_config(&eps);
    let mut ok = 0;
    let mut problems = Vec::new();
    let mut widest = Rational::zero();
    for s in 0..50u64 {
        let n = 2 + (s % 4) as usize;
        let l = 2 + ((s / 4) % 3) as usize;
        let p = clone_instance(700 + s, n, l).problem;
        match kkm_search(&p, None, &cfg) {
            Ok(c) => {
                let u = c.allocation.utilities(&p);
                let mut fine = true;
                for i in 0..n {
                    for j in i + 1..n {
                        let (a, b) = (&p.agents[i], &p.agents[j]);
                        if a.utility == b.utility && a.cap == b.cap && a.reservation == b.reservation {
                            let gap = (u[i].clone() - &u[j]).abs();
                            fine &= gap <= eps;
                            widest = widest.max(gap);
                        }
                    }
                }
                if fine {
                    ok += 1;
                } else {
                    problems.push(format!("seed {s}"));
                }
            }
            Err(e) => problems.push(format!("seed {s}: {e}")),
        }
    }
    verdict(
        ok == 50,
        format!(
            "{ok}/50 clone instances with clone utilities within eps=1/100 (widest gap {}){}",
            f(&widest),
            if problems.is_empty() {
                String::new()
            } else {
                format!(" [{}]", problems.join("; "))
            }
        ),
    )
}

fn main() {
    // `cargo test -- --list` and similar probes expect no work
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let criteria: [Criterion; 8] = [
        ("five-agent audit", five_agent_audit),
        ("district deferred acceptance", district),
        ("welfare-weight certification", kkm_certification),
        ("market equilibria", market_equilibria),
        ("income identities", income_identities),
        ("expenditure and demand", expenditure_and_demand),
        ("lottery decomposition", decomposition),
        ("equal treatment of clones", equal_treatment),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let v = run();
        failed += usize::from(!v.pass);
        println!(
            "criterion {}: {} {name}: {} ({:.1?})",
            k + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            started.elapsed()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
