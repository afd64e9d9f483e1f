//! Equilibrium search: a floating residual guides tâtonnement and pattern search
//! over the price simplex; candidate prices are snapped to rationals and the
//! allocation is certified by exact linear programs and audits.

use num_traits::{One, Signed, Zero};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{demand_utility, income_schedule, income_schedule_f64, IncomeSchedule, MarketData, Regime};
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::fairness::{audit, check_pareto, FairnessReport, ParetoModeSpec};
use crate::lp::{LinearProgram, LpError, Sense};
use crate::model::{
    add_allocation_rows, allocation_from_solution, ir_feasible, validate_problem, var, Allocation, AllocationProblem,
};
use crate::num::{format_rational, limit_denominator, rat, rat_to_f64, round_to_grid, Rational};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypotheses {
    /// `sum q_l < min_i c^i`.
    pub large_caps: bool,
    /// Object that is every agent's unique favorite.
    pub common_favorite: Option<usize>,
    /// Some IR allocation gives every agent a positive amount of every object.
    pub positive_ir_witness: bool,
}

impl Hypotheses {
    pub fn holds(&self) -> bool {
        self.large_caps || (self.common_favorite.is_some() && self.positive_ir_witness)
    }

    pub fn label(&self) -> &'static str {
        if self.large_caps {
            "large-caps"
        } else if self.common_favorite.is_some() && self.positive_ir_witness {
            "common-favorite"
        } else {
            "none"
        }
    }
}

pub fn detect_hypotheses(p: &AllocationProblem) -> Result<Hypotheses> {
    let min_cap = p
        .agents
        .iter()
        .map(|a| a.cap.clone())
        .min()
        .unwrap_or_else(Rational::zero);
    let large_caps = p.total_supply() < min_cap;
    let favs: Vec<Vec<usize>> = p.agents.iter().map(|a| a.utility.favorites()).collect();
    let common_favorite = match favs.first() {
        Some(f) if f.len() == 1 && favs.iter().all(|g| g == f) => Some(f[0]),
        _ => None,
    };
    // maximize t subject to IR and x^i_l >= t
    let n = p.num_agents();
    let l = p.num_objects();
    let mut lp = LinearProgram::<Rational>::new(n * l);
    add_allocation_rows(&mut lp, p, None);
    crate::model::add_utility_floor_rows(&mut lp, p, &p.reservations());
    let t = lp.add_var();
    for i in 0..n {
        for k in 0..l {
            lp.add_row(
                vec![(var(i, k, l), Rational::one()), (t, -Rational::one())],
                Sense::Ge,
                Rational::zero(),
            );
        }
    }
    lp.add_row(vec![(t, Rational::one())], Sense::Le, Rational::one());
    lp.set_objective(t, Rational::one());
    let positive_ir_witness = match lp.solve() {
        Ok(sol) => sol.objective.is_positive(),
        Err(LpError::Infeasible) => false,
        Err(e) => return Err(e.into()),
    };
    Ok(Hypotheses {
        large_caps,
        common_favorite,
        positive_ir_witness,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketConfig {
    pub tolerances: Tolerances,
    pub seed: u64,
    /// Tâtonnement starts: the barycenter, then seeded random prices.
    pub starts: usize,
    pub tatonnement_steps: usize,
    pub step0: f64,
    pub step_decay: f64,
    /// Resolution of the simplex sweep used when `L <= 4`.
    pub grid: usize,
    /// Sweep points refined by pattern search.
    pub sweep_refine: usize,
    /// Floating residual at which pattern search stops.
    pub residual_target: f64,
    /// Floating residual below which a price is sent to exact certification.
    pub attempt_residual: f64,
    pub max_evaluations: usize,
    /// Rounds of proportional response used to seed the search.
    pub response_rounds: usize,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            tolerances: Tolerances::default(),
            seed: 0,
            starts: 4,
            tatonnement_steps: 120,
            step0: 0.5,
            step_decay: 20.0,
            grid: 12,
            sweep_refine: 6,
            residual_target: 1e-12,
            attempt_residual: 1e-5,
            max_evaluations: 60_000,
            response_rounds: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncomeReport {
    #[serde(with = "crate::num::serde_rational::vec")]
    pub e_res: Vec<Rational>,
    #[serde(with = "crate::num::serde_rational::vec")]
    pub e_sat: Vec<Rational>,
    #[serde(with = "crate::num::serde_rational::vec")]
    pub incomes: Vec<Rational>,
    pub regime: Regime,
    #[serde(with = "crate::num::serde_rational::option", default)]
    pub root: Option<Rational>,
    #[serde(with = "crate::num::serde_rational")]
    pub value: Rational,
}

impl From<&IncomeSchedule<Rational>> for IncomeReport {
    fn from(s: &IncomeSchedule<Rational>) -> Self {
        Self {
            e_res: s.e_res.clone(),
            e_sat: s.e_sat.clone(),
            incomes: s.incomes.clone(),
            regime: s.regime,
            root: s.root.clone(),
            value: s.value.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    /// Start index (`None` when found by the sweep).
    pub start: Option<usize>,
    pub evaluations: usize,
    /// Floating residual at the candidate price.
    pub residual: f64,
    /// How the floating price was turned into a rational one.
    pub price_rounding: String,
    /// Demand shortfall allowed in the certifying program.
    pub demand_slack: f64,
    /// Budget overshoot allowed in the certifying program.
    pub budget_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    #[serde(with = "crate::num::serde_rational::vec")]
    pub price: Vec<Rational>,
    pub allocation: Allocation,
    pub incomes: IncomeReport,
    pub hypotheses: Hypotheses,
    pub search: SearchStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumVerdict {
    pub clearing_residual: f64,
    pub budget_excess: Vec<f64>,
    pub optimality_gaps: Vec<f64>,
    pub clearing_ok: bool,
    pub budget_ok: bool,
    pub optimality_ok: bool,
    pub ir_ok: bool,
    pub nje_ok: bool,
    pub po_ok: bool,
    pub passes: bool,
    pub failures: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit: Option<FairnessReport>,
}

/// Checks clearing, budgets and demand optimality at the stated tolerances, then
/// runs the exact IR, justified-envy and Pareto audits.
pub fn verify_equilibrium(
    price: &[Rational],
    x: &Allocation,
    p: &AllocationProblem,
    tol: &Tolerances,
) -> Result<EquilibriumVerdict> {
    let data = MarketData::<Rational>::new(p);
    let s = income_schedule(price, &data)?;
    let mut failures = Vec::new();
    let clearing = x
        .column_sums()
        .iter()
        .zip(&p.capacities)
        .map(|(a, b)| rat_to_f64(&(a - b).abs()))
        .fold(0.0, f64::max);
    let clearing_ok = x.rows.len() == p.num_agents() && clearing <= tol.tol_clear;
    if !clearing_ok {
        failures.push(format!("clearing residual {clearing:.3e}"));
    }
    let mut budget_excess = Vec::new();
    let mut optimality_gaps = Vec::new();
    for (i, row) in x.rows.iter().enumerate() {
        let spend: Rational = row.iter().zip(price).map(|(a, b)| a * b).sum();
        let ex = rat_to_f64(&(spend - &s.incomes[i]));
        budget_excess.push(ex);
        if ex > tol.tol_budget {
            failures.push(format!("agent {} overspends by {ex:.3e}", i + 1));
        }
        let d = demand_utility(&data.values[i], &data.caps[i], price, &s.incomes[i])?;
        let gap = rat_to_f64(&(d - p.agents[i].utility.eval(row)));
        optimality_gaps.push(gap);
        if gap > tol.tol_opt {
            failures.push(format!("agent {} falls {gap:.3e} short of demand", i + 1));
        }
    }
    let budget_ok = budget_excess.iter().all(|&e| e <= tol.tol_budget);
    let optimality_ok = optimality_gaps.iter().all(|&g| g <= tol.tol_opt);
    let report = match audit(x, p, None, &Rational::zero()) {
        Ok(r) => Some(r),
        Err(e) => {
            failures.push(format!("audit rejected the allocation: {e}"));
            None
        }
    };
    let (ir_ok, nje_ok, po_ok) = report.as_ref().map_or((false, false, false), |r| {
        (r.ir.passes, r.envy.nje, r.pareto("po").is_some_and(|c| c.passes))
    });
    if report.is_some() {
        for (ok, what) in [
            (ir_ok, "individual rationality"),
            (nje_ok, "no justified envy"),
            (po_ok, "Pareto optimality"),
        ] {
            if !ok {
                failures.push(format!("{what} fails"));
            }
        }
    }
    Ok(EquilibriumVerdict {
        clearing_residual: clearing,
        budget_excess,
        optimality_gaps,
        clearing_ok,
        budget_ok,
        optimality_ok,
        ir_ok,
        nje_ok,
        po_ok,
        passes: failures.is_empty(),
        failures,
        audit: report,
    })
}

struct Probe {
    r: f64,
    z: Vec<f64>,
}

struct FloatMarket<'a> {
    data: MarketData<f64>,
    cfg: &'a MarketConfig,
    evals: usize,
}

impl FloatMarket<'_> {
    /// `min ||sum x - Q||_1 + sum_i w_i s_i` over bundles within budget, where `s_i` is
    /// the shortfall from (nearly) the demand utility and `w_i = 1 / max_k v_ik`.
    /// The value is continuous in the price and vanishes exactly at equilibria.
    fn probe(&mut self, price: &[f64]) -> Option<Probe> {
        self.evals += 1;
        let d = &self.data;
        let s = income_schedule_f64(price, d, self.cfg.tolerances.tol_root).ok()?;
        let n = d.num_agents();
        let l = d.num_objects();
        let mut lp = LinearProgram::<f64>::new(n * l + 2 * l + n);
        let mut floors = Vec::with_capacity(n);
        let plus = |k: usize| n * l + k;
        let minus = |k: usize| n * l + l + k;
        let short = |i: usize| n * l + 2 * l + i;
        for k in 0..l {
            let mut row: Vec<(usize, f64)> = (0..n).map(|i| (var(i, k, l), 1.0)).collect();
            row.push((plus(k), -1.0));
            row.push((minus(k), 1.0));
            lp.add_row(row, Sense::Eq, d.supply[k]);
            lp.set_objective(plus(k), -1.0);
            lp.set_objective(minus(k), -1.0);
        }
        let weights: Vec<f64> = d
            .values
            .iter()
            .map(|v| 1.0 / v.iter().cloned().fold(0.0, f64::max).max(1e-12))
            .collect();
        for i in 0..n {
            lp.add_row((0..l).map(|k| (var(i, k, l), 1.0)).collect(), Sense::Le, d.caps[i]);
            lp.add_row(
                (0..l).map(|k| (var(i, k, l), price[k])).collect(),
                Sense::Le,
                s.incomes[i],
            );
            let target = demand_utility(&d.values[i], &d.caps[i], price, &s.incomes[i]).ok()?;
            floors.push(target - DEMAND_SLACK * (1.0 + target.abs()));
            let mut row: Vec<(usize, f64)> = (0..l).map(|k| (var(i, k, l), d.values[i][k])).collect();
            row.push((short(i), 1.0));
            lp.add_row(row, Sense::Ge, floors[i]);
            lp.set_objective(short(i), -weights[i]);
        }
        let sol = lp.solve().ok()?;
        // The floating simplex can drift; recompute from x and reject anything infeasible.
        let x = &sol.x;
        let tol = 1e-7;
        let mut penalty = 0.0;
        for i in 0..n {
            let row = &x[i * l..(i + 1) * l];
            let amount: f64 = row.iter().sum();
            let spend: f64 = row.iter().zip(price).map(|(a, b)| a * b).sum();
            let u: f64 = row.iter().zip(&d.values[i]).map(|(a, b)| a * b).sum();
            if row.iter().any(|v| !v.is_finite() || *v < -tol)
                || amount > d.caps[i] + tol * (1.0 + d.caps[i])
                || spend > s.incomes[i] + tol * (1.0 + s.incomes[i])
            {
                return None;
            }
            penalty += weights[i] * (floors[i] - u).max(0.0);
        }
        let z: Vec<f64> = (0..l)
            .map(|k| (0..n).map(|i| x[var(i, k, l)].max(0.0)).sum::<f64>() - d.supply[k])
            .collect();
        Some(Probe {
            r: z.iter().map(|v| v.abs()).sum::<f64>() + penalty,
            z,
        })
    }

    fn residual(&mut self, price: &[f64]) -> f64 {
        self.probe(price).map_or(f64::INFINITY, |p| p.r)
    }

    fn exhausted(&self) -> bool {
        self.evals >= self.cfg.max_evaluations
    }
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k as f64 + 1.0);
        if uk - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0)).collect()
}

fn tatonnement(fm: &mut FloatMarket, start: Vec<f64>) -> (Vec<f64>, f64) {
    let mut p = start;
    let mut best = (p.clone(), f64::INFINITY);
    for t in 0..fm.cfg.tatonnement_steps {
        if fm.exhausted() {
            break;
        }
        let Some(pr) = fm.probe(&p) else { break };
        if pr.r < best.1 {
            best = (p.clone(), pr.r);
        }
        if pr.r <= fm.cfg.residual_target {
            break;
        }
        let gamma = fm.cfg.step0 / (1.0 + t as f64 / fm.cfg.step_decay);
        let scale = 1.0 + pr.z.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let y: Vec<f64> = p.iter().zip(&pr.z).map(|(pk, zk)| pk + gamma * zk / scale).collect();
        p = project_simplex(&y);
    }
    best
}

/// Compass search along the edge directions `e_a - e_b` of the simplex. When no
/// edge step helps, a few random tangent directions are tried before shrinking.
fn pattern_search(fm: &mut FloatMarket, rng: &mut ChaCha8Rng, mut p: Vec<f64>, mut r: f64) -> (Vec<f64>, f64) {
    let l = p.len();
    let mut h: f64 = 0.05;
    while h > 1e-15 && r > fm.cfg.residual_target && !fm.exhausted() {
        let mut dirs: Vec<Vec<f64>> = Vec::new();
        for a in 0..l {
            for b in 0..l {
                if a != b {
                    let mut d = vec![0.0; l];
                    d[a] = 1.0;
                    d[b] = -1.0;
                    dirs.push(d);
                }
            }
        }
        for _ in 0..2 * l {
            let mut d: Vec<f64> = (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mean = d.iter().sum::<f64>() / l as f64;
            d.iter_mut().for_each(|v| *v -= mean);
            let top = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if top > 0.0 {
                dirs.push(d.iter().map(|v| v / top).collect());
            }
        }
        let mut improved = false;
        for d in &dirs {
            // largest step up to h that keeps the price nonnegative
            let step = d
                .iter()
                .zip(&p)
                .filter(|(dk, _)| **dk < 0.0)
                .map(|(dk, pk)| pk / -dk)
                .fold(h, f64::min);
            if step <= 0.0 {
                continue;
            }
            let q: Vec<f64> = p.iter().zip(d).map(|(pk, dk)| (pk + step * dk).max(0.0)).collect();
            let mut rq = fm.residual(&q);
            if rq < r {
                // keep extrapolating along the successful move; this follows narrow valleys
                let mut q = q;
                let mut mv: Vec<f64> = q.iter().zip(&p).map(|(a, b)| a - b).collect();
                loop {
                    mv.iter_mut().for_each(|v| *v *= 2.0);
                    let t: Vec<f64> = q.iter().zip(&mv).map(|(a, b)| a + b).collect();
                    if t.iter().any(|v| *v < 0.0) || fm.exhausted() {
                        break;
                    }
                    let rt = fm.residual(&t);
                    if rt >= rq {
                        break;
                    }
                    q = t;
                    rq = rt;
                }
                p = q;
                r = rq;
                improved = true;
                break;
            }
        }
        h = if improved { (h * 2.0).min(0.25) } else { h * 0.5 };
    }
    (p, r)
}

/// Proportional-response dynamics with incomes re-read from the schedule each round.
/// For linear utilities and fixed budgets this converges to the Fisher equilibrium;
/// here it only seeds the residual search.
fn proportional_response(data: &MarketData<f64>, rounds: usize, tol_root: f64) -> Option<Vec<f64>> {
    let n = data.num_agents();
    let l = data.num_objects();
    if data.supply.iter().any(|q| *q <= 0.0) {
        return None;
    }
    let total: f64 = data.supply.iter().sum();
    let mut bids: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..l)
                .map(|k| (data.values[i][k] + 1e-3) / (n as f64 * total))
                .collect()
        })
        .collect();
    let mut price = vec![0.0; l];
    for _ in 0..rounds {
        let spend: Vec<f64> = (0..l).map(|k| bids.iter().map(|b| b[k]).sum()).collect();
        let scale: f64 = spend.iter().zip(&data.supply).map(|(s, q)| s / q).sum();
        if scale.is_nan() || scale <= 0.0 {
            return None;
        }
        for k in 0..l {
            price[k] = spend[k] / data.supply[k] / scale;
        }
        let s = income_schedule_f64(&price, data, tol_root).ok()?;
        for i in 0..n {
            let gains: Vec<f64> = (0..l)
                .map(|k| data.values[i][k] * bids[i][k] * data.supply[k] / spend[k].max(1e-300))
                .collect();
            let u: f64 = gains.iter().sum();
            if u <= 0.0 {
                continue;
            }
            for k in 0..l {
                bids[i][k] = s.incomes[i] * gains[k] / u * scale;
            }
        }
    }
    Some(price)
}

/// Relative slack on the demand-utility floors in the residual program.
const DEMAND_SLACK: f64 = 1e-11;

/// Lattice points of the simplex with denominator `g`.
fn simplex_grid(l: usize, g: usize) -> Vec<Vec<f64>> {
    fn rec(l: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == l - 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for v in 0..=left {
            cur.push(v);
            rec(l, left - v, cur, out);
            cur.pop();
        }
    }
    let mut pts = Vec::new();
    rec(l, g, &mut Vec::new(), &mut pts);
    pts.into_iter()
        .map(|v| v.into_iter().map(|c| c as f64 / g as f64).collect())
        .collect()
}

fn rational_prices(p: &[f64]) -> Vec<(String, Vec<Rational>)> {
    let normalize = |v: Vec<Rational>| -> Option<Vec<Rational>> {
        let s: Rational = v.iter().sum();
        s.is_positive().then(|| v.iter().map(|x| x / &s).collect())
    };
    let mut out = Vec::new();
    for den in [1_000u64, 1_000_000] {
        if let Some(v) = normalize(p.iter().map(|&x| limit_denominator(x.max(0.0), den)).collect()) {
            out.push((format!("nearest rational, denominator <= {den}"), v));
        }
    }
    for den in [1_000_000u64, 1_000_000_000_000] {
        if let Some(v) = normalize(p.iter().map(|&x| round_to_grid(x.max(0.0), den)).collect()) {
            out.push((format!("grid 1/{den}"), v));
        }
    }
    out.dedup_by(|a, b| a.1 == b.1);
    out
}

/// Exact program at a rational price: clearing, caps, budgets, and every agent
/// within `slack` of demand utility and at least at reservation. Extra rows come from `extra`.
fn region_lp(
    p: &AllocationProblem,
    price: &[Rational],
    s: &IncomeSchedule<Rational>,
    floors: &[Rational],
    budget_slack: &Rational,
    extra: &[(Vec<(usize, Rational)>, Sense, Rational)],
) -> Result<Option<Allocation>> {
    let n = p.num_agents();
    let l = p.num_objects();
    let mut lp = LinearProgram::<Rational>::new(n * l);
    add_allocation_rows(&mut lp, p, None);
    for i in 0..n {
        let budget: Vec<(usize, Rational)> = (0..l)
            .filter(|&k| !price[k].is_zero())
            .map(|k| (var(i, k, l), price[k].clone()))
            .collect();
        if !budget.is_empty() {
            lp.add_row(budget, Sense::Le, s.incomes[i].clone() + budget_slack);
        }
        let vals = &p.agents[i].utility.values;
        lp.add_row(
            (0..l)
                .filter(|&k| !vals[k].is_zero())
                .map(|k| (var(i, k, l), vals[k].clone()))
                .collect(),
            Sense::Ge,
            floors[i].clone(),
        );
        for k in 0..l {
            lp.set_objective(var(i, k, l), vals[k].clone());
        }
    }
    for (row, sense, rhs) in extra {
        lp.add_row(row.clone(), *sense, rhs.clone());
    }
    match lp.solve() {
        Ok(sol) => Ok(Some(allocation_from_solution(&sol.x, n, l))),
        Err(LpError::Infeasible) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Rows keeping every non-envious pair envy-free and every unjustified envy unjustified.
fn envy_pattern(p: &AllocationProblem, x: &Allocation) -> Vec<(Vec<(usize, Rational)>, Sense, Rational)> {
    let n = p.num_agents();
    let l = p.num_objects();
    let margin = rat(1, 1_000_000_000);
    let mut rows = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let vj = &p.agents[j].utility.values;
            let accept = vj.iter().zip(&x.rows[i]).map(|(a, b)| a * b).sum::<Rational>();
            let res = &p.agents[j].reservation;
            if accept < *res {
                // u^j(x^i) <= reservation^j - eta keeps the envy unjustified
                let gap = res.clone() - accept;
                let eta = (gap / rat(2, 1)).min(margin.clone());
                rows.push((
                    (0..l).map(|k| (var(i, k, l), vj[k].clone())).collect(),
                    Sense::Le,
                    res.clone() - eta,
                ));
            } else {
                let vi = &p.agents[i].utility.values;
                let mut row: Vec<(usize, Rational)> = Vec::new();
                for k in 0..l {
                    row.push((var(j, k, l), vi[k].clone()));
                    row.push((var(i, k, l), -vi[k].clone()));
                }
                rows.push((row, Sense::Le, Rational::zero()));
            }
        }
    }
    rows
}

/// Pareto-improves `x` by maximizing total utility over allocations that weakly dominate it.
fn pareto_improve(p: &AllocationProblem, x: &Allocation) -> Result<Allocation> {
    let c = check_pareto(x, p, None, ParetoModeSpec::Po)?;
    Ok(c.witness.unwrap_or_else(|| x.clone()))
}

fn certify(
    p: &AllocationProblem,
    price: &[Rational],
    tol: &Tolerances,
) -> Result<Option<(Allocation, IncomeSchedule<Rational>, f64, f64)>> {
    let data = MarketData::<Rational>::new(p);
    let s = match income_schedule(price, &data) {
        Ok(s) => s,
        Err(Error::Precondition(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let n = p.num_agents();
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        targets.push(demand_utility(&data.values[i], &data.caps[i], price, &s.incomes[i])?);
    }
    let verified = |x: &Allocation| -> Result<bool> { Ok(verify_equilibrium(price, x, p, tol)?.passes) };
    // The last stage lets budgets overshoot by a tenth of the verification tolerance,
    // which absorbs the rounding of prices that are not short rationals.
    for (slack, bslack) in [(0.0, 0.0), (tol.tol_opt, 0.0), (tol.tol_opt, tol.tol_budget * 0.1)] {
        let slack_r = Rational::from_float(slack).unwrap_or_else(Rational::zero);
        let bslack_r = Rational::from_float(bslack).unwrap_or_else(Rational::zero);
        let floors: Vec<Rational> = (0..n)
            .map(|i| {
                let f = targets[i].clone() - &slack_r;
                f.max(p.agents[i].reservation.clone())
            })
            .collect();
        let Some(x0) = region_lp(p, price, &s, &floors, &bslack_r, &[])? else {
            continue;
        };
        if verified(&x0)? {
            return Ok(Some((x0, s, slack, bslack)));
        }
        let pattern = envy_pattern(p, &x0);
        let x1 = region_lp(p, price, &s, &floors, &bslack_r, &pattern)?.unwrap_or(x0);
        if verified(&x1)? {
            return Ok(Some((x1, s, slack, bslack)));
        }
        let x2 = pareto_improve(p, &x1)?;
        if verified(&x2)? {
            return Ok(Some((x2, s, slack, bslack)));
        }
    }
    Ok(None)
}

/// Searches for a price and allocation passing [`verify_equilibrium`].
///
/// Failure to find one within the evaluation budget is an error carrying the best
/// residual found; no unverified result is ever returned.
pub fn solve_equilibrium(p: &AllocationProblem, cfg: &MarketConfig) -> Result<Equilibrium> {
    cfg.tolerances.validate()?;
    let report = validate_problem(p);
    if !report.is_valid() {
        return Err(Error::InvalidProblem(report.violations.join("; ")));
    }
    if ir_feasible(p, None)?.is_none() {
        return Err(Error::NoIrAllocation);
    }
    let hypotheses = detect_hypotheses(p)?;
    let l = p.num_objects();
    let mut fm = FloatMarket {
        data: MarketData::<f64>::new(p),
        cfg,
        evals: 0,
    };
    let mut best = (vec![1.0 / l as f64; l], f64::INFINITY);
    let mut tried: Vec<Vec<Rational>> = Vec::new();

    let attempt = |fm: &FloatMarket,
                   price: &[f64],
                   r: f64,
                   start: Option<usize>,
                   tried: &mut Vec<Vec<Rational>>|
     -> Result<Option<Equilibrium>> {
        for (how, pr) in rational_prices(price) {
            if tried.contains(&pr) {
                continue;
            }
            tried.push(pr.clone());
            if let Some((x, s, slack, bslack)) = certify(p, &pr, &cfg.tolerances)? {
                return Ok(Some(Equilibrium {
                    price: pr,
                    allocation: x,
                    incomes: IncomeReport::from(&s),
                    hypotheses: hypotheses.clone(),
                    search: SearchStats {
                        start,
                        evaluations: fm.evals,
                        residual: r,
                        price_rounding: how,
                        demand_slack: slack,
                        budget_slack: bslack,
                    },
                }));
            }
        }
        Ok(None)
    };

    let mut seeds: Vec<(Vec<f64>, Option<usize>)> = Vec::new();
    if let Some(q) = proportional_response(&fm.data, cfg.response_rounds, cfg.tolerances.tol_root) {
        seeds.push((q, None));
    }
    if l <= 4 {
        let mut pts: Vec<(f64, Vec<f64>)> = simplex_grid(l, cfg.grid)
            .into_iter()
            .map(|q| (fm.residual(&q), q))
            .collect();
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        seeds.extend(pts.into_iter().take(cfg.sweep_refine).map(|(_, q)| (q, None)));
    }
    let mut rng = crate::random::rng(cfg.seed);
    for k in 0..cfg.starts.max(1) {
        let start: Vec<f64> = if k == 0 {
            vec![1.0 / l as f64; l]
        } else {
            let w: Vec<f64> = (0..l).map(|_| -rng.gen_range(1e-9f64..1.0).ln()).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        };
        if fm.exhausted() {
            break;
        }
        let (p0, _) = tatonnement(&mut fm, start);
        seeds.push((p0, Some(k)));
    }
    for (q, start) in seeds {
        if fm.exhausted() {
            break;
        }
        let r0 = fm.residual(&q);
        let (p1, r1) = pattern_search(&mut fm, &mut rng, q, r0);
        if r1 < best.1 {
            best = (p1.clone(), r1);
        }
        if r1 <= cfg.attempt_residual {
            if let Some(eq) = attempt(&fm, &p1, r1, start, &mut tried)? {
                return Ok(eq);
            }
        }
    }
    Err(Error::BudgetExhausted(format!(
        "no verified equilibrium after {} evaluations; best residual {:.3e} at price [{}]",
        fm.evals,
        best.1,
        best.0
            .iter()
            .map(|v| format_rational(&limit_denominator(*v, 1_000_000)))
            .collect::<Vec<_>>()
            .join(", ")
    )))
}
