//! Expenditure, demand and price-dependent incomes for linear utilities with
//! consumption caps, plus the equilibrium search and its verification.
//!
//! Every formula is generic over [`Scalar`], so the same code runs in `f64`
//! inside the search and in exact rationals for certification.

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AllocationProblem;
use crate::num::{Rational, Scalar};

mod equilibrium;

pub use equilibrium::{
    detect_hypotheses, solve_equilibrium, verify_equilibrium, Equilibrium, EquilibriumVerdict, Hypotheses,
    IncomeReport, MarketConfig, SearchStats,
};

/// Problem data converted to the working scalar.
#[derive(Debug, Clone)]
pub struct MarketData<T> {
    pub values: Vec<Vec<T>>,
    pub caps: Vec<T>,
    pub supply: Vec<T>,
    pub reservations: Vec<T>,
}

impl<T: Scalar> MarketData<T> {
    pub fn new(p: &AllocationProblem) -> Self {
        let conv = |v: &[Rational]| v.iter().map(T::from_rational).collect::<Vec<T>>();
        Self {
            values: p.agents.iter().map(|a| conv(&a.utility.values)).collect(),
            caps: p.agents.iter().map(|a| T::from_rational(&a.cap)).collect(),
            supply: conv(&p.capacities),
            reservations: p.agents.iter().map(|a| T::from_rational(&a.reservation)).collect(),
        }
    }

    pub fn num_agents(&self) -> usize {
        self.values.len()
    }

    pub fn num_objects(&self) -> usize {
        self.supply.len()
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + x.clone() * y)
}

fn max_of<T: Scalar>(v: &[T]) -> T {
    v.iter().cloned().fold(T::zero(), |m, x| if x > m { x } else { m })
}

fn clamp0<T: Scalar>(x: T) -> T {
    if x.is_neg() || x < T::zero() && !T::EXACT {
        T::zero()
    } else {
        x
    }
}

/// `sup u(C) = cap * max_l v_l`.
pub fn satiation_value<T: Scalar>(values: &[T], cap: &T) -> T {
    max_of(values) * cap
}

/// Cheapest bundle reaching utility `target`: `min p.x` over `{v.x >= target, sum x <= cap, x >= 0}`.
///
/// The program has two structural constraints, so some optimal vertex has at most two
/// positive coordinates; all candidates are enumerated.
pub fn min_cost_bundle<T: Scalar>(values: &[T], cap: &T, price: &[T], target: &T) -> Result<(T, Vec<T>)> {
    let l = values.len();
    if price.len() != l {
        return Err(Error::Dimension(format!("{} prices for {l} objects", price.len())));
    }
    if !target.is_pos() {
        return Ok((T::zero(), vec![T::zero(); l]));
    }
    let sat = satiation_value(values, cap);
    if (target.clone() - &sat).is_pos() {
        return Err(Error::UnreachableTarget {
            target: format!("{:.6}", target.as_f64()),
            satiation: format!("{:.6}", sat.as_f64()),
        });
    }
    let target = if target > &sat { sat } else { target.clone() };
    let mut best: Option<(T, Vec<T>)> = None;
    let mut offer = |cost: T, x: Vec<T>| {
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, x));
        }
    };
    for a in 0..l {
        if !values[a].is_pos() {
            continue;
        }
        let xa = target.clone() / &values[a];
        if (xa.clone() - cap).is_pos() {
            continue;
        }
        let xa = if xa > *cap { cap.clone() } else { xa };
        let mut x = vec![T::zero(); l];
        x[a] = xa.clone();
        offer(price[a].clone() * &xa, x);
    }
    for a in 0..l {
        for b in (a + 1)..l {
            let dv = values[a].clone() - &values[b];
            if dv.is_zeroish() {
                continue;
            }
            let xa = (target.clone() - values[b].clone() * cap) / dv;
            let xb = cap.clone() - &xa;
            if xa.is_neg() || xb.is_neg() {
                continue;
            }
            let (xa, xb) = (clamp0(xa), clamp0(xb));
            let cost = price[a].clone() * &xa + price[b].clone() * &xb;
            let mut x = vec![T::zero(); l];
            x[a] = xa;
            x[b] = xb;
            offer(cost, x);
        }
    }
    best.ok_or_else(|| Error::NonConvergence("no bundle reaches a reachable target".into()))
}

/// `e(target, p)`.
pub fn expenditure<T: Scalar>(values: &[T], cap: &T, price: &[T], target: &T) -> Result<T> {
    Ok(min_cost_bundle(values, cap, price, target)?.0)
}

/// Demand at income `m`: the cheapest satiating bundle when `m` covers satiation,
/// otherwise a utility-maximizing vertex of the budget set (ties: cheaper, then lower index).
pub fn demand<T: Scalar>(values: &[T], cap: &T, price: &[T], m: &T) -> Result<Vec<T>> {
    let l = values.len();
    let sat = satiation_value(values, cap);
    let (e_sat, sat_bundle) = min_cost_bundle(values, cap, price, &sat)?;
    if !(e_sat.clone() - m).is_pos() {
        return Ok(sat_bundle);
    }
    let mut best: (T, T, Vec<T>) = (T::zero(), T::zero(), vec![T::zero(); l]);
    let mut offer = |x: Vec<T>| {
        let u = dot(values, &x);
        let c = dot(price, &x);
        if u > best.0 || (u == best.0 && c < best.1) {
            best = (u, c, x);
        }
    };
    for a in 0..l {
        let mut x = vec![T::zero(); l];
        x[a] = if (price[a].clone() * cap - m).is_pos() {
            m.clone() / &price[a]
        } else {
            cap.clone()
        };
        offer(x);
    }
    for a in 0..l {
        for b in (a + 1)..l {
            let dp = price[a].clone() - &price[b];
            if dp.is_zeroish() {
                continue;
            }
            let xa = (m.clone() - price[b].clone() * cap) / dp;
            let xb = cap.clone() - &xa;
            if xa.is_neg() || xb.is_neg() {
                continue;
            }
            let mut x = vec![T::zero(); l];
            x[a] = clamp0(xa);
            x[b] = clamp0(xb);
            offer(x);
        }
    }
    Ok(best.2)
}

/// Utility of any demanded bundle at income `m`.
pub fn demand_utility<T: Scalar>(values: &[T], cap: &T, price: &[T], m: &T) -> Result<T> {
    Ok(dot(values, &demand(values, cap, price, m)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Satiating everyone costs less than the value of supply.
    Surplus,
    /// Incomes are medians at the common level solving `phi(m, p) = 0`.
    Root,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncomeSchedule<T> {
    pub price: Vec<T>,
    /// `e(reservation, p)` per agent.
    pub e_res: Vec<T>,
    /// `e(satiation, p)` per agent.
    pub e_sat: Vec<T>,
    pub incomes: Vec<T>,
    pub regime: Regime,
    pub root: Option<T>,
    /// `p . Q`.
    pub value: T,
}

fn median3<T: Scalar>(lo: &T, m: &T, hi: &T) -> T {
    // lo <= hi always holds for expenditures
    if m < lo {
        lo.clone()
    } else if m > hi {
        hi.clone()
    } else {
        m.clone()
    }
}

/// `phi(m, p) = sum_i median(e_res, m, e_sat) - p.Q`.
pub fn phi<T: Scalar>(m: &T, e_res: &[T], e_sat: &[T], value: &T) -> T {
    e_res
        .iter()
        .zip(e_sat)
        .fold(T::zero(), |acc, (lo, hi)| acc + median3(lo, m, hi))
        - value
}

fn expenditures<T: Scalar>(data: &MarketData<T>, price: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    let mut e_res = Vec::with_capacity(data.num_agents());
    let mut e_sat = Vec::with_capacity(data.num_agents());
    for i in 0..data.num_agents() {
        let v = &data.values[i];
        let c = &data.caps[i];
        e_res.push(expenditure(v, c, price, &data.reservations[i])?);
        e_sat.push(expenditure(v, c, price, &satiation_value(v, c))?);
    }
    Ok((e_res, e_sat))
}

fn check_price<T: Scalar>(price: &[T], l: usize) -> Result<()> {
    if price.len() != l {
        return Err(Error::Dimension(format!("{} prices for {l} objects", price.len())));
    }
    if price.iter().any(|x| x.is_neg()) {
        return Err(Error::Domain("negative price".into()));
    }
    Ok(())
}

fn assemble<T: Scalar>(
    data: &MarketData<T>,
    price: &[T],
    root_of: impl FnOnce(&[T], &[T], &T) -> T,
) -> Result<IncomeSchedule<T>> {
    check_price(price, data.num_objects())?;
    let (e_res, e_sat) = expenditures(data, price)?;
    let value = dot(price, &data.supply);
    let n = data.num_agents();
    let total_res = e_res.iter().fold(T::zero(), |a, b| a + b);
    if (total_res - &value).is_pos() {
        return Err(Error::Precondition(
            "reservation expenditures exceed the value of supply; no IR allocation".into(),
        ));
    }
    let total_sat = e_sat.iter().fold(T::zero(), |a, b| a + b);
    if total_sat < value && (value.clone() - &total_sat).is_pos() {
        let share = (value.clone() - total_sat) / T::from_i64(n as i64);
        let incomes = e_sat.iter().map(|e| e.clone() + &share).collect();
        return Ok(IncomeSchedule {
            price: price.to_vec(),
            e_res,
            e_sat,
            incomes,
            regime: Regime::Surplus,
            root: None,
            value,
        });
    }
    let root = root_of(&e_res, &e_sat, &value);
    let incomes = e_res
        .iter()
        .zip(&e_sat)
        .map(|(lo, hi)| median3(lo, &root, hi))
        .collect();
    Ok(IncomeSchedule {
        price: price.to_vec(),
        e_res,
        e_sat,
        incomes,
        regime: Regime::Root,
        root: Some(root),
        value,
    })
}

/// Exact incomes. The root of the piecewise-linear `phi(., p)` is located between
/// consecutive breakpoints and found by linear interpolation.
pub fn income_schedule(price: &[Rational], data: &MarketData<Rational>) -> Result<IncomeSchedule<Rational>> {
    assemble(data, price, |e_res, e_sat, value| {
        let mut pts: Vec<Rational> = std::iter::once(Rational::zero())
            .chain(e_res.iter().cloned())
            .chain(e_sat.iter().cloned())
            .collect();
        pts.sort();
        pts.dedup();
        let mut prev: Option<(Rational, Rational)> = None;
        for b in pts {
            let f = phi(&b, e_res, e_sat, value);
            if f >= Rational::zero() {
                return match prev {
                    None => b,
                    Some((a, fa)) => a.clone() + (-fa.clone()) * (b - &a) / (f - fa),
                };
            }
            prev = Some((b, f));
        }
        // phi(max e_sat) = sum e_sat - p.Q >= 0 outside the surplus regime
        unreachable!("phi has no sign change below the largest breakpoint")
    })
}

/// Floating incomes by bisection on `[0, p.Q + max e_sat]` to width `tol_root`.
pub fn income_schedule_f64(price: &[f64], data: &MarketData<f64>, tol_root: f64) -> Result<IncomeSchedule<f64>> {
    assemble(data, price, |e_res, e_sat, value| {
        let mut lo = 0.0;
        let mut hi = value + e_sat.iter().cloned().fold(0.0, f64::max);
        if phi(&lo, e_res, e_sat, value) >= 0.0 {
            return lo;
        }
        for _ in 0..200 {
            if hi - lo <= tol_root {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if phi(&mid, e_res, e_sat, value) >= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    })
}

/// Income envy predicate: `m^i < min(m^j, e_sat^i)` implies `m^j = e_res^j`.
/// Returns the violating pairs.
pub fn income_envy_violations<T: Scalar>(s: &IncomeSchedule<T>) -> Vec<(usize, usize)> {
    let n = s.incomes.len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mi = &s.incomes[i];
            if mi < &s.incomes[j] && mi < &s.e_sat[i] && !(s.incomes[j].clone() - &s.e_res[j]).is_zeroish() {
                out.push((i, j));
            }
        }
    }
    out
}

/// `z = sum_i demand(i, p, m^i(p)) - Q` for the selection made by [`demand`].
pub fn excess_demand<T: Scalar>(data: &MarketData<T>, s: &IncomeSchedule<T>) -> Result<Vec<T>> {
    let mut z: Vec<T> = data.supply.iter().map(|q| -q.clone()).collect();
    for i in 0..data.num_agents() {
        let x = demand(&data.values[i], &data.caps[i], &s.price, &s.incomes[i])?;
        for (zl, xl) in z.iter_mut().zip(x) {
            *zl = zl.clone() + xl;
        }
    }
    Ok(z)
}
