//! Allocation problems, linear utilities and allocations.

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintStructure;
use crate::error::{Error, Result};
use crate::lp::{LinearProgram, Sense};
use crate::num::{dot, rat_to_f64, sum, Rational};

/// vNM values per unit of each object; `u(x) = v . x` on the agent's consumption space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearUtility {
    #[serde(with = "crate::num::serde_rational::vec")]
    pub values: Vec<Rational>,
}

impl LinearUtility {
    pub fn new(values: Vec<Rational>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `v . x` without domain checks.
    pub fn eval(&self, x: &[Rational]) -> Rational {
        dot(&self.values, x)
    }

    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        self.values.iter().zip(x).map(|(v, x)| rat_to_f64(v) * x).sum()
    }

    pub fn max_value(&self) -> Rational {
        self.values.iter().max().cloned().unwrap_or_else(Rational::zero)
    }

    /// Objects attaining the maximal value, in index order.
    pub fn favorites(&self) -> Vec<usize> {
        let m = self.max_value();
        (0..self.values.len()).filter(|&l| self.values[l] == m).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Agent {
    pub name: String,
    pub cap: Rational,
    pub utility: LinearUtility,
    pub reservation: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationProblem {
    pub objects: Vec<String>,
    pub capacities: Vec<Rational>,
    pub agents: Vec<Agent>,
}

/// One row per agent, one column per object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    #[serde(with = "crate::num::serde_rational::matrix")]
    pub rows: Vec<Vec<Rational>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    Strict,
    Weak,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl AllocationProblem {
    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn total_supply(&self) -> Rational {
        sum(&self.capacities)
    }

    pub fn utility(&self, i: usize) -> &LinearUtility {
        &self.agents[i].utility
    }

    pub fn reservations(&self) -> Vec<Rational> {
        self.agents.iter().map(|a| a.reservation.clone()).collect()
    }

    pub fn unit_demand(&self) -> bool {
        self.agents.iter().all(|a| a.cap == Rational::from_integer(1.into()))
    }

    /// Every `v_l > 0` gives strict monotonicity; zero entries are admitted but tagged weak.
    pub fn monotonicity(&self) -> Monotonicity {
        if self
            .agents
            .iter()
            .all(|a| a.utility.values.iter().all(|v| v.is_positive()))
        {
            Monotonicity::Strict
        } else {
            Monotonicity::Weak
        }
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o == name)
    }

    pub fn agent_index(&self, name: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.name == name)
    }

    pub fn with_reservations(mut self, res: &[Rational]) -> Self {
        for (a, r) in self.agents.iter_mut().zip(res) {
            a.reservation = r.clone();
        }
        self
    }
}

/// Lists every violated structural assumption; an empty report means valid.
pub fn validate_problem(p: &AllocationProblem) -> ValidationReport {
    let mut v = Vec::new();
    let l = p.num_objects();
    if l == 0 {
        v.push("L >= 1 fails: no objects".to_string());
    }
    if p.agents.is_empty() {
        v.push("N >= 1 fails: no agents".to_string());
    }
    if p.capacities.len() != l {
        v.push(format!(
            "capacity vector has {} entries for {} objects",
            p.capacities.len(),
            l
        ));
    }
    for (k, q) in p.capacities.iter().enumerate() {
        if !q.is_positive() {
            v.push(format!("q_l > 0 fails for object {}", k + 1));
        }
    }
    for (i, a) in p.agents.iter().enumerate() {
        if !a.cap.is_positive() {
            v.push(format!("c^i > 0 fails for agent {}", i + 1));
        }
        if a.utility.len() != l {
            v.push(format!(
                "agent {} has {} utility values for {} objects",
                i + 1,
                a.utility.len(),
                l
            ));
        }
        if a.utility.values.iter().any(|x| x.is_negative()) {
            v.push(format!("agent {} has a negative utility value", i + 1));
        }
        if a.utility.values.iter().all(|x| x.is_zero()) {
            v.push(format!("agent {} values no object", i + 1));
        }
    }
    let caps: Rational = p.agents.iter().map(|a| a.cap.clone()).sum();
    if p.total_supply() > caps {
        v.push("sum q_l <= sum c^i fails: overall excess supply".to_string());
    }
    ValidationReport { violations: v }
}

fn check_domain(x: &[Rational], cap: &Rational, len: usize) -> Result<()> {
    if x.len() != len {
        return Err(Error::Dimension(format!(
            "bundle has {} entries, expected {}",
            x.len(),
            len
        )));
    }
    if x.iter().any(|v| v.is_negative()) {
        return Err(Error::Domain("negative consumption".into()));
    }
    let total: Rational = x.iter().sum();
    if total > *cap {
        return Err(Error::Domain(format!(
            "bundle mass {} exceeds cap {}",
            crate::num::format_rational(&total),
            crate::num::format_rational(cap)
        )));
    }
    Ok(())
}

/// `v . x` for a bundle in the domain `{x >= 0, sum x <= cap}`.
pub fn utility_of(u: &LinearUtility, x: &[Rational], cap: &Rational) -> Result<Rational> {
    check_domain(x, cap, u.len())?;
    Ok(u.eval(x))
}

impl Allocation {
    pub fn new(rows: Vec<Vec<Rational>>) -> Self {
        Self { rows }
    }

    pub fn zeros(n: usize, l: usize) -> Self {
        Self {
            rows: vec![vec![Rational::zero(); l]; n],
        }
    }

    pub fn from_f64(rows: &[Vec<f64>], denom: u64) -> Self {
        Self {
            rows: rows.iter().map(|r| crate::num::round_vec(r, denom)).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| crate::num::to_f64_vec(r)).collect()
    }

    pub fn column_sums(&self) -> Vec<Rational> {
        let l = self.rows.first().map_or(0, |r| r.len());
        (0..l).map(|k| self.rows.iter().map(|r| &r[k]).sum()).collect()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().flat_map(|r| r.iter()).filter(|v| !v.is_zero()).count()
    }

    /// Agents' own utilities `u^i(x^i)`.
    pub fn utilities(&self, p: &AllocationProblem) -> Vec<Rational> {
        self.rows
            .iter()
            .zip(&p.agents)
            .map(|(r, a)| a.utility.eval(r))
            .collect()
    }

    /// Verifies the allocation invariants exactly: domains and market clearing.
    pub fn check(&self, p: &AllocationProblem) -> Result<()> {
        if self.rows.len() != p.num_agents() {
            return Err(Error::Dimension(format!(
                "allocation has {} rows for {} agents",
                self.rows.len(),
                p.num_agents()
            )));
        }
        for (i, (row, a)) in self.rows.iter().zip(&p.agents).enumerate() {
            check_domain(row, &a.cap, p.num_objects()).map_err(|e| Error::Domain(format!("agent {}: {e}", i + 1)))?;
        }
        for (k, (s, q)) in self.column_sums().iter().zip(&p.capacities).enumerate() {
            if s != q {
                return Err(Error::Domain(format!(
                    "object {} allocated {} of {}",
                    k + 1,
                    crate::num::format_rational(s),
                    crate::num::format_rational(q)
                )));
            }
        }
        Ok(())
    }
}

/// Reservation utilities `u^i(w^i)` induced by an endowment profile.
pub fn reservation_from_endowment(p: &AllocationProblem, endowments: &[Vec<Rational>]) -> Result<Vec<Rational>> {
    let alloc = Allocation::new(endowments.to_vec());
    alloc.check(p).map_err(|e| Error::InfeasibleEndowment(e.to_string()))?;
    Ok(alloc.utilities(p))
}

/// Variable index of `x^i_l` in the allocation LPs.
#[inline]
pub fn var(i: usize, l: usize, num_objects: usize) -> usize {
    i * num_objects + l
}

/// Adds the rows of `A^C`: domains, clearing and the quantitative constraints.
/// Variables `0..N*L` must already exist in `lp`.
pub fn add_allocation_rows<T: crate::num::Scalar>(
    lp: &mut LinearProgram<T>,
    p: &AllocationProblem,
    cs: Option<&ConstraintStructure>,
) {
    let n = p.num_agents();
    let l = p.num_objects();
    for k in 0..l {
        lp.add_row(
            (0..n).map(|i| (var(i, k, l), T::one())).collect(),
            Sense::Eq,
            T::from_rational(&p.capacities[k]),
        );
    }
    for (i, a) in p.agents.iter().enumerate() {
        lp.add_row(
            (0..l).map(|k| (var(i, k, l), T::one())).collect(),
            Sense::Le,
            T::from_rational(&a.cap),
        );
    }
    if let Some(cs) = cs {
        for c in &cs.constraints {
            let coeffs: Vec<(usize, T)> = c.cells.iter().map(|&(i, k)| (var(i, k, l), T::one())).collect();
            if !c.floor.is_zero() {
                lp.add_row(coeffs.clone(), Sense::Ge, T::from_rational(&c.floor));
            }
            lp.add_row(coeffs, Sense::Le, T::from_rational(&c.ceiling));
        }
    }
}

/// Adds `u^i(x^i) >= bound_i` for every agent.
pub fn add_utility_floor_rows<T: crate::num::Scalar>(lp: &mut LinearProgram<T>, p: &AllocationProblem, bounds: &[T]) {
    let l = p.num_objects();
    for (i, a) in p.agents.iter().enumerate() {
        lp.add_row(
            (0..l)
                .filter(|&k| !a.utility.values[k].is_zero())
                .map(|k| (var(i, k, l), T::from_rational(&a.utility.values[k])))
                .collect(),
            Sense::Ge,
            bounds[i].clone(),
        );
    }
}

pub fn allocation_from_solution(x: &[Rational], n: usize, l: usize) -> Allocation {
    Allocation::new((0..n).map(|i| x[i * l..(i + 1) * l].to_vec()).collect())
}

/// Solves the exact feasibility program `{x in A^C : u^i(x^i) >= reservation^i}`.
pub fn ir_feasible(p: &AllocationProblem, cs: Option<&ConstraintStructure>) -> Result<Option<Allocation>> {
    ir_feasible_relaxed(p, cs, &Rational::zero())
}

/// As [`ir_feasible`] with every reservation lowered by `eps`.
pub fn ir_feasible_relaxed(
    p: &AllocationProblem,
    cs: Option<&ConstraintStructure>,
    eps: &Rational,
) -> Result<Option<Allocation>> {
    let n = p.num_agents();
    let l = p.num_objects();
    let mut lp = LinearProgram::<Rational>::new(n * l);
    add_allocation_rows(&mut lp, p, cs);
    let bounds: Vec<Rational> = p.agents.iter().map(|a| a.reservation.clone() - eps).collect();
    add_utility_floor_rows(&mut lp, p, &bounds);
    match lp.solve() {
        Ok(sol) => Ok(Some(allocation_from_solution(&sol.x, n, l))),
        Err(crate::lp::LpError::Infeasible) => Ok(None),
        Err(e) => Err(e.into()),
    }
}
