//! Birkhoff-von Neumann decomposition of unit-demand allocations.

use std::collections::VecDeque;

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintStructure;
use crate::error::{Error, Result};
use crate::model::{Allocation, AllocationProblem};
use crate::num::{int, Rational};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    #[serde(with = "crate::num::serde_rational")]
    pub weight: Rational,
    pub assignment: Allocation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lottery {
    pub atoms: Vec<Atom>,
}

impl Lottery {
    /// `sum_k w_k A_k`.
    pub fn expectation(&self, n: usize, l: usize) -> Allocation {
        let mut x = Allocation::zeros(n, l);
        for a in &self.atoms {
            for (row, arow) in x.rows.iter_mut().zip(&a.assignment.rows) {
                for (v, av) in row.iter_mut().zip(arow) {
                    *v += &a.weight * av;
                }
            }
        }
        x
    }

    pub fn total_weight(&self) -> Rational {
        self.atoms.iter().map(|a| &a.weight).sum()
    }
}

/// Integral max flow on a small dense graph (Edmonds-Karp, lowest index first).
struct Flow {
    cap: Vec<Vec<i64>>,
}

impl Flow {
    fn new(n: usize) -> Self {
        Self {
            cap: vec![vec![0; n]; n],
        }
    }

    fn max_flow(&mut self, s: usize, t: usize) -> i64 {
        let n = self.cap.len();
        let mut total = 0;
        loop {
            let mut prev = vec![usize::MAX; n];
            prev[s] = s;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for v in 0..n {
                    if prev[v] == usize::MAX && self.cap[u][v] > 0 {
                        prev[v] = u;
                        q.push_back(v);
                    }
                }
            }
            if prev[t] == usize::MAX {
                return total;
            }
            let mut push = i64::MAX;
            let mut v = t;
            while v != s {
                push = push.min(self.cap[prev[v]][v]);
                v = prev[v];
            }
            let mut v = t;
            while v != s {
                self.cap[prev[v]][v] -= push;
                self.cap[v][prev[v]] += push;
                v = prev[v];
            }
            total += push;
        }
    }
}

/// Decomposes `x` into a lottery over deterministic allocations.
///
/// Requires unit caps and integer supplies. Agents whose rows sum to less than
/// one are completed with a null object of supply `N - sum q`, dropped from the atoms.
pub fn bvn_decompose(x: &Allocation, p: &AllocationProblem, cs: Option<&ConstraintStructure>) -> Result<Lottery> {
    if cs.is_some_and(|c| !c.is_empty()) {
        return Err(Error::Precondition(
            "decomposition does not preserve general constraint structures".into(),
        ));
    }
    if !p.unit_demand() {
        return Err(Error::Precondition("decomposition requires unit caps".into()));
    }
    let mut q = Vec::with_capacity(p.num_objects() + 1);
    for (k, c) in p.capacities.iter().enumerate() {
        if !c.is_integer() {
            return Err(Error::Precondition(format!(
                "supply of object {} is not integral",
                k + 1
            )));
        }
        q.push(
            c.to_integer()
                .try_into()
                .map_err(|_| Error::Precondition("supply too large".into()))?,
        );
    }
    x.check(p)?;
    let n = p.num_agents();
    let l = p.num_objects();
    let supply: i64 = q.iter().sum();
    let null = n as i64 - supply;
    // x.check with unit caps already forces sum q <= n
    let mut m: Vec<Vec<Rational>> = x
        .rows
        .iter()
        .map(|r| {
            let mut row = r.clone();
            row.push(Rational::one() - r.iter().sum::<Rational>());
            row
        })
        .collect();
    q.push(null);
    let cols = l + 1;

    let mut atoms = Vec::new();
    let mut remaining = Rational::one();
    while remaining > Rational::zero() {
        // nodes: source, agents, objects, sink
        let (s, t) = (0, 1 + n + cols);
        let mut f = Flow::new(t + 1);
        for i in 0..n {
            f.cap[s][1 + i] = 1;
            for k in 0..cols {
                if !m[i][k].is_zero() {
                    f.cap[1 + i][1 + n + k] = 1;
                }
            }
        }
        for (k, &qk) in q.iter().enumerate() {
            f.cap[1 + n + k][t] = qk;
        }
        if f.max_flow(s, t) != n as i64 {
            return Err(Error::Precondition(
                "support admits no integral assignment; input is not a unit-demand allocation".into(),
            ));
        }
        let pick: Vec<usize> = (0..n)
            .map(|i| {
                (0..cols)
                    .find(|&k| f.cap[1 + n + k][1 + i] > 0)
                    .expect("agent is matched")
            })
            .collect();
        let w = pick
            .iter()
            .enumerate()
            .map(|(i, &k)| m[i][k].clone())
            .min()
            .expect("n >= 1");
        let mut a = Allocation::zeros(n, l);
        for (i, &k) in pick.iter().enumerate() {
            m[i][k] -= &w;
            if k < l {
                a.rows[i][k] = int(1);
            }
        }
        remaining -= &w;
        atoms.push(Atom {
            weight: w,
            assignment: a,
        });
    }
    Ok(Lottery { atoms })
}
