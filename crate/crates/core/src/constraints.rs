//! Quantitative constraint structures, row swaps and equal-type partitions.

use std::collections::BTreeSet;

use num_traits::Signed;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Allocation, AllocationProblem};
use crate::num::Rational;

/// `floor <= sum_{(i,l) in cells} x^i_l <= ceiling`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub cells: BTreeSet<(usize, usize)>,
    pub floor: Rational,
    pub ceiling: Rational,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConstraintStructure {
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypePartition {
    pub blocks: Vec<Vec<usize>>,
}

impl Constraint {
    pub fn new(cells: impl IntoIterator<Item = (usize, usize)>, floor: Rational, ceiling: Rational) -> Result<Self> {
        let cells: BTreeSet<_> = cells.into_iter().collect();
        if cells.is_empty() {
            return Err(Error::InvalidProblem("constraint with empty cell set".into()));
        }
        if floor > ceiling || floor.is_negative() {
            return Err(Error::InvalidProblem(
                "constraint bounds must satisfy 0 <= floor <= ceiling".into(),
            ));
        }
        Ok(Self { cells, floor, ceiling })
    }

    /// Product constraint `agents x objects`.
    pub fn product(agents: &[usize], objects: &[usize], floor: Rational, ceiling: Rational) -> Result<Self> {
        Self::new(
            agents.iter().flat_map(|&i| objects.iter().map(move |&l| (i, l))),
            floor,
            ceiling,
        )
    }

    pub fn cell_sum(&self, x: &Allocation) -> Rational {
        self.cells.iter().map(|&(i, l)| &x.rows[i][l]).sum()
    }

    /// `{l : (agent, l) in cells}`.
    pub fn section(&self, agent: usize) -> BTreeSet<usize> {
        self.cells
            .iter()
            .filter(|(i, _)| *i == agent)
            .map(|&(_, l)| l)
            .collect()
    }
}

impl ConstraintStructure {
    pub fn new(constraints: Vec<Constraint>) -> Self {
        Self { constraints }
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Every cell set has the form `I x O'`.
    pub fn is_anonymous(&self, num_agents: usize) -> bool {
        self.constraints.iter().all(|c| {
            let objs: BTreeSet<usize> = c.cells.iter().map(|&(_, l)| l).collect();
            c.cells.len() == objs.len() * num_agents && (0..num_agents).all(|i| c.section(i) == objs)
        })
    }

    pub fn check_references(&self, p: &AllocationProblem) -> Result<()> {
        for c in &self.constraints {
            for &(i, l) in &c.cells {
                if i >= p.num_agents() {
                    return Err(Error::UnknownReference(format!("agent index {i}")));
                }
                if l >= p.num_objects() {
                    return Err(Error::UnknownReference(format!("object index {l}")));
                }
            }
        }
        Ok(())
    }
}

/// `x in A^C`, given that `x` is already an allocation.
pub fn feasible(x: &Allocation, cs: &ConstraintStructure) -> Result<bool> {
    for c in &cs.constraints {
        for &(i, l) in &c.cells {
            let row = x
                .rows
                .get(i)
                .ok_or_else(|| Error::UnknownReference(format!("agent index {i}")))?;
            if l >= row.len() {
                return Err(Error::UnknownReference(format!("object index {l}")));
            }
        }
    }
    Ok(cs.constraints.iter().all(|c| {
        let s = c.cell_sum(x);
        c.floor <= s && s <= c.ceiling
    }))
}

/// Exchanges the bundles of `i` and `j`; refuses when either cap would be breached.
pub fn swap(x: &Allocation, p: &AllocationProblem, i: usize, j: usize) -> Result<Allocation> {
    if i == j {
        return Ok(x.clone());
    }
    let mass_i: Rational = x.rows[i].iter().sum();
    let mass_j: Rational = x.rows[j].iter().sum();
    if mass_j > p.agents[i].cap || mass_i > p.agents[j].cap {
        return Err(Error::SwapCapViolation { i, j });
    }
    let mut y = x.clone();
    y.rows.swap(i, j);
    Ok(y)
}

/// Sufficient syntactic test: equal caps and identical object sections in every constraint.
pub fn is_equal_type(i: usize, j: usize, p: &AllocationProblem, cs: &ConstraintStructure) -> bool {
    if i == j {
        return true;
    }
    p.agents[i].cap == p.agents[j].cap && cs.constraints.iter().all(|c| c.section(i) == c.section(j))
}

pub fn type_partition(p: &AllocationProblem, cs: &ConstraintStructure) -> TypePartition {
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for i in 0..p.num_agents() {
        match blocks.iter_mut().find(|b| is_equal_type(b[0], i, p, cs)) {
            Some(b) => b.push(i),
            None => blocks.push(vec![i]),
        }
    }
    TypePartition { blocks }
}

impl TypePartition {
    pub fn block_of(&self, agent: usize) -> usize {
        self.blocks
            .iter()
            .position(|b| b.contains(&agent))
            .expect("partition covers every agent")
    }

    pub fn same_block(&self, i: usize, j: usize) -> bool {
        self.block_of(i) == self.block_of(j)
    }
}
