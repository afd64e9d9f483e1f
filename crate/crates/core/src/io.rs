//! JSON documents: problems (with reservations or endowments and optional
//! constraints), allocations and districts.

use serde::{Deserialize, Serialize};

use crate::constraints::{Constraint, ConstraintStructure};
use crate::error::{Error, Result};
use crate::model::{reservation_from_endowment, Agent, Allocation, AllocationProblem, LinearUtility};
use crate::num::Rational;
use crate::schoolchoice::District;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    #[serde(with = "crate::num::serde_rational")]
    pub capacity: Rational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub name: String,
    #[serde(with = "crate::num::serde_rational")]
    pub cap: Rational,
    #[serde(with = "crate::num::serde_rational::vec")]
    pub values: Vec<Rational>,
    /// Exactly one of `reservation` and `endowment` must be present.
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "crate::num::serde_rational::option"
    )]
    pub reservation: Option<Rational>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "crate::num::serde_rational::option_vec"
    )]
    pub endowment: Option<Vec<Rational>>,
}

/// A constraint given either cell by cell or as a product of agent and object sets.
/// Agents and objects are referred to by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<(String, String)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objects: Option<Vec<String>>,
    #[serde(default = "zero", with = "crate::num::serde_rational")]
    pub floor: Rational,
    #[serde(with = "crate::num::serde_rational")]
    pub ceiling: Rational,
}

fn zero() -> Rational {
    Rational::from_integer(0.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub objects: Vec<ObjectSpec>,
    pub agents: Vec<AgentSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<ConstraintSpec>,
}

/// A parsed problem. `endowments` is present when every agent was given one.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub problem: AllocationProblem,
    pub constraints: ConstraintStructure,
    pub endowments: Option<Vec<Vec<Rational>>>,
}

impl LoadedProblem {
    /// The constraint structure, or `None` when there are no constraints.
    pub fn cs(&self) -> Option<&ConstraintStructure> {
        (!self.constraints.is_empty()).then_some(&self.constraints)
    }
}

fn lookup(names: &[String], name: &str, what: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| Error::UnknownReference(format!("{what} {name:?}")))
}

impl ProblemFile {
    pub fn into_problem(self) -> Result<LoadedProblem> {
        let objects: Vec<String> = self.objects.iter().map(|o| o.name.clone()).collect();
        let names: Vec<String> = self.agents.iter().map(|a| a.name.clone()).collect();
        let with_endowment = self.agents.iter().filter(|a| a.endowment.is_some()).count();
        for a in &self.agents {
            if a.reservation.is_some() == a.endowment.is_some() {
                return Err(Error::Parse(format!(
                    "agent {:?} needs exactly one of \"reservation\" and \"endowment\"",
                    a.name
                )));
            }
        }
        if with_endowment != 0 && with_endowment != self.agents.len() {
            return Err(Error::Parse("endowments must be given for all agents or none".into()));
        }
        let mut problem = AllocationProblem {
            objects: objects.clone(),
            capacities: self.objects.iter().map(|o| o.capacity.clone()).collect(),
            agents: self
                .agents
                .iter()
                .map(|a| Agent {
                    name: a.name.clone(),
                    cap: a.cap.clone(),
                    utility: LinearUtility::new(a.values.clone()),
                    reservation: a.reservation.clone().unwrap_or_else(zero),
                })
                .collect(),
        };
        let endowments = if with_endowment > 0 {
            let e: Vec<Vec<Rational>> = self.agents.iter().filter_map(|a| a.endowment.clone()).collect();
            let res = reservation_from_endowment(&problem, &e)?;
            problem = problem.with_reservations(&res);
            Some(e)
        } else {
            None
        };
        let mut constraints = Vec::with_capacity(self.constraints.len());
        for c in &self.constraints {
            let cells: Vec<(usize, usize)> = match (&c.cells, &c.agents, &c.objects) {
                (Some(cells), None, None) => cells
                    .iter()
                    .map(|(a, o)| Ok((lookup(&names, a, "agent")?, lookup(&objects, o, "object")?)))
                    .collect::<Result<_>>()?,
                (None, Some(agents), Some(objs)) => {
                    let ai: Vec<usize> = agents
                        .iter()
                        .map(|a| lookup(&names, a, "agent"))
                        .collect::<Result<_>>()?;
                    let oi: Vec<usize> = objs
                        .iter()
                        .map(|o| lookup(&objects, o, "object"))
                        .collect::<Result<_>>()?;
                    ai.iter().flat_map(|&i| oi.iter().map(move |&k| (i, k))).collect()
                }
                _ => {
                    return Err(Error::Parse(
                        "a constraint needs either \"cells\" or both \"agents\" and \"objects\"".into(),
                    ))
                }
            };
            constraints.push(Constraint::new(cells, c.floor.clone(), c.ceiling.clone())?);
        }
        Ok(LoadedProblem {
            problem,
            constraints: ConstraintStructure::new(constraints),
            endowments,
        })
    }

    /// Document form of a problem; constraints are written cell by cell.
    pub fn from_problem(
        p: &AllocationProblem,
        cs: Option<&ConstraintStructure>,
        endowments: Option<&[Vec<Rational>]>,
    ) -> Self {
        Self {
            objects: p
                .objects
                .iter()
                .zip(&p.capacities)
                .map(|(name, q)| ObjectSpec {
                    name: name.clone(),
                    capacity: q.clone(),
                })
                .collect(),
            agents: p
                .agents
                .iter()
                .enumerate()
                .map(|(i, a)| AgentSpec {
                    name: a.name.clone(),
                    cap: a.cap.clone(),
                    values: a.utility.values.clone(),
                    reservation: endowments.is_none().then(|| a.reservation.clone()),
                    endowment: endowments.map(|e| e[i].clone()),
                })
                .collect(),
            constraints: cs
                .map(|cs| {
                    cs.constraints
                        .iter()
                        .map(|c| ConstraintSpec {
                            cells: Some(
                                c.cells
                                    .iter()
                                    .map(|&(i, k)| (p.agents[i].name.clone(), p.objects[k].clone()))
                                    .collect(),
                            ),
                            agents: None,
                            objects: None,
                            floor: c.floor.clone(),
                            ceiling: c.ceiling.clone(),
                        })
                        .collect()
                })
                .unwrap_or_default(),
        }
    }
}

pub fn parse_problem(text: &str) -> Result<LoadedProblem> {
    let file: ProblemFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.into_problem()
}

pub fn parse_allocation(text: &str) -> Result<Allocation> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

pub fn parse_district(text: &str) -> Result<District> {
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))
}
