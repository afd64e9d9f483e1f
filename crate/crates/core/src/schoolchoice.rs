//! Districts, student-proposing deferred acceptance, and the conversion of a
//! district into an allocation problem with endowment lotteries.

use std::collections::{BTreeMap, HashMap};

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::constraints::{feasible, Constraint, ConstraintStructure};
use crate::error::{Error, Result};
use crate::model::{reservation_from_endowment, Agent, Allocation, AllocationProblem, LinearUtility};
use crate::num::{int, Rational};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct School {
    pub name: String,
    pub capacity: u32,
    /// Strict priority order over student names, highest first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Student {
    pub name: String,
    /// Strict ranking of all schools, favorite first.
    pub preferences: Vec<String>,
    /// vNM values aligned with `preferences`; must start at 1 and end at 0.
    /// Defaults to equal spacing.
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "crate::num::serde_rational::option_vec"
    )]
    pub values: Option<Vec<Rational>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home: Option<String>,
}

/// `floor <= sum_{i in group} x^i_school <= ceiling`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiversityBound {
    pub group: String,
    pub school: String,
    #[serde(with = "crate::num::serde_rational")]
    pub floor: Rational,
    #[serde(with = "crate::num::serde_rational")]
    pub ceiling: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct District {
    pub schools: Vec<School>,
    pub students: Vec<Student>,
    #[serde(default)]
    pub diversity: Vec<DiversityBound>,
    /// Custom endowment lottery, one row per student, one column per school.
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "crate::num::serde_rational::option_matrix"
    )]
    pub endowment: Option<Vec<Vec<Rational>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndowmentPolicy {
    UniformLottery,
    NeighborhoodBoost,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    /// School index per student, `None` when unassigned.
    pub assignment: Vec<Option<usize>>,
}

#[derive(Debug, Clone)]
pub struct DistrictProblem {
    pub problem: AllocationProblem,
    pub constraints: ConstraintStructure,
    pub endowments: Vec<Vec<Rational>>,
}

impl District {
    fn school_index(&self) -> HashMap<&str, usize> {
        self.schools
            .iter()
            .enumerate()
            .map(|(k, s)| (s.name.as_str(), k))
            .collect()
    }

    fn student_index(&self) -> HashMap<&str, usize> {
        self.students
            .iter()
            .enumerate()
            .map(|(k, s)| (s.name.as_str(), k))
            .collect()
    }

    /// Ranks of each student's schools (`rank[i][l]`, 0 = favorite); rejects ties and omissions.
    fn preference_ranks(&self) -> Result<Vec<Vec<usize>>> {
        let idx = self.school_index();
        let l = self.schools.len();
        self.students
            .iter()
            .map(|s| {
                let mut rank = vec![usize::MAX; l];
                if s.preferences.len() != l {
                    return Err(Error::InvalidProblem(format!(
                        "student {} must rank all {l} schools exactly once",
                        s.name
                    )));
                }
                for (r, name) in s.preferences.iter().enumerate() {
                    let k = *idx
                        .get(name.as_str())
                        .ok_or_else(|| Error::UnknownReference(format!("school {name}")))?;
                    if rank[k] != usize::MAX {
                        return Err(Error::InvalidProblem(format!(
                            "student {} ranks school {name} twice",
                            s.name
                        )));
                    }
                    rank[k] = r;
                }
                Ok(rank)
            })
            .collect()
    }

    fn priority_ranks(&self) -> Result<Vec<Vec<usize>>> {
        let idx = self.student_index();
        let n = self.students.len();
        self.schools
            .iter()
            .map(|s| {
                let order = s
                    .priority
                    .as_ref()
                    .ok_or_else(|| Error::InvalidProblem(format!("school {} has no priority order", s.name)))?;
                let mut rank = vec![usize::MAX; n];
                if order.len() != n {
                    return Err(Error::InvalidProblem(format!(
                        "school {} must order all {n} students",
                        s.name
                    )));
                }
                for (r, name) in order.iter().enumerate() {
                    let k = *idx
                        .get(name.as_str())
                        .ok_or_else(|| Error::UnknownReference(format!("student {name}")))?;
                    if rank[k] != usize::MAX {
                        return Err(Error::InvalidProblem(format!(
                            "school {} lists student {name} twice",
                            s.name
                        )));
                    }
                    rank[k] = r;
                }
                Ok(rank)
            })
            .collect()
    }

    /// vNM values per student and school: favorite 1, worst 0.
    pub fn values(&self) -> Result<Vec<Vec<Rational>>> {
        let ranks = self.preference_ranks()?;
        let l = self.schools.len();
        self.students
            .iter()
            .zip(&ranks)
            .map(|(s, rank)| {
                let by_rank: Vec<Rational> = match &s.values {
                    Some(v) => {
                        if v.len() != l {
                            return Err(Error::Dimension(format!("values of student {}", s.name)));
                        }
                        if l > 1 && (!v[0].is_one() || !v[l - 1].is_zero()) {
                            return Err(Error::InvalidProblem(format!(
                                "values of student {} must run from 1 to 0",
                                s.name
                            )));
                        }
                        if v.windows(2).any(|w| w[0] <= w[1]) {
                            return Err(Error::InvalidProblem(format!(
                                "values of student {} contain ties",
                                s.name
                            )));
                        }
                        v.clone()
                    }
                    None if l == 1 => vec![Rational::one()],
                    None => (0..l)
                        .map(|r| Rational::new(((l - 1 - r) as i64).into(), ((l - 1) as i64).into()))
                        .collect(),
                };
                Ok((0..l).map(|k| by_rank[rank[k]].clone()).collect())
            })
            .collect()
    }
}

/// Student-proposing deferred acceptance.
pub fn deferred_acceptance(d: &District) -> Result<Matching> {
    let prefs = d.preference_ranks()?;
    let prio = d.priority_ranks()?;
    let n = d.students.len();
    let lists: Vec<Vec<usize>> = prefs
        .iter()
        .map(|rank| {
            let mut order: Vec<usize> = (0..rank.len()).collect();
            order.sort_by_key(|&k| rank[k]);
            order
        })
        .collect();
    let mut next = vec![0usize; n];
    let mut held: Vec<Vec<usize>> = vec![Vec::new(); d.schools.len()];
    let mut free: Vec<usize> = (0..n).rev().collect();
    while let Some(i) = free.pop() {
        let Some(&k) = lists[i].get(next[i]) else {
            continue;
        };
        next[i] += 1;
        held[k].push(i);
        held[k].sort_by_key(|&s| prio[k][s]);
        if held[k].len() > d.schools[k].capacity as usize {
            free.push(held[k].pop().unwrap());
        }
    }
    let mut assignment = vec![None; n];
    for (k, hs) in held.iter().enumerate() {
        for &i in hs {
            assignment[i] = Some(k);
        }
    }
    Ok(Matching { assignment })
}

/// Blocking pairs `(student, school)`: the student prefers the school, which has a
/// free seat or holds someone of lower priority.
pub fn blocking_pairs(d: &District, m: &Matching) -> Result<Vec<(usize, usize)>> {
    let prefs = d.preference_ranks()?;
    let prio = d.priority_ranks()?;
    let mut out = Vec::new();
    for (i, rank) in prefs.iter().enumerate() {
        for (k, school) in d.schools.iter().enumerate() {
            let better = m.assignment[i].is_none_or(|cur| rank[k] < rank[cur]);
            if !better {
                continue;
            }
            let holders: Vec<usize> = (0..m.assignment.len())
                .filter(|&s| m.assignment[s] == Some(k))
                .collect();
            if holders.len() < school.capacity as usize || holders.iter().any(|&s| prio[k][s] > prio[k][i]) {
                out.push((i, k));
            }
        }
    }
    Ok(out)
}

/// Builds the allocation problem: unit caps, vNM values, endowment-lottery
/// reservations, and one constraint `T_k x {l}` per diversity bound.
pub fn district_to_problem(d: &District, policy: EndowmentPolicy) -> Result<DistrictProblem> {
    let n = d.students.len();
    let l = d.schools.len();
    if n == 0 || l == 0 {
        return Err(Error::InvalidProblem("district needs students and schools".into()));
    }
    let values = d.values()?;
    let q: Vec<Rational> = d.schools.iter().map(|s| int(s.capacity as i64)).collect();
    let total: Rational = q.iter().sum();
    let sidx = d.school_index();

    let endowments = match policy {
        EndowmentPolicy::UniformLottery => {
            if total > int(n as i64) {
                return Err(Error::InfeasibleEndowment(
                    "more seats than students: uniform shares exceed unit demand".into(),
                ));
            }
            vec![q.iter().map(|qk| qk / int(n as i64)).collect::<Vec<_>>(); n]
        }
        EndowmentPolicy::NeighborhoodBoost => {
            let mut w = vec![vec![Rational::zero(); l]; n];
            let mut left = q.clone();
            let mut rest = Vec::new();
            for (i, s) in d.students.iter().enumerate() {
                match &s.home {
                    Some(h) => {
                        let k = *sidx
                            .get(h.as_str())
                            .ok_or_else(|| Error::UnknownReference(format!("school {h}")))?;
                        left[k] -= Rational::one();
                        if left[k] < Rational::zero() {
                            return Err(Error::InfeasibleEndowment(format!(
                                "school {h} is home to more students than seats"
                            )));
                        }
                        w[i][k] = Rational::one();
                    }
                    None => rest.push(i),
                }
            }
            let remaining: Rational = left.iter().sum();
            if rest.is_empty() {
                if !remaining.is_zero() {
                    return Err(Error::InfeasibleEndowment(
                        "seats left with no students to share them".into(),
                    ));
                }
            } else {
                if remaining > int(rest.len() as i64) {
                    return Err(Error::InfeasibleEndowment(
                        "remaining seats exceed students without a home school".into(),
                    ));
                }
                for &i in &rest {
                    for k in 0..l {
                        w[i][k] = left[k].clone() / int(rest.len() as i64);
                    }
                }
            }
            w
        }
        EndowmentPolicy::Custom => d
            .endowment
            .clone()
            .ok_or_else(|| Error::InfeasibleEndowment("custom policy without an endowment matrix".into()))?,
    };

    let agents = d
        .students
        .iter()
        .zip(values)
        .map(|(s, v)| Agent {
            name: s.name.clone(),
            cap: Rational::one(),
            utility: LinearUtility::new(v),
            reservation: Rational::zero(),
        })
        .collect();
    let problem = AllocationProblem {
        objects: d.schools.iter().map(|s| s.name.clone()).collect(),
        capacities: q.clone(),
        agents,
    };

    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in d.students.iter().enumerate() {
        if let Some(g) = &s.group {
            groups.entry(g.as_str()).or_default().push(i);
        }
    }
    let mut floors = vec![Rational::zero(); l];
    let mut constraints = Vec::new();
    for b in &d.diversity {
        let k = *sidx
            .get(b.school.as_str())
            .ok_or_else(|| Error::UnknownReference(format!("school {}", b.school)))?;
        let members = groups
            .get(b.group.as_str())
            .ok_or_else(|| Error::UnknownReference(format!("group {}", b.group)))?;
        floors[k] += &b.floor;
        constraints.push(Constraint::product(members, &[k], b.floor.clone(), b.ceiling.clone())?);
    }
    for (k, f) in floors.iter().enumerate() {
        if *f > q[k] {
            return Err(Error::InvalidProblem(format!(
                "diversity floors at school {} exceed its capacity",
                d.schools[k].name
            )));
        }
    }
    let cs = ConstraintStructure::new(constraints);
    let res = reservation_from_endowment(&problem, &endowments)?;
    if !feasible(&Allocation::new(endowments.clone()), &cs)? {
        return Err(Error::InfeasibleEndowment(
            "endowment violates the diversity bounds".into(),
        ));
    }
    Ok(DistrictProblem {
        problem: problem.with_reservations(&res),
        constraints: cs,
        endowments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::type_partition;
    use crate::examples::three_school_district;
    use crate::model::{ir_feasible, validate_problem};
    use crate::num::rat;
    use proptest::prelude::*;

    fn names(d: &District, m: &Matching) -> Vec<String> {
        m.assignment
            .iter()
            .map(|a| a.map_or("-".into(), |k| d.schools[k].name.clone()))
            .collect()
    }

    #[test]
    fn priority_pathology() {
        let mut d = three_school_district();
        let m = deferred_acceptance(&d).unwrap();
        assert_eq!(names(&d, &m), ["b", "a", "c"]);
        assert!(blocking_pairs(&d, &m).unwrap().is_empty());
        // student 1 gains priority over student 2 at school a
        d.schools[0].priority = Some(vec!["1".into(), "3".into(), "2".into()]);
        let m = deferred_acceptance(&d).unwrap();
        assert_eq!(names(&d, &m), ["c", "b", "a"]);
        assert!(blocking_pairs(&d, &m).unwrap().is_empty());
    }

    #[test]
    fn single_student() {
        let d = District {
            schools: vec![School {
                name: "s".into(),
                capacity: 1,
                priority: Some(vec!["x".into()]),
            }],
            students: vec![Student {
                name: "x".into(),
                preferences: vec!["s".into()],
                values: None,
                group: None,
                home: None,
            }],
            diversity: vec![],
            endowment: None,
        };
        assert_eq!(deferred_acceptance(&d).unwrap().assignment, vec![Some(0)]);
        let dp = district_to_problem(&d, EndowmentPolicy::UniformLottery).unwrap();
        assert_eq!(dp.problem.agents[0].reservation, int(1));
    }

    #[test]
    fn uniform_lottery_reservations() {
        let d = three_school_district();
        let dp = district_to_problem(&d, EndowmentPolicy::UniformLottery).unwrap();
        for (i, a) in dp.problem.agents.iter().enumerate() {
            assert_eq!(dp.endowments[i], vec![rat(1, 3); 3]);
            // mean of 1, 1/2, 0
            assert_eq!(a.reservation, rat(1, 2));
        }
        assert!(validate_problem(&dp.problem).is_valid());
        assert!(ir_feasible(&dp.problem, Some(&dp.constraints)).unwrap().is_some());
    }

    #[test]
    fn neighborhood_boost() {
        let mut d = three_school_district();
        d.students[0].home = Some("c".into());
        let dp = district_to_problem(&d, EndowmentPolicy::NeighborhoodBoost).unwrap();
        assert_eq!(dp.endowments[0], vec![int(0), int(0), int(1)]);
        // student 1 ranks c second: value 1/2
        assert_eq!(dp.problem.agents[0].reservation, rat(1, 2));
        assert_eq!(dp.endowments[1], vec![rat(1, 2), rat(1, 2), int(0)]);
    }

    #[test]
    fn diversity_bounds() {
        let mut d = three_school_district();
        d.students[0].group = Some("g".into());
        d.students[1].group = Some("g".into());
        d.students[2].group = Some("h".into());
        d.diversity = vec![DiversityBound {
            group: "g".into(),
            school: "a".into(),
            floor: rat(1, 2),
            ceiling: int(1),
        }];
        let dp = district_to_problem(&d, EndowmentPolicy::UniformLottery).unwrap();
        assert_eq!(dp.constraints.constraints.len(), 1);
        let part = type_partition(&dp.problem, &dp.constraints);
        assert!(part.same_block(0, 1) && !part.same_block(0, 2));

        d.diversity.push(DiversityBound {
            group: "h".into(),
            school: "a".into(),
            floor: int(1),
            ceiling: int(1),
        });
        assert!(district_to_problem(&d, EndowmentPolicy::UniformLottery).is_err());
    }

    #[test]
    fn ties_and_bad_values_are_rejected() {
        let mut d = three_school_district();
        d.students[0].preferences = vec!["b".into(), "b".into(), "a".into()];
        assert!(deferred_acceptance(&d).is_err());
        let mut d = three_school_district();
        d.students[0].values = Some(vec![int(1), int(1), int(0)]);
        assert!(d.values().is_err());
        d.students[0].values = Some(vec![int(1), rat(3, 4), int(0)]);
        assert_eq!(d.values().unwrap()[0], vec![int(0), int(1), rat(3, 4)]);
    }

    fn random_district(n: usize, l: usize, seed: u64) -> District {
        use rand::seq::SliceRandom;
        let mut r = crate::random::rng(seed);
        let students: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let schools: Vec<String> = (0..l).map(|k| format!("c{k}")).collect();
        District {
            schools: schools
                .iter()
                .map(|s| {
                    let mut p = students.clone();
                    p.shuffle(&mut r);
                    School {
                        name: s.clone(),
                        capacity: rand::Rng::gen_range(&mut r, 0..=2),
                        priority: Some(p),
                    }
                })
                .collect(),
            students: students
                .iter()
                .map(|s| {
                    let mut p = schools.clone();
                    p.shuffle(&mut r);
                    Student {
                        name: s.clone(),
                        preferences: p,
                        values: None,
                        group: None,
                        home: None,
                    }
                })
                .collect(),
            diversity: vec![],
            endowment: None,
        }
    }

    proptest! {
        #[test]
        fn deferred_acceptance_is_stable(n in 1usize..7, l in 1usize..5, seed in any::<u64>()) {
            let d = random_district(n, l, seed);
            let m = deferred_acceptance(&d).unwrap();
            prop_assert!(blocking_pairs(&d, &m).unwrap().is_empty());
            for k in 0..l {
                let load = m.assignment.iter().filter(|a| **a == Some(k)).count();
                prop_assert!(load <= d.schools[k].capacity as usize);
            }
        }

        #[test]
        fn uniform_problems_are_valid(n in 2usize..6, l in 1usize..4, seed in any::<u64>()) {
            let mut d = random_district(n, l, seed);
            let seats: u32 = d.schools.iter().map(|s| s.capacity).sum();
            prop_assume!(seats >= 1 && seats as usize <= n);
            prop_assume!(d.schools.iter().all(|s| s.capacity > 0));
            d.students[0].group = Some("g".into());
            let dp = district_to_problem(&d, EndowmentPolicy::UniformLottery).unwrap();
            prop_assert!(validate_problem(&dp.problem).is_valid());
            prop_assert!(ir_feasible(&dp.problem, Some(&dp.constraints)).unwrap().is_some());
        }
    }
}
