//! Worked instances used by tests, the CLI and the acceptance suite.

use crate::model::{Agent, Allocation, AllocationProblem, LinearUtility};
use crate::num::{int, rat, Rational};

fn agent(name: &str, values: [i64; 3]) -> Agent {
    Agent {
        name: name.to_string(),
        cap: int(1),
        utility: LinearUtility::new(values.iter().map(|&v| int(v)).collect()),
        reservation: int(0),
    }
}

/// Five agents, objects a, b, c with supplies (1, 2, 2) and unit caps.
/// Reservations are the utilities of [`five_agent_endowments`].
pub fn five_agent_problem() -> AllocationProblem {
    let p = AllocationProblem {
        objects: vec!["a".into(), "b".into(), "c".into()],
        capacities: vec![int(1), int(2), int(2)],
        agents: vec![
            agent("1", [3, 1, 2]),
            agent("2", [3, 2, 1]),
            agent("3", [2, 3, 1]),
            agent("4", [2, 3, 1]),
            agent("5", [2, 3, 1]),
        ],
    };
    let res = crate::model::reservation_from_endowment(&p, &five_agent_endowments()).expect("endowments are feasible");
    p.with_reservations(&res)
}

pub fn five_agent_endowments() -> Vec<Vec<Rational>> {
    let third = vec![rat(1, 3), int(0), rat(2, 3)];
    vec![
        vec![int(0), int(1), int(0)],
        vec![int(0), int(1), int(0)],
        third.clone(),
        third.clone(),
        third,
    ]
}

pub fn five_agent_allocation() -> Allocation {
    let mixed = vec![rat(1, 6), rat(2, 3), rat(1, 6)];
    Allocation::new(vec![
        vec![int(0), int(0), int(1)],
        vec![rat(1, 2), int(0), rat(1, 2)],
        mixed.clone(),
        mixed.clone(),
        mixed,
    ])
}

/// Three students and three unit schools with the priority structure that
/// makes student 1 worse off after gaining priority at school a.
pub fn three_school_district() -> crate::schoolchoice::District {
    use crate::schoolchoice::{District, School, Student};
    let school = |name: &str, prio: [&str; 3]| School {
        name: name.into(),
        capacity: 1,
        priority: Some(prio.iter().map(|s| s.to_string()).collect()),
    };
    let student = |name: &str, prefs: [&str; 3]| Student {
        name: name.into(),
        preferences: prefs.iter().map(|s| s.to_string()).collect(),
        values: None,
        group: None,
        home: None,
    };
    District {
        schools: vec![
            school("a", ["2", "3", "1"]),
            school("b", ["2", "3", "1"]),
            school("c", ["3", "1", "2"]),
        ],
        students: vec![
            student("1", ["b", "c", "a"]),
            student("2", ["a", "b", "c"]),
            student("3", ["a", "c", "b"]),
        ],
        diversity: Vec::new(),
        endowment: None,
    }
}
