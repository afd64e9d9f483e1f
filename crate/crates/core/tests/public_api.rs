use fairshare_core::examples::{five_agent_allocation, five_agent_endowments, five_agent_problem};
use fairshare_core::fairness::audit;
use fairshare_core::io::{parse_allocation, parse_problem, to_json, ProblemFile};
use fairshare_core::lottery::bvn_decompose;
use fairshare_core::market::{income_schedule, MarketData};
use fairshare_core::num::{int, rat, Rational};
use fairshare_core::random::{large_cap_instance, random_price, rng, unit_demand_allocation, unit_demand_instance};
use fairshare_core::FairnessReport;
use proptest::prelude::*;

#[test]
fn documents_survive_a_round_trip() {
    let p = five_agent_problem();
    let text = to_json(&ProblemFile::from_problem(&p, None, Some(&five_agent_endowments()))).unwrap();
    let back = parse_problem(&text).unwrap();
    assert_eq!(back.problem, p);
    let x = five_agent_allocation();
    assert_eq!(parse_allocation(&to_json(&x).unwrap()).unwrap(), x);
}

#[test]
fn reports_serialize_losslessly() {
    let r = audit(&five_agent_allocation(), &five_agent_problem(), None, &rat(1, 100)).unwrap();
    let back: FairnessReport = serde_json::from_str(&to_json(&r).unwrap()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn unknown_names_are_rejected() {
    let text = r#"{"objects": [{"name": "a", "capacity": "1"}],
        "agents": [{"name": "1", "cap": "1", "values": ["1"], "reservation": "0"}],
        "constraints": [{"cells": [["1", "z"]], "ceiling": "1"}]}"#;
    assert!(parse_problem(text).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn incomes_exhaust_the_value_of_supply(seed in 0u64..10_000, n in 2usize..7, l in 2usize..5) {
        let p = large_cap_instance(seed, n, l).problem;
        let price = random_price(&mut rng(seed), l, 20);
        let s = income_schedule(&price, &MarketData::new(&p)).unwrap();
        let value: Rational = price.iter().zip(&p.capacities).map(|(a, b)| a * b).sum();
        prop_assert_eq!(s.incomes.iter().sum::<Rational>(), value);
        for i in 0..n {
            prop_assert!(s.e_res[i] <= s.incomes[i]);
        }
    }

    #[test]
    fn lotteries_average_to_the_allocation(seed in 0u64..10_000, n in 1usize..7, l in 1usize..5) {
        let (p, x) = unit_demand_allocation(seed, n, l);
        let lot = bvn_decompose(&x, &p, None).unwrap();
        prop_assert_eq!(lot.total_weight(), int(1));
        prop_assert_eq!(lot.expectation(p.num_agents(), p.num_objects()), x);
    }

    #[test]
    fn endowments_are_individually_rational(seed in 0u64..10_000, n in 2usize..6, l in 2usize..4) {
        let inst = unit_demand_instance(seed, n, l);
        let x = fairshare_core::Allocation::new(inst.endowments.clone());
        let r = audit(&x, &inst.problem, None, &int(0)).unwrap();
        prop_assert!(r.ir.passes);
        prop_assert!(r.ir.slacks.iter().all(|s| *s == int(0)));
    }
}
