use criterion::{criterion_group, criterion_main, Criterion};
use fairshare_core::examples::{five_agent_allocation, five_agent_problem};
use fairshare_core::fairness::audit;
use fairshare_core::kkm::{phi_f64, KKMConfig};
use fairshare_core::lottery::bvn_decompose;
use fairshare_core::market::{income_schedule, MarketData};
use fairshare_core::num::{int, rat};
use fairshare_core::random::{large_cap_instance, random_price, rng, unit_demand_allocation};
use std::hint::black_box;

fn exact_audit(c: &mut Criterion) {
    let p = five_agent_problem();
    let x = five_agent_allocation();
    c.bench_function("audit/five_agent/exact", |b| {
        b.iter(|| audit(black_box(&x), &p, None, &int(0)).unwrap())
    });
    let eps = rat(1, 100);
    c.bench_function("audit/five_agent/eps", |b| {
        b.iter(|| audit(black_box(&x), &p, None, &eps).unwrap())
    });
}

fn regularized_welfare(c: &mut Criterion) {
    let p = five_agent_problem();
    let cfg = KKMConfig::default();
    let lambda = [0.2; 5];
    c.bench_function("phi/five_agent", |b| {
        b.iter(|| phi_f64(black_box(&lambda), &p, None, &cfg).unwrap())
    });
}

fn incomes(c: &mut Criterion) {
    let p = large_cap_instance(1, 8, 5).problem;
    let data = MarketData::new(&p);
    let price = random_price(&mut rng(2), 5, 24);
    c.bench_function("income_schedule/n8_l5", |b| {
        b.iter(|| income_schedule(black_box(&price), &data).unwrap())
    });
}

fn lottery(c: &mut Criterion) {
    let (p, x) = unit_demand_allocation(5, 8, 5);
    c.bench_function("bvn/n8_l5", |b| {
        b.iter(|| bvn_decompose(black_box(&x), &p, None).unwrap())
    });
}

criterion_group!(benches, exact_audit, regularized_welfare, incomes, lottery);
criterion_main!(benches);
