//! Seeded instance generators for tests, campaigns and benchmarks.

use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{reservation_from_endowment, Agent, Allocation, AllocationProblem, LinearUtility};
use crate::num::{int, rat, Rational};

#[derive(Debug, Clone)]
pub struct Instance {
    pub problem: AllocationProblem,
    pub endowments: Vec<Vec<Rational>>,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn positive_values(rng: &mut impl Rng, l: usize) -> Vec<Rational> {
    (0..l).map(|_| int(rng.gen_range(1..=9))).collect()
}

fn build(
    caps: Vec<Rational>,
    values: Vec<Vec<Rational>>,
    capacities: Vec<Rational>,
    endowments: Vec<Vec<Rational>>,
) -> Instance {
    let n = values.len();
    let agents = names("i", n)
        .into_iter()
        .zip(caps)
        .zip(values)
        .map(|((name, cap), v)| Agent {
            name,
            cap,
            utility: LinearUtility::new(v),
            reservation: Rational::zero(),
        })
        .collect();
    let problem = AllocationProblem {
        objects: names("o", capacities.len()),
        capacities,
        agents,
    };
    let res = reservation_from_endowment(&problem, &endowments).expect("generated endowment is feasible");
    Instance {
        problem: problem.with_reservations(&res),
        endowments,
    }
}

/// Supplies summing to `fill * n` with `fill` in {1/2, 3/4, 1}.
fn unit_supplies(rng: &mut impl Rng, n: usize, l: usize) -> Vec<Rational> {
    let w: Vec<i64> = (0..l).map(|_| rng.gen_range(1..=5)).collect();
    let total: i64 = w.iter().sum();
    let fill = [rat(1, 2), rat(3, 4), int(1)][rng.gen_range(0..3)].clone();
    w.iter().map(|&wl| rat(wl, total) * &fill * int(n as i64)).collect()
}

/// Uniform shares `q / n` perturbed by row-sum-preserving two-object exchanges
/// among the agents in `movable`. Entries stay strictly positive.
fn perturbed_shares(
    rng: &mut impl Rng,
    n: usize,
    supplies: &[Rational],
    movable: &[usize],
    rounds: usize,
) -> Vec<Vec<Rational>> {
    let l = supplies.len();
    let mut w: Vec<Vec<Rational>> = (0..n)
        .map(|_| supplies.iter().map(|q| q / int(n as i64)).collect())
        .collect();
    if movable.len() < 2 || l < 2 {
        return w;
    }
    for _ in 0..rounds {
        let i = movable[rng.gen_range(0..movable.len())];
        let j = movable[rng.gen_range(0..movable.len())];
        let a = rng.gen_range(0..l);
        let b = rng.gen_range(0..l);
        if i == j || a == b {
            continue;
        }
        let room = w[i][a].clone().min(w[j][b].clone());
        let delta = room * rat(rng.gen_range(1..=3), 4);
        w[i][a] -= &delta;
        w[j][a] += &delta;
        w[j][b] -= &delta;
        w[i][b] += &delta;
    }
    w
}

/// Unit caps, strictly positive integer values, endowment reservations.
pub fn unit_demand_instance(seed: u64, n: usize, l: usize) -> Instance {
    let mut r = rng(seed);
    let supplies = unit_supplies(&mut r, n, l);
    let values = (0..n).map(|_| positive_values(&mut r, l)).collect();
    let all: Vec<usize> = (0..n).collect();
    let endow = perturbed_shares(&mut r, n, &supplies, &all, 2 * n);
    build(vec![int(1); n], values, supplies, endow)
}

/// Caps strictly above total supply, endowments a random split of supply.
pub fn large_cap_instance(seed: u64, n: usize, l: usize) -> Instance {
    let mut r = rng(seed);
    let supplies: Vec<Rational> = (0..l).map(|_| rat(r.gen_range(1..=6), 2)).collect();
    let total: Rational = supplies.iter().sum();
    let caps = (0..n).map(|_| total.clone() + rat(r.gen_range(1..=4), 2)).collect();
    let values = (0..n).map(|_| positive_values(&mut r, l)).collect();
    let mut endow = vec![vec![Rational::zero(); l]; n];
    for (k, q) in supplies.iter().enumerate() {
        let w: Vec<i64> = (0..n).map(|_| r.gen_range(0..=4)).collect();
        let s: i64 = w.iter().sum();
        for i in 0..n {
            endow[i][k] = if s == 0 { q / int(n as i64) } else { q * rat(w[i], s) };
        }
    }
    build(caps, values, supplies, endow)
}

/// Object 0 is every agent's unique favorite; the endowment is strictly positive
/// and is itself an IR allocation.
pub fn common_favorite_instance(seed: u64, n: usize, l: usize) -> Instance {
    let mut r = rng(seed);
    let supplies = unit_supplies(&mut r, n, l);
    let values = (0..n)
        .map(|_| {
            let mut v = positive_values(&mut r, l);
            v[0] = int(10 + r.gen_range(0..=5));
            v
        })
        .collect();
    let all: Vec<usize> = (0..n).collect();
    let endow = perturbed_shares(&mut r, n, &supplies, &all, 2 * n);
    build(vec![int(1); n], values, supplies, endow)
}

/// Unit-demand instance in which agents 0 and 1 are clones: same values and
/// the same (uniform) endowment.
pub fn clone_instance(seed: u64, n: usize, l: usize) -> Instance {
    assert!(n >= 2);
    let mut r = rng(seed);
    let supplies = unit_supplies(&mut r, n, l);
    let mut values: Vec<Vec<Rational>> = (0..n).map(|_| positive_values(&mut r, l)).collect();
    values[1] = values[0].clone();
    let rest: Vec<usize> = (2..n).collect();
    let endow = perturbed_shares(&mut r, n, &supplies, &rest, 2 * n);
    build(vec![int(1); n], values, supplies, endow)
}

/// Price on the simplex with denominators dividing `grid`; some coordinates may be zero.
pub fn random_price(r: &mut impl Rng, l: usize, grid: i64) -> Vec<Rational> {
    loop {
        let w: Vec<i64> = (0..l)
            .map(|_| if r.gen_bool(0.15) { 0 } else { r.gen_range(1..=grid) })
            .collect();
        let s: i64 = w.iter().sum();
        if s > 0 {
            return w.iter().map(|&x| rat(x, s)).collect();
        }
    }
}

/// Unit-demand problem with integer supplies and a fractional allocation that
/// mixes a few random deterministic assignments.
pub fn unit_demand_allocation(seed: u64, n: usize, l: usize) -> (AllocationProblem, Allocation) {
    let mut r = rng(seed);
    let mut q = vec![0usize; l];
    let units = r.gen_range(l.min(n)..=n);
    for u in 0..units {
        q[if u < l { u } else { r.gen_range(0..l) }] += 1;
    }
    // drop objects left without supply
    let q: Vec<usize> = q.into_iter().filter(|&v| v > 0).collect();
    let l = q.len();
    let atoms = r.gen_range(1..=4);
    let mut weights: Vec<i64> = (0..atoms).map(|_| r.gen_range(1..=6)).collect();
    let total: i64 = weights.iter().sum();
    let mut x = Allocation::zeros(n, l);
    for w in weights.iter_mut() {
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, r.gen_range(0..=i));
        }
        let mut slot = 0;
        for (k, &qk) in q.iter().enumerate() {
            for _ in 0..qk {
                x.rows[order[slot]][k] += rat(*w, total);
                slot += 1;
            }
        }
    }
    let values = (0..n).map(|_| positive_values(&mut r, l)).collect::<Vec<_>>();
    let supplies: Vec<Rational> = q.iter().map(|&v| int(v as i64)).collect();
    let agents = names("i", n)
        .into_iter()
        .zip(values)
        .map(|(name, v)| Agent {
            name,
            cap: Rational::one(),
            utility: LinearUtility::new(v),
            reservation: Rational::zero(),
        })
        .collect();
    let p = AllocationProblem {
        objects: names("o", l),
        capacities: supplies,
        agents,
    };
    (p, x)
}
