//! Randomized property campaigns over generated instances.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fairshare_core::io::{to_json, ProblemFile};
use fairshare_core::kkm::{kkm_search, KKMConfig};
use fairshare_core::market::{income_envy_violations, income_schedule, phi, MarketData};
use fairshare_core::num::{int, Rational};
use fairshare_core::random::{
    clone_instance, common_favorite_instance, large_cap_instance, random_price, rng, unit_demand_instance, Instance,
};
use fairshare_core::{AllocationProblem, Error, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    UnitDemand,
    LargeCap,
    CommonFavorite,
    Clone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSpec {
    pub generator: Generator,
    pub instances: usize,
    pub seed: u64,
    pub max_agents: usize,
    pub max_objects: usize,
    pub prices_per_instance: usize,
    /// Also run the welfare-weight solver and check equal treatment of clones.
    pub kkm: bool,
    #[serde(with = "fairshare_core::num::serde_rational")]
    pub epsilon: Rational,
}

impl Default for CampaignSpec {
    fn default() -> Self {
        Self {
            generator: Generator::UnitDemand,
            instances: 200,
            seed: 0,
            max_agents: 8,
            max_objects: 5,
            prices_per_instance: 5,
            kkm: false,
            epsilon: fairshare_core::num::rat(1, 100),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counter {
    pub checked: usize,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub spec: CampaignSpec,
    pub properties: BTreeMap<String, Counter>,
    /// Solver runs that ended without a certificate (not property violations).
    pub solver_failures: usize,
    pub repros: Vec<String>,
    pub passes: bool,
}

pub const INCOME_IDENTITY: &str = "income_identity";
pub const RESERVATION_FLOOR: &str = "reservation_floor";
pub const INCOME_ENVY: &str = "income_envy";
pub const MONOTONE_SCHEDULE: &str = "monotone_schedule";
pub const EQUAL_INCOMES: &str = "clone_equal_incomes";
pub const EQUAL_TREATMENT: &str = "clone_equal_treatment";

/// Every property checked at one price, with its verdict.
pub fn price_properties(p: &AllocationProblem, price: &[Rational]) -> Result<Vec<(&'static str, bool)>> {
    let data = MarketData::<Rational>::new(p);
    let s = income_schedule(price, &data)?;
    let n = p.num_agents();
    let total: Rational = s.incomes.iter().sum();
    let mut out = vec![
        (INCOME_IDENTITY, total == s.value),
        (RESERVATION_FLOOR, (0..n).all(|i| s.e_res[i] <= s.incomes[i])),
        (INCOME_ENVY, income_envy_violations(&s).is_empty()),
    ];
    let top = s
        .e_sat
        .iter()
        .chain(std::iter::once(&s.value))
        .max()
        .cloned()
        .unwrap_or_else(|| int(0));
    let grid: Vec<Rational> = (0..100)
        .map(|k| top.clone() * Rational::new(k.into(), 99.into()))
        .collect();
    let values: Vec<Rational> = grid.iter().map(|m| phi(m, &s.e_res, &s.e_sat, &s.value)).collect();
    out.push((MONOTONE_SCHEDULE, values.windows(2).all(|w| w[0] <= w[1])));
    let clones = clone_pairs(p);
    if !clones.is_empty() {
        out.push((EQUAL_INCOMES, clones.iter().all(|&(i, j)| s.incomes[i] == s.incomes[j])));
    }
    Ok(out)
}

fn clone_pairs(p: &AllocationProblem) -> Vec<(usize, usize)> {
    let n = p.num_agents();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&p.agents[i], &p.agents[j]);
            if a.utility == b.utility && a.cap == b.cap && a.reservation == b.reservation {
                out.push((i, j));
            }
        }
    }
    out
}

fn generate(spec: &CampaignSpec, index: usize) -> (Instance, u64) {
    let seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(index as u64);
    let mut r = rng(seed);
    let n = r.gen_range(2..=spec.max_agents.max(2));
    let l = r.gen_range(2..=spec.max_objects.max(2));
    let inst = match spec.generator {
        Generator::UnitDemand => unit_demand_instance(seed, n, l),
        Generator::LargeCap => large_cap_instance(seed, n, l),
        Generator::CommonFavorite => common_favorite_instance(seed, n, l),
        Generator::Clone => clone_instance(seed, n, l),
    };
    (inst, seed)
}

/// Drops agents one at a time while the named property keeps failing at `price`.
pub fn minimize(p: &AllocationProblem, price: &[Rational], property: &str) -> AllocationProblem {
    let fails = |q: &AllocationProblem| {
        price_properties(q, price)
            .map(|v| v.iter().any(|(name, ok)| *name == property && !ok))
            .unwrap_or(false)
    };
    let mut cur = p.clone();
    let mut i = cur.num_agents();
    while i > 0 {
        i -= 1;
        if cur.num_agents() <= 1 {
            break;
        }
        let mut smaller = cur.clone();
        smaller.agents.remove(i);
        if fairshare_core::model::validate_problem(&smaller).is_valid() && fails(&smaller) {
            cur = smaller;
        }
    }
    cur
}

struct InstanceResult {
    counts: Vec<(&'static str, bool)>,
    solver_failed: bool,
    repros: Vec<(String, String)>,
}

fn run_instance(spec: &CampaignSpec, index: usize) -> Result<InstanceResult> {
    let (inst, seed) = generate(spec, index);
    let p = &inst.problem;
    let mut r = rng(seed ^ 0x9e37_79b9);
    let mut counts = Vec::new();
    let mut repros = Vec::new();
    for k in 0..spec.prices_per_instance {
        let price = random_price(&mut r, p.num_objects(), 24);
        for (name, ok) in price_properties(p, &price)? {
            counts.push((name, ok));
            if !ok {
                let small = minimize(p, &price, name);
                let doc = serde_json::json!({
                    "property": name,
                    "seed": seed,
                    "price": price.iter().map(fairshare_core::num::format_rational).collect::<Vec<_>>(),
                    "problem": ProblemFile::from_problem(&small, None, None),
                });
                repros.push((format!("{index:05}-{k}-{name}.json"), to_json(&doc)?));
            }
        }
    }
    let mut solver_failed = false;
    if spec.kkm && !clone_pairs(p).is_empty() {
        match kkm_search(p, None, &KKMConfig::with_epsilon(spec.epsilon.clone())) {
            Ok(c) => {
                let u = c.allocation.utilities(p);
                let ok = clone_pairs(p)
                    .iter()
                    .all(|&(i, j)| num_traits::Signed::abs(&(u[i].clone() - &u[j])) <= spec.epsilon);
                counts.push((EQUAL_TREATMENT, ok));
            }
            Err(Error::BudgetExhausted(_)) | Err(Error::NonConvergence(_)) => solver_failed = true,
            Err(e) => return Err(e),
        }
    }
    Ok(InstanceResult {
        counts,
        solver_failed,
        repros,
    })
}

/// Runs the campaign in parallel; the report depends only on `spec`.
pub fn run_campaign(spec: &CampaignSpec, repro_dir: Option<&Path>) -> Result<CampaignReport> {
    if spec.max_agents < 2 || spec.max_objects < 2 || spec.instances == 0 {
        return Err(Error::Config(
            "campaigns need at least two agents, two objects and one instance".into(),
        ));
    }
    let results: Vec<Result<InstanceResult>> = (0..spec.instances)
        .into_par_iter()
        .map(|i| run_instance(spec, i))
        .collect();
    let mut properties: BTreeMap<String, Counter> = BTreeMap::new();
    let mut solver_failures = 0;
    let mut repros = Vec::new();
    for r in results {
        let r = r?;
        for (name, ok) in r.counts {
            let c = properties.entry(name.to_string()).or_default();
            c.checked += 1;
            c.violations += usize::from(!ok);
        }
        solver_failures += usize::from(r.solver_failed);
        for (file, text) in r.repros {
            if let Some(dir) = repro_dir {
                std::fs::create_dir_all(dir)
                    .map_err(|e| Error::Parse(format!("cannot create {}: {e}", dir.display())))?;
                let path: PathBuf = dir.join(&file);
                std::fs::write(&path, text)
                    .map_err(|e| Error::Parse(format!("cannot write {}: {e}", path.display())))?;
            }
            repros.push(file);
        }
    }
    let passes = properties.values().all(|c| c.violations == 0);
    Ok(CampaignReport {
        spec: spec.clone(),
        properties,
        solver_failures,
        repros,
        passes,
    })
}
