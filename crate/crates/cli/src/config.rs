//! Run configuration: one JSON document holding every tolerance and budget.

use std::path::{Path, PathBuf};

use fairshare_core::config::Tolerances;
use fairshare_core::kkm::KKMConfig;
use fairshare_core::market::MarketConfig;
use fairshare_core::num::{rat, Rational};
use fairshare_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "FAIRSHARE_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kkm,
    Market,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KkmBudget {
    pub grid_depth: u32,
    pub extra_depth: u32,
    pub max_evaluations: usize,
    pub time_limit_secs: f64,
}

impl Default for KkmBudget {
    fn default() -> Self {
        let k = KKMConfig::default();
        Self {
            grid_depth: k.grid_depth,
            extra_depth: k.extra_depth,
            max_evaluations: k.max_evaluations,
            time_limit_secs: k.time_limit_secs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketBudget {
    pub starts: usize,
    pub max_evaluations: usize,
}

impl Default for MarketBudget {
    fn default() -> Self {
        let m = MarketConfig::default();
        Self {
            starts: m.starts,
            max_evaluations: m.max_evaluations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    #[serde(with = "fairshare_core::num::serde_rational")]
    pub epsilon: Rational,
    #[serde(
        with = "fairshare_core::num::serde_rational::option",
        skip_serializing_if = "Option::is_none"
    )]
    pub delta: Option<Rational>,
    pub tolerances: Tolerances,
    pub seed: u64,
    /// Grid used when floating solver output is snapped to rationals.
    pub denominator: u64,
    pub kkm: KkmBudget,
    pub market: MarketBudget,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit_out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Kkm,
            epsilon: rat(1, 100),
            delta: None,
            tolerances: Tolerances::default(),
            seed: 0,
            denominator: 1_000_000,
            kkm: KkmBudget::default(),
            market: MarketBudget::default(),
            out: None,
            audit_out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        Ok(cfg)
    }

    /// The file named on the command line, else the one in [`CONFIG_ENV`], else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn kkm_config(&self) -> KKMConfig {
        KKMConfig {
            epsilon: self.epsilon.clone(),
            delta: self.delta.clone(),
            grid_depth: self.kkm.grid_depth,
            extra_depth: self.kkm.extra_depth,
            tol_obj: self.tolerances.tol_obj,
            seed: self.seed,
            max_evaluations: self.kkm.max_evaluations,
            time_limit_secs: self.kkm.time_limit_secs,
            polish_denominator: self.denominator,
            ..KKMConfig::default()
        }
    }

    pub fn market_config(&self) -> MarketConfig {
        MarketConfig {
            tolerances: self.tolerances,
            seed: self.seed,
            starts: self.market.starts,
            max_evaluations: self.market.max_evaluations,
            ..MarketConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tolerances.validate()?;
        if self.denominator == 0 {
            return Err(Error::Config("denominator must be positive".into()));
        }
        self.kkm_config().validate()
    }

    /// Validation that also checks the regularizer bound against a problem.
    pub fn validate_for(&self, p: &fairshare_core::AllocationProblem) -> Result<()> {
        self.validate()?;
        if self.method == Method::Kkm {
            self.kkm_config().delta_for(p)?;
        }
        Ok(())
    }
}
