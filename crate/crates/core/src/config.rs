//! Tolerances shared by solvers and verifiers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Absolute slack for floating comparisons.
    pub tol_cmp: f64,
    /// Market clearing, sup norm.
    pub tol_clear: f64,
    /// Bisection width for the income root.
    pub tol_root: f64,
    /// Inner objective tolerance of the welfare-weight solver.
    pub tol_obj: f64,
    /// Budget overrun allowed by equilibrium verification.
    pub tol_budget: f64,
    /// Utility shortfall against demand allowed by equilibrium verification.
    pub tol_opt: f64,
    /// Income identity in floating mode.
    pub tol_income: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol_cmp: 1e-9,
            tol_clear: 1e-6,
            tol_root: 1e-12,
            tol_obj: 1e-9,
            tol_budget: 1e-8,
            tol_opt: 1e-6,
            tol_income: 1e-9,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("tol_cmp", self.tol_cmp),
            ("tol_clear", self.tol_clear),
            ("tol_root", self.tol_root),
            ("tol_obj", self.tol_obj),
            ("tol_budget", self.tol_budget),
            ("tol_opt", self.tol_opt),
            ("tol_income", self.tol_income),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}
