//! Fair allocation of divisible objects under participation constraints:
//! exact fairness auditors, a welfare-weight simplicial solver, a pseudo-market
//! equilibrium solver, lottery decomposition and school-choice adapters.

// dense numeric kernels index several parallel arrays per loop
#![allow(clippy::needless_range_loop, clippy::type_complexity)]

pub mod config;
pub mod constraints;
pub mod error;
pub mod examples;
pub mod fairness;
pub mod io;
pub mod kkm;
pub mod lottery;
pub mod lp;
pub mod market;
pub mod model;
pub mod num;
pub mod random;
pub mod schoolchoice;

pub use constraints::{Constraint, ConstraintStructure, TypePartition};
pub use error::{Error, Result};
pub use fairness::{EnvyFact, FairnessReport, Justification, ParetoModeSpec};
pub use kkm::{KKMCertificate, KKMConfig, WelfareWeights};
pub use model::{Agent, Allocation, AllocationProblem, LinearUtility};
pub use num::Rational;
