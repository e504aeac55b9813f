//! Elicited progressive hedging for multistage stochastic variational
//! inequalities over finite scenario trees.

pub mod elicitation;
pub mod error;
pub mod instances;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod pha;
pub mod scenario;
pub mod study;
pub mod subproblem;

pub use elicitation::{Criterion, ElicitationInput, ElicitationReport, EvalGrid, Strictness, SubspaceSplit};
pub use error::{Result, SviError};
pub use model::{AffineMap, FeasibleSet, FnMap, InstanceFile, ScenarioMap, SviProblem, TwoStageSlcp};
pub use scenario::{HistoryKey, Policy, Scenario, ScenarioSpace, Subspace, SubspaceBasis};
pub use pha::{pha_solve, rs_norm, stopping_error, PhaConfig, SolveReport, SolveStatus};
pub use subproblem::{solve_scenario_subproblem, NewtonConfig, SubproblemOutcome, SubproblemSpec, SubproblemStatus};
