//! The elicited progressive hedging loop with a relaxed dual update.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SviError};
use crate::model::{jacobian_of, SviProblem};
use crate::scenario::{Policy, ScenarioSpace};
use crate::subproblem::{solve_scenario_subproblem, NewtonConfig, SubproblemSpec, SubproblemStatus};

/// Tolerance for accepting user-supplied starting points as members of `N`/`M`.
const START_MEMBERSHIP_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaConfig {
    pub r: f64,
    pub s: f64,
    /// Dual relaxation factor in `(0, 2)`.
    pub rho: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub inner: NewtonConfig,
    pub record_history: bool,
    /// Worker threads for the scenario subproblems; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl PhaConfig {
    /// Defaults for a given `r`: `s = r/2`, `ρ = 1.618`, `tol = 1e-5`, 2000 iterations.
    pub fn new(r: f64) -> Self {
        Self {
            r,
            s: r / 2.0,
            rho: 1.618,
            tol: 1e-5,
            max_iter: 2000,
            inner: NewtonConfig::default(),
            record_history: true,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > self.s && self.s >= 0.0 && self.r.is_finite()) {
            return Err(SviError::InvalidParameter(format!(
                "need r > s ≥ 0, got r = {}, s = {}",
                self.r, self.s
            )));
        }
        if !(self.rho > 0.0 && self.rho < 2.0) {
            return Err(SviError::InvalidParameter(format!("rho = {} outside (0, 2)", self.rho)));
        }
        if !(self.tol > 0.0) {
            return Err(SviError::InvalidParameter(format!("tol = {} must be positive", self.tol)));
        }
        if self.threads == Some(0) {
            return Err(SviError::InvalidParameter("threads must be at least 1".into()));
        }
        self.inner.validate()
    }
}

impl Default for PhaConfig {
    fn default() -> Self {
        Self::new(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIters,
    InnerFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerFailure {
    pub scenario: usize,
    pub iteration: usize,
    pub message: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iterations: usize,
    pub final_error: f64,
    /// Stopping error after each outer iteration.
    pub error_history: Vec<f64>,
    pub x_final: Policy,
    pub w_final: Policy,
    pub wall_time: f64,
    /// `rs`-norm of the change of `(x, w)` over each outer iteration.
    pub rs_norm_history: Option<Vec<f64>>,
    pub inner_failure: Option<InnerFailure>,
    /// Subproblem solves that fell back to gradient steps.
    pub nonunique_suspects: usize,
}

/// State handed to an observer after every outer iteration.
pub struct IterateView<'a> {
    pub iteration: usize,
    pub x: &'a Policy,
    pub w: &'a Policy,
    pub x_hat: &'a Policy,
    pub error: f64,
}

/// Normalized residual at `P_N(x)`: the two-stage SLCP error when the problem
/// is an SLCP, the aggregated natural-map residual otherwise.
pub fn stopping_error(problem: &SviProblem, x: &Policy) -> Result<f64> {
    match problem.slcp() {
        Some(slcp) => slcp.stopping_error(x),
        None => problem.aggregated_residual(x),
    }
}

/// `√(‖x‖² + ‖w‖²/(r(r − s)))`.
pub fn rs_norm(space: &ScenarioSpace, x: &Policy, w: &Policy, r: f64, s: f64) -> Result<f64> {
    if !(r > s && s >= 0.0) {
        return Err(SviError::InvalidParameter(format!("need r > s ≥ 0, got r = {r}, s = {s}")));
    }
    let nx = space.norm(x)?;
    let nw = space.norm(w)?;
    Ok((nx * nx + nw * nw / (r * (r - s))).sqrt())
}

pub fn pha_solve(problem: &SviProblem, cfg: &PhaConfig, x0: Option<&Policy>, w0: Option<&Policy>) -> Result<SolveReport> {
    pha_solve_observed(problem, cfg, x0, w0, |_| {})
}

pub fn pha_solve_observed(
    problem: &SviProblem,
    cfg: &PhaConfig,
    x0: Option<&Policy>,
    w0: Option<&Policy>,
    observer: impl FnMut(&IterateView<'_>) + Send,
) -> Result<SolveReport> {
    cfg.validate()?;
    match cfg.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| SviError::InvalidParameter(format!("thread pool: {e}")))?;
            pool.install(|| run(problem, cfg, x0, w0, observer))
        }
        None => run(problem, cfg, x0, w0, observer),
    }
}

fn run(
    problem: &SviProblem,
    cfg: &PhaConfig,
    x0: Option<&Policy>,
    w0: Option<&Policy>,
    mut observer: impl FnMut(&IterateView<'_>),
) -> Result<SolveReport> {
    let start = Instant::now();
    let space = problem.space();
    let j = space.scenarios();
    let mut x = match x0 {
        Some(x0) => {
            space.check(x0)?;
            if space.nonanticipativity_defect(x0)? > START_MEMBERSHIP_TOL {
                return Err(SviError::InvalidParameter("x0 is not nonanticipative".into()));
            }
            space.project_nonanticipative(x0)?
        }
        None => Policy::zeros_like(space),
    };
    let mut w = match w0 {
        Some(w0) => {
            space.check(w0)?;
            if space.multiplier_defect(w0)? > START_MEMBERSHIP_TOL {
                return Err(SviError::InvalidParameter("w0 is not in the multiplier subspace".into()));
            }
            space.project_multiplier(w0)?
        }
        None => Policy::zeros_like(space),
    };

    let jacobians: Vec<Option<DMatrix<f64>>> = (0..j)
        .map(|i| {
            let map = problem.map(i);
            if map.is_affine() {
                jacobian_of(map, x.row(i)).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;

    let dual_step = cfg.rho * (cfg.r - cfg.s);
    let mut x_hat = x.clone();
    let mut error_history = Vec::new();
    let mut rs_history = cfg.record_history.then(Vec::new);
    let mut final_error = stopping_error(problem, &x)?;
    let mut status = SolveStatus::MaxIters;
    let mut inner_failure = None;
    let mut nonunique_suspects = 0;
    let mut iterations = 0;

    for k in 0..cfg.max_iter {
        let outcomes: Vec<_> = (0..j)
            .into_par_iter()
            .map(|i| {
                let spec = SubproblemSpec {
                    map: problem.map(i),
                    set: problem.set(i),
                    w: w.row(i),
                    x_anchor: x.row(i),
                    r: cfg.r,
                    constant_jacobian: jacobians[i].as_ref(),
                };
                solve_scenario_subproblem(spec, x_hat.row(i), &cfg.inner)
            })
            .collect();
        let mut next_hat = Policy::zeros_like(space);
        for (i, out) in outcomes.into_iter().enumerate() {
            let failure = match out {
                Ok(o) if o.status == SubproblemStatus::Converged => {
                    nonunique_suspects += o.nonunique_suspect as usize;
                    next_hat.row_mut(i).copy_from_slice(&o.x);
                    None
                }
                Ok(o) => Some(format!("{:?} with residual {:.3e}", o.status, o.residual)),
                Err(SviError::NonFinite { .. }) => Some(SviError::NonFinite { scenario: i }.to_string()),
                Err(e) => Some(e.to_string()),
            };
            if let Some(message) = failure {
                inner_failure = Some(InnerFailure {
                    scenario: i,
                    iteration: k + 1,
                    message,
                });
                break;
            }
        }
        if inner_failure.is_some() {
            status = SolveStatus::InnerFailure;
            break;
        }
        x_hat = next_hat;
        let x_next = space.project_nonanticipative(&x_hat)?;
        let w_next = space.project_multiplier(&w.axpy(dual_step, &x_hat.sub(&x_next)))?;
        if let Some(h) = rs_history.as_mut() {
            h.push(rs_norm(space, &x_next.sub(&x), &w_next.sub(&w), cfg.r, cfg.s)?);
        }
        x = x_next;
        w = w_next;
        iterations = k + 1;
        final_error = stopping_error(problem, &x)?;
        if cfg.record_history {
            error_history.push(final_error);
        }
        observer(&IterateView {
            iteration: iterations,
            x: &x,
            w: &w,
            x_hat: &x_hat,
            error: final_error,
        });
        if final_error <= cfg.tol {
            status = SolveStatus::Converged;
            break;
        }
    }

    Ok(SolveReport {
        status,
        iterations,
        final_error,
        error_history,
        x_final: x,
        w_final: w,
        wall_time: start.elapsed().as_secs_f64(),
        rs_norm_history: rs_history,
        inner_failure,
        nonunique_suspects,
    })
}

/// Serialized report: `{status, iterations, final_error, wall_time_s, x1, x2, w}`
/// with `x1` the shared first-stage block, `x2` the remaining blocks per
/// scenario and `w` the full multiplier rows per scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub status: SolveStatus,
    pub iterations: usize,
    pub final_error: f64,
    pub wall_time_s: f64,
    pub x1: Vec<f64>,
    pub x2: BTreeMap<usize, Vec<f64>>,
    pub w: BTreeMap<usize, Vec<f64>>,
}

impl ReportFile {
    pub fn from_report(report: &SolveReport, space: &ScenarioSpace) -> Self {
        let n1 = space.stage_dims()[0];
        let x = &report.x_final;
        Self {
            status: report.status,
            iterations: report.iterations,
            final_error: report.final_error,
            wall_time_s: report.wall_time,
            x1: x.row(0)[..n1].to_vec(),
            x2: (0..x.scenarios()).map(|i| (i, x.row(i)[n1..].to_vec())).collect(),
            w: (0..x.scenarios()).map(|i| (i, report.w_final.row(i).to_vec())).collect(),
        }
    }

    /// Rebuilds the primal policy.
    pub fn policy(&self, space: &ScenarioSpace) -> Result<Policy> {
        let rows: Vec<Vec<f64>> = (0..space.scenarios())
            .map(|i| {
                let tail = self
                    .x2
                    .get(&i)
                    .ok_or_else(|| SviError::Instance(format!("solution lacks scenario {i}")))?;
                Ok(self.x1.iter().chain(tail).copied().collect())
            })
            .collect::<Result<_>>()?;
        let x = Policy::from_rows(&rows)?;
        space.check(&x)?;
        Ok(x)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Writes the per-iteration history as CSV with columns `iteration,err,rs_norm`.
pub fn write_history_csv(report: &SolveReport, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "err", "rs_norm"])?;
    for (k, err) in report.error_history.iter().enumerate() {
        let rs = report
            .rs_norm_history
            .as_ref()
            .and_then(|h| h.get(k))
            .map(|v| format!("{v:e}"))
            .unwrap_or_default();
        w.write_record([(k + 1).to_string(), format!("{err:e}"), rs])?;
    }
    w.flush()?;
    Ok(())
}
