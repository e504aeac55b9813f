//! Per-scenario proximal subproblem
//! `−F(x) − w − r(x − x_anchor) ∈ N_C(x)` solved by a semismooth Newton
//! method on the Fischer–Burmeister reformulation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SviError};
use crate::linalg::{dot, norm_inf, solve_with_fallback};
use crate::model::{jacobian_of, FeasibleSet, ScenarioMap};

/// Newton parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    /// Target for `‖Φ‖_∞`.
    pub inner_tol: f64,
    pub max_newton_iters: usize,
    /// Armijo slope `σ`.
    pub armijo: f64,
    pub backtrack: f64,
    pub min_step: f64,
    /// Below this norm a Fischer–Burmeister pair counts as a kink.
    pub kink_delta: f64,
    pub tikhonov: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            inner_tol: 1e-10,
            max_newton_iters: 100,
            armijo: 1e-4,
            backtrack: 0.5,
            min_step: 1e-12,
            kink_delta: 1e-12,
            tikhonov: 1e-10,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.inner_tol, self.armijo, self.min_step, self.kink_delta, self.tikhonov];
        if positive.iter().any(|v| !(*v > 0.0)) || self.max_newton_iters == 0 {
            return Err(SviError::InvalidParameter("Newton parameters must be positive".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(SviError::InvalidParameter(format!(
                "backtracking factor {} outside (0, 1)",
                self.backtrack
            )));
        }
        Ok(())
    }
}

/// Data of one subproblem.
#[derive(Clone, Copy, Debug)]
pub struct SubproblemSpec<'a> {
    pub map: &'a dyn ScenarioMap,
    pub set: &'a FeasibleSet,
    pub w: &'a [f64],
    pub x_anchor: &'a [f64],
    pub r: f64,
    /// Jacobian of `F` to reuse when the map is affine.
    pub constant_jacobian: Option<&'a DMatrix<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubproblemStatus {
    Converged,
    /// Iteration budget exhausted; the best iterate is returned.
    MaxItersExceeded,
    /// The line search could not decrease the merit any further.
    Stalled,
}

#[derive(Clone, Debug)]
pub struct SubproblemOutcome {
    pub x: Vec<f64>,
    /// `‖Φ(x)‖_∞` at the returned point.
    pub residual: f64,
    pub iterations: usize,
    pub status: SubproblemStatus,
    /// Set when Newton directions were rejected in favour of the merit
    /// gradient, a sign that the regularized map is not monotone near the path.
    pub nonunique_suspect: bool,
}

/// `φ(a, b) = √(a² + b²) − a − b` and its partial derivatives, with the
/// symmetric limiting element at the kink.
fn fb(a: f64, b: f64, delta: f64) -> (f64, f64, f64) {
    let norm = a.hypot(b);
    if norm < delta {
        let d = std::f64::consts::FRAC_1_SQRT_2 - 1.0;
        (norm - a - b, d, d)
    } else {
        (norm - a - b, a / norm - 1.0, b / norm - 1.0)
    }
}

/// Values `Φ` and the diagonal coefficients `(dA, dB)` with
/// `∂Φ = diag(dA) + diag(dB)·DG`.
fn residual_parts(set: &FeasibleSet, x: &[f64], g: &[f64], delta: f64, phi: &mut [f64], da: &mut [f64], db: &mut [f64]) {
    for i in 0..x.len() {
        let (lo, hi) = set.bounds(i);
        let (v, a, b) = match (lo.is_finite(), hi.is_finite()) {
            (true, false) => fb(x[i] - lo, g[i], delta),
            (false, true) => {
                let (v, ca, cb) = fb(hi - x[i], -g[i], delta);
                (v, -ca, -cb)
            }
            (true, true) => {
                let (inner, ca, cb) = fb(hi - x[i], -g[i], delta);
                let (v, oa, ob) = fb(x[i] - lo, inner, delta);
                (v, oa - ob * ca, -ob * cb)
            }
            (false, false) => (g[i], 0.0, 1.0),
        };
        phi[i] = v;
        da[i] = a;
        db[i] = b;
    }
}

struct Regularized<'a> {
    spec: SubproblemSpec<'a>,
    buf: Vec<f64>,
}

impl Regularized<'_> {
    /// `G(x) = F(x) + w + r(x − x_anchor)`.
    fn eval(&mut self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.spec.map.eval(x, &mut self.buf);
        for i in 0..x.len() {
            out[i] = self.buf[i] + self.spec.w[i] + self.spec.r * (x[i] - self.spec.x_anchor[i]);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(SviError::NonFinite { scenario: 0 });
        }
        Ok(())
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let mut j = match self.spec.constant_jacobian {
            Some(j) => j.clone(),
            None => jacobian_of(self.spec.map, x)?,
        };
        for i in 0..x.len() {
            j[(i, i)] += self.spec.r;
        }
        Ok(j)
    }
}

/// Solves the scenario subproblem from `warm_start`.
///
/// A `NonFinite` error carries scenario index 0; callers that know the
/// scenario rewrite it.
pub fn solve_scenario_subproblem(spec: SubproblemSpec<'_>, warm_start: &[f64], cfg: &NewtonConfig) -> Result<SubproblemOutcome> {
    let n = spec.map.dim();
    if warm_start.len() != n || spec.w.len() != n || spec.x_anchor.len() != n {
        return Err(SviError::Dimension(format!(
            "subproblem of dimension {n} with warm start {}, w {}, anchor {}",
            warm_start.len(),
            spec.w.len(),
            spec.x_anchor.len()
        )));
    }
    if !(spec.r > 0.0) {
        return Err(SviError::InvalidParameter(format!("proximal parameter r = {} must be positive", spec.r)));
    }
    if warm_start.iter().any(|v| !v.is_finite()) {
        return Err(SviError::InvalidParameter("warm start is not finite".into()));
    }
    let mut g_map = Regularized { spec, buf: vec![0.0; n] };
    let delta = cfg.kink_delta;

    let mut x = warm_start.to_vec();
    let mut g = vec![0.0; n];
    let (mut phi, mut da, mut db) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    g_map.eval(&x, &mut g)?;
    residual_parts(spec.set, &x, &g, delta, &mut phi, &mut da, &mut db);
    let mut merit = 0.5 * dot(&phi, &phi);
    let mut nonunique_suspect = false;

    let mut trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];
    let (mut phi_t, mut da_t, mut db_t) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);

    for iter in 0..=cfg.max_newton_iters {
        let res = norm_inf(&phi);
        if res <= cfg.inner_tol {
            return Ok(SubproblemOutcome {
                x,
                residual: res,
                iterations: iter,
                status: SubproblemStatus::Converged,
                nonunique_suspect,
            });
        }
        if iter == cfg.max_newton_iters {
            break;
        }
        let dg = g_map.jacobian(&x)?;
        let mut jac = dg;
        for i in 0..n {
            for c in 0..n {
                jac[(i, c)] *= db[i];
            }
            jac[(i, i)] += da[i];
        }
        let phi_v = DVector::from_column_slice(&phi);
        let grad = jac.tr_mul(&phi_v);
        let mut dir = match solve_with_fallback(&jac, &(-&phi_v), cfg.tikhonov) {
            Ok(d) => Some(d),
            Err(SviError::SingularNewtonSystem) if grad.amax() > 0.0 => None,
            Err(e) => return Err(e),
        };
        // descent test on the merit ½‖Φ‖²
        if let Some(d) = &dir {
            let slope = grad.dot(d);
            if !(slope <= -1e-8 * d.norm().powf(2.1)) {
                dir = None;
            }
        }
        let d = match dir {
            Some(d) => d,
            None => {
                nonunique_suspect = true;
                -grad.clone()
            }
        };
        let slope = grad.dot(&d);
        let mut t = 1.0;
        let mut accepted = false;
        while t >= cfg.min_step {
            for i in 0..n {
                trial[i] = x[i] + t * d[i];
            }
            let ok = g_map.eval(&trial, &mut g_trial).is_ok();
            if ok {
                residual_parts(spec.set, &trial, &g_trial, delta, &mut phi_t, &mut da_t, &mut db_t);
                let m = 0.5 * dot(&phi_t, &phi_t);
                if m <= merit + cfg.armijo * t * slope {
                    accepted = true;
                    merit = m;
                    break;
                }
            }
            t *= cfg.backtrack;
        }
        if !accepted {
            return Ok(SubproblemOutcome {
                x,
                residual: res,
                iterations: iter + 1,
                status: SubproblemStatus::Stalled,
                nonunique_suspect,
            });
        }
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut g, &mut g_trial);
        std::mem::swap(&mut phi, &mut phi_t);
        std::mem::swap(&mut da, &mut da_t);
        std::mem::swap(&mut db, &mut db_t);
    }
    let residual = norm_inf(&phi);
    Ok(SubproblemOutcome {
        x,
        residual,
        iterations: cfg.max_newton_iters,
        status: SubproblemStatus::MaxItersExceeded,
        nonunique_suspect,
    })
}
