//! Problem data: per-scenario maps and feasible sets, the two-stage SLCP
//! specialization with its JSON instance format, and solution residuals.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SviError};
use crate::linalg::{norm2, norm_inf};
use crate::scenario::{Policy, ScenarioSpace};

/// Relative step of the central-difference Jacobian fallback.
pub const FD_STEP: f64 = 1e-5;

/// The mapping `x ↦ F(x, ξ)` of one scenario.
pub trait ScenarioMap: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], out: &mut [f64]);

    /// Analytic Jacobian, if the map provides one.
    fn jacobian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Whether the Jacobian is constant.
    fn is_affine(&self) -> bool {
        false
    }
}

/// Analytic Jacobian when available, central differences otherwise.
pub fn jacobian_of(map: &dyn ScenarioMap, x: &[f64]) -> Result<DMatrix<f64>> {
    if let Some(j) = map.jacobian(x) {
        return Ok(j);
    }
    crate::oracle::fd_jacobian(
        |z| {
            let mut out = vec![0.0; map.dim()];
            map.eval(z, &mut out);
            out
        },
        x,
        FD_STEP,
    )
}

/// `F(x) = M x + q`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    pub m: DMatrix<f64>,
    pub q: DVector<f64>,
}

impl AffineMap {
    pub fn new(m: DMatrix<f64>, q: DVector<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() != q.len() {
            return Err(SviError::Dimension(format!(
                "affine map with a {}x{} matrix and a vector of length {}",
                m.nrows(),
                m.ncols(),
                q.len()
            )));
        }
        Ok(Self { m, q })
    }

    pub fn linear(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        Self::new(m, DVector::zeros(n))
    }
}

impl ScenarioMap for AffineMap {
    fn dim(&self) -> usize {
        self.q.len()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let n = self.q.len();
        for (i, o) in out.iter_mut().enumerate().take(n) {
            let mut s = self.q[i];
            for (j, xj) in x.iter().enumerate() {
                s += self.m[(i, j)] * xj;
            }
            *o = s;
        }
    }

    fn jacobian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.m.clone())
    }

    fn is_affine(&self) -> bool {
        true
    }
}

type EvalFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type JacFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

/// A map given by closures; the Jacobian falls back to central differences.
#[derive(Clone)]
pub struct FnMap {
    dim: usize,
    eval: Arc<EvalFn>,
    jac: Option<Arc<JacFn>>,
}

impl FnMap {
    pub fn new(dim: usize, eval: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self {
            dim,
            eval: Arc::new(eval),
            jac: None,
        }
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.jac = Some(Arc::new(jac));
        self
    }
}

impl fmt::Debug for FnMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnMap")
            .field("dim", &self.dim)
            .field("analytic_jacobian", &self.jac.is_some())
            .finish()
    }
}

impl ScenarioMap for FnMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.eval)(x, out)
    }

    fn jacobian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        self.jac.as_ref().map(|j| j(x))
    }
}

/// Per-scenario feasible set: the nonnegative orthant or a box with possibly
/// infinite bounds.
#[derive(Clone, Debug, PartialEq)]
pub enum FeasibleSet {
    Orthant,
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl FeasibleSet {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(SviError::Dimension("box bounds differ in length".into()));
        }
        if let Some(i) = (0..lower.len()).find(|&i| lower[i].is_nan() || upper[i].is_nan() || lower[i] > upper[i]) {
            return Err(SviError::InvalidParameter(format!(
                "empty box in component {i}: [{}, {}]",
                lower[i], upper[i]
            )));
        }
        Ok(FeasibleSet::Box { lower, upper })
    }

    pub fn bounds(&self, i: usize) -> (f64, f64) {
        match self {
            FeasibleSet::Orthant => (0.0, f64::INFINITY),
            FeasibleSet::Box { lower, upper } => (lower[i], upper[i]),
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        match self {
            FeasibleSet::Orthant => Ok(()),
            FeasibleSet::Box { lower, .. } if lower.len() == n => Ok(()),
            FeasibleSet::Box { lower, .. } => Err(SviError::Dimension(format!(
                "box of dimension {} for maps of dimension {n}",
                lower.len()
            ))),
        }
    }

    pub fn project_in_place(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            let (lo, hi) = self.bounds(i);
            *v = v.max(lo).min(hi);
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter().enumerate().all(|(i, &v)| {
            let (lo, hi) = self.bounds(i);
            v >= lo - tol && v <= hi + tol
        })
    }
}

/// The SVI data: one map and one feasible set per scenario over a scenario tree.
#[derive(Clone, Debug)]
pub struct SviProblem {
    space: ScenarioSpace,
    maps: Vec<Arc<dyn ScenarioMap>>,
    sets: Vec<FeasibleSet>,
    slcp: Option<Arc<TwoStageSlcp>>,
}

impl SviProblem {
    pub fn new(space: ScenarioSpace, maps: Vec<Arc<dyn ScenarioMap>>, sets: Vec<FeasibleSet>) -> Result<Self> {
        let j = space.scenarios();
        if maps.len() != j || sets.len() != j {
            return Err(SviError::Dimension(format!(
                "{} maps and {} sets for {j} scenarios",
                maps.len(),
                sets.len()
            )));
        }
        for (i, m) in maps.iter().enumerate() {
            if m.dim() != space.dim() {
                return Err(SviError::Dimension(format!(
                    "map {i} has dimension {}, space has {}",
                    m.dim(),
                    space.dim()
                )));
            }
        }
        for s in &sets {
            s.check_dim(space.dim())?;
        }
        Ok(Self {
            space,
            maps,
            sets,
            slcp: None,
        })
    }

    pub fn space(&self) -> &ScenarioSpace {
        &self.space
    }

    pub fn map(&self, scenario: usize) -> &dyn ScenarioMap {
        self.maps[scenario].as_ref()
    }

    pub fn set(&self, scenario: usize) -> &FeasibleSet {
        &self.sets[scenario]
    }

    /// The SLCP this problem was built from, if any.
    pub fn slcp(&self) -> Option<&TwoStageSlcp> {
        self.slcp.as_deref()
    }

    pub fn is_affine(&self) -> bool {
        self.maps.iter().all(|m| m.is_affine())
    }

    /// Scenario-wise application of the maps.
    pub fn eval_f(&self, x: &Policy) -> Result<Policy> {
        self.space.check(x)?;
        let mut out = Policy::zeros_like(&self.space);
        for i in 0..self.space.scenarios() {
            self.maps[i].eval(x.row(i), out.row_mut(i));
            if out.row(i).iter().any(|v| !v.is_finite()) {
                return Err(SviError::NonFinite { scenario: i });
            }
        }
        Ok(out)
    }

    /// Violation of the extensive form: the largest natural-map residual
    /// `‖x(ξ) − Π_C(x(ξ) − F(x(ξ),ξ) − w(ξ))‖_∞` plus the distance of `x` from
    /// nonanticipativity and of `w` from the multiplier subspace.
    pub fn extensive_residual(&self, x: &Policy, w: &Policy) -> Result<f64> {
        self.space.check(w)?;
        let f = self.eval_f(x)?;
        let mut natural = 0.0_f64;
        let mut buf = vec![0.0; self.space.dim()];
        for i in 0..self.space.scenarios() {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = x.get(i, k) - f.get(i, k) - w.get(i, k);
            }
            self.sets[i].project_in_place(&mut buf);
            for (k, b) in buf.iter().enumerate() {
                natural = natural.max((x.get(i, k) - b).abs());
            }
        }
        Ok(natural + self.space.nonanticipativity_defect(x)? + self.space.multiplier_defect(w)?)
    }

    /// Normalized residual of the expectation-aggregated system, evaluated at
    /// `P_N(x)`: for every stage and history group, the projected residual of
    /// the shared block against the conditional expectation of `F`, divided by
    /// `1 + ‖block‖`. For a two-stage SLCP this coincides with
    /// [`TwoStageSlcp::stopping_error`].
    pub fn aggregated_residual(&self, x: &Policy) -> Result<f64> {
        self.group_residuals(x, |res, block| norm2(res) / (1.0 + norm2(block)))
    }

    /// Unnormalized natural-map residual of the basic form on `C ∩ N`, in the
    /// max norm, evaluated at `P_N(x)`.
    pub fn basic_residual(&self, x: &Policy) -> Result<f64> {
        self.group_residuals(x, |res, _| norm_inf(res))
    }

    fn group_residuals(&self, x: &Policy, measure: impl Fn(&[f64], &[f64]) -> f64) -> Result<f64> {
        let x = self.space.project_nonanticipative(x)?;
        let f = self.eval_f(&x)?;
        let probs = self.space.probabilities();
        let mut worst = 0.0_f64;
        for k in 0..self.space.stages() {
            let range = self.space.stage_range(k);
            if range.is_empty() {
                continue;
            }
            for group in self.space.groups(k) {
                let mass: f64 = group.iter().map(|&i| probs[i]).sum();
                let lead = group[0];
                let mut res = Vec::with_capacity(range.len());
                let mut block = Vec::with_capacity(range.len());
                for col in range.clone() {
                    let e: f64 = group.iter().map(|&i| probs[i] * f.get(i, col)).sum::<f64>() / mass;
                    let (lo, hi) = group.iter().fold((f64::NEG_INFINITY, f64::INFINITY), |(lo, hi), &i| {
                        let (l, h) = self.sets[i].bounds(col);
                        (lo.max(l), hi.min(h))
                    });
                    let v = x.get(lead, col);
                    res.push(v - (v - e).max(lo).min(hi));
                    block.push(v);
                }
                worst = worst.max(measure(&res, &block));
            }
        }
        Ok(worst)
    }
}

/// Two-stage stochastic LCP: `F(x, ξ) = M(ξ) x + q(ξ)` on `R^{n1+n2}_+` with a
/// shared first-stage block of size `n1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoStageSlcp {
    n1: usize,
    n2: usize,
    probs: Vec<f64>,
    m: Vec<DMatrix<f64>>,
    q: Vec<DVector<f64>>,
}

impl TwoStageSlcp {
    pub fn new(n1: usize, n2: usize, probs: Vec<f64>, m: Vec<DMatrix<f64>>, q: Vec<DVector<f64>>) -> Result<Self> {
        let n = n1 + n2;
        if m.len() != probs.len() || q.len() != probs.len() {
            return Err(SviError::Dimension(format!(
                "{} matrices, {} vectors, {} probabilities",
                m.len(),
                q.len(),
                probs.len()
            )));
        }
        for (i, (mi, qi)) in m.iter().zip(&q).enumerate() {
            if mi.nrows() != n || mi.ncols() != n || qi.len() != n {
                return Err(SviError::Dimension(format!(
                    "scenario {i}: M is {}x{}, q has length {}, expected n = {n}",
                    mi.nrows(),
                    mi.ncols(),
                    qi.len()
                )));
            }
            if mi.iter().chain(qi.iter()).any(|v| !v.is_finite()) {
                return Err(SviError::Instance(format!("scenario {i} has non-finite data")));
            }
        }
        // validates the probabilities
        ScenarioSpace::two_stage(n1, n2, &probs)?;
        Ok(Self { n1, n2, probs, m, q })
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn dim(&self) -> usize {
        self.n1 + self.n2
    }

    pub fn scenarios(&self) -> usize {
        self.probs.len()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn matrix(&self, scenario: usize) -> &DMatrix<f64> {
        &self.m[scenario]
    }

    pub fn vector(&self, scenario: usize) -> &DVector<f64> {
        &self.q[scenario]
    }

    /// Block `(a, b)` of `M(ξ)` with `a, b ∈ {1, 2}`.
    pub fn block(&self, scenario: usize, a: usize, b: usize) -> DMatrix<f64> {
        let (r0, nr) = if a == 1 { (0, self.n1) } else { (self.n1, self.n2) };
        let (c0, nc) = if b == 1 { (0, self.n1) } else { (self.n1, self.n2) };
        self.m[scenario].view((r0, c0), (nr, nc)).into_owned()
    }

    pub fn space(&self) -> ScenarioSpace {
        ScenarioSpace::two_stage(self.n1, self.n2, &self.probs).expect("validated at construction")
    }

    pub fn to_problem(&self) -> SviProblem {
        let maps: Vec<Arc<dyn ScenarioMap>> = self
            .m
            .iter()
            .zip(&self.q)
            .map(|(m, q)| Arc::new(AffineMap { m: m.clone(), q: q.clone() }) as Arc<dyn ScenarioMap>)
            .collect();
        let sets = vec![FeasibleSet::Orthant; self.scenarios()];
        let mut p = SviProblem::new(self.space(), maps, sets).expect("validated at construction");
        p.slcp = Some(Arc::new(self.clone()));
        p
    }

    /// `err = max(err1, err2)` of the aggregated first-stage system and the
    /// per-scenario second-stage systems, evaluated at `P_N(x)`:
    ///
    /// `err1 = ‖x1 − Π₊(x1 − E[M11 x1] − E[M12 x2] − E[q1])‖ / (1 + ‖x1‖)`
    /// `err2 = max_ξ ‖x2 − Π₊(x2 − M21 x1 − M22 x2 − q2)‖ / (1 + ‖x2‖)`
    pub fn stopping_error(&self, x: &Policy) -> Result<f64> {
        let space = self.space();
        let x = space.project_nonanticipative(x)?;
        let (n1, n) = (self.n1, self.dim());
        let mut agg = vec![0.0; n1];
        let mut err2 = 0.0_f64;
        let mut fx = vec![0.0; n];
        for i in 0..self.scenarios() {
            let xi = x.row(i);
            for (r, out) in fx.iter_mut().enumerate() {
                let mut s = self.q[i][r];
                for (c, v) in xi.iter().enumerate() {
                    s += self.m[i][(r, c)] * v;
                }
                *out = s;
            }
            for r in 0..n1 {
                agg[r] += self.probs[i] * fx[r];
            }
            let x2 = &xi[n1..];
            let res: Vec<f64> = x2.iter().zip(&fx[n1..]).map(|(&a, &g)| a - (a - g).max(0.0)).collect();
            err2 = err2.max(norm2(&res) / (1.0 + norm2(x2)));
        }
        let x1 = &x.row(0)[..n1];
        let res1: Vec<f64> = x1.iter().zip(&agg).map(|(&a, &g)| a - (a - g).max(0.0)).collect();
        let err1 = norm2(&res1) / (1.0 + norm2(x1));
        Ok(err1.max(err2))
    }

    pub fn to_instance(&self) -> InstanceFile {
        InstanceFile {
            n1: self.n1,
            n2: self.n2,
            scenarios: (0..self.scenarios())
                .map(|i| ScenarioData {
                    p: self.probs[i],
                    m: (0..self.dim())
                        .map(|r| self.m[i].row(r).iter().copied().collect())
                        .collect(),
                    q: self.q[i].iter().copied().collect(),
                })
                .collect(),
            p_m: None,
        }
    }

    pub fn from_instance(inst: &InstanceFile) -> Result<Self> {
        let n = inst.n1 + inst.n2;
        let mut probs = Vec::new();
        let mut ms = Vec::new();
        let mut qs = Vec::new();
        for (i, s) in inst.scenarios.iter().enumerate() {
            if s.m.len() != n || s.m.iter().any(|r| r.len() != n) {
                return Err(SviError::Instance(format!("scenario {i}: M must be {n}x{n}")));
            }
            probs.push(s.p);
            ms.push(DMatrix::from_row_iterator(n, n, s.m.iter().flatten().copied()));
            qs.push(DVector::from_vec(s.q.clone()));
        }
        Self::new(inst.n1, inst.n2, probs, ms, qs)
    }
}

/// JSON instance schema: `{"n1", "n2", "scenarios": [{"p", "M", "q"}]}` with
/// full row-major matrices. The optional `p_m` overrides the multiplier-space
/// projector used by elicitation checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub n1: usize,
    pub n2: usize,
    pub scenarios: Vec<ScenarioData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_m: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioData {
    pub p: f64,
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
    pub q: Vec<f64>,
}

impl InstanceFile {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn projector(&self) -> Option<DMatrix<f64>> {
        let rows = self.p_m.as_ref()?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return None;
        }
        Some(DMatrix::from_row_iterator(n, n, rows.iter().flatten().copied()))
    }
}

/// Largest natural-map residual of a single-scenario point; used by probes.
pub fn natural_residual(map: &dyn ScenarioMap, set: &FeasibleSet, x: &[f64]) -> f64 {
    let mut f = vec![0.0; x.len()];
    map.eval(x, &mut f);
    let mut z: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a - b).collect();
    set.project_in_place(&mut z);
    norm_inf(&x.iter().zip(&z).map(|(a, b)| a - b).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_scenario_lcp(m: f64, q: f64) -> TwoStageSlcp {
        TwoStageSlcp::new(
            1,
            0,
            vec![1.0],
            vec![DMatrix::from_element(1, 1, m)],
            vec![DVector::from_element(1, q)],
        )
        .unwrap()
    }

    #[test]
    fn identity_map_and_zero_map() {
        let space = ScenarioSpace::two_stage(1, 1, &[0.5, 0.5]).unwrap();
        let id: Arc<dyn ScenarioMap> = Arc::new(AffineMap::linear(DMatrix::identity(2, 2)).unwrap());
        let zero: Arc<dyn ScenarioMap> = Arc::new(AffineMap::linear(DMatrix::zeros(2, 2)).unwrap());
        let x = Policy::from_rows(&[vec![1.0, 2.0], vec![1.0, -3.0]]).unwrap();
        let p = SviProblem::new(space.clone(), vec![id.clone(), id], vec![FeasibleSet::Orthant; 2]).unwrap();
        assert_eq!(p.eval_f(&x).unwrap(), x);
        let p = SviProblem::new(space, vec![zero.clone(), zero], vec![FeasibleSet::Orthant; 2]).unwrap();
        assert_eq!(p.eval_f(&x).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn non_finite_evaluation_reports_scenario() {
        let space = ScenarioSpace::two_stage(1, 0, &[0.5, 0.5]).unwrap();
        let ok: Arc<dyn ScenarioMap> = Arc::new(FnMap::new(1, |x, o| o[0] = x[0]));
        let bad: Arc<dyn ScenarioMap> = Arc::new(FnMap::new(1, |x, o| o[0] = 1.0 / x[0]));
        let p = SviProblem::new(space, vec![ok, bad], vec![FeasibleSet::Orthant; 2]).unwrap();
        let x = Policy::zeros(2, 1);
        assert!(matches!(p.eval_f(&x), Err(SviError::NonFinite { scenario: 1 })));
    }

    #[test]
    fn residuals_vanish_at_solutions() {
        let slcp = one_scenario_lcp(2.0, -2.0);
        let p = slcp.to_problem();
        let x = Policy::from_flat(1, 1, vec![1.0]).unwrap();
        let w = Policy::zeros(1, 1);
        assert_eq!(p.extensive_residual(&x, &w).unwrap(), 0.0);
        assert_eq!(slcp.stopping_error(&x).unwrap(), 0.0);

        let slcp = one_scenario_lcp(5.0, 3.0);
        let p = slcp.to_problem();
        let zero = Policy::zeros(1, 1);
        assert_eq!(p.extensive_residual(&zero, &zero).unwrap(), 0.0);
        assert_eq!(slcp.stopping_error(&zero).unwrap(), 0.0);
        // perturbed point
        let x = Policy::from_flat(1, 1, vec![0.5]).unwrap();
        assert!(slcp.stopping_error(&x).unwrap() > 0.1);
    }

    #[test]
    fn box_residual() {
        let space = ScenarioSpace::two_stage(1, 0, &[1.0]).unwrap();
        let map: Arc<dyn ScenarioMap> = Arc::new(FnMap::new(1, |x, o| o[0] = x[0] - 5.0));
        let set = FeasibleSet::boxed(vec![0.0], vec![3.0]).unwrap();
        let p = SviProblem::new(space, vec![map], vec![set]).unwrap();
        let at_upper = Policy::from_flat(1, 1, vec![3.0]).unwrap();
        assert_eq!(p.extensive_residual(&at_upper, &Policy::zeros(1, 1)).unwrap(), 0.0);
        assert_eq!(p.aggregated_residual(&at_upper).unwrap(), 0.0);
        assert!(FeasibleSet::boxed(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn instance_json_round_trip() {
        let slcp = one_scenario_lcp(2.0, -2.0);
        let json = slcp.to_instance().to_json().unwrap();
        assert!(json.contains("\"M\""));
        let back = TwoStageSlcp::from_instance(&InstanceFile::from_json(&json).unwrap()).unwrap();
        assert_eq!(back, slcp);
        let bad = r#"{"n1":1,"n2":1,"scenarios":[{"p":1.0,"M":[[1.0]],"q":[0.0,0.0]}]}"#;
        assert!(TwoStageSlcp::from_instance(&InstanceFile::from_json(bad).unwrap()).is_err());
    }
}
