//! Certificates that `F + N_C + s·P_M` is monotone from some level `s` on,
//! evaluated in the flat coordinates `v = φ(x)`, and sampling-based
//! falsifiers of pseudomonotonicity.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SviError};
use crate::linalg::{dot, max_abs, min_eigenvalue, spectral_norm, sym_eigen, sym_eigenvalues, sym_part};
use crate::model::{jacobian_of, FeasibleSet, ScenarioMap, SviProblem};
use crate::scenario::{Policy, ScenarioSpace, Subspace};

/// Entrywise tolerance for symmetry and commutation tests.
pub const STRUCTURE_TOL: f64 = 1e-8;
/// Eigenvalues below `-NEGATIVE_TOL` count as negative.
pub const NEGATIVE_TOL: f64 = 1e-10;
/// Relative clustering tolerance for the multiplicity of the smallest eigenvalue.
pub const MULTIPLICITY_TOL: f64 = 1e-8;
/// Entrywise tolerance for matching blocks and for zero rows.
pub const BLOCK_TOL: f64 = 1e-10;
/// Default margin added to a bound to obtain a usable level.
pub const DEFAULT_MARGIN: f64 = 1e-2;
const PROJECTOR_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    /// Split bound `max β²/α + γ` over the nonanticipative/multiplier split.
    #[serde(rename = "T5")]
    SplitBound,
    /// Symmetric Jacobian commuting with `P_M`, negative curvature only in `M`.
    #[serde(rename = "T6")]
    CommutingEigen,
    /// Spectral-radius variant of the commuting criterion.
    #[serde(rename = "C6-1")]
    SpectralRadius,
    /// Repeated smallest eigenvalue of `DF̂ + e·P_M`.
    #[serde(rename = "T7")]
    EigenMultiplicity,
    /// `DF̂ + e·P_M` splits into pairs of identical blocks.
    #[serde(rename = "C7-1")]
    PairedBlocks,
    /// Strict diagonal dominance of `DF̂ + e·P_M`.
    #[serde(rename = "T8")]
    DiagonalDominance,
    /// Smallest level from row dominance on the support of `P_M`.
    #[serde(rename = "C8-1")]
    DominanceLevel,
}

impl Criterion {
    pub const ALL: [Criterion; 7] = [
        Criterion::SplitBound,
        Criterion::CommutingEigen,
        Criterion::SpectralRadius,
        Criterion::EigenMultiplicity,
        Criterion::PairedBlocks,
        Criterion::DiagonalDominance,
        Criterion::DominanceLevel,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Criterion::SplitBound => "T5",
            Criterion::CommutingEigen => "T6",
            Criterion::SpectralRadius => "C6-1",
            Criterion::EigenMultiplicity => "T7",
            Criterion::PairedBlocks => "C7-1",
            Criterion::DiagonalDominance => "T8",
            Criterion::DominanceLevel => "C8-1",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.label().eq_ignore_ascii_case(label))
    }

    pub fn strictness(self) -> Strictness {
        match self {
            Criterion::SplitBound | Criterion::DominanceLevel => Strictness::Strict,
            _ => Strictness::NonStrict,
        }
    }

    /// Whether the criterion checks a caller-supplied level.
    pub fn takes_level(self) -> bool {
        matches!(
            self,
            Criterion::EigenMultiplicity | Criterion::PairedBlocks | Criterion::DiagonalDominance
        )
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    /// Certified for `s > bound`.
    Strict,
    /// Certified for `s ≥ bound`.
    NonStrict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    Split {
        alpha: Vec<f64>,
        beta: Vec<f64>,
        gamma: Vec<f64>,
    },
    Commuting {
        symmetry_defect: f64,
        commutation_defect: f64,
        min_eigenvalues: Vec<f64>,
        /// Smallest eigenvalue of `DF̂` restricted to the nonanticipative subspace.
        nonanticipative_min_eigenvalues: Vec<f64>,
    },
    SpectralRadius {
        symmetry_defect: f64,
        trace_defect: f64,
        product_min_eigenvalues: Vec<f64>,
        second_eigenvalues: Vec<f64>,
        spectral_radii: Vec<f64>,
    },
    Multiplicity {
        level: f64,
        symmetry_defect: f64,
        min_eigenvalues: Vec<f64>,
        multiplicities: Vec<usize>,
        second_eigenvalues: Vec<f64>,
    },
    Pairing {
        level: f64,
        symmetry_defect: f64,
        /// Sizes of the diagonal blocks at each grid point.
        block_sizes: Vec<Vec<usize>>,
        /// Paired block indices at each grid point.
        pairs: Vec<Vec<(usize, usize)>>,
        second_eigenvalues: Vec<f64>,
    },
    Dominance {
        level: Option<f64>,
        symmetry_defect: f64,
        /// Support of the diagonal of `P_M`, for the level search.
        index_set: Option<Vec<usize>>,
        /// Smallest row margin at each grid point.
        min_margins: Vec<f64>,
        failing_row: Option<usize>,
    },
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElicitationReport {
    pub criterion: Criterion,
    pub applicable: bool,
    /// `None` when the criterion does not apply.
    pub level_bound: Option<f64>,
    pub strictness: Strictness,
    /// Quantities were evaluated on a finite grid of a non-affine map.
    pub grid_certified: bool,
    pub certificate: Certificate,
    pub reason: Option<String>,
}

impl ElicitationReport {
    fn pass(criterion: Criterion, bound: f64, grid_certified: bool, certificate: Certificate) -> Self {
        Self {
            criterion,
            applicable: true,
            level_bound: Some(bound),
            strictness: criterion.strictness(),
            grid_certified,
            certificate,
            reason: None,
        }
    }

    fn fail(criterion: Criterion, grid_certified: bool, certificate: Certificate, reason: impl Into<String>) -> Self {
        Self {
            criterion,
            applicable: false,
            level_bound: None,
            strictness: criterion.strictness(),
            grid_certified,
            certificate,
            reason: Some(reason.into()),
        }
    }

    /// `bound + margin` when applicable.
    pub fn usable_level(&self, margin: f64) -> Option<f64> {
        self.level_bound.map(|b| b + margin)
    }
}

/// Orthogonal split of the flat space into the ranges of `P_N` and `P_M`.
#[derive(Clone, Debug)]
pub struct SubspaceSplit {
    p_m: DMatrix<f64>,
    n_basis: DMatrix<f64>,
    m_basis: DMatrix<f64>,
}

impl SubspaceSplit {
    pub fn from_space(space: &ScenarioSpace) -> Self {
        Self {
            p_m: space.iso_projection_matrix(Subspace::Multiplier),
            n_basis: space.basis(Subspace::Nonanticipative).matrix,
            m_basis: space.basis(Subspace::Multiplier).matrix,
        }
    }

    /// From an explicit orthogonal projector onto the multiplier subspace.
    pub fn from_projector(p_m: DMatrix<f64>) -> Result<Self> {
        let n = p_m.nrows();
        if p_m.ncols() != n {
            return Err(SviError::Dimension(format!("projector is {}x{}", n, p_m.ncols())));
        }
        if max_abs(&(&p_m - p_m.transpose())) > PROJECTOR_TOL || max_abs(&(&p_m * &p_m - &p_m)) > PROJECTOR_TOL {
            return Err(SviError::InvalidParameter("P_M must be symmetric and idempotent".into()));
        }
        let (vals, vecs) = sym_eigen(&sym_part(&p_m))?;
        let m_cols: Vec<usize> = (0..n).filter(|&k| vals[k] > 0.5).collect();
        let n_cols: Vec<usize> = (0..n).filter(|&k| vals[k] <= 0.5).collect();
        Ok(Self {
            n_basis: vecs.select_columns(&n_cols),
            m_basis: vecs.select_columns(&m_cols),
            p_m,
        })
    }

    pub fn dim(&self) -> usize {
        self.p_m.nrows()
    }

    pub fn projector(&self) -> &DMatrix<f64> {
        &self.p_m
    }

    pub fn nonanticipative_projector(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) - &self.p_m
    }

    pub fn nonanticipative_basis(&self) -> &DMatrix<f64> {
        &self.n_basis
    }

    pub fn multiplier_basis(&self) -> &DMatrix<f64> {
        &self.m_basis
    }
}

/// Points of the policy space at which Jacobians are evaluated.
#[derive(Clone, Debug)]
pub struct EvalGrid {
    points: Vec<Policy>,
}

impl EvalGrid {
    /// One feasible point: the projection of the origin onto each scenario set.
    pub fn single(problem: &SviProblem) -> Self {
        let space = problem.space();
        let mut x = Policy::zeros_like(space);
        for i in 0..space.scenarios() {
            problem.set(i).project_in_place(x.row_mut(i));
        }
        Self { points: vec![x] }
    }

    pub fn from_points(points: Vec<Policy>) -> Result<Self> {
        if points.is_empty() {
            return Err(SviError::InvalidParameter("empty evaluation grid".into()));
        }
        Ok(Self { points })
    }

    /// Latin-hypercube sample of `count` points in the part of each scenario
    /// set inside `[lo, hi]` per coordinate.
    pub fn latin_hypercube(problem: &SviProblem, count: usize, lo: f64, hi: f64, seed: u64) -> Result<Self> {
        if count == 0 || !(hi >= lo) {
            return Err(SviError::InvalidParameter("need count ≥ 1 and lo ≤ hi".into()));
        }
        let space = problem.space();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = vec![Policy::zeros_like(space); count];
        for i in 0..space.scenarios() {
            for c in 0..space.dim() {
                let (l, u) = problem.set(i).bounds(c);
                let (a, b) = (lo.max(l), hi.min(u));
                let (a, b) = if a <= b { (a, b) } else { (l.max(lo.min(u)), l.max(lo.min(u))) };
                let mut strata: Vec<usize> = (0..count).collect();
                for k in (1..count).rev() {
                    strata.swap(k, rng.random_range(0..=k));
                }
                for (p, s) in points.iter_mut().zip(&strata) {
                    let t = (*s as f64 + rng.random::<f64>()) / count as f64;
                    p.set(i, c, a + t * (b - a));
                }
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Policy] {
        &self.points
    }
}

/// Block-diagonal Jacobian of `F̂(v) = φ(F(φ⁻¹v))`; block `i` is `DF(x(ξⁱ), ξⁱ)`
/// at the de-scaled point since the probability factors cancel.
pub fn iso_jacobian(problem: &SviProblem, x_iso: &[f64]) -> Result<DMatrix<f64>> {
    let space = problem.space();
    let x = space.from_iso(x_iso)?;
    let n = space.dim();
    let mut out = DMatrix::zeros(space.iso_dim(), space.iso_dim());
    for i in 0..space.scenarios() {
        let block = jacobian_of(problem.map(i), x.row(i))?;
        out.view_mut((i * n, i * n), (n, n)).copy_from(&block);
    }
    Ok(out)
}

/// Jacobians `DF̂` (and values `F̂`) at the grid points together with the split.
#[derive(Clone, Debug)]
pub struct ElicitationInput {
    pub jacobians: Vec<DMatrix<f64>>,
    /// `F̂` at the grid points; empty when unknown.
    pub values: Vec<DVector<f64>>,
    pub split: SubspaceSplit,
    pub grid_certified: bool,
}

impl ElicitationInput {
    /// Uses the problem's own nonanticipativity split. Affine problems need only
    /// one point; otherwise the report is marked grid-certified.
    pub fn from_problem(problem: &SviProblem, grid: &EvalGrid) -> Result<Self> {
        Self::with_split(problem, grid, SubspaceSplit::from_space(problem.space()))
    }

    pub fn with_split(problem: &SviProblem, grid: &EvalGrid, split: SubspaceSplit) -> Result<Self> {
        let space = problem.space();
        if split.dim() != space.iso_dim() {
            return Err(SviError::Dimension(format!(
                "split of dimension {} for a flat space of dimension {}",
                split.dim(),
                space.iso_dim()
            )));
        }
        let affine = problem.is_affine();
        let points: &[Policy] = if affine { &grid.points()[..1] } else { grid.points() };
        let mut jacobians = Vec::with_capacity(points.len());
        let mut values = Vec::with_capacity(points.len());
        for x in points {
            let v = space.to_iso(x)?;
            jacobians.push(iso_jacobian(problem, &v)?);
            values.push(DVector::from_vec(space.to_iso(&problem.eval_f(x)?)?));
        }
        Ok(Self {
            jacobians,
            values,
            split,
            grid_certified: !affine,
        })
    }

    /// From explicit flat Jacobians and a multiplier projector.
    pub fn from_matrices(jacobians: Vec<DMatrix<f64>>, p_m: DMatrix<f64>) -> Result<Self> {
        if jacobians.is_empty() {
            return Err(SviError::InvalidParameter("empty evaluation grid".into()));
        }
        let split = SubspaceSplit::from_projector(p_m)?;
        if let Some(j) = jacobians.iter().find(|j| j.nrows() != split.dim() || j.ncols() != split.dim()) {
            return Err(SviError::Dimension(format!(
                "Jacobian {}x{} for a projector of dimension {}",
                j.nrows(),
                j.ncols(),
                split.dim()
            )));
        }
        Ok(Self {
            jacobians,
            values: Vec::new(),
            split,
            grid_certified: false,
        })
    }

    pub fn with_values(mut self, values: Vec<DVector<f64>>) -> Result<Self> {
        if values.len() != self.jacobians.len() {
            return Err(SviError::Dimension("one value per Jacobian required".into()));
        }
        self.values = values;
        Ok(self)
    }

    fn symmetry_defect(&self) -> f64 {
        self.jacobians
            .iter()
            .map(|j| max_abs(&(j - j.transpose())))
            .fold(0.0, f64::max)
    }

    /// Smallest and second-smallest eigenvalue of each symmetric part.
    fn two_smallest(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut first = Vec::new();
        let mut second = Vec::new();
        for j in &self.jacobians {
            let ev = sym_eigenvalues(&sym_part(j))?;
            first.push(ev.first().copied().unwrap_or(f64::INFINITY));
            second.push(ev.get(1).copied().unwrap_or(f64::INFINITY));
        }
        Ok((first, second))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    /// Skip the curvature condition on `N` at points where `F̂` vanishes, where
    /// the pseudomonotone simplification leaves nothing to check.
    pub skip_stationary: bool,
}

/// `α = λ_min(Bᵀ H B)`, `β = ‖P_N H P_M‖₂`, `γ = ‖P_M DF̂ P_M‖₂` with `H` the
/// symmetric part and `B` an orthonormal basis of `φ(N)`; bound `max β²/α + γ`
/// for `s >` bound. Inapplicable when some `α ≤ 0`.
pub fn split_bound(input: &ElicitationInput) -> Result<ElicitationReport> {
    split_bound_with(input, SplitOptions::default())
}

pub fn split_bound_with(input: &ElicitationInput, opts: SplitOptions) -> Result<ElicitationReport> {
    let split = &input.split;
    let p_n = split.nonanticipative_projector();
    let p_m = split.projector();
    let b = split.nonanticipative_basis();
    let rows: Vec<(f64, f64, f64)> = input
        .jacobians
        .par_iter()
        .enumerate()
        .map(|(k, j)| {
            let h = sym_part(j);
            let stationary = opts.skip_stationary && input.values.get(k).is_some_and(|v| v.amax() == 0.0);
            let alpha = if b.ncols() == 0 || stationary {
                f64::INFINITY
            } else {
                min_eigenvalue(&sym_part(&(b.transpose() * &h * b)))?
            };
            let beta = spectral_norm(&(&p_n * &h * p_m))?;
            let gamma = spectral_norm(&(p_m * j * p_m))?;
            Ok((alpha, beta, gamma))
        })
        .collect::<Result<_>>()?;
    let certificate = Certificate::Split {
        alpha: rows.iter().map(|r| r.0).collect(),
        beta: rows.iter().map(|r| r.1).collect(),
        gamma: rows.iter().map(|r| r.2).collect(),
    };
    if let Some((k, r)) = rows.iter().enumerate().find(|(_, r)| !(r.0 > 0.0)) {
        return Ok(ElicitationReport::fail(
            Criterion::SplitBound,
            input.grid_certified,
            certificate,
            format!("α = {:.3e} ≤ 0 at grid point {k}", r.0),
        ));
    }
    let bound = rows
        .iter()
        .map(|&(a, b, g)| if b == 0.0 { g } else { b * b / a + g })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ElicitationReport::pass(Criterion::SplitBound, bound, input.grid_certified, certificate))
}

/// Symmetric `DF̂` commuting with `P_M` whose negative curvature lies in `φ(M)`;
/// bound `max(0, −min λ_min(DF̂))` for `s ≥` bound.
pub fn commuting_eigen(input: &ElicitationInput) -> Result<ElicitationReport> {
    let crit = Criterion::CommutingEigen;
    let symmetry_defect = input.symmetry_defect();
    let p = input.split.projector();
    let commutation_defect = input
        .jacobians
        .iter()
        .map(|j| max_abs(&(j * p - p * j)))
        .fold(0.0, f64::max);
    let mut cert = Certificate::Commuting {
        symmetry_defect,
        commutation_defect,
        min_eigenvalues: Vec::new(),
        nonanticipative_min_eigenvalues: Vec::new(),
    };
    if symmetry_defect > STRUCTURE_TOL {
        return Ok(ElicitationReport::fail(crit, input.grid_certified, cert, "Jacobian is not symmetric"));
    }
    if commutation_defect > STRUCTURE_TOL {
        return Ok(ElicitationReport::fail(crit, input.grid_certified, cert, "Jacobian does not commute with P_M"));
    }
    let b = input.split.nonanticipative_basis();
    let mut mins = Vec::new();
    let mut n_mins = Vec::new();
    for j in &input.jacobians {
        let h = sym_part(j);
        mins.push(min_eigenvalue(&h)?);
        n_mins.push(if b.ncols() == 0 {
            f64::INFINITY
        } else {
            min_eigenvalue(&sym_part(&(b.transpose() * &h * b)))?
        });
    }
    let failing = n_mins.iter().position(|v| *v < -NEGATIVE_TOL);
    let bound = mins.iter().fold(0.0_f64, |acc, v| acc.max(-v));
    cert = Certificate::Commuting {
        symmetry_defect,
        commutation_defect,
        min_eigenvalues: mins,
        nonanticipative_min_eigenvalues: n_mins,
    };
    match failing {
        Some(k) => Ok(ElicitationReport::fail(
            crit,
            input.grid_certified,
            cert,
            format!("negative curvature on the nonanticipative subspace at grid point {k}"),
        )),
        None => Ok(ElicitationReport::pass(crit, bound, input.grid_certified, cert)),
    }
}

/// Symmetric `DF̂` with `tr((DF̂P)²) = tr(DF̂²P)`, `DF̂·P` not positive
/// semidefinite and at most one negative eigenvalue; bound `max ρ(DF̂)`.
pub fn spectral_radius(input: &ElicitationInput) -> Result<ElicitationReport> {
    let crit = Criterion::SpectralRadius;
    let symmetry_defect = input.symmetry_defect();
    let p = input.split.projector();
    let mut trace_defect = 0.0_f64;
    let mut product_mins = Vec::new();
    let mut radii = Vec::new();
    for j in &input.jacobians {
        let jp = j * p;
        let lhs = (&jp * &jp).trace();
        let rhs = (j * j * p).trace();
        trace_defect = trace_defect.max((lhs - rhs).abs());
        product_mins.push(min_eigenvalue(&sym_part(&jp))?);
        let ev = sym_eigenvalues(&sym_part(j))?;
        radii.push(ev.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
    }
    let (_, second) = input.two_smallest()?;
    let cert = Certificate::SpectralRadius {
        symmetry_defect,
        trace_defect,
        product_min_eigenvalues: product_mins.clone(),
        second_eigenvalues: second.clone(),
        spectral_radii: radii.clone(),
    };
    let g = input.grid_certified;
    if symmetry_defect > STRUCTURE_TOL {
        return Ok(ElicitationReport::fail(crit, g, cert, "Jacobian is not symmetric"));
    }
    if trace_defect > STRUCTURE_TOL {
        return Ok(ElicitationReport::fail(crit, g, cert, "trace identity fails"));
    }
    if let Some(k) = product_mins.iter().position(|v| *v >= -NEGATIVE_TOL) {
        return Ok(ElicitationReport::fail(crit, g, cert, format!("DF̂·P is positive semidefinite at grid point {k}")));
    }
    if let Some(k) = second.iter().position(|v| *v < -NEGATIVE_TOL) {
        return Ok(ElicitationReport::fail(crit, g, cert, format!("more than one negative eigenvalue at grid point {k}")));
    }
    let bound = radii.iter().fold(0.0_f64, |m, v| m.max(*v));
    Ok(ElicitationReport::pass(crit, bound, g, cert))
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level.is_finite()) {
        return Err(SviError::InvalidParameter(format!("level {level} must be positive")));
    }
    Ok(())
}

/// The smallest eigenvalue of `DF̂ + e·P_M` has multiplicity at least two at
/// every grid point, `DF̂` symmetric with at most one negative eigenvalue;
/// bound `e` for `s ≥ e`.
pub fn eigen_multiplicity(input: &ElicitationInput, level: f64) -> Result<ElicitationReport> {
    check_level(level)?;
    let crit = Criterion::EigenMultiplicity;
    let symmetry_defect = input.symmetry_defect();
    let p = input.split.projector();
    let mut mins = Vec::new();
    let mut mults = Vec::new();
    for j in &input.jacobians {
        let ev = sym_eigenvalues(&sym_part(&(j + p * level)))?;
        let lo = ev[0];
        mins.push(lo);
        mults.push(ev.iter().filter(|v| **v - lo <= MULTIPLICITY_TOL * (1.0 + lo.abs())).count());
    }
    let (_, second) = input.two_smallest()?;
    let cert = Certificate::Multiplicity {
        level,
        symmetry_defect,
        min_eigenvalues: mins,
        multiplicities: mults.clone(),
        second_eigenvalues: second.clone(),
    };
    let g = input.grid_certified;
    if symmetry_defect > STRUCTURE_TOL {
        return Ok(ElicitationReport::fail(crit, g, cert, "Jacobian is not symmetric"));
    }
    if let Some(k) = second.iter().position(|v| *v < -NEGATIVE_TOL) {
        return Ok(ElicitationReport::fail(crit, g, cert, format!("more than one negative eigenvalue at grid point {k}")));
    }
    if let Some(k) = mults.iter().position(|m| *m < 2) {
        return Ok(ElicitationReport::fail(crit, g, cert, format!("simple smallest eigenvalue at grid point {k}")));
    }
    Ok(ElicitationReport::pass(crit, level, g, cert))
}

/// Index sets of the irreducible diagonal blocks of a symmetric matrix.
fn diagonal_blocks(a: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = a.nrows();
    let mut seen = vec![false; n];
    let mut blocks = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut block = vec![start];
        seen[start] = true;
        let mut head = 0;
        while head < block.len() {
            let i = block[head];
            head += 1;
            for j in 0..n {
                if !seen[j] && (a[(i, j)].abs() > BLOCK_TOL || a[(j, i)].abs() > BLOCK_TOL) {
                    seen[j] = true;
                    block.push(j);
                }
            }
        }
        block.sort_unstable();
        blocks.push(block);
    }
    blocks
}

fn same_block(a: &DMatrix<f64>, x: &[usize], y: &[usize]) -> bool {
    x.len() == y.len()
        && x.iter().enumerate().all(|(r, &i)| {
            y.iter()
                .enumerate()
                .all(|(c, _)| (a[(i, x[c])] - a[(y[r], y[c])]).abs() <= BLOCK_TOL)
        })
}

/// Pairs identical blocks greedily; `None` when some block has no partner.
fn pair_blocks(a: &DMatrix<f64>, blocks: &[Vec<usize>]) -> Option<Vec<(usize, usize)>> {
    if blocks.len() % 2 == 1 {
        return None;
    }
    let mut used = vec![false; blocks.len()];
    let mut pairs = Vec::new();
    for i in 0..blocks.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let partner = (i + 1..blocks.len()).find(|&k| !used[k] && same_block(a, &blocks[i], &blocks[k]))?;
        used[partner] = true;
        pairs.push((i, partner));
    }
    Some(pairs)
}

/// `DF̂ + e·P_M` splits into irreducible diagonal blocks that pair up into
/// identical copies, `DF̂` symmetric with at most one negative eigenvalue;
/// bound `e` for `s ≥ e`.
pub fn paired_blocks(input: &ElicitationInput, level: f64) -> Result<ElicitationReport> {
    check_level(level)?;
    let crit = Criterion::PairedBlocks;
    let symmetry_defect = input.symmetry_defect();
    let p = input.split.projector();
    let mut sizes = Vec::new();
    let mut all_pairs = Vec::new();
    let mut unpaired = None;
    for (k, j) in input.jacobians.iter().enumerate() {
        let a = j + p * level;
        let blocks = diagonal_blocks(&a);
        sizes.push(blocks.iter().map(Vec::len).collect());
        match pair_blocks(&a, &blocks) {
            Some(pairs) => all_pairs.push(pairs),
            None => {
                all_pairs.push(Vec::new());
                unpaired.get_or_insert(k);
            }
        }
    }
    let (_, second) = input.two_smallest()?;
    let cert = Certificate::Pairing {
        level,
        symmetry_defect,
        block_sizes: sizes,
        pairs: all_pairs,
        second_eigenvalues: second.clone(),
    };
    let g = input.grid_certified;
    if symmetry_defect > STRUCTURE_TOL {
        return Ok(ElicitationReport::fail(crit, g, cert, "Jacobian is not symmetric"));
    }
    if let Some(k) = second.iter().position(|v| *v < -NEGATIVE_TOL) {
        return Ok(ElicitationReport::fail(crit, g, cert, format!("more than one negative eigenvalue at grid point {k}")));
    }
    if let Some(k) = unpaired {
        return Ok(ElicitationReport::fail(crit, g, cert, format!("blocks cannot be paired at grid point {k}")));
    }
    Ok(ElicitationReport::pass(crit, level, g, cert))
}

/// Smallest row margin `a_ii − Σ_{j≠i}|a_ij|` and its row; rows with a
/// nonpositive diagonal report the diagonal itself.
fn dominance_margin(a: &DMatrix<f64>, rows: &[usize]) -> (f64, Option<usize>) {
    let mut worst = f64::INFINITY;
    let mut failing = None;
    for &i in rows {
        let off: f64 = rows.iter().filter(|&&j| j != i).map(|&j| a[(i, j)].abs()).sum();
        let margin = if a[(i, i)] <= 0.0 { a[(i, i)].min(0.0) } else { a[(i, i)] - off };
        if margin < worst {
            worst = margin;
        }
        if margin <= 0.0 && failing.is_none() {
            failing = Some(i);
        }
    }
    (worst, failing)
}

/// `DF̂ + e·P_M` has a positive diagonal and strictly dominant rows; bound `e`
/// for `s ≥ e`.
pub fn diagonal_dominance(input: &ElicitationInput, level: f64) -> Result<ElicitationReport> {
    check_level(level)?;
    let crit = Criterion::DiagonalDominance;
    let symmetry_defect = input.symmetry_defect();
    let p = input.split.projector();
    let rows: Vec<usize> = (0..input.split.dim()).collect();
    let mut margins = Vec::new();
    let mut failing = None;
    for j in &input.jacobians {
        let (m, f) = dominance_margin(&(j + p * level), &rows);
        margins.push(m);
        if failing.is_none() {
            failing = f;
        }
    }
    let cert = Certificate::Dominance {
        level: Some(level),
        symmetry_defect,
        index_set: None,
        min_margins: margins,
        failing_row: failing,
    };
    let g = input.grid_certified;
    if symmetry_defect > STRUCTURE_TOL {
        return Ok(ElicitationReport::fail(crit, g, cert, "Jacobian is not symmetric"));
    }
    if let Some(i) = failing {
        return Ok(ElicitationReport::fail(crit, g, cert, format!("row {i} is not strictly dominant")));
    }
    Ok(ElicitationReport::pass(crit, level, g, cert))
}

/// With `I = {i : (P_M)_ii > 0}`, rows outside `I` of `DF̂` and `P_M` zero and
/// `P_M` restricted to `I` strictly dominant, the level
/// `max_i max((Σ_{j≠i}|DF̂_ij| − DF̂_ii)/((P_M)_ii − Σ_{j≠i}|(P_M)_ij|), −DF̂_ii)`
/// over `i ∈ I` and the grid, for `s >` level.
pub fn dominance_level(input: &ElicitationInput) -> Result<ElicitationReport> {
    let crit = Criterion::DominanceLevel;
    let symmetry_defect = input.symmetry_defect();
    let p = input.split.projector();
    let n = input.split.dim();
    let index: Vec<usize> = (0..n).filter(|&i| p[(i, i)] > BLOCK_TOL).collect();
    let outside: Vec<usize> = (0..n).filter(|i| !index.contains(i)).collect();
    let g = input.grid_certified;
    let cert = |margins: Vec<f64>, failing: Option<usize>| Certificate::Dominance {
        level: None,
        symmetry_defect,
        index_set: Some(index.clone()),
        min_margins: margins,
        failing_row: failing,
    };
    if symmetry_defect > STRUCTURE_TOL {
        return Ok(ElicitationReport::fail(crit, g, cert(Vec::new(), None), "Jacobian is not symmetric"));
    }
    let zero_row = |m: &DMatrix<f64>, i: usize| m.row(i).iter().all(|v| v.abs() <= BLOCK_TOL);
    if let Some(&i) = outside.iter().find(|&&i| !zero_row(p, i)) {
        return Ok(ElicitationReport::fail(crit, g, cert(Vec::new(), Some(i)), format!("row {i} of P_M is not zero")));
    }
    for j in &input.jacobians {
        if let Some(&i) = outside.iter().find(|&&i| !zero_row(j, i)) {
            return Ok(ElicitationReport::fail(crit, g, cert(Vec::new(), Some(i)), format!("row {i} of DF̂ is not zero")));
        }
    }
    let (p_margin, p_fail) = dominance_margin(p, &index);
    if let Some(i) = p_fail {
        return Ok(ElicitationReport::fail(
            crit,
            g,
            cert(vec![p_margin], Some(i)),
            format!("row {i} of P_M restricted to its support is not strictly dominant"),
        ));
    }
    let mut level = f64::NEG_INFINITY;
    for j in &input.jacobians {
        for &i in &index {
            let off_j: f64 = index.iter().filter(|&&c| c != i).map(|&c| j[(i, c)].abs()).sum();
            let off_p: f64 = index.iter().filter(|&&c| c != i).map(|&c| p[(i, c)].abs()).sum();
            let ratio = (off_j - j[(i, i)]) / (p[(i, i)] - off_p);
            level = level.max(ratio).max(-j[(i, i)]);
        }
    }
    if index.is_empty() {
        level = 0.0;
    }
    let mut report = ElicitationReport::pass(crit, level, g, cert(vec![p_margin], None));
    if let Certificate::Dominance { level: l, .. } = &mut report.certificate {
        *l = Some(level);
    }
    Ok(report)
}

/// Levels for the criteria that check a given level.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Levels {
    pub multiplicity: Option<f64>,
    pub pairing: Option<f64>,
    pub dominance: Option<f64>,
}

/// Runs one criterion; level-taking criteria without a level are reported as
/// not applicable.
pub fn run_criterion(input: &ElicitationInput, criterion: Criterion, levels: &Levels) -> Result<ElicitationReport> {
    let missing = || {
        Ok(ElicitationReport::fail(
            criterion,
            input.grid_certified,
            Certificate::None,
            "no level supplied",
        ))
    };
    match criterion {
        Criterion::SplitBound => split_bound(input),
        Criterion::CommutingEigen => commuting_eigen(input),
        Criterion::SpectralRadius => spectral_radius(input),
        Criterion::EigenMultiplicity => levels.multiplicity.map_or_else(missing, |e| eigen_multiplicity(input, e)),
        Criterion::PairedBlocks => levels.pairing.map_or_else(missing, |e| paired_blocks(input, e)),
        Criterion::DiagonalDominance => levels.dominance.map_or_else(missing, |e| diagonal_dominance(input, e)),
        Criterion::DominanceLevel => dominance_level(input),
    }
}

pub fn run_all(input: &ElicitationInput, levels: &Levels) -> Result<Vec<ElicitationReport>> {
    Criterion::ALL.iter().map(|&c| run_criterion(input, c, levels)).collect()
}

/// A witness against pseudomonotonicity of one scenario map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// `⟨F(x), y − x⟩ ≥ 0` but `⟨F(y), y − x⟩ < 0`.
    Pair { scenario: usize, x: Vec<f64>, y: Vec<f64>, value: f64 },
    /// `u ⊥ F(x)` with `⟨u, DF(x)u⟩ < 0`.
    Curvature { scenario: usize, x: Vec<f64>, u: Vec<f64>, value: f64 },
    /// Symmetric `DF(x)` with two or more negative eigenvalues.
    Eigen { scenario: usize, x: Vec<f64>, negative: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalsifierConfig {
    /// Sampling box `[l, min(u, l + radius)]` (or `[−radius, radius]` for free components).
    pub radius: f64,
    pub tol: f64,
    /// Witnesses recorded per scenario and kind.
    pub max_witnesses: usize,
}

impl Default for FalsifierConfig {
    fn default() -> Self {
        Self {
            radius: 10.0,
            tol: 1e-10,
            max_witnesses: 8,
        }
    }
}

/// Value of `⟨F(y), y − x⟩` when `⟨F(x), y − x⟩ ≥ 0`, i.e. the pair is a
/// counterexample when the result is negative.
pub fn pair_test(map: &dyn ScenarioMap, x: &[f64], y: &[f64]) -> Option<f64> {
    let n = map.dim();
    let mut fx = vec![0.0; n];
    let mut fy = vec![0.0; n];
    map.eval(x, &mut fx);
    map.eval(y, &mut fy);
    let d: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    (dot(&fx, &d) >= 0.0).then(|| dot(&fy, &d))
}

/// `⟨u', DF(x)u'⟩` for `u'` the unit projection of `u` onto `F(x)^⊥`;
/// `None` when `F(x) = 0` or the projection vanishes.
pub fn curvature_test(map: &dyn ScenarioMap, x: &[f64], u: &[f64]) -> Result<Option<(Vec<f64>, f64)>> {
    let n = map.dim();
    let mut f = vec![0.0; n];
    map.eval(x, &mut f);
    let ff = dot(&f, &f);
    if !(ff > 1e-24) {
        return Ok(None);
    }
    let c = dot(u, &f) / ff;
    let mut v: Vec<f64> = u.iter().zip(&f).map(|(a, b)| a - c * b).collect();
    let nv = dot(&v, &v).sqrt();
    if !(nv > 1e-12) {
        return Ok(None);
    }
    v.iter_mut().for_each(|a| *a /= nv);
    let jac = jacobian_of(map, x)?;
    let vv = DVector::from_column_slice(&v);
    let value = vv.dot(&(&jac * &vv));
    Ok(Some((v, value)))
}

fn sample_box(set: &FeasibleSet, n: usize, radius: f64, interior: bool, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|c| {
            let (l, u) = set.bounds(c);
            let (a, b) = match (l.is_finite(), u.is_finite()) {
                (true, true) => (l, u),
                (true, false) => (l, l + radius),
                (false, true) => (u - radius, u),
                (false, false) => (-radius, radius),
            };
            let t: f64 = rng.random();
            // open unit interval for interior samples
            let t = if interior { (t + f64::EPSILON).min(1.0 - f64::EPSILON) } else { t };
            a + t * (b - a)
        })
        .collect()
}

/// Pair, curvature and eigenvalue tests on `sample_count` random draws per
/// scenario map. Finds counterexamples; an empty list proves nothing.
pub fn falsify_pseudomonotone(problem: &SviProblem, sample_count: usize, seed: u64) -> Result<Vec<Violation>> {
    falsify_pseudomonotone_with(problem, sample_count, seed, &FalsifierConfig::default())
}

pub fn falsify_pseudomonotone_with(
    problem: &SviProblem,
    sample_count: usize,
    seed: u64,
    cfg: &FalsifierConfig,
) -> Result<Vec<Violation>> {
    if sample_count == 0 {
        return Err(SviError::InvalidParameter("sample_count must be at least 1".into()));
    }
    let space = problem.space();
    let per_scenario: Vec<Vec<Violation>> = (0..space.scenarios())
        .into_par_iter()
        .map(|i| falsify_map(problem.map(i), problem.set(i), i, sample_count, seed.wrapping_add(i as u64), cfg))
        .collect::<Result<_>>()?;
    Ok(per_scenario.into_iter().flatten().collect())
}

pub fn falsify_map(
    map: &dyn ScenarioMap,
    set: &FeasibleSet,
    scenario: usize,
    sample_count: usize,
    seed: u64,
    cfg: &FalsifierConfig,
) -> Result<Vec<Violation>> {
    let n = map.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let (mut pairs, mut curv, mut eig) = (0, 0, 0);
    let constant_jac = if map.is_affine() { Some(jacobian_of(map, &vec![0.0; n])?) } else { None };
    let constant_negatives = match &constant_jac {
        Some(j) if max_abs(&(j - j.transpose())) <= STRUCTURE_TOL => {
            Some(sym_eigenvalues(&sym_part(j))?.iter().filter(|v| **v < -cfg.tol).count())
        }
        _ => None,
    };
    for _ in 0..sample_count {
        let x = sample_box(set, n, cfg.radius, false, &mut rng);
        let y = sample_box(set, n, cfg.radius, false, &mut rng);
        if let Some(v) = pair_test(map, &x, &y) {
            if v < -cfg.tol && pairs < cfg.max_witnesses {
                pairs += 1;
                out.push(Violation::Pair { scenario, x, y, value: v });
            }
        }
        let z = sample_box(set, n, cfg.radius, true, &mut rng);
        let u: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        if let Some((u, v)) = curvature_test(map, &z, &u)? {
            if v < -cfg.tol && curv < cfg.max_witnesses {
                curv += 1;
                out.push(Violation::Curvature { scenario, x: z.clone(), u, value: v });
            }
        }
        if eig < cfg.max_witnesses.min(1) {
            let negative = match constant_negatives {
                Some(k) => k,
                None => {
                    let j = jacobian_of(map, &z)?;
                    if max_abs(&(&j - j.transpose())) <= STRUCTURE_TOL {
                        sym_eigenvalues(&sym_part(&j))?.iter().filter(|v| **v < -cfg.tol).count()
                    } else {
                        0
                    }
                }
            };
            if negative >= 2 {
                eig += 1;
                out.push(Violation::Eigen { scenario, x: z, negative });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::instances::textbook_examples;
    use crate::model::AffineMap;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    fn input(j: DMatrix<f64>, p: DMatrix<f64>) -> ElicitationInput {
        ElicitationInput::from_matrices(vec![j], p).unwrap()
    }

    #[test]
    fn split_bound_examples() {
        let r = split_bound(&input(diag(&[1.0, -1.0]), diag(&[0.0, 1.0]))).unwrap();
        assert!(r.applicable);
        assert_eq!(r.strictness, Strictness::Strict);
        assert!((r.level_bound.unwrap() - 1.0).abs() < 1e-12);
        match r.certificate {
            Certificate::Split { alpha, beta, gamma } => {
                assert!((alpha[0] - 1.0).abs() < 1e-12);
                assert!(beta[0].abs() < 1e-12);
                assert!((gamma[0] - 1.0).abs() < 1e-12);
            }
            _ => panic!(),
        }
        let r = split_bound(&input(diag(&[2.0, 2.0]), diag(&[0.0, 1.0]))).unwrap();
        assert!((r.level_bound.unwrap() - 2.0).abs() < 1e-12);
        let r = split_bound(&input(diag(&[-1.0, 1.0]), diag(&[0.0, 1.0]))).unwrap();
        assert!(!r.applicable);
        assert_eq!(r.level_bound, None);
    }

    #[test]
    fn split_bound_skipping_stationary_points() {
        let inp = input(diag(&[1.0, -1.0]), diag(&[0.0, 1.0]))
            .with_values(vec![DVector::from_vec(vec![2.0, -4.0])])
            .unwrap();
        let opts = SplitOptions { skip_stationary: true };
        assert!((split_bound_with(&inp, opts).unwrap().level_bound.unwrap() - 1.0).abs() < 1e-12);
        let inp = input(diag(&[-1.0, -1.0]), diag(&[0.0, 1.0])).with_values(vec![DVector::zeros(2)]).unwrap();
        assert!(!split_bound(&inp).unwrap().applicable);
        assert!(split_bound_with(&inp, opts).unwrap().applicable);
    }

    #[test]
    fn commuting_examples() {
        let r = commuting_eigen(&input(diag(&[0.0, -1.0]), diag(&[0.0, 1.0]))).unwrap();
        assert!(r.applicable);
        assert_eq!(r.level_bound, Some(1.0));
        let r = commuting_eigen(&input(diag(&[3.0, 0.5]), diag(&[1.0, 0.0]))).unwrap();
        assert_eq!(r.level_bound, Some(0.0));
        // negative curvature outside the multiplier space
        let r = commuting_eigen(&input(diag(&[-1.0, 1.0]), diag(&[0.0, 1.0]))).unwrap();
        assert!(!r.applicable);
        let ex = &textbook_examples()[3];
        let r = commuting_eigen(&input(ex.jacobian.clone(), ex.projector.clone())).unwrap();
        match r.certificate {
            Certificate::Commuting { commutation_defect, .. } => assert!(commutation_defect <= 1e-12),
            _ => panic!(),
        }
        let skew = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(!commuting_eigen(&input(skew, diag(&[0.0, 1.0]))).unwrap().applicable);
    }

    #[test]
    fn spectral_radius_examples() {
        let r = spectral_radius(&input(diag(&[0.0, -1.0]), diag(&[0.0, 1.0]))).unwrap();
        assert!(r.applicable);
        assert!((r.level_bound.unwrap() - 1.0).abs() < 1e-12);
        assert!(!spectral_radius(&input(DMatrix::identity(2, 2), diag(&[1.0, 0.0]))).unwrap().applicable);
        assert!(!spectral_radius(&input(DMatrix::zeros(2, 2), diag(&[1.0, 0.0]))).unwrap().applicable);
        // two negative eigenvalues: rejected even though DF̂·P is indefinite
        assert!(!spectral_radius(&input(diag(&[-1.0, -1.0]), diag(&[1.0, 0.0]))).unwrap().applicable);
    }

    #[test]
    fn multiplicity_examples() {
        let r = eigen_multiplicity(&input(diag(&[-1.0, 0.0, 0.0]), diag(&[1.0, 0.0, 0.0])), 1.0).unwrap();
        assert!(r.applicable);
        match &r.certificate {
            Certificate::Multiplicity { multiplicities, .. } => assert_eq!(multiplicities, &vec![3]),
            _ => panic!(),
        }
        assert!(!eigen_multiplicity(&input(diag(&[1.0, 2.0]), diag(&[0.0, 1.0])), 1.0).unwrap().applicable);
        assert!(!eigen_multiplicity(&input(DMatrix::zeros(2, 2), diag(&[1.0, 0.0])), 1.0).unwrap().applicable);
        assert!(eigen_multiplicity(&input(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)), 1.0).unwrap().applicable);
        assert!(eigen_multiplicity(&input(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)), 0.0).is_err());
    }

    #[test]
    fn pairing_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 2, &[5.0, -1.0, -1.0, 4.0]);
        let c = DMatrix::from_row_slice(2, 2, &[7.0, 0.5, 0.5, 1.0]);
        let stack = |blocks: &[&DMatrix<f64>]| {
            let n: usize = blocks.iter().map(|b| b.nrows()).sum();
            let mut m = DMatrix::zeros(n, n);
            let mut off = 0;
            for b in blocks {
                m.view_mut((off, off), (2, 2)).copy_from(b);
                off += 2;
            }
            m
        };
        let r = paired_blocks(&input(stack(&[&a, &b, &a, &b]), DMatrix::zeros(8, 8)), 1.0).unwrap();
        assert!(r.applicable);
        match &r.certificate {
            Certificate::Pairing { pairs, .. } => assert_eq!(pairs[0], vec![(0, 2), (1, 3)]),
            _ => panic!(),
        }
        assert!(!paired_blocks(&input(stack(&[&a, &b, &c]), DMatrix::zeros(6, 6)), 1.0).unwrap().applicable);
        assert!(paired_blocks(&input(stack(&[&a, &a]), DMatrix::zeros(4, 4)), 1.0).unwrap().applicable);
    }

    #[test]
    fn dominance_examples() {
        let r = diagonal_dominance(&input(diag(&[1.0, -1.0]), diag(&[0.0, 1.0])), 2.0).unwrap();
        assert!(r.applicable);
        let j = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 2.0]);
        let r = diagonal_dominance(&input(j, diag(&[0.0, 1.0])), 1.0).unwrap();
        assert!(!r.applicable);
        match r.certificate {
            Certificate::Dominance { failing_row, .. } => assert_eq!(failing_row, Some(0)),
            _ => panic!(),
        }
        let r = dominance_level(&input(diag(&[0.0, -1.0]), diag(&[0.0, 1.0]))).unwrap();
        assert!(r.applicable);
        assert_eq!(r.strictness, Strictness::Strict);
        assert!((r.level_bound.unwrap() - 1.0).abs() < 1e-15);
        // nonzero Jacobian row outside the support of P_M
        assert!(!dominance_level(&input(diag(&[1.0, -1.0]), diag(&[0.0, 1.0]))).unwrap().applicable);
        // empty support
        let r = dominance_level(&input(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2))).unwrap();
        assert_eq!(r.level_bound, Some(0.0));
    }

    #[test]
    fn projector_validation() {
        assert!(SubspaceSplit::from_projector(diag(&[0.5, 1.0])).is_err());
        let s = SubspaceSplit::from_projector(diag(&[0.0, 1.0])).unwrap();
        assert_eq!(s.nonanticipative_basis().ncols(), 1);
        assert_eq!(s.multiplier_basis().ncols(), 1);
    }

    #[test]
    fn iso_jacobian_cancels_probabilities() {
        let space = ScenarioSpace::two_stage(1, 0, &[0.25, 0.75]).unwrap();
        let sq: Arc<dyn ScenarioMap> = Arc::new(crate::model::FnMap::new(1, |x, o| o[0] = x[0] * x[0]));
        let lin: Arc<dyn ScenarioMap> = Arc::new(AffineMap::linear(diag(&[3.0])).unwrap());
        let p = SviProblem::new(space, vec![sq, lin], vec![FeasibleSet::Orthant; 2]).unwrap();
        // v = (1, ·) is x = 2 in the first scenario
        let j = iso_jacobian(&p, &[1.0, 0.0]).unwrap();
        assert!((j[(0, 0)] - 4.0).abs() < 1e-8);
        assert_eq!(j[(1, 1)], 3.0);
        assert_eq!(j[(0, 1)], 0.0);
    }

    #[test]
    fn falsifier_witnesses() {
        let m = AffineMap::linear(diag(&[-1.0, 1.0])).unwrap();
        assert_eq!(pair_test(&m, &[1.0, 2.0], &[3.0, 3.0]), Some(-3.0));
        let (u, v) = curvature_test(&m, &[1.0, 2.0], &[2.0, 1.0]).unwrap().unwrap();
        assert!((v + 0.6).abs() < 1e-12, "unit u = (2,1)/√5 gives −3/5");
        assert!((u[0] - 2.0 / 5f64.sqrt()).abs() < 1e-12);

        let space = ScenarioSpace::two_stage(2, 0, &[1.0]).unwrap();
        let p = SviProblem::new(space.clone(), vec![Arc::new(m)], vec![FeasibleSet::Orthant]).unwrap();
        assert!(!falsify_pseudomonotone(&p, 10_000, 1).unwrap().is_empty());
        let id = AffineMap::linear(DMatrix::identity(2, 2)).unwrap();
        let p = SviProblem::new(space, vec![Arc::new(id)], vec![FeasibleSet::Orthant]).unwrap();
        assert!(falsify_pseudomonotone(&p, 10_000, 1).unwrap().is_empty());
    }
}
