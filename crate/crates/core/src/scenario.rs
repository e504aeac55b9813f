//! Finite scenario trees, scenario-indexed policies and the nonanticipativity split.
//!
//! A policy `x(·)` assigns a decision vector in `R^n` to every scenario. Its
//! stage-`k` block may only depend on the history revealed before stage `k`,
//! which is encoded by a [`HistoryKey`] per stage. Scenarios that share the key
//! at stage `k` form a group; the nonanticipative subspace `N` is the set of
//! policies whose stage-`k` blocks are constant on every stage-`k` group and
//! the multiplier subspace `M` is its orthogonal complement in the
//! probability-weighted inner product.
//!
//! The `to_iso` embedding scales scenario `i` by `sqrt(p_i)` and flattens in
//! scenario order. It is an isometry onto `R^{nJ}` with the Euclidean inner
//! product, so projections and Jacobians can be handled as dense matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SviError};

pub const PROBABILITY_SUM_TOL: f64 = 1e-12;

/// Realizations of the random data observed before a given stage.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HistoryKey(pub Vec<u32>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub probability: f64,
    /// One key per stage; the key of stage `k` (0-based) has length `k`.
    pub history: Vec<HistoryKey>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subspace {
    Nonanticipative,
    Multiplier,
}

#[derive(Clone, Debug)]
struct Group {
    members: Vec<usize>,
    mass: f64,
}

#[derive(Clone, Debug)]
pub struct ScenarioSpace {
    stage_dims: Vec<usize>,
    stage_offsets: Vec<usize>,
    dim: usize,
    probs: Vec<f64>,
    histories: Vec<Vec<HistoryKey>>,
    groups: Vec<Vec<Group>>,
}

impl ScenarioSpace {
    pub fn new(stage_dims: Vec<usize>, scenarios: Vec<Scenario>) -> Result<Self> {
        let stages = stage_dims.len();
        if stages == 0 {
            return Err(SviError::InvalidSpace("at least one stage is required".into()));
        }
        let dim: usize = stage_dims.iter().sum();
        if dim == 0 {
            return Err(SviError::InvalidSpace("total decision dimension is zero".into()));
        }
        if scenarios.is_empty() {
            return Err(SviError::InvalidSpace("at least one scenario is required".into()));
        }
        let mut total = 0.0;
        for (i, s) in scenarios.iter().enumerate() {
            if !(s.probability.is_finite() && s.probability > 0.0) {
                return Err(SviError::InvalidSpace(format!(
                    "scenario {i} has probability {}",
                    s.probability
                )));
            }
            total += s.probability;
            if s.history.len() != stages {
                return Err(SviError::InvalidSpace(format!(
                    "scenario {i} has {} history keys for {stages} stages",
                    s.history.len()
                )));
            }
            for (k, key) in s.history.iter().enumerate() {
                if key.0.len() != k {
                    return Err(SviError::InvalidSpace(format!(
                        "scenario {i}: stage {k} key has length {}, expected {k}",
                        key.0.len()
                    )));
                }
                if k > 0 && key.0[..k - 1] != s.history[k - 1].0[..] {
                    return Err(SviError::InvalidSpace(format!(
                        "scenario {i}: stage {k} key does not extend the stage {} key",
                        k - 1
                    )));
                }
            }
        }
        if (total - 1.0).abs() > PROBABILITY_SUM_TOL {
            return Err(SviError::InvalidSpace(format!(
                "probabilities sum to {total}, not 1"
            )));
        }

        let probs: Vec<f64> = scenarios.iter().map(|s| s.probability).collect();
        let histories: Vec<Vec<HistoryKey>> = scenarios.into_iter().map(|s| s.history).collect();
        let mut groups = Vec::with_capacity(stages);
        for k in 0..stages {
            let mut stage_groups: Vec<(HistoryKey, Group)> = Vec::new();
            for (i, h) in histories.iter().enumerate() {
                match stage_groups.iter_mut().find(|(key, _)| *key == h[k]) {
                    Some((_, g)) => g.members.push(i),
                    None => stage_groups.push((
                        h[k].clone(),
                        Group {
                            members: vec![i],
                            mass: 0.0,
                        },
                    )),
                }
            }
            let stage_groups: Vec<Group> = stage_groups
                .into_iter()
                .map(|(_, mut g)| {
                    g.mass = g.members.iter().map(|&i| probs[i]).sum();
                    g
                })
                .collect();
            groups.push(stage_groups);
        }
        let mut stage_offsets = Vec::with_capacity(stages);
        let mut off = 0;
        for &d in &stage_dims {
            stage_offsets.push(off);
            off += d;
        }
        Ok(Self {
            stage_dims,
            stage_offsets,
            dim,
            probs,
            histories,
            groups,
        })
    }

    /// Builds a tree from scenario paths: `paths[i]` lists the realizations of
    /// the first `N - 1` random stages seen by scenario `i`.
    pub fn from_paths(stage_dims: Vec<usize>, probs: &[f64], paths: &[Vec<u32>]) -> Result<Self> {
        if probs.len() != paths.len() {
            return Err(SviError::Dimension(format!(
                "{} probabilities for {} paths",
                probs.len(),
                paths.len()
            )));
        }
        let stages = stage_dims.len();
        let scenarios = probs
            .iter()
            .zip(paths)
            .map(|(&p, path)| {
                if path.len() + 1 < stages {
                    return Err(SviError::InvalidSpace(format!(
                        "path of length {} cannot index {stages} stages",
                        path.len()
                    )));
                }
                Ok(Scenario {
                    probability: p,
                    history: (0..stages).map(|k| HistoryKey(path[..k].to_vec())).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(stage_dims, scenarios)
    }

    /// Two-stage tree: a shared first-stage block and one second-stage branch per scenario.
    pub fn two_stage(n1: usize, n2: usize, probs: &[f64]) -> Result<Self> {
        let paths: Vec<Vec<u32>> = (0..probs.len() as u32).map(|i| vec![i]).collect();
        Self::from_paths(vec![n1, n2], probs, &paths)
    }

    pub fn stages(&self) -> usize {
        self.stage_dims.len()
    }

    pub fn stage_dims(&self) -> &[usize] {
        &self.stage_dims
    }

    pub fn stage_range(&self, k: usize) -> std::ops::Range<usize> {
        self.stage_offsets[k]..self.stage_offsets[k] + self.stage_dims[k]
    }

    /// Per-scenario decision dimension `n`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of scenarios `J`.
    pub fn scenarios(&self) -> usize {
        self.probs.len()
    }

    /// Dimension of the flat embedding, `n·J`.
    pub fn iso_dim(&self) -> usize {
        self.dim * self.probs.len()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn history(&self, scenario: usize) -> &[HistoryKey] {
        &self.histories[scenario]
    }

    /// Scenario groups sharing the stage-`k` history, each in ascending index order.
    pub fn groups(&self, k: usize) -> impl Iterator<Item = &[usize]> {
        self.groups[k].iter().map(|g| g.members.as_slice())
    }

    pub fn check(&self, x: &Policy) -> Result<()> {
        if x.scenarios() != self.scenarios() || x.dim() != self.dim {
            return Err(SviError::Dimension(format!(
                "policy is {}x{}, space expects {}x{}",
                x.scenarios(),
                x.dim(),
                self.scenarios(),
                self.dim
            )));
        }
        Ok(())
    }

    /// `Σ_ξ p(ξ) ⟨x(ξ), y(ξ)⟩`.
    pub fn inner(&self, x: &Policy, y: &Policy) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        Ok(self
            .probs
            .iter()
            .enumerate()
            .map(|(i, p)| p * crate::linalg::dot(x.row(i), y.row(i)))
            .sum())
    }

    pub fn norm(&self, x: &Policy) -> Result<f64> {
        Ok(self.inner(x, x)?.max(0.0).sqrt())
    }

    fn group_mean(&self, x: &Policy, g: &Group, col: usize) -> f64 {
        let s: f64 = g.members.iter().map(|&i| self.probs[i] * x.get(i, col)).sum();
        s / g.mass
    }

    /// Orthogonal projection onto the nonanticipative subspace: each stage block
    /// is replaced by its conditional expectation over the scenarios sharing
    /// that stage's history. The group value is computed once and copied, so
    /// the result is exactly nonanticipative.
    pub fn project_nonanticipative(&self, x: &Policy) -> Result<Policy> {
        self.check(x)?;
        let mut out = x.clone();
        for k in 0..self.stages() {
            for g in &self.groups[k] {
                for col in self.stage_range(k) {
                    let m = self.group_mean(x, g, col);
                    for &i in &g.members {
                        out.set(i, col, m);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Projection onto the multiplier subspace, `x − P_N(x)`.
    pub fn project_multiplier(&self, x: &Policy) -> Result<Policy> {
        let pn = self.project_nonanticipative(x)?;
        Ok(x.sub(&pn))
    }

    /// Largest deviation of a stage block from the first member of its group.
    /// Zero exactly when `x` is nonanticipative.
    pub fn nonanticipativity_defect(&self, x: &Policy) -> Result<f64> {
        self.check(x)?;
        let mut worst = 0.0_f64;
        for k in 0..self.stages() {
            for g in &self.groups[k] {
                let lead = g.members[0];
                for col in self.stage_range(k) {
                    let v = x.get(lead, col);
                    for &i in &g.members[1..] {
                        worst = worst.max((x.get(i, col) - v).abs());
                    }
                }
            }
        }
        Ok(worst)
    }

    /// Largest absolute conditional expectation of any stage block; zero on `M`.
    pub fn multiplier_defect(&self, w: &Policy) -> Result<f64> {
        self.check(w)?;
        let mut worst = 0.0_f64;
        for k in 0..self.stages() {
            for g in &self.groups[k] {
                for col in self.stage_range(k) {
                    worst = worst.max(self.group_mean(w, g, col).abs());
                }
            }
        }
        Ok(worst)
    }

    pub fn to_iso(&self, x: &Policy) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut v = Vec::with_capacity(self.iso_dim());
        for (i, p) in self.probs.iter().enumerate() {
            let s = p.sqrt();
            v.extend(x.row(i).iter().map(|a| s * a));
        }
        Ok(v)
    }

    pub fn from_iso(&self, v: &[f64]) -> Result<Policy> {
        if v.len() != self.iso_dim() {
            return Err(SviError::Dimension(format!(
                "flat vector has length {}, expected {}",
                v.len(),
                self.iso_dim()
            )));
        }
        let n = self.dim;
        let mut out = Policy::zeros(self.scenarios(), n);
        for (i, p) in self.probs.iter().enumerate() {
            let s = p.sqrt();
            for (dst, src) in out.row_mut(i).iter_mut().zip(&v[i * n..(i + 1) * n]) {
                *dst = src / s;
            }
        }
        Ok(out)
    }

    /// Dense orthogonal projector onto the embedded subspace.
    pub fn iso_projection_matrix(&self, which: Subspace) -> DMatrix<f64> {
        let nbar = self.iso_dim();
        let n = self.dim;
        let mut pn = DMatrix::zeros(nbar, nbar);
        for k in 0..self.stages() {
            for g in &self.groups[k] {
                for col in self.stage_range(k) {
                    for &i in &g.members {
                        for &j in &g.members {
                            pn[(i * n + col, j * n + col)] =
                                (self.probs[i] * self.probs[j]).sqrt() / g.mass;
                        }
                    }
                }
            }
        }
        match which {
            Subspace::Nonanticipative => pn,
            Subspace::Multiplier => DMatrix::identity(nbar, nbar) - pn,
        }
    }

    /// Orthonormal basis of the embedded subspace. The multiplier basis uses a
    /// probability-weighted Helmert construction inside each group.
    pub fn basis(&self, which: Subspace) -> SubspaceBasis {
        let nbar = self.iso_dim();
        let n = self.dim;
        let mut cols: Vec<Vec<(usize, f64)>> = Vec::new();
        for k in 0..self.stages() {
            for g in &self.groups[k] {
                for col in self.stage_range(k) {
                    match which {
                        Subspace::Nonanticipative => {
                            cols.push(
                                g.members
                                    .iter()
                                    .map(|&i| (i * n + col, (self.probs[i] / g.mass).sqrt()))
                                    .collect(),
                            );
                        }
                        Subspace::Multiplier => {
                            let mut head = 0.0;
                            for m in 0..g.members.len().saturating_sub(1) {
                                head += self.probs[g.members[m]];
                                let next_p = self.probs[g.members[m + 1]];
                                let tail = head + next_p;
                                let mut entries: Vec<(usize, f64)> = g.members[..=m]
                                    .iter()
                                    .map(|&i| {
                                        (i * n + col, (self.probs[i] * next_p / (head * tail)).sqrt())
                                    })
                                    .collect();
                                entries.push((g.members[m + 1] * n + col, -(head / tail).sqrt()));
                                cols.push(entries);
                            }
                        }
                    }
                }
            }
        }
        let mut matrix = DMatrix::zeros(nbar, cols.len());
        for (c, entries) in cols.iter().enumerate() {
            for &(r, v) in entries {
                matrix[(r, c)] = v;
            }
        }
        SubspaceBasis { which, matrix }
    }
}

/// Orthonormal columns spanning an embedded subspace of `R^{nJ}`.
#[derive(Clone, Debug)]
pub struct SubspaceBasis {
    pub which: Subspace,
    pub matrix: DMatrix<f64>,
}

impl SubspaceBasis {
    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// `max |BᵀB − I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.matrix.transpose() * &self.matrix;
        let d = self.dim();
        crate::linalg::max_abs(&(g - DMatrix::identity(d, d)))
    }
}

/// Scenario-major `J × n` array: row `i` is the decision `x(ξ^i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    scenarios: usize,
    dim: usize,
    values: Vec<f64>,
}

impl Policy {
    pub fn zeros(scenarios: usize, dim: usize) -> Self {
        Self {
            scenarios,
            dim,
            values: vec![0.0; scenarios * dim],
        }
    }

    pub fn zeros_like(space: &ScenarioSpace) -> Self {
        Self::zeros(space.scenarios(), space.dim())
    }

    pub fn from_flat(scenarios: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != scenarios * dim {
            return Err(SviError::Dimension(format!(
                "{} values for a {scenarios}x{dim} policy",
                values.len()
            )));
        }
        Ok(Self {
            scenarios,
            dim,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(SviError::Dimension("ragged policy rows".into()));
        }
        Self::from_flat(rows.len(), dim, rows.concat())
    }

    pub fn scenarios(&self) -> usize {
        self.scenarios
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.dim.max(1)).take(self.scenarios)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.dim + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn sub(&self, other: &Policy) -> Policy {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Policy) -> Policy {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Policy {
        Policy {
            scenarios: self.scenarios,
            dim: self.dim,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &Policy) -> Policy {
        self.zip_with(other, |a, b| a + s * b)
    }

    pub fn max_abs(&self) -> f64 {
        crate::linalg::norm_inf(&self.values)
    }

    fn zip_with(&self, other: &Policy, f: impl Fn(f64, f64) -> f64) -> Policy {
        assert_eq!(
            (self.scenarios, self.dim),
            (other.scenarios, other.dim),
            "policy shape mismatch"
        );
        Policy {
            scenarios: self.scenarios,
            dim: self.dim,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_space(probs: &[f64]) -> ScenarioSpace {
        ScenarioSpace::two_stage(1, 0, probs).unwrap()
    }

    fn col(values: &[f64]) -> Policy {
        Policy::from_flat(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn inner_product_examples() {
        let s = scalar_space(&[0.5, 0.5]);
        assert_eq!(s.inner(&col(&[2.0, 4.0]), &col(&[1.0, 1.0])).unwrap(), 3.0);
        assert_eq!(s.inner(&col(&[0.0, 0.0]), &col(&[0.0, 0.0])).unwrap(), 0.0);
        let s = scalar_space(&[0.5, 0.3, 0.2]);
        let v = s.inner(&col(&[1.0, 2.0, 3.0]), &col(&[1.0, 1.0, 1.0])).unwrap();
        assert!((v - 1.7).abs() < 1e-15);
    }

    #[test]
    fn inner_rejects_shape_mismatch() {
        let s = scalar_space(&[0.5, 0.5]);
        assert!(s.inner(&col(&[1.0]), &col(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn nonanticipative_projection_examples() {
        let s = ScenarioSpace::two_stage(1, 1, &[0.5, 0.3, 0.2]).unwrap();
        let x = Policy::from_rows(&[vec![1.0, 9.0], vec![2.0, 8.0], vec![3.0, 7.0]]).unwrap();
        let p = s.project_nonanticipative(&x).unwrap();
        for i in 0..3 {
            assert!((p.get(i, 0) - 1.7).abs() < 1e-15);
            assert_eq!(p.get(i, 1), x.get(i, 1));
        }
        assert_eq!(s.project_nonanticipative(&p).unwrap(), p);

        let s = scalar_space(&[0.25, 0.75]);
        let p = s.project_nonanticipative(&col(&[4.0, 0.0])).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn multiplier_projection_examples() {
        let s = scalar_space(&[0.5, 0.5]);
        let w = s.project_multiplier(&col(&[4.0, 0.0])).unwrap();
        assert_eq!(w.as_slice(), &[2.0, -2.0]);
        assert!(s.multiplier_defect(&w).unwrap() < 1e-12);
        let w = s.project_multiplier(&col(&[3.0, 3.0])).unwrap();
        assert_eq!(w.max_abs(), 0.0);
    }

    #[test]
    fn iso_examples() {
        let one = scalar_space(&[1.0]);
        assert_eq!(one.to_iso(&col(&[3.0])).unwrap(), vec![3.0]);
        // scaled first block under p = 0.25
        let s = scalar_space(&[0.25, 0.75]);
        assert_eq!(s.to_iso(&col(&[2.0, 0.0])).unwrap()[0], 1.0);
        let s = scalar_space(&[0.5, 0.5]);
        let x = col(&[1.0, 1.0]);
        let v = s.to_iso(&x).unwrap();
        assert!((crate::linalg::norm2(&v) - 1.0).abs() < 1e-15);
        assert!((s.norm(&x).unwrap() - 1.0).abs() < 1e-15);
        assert!(s.from_iso(&[1.0]).is_err());
    }

    #[test]
    fn projection_matrix_examples() {
        let s = scalar_space(&[0.5, 0.5]);
        let pn = s.iso_projection_matrix(Subspace::Nonanticipative);
        for v in pn.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        let one = ScenarioSpace::two_stage(2, 1, &[1.0]).unwrap();
        assert_eq!(
            one.iso_projection_matrix(Subspace::Nonanticipative),
            DMatrix::identity(3, 3)
        );
        assert_eq!(one.iso_projection_matrix(Subspace::Multiplier), DMatrix::zeros(3, 3));
    }

    #[test]
    fn rejects_bad_spaces() {
        assert!(scalar_space_result(&[0.5, 0.4]).is_err());
        assert!(scalar_space_result(&[1.0, 0.0]).is_err());
        assert!(scalar_space_result(&[]).is_err());
        let bad = Scenario {
            probability: 1.0,
            history: vec![HistoryKey(vec![]), HistoryKey(vec![1, 2])],
        };
        assert!(ScenarioSpace::new(vec![1, 1], vec![bad]).is_err());
        let bad = Scenario {
            probability: 1.0,
            history: vec![HistoryKey(vec![]), HistoryKey(vec![1]), HistoryKey(vec![2, 0])],
        };
        assert!(ScenarioSpace::new(vec![1, 1, 1], vec![bad]).is_err());
    }

    fn scalar_space_result(probs: &[f64]) -> Result<ScenarioSpace> {
        ScenarioSpace::two_stage(1, 0, probs)
    }

    #[test]
    fn multistage_groups() {
        // two first-stage branches, each with two leaves
        let s = ScenarioSpace::from_paths(
            vec![1, 1, 1],
            &[0.1, 0.2, 0.3, 0.4],
            &[vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]],
        )
        .unwrap();
        assert_eq!(s.groups(0).count(), 1);
        assert_eq!(s.groups(1).collect::<Vec<_>>(), vec![&[0, 1][..], &[2, 3][..]]);
        assert_eq!(s.groups(2).count(), 4);
        let nb = s.basis(Subspace::Nonanticipative);
        let mb = s.basis(Subspace::Multiplier);
        assert_eq!(nb.dim() + mb.dim(), s.iso_dim());
        assert_eq!(nb.dim(), 1 + 2 + 4);
        assert!(nb.orthonormality_defect() < 1e-12);
        assert!(mb.orthonormality_defect() < 1e-12);
        let cross = nb.matrix.transpose() * &mb.matrix;
        assert!(crate::linalg::max_abs(&cross) < 1e-12);
    }
}
