//! Benchmark cells over generated instances: iterations, time and
//! convergence rate per `(dim, sn, r)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SviError};
use crate::instances::{gen_pseudo_slcp, GeneratorParams};
use crate::pha::{pha_solve, PhaConfig, SolveStatus};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RChoice {
    One,
    /// `r = √(n₁ + n₂)`.
    SqrtDim,
    Fixed(f64),
}

impl RChoice {
    pub fn value(self, n1: usize, n2: usize) -> f64 {
        match self {
            RChoice::One => 1.0,
            RChoice::SqrtDim => ((n1 + n2) as f64).sqrt(),
            RChoice::Fixed(r) => r,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpec {
    pub n1: usize,
    pub n2: usize,
    pub sn: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub cells: Vec<CellSpec>,
    pub r_choices: Vec<RChoice>,
    pub seeds_per_cell: usize,
    pub base_seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default)]
    pub monotone_only: bool,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            cells: vec![CellSpec { n1: 40, n2: 20, sn: 50 }],
            r_choices: vec![RChoice::One, RChoice::SqrtDim],
            seeds_per_cell: 10,
            base_seed: 0,
            tol: 1e-5,
            max_iter: 2000,
            monotone_only: false,
            threads: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seed: u64,
    /// `None` when generation or the solver returned an error.
    pub status: Option<SolveStatus>,
    pub iterations: usize,
    pub time_s: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: CellSpec,
    pub r: f64,
    pub runs: Vec<RunOutcome>,
}

impl CellResult {
    fn converged(&self) -> impl Iterator<Item = &RunOutcome> {
        self.runs.iter().filter(|o| o.status == Some(SolveStatus::Converged))
    }

    /// Mean iterations over converged runs; NaN when none converged.
    pub fn avg_iter(&self) -> f64 {
        let v: Vec<f64> = self.converged().map(|o| o.iterations as f64).collect();
        if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 }
    }

    /// Mean wall time over all runs.
    pub fn avg_time(&self) -> f64 {
        if self.runs.is_empty() {
            return f64::NAN;
        }
        self.runs.iter().map(|o| o.time_s).sum::<f64>() / self.runs.len() as f64
    }

    pub fn converged_frac(&self) -> f64 {
        if self.runs.is_empty() {
            return 0.0;
        }
        self.converged().count() as f64 / self.runs.len() as f64
    }

    /// Median iteration count, non-converged runs counted as infinite.
    pub fn median_iter(&self) -> f64 {
        let mut v: Vec<f64> = self
            .runs
            .iter()
            .map(|o| if o.status == Some(SolveStatus::Converged) { o.iterations as f64 } else { f64::INFINITY })
            .collect();
        if v.is_empty() {
            return f64::NAN;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        if v.len() % 2 == 1 {
            v[m]
        } else {
            let (a, b) = (v[m - 1], v[m]);
            if a.is_infinite() || b.is_infinite() { f64::INFINITY } else { (a + b) / 2.0 }
        }
    }
}

pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<CellResult>> {
    run_bench_with(cfg, |_| {})
}

/// Runs every cell; a failing run is recorded and the study continues.
/// Instances of one cell are shared by all `r` choices.
pub fn run_bench_with(cfg: &BenchConfig, mut progress: impl FnMut(&CellResult)) -> Result<Vec<CellResult>> {
    if cfg.seeds_per_cell == 0 || cfg.r_choices.is_empty() {
        return Err(SviError::InvalidParameter("need at least one seed and one r choice".into()));
    }
    let mut out = Vec::new();
    for cell in &cfg.cells {
        let mut results: Vec<CellResult> = cfg
            .r_choices
            .iter()
            .map(|c| CellResult {
                cell: *cell,
                r: c.value(cell.n1, cell.n2),
                runs: Vec::new(),
            })
            .collect();
        for k in 0..cfg.seeds_per_cell as u64 {
            let seed = cfg.base_seed.wrapping_add(k);
            let mut params = GeneratorParams::new(cell.n1, cell.n2, cell.sn, seed);
            params.monotone_only = cfg.monotone_only;
            let problem = gen_pseudo_slcp(&params).map(|s| s.to_problem());
            for res in &mut results {
                let outcome = match &problem {
                    Ok(p) => {
                        let mut pc = PhaConfig::new(res.r);
                        pc.tol = cfg.tol;
                        pc.max_iter = cfg.max_iter;
                        pc.threads = cfg.threads;
                        pc.record_history = false;
                        match pha_solve(p, &pc, None, None) {
                            Ok(rep) => RunOutcome {
                                seed,
                                status: Some(rep.status),
                                iterations: rep.iterations,
                                time_s: rep.wall_time,
                                error: rep.inner_failure.map(|f| f.message),
                            },
                            Err(e) => failed(seed, &e),
                        }
                    }
                    Err(e) => failed(seed, e),
                };
                res.runs.push(outcome);
            }
        }
        for res in results {
            progress(&res);
            out.push(res);
        }
    }
    Ok(out)
}

fn failed(seed: u64, e: &SviError) -> RunOutcome {
    RunOutcome {
        seed,
        status: None,
        iterations: 0,
        time_s: 0.0,
        error: Some(e.to_string()),
    }
}

/// CSV with header `dim,sn,r,avg_iter,avg_time_s,converged_frac`; `dim` is
/// written as `n1xn2`.
pub fn write_bench_csv(results: &[CellResult], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dim", "sn", "r", "avg_iter", "avg_time_s", "converged_frac"])?;
    for c in results {
        w.write_record([
            format!("{}x{}", c.cell.n1, c.cell.n2),
            c.cell.sn.to_string(),
            format!("{:.6}", c.r),
            format!("{:.2}", c.avg_iter()),
            format!("{:.6}", c.avg_time()),
            format!("{:.3}", c.converged_frac()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(status: Option<SolveStatus>, iterations: usize) -> RunOutcome {
        RunOutcome { seed: 0, status, iterations, time_s: 1.0, error: None }
    }

    #[test]
    fn aggregates() {
        let c = CellResult {
            cell: CellSpec { n1: 1, n2: 1, sn: 1 },
            r: 1.0,
            runs: vec![
                outcome(Some(SolveStatus::Converged), 10),
                outcome(Some(SolveStatus::Converged), 20),
                outcome(Some(SolveStatus::MaxIters), 2000),
            ],
        };
        assert_eq!(c.avg_iter(), 15.0);
        assert!((c.converged_frac() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.median_iter(), 20.0);
        assert_eq!(c.avg_time(), 1.0);
    }

    #[test]
    fn single_scenario_cells_converge_for_both_r() {
        // seed 2 of this shape draws an unsolvable monotone LCP
        let cfg = BenchConfig {
            cells: vec![CellSpec { n1: 3, n2: 2, sn: 1 }],
            seeds_per_cell: 2,
            monotone_only: true,
            ..BenchConfig::default()
        };
        let res = run_bench(&cfg).unwrap();
        assert_eq!(res.len(), 2);
        for c in &res {
            assert_eq!(c.converged_frac(), 1.0, "{:?}", c.runs);
        }
        let mut buf = Vec::new();
        write_bench_csv(&res, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("dim,sn,r,avg_iter,avg_time_s,converged_frac\n3x2,1,1.000000,"));
    }
}
