use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sviph::elicitation::{
    falsify_pseudomonotone, run_all, run_criterion, split_bound_with, Criterion, ElicitationInput, EvalGrid, Levels,
    SplitOptions, SubspaceSplit,
};
use sviph::instances::{gen_pseudo_slcp, orange_market, textbook_examples, GeneratorParams};
use sviph::oracle::extensive_slcp_oracle;
use sviph::pha::{write_history_csv, ReportFile};
use sviph::study::{run_bench_with, write_bench_csv, BenchConfig, CellSpec, RChoice};
use sviph::{pha_solve, stopping_error, InstanceFile, PhaConfig, SolveStatus, SviError, SviProblem, TwoStageSlcp};

/// Elicited progressive hedging for two-stage stochastic variational inequalities.
#[derive(Parser, Debug)]
#[command(name = "sviph", version)]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 1 gives byte-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve an instance with elicited progressive hedging.
    Solve(SolveArgs),
    /// Write a random, built-in or example instance.
    Generate(GenerateArgs),
    /// Run the elicitation criteria on an instance.
    Elicit(ElicitArgs),
    /// Run benchmark cells and write a CSV summary.
    Bench(BenchArgs),
    /// Report the stopping residual of a solution.
    Verify(VerifyArgs),
    /// Solve a small instance exactly by enumerating active sets.
    Oracle(OracleArgs),
}

#[derive(Args, Debug)]
struct PhaFlags {
    #[arg(long, default_value_t = 1.0)]
    r: f64,
    /// Defaults to r/2.
    #[arg(long)]
    s: Option<f64>,
    #[arg(long, default_value_t = 1.618)]
    rho: f64,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
}

impl PhaFlags {
    fn config(&self, threads: Option<usize>) -> PhaConfig {
        let mut cfg = PhaConfig::new(self.r);
        if let Some(s) = self.s {
            cfg.s = s;
        }
        cfg.rho = self.rho;
        cfg.tol = self.tol;
        cfg.max_iter = self.max_iter;
        cfg.threads = threads;
        cfg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct SolveArgs {
    instance: PathBuf,
    #[command(flatten)]
    pha: PhaFlags,
    /// Report path; defaults to `<instance>.report.<format>`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Also write the per-iteration history as CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value_t = 40)]
    n1: usize,
    #[arg(long, default_value_t = 20)]
    n2: usize,
    /// Number of scenarios.
    #[arg(long, default_value_t = 50)]
    sn: usize,
    /// Draw every scenario positive semidefinite.
    #[arg(long)]
    monotone_only: bool,
    /// Write the built-in orange market instead.
    #[arg(long, conflicts_with = "example")]
    orange: bool,
    /// Write a named textbook example (with its own projector).
    #[arg(long)]
    example: Option<String>,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ElicitArgs {
    instance: PathBuf,
    /// Run one criterion (T5, T6, C6-1, T7, C7-1, T8, C8-1).
    #[arg(long)]
    criterion: Option<String>,
    /// Level checked by T7.
    #[arg(long)]
    e2: Option<f64>,
    /// Level checked by C7-1.
    #[arg(long)]
    e2_hat: Option<f64>,
    /// Level checked by T8.
    #[arg(long)]
    e3: Option<f64>,
    /// Skip the split-bound curvature test where F̂ vanishes.
    #[arg(long)]
    skip_stationary: bool,
    /// Also sample this many points per scenario for pseudomonotonicity counterexamples.
    #[arg(long)]
    falsify: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// JSON benchmark configuration; overrides the cell flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cells as `n1xn2xsn`, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "40x20x50")]
    cells: Vec<String>,
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    /// r choices: `1`, `sqrt` or a number.
    #[arg(long, value_delimiter = ',', default_value = "1,sqrt")]
    r: Vec<String>,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    #[arg(long)]
    monotone_only: bool,
    /// CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    instance: PathBuf,
    solution: PathBuf,
    /// Exit with status 1 when the error exceeds this value.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    instance: PathBuf,
}

/// Failures mapped onto exit codes: 2 for unusable input, 4 otherwise.
#[derive(Debug)]
enum Failure {
    Input(String),
    Runtime(String),
    /// The reader closed stdout early.
    ClosedPipe,
}

impl From<SviError> for Failure {
    fn from(e: SviError) -> Self {
        match e {
            SviError::Json(_) | SviError::Instance(_) | SviError::Dimension(_) | SviError::InvalidSpace(_)
            | SviError::InvalidParameter(_) => Failure::Input(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::BrokenPipe {
            return Failure::ClosedPipe;
        }
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => solve(a, &cli),
        Command::Generate(a) => generate(a, &cli),
        Command::Elicit(a) => elicit(a, &cli),
        Command::Bench(a) => bench(a, &cli),
        Command::Verify(a) => verify(a),
        Command::Oracle(a) => oracle(a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(4)
        }
        Err(Failure::ClosedPipe) => ExitCode::SUCCESS,
    }
}

fn read_instance(path: &Path) -> Result<InstanceFile, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    InstanceFile::from_json(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Result<(InstanceFile, TwoStageSlcp), Failure> {
    let inst = read_instance(path)?;
    let slcp = TwoStageSlcp::from_instance(&inst)?;
    Ok((inst, slcp))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn solve(a: &SolveArgs, cli: &Cli) -> CmdResult {
    let (_, slcp) = load(&a.instance)?;
    let problem = slcp.to_problem();
    let rep = pha_solve(&problem, &a.pha.config(cli.threads), None, None)?;
    let file = ReportFile::from_report(&rep, problem.space());
    let ext = match a.format {
        Format::Json => "json",
        Format::Csv => "csv",
    };
    let out = a.out.clone().unwrap_or_else(|| {
        let mut p = a.instance.clone().into_os_string();
        p.push(format!(".report.{ext}"));
        p.into()
    });
    let mut w = output(Some(&out))?;
    match a.format {
        Format::Json => writeln!(w, "{}", file.to_json()?)?,
        Format::Csv => {
            writeln!(w, "scenario,component,x,w")?;
            for i in 0..rep.x_final.scenarios() {
                for (c, (x, m)) in rep.x_final.row(i).iter().zip(rep.w_final.row(i)).enumerate() {
                    writeln!(w, "{i},{c},{x:e},{m:e}")?;
                }
            }
        }
    }
    w.flush()?;
    if let Some(h) = &a.history {
        write_history_csv(&rep, BufWriter::new(File::create(h)?))?;
    }
    writeln!(io::stdout().lock(), "{:?} {} {:e} {:.6}", rep.status, rep.iterations, rep.final_error, rep.wall_time)?;
    if let Some(f) = &rep.inner_failure {
        eprintln!("inner failure in scenario {} at iteration {}: {}", f.scenario, f.iteration, f.message);
    }
    Ok(match rep.status {
        SolveStatus::Converged => ExitCode::SUCCESS,
        SolveStatus::MaxIters => ExitCode::from(1),
        SolveStatus::InnerFailure => ExitCode::from(3),
    })
}

fn generate(a: &GenerateArgs, cli: &Cli) -> CmdResult {
    let inst = if a.orange {
        orange_market().to_instance()
    } else if let Some(name) = &a.example {
        let ex = textbook_examples();
        let names: Vec<&str> = ex.iter().map(|e| e.name).collect();
        ex.iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Failure::Input(format!("unknown example {name}; known: {}", names.join(", "))))?
            .to_instance()
    } else {
        let mut p = GeneratorParams::new(a.n1, a.n2, a.sn, cli.seed);
        p.monotone_only = a.monotone_only;
        gen_pseudo_slcp(&p)?.to_instance()
    };
    let mut w = output(a.out.as_deref())?;
    writeln!(w, "{}", inst.to_json()?)?;
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn elicit(a: &ElicitArgs, cli: &Cli) -> CmdResult {
    let (inst, slcp) = load(&a.instance)?;
    let problem: SviProblem = slcp.to_problem();
    let grid = EvalGrid::single(&problem);
    let input = match inst.projector() {
        Some(p) => ElicitationInput::with_split(&problem, &grid, SubspaceSplit::from_projector(p)?)?,
        None if inst.p_m.is_some() => return Err(Failure::Input("p_m must be square".into())),
        None => ElicitationInput::from_problem(&problem, &grid)?,
    };
    let levels = Levels {
        multiplicity: a.e2,
        pairing: a.e2_hat,
        dominance: a.e3,
    };
    let opts = SplitOptions {
        skip_stationary: a.skip_stationary,
    };
    let run_one = |c: Criterion| match c {
        Criterion::SplitBound => split_bound_with(&input, opts),
        _ => run_criterion(&input, c, &levels),
    };
    let reports = match &a.criterion {
        Some(label) => {
            let c = Criterion::from_label(label).ok_or_else(|| Failure::Input(format!("unknown criterion {label}")))?;
            vec![run_one(c)?]
        }
        None if a.skip_stationary => Criterion::ALL.iter().map(|&c| run_one(c)).collect::<Result<_, _>>()?,
        None => run_all(&input, &levels)?,
    };
    let violations = match a.falsify {
        Some(n) => Some(falsify_pseudomonotone(&problem, n, cli.seed)?),
        None => None,
    };
    let mut out = io::stdout().lock();
    match a.format {
        Format::Json => {
            let doc = serde_json::json!({ "reports": reports, "violations": violations });
            writeln!(out, "{}", serde_json::to_string_pretty(&doc).map_err(SviError::from)?)?;
        }
        Format::Csv => {
            writeln!(out, "criterion,applicable,level_bound,strictness,grid_certified,reason")?;
            for r in &reports {
                let bound = r.level_bound.map(|b| format!("{b:e}")).unwrap_or_default();
                let reason = r.reason.clone().unwrap_or_default().replace(',', ";");
                writeln!(
                    out,
                    "{},{},{bound},{:?},{},{reason}",
                    r.criterion, r.applicable, r.strictness, r.grid_certified
                )?;
            }
            if let Some(v) = &violations {
                writeln!(out, "# {} pseudomonotonicity violations", v.len())?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_cell(s: &str) -> Result<CellSpec, Failure> {
    let parts: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Input(format!("cell {s}: {e}")))?;
    match parts[..] {
        [n1, n2, sn] => Ok(CellSpec { n1, n2, sn }),
        _ => Err(Failure::Input(format!("cell {s} is not n1xn2xsn"))),
    }
}

fn parse_r(s: &str) -> Result<RChoice, Failure> {
    match s.trim() {
        "1" => Ok(RChoice::One),
        "sqrt" => Ok(RChoice::SqrtDim),
        v => v
            .parse::<f64>()
            .map(RChoice::Fixed)
            .map_err(|e| Failure::Input(format!("r choice {v}: {e}"))),
    }
}

fn bench(a: &BenchArgs, cli: &Cli) -> CmdResult {
    let cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            let mut cfg: BenchConfig = serde_json::from_str(&text).map_err(|e| Failure::Input(e.to_string()))?;
            cfg.threads = cfg.threads.or(cli.threads);
            cfg
        }
        None => BenchConfig {
            cells: a.cells.iter().map(|c| parse_cell(c)).collect::<Result<_, _>>()?,
            r_choices: a.r.iter().map(|r| parse_r(r)).collect::<Result<_, _>>()?,
            seeds_per_cell: a.seeds,
            base_seed: cli.seed,
            tol: a.tol,
            max_iter: a.max_iter,
            monotone_only: a.monotone_only,
            threads: cli.threads,
        },
    };
    let results = run_bench_with(&cfg, |c| {
        eprintln!(
            "{}x{} sn={} r={:.3}: converged {:.0}%, avg iter {:.1}",
            c.cell.n1,
            c.cell.n2,
            c.cell.sn,
            c.r,
            100.0 * c.converged_frac(),
            c.avg_iter()
        );
    })?;
    write_bench_csv(&results, output(a.out.as_deref())?)?;
    Ok(ExitCode::SUCCESS)
}

fn verify(a: &VerifyArgs) -> CmdResult {
    let (_, slcp) = load(&a.instance)?;
    let problem = slcp.to_problem();
    let text = std::fs::read_to_string(&a.solution).map_err(|e| Failure::Input(format!("{}: {e}", a.solution.display())))?;
    let sol = ReportFile::from_json(&text).map_err(|e| Failure::Input(format!("{}: {e}", a.solution.display())))?;
    let x = sol.policy(problem.space())?;
    let err = stopping_error(&problem, &x)?;
    let basic = problem.basic_residual(&x)?;
    let doc = serde_json::json!({ "err": err, "basic_residual": basic });
    writeln!(io::stdout().lock(), "{doc}")?;
    Ok(match a.tol {
        Some(t) if !(err <= t) => ExitCode::from(1),
        _ => ExitCode::SUCCESS,
    })
}

fn oracle(a: &OracleArgs) -> CmdResult {
    let (_, slcp) = load(&a.instance)?;
    let space = slcp.space();
    let n1 = slcp.n1();
    let sols = extensive_slcp_oracle(&slcp)?;
    let docs: Vec<_> = sols
        .iter()
        .map(|x| {
            let x2: std::collections::BTreeMap<usize, Vec<f64>> =
                (0..space.scenarios()).map(|i| (i, x.row(i)[n1..].to_vec())).collect();
            serde_json::json!({ "x1": &x.row(0)[..n1], "x2": x2, "err": slcp.stopping_error(x).ok() })
        })
        .collect();
    writeln!(io::stdout().lock(), "{}", serde_json::to_string_pretty(&docs).map_err(SviError::from)?)?;
    Ok(ExitCode::SUCCESS)
}
