//! Command-line front end: `fit`, `path`, `bench`, `check`, `gen`.
//!
//! Exit codes: 0 success, 1 input or configuration error, 2 a fit did not
//! certify (outputs are still written), 3 a check suite failed.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bench::{gen_measurements_with, gen_truth_with, run_sweep, BenchConfig, Method, Profile, Sweep};
use crate::error::{Error, Result};
use crate::groups::{replicate_across_tasks, GroupSet};
use crate::io::{self, GroupSource, Manifest, PathRow};
use crate::losses::LossKind;
use crate::penalty::PenaltyMode;
use crate::solver::{lambda_grid, Prepared, SolverConfig, StepRule, DEFAULT_GRID_POINTS, DEFAULT_MIN_RATIO};
use crate::theory::{run_suite, Suite};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NO_CONVERGENCE: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "soslasso", version, about = "Sparse overlapping sets lasso for multitask learning")]
pub struct Cli {
    /// Worker threads (0 = rayon default).
    #[arg(long, global = true, env = "SOSLASSO_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit at one lambda.
    Fit(FitArgs),
    /// Warm-started regularization path.
    Path(PathArgs),
    /// Synthetic method comparison.
    Bench(BenchArgs),
    /// Run a theory check suite.
    Check(CheckArgs),
    /// Write a synthetic problem to disk.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Soslasso,
    Group,
    L1,
}

impl From<ModeArg> for PenaltyMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Soslasso => PenaltyMode::Soslasso,
            ModeArg::Group => PenaltyMode::GroupOnly,
            ModeArg::L1 => PenaltyMode::L1Only,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StepArg {
    Fixed,
    Backtracking,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProfileArg {
    Paper,
    Desk,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Paper => Profile::Paper,
            ProfileArg::Desk => Profile::Desk,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SweepArg {
    Noise,
    Alpha,
}

#[derive(Debug, Args)]
pub struct ProblemArgs {
    /// Manifest JSON.
    #[arg(long)]
    pub problem: PathBuf,
    /// Group JSON; overrides the manifest's groups.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "soslasso")]
    pub mode: ModeArg,
    /// Stationarity tolerance, relative to 1 + ||w||.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iters: usize,
    /// Step rule; defaults to backtracking for logistic loss.
    #[arg(long, value_enum)]
    pub step: Option<StepArg>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub lambda: f64,
}

#[derive(Debug, Args)]
pub struct PathArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Comma-separated, strictly descending.
    #[arg(long, value_delimiter = ',', conflicts_with = "grid")]
    pub lambdas: Option<Vec<f64>>,
    /// `points:min_ratio`, log-spaced down from lambda_max.
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value = "desk")]
    pub profile: ProfileArg,
    #[arg(long, value_enum)]
    pub sweep: SweepArg,
    /// Comma-separated: lasso, glasso_latent, soslasso.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Comma-separated sweep values; defaults to the built-in grid.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-trial CSV; summary.json goes next to it.
    #[arg(long, default_value = "report.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub suite: String,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "check_report.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value = "desk")]
    pub profile: ProfileArg,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long = "B")]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub shift: Option<usize>,
    #[arg(long = "T")]
    pub tasks: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Defaults to the profile's count, capped at the number of groups.
    #[arg(long)]
    pub k_active: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return EXIT_INPUT;
        }
    };
    match pool.install(|| dispatch(&cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NoConvergence { .. } => EXIT_NO_CONVERGENCE,
                _ => EXIT_INPUT,
            }
        }
    }
}

fn dispatch(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::Fit(a) => cmd_fit(a),
        Command::Path(a) => cmd_path(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Check(a) => cmd_check(a),
        Command::Gen(a) => cmd_gen(a),
    }
}

struct Loaded {
    problem: crate::losses::MultitaskProblem,
    groups: GroupSet,
    truth: Option<ndarray::Array2<f64>>,
}

fn load(a: &ProblemArgs) -> Result<Loaded> {
    let loaded = io::load_manifest(&a.problem)?;
    let groups = match &a.groups {
        Some(path) => io::read_groups(path)?,
        None => loaded.groups.ok_or_else(|| Error::Parse {
            path: a.problem.clone(),
            message: "no groups in manifest and no --groups given".into(),
        })?,
    };
    Ok(Loaded {
        problem: loaded.problem,
        groups,
        truth: loaded.truth,
    })
}

fn solver_config(a: &ProblemArgs, loss: LossKind) -> SolverConfig {
    let step_rule = match (a.step, loss) {
        (Some(StepArg::Fixed), _) => StepRule::FixedLipschitz,
        (Some(StepArg::Backtracking), _) | (None, LossKind::Logistic) => StepRule::Backtracking,
        (None, LossKind::Squared) => StepRule::FixedLipschitz,
    };
    SolverConfig {
        max_iters: a.max_iters,
        stationarity_tol: a.tol,
        step_rule,
        ..SolverConfig::with_mode(a.mode.into())
    }
}

#[derive(Serialize)]
struct FitOutput<'a> {
    lambda: f64,
    lambda_max: f64,
    mode: PenaltyMode,
    converged: bool,
    objective: f64,
    iterations: usize,
    restarts: usize,
    step: f64,
    stationarity_residual: f64,
    fixed_point_residual: f64,
    nnz: usize,
    selected_groups: &'a [usize],
    mse: Option<f64>,
    /// `p` rows of `T` entries.
    x_hat: Vec<Vec<f64>>,
    objective_trace: &'a [f64],
}

fn cmd_fit(a: &FitArgs) -> Result<i32> {
    let data = load(&a.problem)?;
    let layout = replicate_across_tasks(&data.groups, data.problem.task_count())?;
    let cfg = solver_config(&a.problem, data.problem.loss());
    let prepared = Prepared::new(&data.problem, &layout)?;
    let lmax = prepared.lambda_max(&cfg.penalty);
    let fit = prepared.fit(a.lambda, &cfg, None)?;
    let mse = match &data.truth {
        Some(t) => Some(crate::bench::mse(fit.x_hat.view(), t.view())?),
        None => None,
    };
    io::ensure_dir(&a.problem.out)?;
    io::write_matrix(&a.problem.out.join("coefficients.csv"), fit.x_hat.view())?;
    let out = FitOutput {
        lambda: fit.lambda,
        lambda_max: lmax,
        mode: cfg.penalty.mode,
        converged: fit.converged,
        objective: fit.objective(),
        iterations: fit.iterations,
        restarts: fit.restarts,
        step: fit.step,
        stationarity_residual: fit.stationarity_residual,
        fixed_point_residual: fit.fixed_point_residual,
        nnz: fit.nnz(),
        selected_groups: &fit.selected_groups,
        mse,
        x_hat: fit.x_hat.rows().into_iter().map(|r| r.to_vec()).collect(),
        objective_trace: &fit.objective_trace,
    };
    io::write_json(&a.problem.out.join("result.json"), &out)?;
    if fit.converged {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "warning: fit did not certify after {} iterations (fixed-point residual {:e})",
            fit.iterations, fit.fixed_point_residual
        );
        Ok(EXIT_NO_CONVERGENCE)
    }
}

fn parse_grid(spec: &str) -> Result<(usize, f64)> {
    let bad = || Error::invalid(format!("--grid expects points:min_ratio, got {spec:?}"));
    let (n, r) = spec.split_once(':').ok_or_else(bad)?;
    Ok((n.trim().parse().map_err(|_| bad())?, r.trim().parse().map_err(|_| bad())?))
}

fn cmd_path(a: &PathArgs) -> Result<i32> {
    let data = load(&a.problem)?;
    let layout = replicate_across_tasks(&data.groups, data.problem.task_count())?;
    let cfg = solver_config(&a.problem, data.problem.loss());
    let prepared = Prepared::new(&data.problem, &layout)?;
    let lambdas = match (&a.lambdas, &a.grid) {
        (Some(l), _) => l.clone(),
        (None, grid) => {
            let (points, ratio) = match grid {
                Some(g) => parse_grid(g)?,
                None => (DEFAULT_GRID_POINTS, DEFAULT_MIN_RATIO),
            };
            if points == 0 || !(ratio > 0.0 && ratio < 1.0) {
                return Err(Error::invalid("grid needs points >= 1 and min_ratio in (0, 1)"));
            }
            lambda_grid(prepared.lambda_max(&cfg.penalty), points, ratio)
        }
    };
    let path = prepared.reg_path(&lambdas, &cfg)?;
    let mut rows = Vec::with_capacity(path.len());
    for fit in &path {
        let mse = match &data.truth {
            Some(t) => Some(crate::bench::mse(fit.x_hat.view(), t.view())?),
            None => None,
        };
        rows.push(PathRow {
            lambda: fit.lambda,
            objective: fit.objective(),
            nnz: fit.nnz(),
            selected_groups_count: fit.selected_groups.len(),
            mse,
        });
    }
    io::ensure_dir(&a.problem.out)?;
    io::write_path_csv(&a.problem.out.join("path.csv"), &rows)?;
    let failed = path.iter().filter(|f| !f.converged).count();
    if failed == 0 {
        Ok(EXIT_OK)
    } else {
        eprintln!("warning: {failed} of {} fits did not certify", path.len());
        Ok(EXIT_NO_CONVERGENCE)
    }
}

fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    let mut cfg = BenchConfig::profile(a.profile.into());
    cfg.seed = a.seed;
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    let sweep = match (a.sweep, &a.values) {
        (SweepArg::Noise, Some(v)) => Sweep::Noise(v.clone()),
        (SweepArg::Alpha, Some(v)) => Sweep::Alpha(v.clone()),
        (SweepArg::Noise, None) => Sweep::noise_default(),
        (SweepArg::Alpha, None) => Sweep::alpha_default(),
    };
    let methods = match &a.methods {
        Some(names) => names.iter().map(|m| Method::parse(m.trim())).collect::<Result<Vec<_>>>()?,
        None => Method::ALL.to_vec(),
    };
    let report = run_sweep(&cfg, &sweep, &methods)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        io::ensure_dir(dir)?;
    }
    io::write_report_csv(&a.out, &report)?;
    let summary = a.out.with_file_name("summary.json");
    io::write_summary_json(&summary, &report)?;
    eprintln!("bench finished in {:.1}s", report.wall_time_secs);
    let flagged: usize = report.cells.iter().map(|c| c.flagged).sum();
    if flagged == 0 {
        Ok(EXIT_OK)
    } else {
        eprintln!("warning: {flagged} trial fits were flagged as uncertified");
        Ok(EXIT_NO_CONVERGENCE)
    }
}

fn cmd_check(a: &CheckArgs) -> Result<i32> {
    let suite = Suite::parse(&a.suite)?;
    let trials = a.trials.unwrap_or(suite.default_trials());
    let report = run_suite(suite, trials, a.seed)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        io::ensure_dir(dir)?;
    }
    io::write_json(&a.out, &report)?;
    println!(
        "{}: {} ({} violations, {} allowed, {} entries)",
        suite.name(),
        if report.pass { "pass" } else { "FAIL" },
        report.violations,
        report.allowed_violations,
        report.entries.len()
    );
    Ok(if report.pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn gen_config(a: &GenArgs) -> Result<BenchConfig> {
    let mut cfg = BenchConfig::profile(a.profile.into());
    cfg.p = a.p.unwrap_or(cfg.p);
    cfg.group_size = a.group_size.unwrap_or(cfg.group_size);
    cfg.shift = a.shift.unwrap_or(cfg.shift);
    cfg.tasks = a.tasks.unwrap_or(cfg.tasks);
    cfg.n = a.n.unwrap_or(cfg.n);
    cfg.alpha = a.alpha.unwrap_or(cfg.alpha);
    cfg.sigma = a.sigma.unwrap_or(cfg.sigma);
    cfg.seed = a.seed;
    let m = cfg.groups()?;
    cfg.k_active = match a.k_active {
        Some(k) => k,
        None => cfg.k_active.min(m),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_gen(a: &GenArgs) -> Result<i32> {
    let cfg = gen_config(a)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let truth = gen_truth_with(&cfg, &mut rng)?;
    let problem = gen_measurements_with(&truth, &cfg, &mut rng)?;
    let out: &Path = &a.out;
    io::ensure_dir(out)?;
    io::write_matrix(&out.join("truth.csv"), truth.x.view())?;
    let mut tasks = Vec::with_capacity(cfg.tasks);
    for (t, task) in problem.tasks().iter().enumerate() {
        let name = format!("task_{t}.csv");
        io::write_task(&out.join(&name), task)?;
        tasks.push(PathBuf::from(name));
    }
    io::write_groups(&out.join("groups.json"), &cfg.group_set()?)?;
    let manifest = Manifest {
        loss_kind: LossKind::Squared,
        tasks,
        groups: Some(GroupSource::File("groups.json".into())),
        truth: Some("truth.csv".into()),
        sigma: Some(cfg.sigma),
    };
    io::write_json(&out.join("manifest.json"), &manifest)?;
    io::write_json(&out.join("config.json"), &cfg)?;
    Ok(EXIT_OK)
}
