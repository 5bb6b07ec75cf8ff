//! Synthetic multitask benchmark: planted group-and-within-group sparse
//! signals, Gaussian measurements, and clairvoyant comparisons of lasso,
//! latent group lasso and SOSlasso.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{chain_groups, replicate_across_tasks, GroupSet, TaskLayout};
use crate::losses::{LossKind, MultitaskProblem, Task};
use crate::penalty::{PenaltyConfig, PenaltyMode};
use crate::solver::{lambda_grid, select_by_truth, Prepared, SolverConfig};

/// Mixes a base seed with unit indices into an independent stream seed
/// (splitmix64 finalizer per word).
pub fn stream_seed(seed: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(seed), |acc, &i| mix(acc ^ mix(i.wrapping_add(1))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Paper,
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
    pub min_ratio: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: 30,
            min_ratio: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub p: usize,
    #[serde(rename = "B")]
    pub group_size: usize,
    pub shift: usize,
    #[serde(rename = "T")]
    pub tasks: usize,
    pub n: usize,
    pub k_active: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub coeff_low: f64,
    pub coeff_high: f64,
    /// Variance of the design entries; `None` means `1/n`.
    pub design_scale: Option<f64>,
    pub lambdas: GridSpec,
    pub trials: usize,
    pub seed: u64,
    pub stationarity_tol: f64,
    pub max_iters: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl BenchConfig {
    pub fn paper() -> Self {
        Self {
            p: 2002,
            group_size: 6,
            shift: 4,
            tasks: 20,
            n: 250,
            k_active: 20,
            alpha: 0.2,
            sigma: 0.1,
            coeff_low: -1.0,
            coeff_high: 1.0,
            design_scale: None,
            lambdas: GridSpec::default(),
            trials: 20,
            seed: 0,
            stationarity_tol: 1e-6,
            max_iters: 5000,
        }
    }

    pub fn desk() -> Self {
        Self {
            p: 402,
            tasks: 5,
            n: 80,
            k_active: 8,
            ..Self::paper()
        }
    }

    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    /// Number of chain groups.
    pub fn groups(&self) -> Result<usize> {
        Ok(self.group_set()?.len())
    }

    pub fn group_set(&self) -> Result<GroupSet> {
        chain_groups(self.p, self.group_size, self.shift)
    }

    pub fn layout(&self) -> Result<TaskLayout> {
        replicate_across_tasks(&self.group_set()?, self.tasks)
    }

    pub fn variance(&self) -> f64 {
        self.design_scale.unwrap_or(1.0 / self.n as f64)
    }

    pub fn solver(&self, mode: PenaltyMode) -> SolverConfig {
        SolverConfig {
            max_iters: self.max_iters,
            stationarity_tol: self.stationarity_tol,
            ..SolverConfig::with_mode(mode)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.groups()?;
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::invalid("sigma must be nonnegative"));
        }
        if self.k_active > m {
            return Err(Error::GeneratorInfeasible {
                requested: self.k_active,
                available: m,
            });
        }
        if self.tasks == 0 || self.n == 0 {
            return Err(Error::invalid("tasks and samples must be positive"));
        }
        if !(self.coeff_low <= self.coeff_high) {
            return Err(Error::invalid("coeff_low must not exceed coeff_high"));
        }
        if let Some(v) = self.design_scale {
            if !(v > 0.0) {
                return Err(Error::invalid("design_scale must be positive"));
            }
        }
        if self.lambdas.points == 0 || !(self.lambdas.min_ratio > 0.0 && self.lambdas.min_ratio < 1.0) {
            return Err(Error::invalid("lambda grid needs points >= 1 and min_ratio in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// `p × T`.
    pub x: Array2<f64>,
    /// Indices of the activated chain groups, ascending.
    pub active: Vec<usize>,
}

/// Planted signal from `seed`; see [`gen_truth_with`].
pub fn gen_truth(cfg: &BenchConfig, seed: u64) -> Result<Truth> {
    gen_truth_with(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Activates `k_active` chain groups uniformly without replacement. Each
/// active group gets a latent vector over its `T·B` replicated coordinates
/// drawn uniform on `[coeff_low, coeff_high]`, of which the `ceil(alpha·T·B)`
/// largest magnitudes are kept (ties to the lower coordinate). The signal is
/// the sum of the latent vectors, so overlapping active groups add.
pub fn gen_truth_with<R: Rng>(cfg: &BenchConfig, rng: &mut R) -> Result<Truth> {
    cfg.validate()?;
    let gs = cfg.group_set()?;
    let mut active = sample(rng, gs.len(), cfg.k_active).into_vec();
    active.sort_unstable();
    let mut x = Array2::zeros((cfg.p, cfg.tasks));
    for &g in &active {
        let members = gs.group(g);
        let mut latent: Vec<(usize, usize, f64)> = Vec::with_capacity(members.len() * cfg.tasks);
        for t in 0..cfg.tasks {
            for &j in members {
                let v = if cfg.coeff_low == cfg.coeff_high {
                    cfg.coeff_low
                } else {
                    rng.random_range(cfg.coeff_low..cfg.coeff_high)
                };
                latent.push((t, j, v));
            }
        }
        let keep = retained(cfg.alpha, latent.len());
        latent.sort_by(|a, b| {
            b.2.abs()
                .total_cmp(&a.2.abs())
                .then((a.0 * cfg.p + a.1).cmp(&(b.0 * cfg.p + b.1)))
        });
        for &(t, j, v) in &latent[..keep] {
            x[(j, t)] += v;
        }
    }
    Ok(Truth { x, active })
}

/// `ceil(alpha * size)` guarded against floating round-up (0.2 * 30 = 6).
pub(crate) fn retained(alpha: f64, size: usize) -> usize {
    let raw = alpha * size as f64;
    let r = raw.round();
    let count = if (raw - r).abs() <= 1e-9 * raw.max(1.0) { r } else { raw.ceil() };
    (count as usize).min(size)
}

/// Per task: `n × p` design with i.i.d. `N(0, variance)` entries drawn row by
/// row, then `y = Phi x + eta` with `eta ~ N(0, sigma^2)`.
pub fn gen_measurements(truth: &Truth, cfg: &BenchConfig, seed: u64) -> Result<MultitaskProblem> {
    gen_measurements_with(truth, cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn gen_measurements_with<R: Rng>(truth: &Truth, cfg: &BenchConfig, rng: &mut R) -> Result<MultitaskProblem> {
    if truth.x.dim() != (cfg.p, cfg.tasks) {
        return Err(Error::ShapeMismatch {
            left: truth.x.dim(),
            right: (cfg.p, cfg.tasks),
        });
    }
    let std = cfg.variance().sqrt();
    let tasks = (0..cfg.tasks)
        .map(|t| {
            let design = Array2::from_shape_fn((cfg.n, cfg.p), |_| std * rng.sample::<f64, _>(StandardNormal));
            let clean = design.dot(&truth.x.column(t));
            let response: Array1<f64> = if cfg.sigma > 0.0 {
                let noise = Normal::new(0.0, cfg.sigma).expect("sigma checked");
                clean.mapv(|v| v + noise.sample(rng))
            } else {
                clean
            };
            Task::new(design, response)
        })
        .collect();
    Ok(MultitaskProblem::new(tasks, LossKind::Squared)?.with_noise_sigma(cfg.sigma))
}

/// Per-entry mean squared error `||x_hat - truth||_F^2 / (p T)`.
pub fn mse(x_hat: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<f64> {
    if x_hat.dim() != truth.dim() {
        return Err(Error::ShapeMismatch {
            left: x_hat.dim(),
            right: truth.dim(),
        });
    }
    let count = x_hat.len().max(1) as f64;
    let sum: f64 = x_hat.iter().zip(truth.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lasso,
    GlassoLatent,
    Soslasso,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Lasso, Method::GlassoLatent, Method::Soslasso];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lasso => "lasso",
            Method::GlassoLatent => "glasso_latent",
            Method::Soslasso => "soslasso",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lasso" => Ok(Method::Lasso),
            "glasso_latent" | "glasso" | "group" => Ok(Method::GlassoLatent),
            "soslasso" => Ok(Method::Soslasso),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }

    pub fn mode(self) -> PenaltyMode {
        match self {
            Method::Lasso => PenaltyMode::L1Only,
            Method::GlassoLatent => PenaltyMode::GroupOnly,
            Method::Soslasso => PenaltyMode::Soslasso,
        }
    }

    /// Lasso ignores the groups and runs on singletons.
    pub fn layout(self, cfg: &BenchConfig) -> Result<TaskLayout> {
        match self {
            Method::Lasso => replicate_across_tasks(&GroupSet::singletons(cfg.p)?, cfg.tasks),
            _ => cfg.layout(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum Sweep {
    Noise(Vec<f64>),
    Alpha(Vec<f64>),
}

impl Sweep {
    pub fn noise_default() -> Self {
        Sweep::Noise(vec![0.01, 0.05, 0.1, 0.2, 0.5])
    }

    pub fn alpha_default() -> Self {
        Sweep::Alpha(vec![0.1, 0.2, 0.4, 0.6, 0.8, 1.0])
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Sweep::Noise(v) | Sweep::Alpha(v) => v,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Sweep::Noise(_) => "noise",
            Sweep::Alpha(_) => "alpha",
        }
    }

    fn apply(&self, base: &BenchConfig, value: f64) -> BenchConfig {
        let mut cfg = base.clone();
        match self {
            Sweep::Noise(_) => cfg.sigma = value,
            Sweep::Alpha(_) => cfg.alpha = value,
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub sweep_value: f64,
    pub method: Method,
    pub trial: usize,
    pub lambda_selected: f64,
    pub mse: f64,
    /// Some fit on the path did not certify, or the cell errored.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub sweep_value: f64,
    pub method: Method,
    pub trials: usize,
    pub mean_mse: f64,
    pub stderr: f64,
    pub lambdas: Vec<f64>,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub sweep: String,
    pub config: BenchConfig,
    pub config_hash: String,
    pub methods: Vec<Method>,
    pub records: Vec<TrialRecord>,
    pub cells: Vec<Cell>,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl BenchReport {
    pub fn cell(&self, method: Method, sweep_value: f64) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.sweep_value == sweep_value)
    }
}

/// FNV-1a over the JSON form of the config.
pub fn config_hash(cfg: &BenchConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Clairvoyant result of one method on one instance: `(lambda, mse, flagged)`.
pub fn clairvoyant_on(
    method: Method,
    cfg: &BenchConfig,
    problem: &MultitaskProblem,
    truth: &Truth,
) -> Result<(f64, f64, bool)> {
    let layout = method.layout(cfg)?;
    let prepared = Prepared::new(problem, &layout)?;
    let solver = cfg.solver(method.mode());
    let lmax = prepared.lambda_max(&PenaltyConfig::new(method.mode()));
    let grid = lambda_grid(lmax, cfg.lambdas.points, cfg.lambdas.min_ratio);
    let path = prepared.reg_path(&grid, &solver)?;
    let flagged = path.iter().any(|f| !f.converged);
    let best = select_by_truth(path, truth.x.view())?;
    Ok((best.best_lambda, best.mse_table[best.best_index].1, flagged))
}

/// Fresh instance per (sweep point, trial); every method sees the same
/// instance. Units run in parallel on the current rayon pool and are merged
/// in index order.
pub fn run_sweep(cfg: &BenchConfig, sweep: &Sweep, methods: &[Method]) -> Result<BenchReport> {
    if methods.is_empty() {
        return Err(Error::invalid("at least one method is required"));
    }
    if cfg.trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let points = sweep.values();
    if points.is_empty() {
        return Err(Error::invalid("sweep has no values"));
    }
    for &v in points {
        sweep.apply(cfg, v).validate()?;
    }
    let started = Instant::now();
    let units: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|i| (0..cfg.trials).map(move |r| (i, r)))
        .collect();
    let results: Vec<Vec<TrialRecord>> = units
        .par_iter()
        .map(|&(i, r)| {
            let point_cfg = sweep.apply(cfg, points[i]);
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, &[i as u64, r as u64]));
            let instance = gen_truth_with(&point_cfg, &mut rng)
                .and_then(|truth| gen_measurements_with(&truth, &point_cfg, &mut rng).map(|p| (truth, p)));
            methods
                .iter()
                .map(|&method| {
                    let outcome = instance
                        .as_ref()
                        .map_err(|e| Error::invalid(e.to_string()))
                        .and_then(|(truth, problem)| clairvoyant_on(method, &point_cfg, problem, truth));
                    let (lambda_selected, mse, flagged) = outcome.unwrap_or((f64::NAN, f64::NAN, true));
                    TrialRecord {
                        sweep_value: points[i],
                        method,
                        trial: r,
                        lambda_selected,
                        mse,
                        flagged,
                    }
                })
                .collect()
        })
        .collect();
    let records: Vec<TrialRecord> = results.into_iter().flatten().collect();

    let mut cells = Vec::new();
    for &v in points {
        for &method in methods {
            let rows: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.method == method && r.sweep_value == v)
                .collect();
            let errs: Vec<f64> = rows.iter().map(|r| r.mse).collect();
            let (mean, se) = mean_stderr(&errs);
            cells.push(Cell {
                sweep_value: v,
                method,
                trials: rows.len(),
                mean_mse: mean,
                stderr: se,
                lambdas: rows.iter().map(|r| r.lambda_selected).collect(),
                flagged: rows.iter().filter(|r| r.flagged).count(),
            });
        }
    }
    Ok(BenchReport {
        sweep: sweep.name().to_string(),
        config: cfg.clone(),
        config_hash: config_hash(cfg),
        methods: methods.to_vec(),
        records,
        cells,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// Mean and standard error of the mean (sample std / sqrt(m)).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let m = values.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    if m == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub n: usize,
    pub lambda: f64,
    pub mean_error: f64,
    pub mean_bound: f64,
    /// Mean measured group spectral constant (normalized by `n`).
    pub mean_sigma_m: f64,
    /// Trials whose squared error stayed below that trial's bound.
    pub dominated: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingStudy {
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `log(mean_error)` against `log(n)`.
    pub slope: f64,
}

/// SOSlasso at the theory-rule lambda over increasing sample sizes, with
/// the squared l2 error and the error bound recorded per trial.
pub fn scaling_study(cfg: &BenchConfig, n_list: &[usize], trials: usize, seed: u64) -> Result<ScalingStudy> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("n_list must be nonempty and strictly ascending"));
    }
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for (i, &n) in n_list.iter().enumerate() {
        let point = BenchConfig { n, ..cfg.clone() };
        point.validate()?;
        let outcomes: Vec<Result<crate::theory::TheoremTrial>> = (0..trials)
            .into_par_iter()
            .map(|r| crate::theory::theorem_trial(&point, stream_seed(seed, &[i as u64, r as u64])))
            .collect();
        let outcomes: Vec<_> = outcomes.into_iter().collect::<Result<_>>()?;
        let errs: Vec<f64> = outcomes.iter().map(|o| o.error).collect();
        let bounds: Vec<f64> = outcomes.iter().map(|o| o.bound).collect();
        rows.push(ScalingRow {
            n,
            lambda: outcomes.iter().map(|o| o.lambda).sum::<f64>() / trials as f64,
            mean_error: mean_stderr(&errs).0,
            mean_bound: mean_stderr(&bounds).0,
            mean_sigma_m: outcomes.iter().map(|o| o.sigma_m).sum::<f64>() / trials as f64,
            dominated: outcomes.iter().filter(|o| o.error <= o.bound).count(),
            trials,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_error.ln()).collect();
    Ok(ScalingStudy {
        slope: ls_slope(&xs, &ys),
        rows,
    })
}

/// Least-squares slope of `ys` on `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let m = xs.len() as f64;
    if xs.len() < 2 {
        return f64::NAN;
    }
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
