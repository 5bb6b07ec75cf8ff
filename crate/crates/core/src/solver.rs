//! Accelerated proximal gradient for `loss(w) + lambda * penalty(w)` over
//! duplicated coordinates.
//!
//! Iterates follow FISTA with an optional monotone restart: a candidate that
//! raises the objective is rejected, momentum is reset, and a plain
//! proximal-gradient step is taken from the last accepted point. Exit is
//! certified by the fixed-point residual
//! `||w - prox(w - grad(w)/L, lambda/L)||`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::mse;
use crate::error::{Error, Result};
use crate::groups::{duplication_map, DuplicationMap, TaskLayout};
use crate::losses::{lipschitz_estimate, LossKind, MultitaskProblem, SmoothLoss};
use crate::penalty::{norm2, penalty_value_slice, prox_full_in_place, PenaltyConfig, PenaltyMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Constant step `1/L` from [`lipschitz_estimate`].
    FixedLipschitz,
    /// Start from `1/L` and halve the step until the quadratic upper model
    /// holds at the candidate.
    Backtracking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub rel_obj_tol: f64,
    /// Relative to `1 + ||w||_2`.
    pub stationarity_tol: f64,
    pub step_rule: StepRule,
    pub restart: bool,
    pub penalty: PenaltyConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            rel_obj_tol: 1e-8,
            stationarity_tol: 1e-6,
            step_rule: StepRule::FixedLipschitz,
            restart: true,
            penalty: PenaltyConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn with_mode(mode: PenaltyMode) -> Self {
        Self {
            penalty: PenaltyConfig::new(mode),
            ..Self::default()
        }
    }

    fn validate(&self, groups: usize) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.rel_obj_tol > 0.0) || !(self.stationarity_tol > 0.0) {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        self.penalty.validate(groups)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    /// `p × T`; column `t` is task `t`'s coefficients.
    pub x_hat: Array2<f64>,
    pub w_dup: Array1<f64>,
    /// Objective of every accepted iterate, starting at the initial point.
    pub objective_trace: Vec<f64>,
    pub lambda: f64,
    /// Gradient-mapping norm `||w - prox(w - step grad, step lambda)|| / step`.
    pub stationarity_residual: f64,
    /// Unscaled fixed-point residual `||w - prox(w - step grad, step lambda)||`.
    pub fixed_point_residual: f64,
    pub step: f64,
    pub iterations: usize,
    pub restarts: usize,
    /// Groups whose duplicated segment is nonzero.
    pub selected_groups: Vec<usize>,
    pub converged: bool,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::NAN)
    }

    /// Number of nonzero entries of `x_hat`.
    pub fn nnz(&self) -> usize {
        self.x_hat.iter().filter(|v| **v != 0.0).count()
    }

    /// Turns a flagged non-converged fit into `NoConvergence`.
    pub fn ensure_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NoConvergence {
                iterations: self.iterations,
                residual: self.fixed_point_residual,
            })
        }
    }
}

/// Validated problem + layout with the duplication map and step size
/// computed once, so paths and refits share them.
pub struct Prepared<'a> {
    problem: &'a MultitaskProblem,
    layout: &'a TaskLayout,
    dm: DuplicationMap,
    lipschitz: f64,
}

impl<'a> Prepared<'a> {
    pub fn new(problem: &'a MultitaskProblem, layout: &'a TaskLayout) -> Result<Self> {
        problem.check_layout(layout)?;
        if let Some(index) = layout.base().first_uncovered() {
            return Err(Error::UncoveredSupport { index });
        }
        let dm = duplication_map(layout.replicated());
        let lipschitz = lipschitz_estimate(problem, &dm)?;
        Ok(Self {
            problem,
            layout,
            dm,
            lipschitz,
        })
    }

    pub fn dm(&self) -> &DuplicationMap {
        &self.dm
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Gradient of the loss at zero, in stacked original coordinates.
    pub fn gradient_at_zero(&self) -> Array1<f64> {
        let engine = SmoothLoss::new(self.problem, &self.dm).expect("validated");
        let mut z = engine.predictor_buffers();
        let mut r = engine.predictor_buffers();
        let x = Array1::zeros(self.dm.p());
        engine.forward(&x, &mut z);
        let mut g = Array1::zeros(self.dm.p());
        engine.grad_x_at(&z, &mut r, &mut g);
        g
    }

    /// Smallest `lambda` known to give the zero solution, see [`lambda_max`].
    pub fn lambda_max(&self, penalty: &PenaltyConfig) -> f64 {
        let g = self.gradient_at_zero();
        zero_threshold(&g, self.layout, penalty)
    }

    pub fn fit(&self, lambda: f64, cfg: &SolverConfig, warm_start: Option<ArrayView1<f64>>) -> Result<FitResult> {
        cfg.validate(self.layout.replicated().len())?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be finite and nonnegative, got {lambda}")));
        }
        let start = match warm_start {
            Some(w) if w.len() != self.dm.total_dup() => {
                return Err(Error::DimensionMismatch {
                    context: "warm start",
                    expected: self.dm.total_dup(),
                    got: w.len(),
                })
            }
            Some(w) => w.to_vec(),
            None => vec![0.0; self.dm.total_dup()],
        };
        Ok(self.run(lambda, cfg, start))
    }

    fn run(&self, lambda: f64, cfg: &SolverConfig, start: Vec<f64>) -> FitResult {
        let engine = SmoothLoss::new(self.problem, &self.dm).expect("validated");
        let dm = &self.dm;
        let pen = &cfg.penalty;
        let nd = dm.total_dup();
        let np = dm.p();

        let mut lip = if self.lipschitz > 0.0 { self.lipschitz } else { 1.0 };

        let mut w = start;
        let mut w_prev = w.clone();
        let mut y = vec![0.0; nd];
        let mut cand = vec![0.0; nd];
        let mut g = vec![0.0; nd];
        let mut x = Array1::zeros(np);
        let mut gx = Array1::zeros(np);

        let mut z_w = engine.predictor_buffers();
        let mut z_prev = engine.predictor_buffers();
        let mut z_y = engine.predictor_buffers();
        let mut z_c = engine.predictor_buffers();
        let mut resid = engine.predictor_buffers();

        dm.expand_into(&w, x.as_slice_mut().unwrap());
        engine.forward(&x, &mut z_w);
        for (a, b) in z_prev.iter_mut().zip(&z_w) {
            a.assign(b);
        }
        let mut f_w = engine.value_at(&z_w) + lambda * penalty_value_slice(&w, dm, pen);
        let mut trace = vec![f_w];

        let mut theta = 1.0f64;
        let mut beta = 0.0f64;
        let mut restarts = 0;
        let mut iterations = 0;
        let mut converged = false;
        let mut cert = (f64::INFINITY, f64::INFINITY);

        while iterations < cfg.max_iters {
            iterations += 1;

            for i in 0..nd {
                y[i] = w[i] + beta * (w[i] - w_prev[i]);
            }
            for ((zy, zw), zp) in z_y.iter_mut().zip(&z_w).zip(&z_prev) {
                ndarray::Zip::from(zy).and(zw).and(zp).for_each(|a, &b, &c| *a = b + beta * (b - c));
            }
            engine.grad_x_at(&z_y, &mut resid, &mut gx);
            dm.gather_into(gx.as_slice().unwrap(), &mut g);
            let loss_y = if cfg.step_rule == StepRule::Backtracking {
                engine.value_at(&z_y)
            } else {
                0.0
            };

            let mut f_c;
            loop {
                let step = 1.0 / lip;
                for i in 0..nd {
                    cand[i] = y[i] - step * g[i];
                }
                prox_full_in_place(&mut cand, lambda * step, dm, pen);
                dm.expand_into(&cand, x.as_slice_mut().unwrap());
                engine.forward(&x, &mut z_c);
                let loss_c = engine.value_at(&z_c);
                f_c = loss_c + lambda * penalty_value_slice(&cand, dm, pen);
                if cfg.step_rule != StepRule::Backtracking {
                    break;
                }
                let mut lin = 0.0;
                let mut sq = 0.0;
                for i in 0..nd {
                    let d = cand[i] - y[i];
                    lin += g[i] * d;
                    sq += d * d;
                }
                let model = loss_y + lin + 0.5 * lip * sq;
                if loss_c <= model + 1e-12 * model.abs().max(1.0) || sq == 0.0 {
                    break;
                }
                lip *= 2.0;
            }

            let tiny = 1e-12 * f_w.abs().max(1.0);
            if cfg.restart && f_c > f_w + tiny {
                restarts += 1;
                let was_plain = beta == 0.0;
                theta = 1.0;
                beta = 0.0;
                w_prev.copy_from_slice(&w);
                for (a, b) in z_prev.iter_mut().zip(&z_w) {
                    a.assign(b);
                }
                if was_plain {
                    // a plain step from an accepted point failed: the step
                    // estimate is too long for this problem
                    lip *= 2.0;
                }
                continue;
            }

            w_prev.copy_from_slice(&w);
            w.copy_from_slice(&cand);
            std::mem::swap(&mut z_prev, &mut z_w);
            std::mem::swap(&mut z_w, &mut z_c);
            let f_old = f_w;
            f_w = f_c;
            trace.push(f_w);

            let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            beta = (theta - 1.0) / theta_next;
            theta = theta_next;

            let rel_change = (f_old - f_w).abs() / f_w.abs().max(f64::MIN_POSITIVE);
            if rel_change <= cfg.rel_obj_tol || iterations % 10 == 0 {
                cert = self.certificate(&engine, &w, &z_w, lambda, lip, pen, &mut resid, &mut gx, &mut g, &mut cand);
                let bound = cfg.stationarity_tol * (1.0 + norm2(&w));
                if cert.0 <= bound && cert.1 <= bound {
                    converged = true;
                    break;
                }
            }
        }
        if !converged {
            cert = self.certificate(&engine, &w, &z_w, lambda, lip, pen, &mut resid, &mut gx, &mut g, &mut cand);
        }

        let w = Array1::from(w);
        let x_full = dm.expand(w.view()).expect("dimensions fixed");
        let p = self.problem.p();
        let tasks = self.problem.task_count();
        let x_hat = Array2::from_shape_fn((p, tasks), |(j, t)| x_full[t * p + j]);
        let selected_groups = dm
            .segments()
            .iter()
            .enumerate()
            .filter(|(_, seg)| w.as_slice().unwrap()[seg.start..seg.end].iter().any(|v| *v != 0.0))
            .map(|(g, _)| g)
            .collect();
        FitResult {
            x_hat,
            w_dup: w,
            objective_trace: trace,
            lambda,
            stationarity_residual: cert.1,
            fixed_point_residual: cert.0,
            step: 1.0 / lip,
            iterations,
            restarts,
            selected_groups,
            converged,
        }
    }

    /// `(fixed-point residual, gradient-mapping norm)` at `w`.
    #[allow(clippy::too_many_arguments)]
    fn certificate(
        &self,
        engine: &SmoothLoss<'_>,
        w: &[f64],
        z_w: &[Array1<f64>],
        lambda: f64,
        lip: f64,
        pen: &PenaltyConfig,
        resid: &mut [Array1<f64>],
        gx: &mut Array1<f64>,
        g: &mut [f64],
        scratch: &mut [f64],
    ) -> (f64, f64) {
        let step = 1.0 / lip;
        engine.grad_x_at(z_w, resid, gx);
        self.dm.gather_into(gx.as_slice().unwrap(), g);
        for i in 0..w.len() {
            scratch[i] = w[i] - step * g[i];
        }
        prox_full_in_place(scratch, lambda * step, &self.dm, pen);
        let fp = w
            .iter()
            .zip(scratch.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        (fp, fp / step)
    }

    pub fn reg_path(&self, lambdas: &[f64], cfg: &SolverConfig) -> Result<Vec<FitResult>> {
        check_descending(lambdas)?;
        let mut out = Vec::with_capacity(lambdas.len());
        let mut warm: Option<Array1<f64>> = None;
        for &lambda in lambdas {
            let fit = self.fit(lambda, cfg, warm.as_ref().map(|w| w.view()))?;
            warm = Some(fit.w_dup.clone());
            out.push(fit);
        }
        Ok(out)
    }
}

fn zero_threshold(grad_x: &Array1<f64>, layout: &TaskLayout, penalty: &PenaltyConfig) -> f64 {
    let reps = layout.replicated();
    match penalty.mode {
        PenaltyMode::L1Only => grad_x.iter().map(|v| v.abs()).fold(0.0, f64::max),
        mode => reps
            .groups()
            .iter()
            .enumerate()
            .map(|(g, members)| {
                let norm = members.iter().map(|&j| grad_x[j] * grad_x[j]).sum::<f64>().sqrt();
                let alpha = penalty.alpha(g);
                match mode {
                    PenaltyMode::GroupOnly => norm / alpha,
                    _ => norm / (1.0 + alpha),
                }
            })
            .fold(0.0, f64::max),
    }
}

fn check_descending(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::invalid("lambda grid is empty"));
    }
    if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Error::invalid("lambdas must be finite and nonnegative"));
    }
    if lambdas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("lambdas must be strictly descending"));
    }
    Ok(())
}

/// Minimizes `sum_t L_t(x_t) + lambda h(x)` starting from zero or from
/// `warm_start` (duplicated coordinates).
pub fn fit(
    problem: &MultitaskProblem,
    layout: &TaskLayout,
    lambda: f64,
    cfg: &SolverConfig,
    warm_start: Option<ArrayView1<f64>>,
) -> Result<FitResult> {
    Prepared::new(problem, layout)?.fit(lambda, cfg, warm_start)
}

/// Warm-started fits along a strictly descending grid.
pub fn reg_path(
    problem: &MultitaskProblem,
    layout: &TaskLayout,
    lambdas: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<FitResult>> {
    Prepared::new(problem, layout)?.reg_path(lambdas, cfg)
}

/// Zero-solution threshold from the gradient at zero. For the SOS penalty
/// this is `max_G ||grad_G||_2 / (1 + alpha_G)`, which with unit weights is
/// [`dual_norm_bound`](crate::penalty::dual_norm_bound) of the gradient.
/// The group-only and l1-only limits use `max_G ||grad_G|| / alpha_G` and
/// `||grad||_inf`.
pub fn lambda_max(problem: &MultitaskProblem, layout: &TaskLayout, penalty: &PenaltyConfig) -> Result<f64> {
    Ok(Prepared::new(problem, layout)?.lambda_max(penalty))
}

/// `count` values spaced logarithmically from `lambda_max` down to
/// `min_ratio * lambda_max`.
pub fn lambda_grid(lambda_max: f64, count: usize, min_ratio: f64) -> Vec<f64> {
    if count == 0 || lambda_max <= 0.0 {
        return vec![0.0];
    }
    if count == 1 {
        return vec![lambda_max];
    }
    let lo = min_ratio.ln();
    (0..count)
        .map(|i| lambda_max * (lo * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Default path grid: 30 points down to `1e-3 * lambda_max`.
pub const DEFAULT_GRID_POINTS: usize = 30;
pub const DEFAULT_MIN_RATIO: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct ClairvoyantSelection {
    pub best_lambda: f64,
    pub best_index: usize,
    pub best_fit: FitResult,
    /// `(lambda, mse)` per grid point.
    pub mse_table: Vec<(f64, f64)>,
}

/// Runs the path and keeps the fit with the smallest MSE against `truth`;
/// ties go to the larger lambda.
pub fn clairvoyant_select(
    problem: &MultitaskProblem,
    layout: &TaskLayout,
    truth: ArrayView2<f64>,
    lambdas: &[f64],
    cfg: &SolverConfig,
) -> Result<ClairvoyantSelection> {
    let expected = (problem.p(), problem.task_count());
    if truth.dim() != expected {
        return Err(Error::ShapeMismatch {
            left: truth.dim(),
            right: expected,
        });
    }
    let path = reg_path(problem, layout, lambdas, cfg)?;
    select_by_truth(path, truth)
}

pub(crate) fn select_by_truth(path: Vec<FitResult>, truth: ArrayView2<f64>) -> Result<ClairvoyantSelection> {
    let mut mse_table = Vec::with_capacity(path.len());
    let mut best_index = 0;
    let mut best_err = f64::INFINITY;
    for (i, fit) in path.iter().enumerate() {
        let err = mse(fit.x_hat.view(), truth)?;
        mse_table.push((fit.lambda, err));
        if err < best_err {
            best_err = err;
            best_index = i;
        }
    }
    let best_fit = path.into_iter().nth(best_index).expect("nonempty path");
    Ok(ClairvoyantSelection {
        best_lambda: best_fit.lambda,
        best_index,
        best_fit,
        mse_table,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvRow {
    pub lambda: f64,
    pub mean_error: f64,
    pub fold_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossValidation {
    pub best_lambda: f64,
    pub table: Vec<CvRow>,
}

/// Per-task row permutation with the given seed, split round-robin.
fn fold_assignment(problem: &MultitaskProblem, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    problem
        .tasks()
        .iter()
        .enumerate()
        .map(|(t, task)| {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::bench::stream_seed(seed, &[t as u64]));
            let mut order: Vec<usize> = (0..task.samples()).collect();
            order.shuffle(&mut rng);
            let mut fold_of = vec![0; task.samples()];
            for (pos, &row) in order.iter().enumerate() {
                fold_of[row] = pos % folds;
            }
            fold_of
        })
        .collect()
}

/// K-fold cross-validation along a strictly descending grid. Held-out error
/// is the pooled mean squared prediction error (squared loss) or the
/// misclassification rate (logistic loss).
pub fn cross_validate(
    problem: &MultitaskProblem,
    layout: &TaskLayout,
    lambdas: &[f64],
    folds: usize,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<CrossValidation> {
    if folds < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    check_descending(lambdas)?;
    for (t, task) in problem.tasks().iter().enumerate() {
        if task.samples() < folds {
            return Err(Error::TooFewSamples {
                task: t,
                samples: task.samples(),
                folds,
            });
        }
    }
    let assignment = fold_assignment(problem, folds, seed);
    let per_fold: Vec<Result<Vec<f64>>> = (0..folds)
        .into_par_iter()
        .map(|k| {
            let train: Vec<Vec<usize>> = assignment
                .iter()
                .map(|f| (0..f.len()).filter(|&i| f[i] != k).collect())
                .collect();
            let test: Vec<Vec<usize>> = assignment
                .iter()
                .map(|f| (0..f.len()).filter(|&i| f[i] == k).collect())
                .collect();
            let train_problem = problem.subset(&train)?;
            let path = reg_path(&train_problem, layout, lambdas, cfg)?;
            Ok(path
                .iter()
                .map(|fit| held_out_error(problem, &test, &fit.x_hat))
                .collect())
        })
        .collect();
    let per_fold: Vec<Vec<f64>> = per_fold.into_iter().collect::<Result<_>>()?;

    let table: Vec<CvRow> = lambdas
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let fold_errors: Vec<f64> = per_fold.iter().map(|f| f[i]).collect();
            CvRow {
                lambda,
                mean_error: fold_errors.iter().sum::<f64>() / folds as f64,
                fold_errors,
            }
        })
        .collect();
    let mut best = 0;
    for (i, row) in table.iter().enumerate() {
        if row.mean_error < table[best].mean_error {
            best = i;
        }
    }
    Ok(CrossValidation {
        best_lambda: table[best].lambda,
        table,
    })
}

fn held_out_error(problem: &MultitaskProblem, test: &[Vec<usize>], x_hat: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (t, rows) in test.iter().enumerate() {
        let task = &problem.tasks()[t];
        let coef = x_hat.column(t);
        for &i in rows {
            let pred = task.design.row(i).dot(&coef);
            let y = task.response[i];
            total += match problem.loss() {
                LossKind::Squared => (pred - y) * (pred - y),
                LossKind::Logistic => {
                    let label = if pred >= 0.0 { 1.0 } else { -1.0 };
                    if label != y {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            count += 1;
        }
    }
    total / count.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::{chain_groups, replicate_across_tasks, GroupSet};
    use crate::losses::Task;
    use nalgebra::{DMatrix, DVector, SymmetricEigen};
    use ndarray::Array1;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn gaussian_task(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Task {
        let design = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
        let response = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        Task::new(design, response)
    }

    fn single(rng: &mut ChaCha8Rng, n: usize, p: usize) -> MultitaskProblem {
        MultitaskProblem::new(vec![gaussian_task(rng, n, p)], LossKind::Squared).unwrap()
    }

    fn tight() -> SolverConfig {
        SolverConfig {
            stationarity_tol: 1e-11,
            max_iters: 200_000,
            ..SolverConfig::default()
        }
    }

    fn dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
    }

    /// Cyclic coordinate descent for `(1/2n)||y - Phi x||^2 + c ||x||_1`.
    fn lasso_oracle(task: &Task, c: f64) -> Array1<f64> {
        let (n, p) = task.design.dim();
        let n = n as f64;
        let col_sq: Vec<f64> = (0..p).map(|j| task.design.column(j).dot(&task.design.column(j)) / n).collect();
        let mut x = Array1::<f64>::zeros(p);
        let mut r = task.response.clone();
        for _ in 0..100_000 {
            let mut delta: f64 = 0.0;
            for j in 0..p {
                let col = task.design.column(j);
                let rho = col.dot(&r) / n + col_sq[j] * x[j];
                let new = rho.signum() * (rho.abs() - c).max(0.0) / col_sq[j];
                let d = new - x[j];
                if d != 0.0 {
                    r.scaled_add(-d, &col);
                    x[j] = new;
                }
                delta = delta.max(d.abs());
            }
            if delta < 1e-15 {
                break;
            }
        }
        x
    }

    #[test]
    fn zero_lambda_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let problem = single(&mut rng, 30, 5);
        let layout = replicate_across_tasks(&GroupSet::new(5, vec![(0..5).collect()]).unwrap(), 1).unwrap();
        let fit = fit(&problem, &layout, 0.0, &tight(), None).unwrap();
        assert!(fit.converged);
        let task = &problem.tasks()[0];
        let a = dmatrix(&task.design);
        let y = DVector::from_iterator(30, task.response.iter().cloned());
        let x = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * y));
        for j in 0..5 {
            assert!((fit.x_hat[(j, 0)] - x[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn singletons_match_lasso_with_doubled_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let problem = single(&mut rng, 40, 20);
            let layout = replicate_across_tasks(&GroupSet::singletons(20).unwrap(), 1).unwrap();
            let lmax = lambda_max(&problem, &layout, &PenaltyConfig::default()).unwrap();
            let lambda = 0.3 * lmax;
            let got = fit(&problem, &layout, lambda, &tight(), None).unwrap();
            let want = lasso_oracle(&problem.tasks()[0], 2.0 * lambda);
            for j in 0..20 {
                assert!((got.x_hat[(j, 0)] - want[j]).abs() < 1e-6, "{j}");
            }
        }
    }

    #[test]
    fn group_only_matches_lifted_group_shrink_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gs = chain_groups(20, 5, 3).unwrap();
        let layout = replicate_across_tasks(&gs, 1).unwrap();
        let problem = single(&mut rng, 40, 20);
        let task = &problem.tasks()[0];
        let dm = duplication_map(&gs);
        let lifted = dm.lift_design(task.design.view()).unwrap();
        let n = 40.0;
        let gram = dmatrix(&lifted).transpose() * dmatrix(&lifted) / n;
        let lip = SymmetricEigen::new(gram).eigenvalues.max();
        let cfg = SolverConfig {
            penalty: PenaltyConfig::new(PenaltyMode::GroupOnly),
            ..tight()
        };
        let lambda = 0.2 * lambda_max(&problem, &layout, &cfg.penalty).unwrap();
        let got = fit(&problem, &layout, lambda, &cfg, None).unwrap();

        // plain ISTA in the lifted space with block soft-thresholding only
        let mut w = Array1::<f64>::zeros(dm.total_dup());
        for _ in 0..200_000 {
            let grad = lifted.t().dot(&(lifted.dot(&w) - &task.response)) / n;
            let mut next = &w - &(grad / lip);
            for seg in dm.segments() {
                let mut s = next.slice_mut(ndarray::s![seg.start..seg.end]);
                let norm = s.dot(&s).sqrt();
                let scale = if norm > 0.0 { (1.0 - lambda / lip / norm).max(0.0) } else { 0.0 };
                s *= scale;
            }
            let change = (&next - &w).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            w = next;
            if change < 1e-15 {
                break;
            }
        }
        let want = dm.expand(w.view()).unwrap();
        for j in 0..20 {
            assert!((got.x_hat[(j, 0)] - want[j]).abs() < 1e-5, "{j}");
        }
    }

    #[test]
    fn threshold_separates_zero_and_nonzero_fits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let problem = MultitaskProblem::new(
            (0..3).map(|_| gaussian_task(&mut rng, 25, 14)).collect(),
            LossKind::Squared,
        )
        .unwrap();
        let layout = replicate_across_tasks(&chain_groups(14, 6, 4).unwrap(), 3).unwrap();
        for mode in [PenaltyMode::Soslasso, PenaltyMode::GroupOnly, PenaltyMode::L1Only] {
            let cfg = SolverConfig::with_mode(mode);
            let lmax = lambda_max(&problem, &layout, &cfg.penalty).unwrap();
            let above = fit(&problem, &layout, 1.01 * lmax, &cfg, None).unwrap();
            assert!(above.x_hat.iter().all(|v| *v == 0.0));
            assert!(above.selected_groups.is_empty());
            let below = fit(&problem, &layout, 0.5 * lmax, &cfg, None).unwrap();
            assert!(below.nnz() > 0, "{mode:?}");
        }
    }

    #[test]
    fn lambda_max_direct_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut task = gaussian_task(&mut rng, 12, 4);
        let layout = replicate_across_tasks(&GroupSet::new(4, vec![(0..4).collect()]).unwrap(), 1).unwrap();
        let problem = MultitaskProblem::new(vec![task.clone()], LossKind::Squared).unwrap();
        let got = lambda_max(&problem, &layout, &PenaltyConfig::default()).unwrap();
        let g = task.design.t().dot(&task.response);
        assert!((got - 0.5 * g.dot(&g).sqrt() / 12.0).abs() < 1e-12);

        task.response.fill(0.0);
        let problem = MultitaskProblem::new(vec![task], LossKind::Squared).unwrap();
        assert_eq!(lambda_max(&problem, &layout, &PenaltyConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn uncovered_coordinates_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let problem = single(&mut rng, 10, 4);
        let layout = replicate_across_tasks(&GroupSet::new(4, vec![vec![0, 1], vec![1, 2]]).unwrap(), 1).unwrap();
        assert!(matches!(
            fit(&problem, &layout, 0.1, &SolverConfig::default(), None),
            Err(Error::UncoveredSupport { index: 3 })
        ));
    }

    #[test]
    fn warm_start_of_wrong_length_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let problem = single(&mut rng, 10, 4);
        let layout = replicate_across_tasks(&GroupSet::singletons(4).unwrap(), 1).unwrap();
        let bad = Array1::zeros(3);
        assert!(matches!(
            fit(&problem, &layout, 0.1, &SolverConfig::default(), Some(bad.view())),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn overlapping_instance(seed: u64, tasks: usize) -> (MultitaskProblem, TaskLayout) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let problem = MultitaskProblem::new(
            (0..tasks).map(|_| gaussian_task(&mut rng, 30, 18)).collect(),
            LossKind::Squared,
        )
        .unwrap();
        let layout = replicate_across_tasks(&chain_groups(18, 6, 4).unwrap(), tasks).unwrap();
        (problem, layout)
    }

    #[test]
    fn group_order_does_not_change_the_solution() {
        let (problem, layout) = overlapping_instance(7, 2);
        let base = layout.base();
        let order: Vec<usize> = (0..base.len()).rev().collect();
        let permuted = replicate_across_tasks(&base.permuted(&order).unwrap(), 2).unwrap();
        let lambda = 0.1 * lambda_max(&problem, &layout, &PenaltyConfig::default()).unwrap();
        let a = fit(&problem, &layout, lambda, &tight(), None).unwrap();
        let b = fit(&problem, &permuted, lambda, &tight(), None).unwrap();
        for (u, v) in a.x_hat.iter().zip(b.x_hat.iter()) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn warm_and_cold_fits_agree() {
        let (problem, layout) = overlapping_instance(8, 2);
        let cfg = SolverConfig::default();
        let lmax = lambda_max(&problem, &layout, &cfg.penalty).unwrap();
        let grid = lambda_grid(lmax, 10, 1e-2);
        let path = reg_path(&problem, &layout, &grid, &cfg).unwrap();
        for (lambda, warm) in grid.iter().zip(&path) {
            let cold = fit(&problem, &layout, *lambda, &cfg, None).unwrap();
            let (a, b) = (warm.objective(), cold.objective());
            assert!((a - b).abs() <= 10.0 * cfg.rel_obj_tol * a.abs().max(b.abs()), "{a} {b}");
        }
    }

    #[test]
    fn path_certifies_and_value_increases_with_lambda() {
        let (problem, layout) = overlapping_instance(9, 3);
        let cfg = SolverConfig::default();
        let lmax = lambda_max(&problem, &layout, &cfg.penalty).unwrap();
        let grid = lambda_grid(lmax, 10, 1e-2);
        let path = reg_path(&problem, &layout, &grid, &cfg).unwrap();
        assert_eq!(path.len(), 10);
        assert!(path[0].x_hat.iter().all(|v| *v == 0.0));
        for fit in &path {
            assert!(fit.converged);
            assert!(fit.fixed_point_residual <= cfg.stationarity_tol * (1.0 + norm2(fit.w_dup.as_slice().unwrap())));
        }
        for pair in path.windows(2) {
            assert!(pair[1].objective() <= pair[0].objective() + 1e-12);
        }
        let single = reg_path(&problem, &layout, &grid[3..4], &cfg).unwrap();
        let direct = fit(&problem, &layout, grid[3], &cfg, None).unwrap();
        assert_eq!(single[0].x_hat, direct.x_hat);
    }

    #[test]
    fn objective_trace_is_monotone() {
        let (problem, layout) = overlapping_instance(10, 2);
        let lambda = 0.05 * lambda_max(&problem, &layout, &PenaltyConfig::default()).unwrap();
        let fit = fit(&problem, &layout, lambda, &SolverConfig::default(), None).unwrap();
        for pair in fit.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12 * pair[0].abs().max(1.0));
        }
        assert!(fit.objective() <= fit.objective_trace[0]);
    }

    #[test]
    fn backtracking_handles_logistic_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tasks = (0..2)
            .map(|_| {
                let design = Array2::from_shape_fn((40, 12), |_| rng.sample::<f64, _>(StandardNormal));
                let response = Array1::from_shape_fn(40, |i| if design[(i, 0)] + 0.3 * design[(i, 5)] > 0.0 { 1.0 } else { -1.0 });
                Task::new(design, response)
            })
            .collect();
        let problem = MultitaskProblem::new(tasks, LossKind::Logistic).unwrap();
        let layout = replicate_across_tasks(&chain_groups(12, 4, 2).unwrap(), 2).unwrap();
        let lambda = 0.2 * lambda_max(&problem, &layout, &PenaltyConfig::default()).unwrap();
        let fixed = fit(&problem, &layout, lambda, &SolverConfig::default(), None).unwrap();
        let bt = SolverConfig {
            step_rule: StepRule::Backtracking,
            ..SolverConfig::default()
        };
        let back = fit(&problem, &layout, lambda, &bt, None).unwrap();
        assert!(fixed.converged && back.converged);
        assert!((fixed.objective() - back.objective()).abs() < 1e-6 * fixed.objective());
        assert!(fixed.x_hat[(0, 0)] > 0.0);
    }

    #[test]
    fn clairvoyant_prefers_largest_lambda_for_zero_truth() {
        let (problem, layout) = overlapping_instance(12, 2);
        let lmax = lambda_max(&problem, &layout, &PenaltyConfig::default()).unwrap();
        let grid = lambda_grid(lmax, 5, 1e-2);
        let truth = Array2::zeros((18, 2));
        let sel = clairvoyant_select(&problem, &layout, truth.view(), &grid, &SolverConfig::default()).unwrap();
        assert_eq!(sel.best_index, 0);
        assert_eq!(sel.best_lambda, grid[0]);
        let one = clairvoyant_select(&problem, &layout, truth.view(), &grid[2..3], &SolverConfig::default()).unwrap();
        assert_eq!(one.best_lambda, grid[2]);
    }

    #[test]
    fn clairvoyant_matches_exhaustive_loop() {
        let (problem, layout) = overlapping_instance(13, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let truth = Array2::from_shape_fn((18, 2), |(j, _)| if j < 6 { rng.random_range(-1.0..1.0) } else { 0.0 });
        let cfg = SolverConfig::default();
        let lmax = lambda_max(&problem, &layout, &cfg.penalty).unwrap();
        let grid = lambda_grid(lmax, 8, 1e-2);
        let sel = clairvoyant_select(&problem, &layout, truth.view(), &grid, &cfg).unwrap();
        let mut best = (f64::INFINITY, 0.0);
        for &lambda in &grid {
            let f = fit(&problem, &layout, lambda, &cfg, None).unwrap();
            let e = mse(f.x_hat.view(), truth.view()).unwrap();
            if e < best.0 - 1e-9 {
                best = (e, lambda);
            }
        }
        assert_eq!(sel.best_lambda, best.1);
    }

    #[test]
    fn cross_validation_structure_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let problem = single(&mut rng, 6, 4);
        let layout = replicate_across_tasks(&chain_groups(4, 2, 2).unwrap(), 1).unwrap();
        let grid = [0.5, 0.2, 0.1];
        let cfg = SolverConfig::default();
        let loo = cross_validate(&problem, &layout, &grid, 6, &cfg, 3).unwrap();
        assert_eq!(loo.table.len(), 3);
        assert!(loo.table.iter().all(|r| r.fold_errors.len() == 6));
        assert_eq!(loo, cross_validate(&problem, &layout, &grid, 6, &cfg, 3).unwrap());
        assert!(cross_validate(&problem, &layout, &[0.5, 0.5], 2, &cfg, 3).is_err());
        assert!(matches!(
            cross_validate(&problem, &layout, &grid, 7, &cfg, 3),
            Err(Error::TooFewSamples { folds: 7, .. })
        ));
    }

    #[test]
    fn grid_is_log_spaced() {
        let g = lambda_grid(2.0, DEFAULT_GRID_POINTS, DEFAULT_MIN_RATIO);
        assert_eq!(g.len(), 30);
        assert!((g[0] - 2.0).abs() < 1e-15 && (g[29] - 2e-3).abs() < 1e-15);
        for w in g.windows(3) {
            assert!(((w[0] / w[1]) - (w[1] / w[2])).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn certificate_holds_on_random_instances(seed in 0u64..1000, frac in 0.02f64..0.9) {
            let (problem, layout) = overlapping_instance(seed, 2);
            let cfg = SolverConfig::default();
            let lambda = frac * lambda_max(&problem, &layout, &cfg.penalty).unwrap();
            let f = fit(&problem, &layout, lambda, &cfg, None).unwrap();
            prop_assert!(f.converged);
            let bound = cfg.stationarity_tol * (1.0 + norm2(f.w_dup.as_slice().unwrap()));
            prop_assert!(f.fixed_point_residual <= bound);
            let x = f.x_hat.clone();
            let expanded = duplication_map(layout.replicated()).expand(f.w_dup.view()).unwrap();
            for t in 0..2 {
                for j in 0..18 {
                    prop_assert_eq!(x[(j, t)], expanded[t * 18 + j]);
                }
            }
        }
    }
}
