//! Multitask losses over duplicated coordinates.
//!
//! Coefficients are stacked task-major, `x = [x_1; ...; x_T]`, and the
//! duplicated vector is laid out by the replicated groups of a
//! [`TaskLayout`]. Gradients are taken with respect to the duplicated
//! coordinates (gradient in `x` gathered through the duplication map).

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::linalg::general_mat_vec_mul;
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{DuplicationMap, TaskLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    Logistic,
}

/// One task's data: `n_t × p` design and its response.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub design: Array2<f64>,
    pub response: Array1<f64>,
}

impl Task {
    pub fn new(design: Array2<f64>, response: Array1<f64>) -> Self {
        Self { design, response }
    }

    pub fn samples(&self) -> usize {
        self.design.nrows()
    }

    /// Rows `rows` of this task, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Task {
        Task {
            design: self.design.select(ndarray::Axis(0), rows),
            response: self.response.select(ndarray::Axis(0), rows),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultitaskProblem {
    tasks: Vec<Task>,
    p: usize,
    loss: LossKind,
    noise_sigma: Option<f64>,
}

impl MultitaskProblem {
    pub fn new(tasks: Vec<Task>, loss: LossKind) -> Result<Self> {
        let first = tasks
            .first()
            .ok_or_else(|| Error::invalid("a problem needs at least one task"))?;
        let p = first.design.ncols();
        if p == 0 {
            return Err(Error::invalid("designs must have at least one column"));
        }
        for (t, task) in tasks.iter().enumerate() {
            if task.design.ncols() != p {
                return Err(Error::DimensionMismatch {
                    context: "task design columns",
                    expected: p,
                    got: task.design.ncols(),
                });
            }
            if task.samples() == 0 {
                return Err(Error::invalid(format!("task {t} has no samples")));
            }
            if task.response.len() != task.samples() {
                return Err(Error::DimensionMismatch {
                    context: "task response length",
                    expected: task.samples(),
                    got: task.response.len(),
                });
            }
            if loss == LossKind::Logistic {
                if let Some((row, &value)) = task
                    .response
                    .iter()
                    .enumerate()
                    .find(|(_, v)| **v != 1.0 && **v != -1.0)
                {
                    return Err(Error::BadLabels { task: t, row, value });
                }
            }
        }
        Ok(Self {
            tasks,
            p,
            loss,
            noise_sigma: None,
        })
    }

    pub fn with_noise_sigma(mut self, sigma: f64) -> Self {
        self.noise_sigma = Some(sigma);
        self
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    /// Per-task coefficient dimension.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn noise_sigma(&self) -> Option<f64> {
        self.noise_sigma
    }

    /// The shared sample size, or `UnequalSampleSizes`.
    pub fn common_samples(&self) -> Result<usize> {
        let n = self.tasks[0].samples();
        for (t, task) in self.tasks.iter().enumerate() {
            if task.samples() != n {
                return Err(Error::UnequalSampleSizes {
                    task: t,
                    expected: n,
                    got: task.samples(),
                });
            }
        }
        Ok(n)
    }

    pub(crate) fn check_layout(&self, layout: &TaskLayout) -> Result<()> {
        if layout.p() != self.p {
            return Err(Error::DimensionMismatch {
                context: "layout per-task dimension",
                expected: self.p,
                got: layout.p(),
            });
        }
        if layout.tasks() != self.task_count() {
            return Err(Error::DimensionMismatch {
                context: "layout task count",
                expected: self.task_count(),
                got: layout.tasks(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_dm(&self, dm: &DuplicationMap) -> Result<()> {
        let expected = self.p * self.task_count();
        if dm.p() != expected {
            return Err(Error::DimensionMismatch {
                context: "duplication map over stacked coefficients",
                expected,
                got: dm.p(),
            });
        }
        Ok(())
    }

    /// Same tasks restricted to the given rows per task.
    pub fn subset(&self, rows: &[Vec<usize>]) -> Result<Self> {
        let tasks = self
            .tasks
            .iter()
            .zip(rows)
            .map(|(task, r)| task.subset(r))
            .collect();
        let mut out = Self::new(tasks, self.loss)?;
        out.noise_sigma = self.noise_sigma;
        Ok(out)
    }
}

/// Loss value and gradient over `T · total_dup` duplicated coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad: Array1<f64>,
}

fn log1p_exp(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Evaluation engine shared by the public loss functions and the solver.
/// All buffers live in the stacked original space.
pub(crate) struct SmoothLoss<'a> {
    problem: &'a MultitaskProblem,
    pub(crate) dm: &'a DuplicationMap,
}

impl<'a> SmoothLoss<'a> {
    pub(crate) fn new(problem: &'a MultitaskProblem, dm: &'a DuplicationMap) -> Result<Self> {
        problem.check_dm(dm)?;
        Ok(Self { problem, dm })
    }

    /// Buffers for per-task linear predictors.
    pub(crate) fn predictor_buffers(&self) -> Vec<Array1<f64>> {
        self.problem
            .tasks
            .iter()
            .map(|t| Array1::zeros(t.samples()))
            .collect()
    }

    /// `z_t = Phi_t x_t` from the stacked `x`.
    pub(crate) fn forward(&self, x: &Array1<f64>, z: &mut [Array1<f64>]) {
        let p = self.problem.p;
        for (t, (task, zt)) in self.problem.tasks.iter().zip(z.iter_mut()).enumerate() {
            let xt = x.slice(ndarray::s![t * p..(t + 1) * p]);
            general_mat_vec_mul(1.0, &task.design, &xt, 0.0, zt);
        }
    }

    /// Loss value from linear predictors.
    pub(crate) fn value_at(&self, z: &[Array1<f64>]) -> f64 {
        let mut total = 0.0;
        for (task, zt) in self.problem.tasks.iter().zip(z) {
            let n = task.samples() as f64;
            let term: f64 = match self.problem.loss {
                LossKind::Squared => {
                    zt.iter()
                        .zip(task.response.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        / (2.0 * n)
                }
                LossKind::Logistic => {
                    zt.iter()
                        .zip(task.response.iter())
                        .map(|(a, y)| log1p_exp(-y * a))
                        .sum::<f64>()
                        / n
                }
            };
            total += term;
        }
        total
    }

    /// Gradient with respect to stacked `x`, from linear predictors.
    /// `resid` is scratch of the same shape as `z`.
    pub(crate) fn grad_x_at(&self, z: &[Array1<f64>], resid: &mut [Array1<f64>], grad_x: &mut Array1<f64>) {
        let p = self.problem.p;
        for (t, ((task, zt), rt)) in self
            .problem
            .tasks
            .iter()
            .zip(z)
            .zip(resid.iter_mut())
            .enumerate()
        {
            let n = task.samples() as f64;
            match self.problem.loss {
                LossKind::Squared => {
                    for ((r, a), b) in rt.iter_mut().zip(zt).zip(task.response.iter()) {
                        *r = (a - b) / n;
                    }
                }
                LossKind::Logistic => {
                    for ((r, a), y) in rt.iter_mut().zip(zt).zip(task.response.iter()) {
                        *r = -y * sigmoid(-y * a) / n;
                    }
                }
            }
            let mut gt = grad_x.slice_mut(ndarray::s![t * p..(t + 1) * p]);
            general_mat_vec_mul(1.0, &task.design.t(), &*rt, 0.0, &mut gt);
        }
    }

    pub(crate) fn eval(&self, w_dup: &[f64]) -> LossEval {
        let mut x = Array1::zeros(self.dm.p());
        self.dm.expand_into(w_dup, x.as_slice_mut().unwrap());
        let mut z = self.predictor_buffers();
        let mut r = self.predictor_buffers();
        self.forward(&x, &mut z);
        let value = self.value_at(&z);
        let mut gx = Array1::zeros(self.dm.p());
        self.grad_x_at(&z, &mut r, &mut gx);
        let mut grad = Array1::zeros(self.dm.total_dup());
        self.dm
            .gather_into(gx.as_slice().unwrap(), grad.as_slice_mut().unwrap());
        LossEval { value, grad }
    }
}

fn eval_kind(
    problem: &MultitaskProblem,
    dm: &DuplicationMap,
    w_dup_all: ArrayView1<f64>,
    kind: LossKind,
) -> Result<LossEval> {
    if problem.loss != kind {
        return Err(Error::invalid(format!(
            "problem loss is {:?}, requested {:?}",
            problem.loss, kind
        )));
    }
    let engine = SmoothLoss::new(problem, dm)?;
    if w_dup_all.len() != dm.total_dup() {
        return Err(Error::DimensionMismatch {
            context: "duplicated coefficients",
            expected: dm.total_dup(),
            got: w_dup_all.len(),
        });
    }
    Ok(engine.eval(&w_dup_all.to_vec()))
}

/// `sum_t 1/(2 n_t) ||y_t - Phi_t x_t||^2` with `x = expand(w)`.
pub fn squared_loss(
    problem: &MultitaskProblem,
    dm: &DuplicationMap,
    w_dup_all: ArrayView1<f64>,
) -> Result<LossEval> {
    eval_kind(problem, dm, w_dup_all, LossKind::Squared)
}

/// `sum_t 1/n_t sum_i log(1 + exp(-y_ti <phi_ti, x_t>))`.
pub fn logistic_loss(
    problem: &MultitaskProblem,
    dm: &DuplicationMap,
    w_dup_all: ArrayView1<f64>,
) -> Result<LossEval> {
    eval_kind(problem, dm, w_dup_all, LossKind::Logistic)
}

/// Dispatches on the problem's loss kind.
pub fn loss_eval(
    problem: &MultitaskProblem,
    dm: &DuplicationMap,
    w_dup_all: ArrayView1<f64>,
) -> Result<LossEval> {
    eval_kind(problem, dm, w_dup_all, problem.loss)
}

const POWER_TOL: f64 = 1e-4;
const POWER_MAX_ITERS: usize = 5_000;
const INFLATION: f64 = 1.01;

/// Upper estimate of the gradient Lipschitz constant in duplicated
/// coordinates: `max_t lambda_max(lifted_t^T lifted_t) / n_t`, by power
/// iteration, inflated by 1%. Logistic loss carries an extra factor 1/4.
/// Falls back to the Frobenius bound when power iteration stalls.
pub fn lipschitz_estimate(problem: &MultitaskProblem, dm: &DuplicationMap) -> Result<f64> {
    problem.check_dm(dm)?;
    let p = problem.p;
    let mut best: f64 = 0.0;
    for (t, task) in problem.tasks.iter().enumerate() {
        let lo = t * p;
        let local: Vec<(usize, usize)> = dm
            .origin()
            .iter()
            .enumerate()
            .filter(|(_, &j)| j >= lo && j < lo + p)
            .map(|(d, &j)| (d, j - lo))
            .collect();
        let n = task.samples() as f64;
        let eig = match power_iteration(&task.design, &local) {
            Some(v) => v * INFLATION,
            None => frobenius_sq(&task.design, &local),
        };
        best = best.max(eig / n);
    }
    Ok(match problem.loss {
        LossKind::Squared => best,
        LossKind::Logistic => 0.25 * best,
    })
}

fn frobenius_sq(design: &Array2<f64>, local: &[(usize, usize)]) -> f64 {
    local
        .iter()
        .map(|&(_, j)| design.column(j).iter().map(|a| a * a).sum::<f64>())
        .sum()
}

/// Largest eigenvalue of `E^T Phi^T Phi E` where `E` copies column `j` to
/// each duplicated slot listed in `local`.
fn power_iteration(design: &Array2<f64>, local: &[(usize, usize)]) -> Option<f64> {
    let p = design.ncols();
    if local.is_empty() {
        return Some(0.0);
    }
    let mut v: Vec<f64> = (0..local.len())
        .map(|k| 1.0 + 0.25 * ((k as f64) * 0.7).sin())
        .collect();
    let mut x = Array1::zeros(p);
    let mut z = Array1::zeros(design.nrows());
    let mut g = Array1::zeros(p);
    let mut previous = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Some(0.0);
        }
        v.iter_mut().for_each(|a| *a /= norm);
        x.fill(0.0);
        for (k, &(_, j)) in local.iter().enumerate() {
            x[j] += v[k];
        }
        general_mat_vec_mul(1.0, design, &x, 0.0, &mut z);
        // Rayleigh quotient v^T E^T Phi^T Phi E v = ||Phi E v||^2
        let rayleigh = z.dot(&z);
        general_mat_vec_mul(1.0, &design.t(), &z, 0.0, &mut g);
        for (k, &(_, j)) in local.iter().enumerate() {
            v[k] = g[j];
        }
        if rayleigh == 0.0 {
            return Some(0.0);
        }
        if (rayleigh - previous).abs() <= POWER_TOL * rayleigh {
            return Some(rayleigh);
        }
        previous = rayleigh;
    }
    None
}

pub(crate) fn sym_eigen_extremes(gram: DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(gram);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Gram matrix `Phi_S^T Phi_S` of the listed columns, unscaled.
pub(crate) fn restricted_gram(design: &Array2<f64>, cols: &[usize]) -> DMatrix<f64> {
    let k = cols.len();
    let mut gram = DMatrix::zeros(k, k);
    for a in 0..k {
        let ca = design.column(cols[a]);
        for b in a..k {
            let v = ca.dot(&design.column(cols[b]));
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    gram
}

/// `sigma_m = max_G lambda_max(Phi_G^T Phi_G)` over the replicated groups of
/// the block-diagonal design. Blocks decouple, so this is the maximum over
/// groups and tasks of the per-task restricted Gram spectrum.
pub fn max_group_singular(problem: &MultitaskProblem, layout: &TaskLayout) -> Result<f64> {
    if problem.loss != LossKind::Squared {
        return Err(Error::invalid("max_group_singular requires squared loss"));
    }
    problem.check_layout(layout)?;
    let mut best: f64 = 0.0;
    for members in layout.base().groups() {
        for task in &problem.tasks {
            let (_, max) = sym_eigen_extremes(restricted_gram(&task.design, members));
            best = best.max(max);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::{chain_groups, duplication_map, replicate_across_tasks, GroupSet};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_problem(rng: &mut ChaCha8Rng, p: usize, n: usize, tasks: usize, loss: LossKind) -> MultitaskProblem {
        let tasks = (0..tasks)
            .map(|_| {
                let design = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
                let response = match loss {
                    LossKind::Squared => (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
                    LossKind::Logistic => (0..n)
                        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                        .collect(),
                };
                Task::new(design, response)
            })
            .collect();
        MultitaskProblem::new(tasks, loss).unwrap()
    }

    fn layout_for(p: usize, tasks: usize) -> TaskLayout {
        let gs = GroupSet::new(p, vec![(0..p / 2 + 1).collect(), (p / 3..p).collect()]).unwrap();
        replicate_across_tasks(&gs, tasks).unwrap()
    }

    #[test]
    fn construction_errors() {
        let a = Task::new(Array2::zeros((2, 3)), Array1::zeros(2));
        let b = Task::new(Array2::zeros((2, 4)), Array1::zeros(2));
        assert!(MultitaskProblem::new(vec![a.clone(), b], LossKind::Squared).is_err());
        assert!(matches!(
            MultitaskProblem::new(vec![Task::new(Array2::zeros((2, 3)), array![1.0, 0.5])], LossKind::Logistic),
            Err(Error::BadLabels { row: 1, .. })
        ));
        let c = Task::new(Array2::zeros((3, 3)), Array1::zeros(3));
        let prob = MultitaskProblem::new(vec![a, c], LossKind::Squared).unwrap();
        assert!(matches!(prob.common_samples(), Err(Error::UnequalSampleSizes { task: 1, .. })));
    }

    #[test]
    fn squared_zero_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layout = layout_for(6, 2);
        let dm = duplication_map(layout.replicated());
        let mut prob = random_problem(&mut rng, 6, 8, 2, LossKind::Squared);
        for task in &mut prob.tasks {
            task.response.fill(0.0);
        }
        let eval = squared_loss(&prob, &dm, Array1::zeros(dm.total_dup()).view()).unwrap();
        assert_eq!(eval.value, 0.0);
        assert!(eval.grad.iter().all(|&g| g == 0.0));

        // response generated from a known duplicated vector
        let w: Array1<f64> = (0..dm.total_dup()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = dm.expand(w.view()).unwrap();
        for (t, task) in prob.tasks.iter_mut().enumerate() {
            task.response = task.design.dot(&x.slice(ndarray::s![t * 6..(t + 1) * 6]));
        }
        let eval = squared_loss(&prob, &dm, w.view()).unwrap();
        assert!(eval.value < 1e-25);
    }

    fn check_gradient(prob: &MultitaskProblem, dm: &DuplicationMap, rng: &mut ChaCha8Rng) -> f64 {
        let w: Array1<f64> = (0..dm.total_dup()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let eval = loss_eval(prob, dm, w.view()).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for d in 0..w.len() {
            let mut up = w.clone();
            up[d] += h;
            let mut down = w.clone();
            down[d] -= h;
            let fd = (loss_eval(prob, dm, up.view()).unwrap().value
                - loss_eval(prob, dm, down.view()).unwrap().value)
                / (2.0 * h);
            worst = worst.max((fd - eval.grad[d]).abs());
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for loss in [LossKind::Squared, LossKind::Logistic] {
            for _ in 0..5 {
                let p = rng.random_range(3..12);
                let tasks = rng.random_range(1..4);
                let n = rng.random_range(2..20);
                let prob = random_problem(&mut rng, p, n, tasks, loss);
                let dm = duplication_map(layout_for(p, tasks).replicated());
                assert!(check_gradient(&prob, &dm, &mut rng) <= 1e-6);
            }
        }
    }

    #[test]
    fn gradient_at_truth_is_noise_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = 5;
        let n = 12;
        let gs = GroupSet::new(p, vec![(0..p).collect()]).unwrap();
        let layout = replicate_across_tasks(&gs, 1).unwrap();
        let dm = duplication_map(layout.replicated());
        let design = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
        let truth: Array1<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let noise: Array1<f64> = (0..n).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        let response = design.dot(&truth) + &noise;
        let prob = MultitaskProblem::new(vec![Task::new(design.clone(), response)], LossKind::Squared).unwrap();
        let eval = squared_loss(&prob, &dm, truth.view()).unwrap();
        let expected = design.t().dot(&noise) / n as f64;
        for j in 0..p {
            // d L / d x = (1/n) Phi^T (Phi x - y) = -(1/n) Phi^T eta
            assert!((eval.grad[j] + expected[j]).abs() < 1e-13);
        }
    }

    #[test]
    fn logistic_at_zero_and_separable_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let prob = random_problem(&mut rng, 4, 10, 3, LossKind::Logistic);
        let dm = duplication_map(layout_for(4, 3).replicated());
        let eval = logistic_loss(&prob, &dm, Array1::zeros(dm.total_dup()).view()).unwrap();
        assert!((eval.value - 3.0 * 2f64.ln()).abs() < 1e-12);

        // labels are the sign of the first feature: separable along e_0
        let design = Array2::from_shape_fn((8, 2), |(i, j)| if j == 0 { i as f64 - 3.5 } else { 1.0 });
        let labels = design.column(0).mapv(f64::signum);
        let prob = MultitaskProblem::new(vec![Task::new(design, labels)], LossKind::Logistic).unwrap();
        let dm = duplication_map(&GroupSet::singletons(2).unwrap());
        let mut last = f64::INFINITY;
        for s in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
            let v = logistic_loss(&prob, &dm, array![s, 0.0].view()).unwrap().value;
            assert!(v < last);
            last = v;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn lipschitz_examples() {
        // orthonormal columns: Q^T Q = I
        let n = 4;
        let q = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]];
        let prob = MultitaskProblem::new(vec![Task::new(q, Array1::zeros(n))], LossKind::Squared).unwrap();
        let dm = duplication_map(&GroupSet::singletons(2).unwrap());
        let l = lipschitz_estimate(&prob, &dm).unwrap();
        assert!((l - 1.01 / n as f64).abs() < 1e-4 / n as f64);

        let prob = MultitaskProblem::new(vec![Task::new(Array2::zeros((3, 2)), Array1::zeros(3))], LossKind::Squared)
            .unwrap();
        assert_eq!(lipschitz_estimate(&prob, &dm).unwrap(), 0.0);
    }

    #[test]
    fn lipschitz_within_one_percent_of_dense_eigensolver() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let prob = random_problem(&mut rng, 10, 20, 1, LossKind::Squared);
            let gs = chain_groups(10, 4, 2).unwrap();
            let dm = duplication_map(&gs);
            let lifted = dm.lift_design(prob.tasks()[0].design.view()).unwrap();
            let gram = lifted.t().dot(&lifted);
            let dense = DMatrix::from_fn(gram.nrows(), gram.ncols(), |i, j| gram[[i, j]]);
            let exact = SymmetricEigen::new(dense)
                .eigenvalues
                .iter()
                .cloned()
                .fold(0.0, f64::max)
                / 20.0;
            let est = lipschitz_estimate(&prob, &dm).unwrap();
            assert!(est >= exact && est <= exact * 1.01 + 1e-12, "{est} vs {exact}");
        }
    }

    #[test]
    fn descent_lemma_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for loss in [LossKind::Squared, LossKind::Logistic] {
            let prob = random_problem(&mut rng, 8, 15, 2, loss);
            let dm = duplication_map(layout_for(8, 2).replicated());
            let l = lipschitz_estimate(&prob, &dm).unwrap();
            for _ in 0..100 {
                let a: Array1<f64> = (0..dm.total_dup()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let b: Array1<f64> = (0..dm.total_dup()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let ea = loss_eval(&prob, &dm, a.view()).unwrap();
                let fb = loss_eval(&prob, &dm, b.view()).unwrap().value;
                let diff = &b - &a;
                let upper = ea.value + ea.grad.dot(&diff) + 0.5 * l * diff.dot(&diff);
                assert!(fb <= upper + 1e-10);
            }
        }
    }

    #[test]
    fn group_singular_examples() {
        let prob = MultitaskProblem::new(
            vec![Task::new(Array2::eye(4), Array1::zeros(4)), Task::new(Array2::eye(4), Array1::zeros(4))],
            LossKind::Squared,
        )
        .unwrap();
        let layout = replicate_across_tasks(&chain_groups(4, 2, 1).unwrap(), 2).unwrap();
        assert!((max_group_singular(&prob, &layout).unwrap() - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let prob = random_problem(&mut rng, 5, 9, 1, LossKind::Squared);
        let all = replicate_across_tasks(&GroupSet::new(5, vec![(0..5).collect()]).unwrap(), 1).unwrap();
        let d = &prob.tasks()[0].design;
        let g = d.t().dot(d);
        let dense = DMatrix::from_fn(5, 5, |i, j| g[[i, j]]);
        let exact = SymmetricEigen::new(dense).eigenvalues.iter().cloned().fold(0.0, f64::max);
        assert!((max_group_singular(&prob, &all).unwrap() - exact).abs() <= 1e-9 * exact);
    }
}
