//! Multitask classification with the logistic loss.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use soslasso::groups::{chain_groups, replicate_across_tasks};
use soslasso::losses::{LossKind, MultitaskProblem, Task};
use soslasso::penalty::PenaltyMode;
use soslasso::solver::{fit, lambda_max, SolverConfig, StepRule};

fn main() -> soslasso::Result<()> {
    let (p, n, tasks) = (30, 120, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let gs = chain_groups(p, 6, 4)?;
    let layout = replicate_across_tasks(&gs, tasks)?;
    // signal on the first group of every task
    let data = (0..tasks)
        .map(|_| {
            let design = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
            let y = design
                .rows()
                .into_iter()
                .map(|r| if r.iter().take(3).sum::<f64>() + 0.3 * rng.sample::<f64, _>(StandardNormal) > 0.0 { 1.0 } else { -1.0 })
                .collect();
            Task::new(design, y)
        })
        .collect();
    let problem = MultitaskProblem::new(data, LossKind::Logistic)?;
    let solver = SolverConfig {
        step_rule: StepRule::Backtracking,
        ..SolverConfig::with_mode(PenaltyMode::Soslasso)
    };
    let lmax = lambda_max(&problem, &layout, &solver.penalty)?;
    let result = fit(&problem, &layout, 0.2 * lmax, &solver, None)?;
    println!("converged {} after {} iterations", result.converged, result.iterations);
    println!("selected groups {:?}", result.selected_groups);
    println!("task 0 coefficients {:.3}", result.x_hat.column(0));
    Ok(())
}
