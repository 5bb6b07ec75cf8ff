//! Fit SOSlasso at one lambda on a synthetic desk-scale problem.

use soslasso::bench::{gen_measurements, gen_truth, mse, BenchConfig};
use soslasso::penalty::PenaltyMode;
use soslasso::solver::{fit, lambda_max};

fn main() -> soslasso::Result<()> {
    let cfg = BenchConfig::desk();
    let truth = gen_truth(&cfg, 1)?;
    let problem = gen_measurements(&truth, &cfg, 2)?;
    let layout = cfg.layout()?;
    let solver = cfg.solver(PenaltyMode::Soslasso);

    let lmax = lambda_max(&problem, &layout, &solver.penalty)?;
    let result = fit(&problem, &layout, 0.05 * lmax, &solver, None)?;
    println!(
        "lambda {:.3e} (max {:.3e}): {} iterations, converged {}, fixed-point residual {:.1e}",
        result.lambda, lmax, result.iterations, result.converged, result.fixed_point_residual
    );
    println!(
        "{} nonzeros in {} groups, truth has {}; mse {:.3e}",
        result.nnz(),
        result.selected_groups.len(),
        truth.x.iter().filter(|v| **v != 0.0).count(),
        mse(result.x_hat.view(), truth.x.view())?
    );
    Ok(())
}
