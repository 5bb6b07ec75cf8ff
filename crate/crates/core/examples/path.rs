//! Regularization path with warm starts, then lambda selection by the
//! oracle (known truth) and by cross-validation.

use soslasso::bench::{gen_measurements, gen_truth, BenchConfig};
use soslasso::penalty::PenaltyMode;
use soslasso::solver::{clairvoyant_select, cross_validate, lambda_grid, lambda_max, reg_path};

fn main() -> soslasso::Result<()> {
    let cfg = BenchConfig::desk();
    let truth = gen_truth(&cfg, 3)?;
    let problem = gen_measurements(&truth, &cfg, 4)?;
    let layout = cfg.layout()?;
    let solver = cfg.solver(PenaltyMode::Soslasso);
    let grid = lambda_grid(lambda_max(&problem, &layout, &solver.penalty)?, 12, 1e-2);

    for f in reg_path(&problem, &layout, &grid, &solver)? {
        println!("{:.3e}  obj {:.5e}  nnz {:4}  iters {}", f.lambda, f.objective(), f.nnz(), f.iterations);
    }
    let best = clairvoyant_select(&problem, &layout, truth.x.view(), &grid, &solver)?;
    println!("oracle choice {:.3e}", best.best_lambda);
    let cv = cross_validate(&problem, &layout, &grid, 5, &solver, 9)?;
    println!("5-fold choice {:.3e}", cv.best_lambda);
    Ok(())
}
