//! A small noise sweep comparing lasso, latent group lasso and SOSlasso.

use soslasso::bench::{run_sweep, BenchConfig, Method, Sweep};

fn main() -> soslasso::Result<()> {
    let cfg = BenchConfig {
        trials: 3,
        ..BenchConfig::desk()
    };
    let report = run_sweep(&cfg, &Sweep::Noise(vec![0.05, 0.2]), &Method::ALL)?;
    for c in &report.cells {
        println!(
            "sigma {:<5} {:<14} mse {:.3e} +- {:.1e}",
            c.sweep_value,
            c.method.name(),
            c.mean_mse,
            c.stderr
        );
    }
    println!("config hash {}, {:.1}s", report.config_hash, report.wall_time_secs);
    Ok(())
}
