//! Squared error against sample size at the rule lambda.

use soslasso::bench::{scaling_study, BenchConfig};
use soslasso::theory::theory_config;

fn main() -> soslasso::Result<()> {
    let cfg = BenchConfig {
        k_active: 2,
        ..theory_config()
    };
    let study = scaling_study(&cfg, &[50, 100, 200, 400], 10, 1)?;
    for r in &study.rows {
        println!(
            "n {:4}  error {:.3e}  bound {:.3e}  sigma_m {:.3}  dominated {}/{}",
            r.n, r.mean_error, r.mean_bound, r.mean_sigma_m, r.dominated, r.trials
        );
    }
    println!("log-log slope {:.3}", study.slope);
    Ok(())
}
