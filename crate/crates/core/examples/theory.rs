//! Empirical checks of the compatibility constant, restricted strong
//! convexity, the chi-square maximum bound and the error bound.

use soslasso::theory::{
    check_compatibility, chi2_max_mc, compatibility_bound, run_suite, theorem_trial, theory_config, Suite,
};

fn main() -> soslasso::Result<()> {
    let gs = soslasso::groups::chain_groups(62, 6, 4)?;
    let c = check_compatibility(&gs, 0.2, 4, 200, 1)?;
    println!(
        "compatibility: max ratio {:.3} <= {:.3} ({} violations)",
        c.max_ratio,
        compatibility_bound(6, c.realized_alpha, 4),
        c.violations
    );

    let chi = chi2_max_mc(500, 120, 1.5, 10000, 2)?;
    println!("chi-square max below threshold: frequency {:.4} >= bound {:.4}", chi.empirical, chi.analytic_bound);

    let t = theorem_trial(&theory_config(), 3)?;
    println!(
        "one trial: error {:.3e} <= bound {:.3e} (kappa {:.3}, sigma_m {:.3})",
        t.error, t.bound, t.kappa, t.sigma_m
    );

    let r = run_suite(Suite::Decompose, 50, 4)?;
    println!("decompose suite: pass {} over {} entries", r.pass, r.entries.len());
    Ok(())
}
