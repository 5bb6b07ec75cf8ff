//! Evaluate the SOS penalty on disjoint and overlapping groups.

use ndarray::{array, Array1};
use soslasso::groups::{build_group_set, chain_groups};
use soslasso::penalty::{dual_norm, dual_norm_bound, eval_disjoint, eval_overlapping, PenaltyConfig, PenaltyMode};

fn main() -> soslasso::Result<()> {
    // two groups of five
    let gs = build_group_set(&[(0..5).collect(), (5..10).collect()], 10)?;
    let mut x = Array1::zeros(10);
    x[0] = 3.0;
    x[3] = 4.0;
    x[8] = 7.0;
    for mode in [PenaltyMode::GroupOnly, PenaltyMode::L1Only, PenaltyMode::Soslasso] {
        println!("{mode:?}: {}", eval_disjoint(x.view(), &gs, &PenaltyConfig::new(mode))?);
    }

    // overlapping chain: the evaluator searches over splits of shared coordinates
    let chain = chain_groups(6, 4, 2)?;
    let x = array![1.0, -2.0, 0.5, 0.5, 0.0, 3.0];
    let d = eval_overlapping(x.view(), &chain, &PenaltyConfig::default(), 1e-9)?;
    println!("h(x) = {:.6}, split residual {:.1e}", d.value, d.residual);
    println!("pieces {:?}", d.w_dup.to_vec());

    let u = array![0.3, -1.2, 0.7, 0.1, 0.0, 0.9];
    println!(
        "h*(u) = {:.6} <= bound {:.6}",
        dual_norm(u.view(), &chain, &PenaltyConfig::default())?,
        dual_norm_bound(u.view(), &chain)
    );
    Ok(())
}
