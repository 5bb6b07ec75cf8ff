//! Chain groups, task replication and the duplicated (latent) design.

use ndarray::{array, Array2};
use soslasso::groups::{chain_groups, duplication_map, replicate_across_tasks};

fn main() -> soslasso::Result<()> {
    let gs = chain_groups(14, 6, 4)?;
    println!("{} groups: {:?}", gs.len(), gs.groups());
    println!("coverage {:?}", gs.coverage());

    let layout = replicate_across_tasks(&gs, 2)?;
    println!("replicated group 0 over two tasks: {:?}", layout.replicated().group(0));

    let small = chain_groups(4, 2, 1)?;
    let dm = duplication_map(&small);
    println!("duplicated length {} for p = {}", dm.total_dup(), dm.p());
    let design = Array2::from_shape_fn((2, 4), |(i, j)| (i * 4 + j) as f64);
    let lifted = dm.lift_design(design.view())?;
    println!("lifted design:\n{lifted}");
    let w = array![1.0, 0.5, 0.5, 2.0, -1.0, 1.0];
    println!("expand {:?} -> {:?}", w.to_vec(), dm.expand(w.view())?.to_vec());
    Ok(())
}
