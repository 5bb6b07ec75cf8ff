//! Write a generated problem to disk in the CLI's formats and load it back.

use soslasso::bench::{gen_measurements, gen_truth, BenchConfig};
use soslasso::io::{load_manifest, write_groups, write_json, write_matrix, write_task, GroupSource, Manifest};
use soslasso::losses::LossKind;

fn main() -> soslasso::Result<()> {
    let dir = std::env::temp_dir().join("soslasso-files-example");
    soslasso::io::ensure_dir(&dir)?;
    let cfg = BenchConfig {
        p: 42,
        tasks: 2,
        n: 20,
        k_active: 2,
        ..BenchConfig::desk()
    };
    let truth = gen_truth(&cfg, 1)?;
    let problem = gen_measurements(&truth, &cfg, 2)?;
    let mut tasks = Vec::new();
    for (t, task) in problem.tasks().iter().enumerate() {
        let name = format!("task_{t}.csv");
        write_task(&dir.join(&name), task)?;
        tasks.push(name.into());
    }
    write_groups(&dir.join("groups.json"), &cfg.group_set()?)?;
    write_matrix(&dir.join("truth.csv"), truth.x.view())?;
    let manifest = Manifest {
        loss_kind: LossKind::Squared,
        tasks,
        groups: Some(GroupSource::File("groups.json".into())),
        truth: Some("truth.csv".into()),
        sigma: Some(cfg.sigma),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;

    let loaded = load_manifest(&dir.join("manifest.json"))?;
    println!(
        "loaded {} tasks, p = {}, {} groups, truth matches: {}",
        loaded.problem.task_count(),
        loaded.problem.p(),
        loaded.groups.map_or(0, |g| g.len()),
        loaded.truth.as_ref() == Some(&truth.x)
    );
    println!("files in {}", dir.display());
    Ok(())
}
