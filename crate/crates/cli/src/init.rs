use anyhow::{bail, Context, Result};
use delvepo_core::genome::ComponentPools;
use delvepo_core::pools::generate_values;

use crate::files::{read_json, write_json};
use crate::setup::Setup;
use crate::Common;

/// Generates a pool per component type. The pools file is rewritten after
/// every type, so an aborted run keeps what it had; rerunning fills in the
/// missing or short pools only.
pub fn run(common: &Common, values_per_type: Option<usize>, seed: Option<u64>) -> Result<()> {
    let extra: Vec<String> = values_per_type.map(|n| format!("pools.values_per_type={n}")).into_iter().collect();
    let setup = Setup::load(common, &extra)?;
    let cfg = &setup.cfg;
    if cfg.task.description.trim().is_empty() {
        bail!("task.description is empty; the value generator needs a task description");
    }
    let seed = seed.unwrap_or(cfg.run.seeds[0]);
    let gateway = setup.gateway(seed)?;
    let catalog = setup.catalog()?;
    let path = setup.pools_path();
    let want = cfg.pools.values_per_type;

    let mut pools: ComponentPools = if path.exists() { read_json(&path)? } else { ComponentPools::default() };
    for ctype in cfg.registry.types() {
        if pools.get(&ctype.name).len() >= want {
            log::info!("{}: pool already has {want} values", ctype.name);
            continue;
        }
        let values = generate_values(
            &gateway,
            &catalog,
            &cfg.registry,
            &cfg.task.description,
            ctype,
            want,
            cfg.evolution.parse_attempts,
            cfg.evolution.temperature,
        )
        .with_context(|| format!("generating values for {:?}; finished pools are kept in {}", ctype.name, path.display()))?;
        pools.values.insert(ctype.name.clone(), values);
        write_json(&path, &pools)?;
        println!("{}: {want} values", ctype.name);
    }
    write_json(&path, &pools)?;
    let usage = gateway.usage();
    println!(
        "pools written to {} ({} optimizer calls, {} tokens)",
        path.display(),
        usage.optimizer.calls,
        usage.optimizer.total_tokens()
    );
    Ok(())
}
