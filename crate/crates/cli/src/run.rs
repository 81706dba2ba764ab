use anyhow::{bail, Context, Result};
use delvepo_core::catalog::Catalog;
use delvepo_core::eval::{evaluate, DevFitness, TaskAdapter};
use delvepo_core::evolution::{Engine, RunSetup, RunState};

use crate::files::{
    curve_csv, read_json, write_atomic, write_json, BestPromptFile, SeedReport, Summary, TestResult, BEST_PROMPT,
    CHECKPOINT, CURVE, REPORT, SUMMARY,
};
use crate::setup::Setup;
use crate::RunArgs;

pub fn run(args: &RunArgs, resume: bool) -> Result<()> {
    let setup = Setup::load(&args.common, &[])?;
    let cfg = &setup.cfg;
    if cfg.task.description.trim().is_empty() {
        bail!("task.description is empty");
    }
    let seeds = if args.seed.is_empty() { cfg.run.seeds.clone() } else { args.seed.clone() };
    let adapter = cfg.task.adapter()?;
    let catalog = setup.catalog()?;
    std::fs::create_dir_all(&setup.out).with_context(|| format!("creating {}", setup.out.display()))?;
    write_atomic(&setup.out.join("config.toml"), cfg.to_toml()?.as_bytes())?;

    let mut reports = Vec::new();
    let mut unfinished = Vec::new();
    for &seed in &seeds {
        match run_seed(&setup, &adapter, &catalog, seed, resume, args.stop_after)? {
            Some(r) => reports.push(r),
            None => unfinished.push(seed),
        }
    }
    if !unfinished.is_empty() {
        println!("stopped before finishing seed(s) {unfinished:?}; continue with `delvepo resume`");
        return Ok(());
    }
    let summary = Summary::new(&reports);
    write_json(&setup.out.join(SUMMARY), &summary)?;
    match summary.test_std {
        Some(std) => println!("test {:?}: {:.4} ({std:.4}) over {} seeds", cfg.task.metric, summary.test_mean, seeds.len()),
        None => println!("test {:?}: {:.4}", cfg.task.metric, summary.test_mean),
    }
    Ok(())
}

/// One seed's search and held-out evaluation. `None` when stopped early.
fn run_seed(
    setup: &Setup,
    adapter: &TaskAdapter,
    catalog: &Catalog,
    seed: u64,
    resume: bool,
    stop_after: Option<usize>,
) -> Result<Option<SeedReport>> {
    let cfg = &setup.cfg;
    let dir = setup.out.join(format!("seed-{seed}"));
    let checkpoint = dir.join(CHECKPOINT);
    if resume && dir.join(REPORT).exists() {
        println!("seed {seed}: already finished");
        return read_json(&dir.join(REPORT)).map(Some);
    }
    if !resume && checkpoint.exists() {
        bail!(
            "{} already exists; use `delvepo resume` or another --out",
            checkpoint.display()
        );
    }
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let split = setup.split(seed)?;
    let gateway = setup.gateway(seed)?;
    let fitness = DevFitness {
        adapter,
        examples: split.dev_sample(cfg.eval.dev_subsample, seed),
        gateway: &gateway,
        temperature: cfg.evolution.temperature,
        workers: cfg.eval.workers,
    };
    let engine = if resume && checkpoint.exists() {
        let state = RunState::load(&checkpoint)?;
        if state.seed != seed {
            bail!("{} belongs to seed {}, not {seed}", checkpoint.display(), state.seed);
        }
        log::info!("seed {seed}: resuming at epoch {} iteration {}", state.epoch, state.iteration);
        Engine::resume(state, &gateway, catalog, &fitness)?
    } else {
        let run_setup = RunSetup {
            task: cfg.task.description.clone(),
            seed,
            config: cfg.evolution.clone(),
            registry: cfg.registry.clone(),
            template: setup.template()?,
            pools: setup.pools()?,
        };
        Engine::new(run_setup, &gateway, catalog, &fitness)?
    };
    let mut engine = engine.checkpoint_to(&checkpoint);
    if !engine.run(stop_after)? {
        let s = engine.state();
        println!("seed {seed}: stopped at epoch {} iteration {}", s.epoch, s.iteration);
        return Ok(None);
    }

    let run = engine.report(&cfg.llm.prices).context("run ended with an empty population")?;
    let test = split.test();
    let outcome = evaluate(
        &run.best.genome,
        &run.best.rendered,
        test,
        adapter,
        &gateway,
        cfg.evolution.temperature,
        cfg.eval.workers,
    )?;
    let report = SeedReport {
        test: TestResult { score: outcome.score, examples: test.len(), calls: outcome.calls },
        run,
    };
    write_json(&dir.join(BEST_PROMPT), &BestPromptFile::new(seed, &report.run.best, Some(report.test.score)))?;
    write_atomic(&dir.join(CURVE), curve_csv(&[&report.run]).as_bytes())?;
    write_json(&dir.join(REPORT), &report)?;
    println!(
        "seed {seed}: dev best {:.4} (initial {:.4}), test {:.4}",
        report.run.best.score, report.run.initial_best, report.test.score
    );
    Ok(Some(report))
}
