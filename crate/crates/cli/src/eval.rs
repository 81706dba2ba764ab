use std::path::Path;

use anyhow::{anyhow, Context, Result};
use delvepo_core::eval::evaluate;
use delvepo_core::genome::{parse, ComponentGenome};
use serde::Serialize;

use crate::files::BestPromptFile;
use crate::setup::Setup;
use crate::Common;

#[derive(Debug, Serialize)]
struct EvalReport {
    seed: u64,
    metric: delvepo_core::eval::Metric,
    score: f64,
    examples: usize,
    calls: usize,
    /// Times the dev split was read; always zero.
    dev_reads: usize,
}

/// Scores a prompt on the test split. The dev split is never read.
pub fn run(common: &Common, prompt: &Path, seed: Option<u64>) -> Result<()> {
    let setup = Setup::load(common, &[])?;
    let cfg = &setup.cfg;
    let (genome, rendered, file_seed) = load_prompt(prompt, &setup)?;
    let seed = seed.or(file_seed).unwrap_or(cfg.run.seeds[0]);
    let adapter = cfg.task.adapter()?;
    let split = setup.split(seed)?;
    let gateway = setup.gateway(seed)?;
    let outcome = evaluate(
        &genome,
        &rendered,
        split.test(),
        &adapter,
        &gateway,
        cfg.evolution.temperature,
        cfg.eval.workers,
    )?;
    let report = EvalReport {
        seed,
        metric: cfg.task.metric,
        score: outcome.score,
        examples: split.test().len(),
        calls: outcome.calls,
        dev_reads: split.dev_reads(),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

/// A best-prompt file, or plain text with tagged component values that is
/// rendered through the configured template.
fn load_prompt(path: &Path, setup: &Setup) -> Result<(ComponentGenome, String, Option<u64>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let malformed = |e: &dyn std::fmt::Display| anyhow!("malformed prompt file {}: {e}", path.display());
    let registry = &setup.cfg.registry;
    if path.extension().is_some_and(|e| e == "json") {
        let file: BestPromptFile = serde_json::from_str(&text).map_err(|e| malformed(&e))?;
        file.genome.validate(registry).map_err(|e| malformed(&e))?;
        return Ok((file.genome, file.prompt, Some(file.seed)));
    }
    let genome = parse(&text, registry).map_err(|e| malformed(&e))?;
    if genome.iter().all(|(_, v)| v.is_empty()) {
        return Err(malformed(&"no tagged component values"));
    }
    let rendered = setup.template()?.render(&genome)?;
    Ok((genome, rendered, None))
}
