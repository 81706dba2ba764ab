use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use delvepo_core::llm::{RoleUsage, UsageLedger};

use crate::files::{curve_csv, mean_std, read_json, write_atomic, SeedReport, CURVE, REPORT};

pub fn run(dir: &Path) -> Result<()> {
    let runs = load_run(dir)?;
    if !runs.is_empty() {
        print!("{}", single(dir, &runs)?);
        return Ok(());
    }
    let mut arms = Vec::new();
    for sub in subdirs(dir)? {
        let reports = load_run(&sub)?;
        if !reports.is_empty() {
            arms.push((sub, reports));
        }
    }
    match arms.as_slice() {
        [a, b] => {
            print!("{}", single(&a.0, &a.1)?);
            print!("{}", single(&b.0, &b.1)?);
            print!("{}", side_by_side(a, b));
            Ok(())
        }
        [] => bail!("no finished runs under {}", dir.display()),
        _ => bail!("{} holds {} runs; a comparison needs exactly two", dir.display(), arms.len()),
    }
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

/// Reports of the finished seeds in a run directory, by seed.
fn load_run(dir: &Path) -> Result<Vec<SeedReport>> {
    let mut reports = Vec::new();
    for sub in subdirs(dir)? {
        let is_seed = sub.file_name().is_some_and(|n| n.to_string_lossy().starts_with("seed-"));
        if is_seed && sub.join(REPORT).exists() {
            reports.push(read_json::<SeedReport>(&sub.join(REPORT))?);
        }
    }
    reports.sort_by_key(|r| r.run.seed);
    Ok(reports)
}

fn fmt_mean_std(xs: &[f64]) -> String {
    match mean_std(xs) {
        (m, Some(s)) => format!("{m:.4} ({s:.4})"),
        (m, None) => format!("{m:.4}"),
    }
}

fn usage_row(out: &mut String, role: &str, u: &RoleUsage, cost: f64) {
    let _ = writeln!(
        out,
        "| {role} | {} | {} | {} | {} | {cost:.4} |",
        u.calls, u.attempts, u.prompt_tokens, u.completion_tokens
    );
}

/// Score table, per-role cost table and curve file for one run.
fn single(dir: &Path, runs: &[SeedReport]) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "## {}\n", dir.display());
    let _ = writeln!(out, "| seed | initial dev | best dev | test |\n|---|---|---|---|");
    for r in runs {
        let _ = writeln!(
            out,
            "| {} | {:.4} | {:.4} | {:.4} |",
            r.run.seed, r.run.initial_best, r.run.best.score, r.test.score
        );
    }
    let dev: Vec<f64> = runs.iter().map(|r| r.run.best.score).collect();
    let test: Vec<f64> = runs.iter().map(|r| r.test.score).collect();
    let _ = writeln!(out, "| mean (std) | | {} | {} |\n", fmt_mean_std(&dev), fmt_mean_std(&test));

    let mut total = UsageLedger::default();
    let (mut opt_cost, mut tgt_cost) = (0.0, 0.0);
    for r in runs {
        for (sum, u) in [(&mut total.optimizer, &r.run.usage.optimizer), (&mut total.target, &r.run.usage.target)] {
            sum.calls += u.calls;
            sum.attempts += u.attempts;
            sum.prompt_tokens += u.prompt_tokens;
            sum.completion_tokens += u.completion_tokens;
        }
        opt_cost += r.run.cost.optimizer;
        tgt_cost += r.run.cost.target;
    }
    let _ = writeln!(
        out,
        "| role | calls | attempts | prompt tokens | completion tokens | cost |\n|---|---|---|---|---|---|"
    );
    usage_row(&mut out, "optimizer", &total.optimizer, opt_cost);
    usage_row(&mut out, "target", &total.target, tgt_cost);
    let all = RoleUsage {
        calls: total.optimizer.calls + total.target.calls,
        attempts: total.optimizer.attempts + total.target.attempts,
        prompt_tokens: total.optimizer.prompt_tokens + total.target.prompt_tokens,
        completion_tokens: total.optimizer.completion_tokens + total.target.completion_tokens,
    };
    usage_row(&mut out, "total", &all, opt_cost + tgt_cost);

    let curve = dir.join(CURVE);
    let refs: Vec<_> = runs.iter().map(|r| &r.run).collect();
    write_atomic(&curve, curve_csv(&refs).as_bytes())?;
    let _ = writeln!(out, "\ncurve: {}\n", curve.display());
    Ok(out)
}

fn side_by_side(a: &(PathBuf, Vec<SeedReport>), b: &(PathBuf, Vec<SeedReport>)) -> String {
    let name = |p: &PathBuf| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let (na, nb) = (name(&a.0), name(&b.0));
    let mut out = String::new();
    let _ = writeln!(out, "## {na} vs {nb}\n");
    let _ = writeln!(
        out,
        "| seed | {na} dev | {nb} dev | {na} test | {nb} test |\n|---|---|---|---|---|"
    );
    let mut seeds: Vec<u64> = a.1.iter().chain(&b.1).map(|r| r.run.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let cell = |runs: &[SeedReport], seed: u64, dev: bool| {
        runs.iter()
            .find(|r| r.run.seed == seed)
            .map(|r| format!("{:.4}", if dev { r.run.best.score } else { r.test.score }))
            .unwrap_or_else(|| "-".into())
    };
    for s in seeds {
        let _ = writeln!(
            out,
            "| {s} | {} | {} | {} | {} |",
            cell(&a.1, s, true),
            cell(&b.1, s, true),
            cell(&a.1, s, false),
            cell(&b.1, s, false)
        );
    }
    let col = |runs: &[SeedReport], dev: bool| {
        let xs: Vec<f64> = runs.iter().map(|r| if dev { r.run.best.score } else { r.test.score }).collect();
        fmt_mean_std(&xs)
    };
    let _ = writeln!(
        out,
        "| mean (std) | {} | {} | {} | {} |",
        col(&a.1, true),
        col(&b.1, true),
        col(&a.1, false),
        col(&b.1, false)
    );
    let cost = |runs: &[SeedReport]| runs.iter().map(|r| r.run.cost.total).sum::<f64>();
    let tokens = |runs: &[SeedReport]| {
        runs.iter()
            .map(|r| r.run.usage.optimizer.total_tokens() + r.run.usage.target.total_tokens())
            .sum::<u64>()
    };
    let _ = writeln!(
        out,
        "| tokens / cost | {} / {:.4} | {} / {:.4} | | |",
        tokens(&a.1),
        cost(&a.1),
        tokens(&b.1),
        cost(&b.1)
    );
    out
}
