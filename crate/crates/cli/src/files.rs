//! Files written into run directories.

use std::path::Path;

use anyhow::{Context, Result};
use delvepo_core::evolution::{BestPrompt, RunReport};
use delvepo_core::genome::ComponentGenome;
use delvepo_core::Score;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const CHECKPOINT: &str = "checkpoint.json";
pub const REPORT: &str = "report.json";
pub const BEST_PROMPT: &str = "best_prompt.json";
pub const CURVE: &str = "curve.csv";
pub const SUMMARY: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub score: Score,
    pub examples: usize,
    pub calls: usize,
}

/// Per-seed report: the search report plus the held-out score of its best
/// prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub run: RunReport,
    pub test: TestResult,
}

/// The best prompt in both forms: rendered text and the component genome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPromptFile {
    pub seed: u64,
    pub dev_score: Score,
    pub test_score: Option<Score>,
    pub prompt: String,
    pub genome: ComponentGenome,
}

impl BestPromptFile {
    pub fn new(seed: u64, best: &BestPrompt, test_score: Option<Score>) -> Self {
        Self {
            seed,
            dev_score: best.score,
            test_score,
            prompt: best.rendered.clone(),
            genome: best.genome.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seeds: Vec<u64>,
    pub dev_scores: Vec<Score>,
    pub test_scores: Vec<Score>,
    pub test_mean: Score,
    /// Sample standard deviation; absent for a single seed.
    pub test_std: Option<Score>,
}

impl Summary {
    pub fn new(reports: &[SeedReport]) -> Self {
        let test_scores: Vec<Score> = reports.iter().map(|r| r.test.score).collect();
        let (mean, std) = mean_std(&test_scores);
        Self {
            seeds: reports.iter().map(|r| r.run.seed).collect(),
            dev_scores: reports.iter().map(|r| r.run.best.score).collect(),
            test_scores,
            test_mean: mean,
            test_std: std,
        }
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

/// Writes through a temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Per-epoch curve: best and mean population score, cumulative tokens.
pub fn curve_csv(reports: &[&RunReport]) -> String {
    let mut out = String::from("seed,epoch,best_score,mean_score,optimizer_tokens,target_tokens\n");
    for r in reports {
        for e in &r.epochs {
            let mean = e.scores.iter().sum::<f64>() / e.scores.len().max(1) as f64;
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.seed,
                e.epoch,
                e.best_score,
                mean,
                e.usage.optimizer.total_tokens(),
                e.usage.target.total_tokens()
            ));
        }
    }
    out
}
