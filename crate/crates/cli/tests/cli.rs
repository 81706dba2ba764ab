use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_delvepo");

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    /// A 130-example two-label dataset and a small, fast configuration.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut data = String::new();
        for i in 0..130 {
            let label = if i % 3 == 0 { "objective" } else { "subjective" };
            data.push_str(&format!("{{\"input\": \"sentence number {i}\", \"answer\": \"{label}\"}}\n"));
        }
        std::fs::write(dir.path().join("data.jsonl"), data).unwrap();
        let cfg = format!(
            r#"
[task]
description = "Classify each sentence as subjective or objective."
labels = ["objective", "subjective"]

[data]
path = "{}"
test_size = 100

[evolution]
population_size = 4
epochs = 2
iterations_per_epoch = 3

[eval]
dev_subsample = 10
"#,
            dir.path().join("data.jsonl").display()
        );
        std::fs::write(dir.path().join("cfg.toml"), cfg).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN)
            .args(args)
            .current_dir(self.dir.path())
            .env_remove("DELVEPO_API_KEY")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed:\n{}\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    /// `init` then `run` into `out`, with extra arguments for `run`.
    fn full_run(&self, out: &str, extra: &[&str]) -> String {
        self.ok(&["init", "-c", "cfg.toml", "--mock", "--out", out]);
        let mut args = vec!["run", "-c", "cfg.toml", "--mock", "--out", out];
        args.extend_from_slice(extra);
        self.ok(&args)
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn pool_sizes(pools: &Value) -> Vec<usize> {
    pools.as_object().unwrap().values().map(|v| v.as_array().unwrap().len()).collect()
}

#[test]
fn init_writes_full_deterministic_pools() {
    let ws = Workspace::new();
    ws.ok(&["init", "-c", "cfg.toml", "--mock", "--out", "a"]);
    ws.ok(&["init", "-c", "cfg.toml", "--mock", "--out", "b"]);
    let a = json(&ws.path("a/pools.json"));
    assert_eq!(pool_sizes(&a), vec![10; 5]);
    assert_eq!(a, json(&ws.path("b/pools.json")));

    ws.ok(&["init", "-c", "cfg.toml", "--mock", "--out", "c", "--values-per-type", "20"]);
    assert_eq!(pool_sizes(&json(&ws.path("c/pools.json"))), vec![20; 5]);
}

#[test]
fn init_abort_keeps_finished_pools() {
    let ws = Workspace::new();
    let role_values: Vec<String> = (0..10).map(|i| format!("<role>role {i}</role>")).collect();
    let script = format!(
        "unmatched = \"error\"\n[[rules]]\npattern = \"Component type: role\"\nresponse = \"\"\"{}\"\"\"\n",
        role_values.join("\n")
    );
    std::fs::write(ws.path("script.toml"), script).unwrap();
    let out = ws.run(&["init", "-c", "cfg.toml", "--mock", "--out", "o", "--set", "llm.mock_script=script.toml"]);
    assert!(!out.status.success());
    let pools = json(&ws.path("o/pools.json"));
    let obj = pools.as_object().unwrap();
    assert_eq!(obj.len(), 1);
    assert_eq!(obj["role"].as_array().unwrap().len(), 10);
}

#[test]
fn run_reports_mean_and_std_over_seeds() {
    let ws = Workspace::new();
    ws.full_run("o", &["--seed", "5,10,15"]);
    let summary = json(&ws.path("o/summary.json"));
    assert_eq!(summary["seeds"], serde_json::json!([5, 10, 15]));
    assert!(summary["test_std"].is_number());
    for seed in [5, 10, 15] {
        let dir = ws.path(&format!("o/seed-{seed}"));
        for f in ["checkpoint.json", "report.json", "best_prompt.json", "curve.csv"] {
            assert!(dir.join(f).exists(), "{f} missing for seed {seed}");
        }
        let best = json(&dir.join("best_prompt.json"));
        assert!(best["prompt"].as_str().unwrap().contains("<role>"));
        assert!(best["genome"]["role"].is_string());
        let report = json(&dir.join("report.json"));
        assert_eq!(report["test"]["calls"], 100);
    }

    ws.full_run("single", &["--seed", "5"]);
    assert!(json(&ws.path("single/summary.json"))["test_std"].is_null());
}

#[test]
fn resume_after_stop_matches_uninterrupted_run() {
    let ws = Workspace::new();
    ws.full_run("whole", &["--seed", "5"]);
    let stopped = ws.full_run("parts", &["--seed", "5", "--stop-after", "2"]);
    assert!(stopped.contains("stopped"), "{stopped}");
    assert!(!ws.path("parts/seed-5/report.json").exists());
    // a second interruption, then completion
    ws.ok(&["resume", "-c", "cfg.toml", "--mock", "--out", "parts", "--seed", "5", "--stop-after", "1"]);
    ws.ok(&["resume", "-c", "cfg.toml", "--mock", "--out", "parts", "--seed", "5"]);
    for f in ["report.json", "checkpoint.json", "best_prompt.json"] {
        assert_eq!(
            std::fs::read(ws.path(&format!("whole/seed-5/{f}"))).unwrap(),
            std::fs::read(ws.path(&format!("parts/seed-5/{f}"))).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn run_refuses_to_overwrite_a_checkpoint() {
    let ws = Workspace::new();
    ws.full_run("o", &["--seed", "5"]);
    let out = ws.run(&["run", "-c", "cfg.toml", "--mock", "--out", "o", "--seed", "5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("resume"));
}

#[test]
fn eval_reads_only_the_test_split() {
    let ws = Workspace::new();
    ws.full_run("o", &["--seed", "5"]);
    let out = ws.ok(&["eval", "-c", "cfg.toml", "--mock", "--prompt", "o/seed-5/best_prompt.json"]);
    let r: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(r["examples"], 100);
    assert_eq!(r["calls"], 100);
    assert_eq!(r["dev_reads"], 0);
    let score = r["score"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&score));
}

#[test]
fn eval_with_all_correct_mock_hits_the_maximum() {
    let ws = Workspace::new();
    // every example in the first 100 of a shuffled split is unknown, so
    // answer from the input: multiples of three are objective
    let mut rules = String::from("unmatched = \"error\"\n");
    for i in 0..130 {
        let label = if i % 3 == 0 { "objective" } else { "subjective" };
        rules.push_str(&format!(
            "[[rules]]\npattern = \"sentence number {i}\\\\n\"\nresponse = \"<ans>{label}</ans>\"\n"
        ));
    }
    std::fs::write(ws.path("script.toml"), rules).unwrap();
    std::fs::write(ws.path("prompt.txt"), "<role>careful annotator</role>").unwrap();
    let out = ws.ok(&[
        "eval", "-c", "cfg.toml", "--mock", "--prompt", "prompt.txt", "--seed", "5", "--set",
        "llm.mock_script=script.toml",
    ]);
    let r: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(r["score"], 1.0);
}

#[test]
fn eval_rejects_malformed_prompt_files() {
    let ws = Workspace::new();
    std::fs::write(ws.path("bad.json"), "{\"prompt\": 3}").unwrap();
    std::fs::write(ws.path("bad.txt"), "<role>unterminated").unwrap();
    for f in ["bad.json", "bad.txt"] {
        let out = ws.run(&["eval", "-c", "cfg.toml", "--mock", "--prompt", f]);
        assert!(!out.status.success());
        assert!(String::from_utf8_lossy(&out.stderr).contains("malformed prompt file"), "{f}");
    }
}

#[test]
fn unknown_override_keys_are_errors() {
    let ws = Workspace::new();
    let out = ws.run(&["init", "-c", "cfg.toml", "--mock", "--set", "evolution.epochz=3"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key"));
}

#[test]
fn effective_config_reproduces_the_run() {
    let ws = Workspace::new();
    ws.full_run("a", &["--seed", "5", "--set", "evolution.pair_probability=0.9"]);
    // the effective config carries the override; pools come from `a`
    let pools = ws.path("a/pools.json").display().to_string();
    ws.ok(&[
        "run", "-c", "a/config.toml", "--mock", "--out", "b", "--seed", "5", "--set",
        &format!("pools.path={pools}"),
    ]);
    assert_eq!(
        std::fs::read(ws.path("a/seed-5/report.json")).unwrap(),
        std::fs::read(ws.path("b/seed-5/report.json")).unwrap()
    );
}

#[test]
fn report_curve_costs_and_ablation() {
    let ws = Workspace::new();
    ws.full_run("ab/guided", &["--seed", "5,10", "--set", "llm.prices.target.input_per_million=2.0"]);
    ws.ok(&["init", "-c", "cfg.toml", "--mock", "--out", "ab/unguided"]);
    ws.ok(&[
        "run", "-c", "cfg.toml", "--mock", "--out", "ab/unguided", "--seed", "5,10", "--set",
        "evolution.guided=false",
    ]);

    let single = ws.ok(&["report", "ab/guided"]);
    let curve = std::fs::read_to_string(ws.path("ab/guided/curve.csv")).unwrap();
    for seed in ["5", "10"] {
        let best: Vec<f64> = curve
            .lines()
            .skip(1)
            .filter(|l| l.split(',').next() == Some(seed))
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect();
        assert_eq!(best.len(), 3);
        assert!(best.windows(2).all(|w| w[1] >= w[0]), "seed {seed}: {best:?}");
    }

    // cost table rows against the ledgers in the per-seed reports
    let mut ledger_tokens = 0;
    let mut ledger_cost = 0.0;
    for seed in [5, 10] {
        let r = json(&ws.path(&format!("ab/guided/seed-{seed}/report.json")));
        for role in ["optimizer", "target"] {
            let u = &r["run"]["usage"][role];
            ledger_tokens += u["prompt_tokens"].as_u64().unwrap() + u["completion_tokens"].as_u64().unwrap();
        }
        ledger_cost += r["run"]["cost"]["total"].as_f64().unwrap();
    }
    let total = single.lines().find(|l| l.starts_with("| total |")).unwrap();
    let cells: Vec<&str> = total.split('|').map(str::trim).collect();
    let table_tokens: u64 = cells[4].parse::<u64>().unwrap() + cells[5].parse::<u64>().unwrap();
    assert_eq!(table_tokens, ledger_tokens);
    assert!((cells[6].parse::<f64>().unwrap() - ledger_cost).abs() < 1e-4);
    assert!(ledger_cost > 0.0);

    let both = ws.ok(&["report", "ab"]);
    assert!(both.contains("## guided vs unguided"), "{both}");
    assert!(both.contains("| seed | guided dev | unguided dev | guided test | unguided test |"));
    assert!(both.lines().any(|l| l.starts_with("| 10 |")));
}
