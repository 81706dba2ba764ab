use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub input: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
}

impl Example {
    pub fn new(input: impl Into<String>, answer: impl Into<String>) -> Result<Self, EvalError> {
        let ex = Self {
            input: input.into(),
            answer: answer.into(),
            choices: None,
        };
        ex.validate()?;
        Ok(ex)
    }

    fn validate(&self) -> Result<(), EvalError> {
        if self.input.trim().is_empty() {
            return Err(EvalError::Dataset("example with empty input".into()));
        }
        Ok(())
    }
}

/// Column names used when reading CSV/TSV files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMap {
    pub input: String,
    pub answer: String,
    /// Optional column holding `|`-separated choices; empty to disable.
    #[serde(default)]
    pub choices: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            input: "input".into(),
            answer: "answer".into(),
            choices: String::new(),
        }
    }
}

/// Reads a JSON-lines file, or a CSV/TSV file when the extension says so.
pub fn load_examples(path: &Path, columns: &ColumnMap) -> Result<Vec<Example>, EvalError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "csv" => load_delimited(path, b',', columns),
        "tsv" => load_delimited(path, b'\t', columns),
        _ => load_jsonl(path),
    }
}

pub fn load_jsonl(path: &Path) -> Result<Vec<Example>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(line)
            .map_err(|e| EvalError::Dataset(format!("{}:{}: {e}", path.display(), i + 1)))?;
        ex.validate()
            .map_err(|e| EvalError::Dataset(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(ex);
    }
    Ok(out)
}

pub fn load_delimited(path: &Path, delimiter: u8, columns: &ColumnMap) -> Result<Vec<Example>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .from_path(path)
        .map_err(|e| EvalError::Dataset(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| EvalError::Dataset(e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| EvalError::Dataset(format!("{}: no column {name:?}", path.display())))
    };
    let input_at = col(&columns.input)?;
    let answer_at = col(&columns.answer)?;
    let choices_at = if columns.choices.is_empty() { None } else { Some(col(&columns.choices)?) };
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| EvalError::Dataset(e.to_string()))?;
        let ex = Example {
            input: row.get(input_at).unwrap_or("").to_string(),
            answer: row.get(answer_at).unwrap_or("").to_string(),
            choices: choices_at
                .and_then(|i| row.get(i))
                .map(|c| c.split('|').map(|s| s.trim().to_string()).collect()),
        };
        ex.validate()?;
        out.push(ex);
    }
    Ok(out)
}

/// Development and held-out test examples. Reads of the dev part are
/// counted so callers can prove they never touched it.
#[derive(Debug)]
pub struct Split {
    dev: Vec<Example>,
    test: Vec<Example>,
    pub seed: Option<u64>,
    dev_reads: AtomicUsize,
}

impl Split {
    pub fn explicit(dev: Vec<Example>, test: Vec<Example>) -> Self {
        let overlap = dev.iter().filter(|d| test.contains(d)).count();
        if overlap > 0 {
            log::warn!("{overlap} example(s) appear in both the dev and the test file");
        }
        Self { dev, test, seed: None, dev_reads: AtomicUsize::new(0) }
    }

    /// Shuffles with `seed`, holds out `test_size` examples and keeps the
    /// rest for development.
    pub fn random(mut examples: Vec<Example>, test_size: usize, seed: u64) -> Result<Self, EvalError> {
        if test_size >= examples.len() {
            return Err(EvalError::Dataset(format!(
                "test size {test_size} leaves no development examples out of {}",
                examples.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        examples.shuffle(&mut rng);
        let dev = examples.split_off(test_size);
        Ok(Self {
            dev,
            test: examples,
            seed: Some(seed),
            dev_reads: AtomicUsize::new(0),
        })
    }

    pub fn dev(&self) -> &[Example] {
        self.dev_reads.fetch_add(1, Ordering::Relaxed);
        &self.dev
    }

    pub fn test(&self) -> &[Example] {
        &self.test
    }

    pub fn dev_reads(&self) -> usize {
        self.dev_reads.load(Ordering::Relaxed)
    }

    pub fn dev_len(&self) -> usize {
        self.dev.len()
    }

    /// Fixed dev subsample for one run; `size` 0 keeps the whole dev set.
    /// Drawn from a separate stream of `seed` so it does not disturb the
    /// split or the search.
    pub fn dev_sample(&self, size: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let dev = self.dev();
        subsample(dev.len(), size, &mut rng).into_iter().map(|i| dev[i].clone()).collect()
    }
}

/// Indices of a fixed subsample; all indices in order when `size` is zero
/// or covers the whole set.
pub fn subsample<R: Rng + ?Sized>(len: usize, size: usize, rng: &mut R) -> Vec<usize> {
    if size == 0 || size >= len {
        return (0..len).collect();
    }
    let mut picked = rand::seq::index::sample(rng, len, size).into_vec();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn examples(n: usize) -> Vec<Example> {
        (0..n).map(|i| Example::new(format!("input {i}"), format!("{}", i % 2)).unwrap()).collect()
    }

    #[test]
    fn random_split_is_disjoint_and_sized() {
        let s = Split::random(examples(150), 100, 5).unwrap();
        assert_eq!(s.test().len(), 100);
        assert_eq!(s.dev().len(), 50);
        for d in s.dev() {
            assert!(!s.test().contains(d));
        }
    }

    #[test]
    fn random_split_is_seeded() {
        let a = Split::random(examples(150), 100, 5).unwrap();
        let b = Split::random(examples(150), 100, 5).unwrap();
        assert_eq!(a.test(), b.test());
    }

    #[test]
    fn split_needs_dev_examples() {
        assert!(Split::random(examples(100), 100, 0).is_err());
    }

    #[test]
    fn dev_reads_are_counted() {
        let s = Split::random(examples(10), 5, 0).unwrap();
        let _ = s.test();
        assert_eq!(s.dev_reads(), 0);
        let _ = s.dev();
        assert_eq!(s.dev_reads(), 1);
    }

    #[test]
    fn dev_sample_is_seeded_and_audited() {
        let s = Split::random(examples(80), 20, 3).unwrap();
        let a = s.dev_sample(10, 3);
        assert_eq!(a.len(), 10);
        assert_eq!(a, s.dev_sample(10, 3));
        assert_eq!(s.dev_sample(0, 3).len(), 60);
        assert_eq!(s.dev_reads(), 3);
    }

    #[test]
    fn subsample_full_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(subsample(5, 5, &mut rng), vec![0, 1, 2, 3, 4]);
        assert_eq!(subsample(5, 0, &mut rng), vec![0, 1, 2, 3, 4]);
        let s = subsample(100, 10, &mut rng);
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn reads_jsonl_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let jl = dir.path().join("d.jsonl");
        let mut f = std::fs::File::create(&jl).unwrap();
        writeln!(f, r#"{{"input": "great film", "answer": "positive"}}"#).unwrap();
        writeln!(f).unwrap();
        writeln!(f, r#"{{"input": "q", "answer": "a", "choices": ["a", "b"]}}"#).unwrap();
        let got = load_examples(&jl, &ColumnMap::default()).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[1].choices.as_deref(), Some(&["a".to_string(), "b".to_string()][..]));

        let tsv = dir.path().join("d.tsv");
        std::fs::write(&tsv, "sentence\tlabel\nit rains\t1\n").unwrap();
        let cols = ColumnMap { input: "sentence".into(), answer: "label".into(), choices: String::new() };
        let got = load_examples(&tsv, &cols).unwrap();
        assert_eq!(got, vec![Example::new("it rains", "1").unwrap()]);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(Example::new("  ", "x").is_err());
    }
}
