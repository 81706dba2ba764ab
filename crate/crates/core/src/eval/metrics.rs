//! Task metrics, generic over the scalar type.
//!
//! Predictions are `Option`s: `None` means no answer could be extracted and
//! always counts as wrong.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Mcc,
    TokenF1,
    ExactMatch,
    RougeAvg,
}

impl Metric {
    /// Inclusive range of the metric.
    pub fn range(self) -> (f64, f64) {
        match self {
            Metric::Mcc => (-1.0, 1.0),
            _ => (0.0, 1.0),
        }
    }
}

fn check_lengths<P, G>(preds: &[P], golds: &[G]) -> Result<(), EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), golds: golds.len() });
    }
    if golds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(())
}

fn mean<F: Scalar>(values: impl Iterator<Item = F>, n: usize) -> F {
    values.fold(F::zero(), |a, b| a + b) / F::count(n)
}

pub fn accuracy<F: Scalar>(preds: &[Option<String>], golds: &[String]) -> Result<F, EvalError> {
    check_lengths(preds, golds)?;
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.as_deref() == Some(g.as_str()))
        .count();
    Ok(F::count(hits) / F::count(golds.len()))
}

/// `(TP·TN − FP·FN) / √((TP+FP)(TP+FN)(TN+FP)(TN+FN))`, or zero when any
/// factor of the denominator is zero.
pub fn mcc_from_counts<F: Scalar>(tp: u64, tn: u64, fp: u64, fn_: u64) -> F {
    let f = |x: u64| F::from_u64(x).expect("count fits in scalar");
    let (tp, tn, fp, fn_) = (f(tp), f(tn), f(fp), f(fn_));
    let factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
    if factors.iter().any(|x| x.is_zero()) {
        return F::zero();
    }
    let denom = factors.iter().fold(F::one(), |a, &b| a * b).sqrt();
    (tp * tn - fp * fn_) / denom
}

/// Binary MCC with `positive` as the positive class. A missing prediction is
/// taken as the opposite of the gold label.
pub fn mcc<F: Scalar>(preds: &[Option<String>], golds: &[String], positive: &str) -> Result<F, EvalError> {
    check_lengths(preds, golds)?;
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (p, g) in preds.iter().zip(golds) {
        let gold_pos = g == positive;
        let pred_pos = match p {
            Some(p) => p == positive,
            None => !gold_pos,
        };
        match (pred_pos, gold_pos) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(mcc_from_counts(tp, tn, fp, fn_))
}

/// Lowercase, drop punctuation and English articles, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match_one(pred: &str, gold: &str) -> bool {
    normalize_answer(pred) == normalize_answer(gold)
}

/// Harmonic mean of token precision and recall after normalization.
pub fn token_f1_one<F: Scalar>(pred: &str, gold: &str) -> F {
    let pred = normalize_answer(pred);
    let gold = normalize_answer(gold);
    let p: Vec<&str> = pred.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    if p.is_empty() || g.is_empty() {
        return if p == g { F::one() } else { F::zero() };
    }
    let common = overlap(&p, &g);
    if common == 0 {
        return F::zero();
    }
    f1(common, p.len(), g.len())
}

pub fn token_f1<F: Scalar>(preds: &[Option<String>], golds: &[String]) -> Result<F, EvalError> {
    check_lengths(preds, golds)?;
    let scores = preds
        .iter()
        .zip(golds)
        .map(|(p, g)| p.as_deref().map_or(F::zero(), |p| token_f1_one(p, g)));
    Ok(mean(scores, golds.len()))
}

pub fn exact_match<F: Scalar>(preds: &[Option<String>], golds: &[String]) -> Result<F, EvalError> {
    check_lengths(preds, golds)?;
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.as_deref().is_some_and(|p| exact_match_one(p, g)))
        .count();
    Ok(F::count(hits) / F::count(golds.len()))
}

/// Multiset intersection size.
fn overlap<T: std::hash::Hash + Eq + Copy>(a: &[T], b: &[T]) -> usize {
    let mut counts: HashMap<T, usize> = HashMap::new();
    for x in b {
        *counts.entry(*x).or_default() += 1;
    }
    let mut hits = 0;
    for x in a {
        if let Some(c) = counts.get_mut(x) {
            if *c > 0 {
                *c -= 1;
                hits += 1;
            }
        }
    }
    hits
}

fn f1<F: Scalar>(hits: usize, pred_len: usize, gold_len: usize) -> F {
    let hits = F::count(hits);
    let precision = hits / F::count(pred_len);
    let recall = hits / F::count(gold_len);
    F::lit(2.0) * precision * recall / (precision + recall)
}

/// Lowercased alphanumeric runs.
pub fn rouge_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// ROUGE-N F1 with clipped n-gram counts; zero when either side has no
/// n-grams.
pub fn rouge_n<F: Scalar>(pred: &[String], gold: &[String], n: usize) -> F {
    if pred.len() < n || gold.len() < n || n == 0 {
        return F::zero();
    }
    let grams = |t: &[String]| t.windows(n).map(|w| w.join("\u{1}")).collect::<Vec<_>>();
    let (p, g) = (grams(pred), grams(gold));
    let pr: Vec<&str> = p.iter().map(String::as_str).collect();
    let gr: Vec<&str> = g.iter().map(String::as_str).collect();
    let hits = overlap(&pr, &gr);
    if hits == 0 {
        return F::zero();
    }
    f1(hits, pr.len(), gr.len())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 from the longest common subsequence.
pub fn rouge_l<F: Scalar>(pred: &[String], gold: &[String]) -> F {
    if pred.is_empty() || gold.is_empty() {
        return F::zero();
    }
    let l = lcs_len(pred, gold);
    if l == 0 {
        return F::zero();
    }
    f1(l, pred.len(), gold.len())
}

/// Mean of ROUGE-1, ROUGE-2 and ROUGE-L F1 for one pair.
pub fn rouge_avg_one<F: Scalar>(pred: &str, gold: &str) -> F {
    let (p, g) = (rouge_tokens(pred), rouge_tokens(gold));
    (rouge_n::<F>(&p, &g, 1) + rouge_n::<F>(&p, &g, 2) + rouge_l::<F>(&p, &g)) / F::lit(3.0)
}

pub fn rouge_avg<F: Scalar>(preds: &[Option<String>], golds: &[String]) -> Result<F, EvalError> {
    check_lengths(preds, golds)?;
    let scores = preds
        .iter()
        .zip(golds)
        .map(|(p, g)| p.as_deref().map_or(F::zero(), |p| rouge_avg_one(p, g)));
    Ok(mean(scores, golds.len()))
}
