//! The two working memories that steer evolution.
//!
//! [`ComponentMemory`] keeps, per component type, the most recent
//! before/after value comparisons ordered better-first. It guides which
//! components get evolved. [`PromptMemory`] is a score-descending ledger of
//! evolved prompts and guides how the chosen components are rewritten.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{wrap, PromptTemplate, Registry, ScoredPrompt};
use crate::Score;

pub const DEFAULT_COMPONENT_CAPACITY: usize = 20;
pub const DEFAULT_PROMPT_CAPACITY: usize = 10;

/// Shown in place of the component history when there is none.
pub const NO_COMPONENT_HISTORY: &str =
    "No component evolution history exists yet; rely on your own judgement.";
/// Shown in place of the prompt history when there is none.
pub const NO_PROMPT_HISTORY: &str =
    "No evolved prompts are stored yet; rely on your own judgement.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("component type {0:?} is not registered")]
    TypeMismatch(String),
    #[error("score {0} is not finite")]
    NonFiniteScore(Score),
    #[error("capacity must be positive")]
    ZeroCapacity,
}

/// One before/after comparison. `better_score >= worse_score` always holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuePair {
    pub better: String,
    pub worse: String,
    pub better_score: Score,
    pub worse_score: Score,
    pub margin: Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentMemory {
    capacity_per_type: usize,
    entries: BTreeMap<String, VecDeque<ValuePair>>,
}

impl ComponentMemory {
    pub fn new(capacity_per_type: usize) -> Result<Self, MemoryError> {
        if capacity_per_type == 0 {
            return Err(MemoryError::ZeroCapacity);
        }
        Ok(Self {
            capacity_per_type,
            entries: BTreeMap::new(),
        })
    }

    pub fn capacity_per_type(&self) -> usize {
        self.capacity_per_type
    }

    /// Pairs for `ctype`, most recent first.
    pub fn pairs(&self, ctype: &str) -> impl Iterator<Item = &ValuePair> {
        self.entries.get(ctype).into_iter().flatten()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.values().all(VecDeque::is_empty)
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(VecDeque::len).sum()
    }

    /// Records the outcome of evolving `ctype` from `before` to `after`.
    /// On a tie the post-evolution value counts as the better one.
    pub fn record_pair(
        &mut self,
        registry: &Registry,
        ctype: &str,
        before: &str,
        after: &str,
        score_before: Score,
        score_after: Score,
    ) -> Result<(), MemoryError> {
        if !registry.contains(ctype) {
            return Err(MemoryError::TypeMismatch(ctype.to_string()));
        }
        for s in [score_before, score_after] {
            if !s.is_finite() {
                return Err(MemoryError::NonFiniteScore(s));
            }
        }
        let pair = if score_after >= score_before {
            ValuePair {
                better: after.to_string(),
                worse: before.to_string(),
                better_score: score_after,
                worse_score: score_before,
                margin: score_after - score_before,
            }
        } else {
            ValuePair {
                better: before.to_string(),
                worse: after.to_string(),
                better_score: score_before,
                worse_score: score_after,
                margin: score_before - score_after,
            }
        };
        let list = self.entries.entry(ctype.to_string()).or_default();
        list.push_front(pair);
        list.truncate(self.capacity_per_type);
        Ok(())
    }

    /// Text block describing up to `k` recent pairs for each requested type.
    pub fn context<'a, I>(&self, types: I, k: usize) -> String
    where
        I: IntoIterator<Item = &'a str>,
    {
        let types: Vec<&str> = types.into_iter().collect();
        if types.iter().all(|t| self.pairs(t).next().is_none()) {
            return format!("{NO_COMPONENT_HISTORY}\n");
        }
        let mut out = String::new();
        for t in types {
            let _ = writeln!(out, "[{t}]");
            let mut any = false;
            for p in self.pairs(t).take(k) {
                any = true;
                let _ = writeln!(
                    out,
                    "better: {:?}  worse: {:?}  Δ={:.4}",
                    p.better, p.worse, p.margin
                );
            }
            if !any {
                out.push_str("(no history for this component)\n");
            }
        }
        out
    }
}

/// How prompts are serialized into meta-prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryForm {
    /// Per-type component values.
    #[default]
    Discrete,
    /// The full rendered prompt.
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptMemory {
    capacity: usize,
    form: MemoryForm,
    ledger: Vec<ScoredPrompt>,
}

impl PromptMemory {
    pub fn new(capacity: usize, form: MemoryForm) -> Result<Self, MemoryError> {
        if capacity == 0 {
            return Err(MemoryError::ZeroCapacity);
        }
        Ok(Self {
            capacity,
            form,
            ledger: Vec::new(),
        })
    }

    pub fn form(&self) -> MemoryForm {
        self.form
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[ScoredPrompt] {
        &self.ledger
    }

    pub fn len(&self) -> usize {
        self.ledger.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ledger.is_empty()
    }

    /// Inserts ahead of every entry with an equal or lower score, then drops
    /// the lowest entries beyond capacity.
    pub fn insert(&mut self, sp: ScoredPrompt) {
        let at = self.ledger.partition_point(|e| e.score > sp.score);
        self.ledger.insert(at, sp);
        self.ledger.truncate(self.capacity);
    }

    /// Builds the initial memory by sorting a scored population.
    pub fn from_population<'a, I>(capacity: usize, form: MemoryForm, prompts: I) -> Result<Self, MemoryError>
    where
        I: IntoIterator<Item = &'a ScoredPrompt>,
    {
        let mut mem = Self::new(capacity, form)?;
        for p in prompts {
            mem.insert(p.clone());
        }
        Ok(mem)
    }

    pub fn rehydrate(&mut self, template: &PromptTemplate) -> Result<(), crate::genome::GenomeError> {
        self.ledger.iter_mut().try_for_each(|p| p.rehydrate(template))
    }

    /// Top `k` entries serialized in `form`.
    pub fn context(&self, form: MemoryForm, k: usize, registry: &Registry) -> String {
        if self.ledger.is_empty() {
            return format!("{NO_PROMPT_HISTORY}\n");
        }
        let mut out = String::new();
        for (rank, p) in self.ledger.iter().take(k).enumerate() {
            let _ = writeln!(out, "#{} score={:.4}", rank + 1, p.score);
            match form {
                MemoryForm::Discrete => {
                    for name in registry.names() {
                        let _ = writeln!(out, "{}", wrap(name, p.genome.get(name).unwrap_or("")));
                    }
                }
                MemoryForm::Continuous => {
                    out.push_str(p.rendered());
                    if !p.rendered().ends_with('\n') {
                        out.push('\n');
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{ComponentGenome, EvolutionKind, Lineage};

    fn sp(id: u64, score: Score) -> ScoredPrompt {
        let r = Registry::default();
        let t = PromptTemplate::default_for(&r).unwrap();
        let g = ComponentGenome::empty(&r)
            .with_value(&r, "role", format!("role {id}"))
            .unwrap();
        ScoredPrompt::new(id, g, &t, score, Lineage { parents: vec![], kind: EvolutionKind::Initial })
            .unwrap()
    }

    fn scores(m: &PromptMemory) -> Vec<Score> {
        m.entries().iter().map(|e| e.score).collect()
    }

    #[test]
    fn improvement_orders_after_first() {
        let r = Registry::default();
        let mut m = ComponentMemory::new(5).unwrap();
        m.record_pair(&r, "role", "old", "new", 0.6, 0.8).unwrap();
        let p = m.pairs("role").next().unwrap();
        assert_eq!((p.better.as_str(), p.worse.as_str()), ("new", "old"));
        assert!((p.margin - 0.2).abs() < 1e-12);
    }

    #[test]
    fn regression_orders_before_first() {
        let r = Registry::default();
        let mut m = ComponentMemory::new(5).unwrap();
        m.record_pair(&r, "role", "old", "new", 0.8, 0.6).unwrap();
        let p = m.pairs("role").next().unwrap();
        assert_eq!((p.better.as_str(), p.worse.as_str()), ("old", "new"));
        assert!((p.margin - 0.2).abs() < 1e-12);
    }

    #[test]
    fn tie_prefers_post_evolution_value() {
        let r = Registry::default();
        let mut m = ComponentMemory::new(5).unwrap();
        m.record_pair(&r, "role", "old", "new", 0.5, 0.5).unwrap();
        let p = m.pairs("role").next().unwrap();
        assert_eq!(p.better, "new");
        assert_eq!(p.margin, 0.0);
    }

    #[test]
    fn capacity_evicts_oldest() {
        let r = Registry::default();
        let mut m = ComponentMemory::new(2).unwrap();
        for i in 0..3 {
            m.record_pair(&r, "role", &format!("a{i}"), &format!("b{i}"), 0.0, 1.0).unwrap();
        }
        let betters: Vec<_> = m.pairs("role").map(|p| p.better.as_str()).collect();
        assert_eq!(betters, ["b2", "b1"]);
    }

    #[test]
    fn unknown_type_and_nan_rejected() {
        let r = Registry::default();
        let mut m = ComponentMemory::new(2).unwrap();
        assert_eq!(
            m.record_pair(&r, "tone", "a", "b", 0.0, 1.0),
            Err(MemoryError::TypeMismatch("tone".into()))
        );
        assert!(m.record_pair(&r, "role", "a", "b", f64::NAN, 1.0).is_err());
        assert!(m.is_empty());
    }

    #[test]
    fn empty_component_context_is_sentinel() {
        let m = ComponentMemory::new(3).unwrap();
        assert_eq!(m.context(["role", "workflow"], 5), format!("{NO_COMPONENT_HISTORY}\n"));
    }

    #[test]
    fn component_context_lists_pairs() {
        let r = Registry::default();
        let mut m = ComponentMemory::new(3).unwrap();
        m.record_pair(&r, "role", "old", "new", 0.6, 0.8).unwrap();
        let ctx = m.context(["role"], 5);
        assert_eq!(ctx.lines().filter(|l| l.starts_with("better:")).count(), 1);
        assert!(ctx.contains("better: \"new\"  worse: \"old\"  Δ=0.2000"), "{ctx}");
        assert_eq!(ctx, m.context(["role"], 5));
    }

    #[test]
    fn insert_keeps_descending_order() {
        let mut m = PromptMemory::new(10, MemoryForm::Discrete).unwrap();
        m.insert(sp(1, 0.9));
        m.insert(sp(2, 0.5));
        m.insert(sp(3, 0.7));
        assert_eq!(scores(&m), [0.9, 0.7, 0.5]);
    }

    #[test]
    fn full_ledger_ignores_low_score() {
        let mut m = PromptMemory::new(2, MemoryForm::Discrete).unwrap();
        m.insert(sp(1, 0.9));
        m.insert(sp(2, 0.5));
        let before = m.clone();
        m.insert(sp(3, 0.1));
        assert_eq!(m, before);
    }

    #[test]
    fn equal_score_goes_before_older() {
        let mut m = PromptMemory::new(5, MemoryForm::Discrete).unwrap();
        m.insert(sp(1, 0.7));
        m.insert(sp(2, 0.7));
        let ids: Vec<_> = m.entries().iter().map(|e| e.id).collect();
        assert_eq!(ids, [2, 1]);
    }

    #[test]
    fn prompt_context_top_k() {
        let r = Registry::default();
        let mut m = PromptMemory::new(5, MemoryForm::Discrete).unwrap();
        m.insert(sp(1, 0.9));
        m.insert(sp(2, 0.5));
        let ctx = m.context(MemoryForm::Discrete, 1, &r);
        assert!(ctx.contains("score=0.9000"));
        assert!(!ctx.contains("score=0.5000"));
        assert_eq!(ctx.matches("<role>").count(), 1);
        assert_eq!(ctx.matches("</examples>").count(), 1);
    }

    #[test]
    fn continuous_context_embeds_rendered_text() {
        let r = Registry::default();
        let mut m = PromptMemory::new(5, MemoryForm::Continuous).unwrap();
        let p = sp(1, 0.9);
        let rendered = p.rendered().to_string();
        m.insert(p);
        assert!(m.context(MemoryForm::Continuous, 3, &r).contains(&rendered));
    }

    #[test]
    fn empty_prompt_context_is_sentinel() {
        let m = PromptMemory::new(5, MemoryForm::Discrete).unwrap();
        assert_eq!(m.context(MemoryForm::Discrete, 3, &Registry::default()), format!("{NO_PROMPT_HISTORY}\n"));
    }
}
