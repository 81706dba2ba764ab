//! Component types, prompt genomes and the markup template engine.
//!
//! A prompt is held in two forms. The *discrete* form is a
//! [`ComponentGenome`]: one value per registered component type. The
//! *continuous* form is the text produced by rendering that genome through a
//! [`PromptTemplate`], where every non-empty value is enclosed in its markup
//! pair, e.g. `<role>Sentence Simplifier</role>`.

mod markup;
mod template;

pub use markup::{close_tag, extract_all, extract_first, open_tag, parse, wrap};
pub use template::{PromptTemplate, Segment, DEFAULT_TEMPLATE};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::Score;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenomeError {
    #[error("invalid component type name {0:?}")]
    InvalidTypeName(String),
    #[error("duplicate component type {0:?}")]
    DuplicateType(String),
    #[error("unknown component type {0:?}")]
    UnknownType(String),
    #[error("no value for component type {0:?}")]
    MissingSlotValue(String),
    #[error("value for {ctype:?} contains markup of component {tag:?}")]
    ValueContainsMarkup { ctype: String, tag: String },
    #[error("malformed markup: <{0}> has no matching closing tag")]
    MalformedMarkup(String),
    #[error("nested markup inside <{0}>")]
    NestedMarkup(String),
    #[error("empty pool for component type {0:?}")]
    EmptyPool(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("score {0} is not finite")]
    NonFiniteScore(Score),
}

/// The five groups the component pool is organised into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    RoleAndExpertise,
    TaskContent,
    ConstraintsAndNorms,
    ProcessAndBehavior,
    ContextAndExamples,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::RoleAndExpertise,
        Category::TaskContent,
        Category::ConstraintsAndNorms,
        Category::ProcessAndBehavior,
        Category::ContextAndExamples,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Category::RoleAndExpertise => "Role and Expertise",
            Category::TaskContent => "Task Content",
            Category::ConstraintsAndNorms => "Constraints and Norms",
            Category::ProcessAndBehavior => "Process and Behavior",
            Category::ContextAndExamples => "Context and Examples",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentType {
    pub name: String,
    pub category: Category,
    #[serde(default)]
    pub description: String,
}

impl ComponentType {
    pub fn new(
        name: impl Into<String>,
        category: Category,
        description: impl Into<String>,
    ) -> Result<Self, GenomeError> {
        let name = name.into();
        validate_type_name(&name)?;
        Ok(Self {
            name,
            category,
            description: description.into(),
        })
    }
}

/// Names become tag names and template placeholders, so they must be a
/// single token free of markup and template delimiters.
fn validate_type_name(name: &str) -> Result<(), GenomeError> {
    let bad = name.is_empty()
        || name
            .chars()
            .any(|c| matches!(c, '<' | '>' | '/' | '{' | '}' | '#') || c.is_whitespace());
    if bad {
        Err(GenomeError::InvalidTypeName(name.to_string()))
    } else {
        Ok(())
    }
}

/// Ordered set of component types. Order is the canonical order used by
/// every serialization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ComponentType>", into = "Vec<ComponentType>")]
pub struct Registry {
    types: Vec<ComponentType>,
}

impl Registry {
    pub fn new(types: Vec<ComponentType>) -> Result<Self, GenomeError> {
        let mut seen = BTreeSet::new();
        for t in &types {
            validate_type_name(&t.name)?;
            if !seen.insert(t.name.as_str()) {
                return Err(GenomeError::DuplicateType(t.name.clone()));
            }
        }
        Ok(Self { types })
    }

    pub fn types(&self) -> &[ComponentType] {
        &self.types
    }

    pub fn names(&self) -> impl Iterator<Item = &str> + '_ {
        self.types.iter().map(|t| t.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&ComponentType> {
        self.types.iter().find(|t| t.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    /// Rejects values that would make the markup ambiguous.
    pub fn check_value(&self, ctype: &str, text: &str) -> Result<(), GenomeError> {
        if !text.contains('<') {
            return Ok(());
        }
        for t in &self.types {
            if text.contains(&open_tag(&t.name)) || text.contains(&close_tag(&t.name)) {
                return Err(GenomeError::ValueContainsMarkup {
                    ctype: ctype.to_string(),
                    tag: t.name.clone(),
                });
            }
        }
        Ok(())
    }
}

impl Default for Registry {
    /// The representative type of each pool category.
    fn default() -> Self {
        let types = vec![
            ComponentType::new(
                "role",
                Category::RoleAndExpertise,
                "The identity or expertise the model should adopt.",
            ),
            ComponentType::new(
                "task_description",
                Category::TaskContent,
                "What the model is asked to accomplish.",
            ),
            ComponentType::new(
                "output_format",
                Category::ConstraintsAndNorms,
                "How the answer must be formatted.",
            ),
            ComponentType::new(
                "workflow",
                Category::ProcessAndBehavior,
                "The steps the model should follow to reach the answer.",
            ),
            ComponentType::new(
                "examples",
                Category::ContextAndExamples,
                "Demonstrations that illustrate the task.",
            ),
        ];
        Self::new(types.into_iter().map(|t| t.expect("valid default name")).collect())
            .expect("default registry is valid")
    }
}

impl TryFrom<Vec<ComponentType>> for Registry {
    type Error = GenomeError;

    fn try_from(types: Vec<ComponentType>) -> Result<Self, Self::Error> {
        Registry::new(types)
    }
}

impl From<Registry> for Vec<ComponentType> {
    fn from(r: Registry) -> Self {
        r.types
    }
}

/// Discrete form of a prompt: exactly one value per registered component
/// type. An empty value is the "null" option and is omitted on render.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComponentGenome {
    slots: BTreeMap<String, String>,
}

impl ComponentGenome {
    pub fn new<I, K, V>(registry: &Registry, values: I) -> Result<Self, GenomeError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut slots = BTreeMap::new();
        for (k, v) in values {
            let (k, v) = (k.into(), v.into());
            if !registry.contains(&k) {
                return Err(GenomeError::UnknownType(k));
            }
            if slots.contains_key(&k) {
                return Err(GenomeError::DuplicateType(k));
            }
            registry.check_value(&k, &v)?;
            slots.insert(k, v);
        }
        let genome = Self { slots };
        genome.validate(registry)?;
        Ok(genome)
    }

    /// Genome whose every slot holds the null value.
    pub fn empty(registry: &Registry) -> Self {
        Self {
            slots: registry.names().map(|n| (n.to_string(), String::new())).collect(),
        }
    }

    /// Checks the genome against a registry (used after deserialization).
    pub fn validate(&self, registry: &Registry) -> Result<(), GenomeError> {
        for name in registry.names() {
            match self.slots.get(name) {
                Some(v) => registry.check_value(name, v)?,
                None => return Err(GenomeError::MissingSlotValue(name.to_string())),
            }
        }
        if let Some(extra) = self.slots.keys().find(|k| !registry.contains(k)) {
            return Err(GenomeError::UnknownType(extra.clone()));
        }
        Ok(())
    }

    pub fn get(&self, ctype: &str) -> Option<&str> {
        self.slots.get(ctype).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.slots.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Copy of the genome with one slot replaced.
    pub fn with_value(
        &self,
        registry: &Registry,
        ctype: &str,
        text: impl Into<String>,
    ) -> Result<Self, GenomeError> {
        let text = text.into();
        if !self.slots.contains_key(ctype) {
            return Err(GenomeError::UnknownType(ctype.to_string()));
        }
        registry.check_value(ctype, &text)?;
        let mut next = self.clone();
        next.slots.insert(ctype.to_string(), text);
        Ok(next)
    }

    /// Stable content hash, used to key the score cache.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.slots {
            h.update(k.as_bytes());
            h.update([0u8]);
            h.update(v.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

/// Candidate values per component type.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComponentPools {
    pub values: BTreeMap<String, Vec<String>>,
}

impl ComponentPools {
    pub fn get(&self, ctype: &str) -> &[String] {
        self.values.get(ctype).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn validate(&self, registry: &Registry) -> Result<(), GenomeError> {
        for name in registry.names() {
            let pool = self.get(name);
            if pool.is_empty() {
                return Err(GenomeError::EmptyPool(name.to_string()));
            }
            for v in pool {
                registry.check_value(name, v)?;
            }
        }
        Ok(())
    }
}

/// Draws one value uniformly per component type.
pub fn random_genome<R: Rng + ?Sized>(
    registry: &Registry,
    pools: &ComponentPools,
    rng: &mut R,
) -> Result<ComponentGenome, GenomeError> {
    let mut slots = BTreeMap::new();
    for name in registry.names() {
        let pool = pools.get(name);
        if pool.is_empty() {
            return Err(GenomeError::EmptyPool(name.to_string()));
        }
        let pick = &pool[rng.gen_range(0..pool.len())];
        registry.check_value(name, pick)?;
        slots.insert(name.to_string(), pick.clone());
    }
    Ok(ComponentGenome { slots })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvolutionKind {
    Initial,
    Mutation,
    Crossover,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub parents: Vec<u64>,
    pub kind: EvolutionKind,
}

/// A genome with its rendered text and dev-set score.
///
/// `rendered` is not serialized; it is re-derived from the template with
/// [`ScoredPrompt::rehydrate`] after loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrompt {
    pub id: u64,
    pub genome: ComponentGenome,
    #[serde(skip)]
    rendered: String,
    pub score: Score,
    pub lineage: Lineage,
}

impl ScoredPrompt {
    pub fn new(
        id: u64,
        genome: ComponentGenome,
        template: &PromptTemplate,
        score: Score,
        lineage: Lineage,
    ) -> Result<Self, GenomeError> {
        if !score.is_finite() {
            return Err(GenomeError::NonFiniteScore(score));
        }
        let rendered = template.render(&genome)?;
        Ok(Self {
            id,
            genome,
            rendered,
            score,
            lineage,
        })
    }

    pub fn rendered(&self) -> &str {
        &self.rendered
    }

    pub fn rehydrate(&mut self, template: &PromptTemplate) -> Result<(), GenomeError> {
        if !self.score.is_finite() {
            return Err(GenomeError::NonFiniteScore(self.score));
        }
        self.rendered = template.render(&self.genome)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pools(n: usize, registry: &Registry) -> ComponentPools {
        ComponentPools {
            values: registry
                .names()
                .map(|t| (t.to_string(), (0..n).map(|i| format!("{t} v{i}")).collect()))
                .collect(),
        }
    }

    #[test]
    fn type_names_reject_markup_delimiters() {
        for bad in ["", "a<b", "a/b", "x>", "two words", "{x}"] {
            assert!(ComponentType::new(bad, Category::TaskContent, "").is_err(), "{bad:?}");
        }
        assert!(ComponentType::new("role", Category::RoleAndExpertise, "").is_ok());
    }

    #[test]
    fn registry_rejects_duplicates() {
        let t = ComponentType::new("role", Category::RoleAndExpertise, "").unwrap();
        assert_eq!(
            Registry::new(vec![t.clone(), t]),
            Err(GenomeError::DuplicateType("role".into()))
        );
    }

    #[test]
    fn default_registry_covers_every_category_once() {
        let r = Registry::default();
        let cats: BTreeSet<_> = r.types().iter().map(|t| t.category).collect();
        assert_eq!(cats.len(), 5);
        assert_eq!(r.len(), 5);
    }

    #[test]
    fn genome_requires_every_type() {
        let r = Registry::default();
        let err = ComponentGenome::new(&r, [("role", "x")]).unwrap_err();
        assert!(matches!(err, GenomeError::MissingSlotValue(_)));
        let err = ComponentGenome::new(&r, [("bogus", "x")]).unwrap_err();
        assert_eq!(err, GenomeError::UnknownType("bogus".into()));
    }

    #[test]
    fn values_may_not_carry_registered_tags() {
        let r = Registry::default();
        let g = ComponentGenome::empty(&r);
        assert!(g.with_value(&r, "role", "a <workflow> b").is_err());
        assert!(g.with_value(&r, "role", "x </role>").is_err());
        // unregistered tags are plain text
        assert!(g.with_value(&r, "role", "use <b>bold</b>").is_ok());
    }

    #[test]
    fn random_genome_single_value_pools() {
        let r = Registry::default();
        let p = pools(1, &r);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_genome(&r, &p, &mut rng).unwrap();
        for (k, v) in g.iter() {
            assert_eq!(v, format!("{k} v0"));
        }
    }

    #[test]
    fn random_genome_is_seeded() {
        let r = Registry::default();
        let p = pools(10, &r);
        let a = random_genome(&r, &p, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = random_genome(&r, &p, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_genome_empty_pool() {
        let r = Registry::default();
        let mut p = pools(3, &r);
        p.values.insert("workflow".into(), vec![]);
        let err = random_genome(&r, &p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert_eq!(err, GenomeError::EmptyPool("workflow".into()));
    }

    #[test]
    fn random_genome_marginals_are_uniform() {
        // chi-square, 9 dof; critical value at p = 0.01 is 21.666
        let r = Registry::default();
        let p = pools(10, &r);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 100_000;
        let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
        for _ in 0..draws {
            let g = random_genome(&r, &p, &mut rng).unwrap();
            for (k, v) in g.iter() {
                *counts.entry((k.to_string(), v.to_string())).or_default() += 1;
            }
        }
        let expected = draws as f64 / 10.0;
        for t in r.names() {
            let chi: f64 = (0..10)
                .map(|i| {
                    let c = counts[&(t.to_string(), format!("{t} v{i}"))] as f64;
                    (c - expected).powi(2) / expected
                })
                .sum();
            assert!(chi < 21.666, "{t}: chi-square {chi}");
        }
    }

    #[test]
    fn content_hash_distinguishes_slot_boundaries() {
        let r = Registry::default();
        let a = ComponentGenome::empty(&r).with_value(&r, "role", "ab").unwrap();
        let b = ComponentGenome::empty(&r)
            .with_value(&r, "role", "a")
            .unwrap()
            .with_value(&r, "task_description", "b")
            .unwrap();
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash(), a.clone().content_hash());
    }

    #[test]
    fn scored_prompt_rejects_nan() {
        let r = Registry::default();
        let t = PromptTemplate::default_for(&r).unwrap();
        let lineage = Lineage { parents: vec![], kind: EvolutionKind::Initial };
        let err = ScoredPrompt::new(0, ComponentGenome::empty(&r), &t, f64::NAN, lineage).unwrap_err();
        assert!(matches!(err, GenomeError::NonFiniteScore(_)));
    }
}
