//! Selection, direction finding, LLM-mediated mutation/crossover, the
//! memory hook, elitist update, and the epoch/iteration loop.

mod direction;
mod engine;
mod population;
mod selection;
mod solution;

pub use direction::{
    parse_choices, parse_selection, partition_directions, Direction1, Direction2, ParentSide,
};
pub use engine::{
    BestPrompt, CostTotals, Engine, EpochSnapshot, IterationRecord, RngState, RunReport, RunSetup, RunState,
    CHECKPOINT_VERSION,
};
pub use population::update_population;
pub use selection::{roulette_select, roulette_weights};
pub use solution::{Evolver, StepContext};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::EvalError;
use crate::genome::{ComponentGenome, GenomeError};
use crate::llm::LlmError;
use crate::memory::{MemoryError, MemoryForm, DEFAULT_COMPONENT_CAPACITY, DEFAULT_PROMPT_CAPACITY};
use crate::Score;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("need {need} individual(s), population has {have}")]
    PopulationTooSmall { need: usize, have: usize },
    #[error("score {0} is not finite")]
    NonFiniteScore(Score),
    #[error("invalid evolution config: {0}")]
    Config(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("meta-prompt: {0}")]
    Catalog(#[from] crate::catalog::CatalogError),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

/// Dev-set scoring of a candidate prompt.
pub trait Fitness {
    fn score(&self, genome: &ComponentGenome, rendered: &str) -> Result<Score, EvalError>;
}

impl<F> Fitness for F
where
    F: Fn(&ComponentGenome, &str) -> Result<Score, EvalError>,
{
    fn score(&self, genome: &ComponentGenome, rendered: &str) -> Result<Score, EvalError> {
        self(genome, rendered)
    }
}

impl Fitness for crate::eval::DevFitness<'_> {
    fn score(&self, genome: &ComponentGenome, rendered: &str) -> Result<Score, EvalError> {
        crate::eval::DevFitness::score(self, genome, rendered)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionConfig {
    /// `N`.
    pub population_size: usize,
    /// `m`.
    pub epochs: usize,
    /// `n`; zero skips evolution entirely.
    pub iterations_per_epoch: usize,
    pub memory_form: MemoryForm,
    /// Chance of sampling two parents instead of one.
    pub pair_probability: f64,
    pub max_mutations: usize,
    /// Requests per meta-task before falling back.
    pub parse_attempts: u32,
    pub component_capacity: usize,
    pub prompt_capacity: usize,
    /// Pairs per type shown from the component memory.
    pub component_context_k: usize,
    /// Entries shown from the prompt memory.
    pub prompt_context_k: usize,
    /// `false` replaces both memory contexts with their sentinels (ablation).
    pub guided: bool,
    /// One request for all parent-value choices instead of one per type.
    pub batched_choice: bool,
    pub temperature: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population_size: 10,
            epochs: 10,
            iterations_per_epoch: 10,
            memory_form: MemoryForm::Discrete,
            pair_probability: 0.5,
            max_mutations: 2,
            parse_attempts: 3,
            component_capacity: DEFAULT_COMPONENT_CAPACITY,
            prompt_capacity: DEFAULT_PROMPT_CAPACITY,
            component_context_k: 5,
            prompt_context_k: 5,
            guided: true,
            batched_choice: true,
            temperature: crate::llm::DEFAULT_TEMPERATURE,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        let bad = |m: &str| Err(EvolutionError::Config(m.to_string()));
        if self.population_size < 2 {
            return bad("population_size must be at least 2");
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.pair_probability) {
            return bad("pair_probability must lie in [0, 1]");
        }
        if self.max_mutations < 1 {
            return bad("max_mutations must be at least 1");
        }
        if self.parse_attempts < 1 {
            return bad("parse_attempts must be at least 1");
        }
        if self.component_capacity < 1 || self.prompt_capacity < 1 {
            return bad("memory capacities must be positive");
        }
        if self.component_context_k < 1 || self.prompt_context_k < 1 {
            return bad("context sizes must be positive");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must lie in [0, 2]");
        }
        Ok(())
    }
}
