//! Component-level evolutionary prompt optimization guided by two working
//! memories.
//!
//! Prompts are decoupled into typed components (role, task description,
//! output format, workflow, examples). An optimizer LLM picks which
//! components to evolve using a memory of past value comparisons, then
//! mutates (one parent) or mutates and crosses over (two parents) those
//! components using a score-ordered memory of evolved prompts. Children are
//! scored on a development set and the population keeps its top `N`.

pub mod catalog;
pub mod config;
pub mod eval;
pub mod evolution;
pub mod genome;
pub mod llm;
pub mod memory;
pub mod pools;
pub mod scalar;

pub use scalar::Scalar;

/// Scalar used for dev/test scores throughout the run.
pub type Score = f64;

pub type Genome = genome::ComponentGenome;
pub type Population = Vec<genome::ScoredPrompt>;
