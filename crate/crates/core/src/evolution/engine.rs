use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::direction::ParentSide;
use super::population::update_population;
use super::selection::roulette_select;
use super::solution::{stronger, Evolver, StepContext};
use super::{EvolutionConfig, EvolutionError, Fitness};
use crate::catalog::Catalog;
use crate::genome::{
    random_genome, ComponentGenome, ComponentPools, EvolutionKind, Lineage, PromptTemplate, Registry, ScoredPrompt,
};
use crate::llm::{Gateway, GatewayState, PriceTable, Role, UsageLedger};
use crate::memory::{ComponentMemory, PromptMemory};
use crate::Score;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Position of the run's random generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal, since JSON numbers cannot hold every `u128`.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, String> {
        let bytes = hex::decode(&self.seed).map_err(|e| format!("rng seed: {e}"))?;
        let seed: [u8; 32] = bytes.try_into().map_err(|_| "rng seed must be 32 bytes".to_string())?;
        let word_pos: u128 = self.word_pos.parse().map_err(|e| format!("rng position: {e}"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }
}

/// What happened in one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub parents: Vec<u64>,
    pub parent_scores: Vec<Score>,
    pub mutate_types: Vec<String>,
    /// Inherited parent per fixed type; empty for single-parent steps.
    pub fixed: BTreeMap<String, ParentSide>,
    pub child: Option<u64>,
    pub child_score: Option<Score>,
    /// The child repeated a parent and was discarded.
    pub stagnant: bool,
    /// The child's score came from the cache.
    pub cached: bool,
    pub fallbacks: Vec<String>,
    /// Cumulative usage after the iteration.
    pub usage: UsageLedger,
}

/// Population after initialization (epoch 0) or after an epoch's update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSnapshot {
    pub epoch: usize,
    pub best_id: u64,
    pub best_score: Score,
    pub ids: Vec<u64>,
    pub scores: Vec<Score>,
    pub usage: UsageLedger,
}

/// Everything needed to continue a run; written after every iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunState {
    pub version: u32,
    pub task: String,
    pub seed: u64,
    pub config: EvolutionConfig,
    pub registry: Registry,
    pub template: String,
    pub pools: ComponentPools,
    pub population: Vec<ScoredPrompt>,
    /// Children of the current epoch, oldest first.
    pub evolved: Vec<ScoredPrompt>,
    pub component_memory: ComponentMemory,
    pub prompt_memory: PromptMemory,
    pub rng: RngState,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed iterations of the current epoch.
    pub iteration: usize,
    pub score_cache: BTreeMap<String, Score>,
    pub records: Vec<IterationRecord>,
    pub epochs: Vec<EpochSnapshot>,
    pub gateway: GatewayState,
    pub next_id: u64,
}

impl RunState {
    pub fn is_initialized(&self) -> bool {
        !self.population.is_empty()
    }

    pub fn is_finished(&self) -> bool {
        self.is_initialized() && self.epoch >= self.config.epochs
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), EvolutionError> {
        let err = |message: String| EvolutionError::Checkpoint {
            path: path.display().to_string(),
            message,
        };
        let json = serde_json::to_string_pretty(self).map_err(|e| err(e.to_string()))?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        std::fs::write(&tmp, json).map_err(|e| err(e.to_string()))?;
        std::fs::rename(&tmp, path).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, EvolutionError> {
        let err = |message: String| EvolutionError::Checkpoint {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let state: RunState = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if state.version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported checkpoint version {}", state.version)));
        }
        Ok(state)
    }
}

/// Best prompt of a run, with its text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPrompt {
    pub id: u64,
    pub score: Score,
    pub genome: ComponentGenome,
    pub rendered: String,
    pub lineage: Lineage,
}

impl From<&ScoredPrompt> for BestPrompt {
    fn from(p: &ScoredPrompt) -> Self {
        Self {
            id: p.id,
            score: p.score,
            genome: p.genome.clone(),
            rendered: p.rendered().to_string(),
            lineage: p.lineage.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTotals {
    pub optimizer: f64,
    pub target: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub task: String,
    pub finished: bool,
    pub best: BestPrompt,
    pub initial_best: Score,
    pub epochs: Vec<EpochSnapshot>,
    pub records: Vec<IterationRecord>,
    pub usage: UsageLedger,
    pub cost: CostTotals,
}

/// Inputs of a fresh run.
pub struct RunSetup {
    pub task: String,
    pub seed: u64,
    pub config: EvolutionConfig,
    pub registry: Registry,
    pub template: PromptTemplate,
    pub pools: ComponentPools,
}

/// The evolutionary loop. Owns the run state; borrows the services.
pub struct Engine<'a> {
    state: RunState,
    template: PromptTemplate,
    rng: ChaCha8Rng,
    gateway: &'a Gateway,
    catalog: &'a Catalog,
    fitness: &'a dyn Fitness,
    checkpoint: Option<PathBuf>,
}

impl<'a> Engine<'a> {
    /// Prepares a run. Nothing is evaluated until [`Engine::run`].
    pub fn new(
        setup: RunSetup,
        gateway: &'a Gateway,
        catalog: &'a Catalog,
        fitness: &'a dyn Fitness,
    ) -> Result<Self, EvolutionError> {
        setup.config.validate()?;
        setup.pools.validate(&setup.registry)?;
        let rng = ChaCha8Rng::seed_from_u64(setup.seed);
        let state = RunState {
            version: CHECKPOINT_VERSION,
            task: setup.task,
            seed: setup.seed,
            component_memory: ComponentMemory::new(setup.config.component_capacity)?,
            prompt_memory: PromptMemory::new(setup.config.prompt_capacity, setup.config.memory_form)?,
            config: setup.config,
            registry: setup.registry,
            template: setup.template.source().to_string(),
            pools: setup.pools,
            population: Vec::new(),
            evolved: Vec::new(),
            rng: RngState::capture(&rng),
            epoch: 0,
            iteration: 0,
            score_cache: BTreeMap::new(),
            records: Vec::new(),
            epochs: Vec::new(),
            gateway: gateway.snapshot(),
            next_id: 0,
        };
        Ok(Self {
            state,
            template: setup.template,
            rng,
            gateway,
            catalog,
            fitness,
            checkpoint: None,
        })
    }

    /// Continues from a saved state. The gateway's counters are restored so
    /// replayable backends see the same call indices.
    pub fn resume(
        mut state: RunState,
        gateway: &'a Gateway,
        catalog: &'a Catalog,
        fitness: &'a dyn Fitness,
    ) -> Result<Self, EvolutionError> {
        state.config.validate()?;
        let template = PromptTemplate::parse(&state.template, &state.registry)?;
        for p in state.population.iter_mut().chain(state.evolved.iter_mut()) {
            p.genome.validate(&state.registry)?;
            p.rehydrate(&template)?;
        }
        state.prompt_memory.rehydrate(&template)?;
        let rng = state.rng.restore().map_err(|message| EvolutionError::Checkpoint {
            path: String::new(),
            message,
        })?;
        gateway.restore(state.gateway);
        Ok(Self {
            state,
            template,
            rng,
            gateway,
            catalog,
            fitness,
            checkpoint: None,
        })
    }

    /// Saves the state to `path` after every iteration.
    pub fn checkpoint_to(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint = Some(path.into());
        self
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    pub fn into_state(mut self) -> RunState {
        self.sync();
        self.state
    }

    pub fn best(&self) -> Option<&ScoredPrompt> {
        self.state.population.first()
    }

    /// Runs to completion, or until `limit` more iterations have been done.
    /// Returns whether the run finished.
    pub fn run(&mut self, limit: Option<usize>) -> Result<bool, EvolutionError> {
        if !self.state.is_initialized() {
            self.initialize()?;
            self.save()?;
        }
        let mut done = 0;
        while self.state.epoch < self.state.config.epochs {
            while self.state.iteration < self.state.config.iterations_per_epoch {
                if limit == Some(done) {
                    return Ok(false);
                }
                self.iterate()?;
                self.state.iteration += 1;
                done += 1;
                self.save()?;
            }
            self.end_epoch();
            self.save()?;
        }
        Ok(true)
    }

    fn sync(&mut self) {
        self.state.rng = RngState::capture(&self.rng);
        self.state.gateway = self.gateway.snapshot();
    }

    fn save(&mut self) -> Result<(), EvolutionError> {
        self.sync();
        match &self.checkpoint {
            Some(path) => self.state.save(path),
            None => Ok(()),
        }
    }

    /// Cached dev score of `genome`.
    fn score(&mut self, genome: &ComponentGenome) -> Result<(Score, bool), EvolutionError> {
        let key = genome.content_hash();
        if let Some(&s) = self.state.score_cache.get(&key) {
            return Ok((s, true));
        }
        let rendered = self.template.render(genome)?;
        let s = self.fitness.score(genome, &rendered)?;
        if !s.is_finite() {
            return Err(EvolutionError::NonFiniteScore(s));
        }
        self.state.score_cache.insert(key, s);
        Ok((s, false))
    }

    fn initialize(&mut self) -> Result<(), EvolutionError> {
        let n = self.state.config.population_size;
        let mut population = Vec::with_capacity(n);
        for _ in 0..n {
            let genome = random_genome(&self.state.registry, &self.state.pools, &mut self.rng)?;
            let (score, _) = self.score(&genome)?;
            let id = self.next_id();
            population.push(ScoredPrompt::new(
                id,
                genome,
                &self.template,
                score,
                Lineage { parents: vec![], kind: EvolutionKind::Initial },
            )?);
        }
        population.sort_by(|a, b| b.score.total_cmp(&a.score));
        self.state.prompt_memory = PromptMemory::from_population(
            self.state.config.prompt_capacity,
            self.state.config.memory_form,
            &population,
        )?;
        self.state.population = population;
        self.snapshot();
        log::info!(
            "initial population: best {:.4}",
            self.state.population[0].score
        );
        Ok(())
    }

    fn next_id(&mut self) -> u64 {
        let id = self.state.next_id;
        self.state.next_id += 1;
        id
    }

    fn iterate(&mut self) -> Result<(), EvolutionError> {
        let cfg = &self.state.config;
        let pair = self.rng.gen_bool(cfg.pair_probability);
        let k = if pair && self.state.population.len() >= 2 { 2 } else { 1 };
        let scores: Vec<Score> = self.state.population.iter().map(|p| p.score).collect();
        let picked = roulette_select(&scores, k, &mut self.rng)?;
        let parents: Vec<ScoredPrompt> = picked.iter().map(|&i| self.state.population[i].clone()).collect();

        let mut evolver = Evolver::new(StepContext {
            task: &self.state.task,
            registry: &self.state.registry,
            catalog: self.catalog,
            gateway: self.gateway,
            config: &self.state.config,
            component_memory: &self.state.component_memory,
            prompt_memory: &self.state.prompt_memory,
        });
        let (child, mutate_types, fixed, base, kind) = if k == 1 {
            let p = &parents[0];
            let d = evolver.subtask1(p, &mut self.rng)?;
            let child = evolver.subsolution1(p, &d)?;
            (child, d.mutate_types, BTreeMap::new(), p.clone(), EvolutionKind::Mutation)
        } else {
            let (p1, p2) = (&parents[0], &parents[1]);
            let d = evolver.subtask2(p1, p2, &mut self.rng)?;
            let child = evolver.subsolution2(p1, p2, &d)?;
            let base = match stronger(p1, p2) {
                ParentSide::First => p1.clone(),
                ParentSide::Second => p2.clone(),
            };
            (child, d.mutate_types, d.fixed, base, EvolutionKind::Crossover)
        };
        let fallbacks = evolver.into_events();

        let mut record = IterationRecord {
            epoch: self.state.epoch + 1,
            iteration: self.state.iteration + 1,
            parents: parents.iter().map(|p| p.id).collect(),
            parent_scores: parents.iter().map(|p| p.score).collect(),
            mutate_types: mutate_types.iter().cloned().collect(),
            fixed,
            child: None,
            child_score: None,
            stagnant: false,
            cached: false,
            fallbacks,
            usage: UsageLedger::default(),
        };

        if parents.iter().any(|p| p.genome == child) {
            log::info!("iteration {}: child repeats a parent, skipped", record.iteration);
            record.stagnant = true;
        } else {
            let (score, cached) = self.score(&child)?;
            let id = self.next_id();
            let sp = ScoredPrompt::new(
                id,
                child,
                &self.template,
                score,
                Lineage { parents: record.parents.clone(), kind },
            )?;
            self.remember(&base, &sp, &mutate_types)?;
            record.child = Some(id);
            record.child_score = Some(score);
            record.cached = cached;
            self.state.evolved.push(sp);
        }
        record.usage = self.gateway.usage();
        self.state.records.push(record);
        Ok(())
    }

    /// One value pair per mutated type, then the child joins the prompt
    /// memory.
    fn remember(
        &mut self,
        base: &ScoredPrompt,
        child: &ScoredPrompt,
        mutate_types: &BTreeSet<String>,
    ) -> Result<(), EvolutionError> {
        for t in mutate_types {
            self.state.component_memory.record_pair(
                &self.state.registry,
                t,
                base.genome.get(t).unwrap_or(""),
                child.genome.get(t).unwrap_or(""),
                base.score,
                child.score,
            )?;
        }
        self.state.prompt_memory.insert(child.clone());
        Ok(())
    }

    fn end_epoch(&mut self) {
        let n = self.state.config.population_size;
        self.state.population = update_population(&self.state.population, &self.state.evolved, n);
        self.state.evolved.clear();
        self.state.epoch += 1;
        self.state.iteration = 0;
        self.snapshot();
        log::info!(
            "epoch {}/{}: best {:.4}",
            self.state.epoch,
            self.state.config.epochs,
            self.state.population[0].score
        );
    }

    fn snapshot(&mut self) {
        let pop = &self.state.population;
        self.state.epochs.push(EpochSnapshot {
            epoch: self.state.epoch,
            best_id: pop[0].id,
            best_score: pop[0].score,
            ids: pop.iter().map(|p| p.id).collect(),
            scores: pop.iter().map(|p| p.score).collect(),
            usage: self.gateway.usage(),
        });
    }

    pub fn report(&self, prices: &PriceTable) -> Option<RunReport> {
        let best = self.best()?;
        let usage = self.gateway.usage();
        Some(RunReport {
            seed: self.state.seed,
            task: self.state.task.clone(),
            finished: self.state.is_finished(),
            best: best.into(),
            initial_best: self.state.epochs.first().map_or(best.score, |e| e.best_score),
            epochs: self.state.epochs.clone(),
            records: self.state.records.clone(),
            usage,
            cost: CostTotals {
                optimizer: usage.cost(Role::Optimizer, prices),
                target: usage.cost(Role::Target, prices),
                total: usage.total_cost(prices),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::eval::EvalError;
    use crate::llm::mock::{MockBackend, OfflineResponder};

    fn setup(seed: u64, epochs: usize, iterations: usize) -> RunSetup {
        let registry = Registry::default();
        let pools = ComponentPools {
            values: registry
                .names()
                .map(|n| (n.to_string(), (0..4).map(|i| format!("{n} v{i}")).collect()))
                .collect(),
        };
        RunSetup {
            task: "toy".into(),
            seed,
            config: EvolutionConfig {
                population_size: 4,
                epochs,
                iterations_per_epoch: iterations,
                ..EvolutionConfig::default()
            },
            template: PromptTemplate::default_for(&registry).unwrap(),
            registry,
            pools,
        }
    }

    fn length_fitness(_: &ComponentGenome, rendered: &str) -> Result<Score, EvalError> {
        Ok((rendered.len() % 97) as f64 / 97.0)
    }

    fn gateway(seed: u64) -> Gateway {
        Gateway::builder(Arc::new(MockBackend::new(seed, OfflineResponder))).build()
    }

    #[test]
    fn degenerate_loop_returns_initial_best() {
        let gw = gateway(1);
        let cat = Catalog::default();
        let mut e = Engine::new(setup(1, 1, 0), &gw, &cat, &length_fitness).unwrap();
        assert!(e.run(None).unwrap());
        let s = e.state();
        assert!(s.records.is_empty());
        assert_eq!(s.epochs.len(), 2);
        assert_eq!(e.best().unwrap().score, s.epochs[0].best_score);
        assert_eq!(gw.usage().role(Role::Optimizer).calls, 0);
    }

    #[test]
    fn same_seed_same_state() {
        let cat = Catalog::default();
        let (g1, g2) = (gateway(3), gateway(3));
        let mut a = Engine::new(setup(3, 2, 3), &g1, &cat, &length_fitness).unwrap();
        let mut b = Engine::new(setup(3, 2, 3), &g2, &cat, &length_fitness).unwrap();
        a.run(None).unwrap();
        b.run(None).unwrap();
        assert_eq!(a.into_state(), b.into_state());
    }

    #[test]
    fn elitism_and_memory_bookkeeping() {
        let gw = gateway(4);
        let cat = Catalog::default();
        let mut e = Engine::new(setup(4, 3, 4), &gw, &cat, &length_fitness).unwrap();
        e.run(None).unwrap();
        let s = e.state();
        assert!(s.epochs.windows(2).all(|w| w[1].best_score >= w[0].best_score));
        let pairs: usize = s
            .records
            .iter()
            .filter(|r| r.child.is_some())
            .map(|r| r.mutate_types.len())
            .sum();
        assert_eq!(s.component_memory.len(), pairs.min(20 * 5));
        assert_eq!(s.population.len(), 4);
    }

    #[test]
    fn rng_state_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let _: u64 = rng.gen();
        let mut back = RngState::capture(&rng).restore().unwrap();
        assert_eq!(rng.gen::<u64>(), back.gen::<u64>());
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let cat = Catalog::default();

        let g_full = gateway(5);
        let mut full = Engine::new(setup(5, 2, 3), &g_full, &cat, &length_fitness).unwrap();
        full.run(None).unwrap();

        let g1 = gateway(5);
        let mut part = Engine::new(setup(5, 2, 3), &g1, &cat, &length_fitness)
            .unwrap()
            .checkpoint_to(&path);
        assert!(!part.run(Some(4)).unwrap());
        drop(part);

        let g2 = gateway(5);
        let state = RunState::load(&path).unwrap();
        let mut resumed = Engine::resume(state, &g2, &cat, &length_fitness).unwrap();
        assert!(resumed.run(None).unwrap());
        assert_eq!(resumed.into_state(), full.into_state());
    }
}
