use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use super::direction::{parse_choices, parse_selection, partition_directions, Direction1, Direction2, ParentSide};
use super::{EvolutionConfig, EvolutionError};
use crate::catalog::{Catalog, MetaPrompt, OPTIMIZER_SYSTEM};
use crate::genome::{extract_first, wrap, ComponentGenome, Registry, ScoredPrompt};
use crate::llm::{ChatRequest, Gateway, LlmError, Role, META_MAX_TOKENS};
use crate::memory::{ComponentMemory, MemoryForm, PromptMemory, NO_COMPONENT_HISTORY, NO_PROMPT_HISTORY};

/// Read-only view of the run that one iteration needs.
pub struct StepContext<'a> {
    pub task: &'a str,
    pub registry: &'a Registry,
    pub catalog: &'a Catalog,
    pub gateway: &'a Gateway,
    pub config: &'a EvolutionConfig,
    pub component_memory: &'a ComponentMemory,
    pub prompt_memory: &'a PromptMemory,
}

/// Runs the direction and solution meta-tasks of one iteration, collecting
/// a note for every fallback taken.
pub struct Evolver<'a> {
    ctx: StepContext<'a>,
    events: Vec<String>,
}

impl<'a> Evolver<'a> {
    pub fn new(ctx: StepContext<'a>) -> Self {
        Self { ctx, events: Vec::new() }
    }

    pub fn events(&self) -> &[String] {
        &self.events
    }

    pub fn into_events(self) -> Vec<String> {
        self.events
    }

    fn note(&mut self, msg: String) {
        log::info!("{msg}");
        self.events.push(msg);
    }

    /// `None` for replies that cannot be used; fatal backend errors abort.
    fn ask(&self, user: String) -> Result<Option<String>, EvolutionError> {
        let req = ChatRequest::new(user)
            .with_system(OPTIMIZER_SYSTEM)
            .with_temperature(self.ctx.config.temperature)
            .with_max_tokens(META_MAX_TOKENS);
        match self.ctx.gateway.generate(&req, Role::Optimizer) {
            Ok(resp) => Ok(Some(resp.text)),
            Err(e) if e.is_fatal() || matches!(e, LlmError::InvalidRequest(_)) => Err(e.into()),
            Err(e) => {
                log::warn!("optimizer reply unusable: {e}");
                Ok(None)
            }
        }
    }

    fn component_context<'t>(&self, types: impl IntoIterator<Item = &'t str>) -> String {
        if self.ctx.config.guided {
            self.ctx.component_memory.context(types, self.ctx.config.component_context_k)
        } else {
            format!("{NO_COMPONENT_HISTORY}\n")
        }
    }

    fn prompt_context(&self) -> String {
        if self.ctx.config.guided {
            self.ctx
                .prompt_memory
                .context(self.ctx.config.memory_form, self.ctx.config.prompt_context_k, self.ctx.registry)
        } else {
            format!("{NO_PROMPT_HISTORY}\n")
        }
    }

    fn listing(&self, p: &ScoredPrompt) -> String {
        match self.ctx.config.memory_form {
            MemoryForm::Discrete => discrete_listing(&p.genome, self.ctx.registry),
            MemoryForm::Continuous => p.rendered().trim_end().to_string(),
        }
    }

    /// Which components of `p` to mutate.
    pub fn subtask1<R: Rng + ?Sized>(&mut self, p: &ScoredPrompt, rng: &mut R) -> Result<Direction1, EvolutionError> {
        let registry = self.ctx.registry;
        let types: String = registry
            .types()
            .iter()
            .map(|t| format!("- {} ({}): {}", t.name, t.category.label(), t.description))
            .collect::<Vec<_>>()
            .join("\n");
        let max = self.ctx.config.max_mutations.min(registry.len());
        let user = self.ctx.catalog.fill(
            MetaPrompt::SelectComponents,
            &[
                ("task", self.ctx.task),
                ("component_types", &types),
                ("component_memory", self.component_context(registry.names()).trim_end()),
                ("current", &discrete_listing(&p.genome, registry)),
                ("max_mutations", &max.to_string()),
            ],
        )?;
        for _ in 0..self.ctx.config.parse_attempts {
            if let Some(reply) = self.ask(user.clone())? {
                if let Some(mutate_types) = parse_selection(&reply, registry, max) {
                    return Ok(Direction1 { mutate_types });
                }
            }
        }
        let names: Vec<&str> = registry.names().collect();
        let pick = names[rng.gen_range(0..names.len())].to_string();
        self.note(format!("select-components for prompt {}: no usable reply, mutating {pick}", p.id));
        Ok(Direction1 { mutate_types: BTreeSet::from([pick]) })
    }

    /// Directions for both parents, their partition, and the parent choice
    /// for every type outside the intersection.
    pub fn subtask2<R: Rng + ?Sized>(
        &mut self,
        p1: &ScoredPrompt,
        p2: &ScoredPrompt,
        rng: &mut R,
    ) -> Result<Direction2, EvolutionError> {
        let c1 = self.subtask1(p1, rng)?.mutate_types;
        let c2 = self.subtask1(p2, rng)?.mutate_types;
        let (mutate_types, rest) = partition_directions(&c1, &c2, self.ctx.registry, rng);
        if c1.is_disjoint(&c2) {
            self.note(format!(
                "directions of prompts {} and {} do not overlap, evolving {:?}",
                p1.id, p2.id, mutate_types
            ));
        }
        let default_side = stronger(p1, p2);
        let mut fixed = BTreeMap::new();
        let mut contested = Vec::new();
        for t in &rest {
            if p1.genome.get(t) == p2.genome.get(t) {
                fixed.insert(t.clone(), ParentSide::First);
            } else {
                contested.push(t.as_str());
            }
        }
        let batches: Vec<Vec<&str>> = if self.ctx.config.batched_choice {
            if contested.is_empty() { vec![] } else { vec![contested.clone()] }
        } else {
            contested.iter().map(|t| vec![*t]).collect()
        };
        for batch in batches {
            let chosen = self.choose(p1, p2, &batch)?;
            for t in batch {
                let side = match chosen.get(t) {
                    Some(side) => *side,
                    None => {
                        self.note(format!("choose-values: no choice for {t}, keeping the stronger parent's value"));
                        default_side
                    }
                };
                fixed.insert(t.to_string(), side);
            }
        }
        Ok(Direction2 { mutate_types, fixed })
    }

    fn choose(
        &mut self,
        p1: &ScoredPrompt,
        p2: &ScoredPrompt,
        types: &[&str],
    ) -> Result<BTreeMap<String, ParentSide>, EvolutionError> {
        let pairs: String = types
            .iter()
            .map(|t| {
                format!(
                    "- {t}:\n  prompt 1: {}\n  prompt 2: {}",
                    wrap(t, p1.genome.get(t).unwrap_or("")),
                    wrap(t, p2.genome.get(t).unwrap_or(""))
                )
            })
            .collect::<Vec<_>>()
            .join("\n");
        let user = self.ctx.catalog.fill(
            MetaPrompt::ChooseValues,
            &[
                ("task", self.ctx.task),
                ("component_memory", self.component_context(types.iter().copied()).trim_end()),
                ("pairs", &pairs),
            ],
        )?;
        let mut out = BTreeMap::new();
        for _ in 0..self.ctx.config.parse_attempts {
            if let Some(reply) = self.ask(user.clone())? {
                for (t, side) in parse_choices(&reply, types.iter().copied()) {
                    out.entry(t).or_insert(side);
                }
            }
            if out.len() == types.len() {
                break;
            }
        }
        Ok(out)
    }

    /// Mutates the components in `d`; every other value is copied from `p`.
    pub fn subsolution1(&mut self, p: &ScoredPrompt, d: &Direction1) -> Result<ComponentGenome, EvolutionError> {
        let targets: Vec<&str> = d.mutate_types.iter().map(String::as_str).collect();
        let form = self.ctx.config.memory_form;
        let user = self.ctx.catalog.fill(
            MetaPrompt::MutateComponents(form),
            &[
                ("task", self.ctx.task),
                ("prompt_memory", self.prompt_context().trim_end()),
                ("current", &self.listing(p)),
                ("targets", &targets.join(", ")),
                ("target_example", &target_example(&targets)),
            ],
        )?;
        let got = self.collect_values(&user, &targets, false)?;
        let mut child = p.genome.clone();
        for t in targets {
            match got.get(t) {
                Some(v) => child = child.with_value(self.ctx.registry, t, v.clone())?,
                None => self.note(format!("mutate-components: no value for {t}, keeping the parent's")),
            }
        }
        Ok(child)
    }

    /// Fixed types come from the chosen parent; the others are mutated in
    /// both parents and crossed over.
    pub fn subsolution2(
        &mut self,
        p1: &ScoredPrompt,
        p2: &ScoredPrompt,
        d: &Direction2,
    ) -> Result<ComponentGenome, EvolutionError> {
        let registry = self.ctx.registry;
        let base = match stronger(p1, p2) {
            ParentSide::First => p1,
            ParentSide::Second => p2,
        };
        let mut child = base.genome.clone();
        for (t, side) in &d.fixed {
            let from = match side {
                ParentSide::First => p1,
                ParentSide::Second => p2,
            };
            child = child.with_value(registry, t, from.genome.get(t).unwrap_or(""))?;
        }
        let fixed: String = d
            .fixed
            .keys()
            .map(|t| wrap(t, child.get(t).unwrap_or("")))
            .collect::<Vec<_>>()
            .join("\n");
        let targets: Vec<&str> = d.mutate_types.iter().map(String::as_str).collect();
        let user = self.ctx.catalog.fill(
            MetaPrompt::MutateCrossover(self.ctx.config.memory_form),
            &[
                ("task", self.ctx.task),
                ("prompt_memory", self.prompt_context().trim_end()),
                ("score1", &format!("{:.4}", p1.score)),
                ("prompt1", &self.listing(p1)),
                ("score2", &format!("{:.4}", p2.score)),
                ("prompt2", &self.listing(p2)),
                ("fixed", if fixed.is_empty() { "(none)" } else { &fixed }),
                ("targets", &targets.join(", ")),
                ("target_example", &target_example(&targets)),
            ],
        )?;
        let got = self.collect_values(&user, &targets, true)?;
        for t in targets {
            match got.get(t) {
                Some(v) => child = child.with_value(registry, t, v.clone())?,
                None => self.note(format!(
                    "mutate-and-crossover: no value for {t}, keeping the stronger parent's"
                )),
            }
        }
        Ok(child)
    }

    /// Asks until every target has a usable value or attempts run out.
    fn collect_values(
        &mut self,
        user: &str,
        targets: &[&str],
        crossover: bool,
    ) -> Result<BTreeMap<String, String>, EvolutionError> {
        let mut got = BTreeMap::new();
        for _ in 0..self.ctx.config.parse_attempts {
            if let Some(reply) = self.ask(user.to_string())? {
                let body = if crossover {
                    extract_first(&reply, "crossover").ok().flatten().unwrap_or(reply)
                } else {
                    reply
                };
                for t in targets {
                    if got.contains_key(*t) {
                        continue;
                    }
                    if let Ok(Some(v)) = extract_first(&body, t) {
                        if !v.is_empty() && self.ctx.registry.check_value(t, &v).is_ok() {
                            got.insert(t.to_string(), v);
                        }
                    }
                }
            }
            if got.len() == targets.len() {
                break;
            }
        }
        Ok(got)
    }
}

/// Parent whose value wins by default: the higher-scoring one, the first on
/// a tie.
pub(crate) fn stronger(p1: &ScoredPrompt, p2: &ScoredPrompt) -> ParentSide {
    if p2.score > p1.score {
        ParentSide::Second
    } else {
        ParentSide::First
    }
}

/// One `<type>value</type>` line per registered type.
pub(crate) fn discrete_listing(genome: &ComponentGenome, registry: &Registry) -> String {
    registry
        .names()
        .map(|n| wrap(n, genome.get(n).unwrap_or("")))
        .collect::<Vec<_>>()
        .join("\n")
}

fn target_example(targets: &[&str]) -> String {
    targets
        .iter()
        .map(|t| wrap(t, &format!("new {} value", t.replace('_', " "))))
        .collect::<Vec<_>>()
        .join("\n")
}
