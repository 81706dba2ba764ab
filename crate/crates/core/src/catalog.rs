//! Versioned meta-prompt texts sent to the optimizer LLM.
//!
//! Each text starts with a `## meta-task: <id>` line identifying it, and
//! uses `{{var}}` placeholders. The embedded `v1` set can be replaced by a
//! directory holding files with the same names.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::memory::MemoryForm;

pub const CATALOG_VERSION: &str = "v1";

/// System message attached to every meta-prompt.
pub const OPTIMIZER_SYSTEM: &str =
    "You are an expert prompt engineer who improves prompts for large language models.";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("meta-prompt {kind:?} has no value for placeholder {var:?}")]
    MissingVar { kind: MetaPrompt, var: String },
    #[error("meta-prompt {kind:?} has an unterminated placeholder")]
    Unterminated { kind: MetaPrompt },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MetaPrompt {
    /// Candidate values for one component type.
    ComponentValues,
    /// Which component types of one prompt to mutate.
    SelectComponents,
    /// Per-type choice between two parents' values.
    ChooseValues,
    /// Mutation of selected components of one prompt.
    MutateComponents(MemoryForm),
    /// Mutation of two parents' components followed by crossover.
    MutateCrossover(MemoryForm),
}

impl MetaPrompt {
    pub const ALL: [MetaPrompt; 7] = [
        MetaPrompt::ComponentValues,
        MetaPrompt::SelectComponents,
        MetaPrompt::ChooseValues,
        MetaPrompt::MutateComponents(MemoryForm::Discrete),
        MetaPrompt::MutateComponents(MemoryForm::Continuous),
        MetaPrompt::MutateCrossover(MemoryForm::Discrete),
        MetaPrompt::MutateCrossover(MemoryForm::Continuous),
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            MetaPrompt::ComponentValues => "component_values.txt",
            MetaPrompt::SelectComponents => "select_components.txt",
            MetaPrompt::ChooseValues => "choose_values.txt",
            MetaPrompt::MutateComponents(MemoryForm::Discrete) => "mutate_components_discrete.txt",
            MetaPrompt::MutateComponents(MemoryForm::Continuous) => "mutate_components_continuous.txt",
            MetaPrompt::MutateCrossover(MemoryForm::Discrete) => "mutate_crossover_discrete.txt",
            MetaPrompt::MutateCrossover(MemoryForm::Continuous) => "mutate_crossover_continuous.txt",
        }
    }

    /// First line of the text, used by mocks to recognise the request.
    pub fn marker(self) -> &'static str {
        match self {
            MetaPrompt::ComponentValues => "## meta-task: component-values",
            MetaPrompt::SelectComponents => "## meta-task: select-components",
            MetaPrompt::ChooseValues => "## meta-task: choose-values",
            MetaPrompt::MutateComponents(_) => "## meta-task: mutate-components",
            MetaPrompt::MutateCrossover(_) => "## meta-task: mutate-and-crossover",
        }
    }

    fn embedded(self) -> &'static str {
        match self {
            MetaPrompt::ComponentValues => include_str!("../catalog/v1/component_values.txt"),
            MetaPrompt::SelectComponents => include_str!("../catalog/v1/select_components.txt"),
            MetaPrompt::ChooseValues => include_str!("../catalog/v1/choose_values.txt"),
            MetaPrompt::MutateComponents(MemoryForm::Discrete) => {
                include_str!("../catalog/v1/mutate_components_discrete.txt")
            }
            MetaPrompt::MutateComponents(MemoryForm::Continuous) => {
                include_str!("../catalog/v1/mutate_components_continuous.txt")
            }
            MetaPrompt::MutateCrossover(MemoryForm::Discrete) => {
                include_str!("../catalog/v1/mutate_crossover_discrete.txt")
            }
            MetaPrompt::MutateCrossover(MemoryForm::Continuous) => {
                include_str!("../catalog/v1/mutate_crossover_continuous.txt")
            }
        }
    }

    /// Identifies which meta-prompt a request text was built from.
    pub fn detect(text: &str) -> Option<MetaPrompt> {
        let first = text.lines().next()?.trim();
        [
            MetaPrompt::ComponentValues,
            MetaPrompt::SelectComponents,
            MetaPrompt::ChooseValues,
            MetaPrompt::MutateComponents(MemoryForm::Discrete),
            MetaPrompt::MutateCrossover(MemoryForm::Discrete),
        ]
        .into_iter()
        .find(|k| k.marker() == first)
    }
}

#[derive(Debug, Clone)]
pub struct Catalog {
    version: String,
    texts: BTreeMap<MetaPrompt, String>,
}

impl Default for Catalog {
    fn default() -> Self {
        Self {
            version: CATALOG_VERSION.to_string(),
            texts: MetaPrompt::ALL.iter().map(|k| (*k, k.embedded().to_string())).collect(),
        }
    }
}

impl Catalog {
    /// Loads overrides from `dir`; files that are absent keep the embedded
    /// text.
    pub fn load_dir(dir: &Path, version: impl Into<String>) -> Result<Self, CatalogError> {
        let mut cat = Self {
            version: version.into(),
            ..Self::default()
        };
        for kind in MetaPrompt::ALL {
            let path = dir.join(kind.file_name());
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|source| CatalogError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                cat.texts.insert(kind, text);
            }
        }
        Ok(cat)
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn text(&self, kind: MetaPrompt) -> &str {
        &self.texts[&kind]
    }

    /// Substitutes every `{{var}}` in one pass; substituted values are not
    /// rescanned.
    pub fn fill(&self, kind: MetaPrompt, vars: &[(&str, &str)]) -> Result<String, CatalogError> {
        let text = self.text(kind);
        let mut out = String::with_capacity(text.len() * 2);
        let mut rest = text;
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after.find("}}").ok_or(CatalogError::Unterminated { kind })?;
            let var = &after[..end];
            let value = vars
                .iter()
                .find(|(k, _)| *k == var)
                .map(|(_, v)| *v)
                .ok_or_else(|| CatalogError::MissingVar { kind, var: var.to_string() })?;
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}
