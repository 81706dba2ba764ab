//! Turns a config into the services a command needs.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use delvepo_core::catalog::Catalog;
use delvepo_core::config::Config;
use delvepo_core::eval::{load_examples, Split};
use delvepo_core::genome::{ComponentPools, PromptTemplate};
use delvepo_core::llm::http::OpenAiBackend;
use delvepo_core::llm::mock::{mock_policy, MockBackend, MockScript, OfflineResponder};
use delvepo_core::llm::{Backend, Gateway};

use crate::Common;

pub struct Setup {
    pub cfg: Config,
    pub out: PathBuf,
    pub mock: bool,
}

impl Setup {
    pub fn load(common: &Common, extra: &[String]) -> Result<Self> {
        let overrides: Vec<String> = common.overrides.iter().chain(extra).cloned().collect();
        let cfg = Config::load(&common.config, &overrides)
            .with_context(|| format!("loading {}", common.config.display()))?;
        let out = match &common.out {
            Some(p) => p.clone(),
            None => cfg.resolve(&cfg.run.out).unwrap_or_else(|| PathBuf::from("runs")),
        };
        Ok(Self { cfg, out, mock: common.mock })
    }

    pub fn pools_path(&self) -> PathBuf {
        self.cfg.resolve(&self.cfg.pools.path).unwrap_or_else(|| self.out.join("pools.json"))
    }

    /// Pools from disk, with the null value added when configured.
    pub fn pools(&self) -> Result<ComponentPools> {
        let path = self.pools_path();
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading pools {} (run `delvepo init` first)", path.display()))?;
        let mut pools: ComponentPools =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if self.cfg.pools.include_null {
            for name in self.cfg.registry.names() {
                let pool = pools.values.entry(name.to_string()).or_default();
                if !pool.iter().any(String::is_empty) {
                    pool.push(String::new());
                }
            }
        }
        pools.validate(&self.cfg.registry)?;
        Ok(pools)
    }

    pub fn template(&self) -> Result<PromptTemplate> {
        match self.cfg.resolve(&self.cfg.template.path) {
            Some(p) => {
                let src = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                Ok(PromptTemplate::parse(&src, &self.cfg.registry)?)
            }
            None => Ok(PromptTemplate::default_for(&self.cfg.registry)?),
        }
    }

    pub fn catalog(&self) -> Result<Catalog> {
        match self.cfg.resolve(&self.cfg.run.catalog_dir) {
            Some(dir) => {
                let version = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                Ok(Catalog::load_dir(&dir, version)?)
            }
            None => Ok(Catalog::default()),
        }
    }

    /// Dev/test split for one seed. A single data file is split with the
    /// seed; separate files are used as given.
    pub fn split(&self, seed: u64) -> Result<Split> {
        let d = &self.cfg.data;
        let load = |p: &Path| load_examples(p, &d.columns).with_context(|| format!("loading {}", p.display()));
        match (self.cfg.resolve(&d.path), self.cfg.resolve(&d.dev_path), self.cfg.resolve(&d.test_path)) {
            (_, Some(dev), Some(test)) => Ok(Split::explicit(load(&dev)?, load(&test)?)),
            (Some(all), _, _) => Ok(Split::random(load(&all)?, d.test_size, seed)?),
            _ => bail!("no dataset configured: set data.path, or data.dev_path and data.test_path"),
        }
    }

    pub fn gateway(&self, seed: u64) -> Result<Gateway> {
        let llm = &self.cfg.llm;
        let optimizer: Arc<dyn Backend> = if self.mock {
            self.mock_backend(seed)?
        } else {
            Arc::new(OpenAiBackend::from_env(&llm.base_url, &llm.model, Duration::from_secs(llm.timeout_secs))?)
        };
        let mut builder = Gateway::builder(optimizer)
            .retry(llm.retry.clone())
            .max_in_flight(llm.max_in_flight)
            .reasoning_tag(Some(llm.reasoning_tag.clone()).filter(|t| !t.is_empty()));
        if !self.mock && (!llm.target_base_url.is_empty() || !llm.target_model.is_empty()) {
            let url = if llm.target_base_url.is_empty() { &llm.base_url } else { &llm.target_base_url };
            let model = if llm.target_model.is_empty() { &llm.model } else { &llm.target_model };
            builder = builder.target(Arc::new(OpenAiBackend::from_env(
                url,
                model,
                Duration::from_secs(llm.timeout_secs),
            )?));
        }
        Ok(builder.build())
    }

    fn mock_backend(&self, seed: u64) -> Result<Arc<dyn Backend>> {
        Ok(match self.cfg.resolve(&self.cfg.llm.mock_script) {
            Some(p) => Arc::new(mock_policy(seed, &MockScript::load(&p)?)?),
            None => Arc::new(MockBackend::new(seed, OfflineResponder)),
        })
    }
}
