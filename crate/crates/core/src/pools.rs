//! Candidate-value pools, generated once per task by the optimizer model.

use thiserror::Error;

use crate::catalog::{Catalog, CatalogError, MetaPrompt, OPTIMIZER_SYSTEM};
use crate::genome::{extract_all, ComponentType, Registry};
use crate::llm::{ChatRequest, Gateway, LlmError, Role};

/// Ten long values do not fit the usual meta-prompt budget.
const POOL_MAX_TOKENS: u32 = 2048;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("got {got} of {want} usable values for {ctype:?} after {attempts} attempt(s)")]
    Exhausted {
        ctype: String,
        want: usize,
        got: usize,
        attempts: u32,
    },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

/// Asks for `count` values of one type, re-asking up to `attempts` times
/// until enough distinct, well-formed values have been collected.
#[allow(clippy::too_many_arguments)]
pub fn generate_values(
    gateway: &Gateway,
    catalog: &Catalog,
    registry: &Registry,
    task: &str,
    ctype: &ComponentType,
    count: usize,
    attempts: u32,
    temperature: f64,
) -> Result<Vec<String>, PoolError> {
    let category = ctype.category.to_string();
    let count_text = count.to_string();
    let user = catalog.fill(
        MetaPrompt::ComponentValues,
        &[
            ("task", task),
            ("name", &ctype.name),
            ("category", &category),
            ("description", &ctype.description),
            ("count", &count_text),
        ],
    )?;
    let req = ChatRequest::new(user)
        .with_system(OPTIMIZER_SYSTEM)
        .with_temperature(temperature)
        .with_max_tokens(POOL_MAX_TOKENS);
    let mut values: Vec<String> = Vec::new();
    for attempt in 1..=attempts.max(1) {
        let reply = match gateway.generate(&req, Role::Optimizer) {
            Ok(r) => r.text,
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => {
                log::warn!("{}: attempt {attempt}: {e}", ctype.name);
                continue;
            }
        };
        for v in extract_all(&reply, &ctype.name) {
            if !v.is_empty() && registry.check_value(&ctype.name, &v).is_ok() && !values.contains(&v) {
                values.push(v);
            }
        }
        if values.len() >= count {
            values.truncate(count);
            return Ok(values);
        }
        log::warn!("{}: attempt {attempt} left {} of {count} values", ctype.name, values.len());
    }
    Err(PoolError::Exhausted {
        ctype: ctype.name.clone(),
        want: count,
        got: values.len(),
        attempts: attempts.max(1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::mock::{MockBackend, OfflineResponder};
    use std::sync::Arc;

    #[test]
    fn offline_pools_are_full_and_deterministic() {
        let r = Registry::default();
        let cat = Catalog::default();
        let run = || {
            let gw = Gateway::builder(Arc::new(MockBackend::new(7, OfflineResponder))).build();
            r.types()
                .iter()
                .map(|t| generate_values(&gw, &cat, &r, "toy", t, 10, 3, 0.5).unwrap())
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|v| v.len() == 10));
        assert_eq!(a, run());
    }

    #[test]
    fn short_replies_exhaust() {
        let r = Registry::default();
        let gw = Gateway::builder(Arc::new(MockBackend::new(0, |_: &ChatRequest, _: &mut _| {
            Some("<role>only one</role>".to_string())
        })))
        .build();
        let err = generate_values(&gw, &Catalog::default(), &r, "t", &r.types()[0], 3, 2, 0.5).unwrap_err();
        assert!(matches!(err, PoolError::Exhausted { got: 1, attempts: 2, .. }));
        assert_eq!(gw.usage().role(Role::Optimizer).calls, 2);
    }
}
