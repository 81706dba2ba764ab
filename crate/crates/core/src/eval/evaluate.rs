use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{EvalError, Example, TaskAdapter};
use crate::genome::ComponentGenome;
use crate::llm::{ChatRequest, Gateway, Role, TASK_MAX_TOKENS};
use crate::Score;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub score: Score,
    /// Extracted answers in example order; `None` when extraction failed.
    pub predictions: Vec<Option<String>>,
    pub calls: usize,
}

/// Scores one prompt on `examples` through the target role of `gateway`.
///
/// Call indices are reserved up front, so results do not depend on how the
/// `workers` threads get scheduled.
/// One example's outcome: the extracted answer, if any, or a fatal error.
type Answer = Result<Option<String>, EvalError>;

pub fn evaluate(
    genome: &ComponentGenome,
    rendered: &str,
    examples: &[Example],
    adapter: &TaskAdapter,
    gateway: &Gateway,
    temperature: f64,
    workers: usize,
) -> Result<EvalOutcome, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let requests: Vec<ChatRequest> = examples
        .iter()
        .map(|ex| {
            ChatRequest::new(adapter.build_task_prompt(genome, rendered, ex))
                .with_temperature(temperature)
                .with_max_tokens(TASK_MAX_TOKENS)
        })
        .collect();
    let base = gateway.reserve(Role::Target, requests.len() as u64);
    let slots: Vec<Mutex<Option<Answer>>> =
        (0..requests.len()).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = workers.clamp(1, requests.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= requests.len() {
                    break;
                }
                let outcome = match gateway.generate_at(&requests[i], Role::Target, base + i as u64) {
                    Ok(resp) => Ok(adapter.extract_answer(&resp.text).ok()),
                    Err(e) if e.is_fatal() => Err(EvalError::Llm(e)),
                    Err(e) => {
                        log::warn!("example {i}: {e}; scored as incorrect");
                        Ok(None)
                    }
                };
                *slots[i].lock().expect("slot poisoned") = Some(outcome);
            });
        }
    });

    let mut predictions = Vec::with_capacity(slots.len());
    for slot in slots {
        let outcome = slot.into_inner().expect("slot poisoned").expect("every slot is filled");
        predictions.push(outcome?);
    }
    let golds: Vec<String> = examples.iter().map(|ex| adapter.canonical_gold(ex)).collect();
    let score = adapter.score(&predictions, &golds)?;
    Ok(EvalOutcome {
        score,
        predictions,
        calls: examples.len(),
    })
}

/// Development-set fitness over a fixed subsample.
pub struct DevFitness<'a> {
    pub adapter: &'a TaskAdapter,
    pub examples: Vec<Example>,
    pub gateway: &'a Gateway,
    pub temperature: f64,
    pub workers: usize,
}

impl DevFitness<'_> {
    pub fn score(&self, genome: &ComponentGenome, rendered: &str) -> Result<Score, EvalError> {
        evaluate(
            genome,
            rendered,
            &self.examples,
            self.adapter,
            self.gateway,
            self.temperature,
            self.workers,
        )
        .map(|o| o.score)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::eval::Metric;
    use crate::genome::Registry;
    use crate::llm::mock::MockBackend;

    fn examples() -> Vec<Example> {
        (0..20)
            .map(|i| {
                let label = if i % 3 == 0 { "positive" } else { "negative" };
                Example::new(format!("review {i} gold={label}"), label).unwrap()
            })
            .collect()
    }

    fn oracle_gateway(correct: bool) -> Gateway {
        let backend = MockBackend::new(1, move |req: &ChatRequest, _: &mut ChaCha8Rng| {
            let gold = req.user.split("gold=").nth(1)?.split_whitespace().next()?.to_string();
            let ans = match (correct, gold.as_str()) {
                (true, g) => g.to_string(),
                (false, "positive") => "negative".into(),
                (false, _) => "positive".into(),
            };
            Some(format!("<ans>{ans}</ans>"))
        });
        Gateway::builder(Arc::new(backend)).build()
    }

    fn run(gw: &Gateway, workers: usize) -> EvalOutcome {
        let a = TaskAdapter::classification(&["negative", "positive"], Metric::Accuracy).unwrap();
        let g = ComponentGenome::empty(&Registry::default());
        evaluate(&g, "Classify.", &examples(), &a, gw, 0.5, workers).unwrap()
    }

    #[test]
    fn oracle_target_scores_one() {
        assert_eq!(run(&oracle_gateway(true), 4).score, 1.0);
    }

    #[test]
    fn always_wrong_scores_zero() {
        assert_eq!(run(&oracle_gateway(false), 4).score, 0.0);
    }

    #[test]
    fn concurrency_does_not_change_results() {
        let gw = Gateway::builder(Arc::new(MockBackend::new(9, crate::llm::mock::OfflineResponder))).build();
        let a = run(&gw, 1);
        let gw = Gateway::builder(Arc::new(MockBackend::new(9, crate::llm::mock::OfflineResponder))).build();
        let b = run(&gw, 8);
        assert_eq!(a, b);
        assert_eq!(gw.usage().role(Role::Target).calls, 20);
    }
}
