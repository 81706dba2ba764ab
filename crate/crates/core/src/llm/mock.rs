//! Deterministic offline backends.
//!
//! A [`MockBackend`] answers through a [`Responder`]. Every answer is a
//! pure function of the request, the mock seed and the call index: the
//! responder receives an RNG derived from those three values only.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{estimate_tokens, AttemptError, Backend, ChatRequest, ChatResponse, LlmError};
use crate::catalog::MetaPrompt;

/// Produces a reply for a request, or `None` when it does not know how.
pub trait Responder: Send + Sync {
    fn respond(&self, req: &ChatRequest, rng: &mut ChaCha8Rng) -> Option<String>;
}

impl<F> Responder for F
where
    F: Fn(&ChatRequest, &mut ChaCha8Rng) -> Option<String> + Send + Sync,
{
    fn respond(&self, req: &ChatRequest, rng: &mut ChaCha8Rng) -> Option<String> {
        self(req, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unmatched {
    #[default]
    Error,
    /// Reply with the request's user text.
    Echo,
}

/// Hex SHA-256 of the system and user text; keys fixture tables.
pub fn request_hash(req: &ChatRequest) -> String {
    let mut h = Sha256::new();
    h.update(req.system.as_bytes());
    h.update([0u8]);
    h.update(req.user.as_bytes());
    hex::encode(h.finalize())
}

fn derive_rng(seed: u64, call_index: u64, req: &ChatRequest) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(call_index.to_le_bytes());
    h.update(request_hash(req).as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

pub struct MockBackend<R> {
    seed: u64,
    responder: R,
    unmatched: Unmatched,
    model: String,
}

impl<R: Responder> MockBackend<R> {
    pub fn new(seed: u64, responder: R) -> Self {
        Self {
            seed,
            responder,
            unmatched: Unmatched::Error,
            model: "mock".into(),
        }
    }

    pub fn unmatched(mut self, policy: Unmatched) -> Self {
        self.unmatched = policy;
        self
    }

    pub fn responder(&self) -> &R {
        &self.responder
    }

    /// The reply this mock gives, without going through a gateway.
    pub fn reply(&self, req: &ChatRequest, call_index: u64) -> Result<String, AttemptError> {
        let mut rng = derive_rng(self.seed, call_index, req);
        match self.responder.respond(req, &mut rng) {
            Some(text) => Ok(text),
            None => match self.unmatched {
                Unmatched::Echo => Ok(req.user.clone()),
                Unmatched::Error => Err(AttemptError::Unmatched(preview(&req.user))),
            },
        }
    }
}

fn preview(text: &str) -> String {
    let line = text.lines().next().unwrap_or("");
    line.chars().take(80).collect()
}

impl<R: Responder> Backend for MockBackend<R> {
    fn complete(&self, req: &ChatRequest, call_index: u64) -> Result<ChatResponse, AttemptError> {
        let text = self.reply(req, call_index)?;
        Ok(ChatResponse {
            prompt_tokens: estimate_tokens(&req.system) + estimate_tokens(&req.user),
            completion_tokens: estimate_tokens(&text),
            text,
            latency_ms: 0,
        })
    }

    fn model_id(&self) -> &str {
        &self.model
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedReply {
    pub weight: f64,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    /// Regex searched in the user text.
    pub pattern: String,
    #[serde(default)]
    pub response: Option<String>,
    #[serde(default)]
    pub distribution: Vec<WeightedReply>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub request_hash: String,
    pub response: String,
}

/// Fixture file contents: exact-request fixtures first, then regex rules in
/// order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub unmatched: Unmatched,
    #[serde(default)]
    pub fixtures: Vec<Fixture>,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
}

impl MockScript {
    /// Reads a TOML (or, by extension, JSON) fixture file.
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| LlmError::Config(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| LlmError::Config(e.to_string()))
        }
    }
}

enum Reply {
    Fixed(String),
    Weighted(Vec<(f64, String)>),
}

pub struct ScriptedResponder {
    fixtures: BTreeMap<String, String>,
    rules: Vec<(Regex, Reply)>,
}

impl ScriptedResponder {
    pub fn new(script: &MockScript) -> Result<Self, LlmError> {
        let mut rules = Vec::with_capacity(script.rules.len());
        for rule in &script.rules {
            let re = Regex::new(&rule.pattern)
                .map_err(|e| LlmError::Config(format!("pattern {:?}: {e}", rule.pattern)))?;
            let reply = match (&rule.response, rule.distribution.is_empty()) {
                (Some(text), true) => Reply::Fixed(text.clone()),
                (None, false) => {
                    if rule.distribution.iter().any(|w| w.weight < 0.0 || !w.weight.is_finite())
                        || rule.distribution.iter().all(|w| w.weight == 0.0)
                    {
                        return Err(LlmError::Config(format!(
                            "pattern {:?}: weights must be non-negative with a positive sum",
                            rule.pattern
                        )));
                    }
                    Reply::Weighted(
                        rule.distribution
                            .iter()
                            .map(|w| (w.weight, w.response.clone()))
                            .collect(),
                    )
                }
                _ => {
                    return Err(LlmError::Config(format!(
                        "pattern {:?}: give exactly one of `response` or `distribution`",
                        rule.pattern
                    )))
                }
            };
            rules.push((re, reply));
        }
        Ok(Self {
            fixtures: script
                .fixtures
                .iter()
                .map(|f| (f.request_hash.clone(), f.response.clone()))
                .collect(),
            rules,
        })
    }
}

impl Responder for ScriptedResponder {
    fn respond(&self, req: &ChatRequest, rng: &mut ChaCha8Rng) -> Option<String> {
        if let Some(text) = self.fixtures.get(&request_hash(req)) {
            return Some(text.clone());
        }
        let (_, reply) = self.rules.iter().find(|(re, _)| re.is_match(&req.user))?;
        match reply {
            Reply::Fixed(text) => Some(text.clone()),
            Reply::Weighted(options) => {
                let total: f64 = options.iter().map(|(w, _)| w).sum();
                let mut u = rng.gen::<f64>() * total;
                for (w, text) in options {
                    if u < *w {
                        return Some(text.clone());
                    }
                    u -= w;
                }
                options.iter().rev().find(|(w, _)| *w > 0.0).map(|(_, t)| t.clone())
            }
        }
    }
}

/// Mock backend driven by a fixture script.
pub fn mock_policy(seed: u64, script: &MockScript) -> Result<MockBackend<ScriptedResponder>, LlmError> {
    Ok(MockBackend::new(seed, ScriptedResponder::new(script)?).unmatched(script.unmatched))
}

/// Answers every built-in meta-prompt and task prompt with structurally
/// valid but content-free replies. Used for dry runs of the whole pipeline.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineResponder;

impl Responder for OfflineResponder {
    fn respond(&self, req: &ChatRequest, rng: &mut ChaCha8Rng) -> Option<String> {
        let text = &req.user;
        let Some(kind) = MetaPrompt::detect(text) else {
            return Some(answer_task(text, rng));
        };
        let reply = match kind {
            MetaPrompt::ComponentValues => {
                let name = line_value(text, "Component type:")?;
                let count: usize = text
                    .split("Generate ")
                    .nth(1)
                    .and_then(|s| s.split_whitespace().next())
                    .and_then(|n| n.parse().ok())
                    .unwrap_or(10);
                (0..count)
                    .map(|i| format!("<{name}>{} option {} #{}</{name}>", name.replace('_', " "), i + 1, rng.gen_range(0..1000)))
                    .collect::<Vec<_>>()
                    .join("\n")
            }
            MetaPrompt::SelectComponents => {
                let types = bullet_names(section(text, "Component types:"));
                if types.is_empty() {
                    return None;
                }
                let max: usize = text
                    .split("Choose between 1 and ")
                    .nth(1)
                    .and_then(|s| s.split_whitespace().next())
                    .and_then(|n| n.parse().ok())
                    .unwrap_or(1);
                let n = rng.gen_range(1..=max.clamp(1, types.len()));
                let mut picked = Vec::new();
                while picked.len() < n {
                    let t = &types[rng.gen_range(0..types.len())];
                    if !picked.contains(t) {
                        picked.push(t.clone());
                    }
                }
                let list: Vec<String> = picked.iter().map(|t| format!("<{t}>")).collect();
                format!("mutate: {}", list.join(", "))
            }
            MetaPrompt::ChooseValues => bullet_names(section(text, "hold different values:"))
                .iter()
                .map(|t| format!("{t}: from prompt {}", rng.gen_range(1..=2)))
                .collect::<Vec<_>>()
                .join("\n"),
            MetaPrompt::MutateComponents(_) => {
                let targets = line_value(text, "Components to mutate:")?;
                fresh_values(&targets, rng)
            }
            MetaPrompt::MutateCrossover(_) => {
                let targets = line_value(text, "Components to evolve:")?;
                format!("<crossover>\n{}\n</crossover>", fresh_values(&targets, rng))
            }
        };
        Some(reply)
    }
}

fn line_value(text: &str, key: &str) -> Option<String> {
    text.lines()
        .find_map(|l| l.strip_prefix(key))
        .map(|v| v.trim().to_string())
}

fn section<'a>(text: &'a str, header: &str) -> &'a str {
    let Some(start) = text.find(header) else { return "" };
    let body = &text[start + header.len()..];
    let body = body.trim_start_matches(['\n', '\r']);
    let end = body.find("\n\n").unwrap_or(body.len());
    &body[..end]
}

fn bullet_names(block: &str) -> Vec<String> {
    block
        .lines()
        .filter_map(|l| l.strip_prefix("- "))
        .filter_map(|l| l.split([' ', ':']).next())
        .filter(|n| !n.is_empty())
        .map(str::to_string)
        .collect()
}

fn fresh_values(targets: &str, rng: &mut ChaCha8Rng) -> String {
    targets
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| format!("<{t}>revised {} #{}</{t}>", t.replace('_', " "), rng.gen_range(0..1000)))
        .collect::<Vec<_>>()
        .join("\n")
}

fn answer_task(text: &str, rng: &mut ChaCha8Rng) -> String {
    if let Some(labels) = line_value(text, "Possible answers:") {
        let labels: Vec<&str> = labels.split('|').map(str::trim).filter(|l| !l.is_empty()).collect();
        if !labels.is_empty() {
            return format!("<ans>{}</ans>", labels[rng.gen_range(0..labels.len())]);
        }
    }
    let input = section(text, "### Input");
    let words: Vec<&str> = input.split_whitespace().take(12).collect();
    format!("<ans>{}</ans>", words.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn script() -> MockScript {
        toml::from_str(
            r#"
            unmatched = "echo"

            [[rules]]
            pattern = "mutate role"
            response = "<role>Expert Linguist</role>"

            [[rules]]
            pattern = "coin"
            distribution = [
                { weight = 0.7, response = "improve" },
                { weight = 0.3, response = "degrade" },
            ]
            "#,
        )
        .unwrap()
    }

    #[test]
    fn fixture_by_request_hash() {
        let req = ChatRequest::new("h1");
        let s = MockScript {
            fixtures: vec![Fixture {
                request_hash: request_hash(&req),
                response: "<role>X</role>".into(),
            }],
            ..Default::default()
        };
        let m = mock_policy(0, &s).unwrap();
        assert_eq!(m.reply(&req, 0).unwrap(), "<role>X</role>");
        assert!(m.reply(&ChatRequest::new("h2"), 0).is_err());
    }

    #[test]
    fn pattern_reply() {
        let m = mock_policy(1, &script()).unwrap();
        let r = m.reply(&ChatRequest::new("please mutate role now"), 0).unwrap();
        assert_eq!(r, "<role>Expert Linguist</role>");
    }

    #[test]
    fn echo_fallback() {
        let m = mock_policy(1, &script()).unwrap();
        assert_eq!(m.reply(&ChatRequest::new("nothing here"), 4).unwrap(), "nothing here");
    }

    #[test]
    fn unmatched_error_policy() {
        let mut s = script();
        s.unmatched = Unmatched::Error;
        let m = mock_policy(1, &s).unwrap();
        assert!(matches!(
            m.reply(&ChatRequest::new("nothing"), 0),
            Err(AttemptError::Unmatched(_))
        ));
    }

    #[test]
    fn distribution_replays_identically() {
        let run = |seed| {
            let m = mock_policy(seed, &script()).unwrap();
            (0..200)
                .map(|i| m.reply(&ChatRequest::new("flip a coin"), i).unwrap())
                .collect::<Vec<_>>()
        };
        let a = run(11);
        assert_eq!(a, run(11));
        assert_ne!(a, run(12));
        let improve = a.iter().filter(|r| *r == "improve").count();
        assert!((100..180).contains(&improve), "{improve}");
    }

    #[test]
    fn rule_needs_exactly_one_reply_kind() {
        let s = MockScript {
            rules: vec![ScriptRule { pattern: "x".into(), response: None, distribution: vec![] }],
            ..Default::default()
        };
        assert!(mock_policy(0, &s).is_err());
    }

    #[test]
    fn token_estimates_are_character_based() {
        let m = MockBackend::new(0, |_: &ChatRequest, _: &mut ChaCha8Rng| Some("abcde".to_string()));
        let r = m.complete(&ChatRequest::new("12345678"), 0).unwrap();
        assert_eq!((r.prompt_tokens, r.completion_tokens), (2, 2));
    }
}
