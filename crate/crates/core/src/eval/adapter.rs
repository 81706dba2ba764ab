use regex::RegexBuilder;
use serde::{Deserialize, Serialize};

use super::metrics::{self, Metric};
use super::{EvalError, Example};
use crate::genome::{extract_first, ComponentGenome};
use crate::Score;

/// Component whose presence switches the output cue to "follow the format
/// given in the instruction".
pub const OUTPUT_FORMAT_COMPONENT: &str = "output_format";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    ExtractionQa,
    Summarization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskAdapter {
    pub kind: TaskKind,
    /// Label names for classification, compared case-insensitively.
    #[serde(default)]
    pub labels: Vec<String>,
    /// Positive class for MCC; defaults to the last label.
    #[serde(default)]
    pub positive_label: String,
    pub metric: Metric,
    #[serde(default = "default_answer_tag")]
    pub answer_tag: String,
    /// Replaces the built-in output cue when non-empty.
    #[serde(default)]
    pub default_cue: String,
}

fn default_answer_tag() -> String {
    "ans".into()
}

impl TaskAdapter {
    pub fn classification(labels: &[&str], metric: Metric) -> Result<Self, EvalError> {
        let a = Self {
            kind: TaskKind::Classification,
            labels: labels.iter().map(|l| l.to_lowercase()).collect(),
            positive_label: String::new(),
            metric,
            answer_tag: default_answer_tag(),
            default_cue: String::new(),
        };
        a.validate()?;
        Ok(a)
    }

    pub fn new(kind: TaskKind, metric: Metric) -> Result<Self, EvalError> {
        let a = Self {
            kind,
            labels: Vec::new(),
            positive_label: String::new(),
            metric,
            answer_tag: default_answer_tag(),
            default_cue: String::new(),
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let ok = match self.kind {
            TaskKind::Classification => matches!(self.metric, Metric::Accuracy | Metric::Mcc),
            TaskKind::ExtractionQa => matches!(self.metric, Metric::TokenF1 | Metric::ExactMatch),
            TaskKind::Summarization => matches!(self.metric, Metric::RougeAvg),
        };
        if !ok {
            return Err(EvalError::Adapter(format!(
                "metric {:?} does not fit task kind {:?}",
                self.metric, self.kind
            )));
        }
        if self.kind == TaskKind::Classification && self.labels.is_empty() {
            return Err(EvalError::Adapter("classification needs a label set".into()));
        }
        if self.metric == Metric::Mcc && self.labels.len() != 2 {
            return Err(EvalError::Adapter("MCC needs exactly two labels".into()));
        }
        if self.answer_tag.is_empty() || self.answer_tag.contains(['<', '>', '/']) {
            return Err(EvalError::Adapter(format!("bad answer tag {:?}", self.answer_tag)));
        }
        Ok(())
    }

    pub fn positive(&self) -> String {
        if self.positive_label.is_empty() {
            self.labels.last().cloned().unwrap_or_default()
        } else {
            self.positive_label.to_lowercase()
        }
    }

    fn builtin_cue(&self) -> String {
        let tag = &self.answer_tag;
        match self.kind {
            TaskKind::Classification => format!("Reply with the answer enclosed in <{tag}></{tag}>."),
            TaskKind::ExtractionQa => {
                format!("Reply with the shortest answer span from the input, enclosed in <{tag}></{tag}>.")
            }
            TaskKind::Summarization => "Reply with the summary only.".into(),
        }
    }

    /// Output cue. When the prompt carries its own output format the cue
    /// defers to it.
    pub fn cue(&self, genome: &ComponentGenome) -> String {
        let has_format = genome
            .get(OUTPUT_FORMAT_COMPONENT)
            .is_some_and(|v| !v.trim().is_empty());
        let tag = &self.answer_tag;
        let mut cue = if has_format {
            match self.kind {
                TaskKind::Summarization => "Follow the output format given in the instruction.".to_string(),
                _ => format!(
                    "Follow the output format given in the instruction and enclose the final answer in <{tag}></{tag}>."
                ),
            }
        } else if !self.default_cue.is_empty() {
            self.default_cue.clone()
        } else {
            self.builtin_cue()
        };
        if self.kind == TaskKind::Classification {
            cue.push_str(&format!("\nPossible answers: {}", self.labels.join(" | ")));
        }
        cue
    }

    /// Instruction (the rendered prompt), input, and output cue.
    pub fn build_task_prompt(&self, genome: &ComponentGenome, rendered: &str, ex: &Example) -> String {
        let mut input = ex.input.clone();
        if let Some(choices) = &ex.choices {
            input.push_str("\nChoices: ");
            input.push_str(&choices.join(" | "));
        }
        format!(
            "### Instruction\n{}\n\n### Input\n{}\n\n### Output\n{}",
            rendered.trim_end(),
            input,
            self.cue(genome)
        )
    }

    /// Canonical answer from the target model's reply.
    pub fn extract_answer(&self, raw: &str) -> Result<String, EvalError> {
        let tagged = extract_first(raw, &self.answer_tag).ok().flatten();
        match self.kind {
            TaskKind::Classification => {
                if let Some(t) = &tagged {
                    let t = t.trim().to_lowercase();
                    if self.labels.contains(&t) {
                        return Ok(t);
                    }
                    if let Some(l) = last_label(&t, &self.labels) {
                        return Ok(l);
                    }
                }
                last_label(raw, &self.labels).ok_or(EvalError::NoAnswerFound)
            }
            TaskKind::ExtractionQa => {
                let ans = tagged.unwrap_or_else(|| raw.trim().to_string());
                if ans.is_empty() {
                    Err(EvalError::NoAnswerFound)
                } else {
                    Ok(ans)
                }
            }
            TaskKind::Summarization => {
                let ans = raw.trim();
                if ans.is_empty() {
                    Err(EvalError::NoAnswerFound)
                } else {
                    Ok(ans.to_string())
                }
            }
        }
    }

    /// Gold answer in canonical form.
    pub fn canonical_gold(&self, ex: &Example) -> String {
        match self.kind {
            TaskKind::Classification => ex.answer.trim().to_lowercase(),
            _ => ex.answer.clone(),
        }
    }

    pub fn score(&self, preds: &[Option<String>], golds: &[String]) -> Result<Score, EvalError> {
        match self.metric {
            Metric::Accuracy => metrics::accuracy(preds, golds),
            Metric::Mcc => metrics::mcc(preds, golds, &self.positive()),
            Metric::TokenF1 => metrics::token_f1(preds, golds),
            Metric::ExactMatch => metrics::exact_match(preds, golds),
            Metric::RougeAvg => metrics::rouge_avg(preds, golds),
        }
    }
}

/// Label whose last whole-word, case-insensitive occurrence comes latest.
fn last_label(text: &str, labels: &[String]) -> Option<String> {
    let mut best: Option<(usize, &String)> = None;
    for label in labels {
        let re = RegexBuilder::new(&format!(r"\b{}\b", regex::escape(label)))
            .case_insensitive(true)
            .build()
            .ok()?;
        if let Some(m) = re.find_iter(text).last() {
            if best.is_none_or(|(at, _)| m.start() > at) {
                best = Some((m.start(), label));
            }
        }
    }
    best.map(|(_, l)| l.clone())
}
