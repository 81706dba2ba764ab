use std::collections::BTreeMap;

use super::{close_tag, open_tag, wrap, ComponentGenome, GenomeError, Registry};

/// Template shipped for the default registry. Fixed text plus one wrapped
/// slot per component; a null component drops its whole line.
pub const DEFAULT_TEMPLATE: &str = "\
Complete the task described by the prompt components below. Each component is enclosed in its markup pair.
{{#role}}You are a {{role}}.
{{/role}}{{#task_description}}Your task is as follows: {{task_description}}
{{/task_description}}{{#workflow}}Work through the task using this workflow: {{workflow}}
{{/workflow}}{{#examples}}The following examples illustrate the task: {{examples}}
{{/examples}}{{#output_format}}Your output must follow this format: {{output_format}}
{{/output_format}}";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Literal(String),
    /// A component slot. `prefix` and `suffix` are the descriptive wrapper
    /// text, emitted only when the slot value is non-empty.
    Slot {
        name: String,
        prefix: String,
        suffix: String,
    },
}

/// Text with markup slots; `{{name}}` is a slot and
/// `{{#name}}before {{name}} after{{/name}}` a slot with a wrapper.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    segments: Vec<Segment>,
    source: String,
}

impl PromptTemplate {
    pub fn parse(source: &str, registry: &Registry) -> Result<Self, GenomeError> {
        let segments = tokenize(source)?;
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for seg in &segments {
            match seg {
                Segment::Literal(text) => check_literal(text, registry)?,
                Segment::Slot { name, prefix, suffix } => {
                    if !registry.contains(name) {
                        return Err(GenomeError::Template(format!("unknown slot {name:?}")));
                    }
                    check_literal(prefix, registry)?;
                    check_literal(suffix, registry)?;
                    *counts.entry(name.as_str()).or_default() += 1;
                }
            }
        }
        for name in registry.names() {
            match counts.get(name) {
                Some(1) => {}
                Some(n) => {
                    return Err(GenomeError::Template(format!(
                        "slot {name:?} appears {n} times"
                    )))
                }
                None => return Err(GenomeError::Template(format!("no slot for {name:?}"))),
            }
        }
        Ok(Self {
            segments,
            source: source.to_string(),
        })
    }

    /// [`DEFAULT_TEMPLATE`] when the registry is the default one, otherwise a
    /// generated template with one described line per component.
    pub fn default_for(registry: &Registry) -> Result<Self, GenomeError> {
        if registry == &Registry::default() {
            return Self::parse(DEFAULT_TEMPLATE, registry);
        }
        let mut src = String::from(
            "Complete the task described by the prompt components below. Each component is enclosed in its markup pair.\n",
        );
        for t in registry.types() {
            let label = if t.description.is_empty() {
                t.name.replace('_', " ")
            } else {
                t.description.trim_end_matches('.').to_string()
            };
            src.push_str(&format!(
                "{{{{#{n}}}}}{label}: {{{{{n}}}}}\n{{{{/{n}}}}}",
                n = t.name
            ));
        }
        Self::parse(&src, registry)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Continuous form of `genome`.
    pub fn render(&self, genome: &ComponentGenome) -> Result<String, GenomeError> {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(text) => out.push_str(text),
                Segment::Slot { name, prefix, suffix } => {
                    let value = genome
                        .get(name)
                        .ok_or_else(|| GenomeError::MissingSlotValue(name.clone()))?;
                    if !value.is_empty() {
                        out.push_str(prefix);
                        out.push_str(&wrap(name, value));
                        out.push_str(suffix);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn check_literal(text: &str, registry: &Registry) -> Result<(), GenomeError> {
    for name in registry.names() {
        if text.contains(&open_tag(name)) || text.contains(&close_tag(name)) {
            return Err(GenomeError::Template(format!(
                "literal text contains markup for {name:?}"
            )));
        }
    }
    Ok(())
}

fn tokenize(source: &str) -> Result<Vec<Segment>, GenomeError> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut rest = source;
    while let Some(start) = rest.find("{{") {
        literal.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| GenomeError::Template("unterminated placeholder".into()))?;
        let token = after[..end].trim();
        rest = &after[end + 2..];

        if let Some(name) = token.strip_prefix('#') {
            let inner = format!("{{{{{name}}}}}");
            let closing = format!("{{{{/{name}}}}}");
            let slot_at = rest.find(&inner).ok_or_else(|| {
                GenomeError::Template(format!("wrapper {name:?} has no {inner} slot"))
            })?;
            let prefix = &rest[..slot_at];
            let tail = &rest[slot_at + inner.len()..];
            let close_at = tail.find(&closing).ok_or_else(|| {
                GenomeError::Template(format!("wrapper {name:?} is not closed"))
            })?;
            let suffix = &tail[..close_at];
            if prefix.contains("{{") || suffix.contains("{{") {
                return Err(GenomeError::Template(format!(
                    "wrapper {name:?} contains another placeholder"
                )));
            }
            flush(&mut literal, &mut segments);
            segments.push(Segment::Slot {
                name: name.to_string(),
                prefix: prefix.to_string(),
                suffix: suffix.to_string(),
            });
            rest = &tail[close_at + closing.len()..];
        } else if token.starts_with('/') {
            return Err(GenomeError::Template(format!("unexpected {{{{{token}}}}}")));
        } else {
            flush(&mut literal, &mut segments);
            segments.push(Segment::Slot {
                name: token.to_string(),
                prefix: String::new(),
                suffix: String::new(),
            });
        }
    }
    literal.push_str(rest);
    flush(&mut literal, &mut segments);
    Ok(segments)
}

fn flush(literal: &mut String, segments: &mut Vec<Segment>) {
    if !literal.is_empty() {
        segments.push(Segment::Literal(std::mem::take(literal)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{Category, ComponentType};

    fn role_only() -> Registry {
        Registry::new(vec![ComponentType::new("role", Category::RoleAndExpertise, "").unwrap()])
            .unwrap()
    }

    #[test]
    fn renders_tagged_value_in_place() {
        let r = role_only();
        let t = PromptTemplate::parse("You are {{role}}.", &r).unwrap();
        let g = ComponentGenome::new(&r, [("role", "Sentence Simplifier")]).unwrap();
        assert_eq!(t.render(&g).unwrap(), "You are <role>Sentence Simplifier</role>.");
    }

    #[test]
    fn null_value_drops_wrapper() {
        let r = role_only();
        let t = PromptTemplate::parse("Start. {{#role}}You are {{role}}. {{/role}}End.", &r).unwrap();
        let g = ComponentGenome::empty(&r);
        assert_eq!(t.render(&g).unwrap(), "Start. End.");
        let g = ComponentGenome::new(&r, [("role", "X")]).unwrap();
        assert_eq!(t.render(&g).unwrap(), "Start. You are <role>X</role>. End.");
    }

    #[test]
    fn all_null_genome_renders_literals_only() {
        let r = Registry::default();
        let t = PromptTemplate::default_for(&r).unwrap();
        let literals: String = t
            .segments()
            .iter()
            .filter_map(|s| match s {
                Segment::Literal(l) => Some(l.as_str()),
                _ => None,
            })
            .collect();
        assert_eq!(t.render(&ComponentGenome::empty(&r)).unwrap(), literals);
    }

    #[test]
    fn default_template_renders_five_pairs() {
        let r = Registry::default();
        let t = PromptTemplate::default_for(&r).unwrap();
        let g = ComponentGenome::new(&r, r.names().map(|n| (n, format!("value of {n}")))).unwrap();
        let text = t.render(&g).unwrap();
        // independent count: every '<' that starts a tag
        let opens = text.matches('<').count();
        assert_eq!(opens, 10);
        for n in r.names() {
            assert_eq!(text.matches(&format!("<{n}>")).count(), 1);
            assert_eq!(text.matches(&format!("</{n}>")).count(), 1);
        }
    }

    #[test]
    fn template_must_cover_registry_exactly_once() {
        let r = Registry::default();
        assert!(PromptTemplate::parse("{{role}}", &r).is_err());
        let dup = "{{role}}{{role}}{{task_description}}{{output_format}}{{workflow}}{{examples}}";
        assert!(PromptTemplate::parse(dup, &r).is_err());
        let unknown = format!("{dup} {{{{tone}}}}");
        assert!(PromptTemplate::parse(&unknown, &r).is_err());
    }

    #[test]
    fn literal_may_not_contain_registered_tags() {
        let r = role_only();
        assert!(PromptTemplate::parse("<role> {{role}}", &r).is_err());
    }

    #[test]
    fn generated_template_for_custom_registry() {
        let r = Registry::new(vec![
            ComponentType::new("tone", Category::ConstraintsAndNorms, "Tone of voice.").unwrap(),
            ComponentType::new("goal", Category::TaskContent, "").unwrap(),
        ])
        .unwrap();
        let t = PromptTemplate::default_for(&r).unwrap();
        let g = ComponentGenome::new(&r, [("tone", "calm"), ("goal", "")]).unwrap();
        let text = t.render(&g).unwrap();
        assert!(text.ends_with("Tone of voice: <tone>calm</tone>\n"), "{text}");
        assert!(!text.contains("goal"));
    }
}
