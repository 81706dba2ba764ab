use std::collections::BTreeMap;

use super::{ComponentGenome, GenomeError, Registry};

pub fn open_tag(name: &str) -> String {
    format!("<{name}>")
}

pub fn close_tag(name: &str) -> String {
    format!("</{name}>")
}

pub fn wrap(name: &str, text: &str) -> String {
    format!("<{name}>{text}</{name}>")
}

/// Content of the first `<name>…</name>` pair, trimmed. Later pairs are
/// ignored.
pub fn extract_first(text: &str, name: &str) -> Result<Option<String>, GenomeError> {
    let open = open_tag(name);
    let Some(start) = text.find(&open) else {
        return Ok(None);
    };
    let body = &text[start + open.len()..];
    match body.find(&close_tag(name)) {
        Some(end) => Ok(Some(body[..end].trim().to_string())),
        None => Err(GenomeError::MalformedMarkup(name.to_string())),
    }
}

/// Contents of every complete `<name>…</name>` pair, in order of appearance.
pub fn extract_all(text: &str, name: &str) -> Vec<String> {
    let (open, close) = (open_tag(name), close_tag(name));
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(&open) {
        let body = &rest[start + open.len()..];
        let Some(end) = body.find(&close) else { break };
        out.push(body[..end].trim().to_string());
        rest = &body[end + close.len()..];
    }
    out
}

/// Reads a genome out of free text. Types without a tag pair get the null
/// value.
pub fn parse(text: &str, registry: &Registry) -> Result<ComponentGenome, GenomeError> {
    let mut slots = BTreeMap::new();
    for name in registry.names() {
        let value = extract_first(text, name)?.unwrap_or_default();
        registry
            .check_value(name, &value)
            .map_err(|_| GenomeError::NestedMarkup(name.to_string()))?;
        slots.insert(name.to_string(), value);
    }
    Ok(ComponentGenome { slots })
}
