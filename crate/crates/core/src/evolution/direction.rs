use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::genome::Registry;

/// Component types to mutate in a single parent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Direction1 {
    pub mutate_types: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParentSide {
    First,
    Second,
}

/// Types to evolve in both parents plus, for every other type, which
/// parent's value the child inherits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Direction2 {
    pub mutate_types: BTreeSet<String>,
    pub fixed: BTreeMap<String, ParentSide>,
}

impl Direction2 {
    /// The mutated and the fixed types partition the registry.
    pub fn is_partition_of(&self, registry: &Registry) -> bool {
        let fixed: BTreeSet<&str> = self.fixed.keys().map(String::as_str).collect();
        let mutated: BTreeSet<&str> = self.mutate_types.iter().map(String::as_str).collect();
        mutated.is_disjoint(&fixed)
            && mutated.len() + fixed.len() == registry.len()
            && registry.names().all(|n| mutated.contains(n) || fixed.contains(n))
    }
}

/// `(C1 ∩ C2, registry \ (C1 ∩ C2))`. An empty intersection is replaced by
/// one type drawn uniformly from `C1 ∪ C2`.
pub fn partition_directions<R: Rng + ?Sized>(
    c1: &BTreeSet<String>,
    c2: &BTreeSet<String>,
    registry: &Registry,
    rng: &mut R,
) -> (BTreeSet<String>, BTreeSet<String>) {
    let mut hat: BTreeSet<String> = c1.intersection(c2).cloned().collect();
    if hat.is_empty() {
        let union: Vec<&String> = c1.union(c2).collect();
        if let Some(pick) = union.get(rng.gen_range(0..union.len().max(1))) {
            hat.insert((*pick).clone());
        }
    }
    let rest = registry
        .names()
        .filter(|n| !hat.contains(*n))
        .map(str::to_string)
        .collect();
    (hat, rest)
}

/// Reads the last `mutate: a, b` line. Unknown names are dropped, duplicates
/// ignored, and at most `max` names kept in reply order. `None` when nothing
/// usable remains.
pub fn parse_selection(reply: &str, registry: &Registry, max: usize) -> Option<BTreeSet<String>> {
    let line = reply
        .lines()
        .rev()
        .find_map(|l| {
            let lower = l.to_lowercase();
            lower.find("mutate:").map(|at| l[at + "mutate:".len()..].to_string())
        })?;
    let mut seen = Vec::new();
    for raw in line.split([',', ';']) {
        let name = raw.trim().trim_matches(|c: char| c == '<' || c == '>' || c == '`' || c == '"' || c == '*' || c == '.');
        let name = name.trim();
        if registry.contains(name) && !seen.iter().any(|s| s == name) {
            seen.push(name.to_string());
        }
    }
    seen.truncate(max);
    if seen.is_empty() {
        None
    } else {
        Some(seen.into_iter().collect())
    }
}

/// Reads `type: from prompt 1|2` lines for the requested types.
pub fn parse_choices<'a, I>(reply: &str, types: I) -> BTreeMap<String, ParentSide>
where
    I: IntoIterator<Item = &'a str>,
{
    let re = Regex::new(r"(?im)^[\s\-*]*<?([^\s<>:]+)>?\s*:\s*(?:from\s+)?prompt\s*([12])\b")
        .expect("valid regex");
    let wanted: BTreeSet<&str> = types.into_iter().collect();
    let mut out = BTreeMap::new();
    for cap in re.captures_iter(reply) {
        let name = &cap[1];
        if wanted.contains(name) && !out.contains_key(name) {
            let side = if &cap[2] == "1" { ParentSide::First } else { ParentSide::Second };
            out.insert(name.to_string(), side);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn intersection_partition() {
        let r = Registry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (hat, rest) = partition_directions(&set(&["role", "workflow"]), &set(&["workflow", "examples"]), &r, &mut rng);
        assert_eq!(hat, set(&["workflow"]));
        assert_eq!(rest.len(), 4);
        assert!(!rest.contains("workflow"));
    }

    #[test]
    fn empty_intersection_falls_back_to_union_member() {
        let r = Registry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c1 = set(&["role"]);
        let c2 = set(&["examples"]);
        let (hat, _) = partition_directions(&c1, &c2, &r, &mut rng);
        assert_eq!(hat.len(), 1);
        assert!(c1.union(&c2).any(|t| hat.contains(t)));
    }

    #[test]
    fn selection_parsing() {
        let r = Registry::default();
        assert_eq!(parse_selection("mutate: <role>, <workflow>", &r, 2), Some(set(&["role", "workflow"])));
        assert_eq!(parse_selection("thinking...\nMutate: role, tone, role", &r, 2), Some(set(&["role"])));
        assert_eq!(
            parse_selection("mutate: examples, role, workflow", &r, 2),
            Some(set(&["examples", "role"]))
        );
        assert_eq!(parse_selection("mutate: <tone>", &r, 2), None);
        assert_eq!(parse_selection("role and workflow", &r, 2), None);
    }

    #[test]
    fn choice_parsing() {
        let got = parse_choices(
            "task_description: from prompt 2\n- <role>: from prompt 1\nworkflow: whatever",
            ["task_description", "role", "workflow"],
        );
        assert_eq!(got.get("task_description"), Some(&ParentSide::Second));
        assert_eq!(got.get("role"), Some(&ParentSide::First));
        assert!(!got.contains_key("workflow"));
    }
}
