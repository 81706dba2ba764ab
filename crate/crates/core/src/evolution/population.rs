use crate::genome::ScoredPrompt;

/// Top-`n` of `current ∪ evolved` by score. On equal scores evolved prompts
/// rank ahead of current ones, and later-evolved ahead of earlier-evolved.
pub fn update_population(current: &[ScoredPrompt], evolved: &[ScoredPrompt], n: usize) -> Vec<ScoredPrompt> {
    let mut union: Vec<&ScoredPrompt> = evolved.iter().rev().chain(current).collect();
    // stable: keeps the recency order among equal scores
    union.sort_by(|a, b| b.score.total_cmp(&a.score));
    union.into_iter().take(n).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{ComponentGenome, EvolutionKind, Lineage, PromptTemplate, Registry};

    fn sp(id: u64, score: f64) -> ScoredPrompt {
        let r = Registry::default();
        let t = PromptTemplate::default_for(&r).unwrap();
        ScoredPrompt::new(
            id,
            ComponentGenome::empty(&r),
            &t,
            score,
            Lineage { parents: vec![], kind: EvolutionKind::Initial },
        )
        .unwrap()
    }

    fn scores(p: &[ScoredPrompt]) -> Vec<f64> {
        p.iter().map(|x| x.score).collect()
    }

    #[test]
    fn keeps_top_n() {
        let out = update_population(&[sp(0, 0.9), sp(1, 0.5)], &[sp(2, 0.7), sp(3, 0.6)], 2);
        assert_eq!(scores(&out), [0.9, 0.7]);
    }

    #[test]
    fn worse_children_leave_population_unchanged() {
        let cur = [sp(0, 0.9), sp(1, 0.5)];
        let out = update_population(&cur, &[sp(2, 0.1)], 2);
        assert_eq!(out, cur);
    }

    #[test]
    fn tie_prefers_newer() {
        let out = update_population(&[sp(0, 0.9), sp(1, 0.7)], &[sp(2, 0.7)], 2);
        assert_eq!(out.iter().map(|p| p.id).collect::<Vec<_>>(), [0, 2]);
        let out = update_population(&[sp(0, 0.9), sp(1, 0.7)], &[sp(2, 0.7), sp(3, 0.7)], 2);
        assert_eq!(out[1].id, 3);
    }
}
