use rand::Rng;

use super::EvolutionError;
use crate::Scalar;

/// Selection weights for roulette-wheel sampling.
///
/// Strictly positive scores are used as they are. Otherwise scores are
/// shifted to `s - min + ε` with `ε = 1e-6 · (max - min + 1)`, so every
/// individual keeps a non-zero chance. Equal scores give equal weights.
pub fn roulette_weights<F: Scalar>(scores: &[F]) -> Result<Vec<F>, EvolutionError> {
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(EvolutionError::NonFiniteScore(s.to_f64().unwrap_or(f64::NAN)));
    }
    let Some(&first) = scores.first() else {
        return Ok(Vec::new());
    };
    let (min, max) = scores
        .iter()
        .fold((first, first), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if min == max {
        return Ok(vec![F::one(); scores.len()]);
    }
    if min > F::zero() {
        return Ok(scores.to_vec());
    }
    let eps = F::lit(1e-6) * (max - min + F::one());
    Ok(scores.iter().map(|&s| s - min + eps).collect())
}

/// Draws `k` distinct indices, each draw proportional to the remaining
/// weights.
pub fn roulette_select<F: Scalar, R: Rng + ?Sized>(
    scores: &[F],
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>, EvolutionError> {
    if scores.is_empty() || k > scores.len() {
        return Err(EvolutionError::PopulationTooSmall {
            need: k.max(1),
            have: scores.len(),
        });
    }
    let mut weights: Vec<f64> = roulette_weights(scores)?
        .into_iter()
        .map(|w| w.to_f64().expect("finite weight"))
        .collect();
    let mut picked = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut chosen = None;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            chosen = Some(i);
            if u < w {
                break;
            }
            u -= w;
        }
        // rounding can leave `u` past the last bucket; the last live one wins
        let i = chosen.expect("at least one live weight");
        weights[i] = 0.0;
        picked.push(i);
    }
    Ok(picked)
}
