//! Ergodic primal recovery from the selection history.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::solver::RoundRecord;
use crate::measures::ProblemInstance;
use crate::oracle::{barycenter_objective, OracleError};
use crate::seed::{mix_seed, RECOVERY_STREAM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RecoveryMode {
    /// The `M` candidates with the largest averaged flag, ties by index.
    #[default]
    TopM,
    /// `M` distinct candidates drawn with probability proportional to the
    /// averaged flag.
    Sample,
}

#[derive(Debug, Error)]
pub enum RecoveryError {
    #[error("insufficient history: need {needed} evaluated rounds, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("objective evaluation failed: {0}")]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    /// Averaged selection flags in `[0, 1]`.
    pub gamma_bar: Vec<f64>,
    /// Recovered support, sorted candidate indices.
    pub support: Vec<usize>,
    pub objective: f64,
}

/// Averages `gamma` over the `window` evaluated rounds with the highest dual
/// values, weighting each round by its step size.
pub fn ergodic_average(history: &[RoundRecord], window: usize) -> Result<Vec<f64>, RecoveryError> {
    let mut evaluated: Vec<(usize, f64)> = history
        .iter()
        .enumerate()
        .filter_map(|(idx, r)| r.dual_value.map(|v| (idx, v)))
        .collect();
    if window == 0 || evaluated.len() < window {
        return Err(RecoveryError::InsufficientHistory {
            needed: window.max(1),
            available: evaluated.len(),
        });
    }
    // highest dual values first; later rounds win ties
    evaluated.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.0.cmp(&a.0)));
    evaluated.truncate(window);
    evaluated.sort_by_key(|&(idx, _)| idx);

    let k = history[evaluated[0].0].gamma.len();
    let total_alpha: f64 = evaluated.iter().map(|&(idx, _)| history[idx].step_size).sum();
    let mut gamma_bar = vec![0.0; k];
    for &(idx, _) in &evaluated {
        let rec = &history[idx];
        let omega = rec.step_size / total_alpha;
        for (g, &flag) in gamma_bar.iter_mut().zip(rec.gamma.flags()) {
            if flag {
                *g += omega;
            }
        }
    }
    Ok(gamma_bar)
}

/// Indices of the `m` largest entries, ties by smaller index; sorted.
pub fn top_m(gamma_bar: &[f64], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..gamma_bar.len()).collect();
    order.sort_by(|&a, &b| gamma_bar[b].total_cmp(&gamma_bar[a]).then(a.cmp(&b)));
    order.truncate(m);
    order.sort_unstable();
    order
}

/// `m` distinct indices drawn proportionally to `gamma_bar`. If fewer than
/// `m` entries are positive the remainder is filled by [`top_m`] order.
pub fn sample_support(gamma_bar: &[f64], m: usize, seed: u64) -> Vec<usize> {
    let positive = gamma_bar.iter().filter(|&&g| g > 0.0).count();
    let mut chosen: Vec<usize> = if positive >= m {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, RECOVERY_STREAM));
        index::sample_weighted(&mut rng, gamma_bar.len(), |k| gamma_bar[k], m)
            .expect("enough positive weights")
            .into_vec()
    } else {
        (0..gamma_bar.len()).filter(|&k| gamma_bar[k] > 0.0).collect()
    };
    if chosen.len() < m {
        for k in top_m(gamma_bar, gamma_bar.len()) {
            if chosen.len() == m {
                break;
            }
            if !chosen.contains(&k) {
                chosen.push(k);
            }
        }
    }
    chosen.sort_unstable();
    chosen
}

pub fn recover_primal(
    history: &[RoundRecord],
    window: usize,
    instance: &ProblemInstance,
    mode: RecoveryMode,
    seed: u64,
) -> Result<Recovery, RecoveryError> {
    let gamma_bar = ergodic_average(history, window)?;
    let m = instance.support_size();
    let support = match mode {
        RecoveryMode::TopM => top_m(&gamma_bar, m),
        RecoveryMode::Sample => sample_support(&gamma_bar, m, seed),
    };
    let objective = barycenter_objective(instance, &support)?;
    Ok(Recovery {
        gamma_bar,
        support,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::Selection;
    use crate::measures::fixtures::*;

    fn record(iter: u64, gamma: &[bool], value: f64, alpha: f64) -> RoundRecord {
        RoundRecord {
            iter,
            dual_value: Some(value),
            support_size: gamma.iter().filter(|&&g| g).count(),
            step_size: alpha,
            theta0: 0.0,
            wall_ms: 0.0,
            gamma: Selection::from_flags(gamma.to_vec()),
        }
    }

    #[test]
    fn constant_history_averages_to_itself() {
        let h: Vec<_> = (0..5).map(|j| record(j, &[true, false, true], 0.0, 1.0 / (j as f64 + 1.0).sqrt())).collect();
        let r = recover_primal(&h, 5, &t2(), RecoveryMode::TopM, 0).unwrap();
        assert_eq!(r.gamma_bar, vec![1.0, 0.0, 1.0]);
        assert_eq!(r.support, vec![0, 2]);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn equal_weights_tie_goes_to_lower_index() {
        let h = vec![
            record(0, &[true, false, false], 1.0, 0.5),
            record(1, &[false, false, true], 1.0, 0.5),
        ];
        let inst = t2().with_support_size(1).unwrap();
        let r = recover_primal(&h, 2, &inst, RecoveryMode::TopM, 0).unwrap();
        assert_eq!(r.gamma_bar, vec![0.5, 0.0, 0.5]);
        assert_eq!(r.support, vec![0]);
    }

    #[test]
    fn window_keeps_best_rounds() {
        let h = vec![
            record(0, &[true, true, true], -5.0, 1.0),
            record(1, &[false, true, false], 1.0, 1.0),
            record(2, &[false, true, false], 0.9, 1.0),
        ];
        let g = ergodic_average(&h, 2).unwrap();
        assert_eq!(g, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn short_history_is_an_error() {
        let h = vec![record(0, &[true, false, false], 0.0, 1.0)];
        assert!(matches!(
            ergodic_average(&h, 2),
            Err(RecoveryError::InsufficientHistory { needed: 2, available: 1 })
        ));
    }

    #[test]
    fn sampling_is_seeded_and_respects_zero_weights() {
        let g = [0.0, 0.9, 0.1, 0.0, 0.5];
        let a = sample_support(&g, 2, 11);
        assert_eq!(a, sample_support(&g, 2, 11));
        assert!(a.iter().all(|&k| g[k] > 0.0));
        let filled = sample_support(&g, 4, 11);
        assert_eq!(filled, vec![0, 1, 2, 4]);
    }
}
