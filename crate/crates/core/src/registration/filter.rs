//! Survivor selection for the two filter stages.
//!
//! Both stages keep the union of the first `keep` entries of a ranking and
//! every entry meeting an absolute threshold. Entries without a key (failed
//! searches, or records eliminated by an earlier stage) never survive. Ties
//! in the ranking keep index order.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

/// Stage 1: rank by correlation, highest first; keep the top `keep` or any
/// score `>= c_min`.
pub fn select_by_score(scores: &[Option<f64>], keep: usize, c_min: f64) -> Vec<bool> {
    select(scores, keep, |a, b| b.total_cmp(&a), |s| s >= c_min)
}

/// Stage 2: rank by residual distance, smallest first; keep the top `keep`
/// or any residual `< e_max`.
pub fn select_by_residual(residuals: &[Option<f64>], keep: usize, e_max: f64) -> Vec<bool> {
    select(residuals, keep, |a, b| a.total_cmp(&b), |e| e < e_max)
}

fn select(
    keys: &[Option<f64>],
    keep: usize,
    order: impl Fn(f64, f64) -> Ordering,
    passes: impl Fn(f64) -> bool,
) -> Vec<bool> {
    let mut ranked: Vec<(usize, f64)> = keys
        .iter()
        .enumerate()
        .filter_map(|(i, k)| k.map(|k| (i, k)))
        .collect();
    // Stable: equal keys stay in index order.
    ranked.sort_by(|a, b| order(a.1, b.1));
    let mut out = vec![false; keys.len()];
    for (rank, &(i, k)) in ranked.iter().enumerate() {
        out[i] = rank < keep || passes(k);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disjunction_of_rank_and_threshold() {
        let scores = [Some(0.9), Some(0.2), None, Some(0.75), Some(0.1), Some(0.3)];
        // top 2 = {0, 3}; threshold 0.25 adds {5, 1? no: 0.2 < 0.25}
        assert_eq!(
            select_by_score(&scores, 2, 0.25),
            vec![true, false, false, true, false, true]
        );
        // nothing above threshold: fall back to the top 3
        assert_eq!(
            select_by_score(&scores, 3, 0.99),
            vec![true, false, false, true, false, true]
        );
    }

    #[test]
    fn ties_resolved_by_index() {
        let scores = [Some(0.5), Some(0.8), Some(0.5), Some(0.5)];
        assert_eq!(
            select_by_score(&scores, 2, 1.0),
            vec![true, true, false, false]
        );
        let res = [Some(1.0), Some(1.0), Some(0.5), Some(1.0)];
        assert_eq!(
            select_by_residual(&res, 2, 0.1),
            vec![true, false, true, false]
        );
    }

    #[test]
    fn residual_threshold_is_strict() {
        let res = [Some(2.0), Some(1.999), Some(5.0)];
        assert_eq!(select_by_residual(&res, 0, 2.0), vec![false, true, false]);
    }

    #[test]
    fn missing_keys_never_survive() {
        let res = [None, None, Some(9.0)];
        assert_eq!(select_by_residual(&res, 3, 1.0), vec![false, false, true]);
    }
}
