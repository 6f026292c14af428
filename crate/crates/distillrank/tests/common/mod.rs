//! Shared test oracles, independent of the library's computation paths:
//! central finite differences for gradients and exhaustive permutation
//! enumeration for ranking probabilities.

#![allow(dead_code)]

use distillrank::losses::{pl_brute_force_prob, RewardVector};

/// Central-difference gradient of `f` at `x` with the given step.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

/// Assert componentwise |analytic - numeric| <= atol + rtol * |numeric|.
/// The tolerance floor absorbs the O(h^2) truncation noise of the oracle
/// itself on near-zero components.
pub fn assert_grad_close(analytic: &[f64], numeric: &[f64], rtol: f64, atol: f64, what: &str) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: gradient lengths");
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let tol = atol + rtol * n.abs();
        assert!(
            (a - n).abs() <= tol,
            "{what}: component {i}: analytic {a:e} vs numeric {n:e} (|diff| {:e} > tol {tol:e})",
            (a - n).abs()
        );
    }
}

/// All permutations of `items`, in a deterministic order.
pub fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (i, &head) in items.iter().enumerate() {
        let mut rest: Vec<usize> = items.to_vec();
        rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Oracle for the top-2 marginal: the exhaustive sum of full-ranking
/// probabilities over every ordering of the remaining items.
pub fn marginal_top2_by_enumeration(z: &RewardVector, first: usize, second: usize) -> f64 {
    let m = z.len();
    let tail_items: Vec<usize> = (0..m).filter(|&j| j != first && j != second).collect();
    permutations(&tail_items)
        .into_iter()
        .map(|tail| {
            let mut ranking = vec![first, second];
            ranking.extend(tail);
            pl_brute_force_prob(z, &ranking).expect("valid permutation")
        })
        .sum()
}

/// Deterministic pseudo-random reward vector in (0.1, about 8), spread over
/// two orders of magnitude.
pub fn random_rewards(m: usize, seed: u64) -> RewardVector {
    let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(m as u64);
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    RewardVector::new((0..m).map(|_| 0.1 + 8.0 * next()).collect()).expect("positive rewards")
}
