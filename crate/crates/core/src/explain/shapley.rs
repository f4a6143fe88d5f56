//! Shapley values over attribute groups, exact or by permutation sampling.
//!
//! A coalition keeps its members' features from `x` and takes every other
//! group from `background`.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ExplainError;

pub const MAX_EXACT_PLAYERS: usize = 12;

/// Input with the groups whose bit is set in `present` taken from `x`.
pub fn compose(x: &[f64], background: &[f64], groups: &[Range<usize>], present: impl Fn(usize) -> bool) -> Vec<f64> {
    let mut v = background.to_vec();
    for (q, g) in groups.iter().enumerate() {
        if present(q) {
            v[g.clone()].copy_from_slice(&x[g.clone()]);
        }
    }
    v
}

/// Full enumeration of all `2^Q` coalitions.
pub fn shapley_exact(
    value: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    background: &[f64],
    groups: &[Range<usize>],
) -> Result<Vec<f64>, ExplainError> {
    let q = groups.len();
    if q > MAX_EXACT_PLAYERS {
        return Err(ExplainError::TooManyAttributesForExact { attributes: q, limit: MAX_EXACT_PLAYERS });
    }
    let v: Vec<f64> = (0..1usize << q).map(|mask| value(&compose(x, background, groups, |g| mask >> g & 1 == 1))).collect();
    // weight of a coalition of size s not containing the player: s!(q-s-1)!/q!
    let mut weight = vec![0.0; q];
    for (s, w) in weight.iter_mut().enumerate() {
        *w = (1..=s).map(|k| k as f64).product::<f64>() * (1..q - s).map(|k| k as f64).product::<f64>()
            / (1..=q).map(|k| k as f64).product::<f64>();
    }
    let mut phi = vec![0.0; q];
    for (i, p) in phi.iter_mut().enumerate() {
        for mask in 0..1usize << q {
            if mask >> i & 1 == 0 {
                *p += weight[mask.count_ones() as usize] * (v[mask | 1 << i] - v[mask]);
            }
        }
    }
    Ok(phi)
}

/// Mean marginal contribution over `permutations` random orderings.
pub fn shapley_sampled(
    value: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    background: &[f64],
    groups: &[Range<usize>],
    permutations: usize,
    seed: u64,
) -> Vec<f64> {
    let q = groups.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..q).collect();
    let mut phi = vec![0.0; q];
    for _ in 0..permutations {
        order.shuffle(&mut rng);
        let mut current = background.to_vec();
        let mut prev = value(&current);
        for &g in &order {
            current[groups[g].clone()].copy_from_slice(&x[groups[g].clone()]);
            let next = value(&current);
            phi[g] += next - prev;
            prev = next;
        }
    }
    phi.iter_mut().for_each(|p| *p /= permutations.max(1) as f64);
    phi
}
