//! Local linear surrogate over attribute presence masks.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::shapley::compose;
use super::ExplainError;

pub const MIN_PERTURBATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Weighted coefficient of determination of the surrogate.
    pub r_squared: f64,
    pub kernel_width: f64,
}

pub fn default_kernel_width(attributes: usize) -> f64 {
    0.75 * (attributes as f64).sqrt()
}

/// Samples uniform presence masks (the first sample is the unperturbed input),
/// weights them by `exp(-d^2 / width^2)` of the count of absent attributes,
/// and fits weighted least squares.
pub fn lime_fit(
    value: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    background: &[f64],
    groups: &[Range<usize>],
    perturbations: usize,
    kernel_width: Option<f64>,
    seed: u64,
) -> Result<LimeFit, ExplainError> {
    if perturbations < MIN_PERTURBATIONS {
        return Err(ExplainError::TooFewPerturbations { got: perturbations, min: MIN_PERTURBATIONS });
    }
    let q = groups.len();
    let width = kernel_width.unwrap_or_else(|| default_kernel_width(q));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = Vec::with_capacity(perturbations);
    masks.push(vec![true; q]);
    while masks.len() < perturbations {
        masks.push((0..q).map(|_| rng.gen_bool(0.5)).collect::<Vec<bool>>());
    }
    let ys: Vec<f64> = masks.iter().map(|m| value(&compose(x, background, groups, |g| m[g]))).collect();
    let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &y| (l.min(y), h.max(y)));
    if hi - lo <= 1e-15 {
        return Err(ExplainError::DegeneratePerturbations);
    }
    let weights: Vec<f64> = masks
        .iter()
        .map(|m| {
            let d = m.iter().filter(|&&b| !b).count() as f64;
            (-(d * d) / (width * width)).exp()
        })
        .collect();

    // normal equations for [1, z_1 .. z_q]
    let k = q + 1;
    let mut a = vec![vec![0.0; k + 1]; k];
    for ((m, &y), &w) in masks.iter().zip(&ys).zip(&weights) {
        let row: Vec<f64> = std::iter::once(1.0).chain(m.iter().map(|&b| if b { 1.0 } else { 0.0 })).collect();
        for i in 0..k {
            for j in 0..k {
                a[i][j] += w * row[i] * row[j];
            }
            a[i][k] += w * row[i] * y;
        }
    }
    for (i, r) in a.iter_mut().enumerate().skip(1) {
        r[i] += 1e-10;
    }
    let beta = solve(a).ok_or(ExplainError::DegeneratePerturbations)?;

    let w_sum: f64 = weights.iter().sum();
    let mean = ys.iter().zip(&weights).map(|(y, w)| y * w).sum::<f64>() / w_sum;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for ((m, &y), &w) in masks.iter().zip(&ys).zip(&weights) {
        let pred = beta[0] + m.iter().zip(&beta[1..]).filter(|(b, _)| **b).map(|(_, c)| c).sum::<f64>();
        ss_res += w * (y - pred).powi(2);
        ss_tot += w * (y - mean).powi(2);
    }
    Ok(LimeFit {
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
        kernel_width: width,
    })
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..=n {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (a[r][n] - s) / a[r][r];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solver_matches_known_system() {
        let x = solve(vec![vec![2.0, 1.0, 5.0], vec![1.0, 3.0, 10.0]]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn exact_linear_model_is_recovered() {
        let groups: Vec<Range<usize>> = (0..5).map(|i| i..i + 1).collect();
        let w = [0.3, -0.7, 1.1, 0.0, 0.05];
        let f = |v: &[f64]| 0.2 + v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let fit = lime_fit(&f, &[1.0; 5], &[0.0; 5], &groups, 200, None, 3).unwrap();
        for (c, wi) in fit.coefficients.iter().zip(&w) {
            assert!((c - wi).abs() < 1e-6);
        }
        assert!(fit.r_squared > 0.999999);
    }

    #[test]
    fn degenerate_and_small_inputs() {
        let groups: Vec<Range<usize>> = (0..3).map(|i| i..i + 1).collect();
        let flat = |_: &[f64]| 0.4;
        assert_eq!(lime_fit(&flat, &[1.0; 3], &[0.0; 3], &groups, 60, None, 1), Err(ExplainError::DegeneratePerturbations));
        assert!(matches!(
            lime_fit(&flat, &[1.0; 3], &[0.0; 3], &groups, 10, None, 1),
            Err(ExplainError::TooFewPerturbations { .. })
        ));
    }
}
