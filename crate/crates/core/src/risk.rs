//! Empirical Conditional Value at Risk over trajectory constraint costs, plus
//! the companion empirical quantile.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// CVaR level and penalty coefficient for the optional training penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskConfig {
    pub alpha: f64,
    pub weight: f64,
}

impl RiskConfig {
    pub fn new(alpha: f64, weight: f64) -> Result<Self, RiskError> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(RiskError::AlphaOutOfRange(alpha));
        }
        if weight < 0.0 {
            return Err(RiskError::NegativeWeight(weight));
        }
        Ok(Self { alpha, weight })
    }
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            weight: 0.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("cost list is empty")]
    EmptyCosts,
    #[error("alpha {0} outside [0, 1)")]
    AlphaOutOfRange(f64),
    #[error("penalty weight {0} is negative")]
    NegativeWeight(f64),
}

/// Ceiling with a 1e-9 snap toward the nearest integer, so that products like
/// 0.9 * 10 land on their exact rank instead of rounding a ulp upward.
fn snapped_ceil(x: f64) -> usize {
    let rounded = x.round();
    let v = if (x - rounded).abs() < 1e-9 { rounded } else { x.ceil() };
    v as usize
}

/// Number of samples in the alpha-tail: `ceil((1 - alpha) * n)`, at least 1.
pub fn tail_len(n: usize, alpha: f64) -> usize {
    snapped_ceil((1.0 - alpha) * n as f64).max(1)
}

fn check(costs: &[f64], alpha: f64) -> Result<(), RiskError> {
    if costs.is_empty() {
        return Err(RiskError::EmptyCosts);
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(RiskError::AlphaOutOfRange(alpha));
    }
    Ok(())
}

/// Sorts descending (ties broken by original index for determinism) and
/// returns the indices of the worst `tail_len(n, alpha)` samples.
pub fn tail_indices(costs: &[f64], alpha: f64) -> Result<Vec<usize>, RiskError> {
    check(costs, alpha)?;
    let mut order: Vec<usize> = (0..costs.len()).collect();
    order.sort_by(|&i, &j| costs[j].total_cmp(&costs[i]).then(i.cmp(&j)));
    order.truncate(tail_len(costs.len(), alpha));
    Ok(order)
}

/// Rank-based CVaR estimate: the mean of the worst `ceil((1 - alpha) * n)`
/// samples. `alpha = 0` degenerates to the arithmetic mean.
pub fn cvar(costs: &[f64], alpha: f64) -> Result<f64, RiskError> {
    let tail = tail_indices(costs, alpha)?;
    let sum: f64 = tail.iter().map(|&i| costs[i]).sum();
    Ok(sum / tail.len() as f64)
}

/// Lower empirical alpha-quantile: the smallest cost `c` such that at least
/// `alpha * n` samples are `<= c`.
pub fn var(costs: &[f64], alpha: f64) -> Result<f64, RiskError> {
    check(costs, alpha)?;
    let mut sorted = costs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = snapped_ceil(alpha * sorted.len() as f64).max(1);
    Ok(sorted[rank - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_to_ten() -> Vec<f64> {
        (1..=10).map(|v| v as f64).collect()
    }

    #[test]
    fn cvar_examples() {
        let costs = one_to_ten();
        assert_eq!(cvar(&costs, 0.9), Ok(10.0));
        assert_eq!(cvar(&costs, 0.8), Ok(9.5));
        assert_eq!(cvar(&costs, 0.0), Ok(5.5));
    }

    #[test]
    fn var_examples() {
        let costs = one_to_ten();
        assert_eq!(var(&costs, 0.9), Ok(9.0));
        assert_eq!(var(&vec![3.0; 7], 0.6), Ok(3.0));
        assert_eq!(var(&[5.0], 0.9), Ok(5.0));
    }

    #[test]
    fn errors_on_bad_input() {
        assert_eq!(cvar(&[], 0.5), Err(RiskError::EmptyCosts));
        assert_eq!(cvar(&[1.0], 1.0), Err(RiskError::AlphaOutOfRange(1.0)));
        assert_eq!(var(&[1.0], -0.1), Err(RiskError::AlphaOutOfRange(-0.1)));
        assert_eq!(RiskConfig::new(0.9, -1.0), Err(RiskError::NegativeWeight(-1.0)));
    }

    #[test]
    fn cvar_at_least_mean_and_var() {
        let samples = [4.0, -2.0, 7.5, 0.0, 7.5, 3.0, -2.0];
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        for alpha in [0.0, 0.3, 0.5, 0.77, 0.9] {
            let c = cvar(&samples, alpha).unwrap();
            assert!(c >= mean - 1e-12);
            assert!(c >= var(&samples, alpha).unwrap() - 1e-12);
        }
        // Equality when all samples agree.
        let flat = vec![2.5; 6];
        assert_eq!(cvar(&flat, 0.6), Ok(2.5));
    }

    #[test]
    fn cvar_monotone_in_alpha() {
        let samples = [1.0, 9.0, 2.0, 8.0, 5.0, 5.0, 0.0, 3.0];
        let mut prev = f64::NEG_INFINITY;
        for alpha in [0.0, 0.2, 0.4, 0.6, 0.8, 0.9, 0.95] {
            let c = cvar(&samples, alpha).unwrap();
            assert!(c >= prev - 1e-12, "alpha {alpha}: {c} < {prev}");
            prev = c;
        }
    }

    #[test]
    fn cvar_translation_and_scale() {
        let samples = [1.0, 4.0, 2.0, 8.0, 3.0];
        let alpha = 0.6;
        let base = cvar(&samples, alpha).unwrap();

        let shifted: Vec<f64> = samples.iter().map(|c| c + 2.25).collect();
        assert!((cvar(&shifted, alpha).unwrap() - (base + 2.25)).abs() < 1e-12);

        let scaled: Vec<f64> = samples.iter().map(|c| c * 3.0).collect();
        assert!((cvar(&scaled, alpha).unwrap() - base * 3.0).abs() < 1e-12);
    }

    #[test]
    fn tie_handling_is_deterministic() {
        // Ties at the tail boundary resolve by original index.
        let samples = [5.0, 5.0, 5.0, 1.0];
        assert_eq!(tail_indices(&samples, 0.6).unwrap(), vec![0, 1]);
    }
}
