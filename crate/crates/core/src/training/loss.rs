//! Label-imbalance aware supervision.

use serde::{Deserialize, Serialize};

use crate::data::LabelStats;
use crate::invariance::bce_sum;

/// Per-label loss weights with mean 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaWeights {
    pub alpha: Vec<f64>,
}

impl AlphaWeights {
    pub fn uniform(num_labels: usize) -> Self {
        Self {
            alpha: vec![1.0; num_labels],
        }
    }
}

/// `alpha_l ∝ max(freq_l, 1)^(-1/4)`, rescaled to mean 1.
pub fn alpha_weights(stats: &LabelStats) -> AlphaWeights {
    let raw: Vec<f64> = stats.freq.iter().map(|&f| (f.max(1) as f64).powf(-0.25)).collect();
    let sum: f64 = raw.iter().sum();
    let scale = raw.len() as f64 / sum;
    AlphaWeights {
        alpha: raw.into_iter().map(|r| r * scale).collect(),
    }
}

/// `-(1/N) sum_n sum_l alpha_l [y log p + (1-y) log(1-p)]` with clamped `p`.
pub fn weighted_ce(preds: &[Vec<f64>], y: &[Vec<u8>], alpha: &AlphaWeights) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let labels: Vec<usize> = (0..alpha.alpha.len()).collect();
    let total: f64 = preds
        .iter()
        .zip(y)
        .map(|(p, t)| {
            labels
                .iter()
                .map(|&l| alpha.alpha[l] * bce_sum(t, p, &[l]))
                .sum::<f64>()
        })
        .sum();
    total / preds.len() as f64
}

/// Binary cross-entropy restricted to the rare columns, summed over those
/// columns and averaged over the batch. Zero for an empty rare set.
pub fn rare_reg_loss(preds: &[Vec<f64>], y: &[Vec<u8>], stats: &LabelStats) -> f64 {
    if preds.is_empty() || stats.rare_set.is_empty() {
        return 0.0;
    }
    let total: f64 = preds.iter().zip(y).map(|(p, t)| bce_sum(t, p, &stats.rare_set)).sum();
    total / preds.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(freq: Vec<usize>, pct: f64) -> LabelStats {
        LabelStats::from_freq(freq, pct)
    }

    #[test]
    fn alpha_ratios() {
        let a = alpha_weights(&stats(vec![16, 1], 0.0));
        assert!((a.alpha[1] / a.alpha[0] - 2.0).abs() < 1e-12);
        let eq = alpha_weights(&stats(vec![5, 5, 5], 0.0));
        assert!(eq.alpha.iter().all(|v| (v - 1.0).abs() < 1e-12));
        // Fourth-root oracle: 81 -> 3, 16 -> 2, 1 -> 1.
        let a = alpha_weights(&stats(vec![81, 16, 1], 0.0));
        assert!((a.alpha[0] / a.alpha[2] - 1.0 / 3.0).abs() < 1e-12);
        assert!((a.alpha[1] / a.alpha[2] - 1.0 / 2.0).abs() < 1e-12);
        let mean = a.alpha.iter().sum::<f64>() / 3.0;
        assert!((mean - 1.0).abs() < 1e-9);
        // Zero frequency is floored at one.
        let z = alpha_weights(&stats(vec![0, 1], 0.0));
        assert!((z.alpha[0] - z.alpha[1]).abs() < 1e-15);
    }

    #[test]
    fn weighted_ce_cases() {
        let y = vec![vec![1u8, 0], vec![0, 1]];
        let perfect = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(weighted_ce(&perfect, &y, &AlphaWeights::uniform(2)) <= 1e-5);
        let p = vec![vec![0.8, 0.3], vec![0.4, 0.6]];
        let alpha = AlphaWeights { alpha: vec![0.5, 1.5] };
        let by_hand = -(0.5 * 0.8f64.ln() + 1.5 * 0.7f64.ln() + 0.5 * 0.6f64.ln() + 1.5 * 0.6f64.ln()) / 2.0;
        assert!((weighted_ce(&p, &y, &alpha) - by_hand).abs() < 1e-12);
        let plain = -(0.8f64.ln() + 0.7f64.ln() + 0.6f64.ln() + 0.6f64.ln()) / 2.0;
        assert!((weighted_ce(&p, &y, &AlphaWeights::uniform(2)) - plain).abs() < 1e-12);
    }

    #[test]
    fn rare_reg_cases() {
        let y = vec![vec![1u8, 0, 1]];
        let p = vec![vec![0.7, 0.2, 0.4]];
        assert_eq!(rare_reg_loss(&p, &y, &stats(vec![3, 2, 1], 0.0)), 0.0);
        let all = stats(vec![3, 2, 1], 100.0);
        assert!((rare_reg_loss(&p, &y, &all) - weighted_ce(&p, &y, &AlphaWeights::uniform(3))).abs() < 1e-15);
        let one = stats(vec![3, 2, 1], 30.0);
        assert_eq!(one.rare_set, vec![2]);
        assert!((rare_reg_loss(&p, &y, &one) + 0.4f64.ln()).abs() < 1e-12);
    }
}
