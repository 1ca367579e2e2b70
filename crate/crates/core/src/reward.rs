//! Counterfactual curiosity reward: counterfactual inputs, Jensen-Shannon
//! consistency, prediction diversity against the other players, and the
//! rarity-weighted accuracy bonus.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabelStats;
use crate::error::{CcgError, Result};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-6;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub beta0: f64,
    pub beta_t: f64,
    pub gamma_r0: f64,
    pub gamma_rt: f64,
    pub perturb_frac: f64,
    pub total_steps: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            beta0: 1.0,
            beta_t: 0.2,
            gamma_r0: 0.2,
            gamma_rt: 1.0,
            perturb_frac: 0.15,
            total_steps: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub rare_acc: f64,
    pub diversity: f64,
    pub cf_consistency: f64,
    pub total: f64,
}

/// Linear schedule for `(beta, gamma_r)`; `step` is clamped to `[0, total_steps]`.
pub fn anneal(step: usize, total_steps: usize, cfg: &RewardConfig) -> (f64, f64) {
    let t = if total_steps == 0 {
        1.0
    } else {
        step.min(total_steps) as f64 / total_steps as f64
    };
    // Convex-combination form hits both endpoints exactly.
    (
        (1.0 - t) * cfg.beta0 + t * cfg.beta_t,
        (1.0 - t) * cfg.gamma_r0 + t * cfg.gamma_rt,
    )
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.is_empty() {
        return Err(CcgError::InvalidDistribution(format!("{name} is empty")));
    }
    if p.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(CcgError::InvalidDistribution(format!(
            "{name} has negative or non-finite entries"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CcgError::InvalidDistribution(format!("{name} sums to {sum}")));
    }
    Ok(())
}

fn xlogy_ratio(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * (a / b).ln()
    }
}

/// Jensen-Shannon divergence in nats, in `[0, ln 2]`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    if p.len() != q.len() {
        return Err(CcgError::InvalidDistribution("length mismatch".into()));
    }
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        acc += 0.5 * xlogy_ratio(a, m) + 0.5 * xlogy_ratio(b, m);
    }
    Ok(acc.clamp(0.0, std::f64::consts::LN_2))
}

/// KL divergence after clamping both inputs to `[PROB_EPS, 1]` and
/// renormalising, so the result is finite and nonnegative.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    if p.len() != q.len() {
        return Err(CcgError::InvalidDistribution("length mismatch".into()));
    }
    let norm = |v: &[f64]| -> Vec<f64> {
        let c: Vec<f64> = v.iter().map(|x| x.max(PROB_EPS)).collect();
        let s: f64 = c.iter().sum();
        c.into_iter().map(|x| x / s).collect()
    };
    let (pc, qc) = (norm(p), norm(q));
    Ok(pc
        .iter()
        .zip(&qc)
        .map(|(&a, &b)| xlogy_ratio(a, b))
        .sum::<f64>()
        .max(0.0))
}

/// `KL(Bernoulli(p) || Bernoulli(q))` with clamped inputs.
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let (p, q) = (clamp_prob(p), clamp_prob(q));
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

/// Partial derivatives of [`bernoulli_kl`] with respect to `p` and `q`.
/// Zero in a coordinate that sits outside the clamp range.
pub fn bernoulli_kl_grad(p: f64, q: f64) -> (f64, f64) {
    let (pc, qc) = (clamp_prob(p), clamp_prob(q));
    let dp = (pc / qc).ln() - ((1.0 - pc) / (1.0 - qc)).ln();
    let dq = -pc / qc + (1.0 - pc) / (1.0 - qc);
    (if pc == p { dp } else { 0.0 }, if qc == q { dq } else { 0.0 })
}

fn binary_entropy(p: f64) -> f64 {
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}

/// `JS(Bernoulli(p) || Bernoulli(q))` with clamped inputs.
pub fn bernoulli_js(p: f64, q: f64) -> f64 {
    let (p, q) = (clamp_prob(p), clamp_prob(q));
    let m = 0.5 * (p + q);
    (binary_entropy(m) - 0.5 * binary_entropy(p) - 0.5 * binary_entropy(q)).max(0.0)
}

/// Partial derivatives of [`bernoulli_js`] with respect to `p` and `q`.
pub fn bernoulli_js_grad(p: f64, q: f64) -> (f64, f64) {
    let (pc, qc) = (clamp_prob(p), clamp_prob(q));
    let m = 0.5 * (pc + qc);
    let dh = |x: f64| ((1.0 - x) / x).ln();
    let dp = 0.5 * dh(m) - 0.5 * dh(pc);
    let dq = 0.5 * dh(m) - 0.5 * dh(qc);
    (if pc == p { dp } else { 0.0 }, if qc == q { dq } else { 0.0 })
}

/// Negative mean Bernoulli JS over a player's labels; in `[-ln 2, 0]`.
pub fn cf_consistency(pi_orig: &[f64], pi_cf: &[f64]) -> f64 {
    if pi_orig.is_empty() {
        return 0.0;
    }
    let js: f64 = pi_orig.iter().zip(pi_cf).map(|(&p, &q)| bernoulli_js(p, q)).sum();
    -js / pi_orig.len() as f64
}

/// Mean Bernoulli KL between player `k`'s probabilities and the mean of the
/// other players' probabilities, over the labels in `labels`. Zero with one player.
pub fn diversity(k: usize, preds_all_players: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = preds_all_players.len();
    if n < 2 || labels.is_empty() {
        return 0.0;
    }
    let total: f64 = labels
        .iter()
        .map(|&l| {
            let others = (0..n).filter(|&o| o != k).map(|o| preds_all_players[o][l]).sum::<f64>() / (n - 1) as f64;
            bernoulli_kl(preds_all_players[k][l], others)
        })
        .sum();
    total / labels.len() as f64
}

/// Inputs describing one player on one sample.
#[derive(Debug, Clone, Copy)]
pub struct PlayerView<'a> {
    pub player: usize,
    /// Labels owned by the player.
    pub labels: &'a [usize],
    /// Full-length probability vectors, one per player, on the original input.
    pub preds_all_players: &'a [Vec<f64>],
    /// Player `player`'s full-length probabilities on the counterfactual input.
    pub preds_cf: &'a [f64],
}

/// Reward for one player on one sample under coefficients `(beta, gamma_r)`.
pub fn player_reward(
    view: PlayerView<'_>,
    y_true: &[u8],
    stats: &LabelStats,
    (beta, gamma_r): (f64, f64),
) -> RewardBreakdown {
    let PlayerView {
        player: k,
        labels,
        preds_all_players,
        preds_cf,
    } = view;
    if labels.is_empty() {
        return RewardBreakdown::default();
    }
    let own = &preds_all_players[k];
    let rare_acc = labels
        .iter()
        .map(|&l| {
            let hit = u8::from(own[l] >= 0.5) == y_true[l];
            f64::from(u8::from(hit)) / (1.0 + stats.freq[l] as f64)
        })
        .sum::<f64>()
        / labels.len() as f64;
    let div = diversity(k, preds_all_players, labels);
    let orig: Vec<f64> = labels.iter().map(|&l| own[l]).collect();
    let cf: Vec<f64> = labels.iter().map(|&l| preds_cf[l]).collect();
    let cons = cf_consistency(&orig, &cf);
    RewardBreakdown {
        rare_acc,
        diversity: div,
        cf_consistency: cons,
        total: rare_acc + beta * div + gamma_r * cons,
    }
}

/// Features that a counterfactual would perturb: the `ceil(frac * nnz)`
/// nonzero features of lowest `|salience|`, ties to the lower index.
pub fn counterfactual_targets(x: &[f64], salience: &[f64], frac: f64) -> Result<Vec<usize>> {
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(CcgError::InvalidArgument(format!(
            "perturbation fraction {frac} outside (0, 1]"
        )));
    }
    if salience.len() != x.len() {
        return Err(CcgError::Dimension("salience length differs from x".into()));
    }
    let mut active: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0).collect();
    let count = ((frac * active.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    active.sort_by(|&a, &b| salience[a].abs().total_cmp(&salience[b].abs()).then(a.cmp(&b)));
    active.truncate(count);
    Ok(active)
}

/// Perturbs the low-salience features of `x`.
///
/// Half of the chosen features (rounded up) are zeroed; the rest take the
/// value of the same feature in a uniformly drawn row of `pool`. With an
/// empty pool every chosen feature is zeroed.
pub fn generate_counterfactual(x: &[f64], salience: &[f64], frac: f64, pool: &[&[f64]], seed: u64) -> Result<Vec<f64>> {
    let mut targets = counterfactual_targets(x, salience, frac)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    targets.shuffle(&mut rng);
    let n_mask = if pool.is_empty() {
        targets.len()
    } else {
        targets.len().div_ceil(2)
    };
    let mut out = x.to_vec();
    for (pos, &f) in targets.iter().enumerate() {
        out[f] = if pos < n_mask {
            0.0
        } else {
            pool[rng.random_range(0..pool.len())][f]
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn js_cases() {
        assert_eq!(js_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - LN_2).abs() < 1e-15);
        let p = [0.2, 0.5, 0.3];
        let q = [0.6, 0.1, 0.3];
        assert!((js_divergence(&p, &q).unwrap() - js_divergence(&q, &p).unwrap()).abs() < 1e-12);
        assert!(js_divergence(&[0.5, 0.6], &[0.5, 0.5]).is_err());
        assert!(js_divergence(&[-0.1, 1.1], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn bernoulli_js_agrees_with_general() {
        for &(p, q) in &[(0.1, 0.8), (0.5, 0.5), (0.33, 0.01)] {
            let g = js_divergence(&[p, 1.0 - p], &[q, 1.0 - q]).unwrap();
            assert!((bernoulli_js(p, q) - g).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_gradients_match_finite_differences() {
        let h = 1e-6;
        for &(p, q) in &[(0.2, 0.7), (0.9, 0.4), (0.5, 0.51)] {
            let (dp, dq) = bernoulli_js_grad(p, q);
            let fp = (bernoulli_js(p + h, q) - bernoulli_js(p - h, q)) / (2.0 * h);
            let fq = (bernoulli_js(p, q + h) - bernoulli_js(p, q - h)) / (2.0 * h);
            assert!((dp - fp).abs() < 1e-6 && (dq - fq).abs() < 1e-6);
            let (dp, dq) = bernoulli_kl_grad(p, q);
            let fp = (bernoulli_kl(p + h, q) - bernoulli_kl(p - h, q)) / (2.0 * h);
            let fq = (bernoulli_kl(p, q + h) - bernoulli_kl(p, q - h)) / (2.0 * h);
            assert!((dp - fp).abs() < 1e-6 && (dq - fq).abs() < 1e-6);
        }
    }

    #[test]
    fn cf_consistency_cases() {
        assert_eq!(cf_consistency(&[0.3, 0.8], &[0.3, 0.8]), 0.0);
        let extreme = cf_consistency(&[0.0, 1.0], &[1.0, 0.0]);
        assert!((-LN_2..-LN_2 + 1e-4).contains(&extreme));
        let p = [0.25, 0.6];
        let q = [0.7, 0.1];
        let expected = -(js_divergence(&[p[0], 1.0 - p[0]], &[q[0], 1.0 - q[0]]).unwrap()
            + js_divergence(&[p[1], 1.0 - p[1]], &[q[1], 1.0 - q[1]]).unwrap())
            / 2.0;
        assert!((cf_consistency(&p, &q) - expected).abs() < 1e-12);
    }

    #[test]
    fn anneal_schedule() {
        let cfg = RewardConfig::default();
        assert_eq!(anneal(0, 100, &cfg), (1.0, 0.2));
        assert_eq!(anneal(100, 100, &cfg), (0.2, 1.0));
        let (b, g) = anneal(50, 100, &cfg);
        assert!((b - 0.6).abs() < 1e-15 && (g - 0.6).abs() < 1e-15);
    }

    fn stats(freq: Vec<usize>) -> LabelStats {
        LabelStats::from_freq(freq, 50.0)
    }

    #[test]
    fn reward_terms() {
        let preds = vec![vec![0.9]];
        let r = player_reward(
            PlayerView {
                player: 0,
                labels: &[0],
                preds_all_players: &preds,
                preds_cf: &[0.9],
            },
            &[1],
            &stats(vec![0]),
            (1.0, 1.0),
        );
        assert_eq!(r.rare_acc, 1.0);
        assert_eq!(r.diversity, 0.0);
        assert_eq!(r.cf_consistency, 0.0);

        let same = vec![vec![0.3, 0.6], vec![0.3, 0.6]];
        assert_eq!(diversity(0, &same, &[0, 1]), 0.0);
    }

    #[test]
    fn two_player_reward_by_hand() {
        // Player 0 owns label 0, player 1 owns label 1.
        let preds = vec![vec![0.8, 0.4], vec![0.3, 0.7]];
        let cf = vec![0.6, 0.5];
        let st = stats(vec![3, 1]);
        let r = player_reward(
            PlayerView {
                player: 0,
                labels: &[0],
                preds_all_players: &preds,
                preds_cf: &cf,
            },
            &[1, 1],
            &st,
            (1.0, 1.0),
        );
        let rare_acc = 1.0 / 4.0;
        let kl = 0.8 * (0.8f64 / 0.3).ln() + 0.2 * (0.2f64 / 0.7).ln();
        let m: f64 = 0.7;
        let js = 0.5 * (0.8 * (0.8 / m).ln() + 0.2 * (0.2 / (1.0 - m)).ln())
            + 0.5 * (0.6 * (0.6 / m).ln() + 0.4 * (0.4 / (1.0 - m)).ln());
        assert!((r.rare_acc - rare_acc).abs() < 1e-12);
        assert!((r.diversity - kl).abs() < 1e-12);
        assert!((r.cf_consistency + js).abs() < 1e-12);
        assert!((r.total - (rare_acc + kl - js)).abs() < 1e-12);
    }

    #[test]
    fn rarer_label_earns_more() {
        let preds = vec![vec![0.9, 0.9]];
        let st = stats(vec![2, 9]);
        let one = |l: usize| {
            player_reward(
                PlayerView {
                    player: 0,
                    labels: &[l],
                    preds_all_players: &preds,
                    preds_cf: &preds[0],
                },
                &[1, 1],
                &st,
                (0.0, 0.0),
            )
            .rare_acc
        };
        assert!(one(0) > one(1));
    }

    #[test]
    fn counterfactual_counts_and_determinism() {
        let x: Vec<f64> = (1..=20).map(|v| v as f64).collect();
        let sal: Vec<f64> = (0..20).map(|v| (20 - v) as f64).collect();
        let targets = counterfactual_targets(&x, &sal, 0.1).unwrap();
        assert_eq!(targets.len(), 2);
        assert_eq!(targets, vec![19, 18]);
        let pool_rows: Vec<Vec<f64>> = (0..4).map(|r| vec![-(r as f64); 20]).collect();
        let pool: Vec<&[f64]> = pool_rows.iter().map(Vec::as_slice).collect();
        let a = generate_counterfactual(&x, &sal, 0.15, &pool, 3).unwrap();
        let b = generate_counterfactual(&x, &sal, 0.15, &pool, 3).unwrap();
        assert_eq!(a, b);
        let zeros = a.iter().filter(|v| **v == 0.0).count();
        assert!(zeros >= 2, "three targets -> two masked");
        let all = generate_counterfactual(&x, &sal, 1.0, &[], 0).unwrap();
        assert!(all.iter().zip(&x).all(|(c, o)| c != o));
        assert_eq!(
            generate_counterfactual(&[0.0; 3], &[1.0; 3], 0.5, &[], 0).unwrap(),
            vec![0.0; 3]
        );
        assert!(generate_counterfactual(&x, &sal, 0.0, &pool, 0).is_err());
    }
}
