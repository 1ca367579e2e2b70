//! Augmented environments and the two invariance losses: encoder agreement
//! across views and per-player cross-entropy averaged over views.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::PlantedWorld;
use crate::error::{CcgError, Result};
use crate::reward::clamp_prob;

/// `M` views of one input. `views[0]` is the input itself.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvViews {
    pub views: Vec<Vec<f64>>,
}

impl EnvViews {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

const SPURIOUS_SCALE_STD: f64 = 0.2;
const DROP_FRAC: f64 = 0.1;
const JITTER_STD: f64 = 0.05;

/// Builds `m` environment views of `x`.
///
/// With a planted world, extra views scale each spurious-block feature by an
/// independent `N(1, 0.2)` factor and leave everything else untouched.
/// Without one, they zero a random 10% of the nonzero features and add
/// `N(0, 0.05)` noise to the rest.
pub fn make_env_views(x: &[f64], m: usize, planted: Option<&PlantedWorld>, seed: u64) -> Result<EnvViews> {
    if m == 0 {
        return Err(CcgError::InvalidArgument("need at least one view".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut views = Vec::with_capacity(m);
    views.push(x.to_vec());
    for _ in 1..m {
        let view = match planted {
            Some(world) => {
                let scale = Normal::new(1.0, SPURIOUS_SCALE_STD).expect("valid std");
                let mut v = x.to_vec();
                for f in world.spurious_features() {
                    if f < v.len() {
                        v[f] *= scale.sample(&mut rng);
                    }
                }
                v
            }
            None => {
                let jitter = Normal::new(0.0, JITTER_STD).expect("valid std");
                let mut active: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0).collect();
                active.shuffle(&mut rng);
                let n_drop = ((DROP_FRAC * active.len() as f64) - 1e-9).ceil().max(0.0) as usize;
                let mut v = x.to_vec();
                for &f in &active[..n_drop] {
                    v[f] = 0.0;
                }
                for &f in &active[n_drop..] {
                    v[f] += jitter.sample(&mut rng);
                }
                v
            }
        };
        views.push(view);
    }
    Ok(EnvViews { views })
}

/// Sum over players of pairwise squared distances between view encodings,
/// for one sample. `encodings[k][m]` is player `k`'s encoding of view `m`.
pub fn contrastive_inv_loss(encodings: &[Vec<Vec<f64>>]) -> f64 {
    let mut total = 0.0;
    for per_view in encodings {
        for a in 0..per_view.len() {
            for b in a + 1..per_view.len() {
                total += per_view[a]
                    .iter()
                    .zip(&per_view[b])
                    .map(|(u, v)| (u - v) * (u - v))
                    .sum::<f64>();
            }
        }
    }
    total
}

/// [`contrastive_inv_loss`] averaged over a batch.
pub fn contrastive_inv_loss_batch(batch: &[Vec<Vec<Vec<f64>>>]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch.iter().map(|e| contrastive_inv_loss(e)).sum::<f64>() / batch.len() as f64
}

/// Binary cross-entropy summed over the given labels, probabilities clamped.
pub fn bce_sum(y: &[u8], p: &[f64], labels: &[usize]) -> f64 {
    labels
        .iter()
        .map(|&l| {
            let q = clamp_prob(p[l]);
            if y[l] == 1 {
                -q.ln()
            } else {
                -(1.0 - q).ln()
            }
        })
        .sum()
}

/// Mean over views of the per-player cross-entropy, summed over players, for
/// one sample. `preds[m][k]` is player `k`'s full-length probability vector on view `m`.
pub fn env_consistency_loss(preds: &[Vec<Vec<f64>>], y: &[u8], subsets: &[Vec<usize>]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let total: f64 = preds
        .iter()
        .map(|per_player| {
            subsets
                .iter()
                .zip(per_player)
                .map(|(labels, p)| bce_sum(y, p, labels))
                .sum::<f64>()
        })
        .sum();
    total / preds.len() as f64
}
