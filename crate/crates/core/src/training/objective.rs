//! The composite training objective and its analytic gradient.
//!
//! ```text
//! total = l_ce * weighted_ce
//!       + l_rare * rare_reg
//!       + l_graph * graph_loss(W, W~)
//!       + l_inv * contrastive_inv
//!       + l_env * env_consistency
//!       + l_rwd * (-beta * diversity + gamma_r * js_cf)
//! ```
//!
//! Sample terms are averaged over the batch; the graph term is added once.
//! Counterfactuals and environment views are inputs here, prepared
//! beforehand, so the objective is a deterministic function of the parameters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabelStats, Sample};
use crate::error::{CcgError, Result};
use crate::graph::{graph_loss, CausalGraph, GraphLossConfig};
use crate::invariance::{bce_sum, contrastive_inv_loss};
use crate::matrix::{sigmoid, Mask, Matrix};
use crate::players::{build_masks, player_encode, MaskSet, Partition};
use crate::reward::{
    bernoulli_js, bernoulli_js_grad, bernoulli_kl, bernoulli_kl_grad, clamp_prob, player_reward, PlayerView,
};
use crate::sem::{CcgParams, GradientBundle, SemModel};

use super::loss::AlphaWeights;

/// Coefficients of every term in the composite objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub lambda_ce: f64,
    pub lambda_rare: f64,
    pub lambda_graph: f64,
    pub lambda_inv: f64,
    pub lambda_env: f64,
    pub lambda_rwd: f64,
    pub beta: f64,
    pub gamma_r: f64,
}

impl ObjectiveSpec {
    pub fn zero() -> Self {
        Self {
            lambda_ce: 0.0,
            lambda_rare: 0.0,
            lambda_graph: 0.0,
            lambda_inv: 0.0,
            lambda_env: 0.0,
            lambda_rwd: 0.0,
            beta: 0.0,
            gamma_r: 0.0,
        }
    }

    pub fn ce_only() -> Self {
        Self {
            lambda_ce: 1.0,
            ..Self::zero()
        }
    }
}

/// Term values of one objective evaluation (batch means, unweighted).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TermBreakdown {
    pub weighted_ce: f64,
    pub rare_reg: f64,
    pub graph: f64,
    pub graph_self_loops: f64,
    pub inv: f64,
    pub env: f64,
    pub diversity: f64,
    pub js_cf: f64,
    pub rare_acc: f64,
    pub total: f64,
}

impl TermBreakdown {
    fn accumulate(&mut self, o: &TermBreakdown) {
        self.weighted_ce += o.weighted_ce;
        self.rare_reg += o.rare_reg;
        self.inv += o.inv;
        self.env += o.env;
        self.diversity += o.diversity;
        self.js_cf += o.js_cf;
        self.rare_acc += o.rare_acc;
    }

    fn check_finite(&self) -> Result<()> {
        let named = [
            ("weighted_ce", self.weighted_ce),
            ("rare_reg", self.rare_reg),
            ("graph", self.graph),
            ("inv", self.inv),
            ("env", self.env),
            ("diversity", self.diversity),
            ("js_cf", self.js_cf),
            ("total", self.total),
        ];
        for (term, v) in named {
            if !v.is_finite() {
                return Err(CcgError::NonFinite { term: term.into() });
            }
        }
        Ok(())
    }
}

/// Player subsets with their masks, plus derived lookups.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayerSetup {
    pub partition: Partition,
    pub masks: MaskSet,
    union: Mask,
    owners: Vec<usize>,
}

impl PlayerSetup {
    pub fn new(partition: Partition, masks: MaskSet) -> Self {
        let union = masks.union();
        let owners = partition.owners();
        Self {
            partition,
            masks,
            union,
            owners,
        }
    }

    pub fn from_graph(partition: Partition, g: &CausalGraph) -> Self {
        let masks = build_masks(&partition, g);
        Self::new(partition, masks)
    }

    /// One player owning every label and seeing every pairwise term.
    pub fn unrestricted(num_labels: usize) -> Self {
        let partition = Partition::from_subsets(vec![(0..num_labels).collect()], &CausalGraph::empty(num_labels));
        let masks = MaskSet {
            masks: vec![Mask::full(num_labels)],
        };
        Self::new(partition, masks)
    }

    pub fn num_players(&self) -> usize {
        self.partition.num_players()
    }

    /// OR of all player masks; label `i`'s row is its owner's row.
    pub fn union_mask(&self) -> &Mask {
        &self.union
    }

    pub fn owners(&self) -> &[usize] {
        &self.owners
    }

    /// Merged per-label predictions: each label scored by its owning player.
    pub fn predict(&self, model: &SemModel, x: &[f64]) -> Result<Vec<f64>> {
        model.predict_masked(x, &self.union)
    }
}

/// Everything the objective needs besides parameters and data.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveContext<'a> {
    pub alpha: &'a AlphaWeights,
    pub stats: &'a LabelStats,
    pub w_ideal: &'a Matrix,
    pub graph_cfg: &'a GraphLossConfig,
    pub players: &'a PlayerSetup,
}

/// One training sample with its environment views and counterfactual.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub sample: Sample,
    /// `views[0]` is the sample's own feature vector.
    pub views: Vec<Vec<f64>>,
    pub counterfactual: Vec<f64>,
}

impl PreparedSample {
    /// No augmentation: one view and the input itself as counterfactual.
    pub fn plain(sample: Sample) -> Self {
        let views = vec![sample.features.clone()];
        let counterfactual = sample.features.clone();
        Self {
            sample,
            views,
            counterfactual,
        }
    }
}

const REDUCE_CHUNK: usize = 16;

fn bce_dz(p: f64, y: u8) -> f64 {
    if clamp_prob(p) != p {
        0.0
    } else {
        p - f64::from(y)
    }
}

/// Composite loss, its gradient, and the term breakdown for one batch.
pub fn composite_objective(
    params: &CcgParams,
    batch: &[PreparedSample],
    ctx: &ObjectiveContext<'_>,
    spec: &ObjectiveSpec,
) -> Result<(f64, GradientBundle, TermBreakdown)> {
    if batch.is_empty() {
        return Err(CcgError::InvalidArgument("empty batch".into()));
    }
    let model = &params.sem;
    let players = ctx.players;
    let n_players = players.num_players();
    if params.encoders.len() != n_players {
        return Err(CcgError::Dimension(format!(
            "{} encoders for {n_players} players",
            params.encoders.len()
        )));
    }
    let inv_b = 1.0 / batch.len() as f64;

    // Fixed-size chunks keep memory bounded; summation order never depends
    // on the thread count.
    let mut grads = params.zeros_like();
    let mut terms = TermBreakdown::default();
    for chunk in batch.chunks(REDUCE_CHUNK) {
        let per_sample: Vec<Result<(GradientBundle, TermBreakdown)>> = chunk
            .par_iter()
            .map(|prepared| sample_objective(params, prepared, ctx, spec, inv_b))
            .collect();
        for result in per_sample {
            let (g, t) = result?;
            grads.add_scaled(&g, 1.0);
            terms.accumulate(&t);
        }
    }

    let gl = graph_loss(&model.weights, ctx.w_ideal, ctx.graph_cfg)?;
    terms.graph = gl.value;
    terms.graph_self_loops = gl.self_loops as f64;
    if spec.lambda_graph != 0.0 {
        for (g, d) in grads.sem.weights.as_mut_slice().iter_mut().zip(gl.grad.as_slice()) {
            *g += spec.lambda_graph * d;
        }
    }

    terms.total = spec.lambda_ce * terms.weighted_ce
        + spec.lambda_rare * terms.rare_reg
        + spec.lambda_graph * terms.graph
        + spec.lambda_inv * terms.inv
        + spec.lambda_env * terms.env
        + spec.lambda_rwd * (-spec.beta * terms.diversity + spec.gamma_r * terms.js_cf);
    terms.check_finite()?;
    Ok((terms.total, grads, terms))
}

/// Contribution of one sample, already scaled by `inv_b`.
fn sample_objective(
    params: &CcgParams,
    prepared: &PreparedSample,
    ctx: &ObjectiveContext<'_>,
    spec: &ObjectiveSpec,
    inv_b: f64,
) -> Result<(GradientBundle, TermBreakdown)> {
    let model = &params.sem;
    let l = model.num_labels;
    let players = ctx.players;
    let n_players = players.num_players();
    let subsets = &players.partition.subsets;
    let union = players.union_mask();
    let mut grads = params.zeros_like();
    let mut terms = TermBreakdown::default();
    let y = &prepared.sample.labels;
    let m_views = prepared.views.len();
    if m_views == 0 {
        return Err(CcgError::InvalidArgument("sample without views".into()));
    }

    // Forward passes.
    let tapes: Vec<_> = prepared.views.iter().map(|v| model.tape(v, union)).collect();
    let probs: Vec<Vec<f64>> = tapes
        .iter()
        .map(|t| model.logits(t, union).into_iter().map(sigmoid).collect())
        .collect();
    let cf_tape = model.tape(&prepared.counterfactual, union);
    let p_cf: Vec<f64> = model.logits(&cf_tape, union).into_iter().map(sigmoid).collect();
    let per_player: Vec<Vec<f64>> = players
        .masks
        .masks
        .iter()
        .map(|m| model.logits(&tapes[0], m).into_iter().map(sigmoid).collect())
        .collect();
    let p0 = &probs[0];

    let mut dz_views: Vec<Vec<f64>> = vec![vec![0.0; l]; m_views];
    let mut dz_cf = vec![0.0; l];
    let mut dz_players: Vec<Vec<f64>> = vec![vec![0.0; l]; n_players];

    // Weighted cross-entropy and the rare-label regulariser on the original view.
    for i in 0..l {
        let bce = bce_sum(y, p0, &[i]);
        terms.weighted_ce += inv_b * ctx.alpha.alpha[i] * bce;
        dz_views[0][i] += inv_b * spec.lambda_ce * ctx.alpha.alpha[i] * bce_dz(p0[i], y[i]);
    }
    for &i in &ctx.stats.rare_set {
        terms.rare_reg += inv_b * bce_sum(y, p0, &[i]);
        dz_views[0][i] += inv_b * spec.lambda_rare * bce_dz(p0[i], y[i]);
    }

    // Cross-environment consistency: owner predictions on every view.
    let inv_m = 1.0 / m_views as f64;
    let all: Vec<usize> = (0..l).collect();
    for (m, p) in probs.iter().enumerate() {
        terms.env += inv_b * inv_m * bce_sum(y, p, &all);
        for i in 0..l {
            dz_views[m][i] += inv_b * inv_m * spec.lambda_env * bce_dz(p[i], y[i]);
        }
    }

    // Reward surrogates, averaged over players and their labels.
    let c_rwd = inv_b * spec.lambda_rwd / n_players as f64;
    for (k, labels) in subsets.iter().enumerate() {
        if labels.is_empty() {
            continue;
        }
        let per_label = 1.0 / labels.len() as f64;
        for &i in labels {
            let (js, (djs_p, djs_q)) = (bernoulli_js(p0[i], p_cf[i]), bernoulli_js_grad(p0[i], p_cf[i]));
            terms.js_cf += inv_b * js * per_label / n_players as f64;
            let scale = c_rwd * spec.gamma_r * per_label;
            dz_views[0][i] += scale * djs_p * p0[i] * (1.0 - p0[i]);
            dz_cf[i] += scale * djs_q * p_cf[i] * (1.0 - p_cf[i]);

            if n_players >= 2 {
                let others = (n_players - 1) as f64;
                let q: f64 = (0..n_players)
                    .filter(|&o| o != k)
                    .map(|o| per_player[o][i])
                    .sum::<f64>()
                    / others;
                let kl = bernoulli_kl(p0[i], q);
                let (dkl_p, dkl_q) = bernoulli_kl_grad(p0[i], q);
                terms.diversity += inv_b * kl * per_label / n_players as f64;
                let scale = -c_rwd * spec.beta * per_label;
                dz_views[0][i] += scale * dkl_p * p0[i] * (1.0 - p0[i]);
                for o in (0..n_players).filter(|&o| o != k) {
                    let po = per_player[o][i];
                    dz_players[o][i] += scale * dkl_q / others * po * (1.0 - po);
                }
            }
        }
        terms.rare_acc += inv_b / n_players as f64
            * player_reward(
                PlayerView {
                    player: k,
                    labels,
                    preds_all_players: &per_player,
                    preds_cf: &p_cf,
                },
                y,
                ctx.stats,
                (0.0, 0.0),
            )
            .rare_acc;
    }

    // Contrastive invariance over player encoders.
    if m_views >= 2 {
        let encodings: Vec<Vec<Vec<f64>>> = params
            .encoders
            .iter()
            .map(|enc| {
                prepared
                    .views
                    .iter()
                    .map(|v| player_encode(enc, v))
                    .collect::<Result<_>>()
            })
            .collect::<Result<_>>()?;
        terms.inv += inv_b * contrastive_inv_loss(&encodings);
        if spec.lambda_inv != 0.0 {
            for (k, enc) in params.encoders.iter().enumerate() {
                let mut douts: Vec<Vec<f64>> = vec![vec![0.0; enc.out_dim]; m_views];
                for a in 0..m_views {
                    for b in a + 1..m_views {
                        for r in 0..enc.out_dim {
                            let diff = encodings[k][a][r] - encodings[k][b][r];
                            let g = 2.0 * diff * inv_b * spec.lambda_inv;
                            douts[a][r] += g;
                            douts[b][r] -= g;
                        }
                    }
                }
                for (view, dout) in prepared.views.iter().zip(&douts) {
                    enc.backward(view, dout, &mut grads.encoders[k]);
                }
            }
        }
    }

    // Backward through the label predictor.
    for (m, (view, tape)) in prepared.views.iter().zip(&tapes).enumerate() {
        if m == 0 {
            let mut parts: Vec<(&Mask, &[f64])> = vec![(union, &dz_views[0])];
            for (mask, dz) in players.masks.masks.iter().zip(&dz_players) {
                if dz.iter().any(|v| *v != 0.0) {
                    parts.push((mask, dz));
                }
            }
            model.backward(view, tape, &parts, &mut grads.sem);
        } else if dz_views[m].iter().any(|v| *v != 0.0) {
            model.backward(view, tape, &[(union, &dz_views[m])], &mut grads.sem);
        }
    }
    if dz_cf.iter().any(|v| *v != 0.0) {
        model.backward(&prepared.counterfactual, &cf_tape, &[(union, &dz_cf)], &mut grads.sem);
    }
    Ok((grads, terms))
}
