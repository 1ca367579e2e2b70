//! The training loop: warm-up on the unrestricted model, graph extraction,
//! a frozen player partition, then masked multi-player training with
//! reward and invariance terms and early stopping on validation mAP.

pub mod loss;
pub mod objective;
pub mod optim;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{co_occurrence, compute_label_stats, Dataset, LabelStats, PlantedWorld, Sample};
use crate::error::{CcgError, Result};
use crate::evaluation::{mean_average_precision, predict_dataset, rare_f1};
use crate::graph::{extract_graph, ideal_weights, CausalGraph, GraphLossConfig};
use crate::invariance::make_env_views;
use crate::matrix::{sigmoid, Mask};
use crate::players::{build_masks, partition_labels, MaskSet, Partition, PlayerEncoder};
use crate::reward::{anneal, generate_counterfactual, RewardConfig};
use crate::sem::{init_model, CcgParams, SemModel};

pub use loss::{alpha_weights, rare_reg_loss, weighted_ce, AlphaWeights};
pub use objective::{composite_objective, ObjectiveContext, ObjectiveSpec, PlayerSetup, PreparedSample, TermBreakdown};
pub use optim::{clip_global_norm, AdamW};

/// Which graph the player partition is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphSource {
    /// Top-K of the learned causal weights after warm-up.
    Learned,
    /// Top-K of the conditional co-occurrence matrix of the training labels.
    CoOccurrence,
}

/// Components that can be switched off for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// Causal graph modelling.
    Cgm,
    /// Counterfactual curiosity reward.
    Ccr,
    /// Causal invariance losses.
    Cil,
    /// Multi-player decomposition.
    Mpd,
    /// Rare-label enhancement.
    Rle,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Cgm,
        Ablation::Ccr,
        Ablation::Cil,
        Ablation::Mpd,
        Ablation::Rle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Cgm => "cgm",
            Ablation::Ccr => "ccr",
            Ablation::Cil => "cil",
            Ablation::Mpd => "mpd",
            Ablation::Rle => "rle",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = CcgError;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| {
            CcgError::InvalidArgument(format!("unknown ablation '{s}' (expected cgm, ccr, cil, mpd or rle)"))
        })
    }
}

/// Every training hyperparameter. Serialized flat; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_main: f64,
    pub lr_aux: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub grad_clip: f64,
    pub n_players: usize,
    pub k_topk: usize,
    pub warmup_epochs: usize,
    pub lambda_graph: f64,
    pub lambda_inv: f64,
    pub lambda_env: f64,
    pub lambda_rwd: f64,
    pub lambda_rare: f64,
    pub seed: u64,
    pub gamma: f64,
    pub eta: f64,
    pub lambda_selfloop: f64,
    pub beta0: f64,
    pub beta_t: f64,
    pub gamma_r0: f64,
    pub gamma_rt: f64,
    pub perturb_frac: f64,
    pub m_envs: usize,
    pub hidden: usize,
    pub enc_dim: usize,
    pub rare_pct: f64,
    pub val_frac: f64,
    pub uniform_alpha: bool,
    pub graph_source: GraphSource,
    pub ablations: Vec<Ablation>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_main: 1e-3,
            lr_aux: 1e-2,
            weight_decay: 1e-2,
            batch_size: 16,
            max_epochs: 30,
            patience: 5,
            grad_clip: 1.0,
            n_players: 5,
            k_topk: 3,
            warmup_epochs: 5,
            lambda_graph: 1.0,
            lambda_inv: 1.0,
            lambda_env: 1.0,
            lambda_rwd: 1.0,
            lambda_rare: 0.5,
            seed: 0,
            gamma: 0.5,
            eta: 1.5,
            lambda_selfloop: 0.1,
            beta0: 1.0,
            beta_t: 0.2,
            gamma_r0: 0.2,
            gamma_rt: 1.0,
            perturb_frac: 0.15,
            m_envs: 3,
            hidden: 16,
            enc_dim: 16,
            rare_pct: 30.0,
            val_frac: 0.2,
            uniform_alpha: false,
            graph_source: GraphSource::Learned,
            ablations: Vec::new(),
        }
    }
}

impl TrainConfig {
    /// Switches one component off and records it in `ablations`.
    pub fn apply_ablation(&mut self, a: Ablation) {
        match a {
            Ablation::Cgm => {
                self.lambda_graph = 0.0;
                self.graph_source = GraphSource::CoOccurrence;
            }
            Ablation::Ccr => self.lambda_rwd = 0.0,
            Ablation::Cil => {
                self.lambda_inv = 0.0;
                self.lambda_env = 0.0;
                self.m_envs = 1;
            }
            Ablation::Mpd => self.n_players = 1,
            Ablation::Rle => {
                self.lambda_rare = 0.0;
                self.uniform_alpha = true;
            }
        }
        if !self.ablations.contains(&a) {
            self.ablations.push(a);
            self.ablations.sort();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CcgError::InvalidArgument(msg));
        let positive = [("lr_main", self.lr_main), ("lr_aux", self.lr_aux)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("n_players", self.n_players),
            ("k_topk", self.k_topk),
            ("m_envs", self.m_envs),
            ("hidden", self.hidden),
            ("enc_dim", self.enc_dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        let finite = [
            ("weight_decay", self.weight_decay),
            ("lambda_graph", self.lambda_graph),
            ("lambda_inv", self.lambda_inv),
            ("lambda_env", self.lambda_env),
            ("lambda_rwd", self.lambda_rwd),
            ("lambda_rare", self.lambda_rare),
            ("beta0", self.beta0),
            ("beta_t", self.beta_t),
            ("gamma_r0", self.gamma_r0),
            ("gamma_rt", self.gamma_rt),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return fail(format!("{name} must be finite"));
            }
        }
        if self.grad_clip.is_nan() || self.grad_clip < 0.0 {
            return fail(format!("grad_clip must be nonnegative, got {}", self.grad_clip));
        }
        if !(self.perturb_frac > 0.0 && self.perturb_frac <= 1.0) {
            return fail(format!("perturb_frac must lie in (0, 1], got {}", self.perturb_frac));
        }
        if !(0.0..=100.0).contains(&self.rare_pct) {
            return fail(format!("rare_pct must lie in [0, 100], got {}", self.rare_pct));
        }
        if !(0.0..1.0).contains(&self.val_frac) {
            return fail(format!("val_frac must lie in [0, 1), got {}", self.val_frac));
        }
        GraphLossConfig::new(self.gamma, self.eta, self.lambda_selfloop, Vec::new())?;
        Ok(())
    }

    pub fn reward_config(&self, total_steps: usize) -> RewardConfig {
        RewardConfig {
            beta0: self.beta0,
            beta_t: self.beta_t,
            gamma_r0: self.gamma_r0,
            gamma_rt: self.gamma_rt,
            perturb_frac: self.perturb_frac,
            total_steps,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: String,
    pub n_players: usize,
    pub train_loss: f64,
    pub terms: TermBreakdown,
    pub beta: f64,
    pub gamma_r: f64,
    pub rare_acc: f64,
    pub diversity: f64,
    pub cf_consistency: f64,
    pub grad_norm: f64,
    pub val_map: f64,
    pub val_rare_f1: f64,
}

/// A trained model with everything needed to predict and evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub label_names: Vec<String>,
    pub config: TrainConfig,
    pub params: CcgParams,
    /// Label subsets owned by each player.
    pub players: Vec<Vec<usize>>,
    /// Graph the player masks were built from.
    pub mask_graph: CausalGraph,
    /// Top-K graph extracted from the final causal weights.
    pub graph: CausalGraph,
    pub stats: LabelStats,
    /// Epoch whose parameters were kept, if any epoch ran after partitioning.
    pub best_epoch: Option<usize>,
}

impl TrainedModel {
    pub fn partition(&self) -> Partition {
        Partition::from_subsets(self.players.clone(), &self.mask_graph)
    }

    pub fn masks(&self) -> MaskSet {
        build_masks(&self.partition(), &self.mask_graph)
    }

    pub fn setup(&self) -> PlayerSetup {
        let partition = self.partition();
        let masks = build_masks(&partition, &self.mask_graph);
        PlayerSetup::new(partition, masks)
    }

    pub fn union_mask(&self) -> Mask {
        self.masks().union()
    }

    pub fn sem(&self) -> &SemModel {
        &self.params.sem
    }

    /// Merged prediction: each label scored by the player that owns it.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.params.sem.predict_masked(x, &self.union_mask())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| CcgError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CcgError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub log: Vec<EpochRecord>,
}

/// Training stopped on an error. `checkpoint` holds the last parameters
/// that were finite, when training got far enough to have any.
#[derive(Debug)]
pub struct TrainAbort {
    pub error: CcgError,
    pub checkpoint: Option<Box<TrainedModel>>,
    pub log: Vec<EpochRecord>,
}

impl TrainAbort {
    fn early(error: CcgError) -> Self {
        Self {
            error,
            checkpoint: None,
            log: Vec::new(),
        }
    }
}

impl fmt::Display for TrainAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training aborted: {}", self.error)
    }
}

impl std::error::Error for TrainAbort {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

// Independent random streams derived from the run seed.
const STREAM_SPLIT: u64 = 1;
const STREAM_ENCODER: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_VIEWS: u64 = 4;
const STREAM_CF: u64 = 5;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(seed: u64, stream: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(seed ^ splitmix(stream)) ^ a) ^ b)
}

fn make_encoders(n: usize, dim: usize, cfg: &TrainConfig, round: u64) -> Vec<PlayerEncoder> {
    (0..n)
        .map(|k| PlayerEncoder::random(dim, cfg.enc_dim, derive_seed(cfg.seed, STREAM_ENCODER, round, k as u64)))
        .collect()
}

/// `|d mean_i p_i / dx|`, averaged over the batch before taking magnitudes.
fn batch_salience(model: &SemModel, union: &Mask, samples: &[&Sample]) -> Vec<f64> {
    let l = model.num_labels as f64;
    let mut total = vec![0.0; model.dim];
    for s in samples {
        let tape = model.tape(&s.features, union);
        let dz: Vec<f64> = model
            .logits(&tape, union)
            .into_iter()
            .map(|z| {
                let p = sigmoid(z);
                p * (1.0 - p) / l
            })
            .collect();
        for (t, g) in total.iter_mut().zip(model.input_gradient(&tape, union, &dz)) {
            *t += g;
        }
    }
    let n = samples.len().max(1) as f64;
    total.into_iter().map(|v| (v / n).abs()).collect()
}

fn prepare_batch(
    model: &SemModel,
    setup: &PlayerSetup,
    samples: &[&Sample],
    world: Option<&PlantedWorld>,
    cfg: &TrainConfig,
    epoch: usize,
    batch_index: usize,
) -> Result<Vec<PreparedSample>> {
    let salience = batch_salience(model, setup.union_mask(), samples);
    let pool: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
    let tag = ((epoch as u64) << 32) | batch_index as u64;
    samples
        .iter()
        .enumerate()
        .map(|(pos, s)| {
            let views = make_env_views(
                &s.features,
                cfg.m_envs,
                world,
                derive_seed(cfg.seed, STREAM_VIEWS, tag, pos as u64),
            )?
            .views;
            let counterfactual = generate_counterfactual(
                &s.features,
                &salience,
                cfg.perturb_frac,
                &pool,
                derive_seed(cfg.seed, STREAM_CF, tag, pos as u64),
            )?;
            Ok(PreparedSample {
                sample: (*s).clone(),
                views,
                counterfactual,
            })
        })
        .collect()
}

fn partition_graph(params: &CcgParams, train: &Dataset, cfg: &TrainConfig) -> Result<CausalGraph> {
    match cfg.graph_source {
        GraphSource::Learned => extract_graph(&params.sem.weights, cfg.k_topk, true),
        GraphSource::CoOccurrence => {
            let mut co = co_occurrence(train);
            co.fill_diagonal(0.0);
            extract_graph(&co, cfg.k_topk, true)
        }
    }
}

fn validation_scores(
    model: &SemModel,
    union: &Mask,
    val: &Dataset,
    stats: &LabelStats,
    pct: f64,
) -> Result<(f64, f64)> {
    let preds = predict_dataset(model, union, val)?;
    let y: Vec<Vec<u8>> = val.samples().iter().map(|s| s.labels.clone()).collect();
    let (map, _) = mean_average_precision(&preds, &y);
    Ok((map, rare_f1(&preds, &y, stats, pct, false)))
}

struct Snapshot<'a> {
    ds: &'a Dataset,
    cfg: &'a TrainConfig,
    stats: &'a LabelStats,
}

impl Snapshot<'_> {
    fn model(
        &self,
        params: &CcgParams,
        setup: &PlayerSetup,
        mask_graph: &CausalGraph,
        best_epoch: Option<usize>,
    ) -> Result<TrainedModel> {
        Ok(TrainedModel {
            label_names: self.ds.label_names().to_vec(),
            config: self.cfg.clone(),
            params: params.clone(),
            players: setup.partition.subsets.clone(),
            mask_graph: mask_graph.clone(),
            graph: extract_graph(&params.sem.weights, self.cfg.k_topk, true)?,
            stats: self.stats.clone(),
            best_epoch,
        })
    }
}

/// Trains on `ds`. A planted world, when known, shapes the environment views.
///
/// The first `warmup_epochs` epochs train one player over the unrestricted
/// model. Then the graph is extracted, labels are split into `n_players`
/// subsets, masks are fixed, fresh encoders are drawn, and training
/// continues with early stopping on validation mAP. The returned model holds
/// the best post-partition parameters.
pub fn train(
    ds: &Dataset,
    world: Option<&PlantedWorld>,
    cfg: &TrainConfig,
) -> std::result::Result<TrainOutcome, TrainAbort> {
    cfg.validate().map_err(TrainAbort::early)?;
    let (train_ds, val_ds) = if cfg.val_frac > 0.0 && ds.len() >= 2 {
        ds.split_shuffled(cfg.val_frac, derive_seed(cfg.seed, STREAM_SPLIT, 0, 0))
            .map_err(TrainAbort::early)?
    } else {
        (ds.clone(), ds.clone())
    };
    let (train_ds, val_ds) = if train_ds.is_empty() || val_ds.is_empty() {
        (ds.clone(), ds.clone())
    } else {
        (train_ds, val_ds)
    };
    let stats = compute_label_stats(&train_ds, cfg.rare_pct).map_err(TrainAbort::early)?;
    let alpha = if cfg.uniform_alpha {
        AlphaWeights::uniform(ds.num_labels())
    } else {
        alpha_weights(&stats)
    };
    let w_ideal = ideal_weights(&train_ds, cfg.gamma).map_err(TrainAbort::early)?;
    let graph_cfg = GraphLossConfig::new(cfg.gamma, cfg.eta, cfg.lambda_selfloop, stats.rare_set.clone())
        .map_err(TrainAbort::early)?;
    let (l, d) = (ds.num_labels(), ds.dim());
    if cfg.n_players > l {
        return Err(TrainAbort::early(CcgError::InvalidArgument(format!(
            "{} players for {l} labels",
            cfg.n_players
        ))));
    }
    let sem = init_model(d, l, cfg.hidden, cfg.seed).map_err(TrainAbort::early)?;
    let mut params = CcgParams {
        sem,
        encoders: make_encoders(1, d, cfg, 0),
    };
    let mut setup = PlayerSetup::unrestricted(l);
    let mut mask_graph = CausalGraph::empty(l);
    let snap = Snapshot { ds, cfg, stats: &stats };

    let mut log = Vec::new();
    let abort =
        |error: CcgError, params: &CcgParams, setup: &PlayerSetup, mask_graph: &CausalGraph, log: &[EpochRecord]| {
            TrainAbort {
                error,
                checkpoint: snap.model(params, setup, mask_graph, None).ok().map(Box::new),
                log: log.to_vec(),
            }
        };

    let mut partitioned = false;
    let do_partition = |params: &mut CcgParams, setup: &mut PlayerSetup, mask_graph: &mut CausalGraph| -> Result<()> {
        let g = partition_graph(params, &train_ds, cfg)?;
        let partition = partition_labels(&g, cfg.n_players, &stats.freq)?;
        *setup = PlayerSetup::from_graph(partition, &g);
        *mask_graph = g;
        params.encoders = make_encoders(cfg.n_players, d, cfg, 1);
        Ok(())
    };
    if cfg.warmup_epochs == 0 {
        if let Err(e) = do_partition(&mut params, &mut setup, &mut mask_graph) {
            return Err(abort(e, &params, &setup, &mask_graph, &log));
        }
        partitioned = true;
    }

    let batches_per_epoch = train_ds.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.max_epochs * batches_per_epoch;
    let reward_cfg = cfg.reward_config(total_steps);
    let mut opt = AdamW::new(cfg.lr_main, cfg.lr_aux, cfg.weight_decay);
    let mut step = 0usize;
    let mut best: Option<(f64, usize, CcgParams)> = None;

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_ds.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            STREAM_SHUFFLE,
            epoch as u64,
            0,
        )));
        let mut sum_terms = TermBreakdown::default();
        let mut sum_norm = 0.0;
        let (mut beta, mut gamma_r) = (0.0, 0.0);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            (beta, gamma_r) = anneal(step, total_steps, &reward_cfg);
            let samples: Vec<&Sample> = idx.iter().map(|&i| &train_ds.samples()[i]).collect();
            let result = prepare_batch(&params.sem, &setup, &samples, world, cfg, epoch, b).and_then(|batch| {
                let ctx = ObjectiveContext {
                    alpha: &alpha,
                    stats: &stats,
                    w_ideal: &w_ideal,
                    graph_cfg: &graph_cfg,
                    players: &setup,
                };
                let spec = ObjectiveSpec {
                    lambda_ce: 1.0,
                    lambda_rare: cfg.lambda_rare,
                    lambda_graph: cfg.lambda_graph,
                    lambda_inv: cfg.lambda_inv,
                    lambda_env: cfg.lambda_env,
                    lambda_rwd: cfg.lambda_rwd,
                    beta,
                    gamma_r,
                };
                composite_objective(&params, &batch, &ctx, &spec)
            });
            let (_, mut grads, terms) = match result {
                Ok(v) => v,
                Err(e) => return Err(abort(e, &params, &setup, &mask_graph, &log)),
            };
            sum_norm += clip_global_norm(&mut grads, cfg.grad_clip);
            let before = params.clone();
            opt.step(&mut params, &grads);
            params.sem.project_diagonal();
            if !params.is_finite() {
                let e = CcgError::NonFinite {
                    term: "parameters".into(),
                };
                return Err(abort(e, &before, &setup, &mask_graph, &log));
            }
            step += 1;
            let w = idx.len() as f64;
            sum_terms.weighted_ce += w * terms.weighted_ce;
            sum_terms.rare_reg += w * terms.rare_reg;
            sum_terms.graph += w * terms.graph;
            sum_terms.graph_self_loops += w * terms.graph_self_loops;
            sum_terms.inv += w * terms.inv;
            sum_terms.env += w * terms.env;
            sum_terms.diversity += w * terms.diversity;
            sum_terms.js_cf += w * terms.js_cf;
            sum_terms.rare_acc += w * terms.rare_acc;
            sum_terms.total += w * terms.total;
        }
        let n = train_ds.len() as f64;
        let mean = TermBreakdown {
            weighted_ce: sum_terms.weighted_ce / n,
            rare_reg: sum_terms.rare_reg / n,
            graph: sum_terms.graph / n,
            graph_self_loops: sum_terms.graph_self_loops / n,
            inv: sum_terms.inv / n,
            env: sum_terms.env / n,
            diversity: sum_terms.diversity / n,
            js_cf: sum_terms.js_cf / n,
            rare_acc: sum_terms.rare_acc / n,
            total: sum_terms.total / n,
        };
        let (val_map, val_rare) =
            match validation_scores(&params.sem, setup.union_mask(), &val_ds, &stats, cfg.rare_pct) {
                Ok(v) => v,
                Err(e) => return Err(abort(e, &params, &setup, &mask_graph, &log)),
            };
        log.push(EpochRecord {
            epoch,
            phase: if partitioned { "players" } else { "warmup" }.into(),
            n_players: setup.num_players(),
            train_loss: mean.total,
            terms: mean,
            beta,
            gamma_r,
            rare_acc: mean.rare_acc,
            diversity: mean.diversity,
            cf_consistency: -mean.js_cf,
            grad_norm: sum_norm / batches_per_epoch as f64,
            val_map,
            val_rare_f1: val_rare,
        });

        if !partitioned {
            if epoch + 1 >= cfg.warmup_epochs {
                if let Err(e) = do_partition(&mut params, &mut setup, &mut mask_graph) {
                    return Err(abort(e, &params, &setup, &mask_graph, &log));
                }
                opt.reset();
                partitioned = true;
            }
            continue;
        }
        match &best {
            Some((score, _, _)) if val_map <= *score => {}
            _ => best = Some((val_map, epoch, params.clone())),
        }
        if let Some((_, best_epoch, _)) = &best {
            if epoch - best_epoch >= cfg.patience {
                break;
            }
        }
    }

    if !partitioned {
        if let Err(e) = do_partition(&mut params, &mut setup, &mut mask_graph) {
            return Err(abort(e, &params, &setup, &mask_graph, &log));
        }
    }
    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, p)) = best {
        params = p;
    }
    match snap.model(&params, &setup, &mask_graph, best_epoch) {
        Ok(model) => Ok(TrainOutcome { model, log }),
        Err(e) => Err(abort(e, &params, &setup, &mask_graph, &log)),
    }
}

/// Writes one JSON object per line.
pub fn log_to_jsonl(log: &[EpochRecord]) -> Result<String> {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    fn toy(n: usize, seed: u64) -> (Dataset, PlantedWorld) {
        let (mut ds, world) = generate_synthetic(&SyntheticSpec {
            labels: 4,
            dim: 16,
            samples: n,
            envs: 1,
            seed,
            edge_density: 0.5,
        })
        .unwrap();
        (ds.remove(0), world)
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            max_epochs: 3,
            warmup_epochs: 1,
            n_players: 2,
            hidden: 4,
            enc_dim: 4,
            batch_size: 8,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn ablation_mapping() {
        let mut c = TrainConfig::default();
        for a in Ablation::ALL {
            c.apply_ablation(a);
        }
        assert_eq!(c.lambda_graph, 0.0);
        assert_eq!(c.graph_source, GraphSource::CoOccurrence);
        assert_eq!(c.lambda_rwd, 0.0);
        assert_eq!((c.lambda_inv, c.lambda_env, c.m_envs), (0.0, 0.0, 1));
        assert_eq!(c.n_players, 1);
        assert_eq!(c.lambda_rare, 0.0);
        assert!(c.uniform_alpha);
        assert_eq!(c.ablations, Ablation::ALL.to_vec());
        assert!("xyz".parse::<Ablation>().is_err());
        assert_eq!("rle".parse::<Ablation>().unwrap(), Ablation::Rle);
    }

    #[test]
    fn config_json_roundtrip_and_unknown_keys() {
        let c = TrainConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(TrainConfig::from_json(&text).unwrap(), c);
        let partial = TrainConfig::from_json(r#"{"n_players": 3}"#).unwrap();
        assert_eq!(partial.n_players, 3);
        assert_eq!(partial.batch_size, 16);
        assert!(TrainConfig::from_json(r#"{"n_player": 3}"#).is_err());
    }

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        let bad = TrainConfig {
            lr_main: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let (ds, _) = toy(20, 1);
        let cfg = TrainConfig {
            max_epochs: 0,
            ..small_cfg()
        };
        let out = train(&ds, None, &cfg).unwrap();
        assert!(out.log.is_empty());
        let init = init_model(ds.dim(), ds.num_labels(), cfg.hidden, cfg.seed).unwrap();
        assert_eq!(out.model.params.sem, init);
        assert_eq!(out.model.players.len(), cfg.n_players);
    }

    #[test]
    fn deterministic_per_seed() {
        let (ds, world) = toy(24, 2);
        let a = train(&ds, Some(&world), &small_cfg()).unwrap();
        let b = train(&ds, Some(&world), &small_cfg()).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(log_to_jsonl(&a.log).unwrap(), log_to_jsonl(&b.log).unwrap());
        assert_eq!(a.log[0].phase, "warmup");
        assert_eq!(a.log[1].phase, "players");
        assert_eq!(a.log[1].n_players, 2);
    }

    #[test]
    fn diagonal_stays_zero() {
        let (ds, _) = toy(24, 3);
        let out = train(&ds, None, &small_cfg()).unwrap();
        let w = &out.model.params.sem.weights;
        assert!((0..w.rows()).all(|i| w[(i, i)] == 0.0));
    }

    #[test]
    fn one_epoch_reduces_training_loss() {
        let (ds, _) = toy(8, 4);
        let cfg = TrainConfig {
            max_epochs: 1,
            warmup_epochs: 1,
            val_frac: 0.0,
            batch_size: 2,
            lr_main: 1e-2,
            ..small_cfg()
        };
        let before = train(
            &ds,
            None,
            &TrainConfig {
                max_epochs: 0,
                ..cfg.clone()
            },
        )
        .unwrap();
        let after = train(&ds, None, &cfg).unwrap();
        let y: Vec<Vec<u8>> = ds.samples().iter().map(|s| s.labels.clone()).collect();
        let loss = |m: &SemModel| {
            let preds: Vec<Vec<f64>> = ds.samples().iter().map(|s| m.predict(&s.features).unwrap()).collect();
            weighted_ce(&preds, &y, &AlphaWeights::uniform(ds.num_labels()))
        };
        assert!(loss(&after.model.params.sem) < loss(&before.model.params.sem));
    }

    #[test]
    fn early_stopping_respects_patience() {
        let (ds, _) = toy(40, 5);
        let cfg = TrainConfig {
            max_epochs: 12,
            patience: 1,
            ..small_cfg()
        };
        let out = train(&ds, None, &cfg).unwrap();
        let best = out.model.best_epoch.unwrap();
        let last = out.log.last().unwrap().epoch;
        assert!(last - best <= cfg.patience);
    }
}
