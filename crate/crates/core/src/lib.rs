//! Multi-label classification with a learned causal graph over labels.
//!
//! Labels are scored by a pairwise neural structural equation model. A
//! directed graph extracted from its causal weights splits the labels among
//! cooperating players, each restricted to the edges inside its own subset.
//! Training mixes imbalance-weighted cross-entropy with a graph prior,
//! counterfactual and diversity rewards, and invariance across perturbed
//! views of each input.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod invariance;
pub mod matrix;
pub mod players;
pub mod reward;
pub mod sem;
pub mod training;

pub use data::{
    compute_label_stats, generate_synthetic, load_dataset, Dataset, LabelStats, PlantedWorld, Sample, SyntheticSpec,
};
pub use error::{CcgError, Result};
pub use evaluation::{evaluate, structure_score, EvalOptions, MetricsReport};
pub use graph::{export_dot, extract_graph, CausalGraph, Edge, GraphLossConfig};
pub use matrix::{Mask, Matrix};
pub use players::{build_masks, partition_labels, MaskSet, Partition, PlayerEncoder};
pub use reward::RewardConfig;
pub use sem::{init_model, CcgParams, GradientBundle, SemModel};
pub use training::{train, Ablation, EpochRecord, GraphSource, TrainAbort, TrainConfig, TrainOutcome, TrainedModel};
