//! Label causal graph: extraction from learned weights, rare-edge priors and
//! the regression objective that pulls `W` towards data-driven ideal weights.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{co_occurrence, semantic_similarity, Dataset};
use crate::error::{CcgError, Result};
use crate::matrix::Matrix;

/// Directed edge `src -> dst`; `strength` is `W[dst][src]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalGraph {
    pub num_labels: usize,
    pub edges: Vec<Edge>,
}

impl CausalGraph {
    pub fn empty(num_labels: usize) -> Self {
        Self {
            num_labels,
            edges: Vec::new(),
        }
    }

    pub fn contains(&self, src: usize, dst: usize) -> bool {
        self.edges.iter().any(|e| e.src == src && e.dst == dst)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CcgError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Coefficients of [`graph_loss`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphLossConfig {
    pub gamma: f64,
    pub eta: f64,
    pub lambda_selfloop: f64,
    /// Sorted label indices.
    pub rare_set: Vec<usize>,
}

impl GraphLossConfig {
    pub fn new(gamma: f64, eta: f64, lambda_selfloop: f64, rare_set: Vec<usize>) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(CcgError::InvalidArgument(format!("gamma {gamma} outside [0, 1]")));
        }
        if eta < 1.0 || !eta.is_finite() {
            return Err(CcgError::InvalidArgument(format!("eta {eta} must be >= 1")));
        }
        if lambda_selfloop < 0.0 {
            return Err(CcgError::InvalidArgument("lambda_selfloop must be >= 0".into()));
        }
        let mut rare_set = rare_set;
        rare_set.sort_unstable();
        rare_set.dedup();
        Ok(Self {
            gamma,
            eta,
            lambda_selfloop,
            rare_set,
        })
    }
}

impl Default for GraphLossConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            eta: 1.5,
            lambda_selfloop: 0.1,
            rare_set: Vec::new(),
        }
    }
}

/// 1 when either endpoint is rare.
pub fn rare_indicator(i: usize, j: usize, rare_set: &[usize]) -> u8 {
    u8::from(rare_set.contains(&i) || rare_set.contains(&j))
}

/// `eta ^ indicator`.
pub fn psi(eta: f64, indicator: u8) -> f64 {
    if indicator == 1 {
        eta
    } else {
        1.0
    }
}

/// `gamma * co_occurrence + (1 - gamma) * semantic_similarity`, zero diagonal.
pub fn ideal_weights(ds: &Dataset, gamma: f64) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(CcgError::InvalidArgument(format!("gamma {gamma} outside [0, 1]")));
    }
    Ok(blend(&co_occurrence(ds), &semantic_similarity(ds), gamma))
}

pub(crate) fn blend(co: &Matrix, sem: &Matrix, gamma: f64) -> Matrix {
    let n = co.rows();
    Matrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            gamma * co[(i, j)] + (1.0 - gamma) * sem[(i, j)]
        }
    })
}

/// Value and `W`-gradient of the graph objective.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphLoss {
    pub value: f64,
    /// Weighted quadratic part alone.
    pub quadratic: f64,
    /// Count of nonzero diagonal entries of `W`.
    pub self_loops: usize,
    pub grad: Matrix,
}

/// `sum_{i!=j} psi_ij (W_ij - Wt_ij)^2 + lambda * |diag W|_0`.
///
/// The self-loop count has no gradient; callers keep the diagonal at zero by
/// projection.
pub fn graph_loss(w: &Matrix, w_ideal: &Matrix, cfg: &GraphLossConfig) -> Result<GraphLoss> {
    if (w.rows(), w.cols()) != (w_ideal.rows(), w_ideal.cols()) || w.rows() != w.cols() {
        return Err(CcgError::Dimension("graph loss needs two equal square matrices".into()));
    }
    let n = w.rows();
    let mut grad = Matrix::square(n);
    let mut quadratic = 0.0;
    let mut self_loops = 0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                self_loops += usize::from(w[(i, i)] != 0.0);
                continue;
            }
            let scale = psi(cfg.eta, rare_indicator(i, j, &cfg.rare_set));
            let dev = w[(i, j)] - w_ideal[(i, j)];
            quadratic += scale * (dev * dev);
            grad[(i, j)] = 2.0 * scale * dev;
        }
    }
    Ok(GraphLoss {
        value: quadratic + cfg.lambda_selfloop * self_loops as f64,
        quadratic,
        self_loops,
        grad,
    })
}

/// Top-`k` positive outgoing strengths per source label.
///
/// For source `j` the candidates are `W[i][j]`, `i != j`, strictly positive;
/// the `k` largest become edges `j -> i` (ties go to the smaller `i`). The
/// caller decides whether the warm-up period has passed; `warmup_done` is
/// carried for that contract and does not alter the rule.
pub fn extract_graph(w: &Matrix, k: usize, warmup_done: bool) -> Result<CausalGraph> {
    let _ = warmup_done;
    if k == 0 {
        return Err(CcgError::InvalidArgument("top-K needs K >= 1".into()));
    }
    let n = w.rows();
    let mut edges = Vec::new();
    for src in 0..n {
        let mut cands: Vec<(usize, f64)> = (0..n)
            .filter(|&dst| dst != src && w[(dst, src)] > 0.0)
            .map(|dst| (dst, w[(dst, src)]))
            .collect();
        cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        edges.extend(
            cands
                .into_iter()
                .take(k)
                .map(|(dst, strength)| Edge { src, dst, strength }),
        );
    }
    edges.sort_by_key(|e| (e.src, e.dst));
    Ok(CausalGraph { num_labels: n, edges })
}

/// Graphviz rendering, nodes in index order and edges by `(src, dst)`.
pub fn export_dot(g: &CausalGraph, label_names: &[String]) -> String {
    let name = |i: usize| -> String {
        label_names
            .get(i)
            .cloned()
            .unwrap_or_else(|| format!("L{i}"))
            .replace('"', "\\\"")
    };
    let mut edges = g.edges.clone();
    edges.sort_by_key(|e| (e.src, e.dst));
    let mut out = String::from("digraph G {\n");
    for i in 0..g.num_labels {
        let _ = writeln!(out, "  \"{}\";", name(i));
    }
    for e in &edges {
        let _ = writeln!(
            out,
            "  \"{}\" -> \"{}\" [label=\"{:.2}\"];",
            name(e.src),
            name(e.dst),
            e.strength
        );
    }
    out.push_str("}\n");
    out
}
