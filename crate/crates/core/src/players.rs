//! Player decomposition: labels are split into disjoint subsets along the
//! weakly connected components of the causal graph, and each player only sees
//! graph edges inside its own subset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CcgError, Result};
use crate::graph::{CausalGraph, Edge};
use crate::matrix::{dot, Mask};
use crate::sem::SemModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Sorted label indices per player, players ordered by smallest label.
    pub subsets: Vec<Vec<usize>>,
    /// Graph edges with both endpoints inside each subset.
    pub chains: Vec<Vec<Edge>>,
}

impl Partition {
    pub fn num_players(&self) -> usize {
        self.subsets.len()
    }

    pub fn num_labels(&self) -> usize {
        self.subsets.iter().map(Vec::len).sum()
    }

    /// Player index owning each label.
    pub fn owners(&self) -> Vec<usize> {
        let mut owner = vec![usize::MAX; self.num_labels()];
        for (k, subset) in self.subsets.iter().enumerate() {
            for &l in subset {
                owner[l] = k;
            }
        }
        owner
    }

    /// A single player owning every label.
    pub fn single(num_labels: usize, g: &CausalGraph) -> Self {
        Self::from_subsets(vec![(0..num_labels).collect()], g)
    }

    pub fn from_subsets(mut subsets: Vec<Vec<usize>>, g: &CausalGraph) -> Self {
        for s in &mut subsets {
            s.sort_unstable();
        }
        subsets.sort_by_key(|s| s.first().copied().unwrap_or(usize::MAX));
        let chains = subsets
            .iter()
            .map(|s| {
                g.edges
                    .iter()
                    .filter(|e| s.binary_search(&e.src).is_ok() && s.binary_search(&e.dst).is_ok())
                    .copied()
                    .collect()
            })
            .collect();
        Self { subsets, chains }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSet {
    pub masks: Vec<Mask>,
}

impl MaskSet {
    /// Elementwise OR over players.
    pub fn union(&self) -> Mask {
        let n = self.masks.first().map_or(0, Mask::size);
        self.masks.iter().fold(Mask::zeros(n), |acc, m| acc.union(m))
    }
}

/// Affine map `R^in -> R^out`, one per player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerEncoder {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl PlayerEncoder {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn random(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim).map(|_| rng.random_range(-a..a)).collect(),
            bias: vec![0.0; out_dim],
        }
    }

    /// Accumulates `d(loss)/d(params)` for output gradient `dout` at input `x`.
    pub(crate) fn backward(&self, x: &[f64], dout: &[f64], grads: &mut PlayerEncoder) {
        for (r, &g) in dout.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.bias[r] += g;
            let row = &mut grads.weight[r * self.in_dim..(r + 1) * self.in_dim];
            for (w, &xv) in row.iter_mut().zip(x) {
                *w += g * xv;
            }
        }
    }
}

pub fn player_encode(enc: &PlayerEncoder, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != enc.in_dim {
        return Err(CcgError::Dimension(format!(
            "encoder expects {} features, got {}",
            enc.in_dim,
            x.len()
        )));
    }
    Ok((0..enc.out_dim)
        .map(|r| dot(&enc.weight[r * enc.in_dim..(r + 1) * enc.in_dim], x) + enc.bias[r])
        .collect())
}

fn components(num_labels: usize, edges: &[Edge]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); num_labels];
    for e in edges {
        adj[e.src].push(e.dst);
        adj[e.dst].push(e.src);
    }
    let mut seen = vec![false; num_labels];
    let mut out = Vec::new();
    for start in 0..num_labels {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(v) = stack.pop() {
            comp.push(v);
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Splits the labels into exactly `n_players` disjoint subsets.
///
/// Starts from the weakly connected components of `g`. Surplus components
/// are merged two at a time, lightest total frequency first (ties: smallest
/// minimum label). Missing components are produced by repeatedly cutting the
/// weakest internal edge of the largest component until it falls apart
/// (ties: smallest `(src, dst)`).
pub fn partition_labels(g: &CausalGraph, n_players: usize, freq: &[usize]) -> Result<Partition> {
    let l = g.num_labels;
    if n_players < 1 {
        return Err(CcgError::InvalidArgument("need at least one player".into()));
    }
    if n_players > l {
        return Err(CcgError::InvalidArgument(format!("{n_players} players for {l} labels")));
    }
    if freq.len() != l {
        return Err(CcgError::Dimension(format!(
            "{} frequencies for {l} labels",
            freq.len()
        )));
    }
    let mut edges: Vec<Edge> = g.edges.clone();
    let mut comps = components(l, &edges);

    while comps.len() > n_players {
        let weight = |c: &Vec<usize>| -> (usize, usize) { (c.iter().map(|&i| freq[i]).sum(), c[0]) };
        let mut order: Vec<usize> = (0..comps.len()).collect();
        order.sort_by_key(|&k| weight(&comps[k]));
        let (a, b) = (order[0].min(order[1]), order[0].max(order[1]));
        let absorbed = comps.remove(b);
        comps[a].extend(absorbed);
        comps[a].sort_unstable();
    }

    while comps.len() < n_players {
        let target = (0..comps.len())
            .max_by(|&x, &y| comps[x].len().cmp(&comps[y].len()).then(comps[y][0].cmp(&comps[x][0])))
            .expect("at least one component");
        let members = comps[target].clone();
        let before = comps.len();
        loop {
            let weakest = edges
                .iter()
                .enumerate()
                .filter(|(_, e)| members.binary_search(&e.src).is_ok() && members.binary_search(&e.dst).is_ok())
                .min_by(|(_, a), (_, b)| {
                    a.strength
                        .total_cmp(&b.strength)
                        .then((a.src, a.dst).cmp(&(b.src, b.dst)))
                })
                .map(|(idx, _)| idx);
            let Some(idx) = weakest else {
                // Disconnected without internal edges left; cannot happen for a
                // component built from edges, but guard against looping.
                break;
            };
            edges.remove(idx);
            comps = components(l, &edges);
            if comps.len() > before {
                break;
            }
        }
        if comps.len() == before {
            return Err(CcgError::InvalidArgument(
                "could not split components to reach the player count".into(),
            ));
        }
    }

    Ok(Partition::from_subsets(comps, g))
}

/// `m_ij^(k) = 1` iff `j -> i` is an edge of `g` and both labels belong to player `k`.
pub fn build_masks(p: &Partition, g: &CausalGraph) -> MaskSet {
    let l = g.num_labels;
    let masks = p
        .subsets
        .iter()
        .map(|subset| {
            let mut m = Mask::zeros(l);
            for e in &g.edges {
                if e.src != e.dst && subset.binary_search(&e.src).is_ok() && subset.binary_search(&e.dst).is_ok() {
                    m.set(e.dst, e.src, true);
                }
            }
            m
        })
        .collect();
    MaskSet { masks }
}

/// Per-player probabilities over the player's own labels, in subset order.
pub fn player_predict(model: &SemModel, masks: &MaskSet, partition: &Partition, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    if masks.masks.len() != partition.num_players() {
        return Err(CcgError::Dimension(format!(
            "{} masks for {} players",
            masks.masks.len(),
            partition.num_players()
        )));
    }
    partition
        .subsets
        .iter()
        .zip(&masks.masks)
        .map(|(subset, mask)| {
            let full = model.predict_masked(x, mask)?;
            Ok(subset.iter().map(|&i| full[i]).collect())
        })
        .collect()
}

/// Scatters per-player outputs back into one probability per label.
pub fn merge_player_outputs(partition: &Partition, outputs: &[Vec<f64>]) -> Vec<f64> {
    let mut merged = vec![f64::NAN; partition.num_labels()];
    for (subset, out) in partition.subsets.iter().zip(outputs) {
        for (&l, &p) in subset.iter().zip(out) {
            merged[l] = p;
        }
    }
    merged
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::sigmoid;
    use crate::sem::init_model;

    fn edge(src: usize, dst: usize, strength: f64) -> Edge {
        Edge { src, dst, strength }
    }

    fn graph(n: usize, edges: Vec<Edge>) -> CausalGraph {
        CausalGraph { num_labels: n, edges }
    }

    #[test]
    fn exact_component_count_is_fixed_point() {
        let g = graph(4, vec![edge(0, 1, 0.5), edge(2, 3, 0.4)]);
        let p = partition_labels(&g, 2, &[1, 1, 1, 1]).unwrap();
        assert_eq!(p.subsets, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn single_player_takes_everything() {
        let g = graph(5, vec![edge(0, 1, 0.5)]);
        let p = partition_labels(&g, 1, &[3, 1, 4, 1, 5]).unwrap();
        assert_eq!(p.subsets, vec![vec![0, 1, 2, 3, 4]]);
    }

    #[test]
    fn chain_plus_isolated() {
        let g = graph(4, vec![edge(0, 1, 0.9), edge(1, 2, 0.8)]);
        let p = partition_labels(&g, 2, &[5, 5, 5, 5]).unwrap();
        assert_eq!(p.subsets, vec![vec![0, 1, 2], vec![3]]);
        assert_eq!(p.chains[0].len(), 2);
        assert!(p.chains[1].is_empty());
    }

    #[test]
    fn merge_lightest_first() {
        // Four singletons with freq 10, 1, 2, 7 -> merge labels 1 and 2 first.
        let g = graph(4, vec![]);
        let p = partition_labels(&g, 3, &[10, 1, 2, 7]).unwrap();
        assert_eq!(p.subsets, vec![vec![0], vec![1, 2], vec![3]]);
    }

    #[test]
    fn split_weakest_edge() {
        let g = graph(4, vec![edge(0, 1, 0.9), edge(1, 2, 0.2), edge(2, 3, 0.8)]);
        let p = partition_labels(&g, 2, &[1; 4]).unwrap();
        assert_eq!(p.subsets, vec![vec![0, 1], vec![2, 3]]);
        let p3 = partition_labels(&g, 4, &[1; 4]).unwrap();
        assert_eq!(p3.subsets.len(), 4);
    }

    #[test]
    fn player_count_errors() {
        let g = graph(3, vec![]);
        assert!(partition_labels(&g, 0, &[1; 3]).is_err());
        assert!(partition_labels(&g, 4, &[1; 3]).is_err());
    }

    #[test]
    fn masks_follow_definition() {
        // root 0 -> mid 1 -> leaf 2 in one subset, 3 alone, cross edge 2 -> 3.
        let g = graph(4, vec![edge(0, 1, 0.9), edge(1, 2, 0.8), edge(2, 3, 0.1)]);
        let p = Partition::from_subsets(vec![vec![0, 1, 2], vec![3]], &g);
        let ms = build_masks(&p, &g);
        assert_eq!(ms.masks[0].count_ones(), 2);
        assert!(ms.masks[0].get(1, 0) && ms.masks[0].get(2, 1));
        for m in &ms.masks {
            assert!(!m.get(3, 2));
        }
    }

    #[test]
    fn player_predict_cases() {
        let model = init_model(4, 4, 3, 5).unwrap();
        let x = [0.1, -0.2, 0.3, 0.4];
        let g = graph(4, vec![edge(0, 1, 0.9), edge(2, 3, 0.7)]);
        let p = Partition::from_subsets(vec![vec![0, 1], vec![2, 3]], &g);
        let zero = MaskSet {
            masks: vec![Mask::zeros(4), Mask::zeros(4)],
        };
        let out = player_predict(&model, &zero, &p, &x).unwrap();
        assert_eq!(out[0], vec![sigmoid(model.bias[0]), sigmoid(model.bias[1])]);

        let single = Partition::single(4, &g);
        let full = MaskSet {
            masks: vec![Mask::full(4)],
        };
        let out = player_predict(&model, &full, &single, &x).unwrap();
        assert_eq!(out[0], model.predict(&x).unwrap());

        let masks = build_masks(&p, &g);
        let out = player_predict(&model, &masks, &p, &x).unwrap();
        let merged = merge_player_outputs(&p, &out);
        assert!(merged.iter().all(|v| v.is_finite() && *v > 0.0 && *v < 1.0));
        let mut covered: Vec<usize> = p.subsets.concat();
        covered.sort_unstable();
        assert_eq!(covered, vec![0, 1, 2, 3]);
    }

    #[test]
    fn encoder_cases() {
        let zero = PlayerEncoder::zeros(3, 2);
        assert_eq!(player_encode(&zero, &[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        let mut ident = PlayerEncoder::zeros(3, 3);
        for i in 0..3 {
            ident.weight[i * 3 + i] = 1.0;
        }
        assert_eq!(player_encode(&ident, &[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
        let enc = PlayerEncoder::random(4, 3, 9);
        let x = [0.5, -1.0, 0.25, 2.0];
        let out = player_encode(&enc, &x).unwrap();
        for r in 0..3 {
            let mut acc = enc.bias[r];
            for c in 0..4 {
                acc += enc.weight[r * 4 + c] * x[c];
            }
            assert!((out[r] - acc).abs() < 1e-12);
        }
        assert!(player_encode(&enc, &[1.0]).is_err());
    }
}
