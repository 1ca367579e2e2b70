//! Datasets, label statistics and the planted-structure synthetic generator.
//!
//! Datasets are stored as JSON lines, one sample per line:
//!
//! ```text
//! {"features":[0.1,0.9,...],"labels":[0,1,...]}
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CcgError, Result};
use crate::matrix::{dot, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Sample {
    pub fn new(features: Vec<f64>, labels: Vec<u8>) -> Self {
        Self { features, labels }
    }

    pub fn label(&self, i: usize) -> bool {
        self.labels[i] == 1
    }
}

/// An ordered collection of samples sharing the same feature and label dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    label_names: Vec<String>,
    dim: usize,
    num_labels: usize,
}

impl Dataset {
    /// Validates and wraps `samples`. Label names default to `L0..L{n-1}`.
    pub fn new(samples: Vec<Sample>, label_names: Option<Vec<String>>) -> Result<Self> {
        let first = samples.first().ok_or(CcgError::EmptyDataset)?;
        let dim = first.features.len();
        let num_labels = first.labels.len();
        if dim == 0 || num_labels == 0 {
            return Err(CcgError::Dimension("features and labels must be non-empty".into()));
        }
        for (idx, s) in samples.iter().enumerate() {
            check_sample(s, dim, num_labels, idx + 1)?;
        }
        let label_names = match label_names {
            Some(names) => {
                if names.len() != num_labels {
                    return Err(CcgError::Dimension(format!(
                        "{} label names for {num_labels} labels",
                        names.len()
                    )));
                }
                let unique: HashSet<&String> = names.iter().collect();
                if unique.len() != names.len() {
                    return Err(CcgError::InvalidArgument("duplicate label names".into()));
                }
                names
            }
            None => default_label_names(num_labels),
        };
        Ok(Self {
            samples,
            label_names,
            dim,
            num_labels,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Keeps the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Self::new(samples, Some(self.label_names.clone()))
    }

    /// Splits at a fraction of the sample count, preserving order.
    pub fn split_ordered(&self, head_frac: f64) -> Result<(Self, Self)> {
        let cut = ((self.len() as f64) * head_frac).round() as usize;
        let cut = cut.clamp(1, self.len().saturating_sub(1).max(1));
        let head: Vec<usize> = (0..cut).collect();
        let tail: Vec<usize> = (cut..self.len()).collect();
        Ok((self.subset(&head)?, self.subset(&tail)?))
    }

    /// Seeded shuffle split into `(train, holdout)`; holdout gets `holdout_frac`
    /// of the samples (at least one when the dataset has two or more samples).
    pub fn split_shuffled(&self, holdout_frac: f64, seed: u64) -> Result<(Self, Self)> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_hold = ((self.len() as f64) * holdout_frac).round() as usize;
        let n_hold = n_hold.clamp(1, self.len().saturating_sub(1).max(1));
        let (hold, train) = idx.split_at(n_hold);
        let mut hold = hold.to_vec();
        let mut train = train.to_vec();
        hold.sort_unstable();
        train.sort_unstable();
        Ok((self.subset(&train)?, self.subset(&hold)?))
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| CcgError::io(path, e))?;
        let mut out = BufWriter::new(file);
        for s in &self.samples {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n").map_err(|e| CcgError::io(path, e))?;
        }
        out.flush().map_err(|e| CcgError::io(path, e))
    }
}

fn default_label_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("L{i}")).collect()
}

fn check_sample(s: &Sample, dim: usize, num_labels: usize, line: usize) -> Result<()> {
    if s.labels.iter().any(|&v| v > 1) {
        return Err(CcgError::LabelNotBinary { line });
    }
    if s.features.len() != dim || s.labels.len() != num_labels {
        return Err(CcgError::Dimension(format!(
            "line {line}: expected d={dim}, L={num_labels}, got d={}, L={}",
            s.features.len(),
            s.labels.len()
        )));
    }
    if s.features.iter().any(|v| !v.is_finite()) {
        return Err(CcgError::Dimension(format!("line {line}: non-finite feature")));
    }
    Ok(())
}

#[derive(Deserialize)]
struct RawSample {
    features: Vec<f64>,
    labels: Vec<i64>,
}

/// Reads a JSON-lines dataset. Blank lines are skipped.
pub fn load_dataset(path: &Path, expected_d: Option<usize>) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| CcgError::io(path, e))?;
    let mut samples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CcgError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSample = serde_json::from_str(&line).map_err(|e| CcgError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if raw.labels.iter().any(|&v| v != 0 && v != 1) {
            return Err(CcgError::LabelNotBinary { line: line_no });
        }
        let sample = Sample::new(raw.features, raw.labels.iter().map(|&v| v as u8).collect());
        if let Some(first) = samples.first() {
            let first: &Sample = first;
            check_sample(&sample, first.features.len(), first.labels.len(), line_no)?;
        }
        if let Some(d) = expected_d {
            if sample.features.len() != d {
                return Err(CcgError::Dimension(format!(
                    "line {line_no}: expected d={d}, got {}",
                    sample.features.len()
                )));
            }
        }
        samples.push(sample);
    }
    Dataset::new(samples, None)
}

/// Per-label frequencies and the bottom-p% rare set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub freq: Vec<usize>,
    pub rare_set: Vec<usize>,
    pub rare_pct: f64,
}

impl LabelStats {
    pub fn from_freq(freq: Vec<usize>, rare_pct: f64) -> Self {
        let rare_set = rare_set_from_freq(&freq, rare_pct);
        Self {
            freq,
            rare_set,
            rare_pct,
        }
    }

    pub fn is_rare(&self, label: usize) -> bool {
        self.rare_set.binary_search(&label).is_ok()
    }

    pub fn num_labels(&self) -> usize {
        self.freq.len()
    }
}

/// The `ceil(L*p/100)` lowest-frequency labels, lower index first on ties.
/// Returned sorted by label index.
pub fn rare_set_from_freq(freq: &[usize], rare_pct: f64) -> Vec<usize> {
    let count = ((freq.len() as f64) * rare_pct / 100.0 - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..freq.len()).collect();
    order.sort_by_key(|&i| (freq[i], i));
    let mut rare: Vec<usize> = order.into_iter().take(count.min(freq.len())).collect();
    rare.sort_unstable();
    rare
}

pub fn compute_label_stats(ds: &Dataset, rare_pct: f64) -> Result<LabelStats> {
    if !(0.0..=100.0).contains(&rare_pct) {
        return Err(CcgError::InvalidArgument(format!(
            "rare percentage {rare_pct} outside [0, 100]"
        )));
    }
    let mut freq = vec![0usize; ds.num_labels()];
    for s in ds.samples() {
        for (f, &y) in freq.iter_mut().zip(&s.labels) {
            *f += y as usize;
        }
    }
    Ok(LabelStats::from_freq(freq, rare_pct))
}

/// Directed conditional frequency: entry `(i, j)` is `P(label i | label j)`.
pub fn co_occurrence(ds: &Dataset) -> Matrix {
    let n = ds.num_labels();
    let mut joint = Matrix::square(n);
    let mut count = vec![0usize; n];
    for s in ds.samples() {
        let active: Vec<usize> = (0..n).filter(|&i| s.label(i)).collect();
        for &j in &active {
            count[j] += 1;
            for &i in &active {
                joint[(i, j)] += 1.0;
            }
        }
    }
    Matrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            joint[(i, j)] / count[j].max(1) as f64
        }
    })
}

/// Per-label mean feature vector over the samples carrying the label.
/// `None` for labels that never occur.
pub fn label_centroids(ds: &Dataset) -> Vec<Option<Vec<f64>>> {
    let n = ds.num_labels();
    let mut sums = vec![vec![0.0; ds.dim()]; n];
    let mut counts = vec![0usize; n];
    for s in ds.samples() {
        for l in 0..n {
            if s.label(l) {
                counts[l] += 1;
                for (acc, &x) in sums[l].iter_mut().zip(&s.features) {
                    *acc += x;
                }
            }
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(sum, c)| (c > 0).then(|| sum.into_iter().map(|v| v / c as f64).collect()))
        .collect()
}

/// Cosine similarity of label centroids, clamped to `[0, 1]`.
pub fn semantic_similarity(ds: &Dataset) -> Matrix {
    let n = ds.num_labels();
    let centroids = label_centroids(ds);
    let norms: Vec<f64> = centroids
        .iter()
        .map(|c| c.as_ref().map_or(0.0, |v| dot(v, v).sqrt()))
        .collect();
    Matrix::from_fn(n, n, |i, j| {
        if i == j {
            return 0.0;
        }
        match (&centroids[i], &centroids[j]) {
            (Some(a), Some(b)) if norms[i] > 0.0 && norms[j] > 0.0 => {
                (dot(a, b) / (norms[i] * norms[j])).clamp(0.0, 1.0)
            }
            _ => 0.0,
        }
    })
}

// ---------------------------------------------------------------------------
// Synthetic worlds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedEdge {
    pub src: usize,
    pub dst: usize,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalBlock {
    pub label: usize,
    pub features: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpuriousBlock {
    pub labels: [usize; 2],
    pub features: Vec<usize>,
}

/// Shift applied to every spurious block in one environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvShift {
    pub mean_mult: f64,
    pub var_mult: f64,
}

/// Ground truth behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedWorld {
    pub num_labels: usize,
    pub dim: usize,
    pub edges: Vec<PlantedEdge>,
    pub causal_blocks: Vec<CausalBlock>,
    pub spurious_blocks: Vec<SpuriousBlock>,
    pub env_params: Vec<EnvShift>,
}

impl PlantedWorld {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CcgError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| CcgError::io(path, e))
    }

    /// Label order in which every edge points forward, if one exists.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.num_labels;
        let mut indeg = vec![0usize; n];
        for e in &self.edges {
            indeg[e.dst] += 1;
        }
        let mut ready: Vec<usize> = (0..n).rev().filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = ready.pop() {
            order.push(v);
            for e in self.edges.iter().filter(|e| e.src == v) {
                indeg[e.dst] -= 1;
                if indeg[e.dst] == 0 {
                    ready.push(e.dst);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    pub fn spurious_features(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .spurious_blocks
            .iter()
            .flat_map(|b| b.features.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.edges.iter().any(|e| e.src == src && e.dst == dst)
    }
}

/// Parameters of [`generate_synthetic`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub labels: usize,
    pub dim: usize,
    pub samples: usize,
    pub envs: usize,
    pub seed: u64,
    /// Fraction of the `L(L-1)/2` forward label pairs that receive an edge.
    pub edge_density: f64,
}

const ROOT_RATE: f64 = 0.3;
const FEATURE_NOISE: f64 = 0.1;
const SPURIOUS_BLOCK: usize = 2;

/// Samples one dataset per environment from a freshly planted world.
///
/// Labels follow a noisy-OR model over a random DAG: root labels fire with
/// probability 0.3, every other label with `1 - prod(1 - s)` over the
/// strengths of edges from its active parents (never, if none is active).
/// Each label owns a causal feature block that reads `N(1, 0.1)` when the
/// label is active and `N(0, 0.1)` otherwise. Spurious blocks track the mean activity of a label
/// pair in environment 0 and are rescaled by `env_params` afterwards.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Vec<Dataset>, PlantedWorld)> {
    let SyntheticSpec {
        labels: l,
        dim: d,
        samples: n,
        envs,
        seed,
        edge_density,
    } = *spec;
    if l < 2 || n == 0 || envs == 0 {
        return Err(CcgError::InvalidArgument(
            "need at least 2 labels, 1 sample and 1 environment".into(),
        ));
    }
    if !(0.0..=1.0).contains(&edge_density) {
        return Err(CcgError::InvalidArgument(format!(
            "edge density {edge_density} outside [0, 1]"
        )));
    }
    if d < 4 * l {
        return Err(CcgError::Capacity(format!(
            "dimension {d} too small for {l} labels (need at least {})",
            4 * l
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Random topological order; edges only point forward in it.
    let mut order: Vec<usize> = (0..l).collect();
    order.shuffle(&mut rng);
    let mut forward_pairs = Vec::with_capacity(l * (l - 1) / 2);
    for a in 0..l {
        for b in a + 1..l {
            forward_pairs.push((order[a], order[b]));
        }
    }
    let n_edges = (edge_density * forward_pairs.len() as f64).round() as usize;
    forward_pairs.shuffle(&mut rng);
    let mut edges: Vec<PlantedEdge> = forward_pairs[..n_edges]
        .iter()
        .map(|&(src, dst)| PlantedEdge {
            src,
            dst,
            strength: rng.random_range(0.5..=1.0),
        })
        .collect();
    edges.sort_by_key(|e| (e.src, e.dst));

    // Feature layout: causal blocks, then spurious blocks, then pure noise.
    let causal_width = d / (2 * l);
    let causal_blocks: Vec<CausalBlock> = (0..l)
        .map(|label| CausalBlock {
            label,
            features: (label * causal_width..(label + 1) * causal_width).collect(),
        })
        .collect();
    let mut candidates: Vec<[usize; 2]> = Vec::new();
    for a in 0..l {
        for b in a + 1..l {
            let linked = edges
                .iter()
                .any(|e| (e.src == a && e.dst == b) || (e.src == b && e.dst == a));
            if !linked {
                candidates.push([a, b]);
            }
        }
    }
    candidates.shuffle(&mut rng);
    let mut next = l * causal_width;
    let mut spurious_blocks = Vec::new();
    for pair in candidates.into_iter().take(l / 2) {
        if next + SPURIOUS_BLOCK > d {
            break;
        }
        spurious_blocks.push(SpuriousBlock {
            labels: pair,
            features: (next..next + SPURIOUS_BLOCK).collect(),
        });
        next += SPURIOUS_BLOCK;
    }
    let env_params: Vec<EnvShift> = (0..envs)
        .map(|e| EnvShift {
            mean_mult: 1.0 - e as f64,
            var_mult: 1.0 + e as f64,
        })
        .collect();

    let world = PlantedWorld {
        num_labels: l,
        dim: d,
        edges,
        causal_blocks,
        spurious_blocks,
        env_params,
    };
    let topo = world.topological_order().expect("forward-only edges are acyclic");

    let names = default_label_names(l);
    let mut datasets = Vec::with_capacity(envs);
    for (e, shift) in world.env_params.iter().enumerate() {
        let mut env_rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(e as u64 + 1)));
        let samples = (0..n)
            .map(|_| sample_world(&world, &topo, *shift, &mut env_rng))
            .collect();
        datasets.push(Dataset::new(samples, Some(names.clone()))?);
    }
    Ok((datasets, world))
}

fn sample_world(world: &PlantedWorld, topo: &[usize], shift: EnvShift, rng: &mut ChaCha8Rng) -> Sample {
    let l = world.num_labels;
    let mut labels = vec![0u8; l];
    for &i in topo {
        let mut p_off = 1.0;
        let mut is_root = true;
        for e in world.edges.iter().filter(|e| e.dst == i) {
            is_root = false;
            if labels[e.src] == 1 {
                p_off *= 1.0 - e.strength;
            }
        }
        let p_on = if is_root { ROOT_RATE } else { 1.0 - p_off };
        // `random::<f64>()` lies in [0, 1), so p_on = 1 always fires.
        labels[i] = u8::from(rng.random::<f64>() < p_on);
    }

    let noise = Normal::new(0.0, FEATURE_NOISE).expect("valid std");
    let mut features: Vec<f64> = (0..world.dim).map(|_| noise.sample(rng)).collect();
    for block in &world.causal_blocks {
        if labels[block.label] == 1 {
            for &f in &block.features {
                features[f] += 1.0;
            }
        }
    }
    let spurious_noise = Normal::new(0.0, FEATURE_NOISE * shift.var_mult.sqrt()).expect("valid std");
    for block in &world.spurious_blocks {
        let [a, b] = block.labels;
        let signal = 0.5 * f64::from(labels[a] + labels[b]) * shift.mean_mult;
        for &f in &block.features {
            features[f] = signal + spurious_noise.sample(rng);
        }
    }
    Sample::new(features, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(labels: &[&[u8]]) -> Dataset {
        let samples = labels
            .iter()
            .enumerate()
            .map(|(i, y)| Sample::new(vec![i as f64, 1.0], y.to_vec()))
            .collect();
        Dataset::new(samples, None).unwrap()
    }

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_two_lines() {
        let f = write_tmp("{\"features\":[1,2,3],\"labels\":[0,1]}\n{\"features\":[4,5,6],\"labels\":[1,1]}\n");
        let ds = load_dataset(f.path(), None).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.num_labels()), (2, 3, 2));
        assert_eq!(ds.samples()[1].features, vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn load_errors() {
        let empty = write_tmp("");
        assert!(matches!(load_dataset(empty.path(), None), Err(CcgError::EmptyDataset)));
        let bad = write_tmp("{\"features\":[1],\"labels\":[0,2]}\n");
        let err = load_dataset(bad.path(), None).unwrap_err();
        assert_eq!(err.to_string(), "label not binary at line 1");
        let garbled = write_tmp("{\"features\":[1],\"labels\":[0]}\nnot json\n");
        assert!(matches!(
            load_dataset(garbled.path(), None),
            Err(CcgError::Parse { line: 2, .. })
        ));
        let ragged = write_tmp("{\"features\":[1],\"labels\":[0]}\n{\"features\":[1,2],\"labels\":[0]}\n");
        assert!(matches!(load_dataset(ragged.path(), None), Err(CcgError::Dimension(_))));
        let ok = write_tmp("{\"features\":[1],\"labels\":[0]}\n");
        assert!(load_dataset(ok.path(), Some(2)).is_err());
    }

    #[test]
    fn label_stats_counts() {
        let ds = toy(&[&[1, 0], &[1, 1], &[1, 0], &[0, 0]]);
        let stats = compute_label_stats(&ds, 50.0).unwrap();
        assert_eq!(stats.freq, vec![3, 1]);
        assert_eq!(stats.rare_set, vec![1]);
        assert!(compute_label_stats(&ds, 0.0).unwrap().rare_set.is_empty());
        assert!(compute_label_stats(&ds, 101.0).is_err());
    }

    #[test]
    fn rare_set_matches_sort_oracle() {
        let freq: Vec<usize> = (1..=10).rev().collect(); // 10, 9, ..., 1
                                                         // Oracle: brute-force rank every label by (freq, index).
        let mut expected: Vec<usize> = Vec::new();
        for _ in 0..3 {
            let pick = (0..10)
                .filter(|i| !expected.contains(i))
                .min_by_key(|&i| (freq[i], i))
                .unwrap();
            expected.push(pick);
        }
        expected.sort_unstable();
        assert_eq!(rare_set_from_freq(&freq, 30.0), expected);
        assert_eq!(expected, vec![7, 8, 9]);
        // Ties: lower index enters first.
        assert_eq!(rare_set_from_freq(&[2, 2, 2, 5], 50.0), vec![0, 1]);
    }

    #[test]
    fn co_occurrence_hand_computed() {
        // y = (1,1,0), (1,0,1), (0,1,1)
        let ds = toy(&[&[1, 1, 0], &[1, 0, 1], &[0, 1, 1]]);
        let c = co_occurrence(&ds);
        // P(0|1): label 1 active in samples 0,2; label 0 also active in 0 -> 1/2.
        assert_eq!(c[(0, 1)], 0.5);
        assert_eq!(c[(2, 0)], 0.5);
        assert_eq!(c[(1, 2)], 0.5);
        for i in 0..3 {
            assert_eq!(c[(i, i)], 0.0);
        }
    }

    #[test]
    fn co_occurrence_edge_cases() {
        let always = toy(&[&[1, 1, 0], &[1, 1, 0]]);
        let c = co_occurrence(&always);
        assert_eq!(c[(0, 1)], 1.0);
        assert_eq!(c[(1, 0)], 1.0);
        // Label 2 never active: its column is zero.
        assert_eq!(c[(0, 2)], 0.0);
        assert_eq!(c[(1, 2)], 0.0);
    }

    #[test]
    fn semantic_similarity_cases() {
        let same = toy(&[&[1, 1], &[1, 1], &[0, 0]]);
        let s = semantic_similarity(&same);
        assert!((s[(0, 1)] - 1.0).abs() < 1e-12);
        let samples = vec![
            Sample::new(vec![1.0, 0.0], vec![1, 0]),
            Sample::new(vec![0.0, 2.0], vec![0, 1]),
        ];
        let orth = Dataset::new(samples, None).unwrap();
        assert_eq!(semantic_similarity(&orth)[(0, 1)], 0.0);
    }

    #[test]
    fn semantic_similarity_matches_direct_cosine() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<Sample> = (0..12)
            .map(|_| {
                Sample::new(
                    (0..5).map(|_| rng.random_range(0.0..1.0)).collect(),
                    (0..3).map(|_| u8::from(rng.random_bool(0.5))).collect(),
                )
            })
            .collect();
        let ds = Dataset::new(samples.clone(), None).unwrap();
        let s = semantic_similarity(&ds);
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let centroid = |l: usize| -> Vec<f64> {
                    let rows: Vec<&Sample> = samples.iter().filter(|s| s.labels[l] == 1).collect();
                    (0..5)
                        .map(|f| rows.iter().map(|s| s.features[f]).sum::<f64>() / rows.len() as f64)
                        .collect()
                };
                let (a, b) = (centroid(i), centroid(j));
                let num: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((s[(i, j)] - num / (na * nb)).abs() < 1e-12);
            }
        }
    }

    fn spec(labels: usize, dim: usize, samples: usize, seed: u64, density: f64) -> SyntheticSpec {
        SyntheticSpec {
            labels,
            dim,
            samples,
            envs: 2,
            seed,
            edge_density: density,
        }
    }

    #[test]
    fn synthetic_is_deterministic_and_acyclic() {
        let s = spec(6, 32, 50, 11, 0.4);
        let (a, wa) = generate_synthetic(&s).unwrap();
        let (b, wb) = generate_synthetic(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(wa, wb);
        assert!(wa.topological_order().is_some());
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn synthetic_blocks_disjoint() {
        let (_, w) = generate_synthetic(&spec(10, 64, 5, 1, 0.2)).unwrap();
        let mut seen = HashSet::new();
        for f in w
            .causal_blocks
            .iter()
            .flat_map(|b| b.features.iter())
            .chain(w.spurious_blocks.iter().flat_map(|b| b.features.iter()))
        {
            assert!(*f < 64);
            assert!(seen.insert(*f), "feature {f} used twice");
        }
    }

    #[test]
    fn synthetic_capacity_error() {
        let err = generate_synthetic(&spec(10, 8, 5, 1, 0.2)).unwrap_err();
        assert!(matches!(err, CcgError::Capacity(_)));
    }

    #[test]
    fn independent_labels_without_edges() {
        let n = 20_000;
        let (ds, w) = generate_synthetic(&spec(2, 8, n, 5, 0.0)).unwrap();
        assert!(w.edges.is_empty());
        let ds = &ds[0];
        let p1 = ds.samples().iter().filter(|s| s.label(0)).count() as f64 / n as f64;
        let p2 = ds.samples().iter().filter(|s| s.label(1)).count() as f64 / n as f64;
        let both = ds.samples().iter().filter(|s| s.label(0) && s.label(1)).count() as f64 / n as f64;
        let p = p1 * p2;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((both - p).abs() < 3.0 * sigma, "both={both} p1p2={p}");
    }

    #[test]
    fn full_strength_edge_always_fires() {
        let (_, mut w) = generate_synthetic(&spec(2, 8, 1, 9, 1.0)).unwrap();
        assert_eq!(w.edges.len(), 1);
        w.edges[0].strength = 1.0;
        let topo = w.topological_order().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = w.edges[0];
        for _ in 0..2000 {
            let s = sample_world(&w, &topo, w.env_params[0], &mut rng);
            if s.label(e.src) {
                assert!(s.label(e.dst));
            }
        }
    }

    #[test]
    fn world_json_keys() {
        let (_, w) = generate_synthetic(&spec(4, 16, 2, 2, 0.5)).unwrap();
        let v = serde_json::to_value(&w).unwrap();
        for key in ["edges", "causal_blocks", "spurious_blocks", "env_params"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let edge = &v["edges"][0];
        assert!(edge.get("src").is_some() && edge.get("dst").is_some() && edge.get("strength").is_some());
    }
}
