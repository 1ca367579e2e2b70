//! Ranking and thresholded metrics, distribution-shift deltas, and structure
//! recovery against a planted graph.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{rare_set_from_freq, Dataset, LabelStats, PlantedWorld};
use crate::error::{CcgError, Result};
use crate::graph::CausalGraph;
use crate::matrix::Mask;
use crate::sem::SemModel;

/// Decision threshold for F1 metrics.
pub const THRESHOLD: f64 = 0.5;

/// Average precision of one label, or `None` when `y` has no positives.
///
/// Samples are ranked by descending score, ties by ascending index.
pub fn average_precision(scores: &[f64], y: &[u8]) -> Option<f64> {
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if y[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

fn column(rows: &[Vec<f64>], l: usize) -> Vec<f64> {
    rows.iter().map(|r| r[l]).collect()
}

fn label_column(y: &[Vec<u8>], l: usize) -> Vec<u8> {
    y.iter().map(|r| r[l]).collect()
}

/// Per-label AP (`None` for labels without positives) and their mean.
/// The mean is 0 when no label has a positive.
pub fn mean_average_precision(preds: &[Vec<f64>], y: &[Vec<u8>]) -> (f64, Vec<Option<f64>>) {
    let l = y.first().map_or(0, Vec::len);
    let per_label: Vec<Option<f64>> = (0..l)
        .map(|i| average_precision(&column(preds, i), &label_column(y, i)))
        .collect();
    let present: Vec<f64> = per_label.iter().flatten().copied().collect();
    let map = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    (map, per_label)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Confusion {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Confusion {
    fn f1(self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

fn confusion(preds: &[Vec<f64>], y: &[Vec<u8>], l: usize) -> Confusion {
    let mut c = Confusion::default();
    for (p, t) in preds.iter().zip(y) {
        match (p[l] >= THRESHOLD, t[l] == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    c
}

/// F1 over `labels`: macro (mean of per-label F1) or micro (pooled counts).
pub fn f1_over(preds: &[Vec<f64>], y: &[Vec<u8>], labels: &[usize], micro: bool) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let per: Vec<Confusion> = labels.iter().map(|&l| confusion(preds, y, l)).collect();
    if micro {
        let pooled = per.iter().fold(Confusion::default(), |a, c| Confusion {
            tp: a.tp + c.tp,
            fp: a.fp + c.fp,
            fn_: a.fn_ + c.fn_,
        });
        pooled.f1()
    } else {
        per.iter().map(|c| c.f1()).sum::<f64>() / labels.len() as f64
    }
}

pub fn macro_f1(preds: &[Vec<f64>], y: &[Vec<u8>]) -> f64 {
    let l = y.first().map_or(0, Vec::len);
    f1_over(preds, y, &(0..l).collect::<Vec<_>>(), false)
}

/// F1 over the labels in the bottom `p`% by training frequency.
pub fn rare_f1(preds: &[Vec<f64>], y: &[Vec<u8>], stats: &LabelStats, p: f64, micro: bool) -> f64 {
    let rare = rare_set_from_freq(&stats.freq, p);
    f1_over(preds, y, &rare, micro)
}

/// Direction-sensitive edge precision and recall of `learned` against the planted edges.
pub fn structure_score(learned: &CausalGraph, planted: &PlantedWorld) -> Result<(f64, f64)> {
    if learned.num_labels != planted.num_labels {
        return Err(CcgError::Dimension(format!(
            "graph over {} labels, world over {}",
            learned.num_labels, planted.num_labels
        )));
    }
    let hits = learned.edges.iter().filter(|e| planted.has_edge(e.src, e.dst)).count() as f64;
    let precision = if learned.edges.is_empty() {
        0.0
    } else {
        hits / learned.edges.len() as f64
    };
    let recall = if planted.edges.is_empty() {
        0.0
    } else {
        hits / planted.edges.len() as f64
    };
    Ok((precision, recall))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodDelta {
    pub map_drop: f64,
    /// ID minus OOD Rare-F1 at the first requested percentage.
    pub rare_f1_drop: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureScore {
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map: f64,
    /// Keyed by the percentage as written, e.g. `"30"`.
    pub rare_f1: BTreeMap<String, f64>,
    /// AP per label; `null` for labels without positives.
    pub per_label_ap: Vec<Option<f64>>,
    pub ood_delta: Option<OodDelta>,
    pub structure: Option<StructureScore>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Flat `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let _ = writeln!(out, "map,{}", self.map);
        for (p, v) in &self.rare_f1 {
            let _ = writeln!(out, "rare_f1@{p},{v}");
        }
        for (i, ap) in self.per_label_ap.iter().enumerate() {
            if let Some(ap) = ap {
                let _ = writeln!(out, "ap_{i},{ap}");
            }
        }
        if let Some(d) = &self.ood_delta {
            let _ = writeln!(out, "ood_map_drop,{}", d.map_drop);
            let _ = writeln!(out, "ood_rare_f1_drop,{}", d.rare_f1_drop);
        }
        if let Some(s) = &self.structure {
            let _ = writeln!(out, "structure_precision,{}", s.precision);
            let _ = writeln!(out, "structure_recall,{}", s.recall);
        }
        out
    }
}

/// Formats a percentage as a report key: `30.0 -> "30"`, `12.5 -> "12.5"`.
pub fn pct_key(p: f64) -> String {
    format!("{p}")
}

/// Options for [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub rare_pcts: Vec<f64>,
    pub micro: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            rare_pcts: vec![20.0, 30.0, 40.0, 50.0],
            micro: false,
        }
    }
}

/// Predictions of the merged model (the union of all player masks) for every sample.
pub fn predict_dataset(model: &SemModel, union: &Mask, ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    ds.samples()
        .iter()
        .map(|s| model.predict_masked(&s.features, union))
        .collect()
}

fn labels_of(ds: &Dataset) -> Vec<Vec<u8>> {
    ds.samples().iter().map(|s| s.labels.clone()).collect()
}

/// mAP and Rare-F1 of `model` under `union` on `ds_id`, plus ID-minus-OOD
/// deltas when `ds_ood` is given. Rare sets come from `stats`.
pub fn evaluate(
    model: &SemModel,
    union: &Mask,
    ds_id: &Dataset,
    ds_ood: Option<&Dataset>,
    stats: &LabelStats,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let check = |ds: &Dataset| -> Result<()> {
        if ds.dim() != model.dim || ds.num_labels() != model.num_labels {
            return Err(CcgError::Dimension(format!(
                "model expects d={} L={}, data has d={} L={}",
                model.dim,
                model.num_labels,
                ds.dim(),
                ds.num_labels()
            )));
        }
        Ok(())
    };
    check(ds_id)?;
    let score = |ds: &Dataset| -> Result<(f64, Vec<Option<f64>>, BTreeMap<String, f64>)> {
        let preds = predict_dataset(model, union, ds)?;
        let y = labels_of(ds);
        let (map, per_label) = mean_average_precision(&preds, &y);
        let rare = opts
            .rare_pcts
            .iter()
            .map(|&p| (pct_key(p), rare_f1(&preds, &y, stats, p, opts.micro)))
            .collect();
        Ok((map, per_label, rare))
    };
    let (map, per_label_ap, rare_f1) = score(ds_id)?;
    let ood_delta = match ds_ood {
        Some(ood) => {
            check(ood)?;
            let (ood_map, _, ood_rare) = score(ood)?;
            let first = opts.rare_pcts.first().map(|&p| pct_key(p));
            let rare_drop = first.map_or(0.0, |k| rare_f1[&k] - ood_rare[&k]);
            Some(OodDelta {
                map_drop: map - ood_map,
                rare_f1_drop: rare_drop,
            })
        }
        None => None,
    };
    Ok(MetricsReport {
        map,
        rare_f1,
        per_label_ap,
        ood_delta,
        structure: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{PlantedEdge, Sample};

    #[test]
    fn ap_cases() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.1, 0.0], &[1, 1, 0, 0]), Some(1.0));
        assert_eq!(average_precision(&[0.9, 0.8, 0.7, 0.1], &[0, 0, 0, 1]), Some(0.25));
        assert_eq!(average_precision(&[0.3, 0.2], &[0, 0]), None);
        // Ties go to the lower index: the positive at index 1 ranks second.
        assert_eq!(average_precision(&[0.5, 0.5], &[0, 1]), Some(0.5));
    }

    #[test]
    fn ap_six_sample_walk() {
        // Ranking: 2(+), 0(-), 4(+), 1(-), 5(+), 3(-).
        let scores = [0.8, 0.4, 0.9, 0.1, 0.5, 0.3];
        let y = [0, 0, 1, 0, 1, 1];
        let expected = (1.0 / 1.0 + 2.0 / 3.0 + 3.0 / 5.0) / 3.0;
        assert!((average_precision(&scores, &y).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn map_skips_labels_without_positives() {
        let preds = vec![vec![0.9, 0.1, 0.3], vec![0.2, 0.8, 0.4]];
        let y = vec![vec![1, 0, 0], vec![0, 0, 0]];
        let (map, per) = mean_average_precision(&preds, &y);
        assert_eq!(per, vec![Some(1.0), None, None]);
        assert_eq!(map, 1.0);
    }

    #[test]
    fn f1_cases() {
        let y = vec![vec![1, 0, 1], vec![0, 1, 1], vec![1, 0, 0]];
        let perfect: Vec<Vec<f64>> = y.iter().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect();
        assert_eq!(macro_f1(&perfect, &y), 1.0);
        let none = vec![vec![0.0; 3]; 3];
        assert_eq!(macro_f1(&none, &y), 0.0);
        // Per label: l0 tp=1 fp=1 fn=1 -> 0.5; l1 tp=0 fn=1 -> 0; l2 tp=2 fp=0 fn=0 -> 1.
        let preds = vec![vec![0.2, 0.1, 0.9], vec![0.7, 0.3, 0.6], vec![0.5, 0.0, 0.4]];
        assert!((macro_f1(&preds, &y) - 0.5).abs() < 1e-12);
        // Pooled: tp=3 fp=1 fn=2 -> 6/9.
        assert!((f1_over(&preds, &y, &[0, 1, 2], true) - 6.0 / 9.0).abs() < 1e-12);
        let stats = LabelStats::from_freq(vec![2, 1, 2], 100.0);
        assert_eq!(rare_f1(&preds, &y, &stats, 100.0, false), macro_f1(&preds, &y));
        let stats = LabelStats::from_freq(vec![2, 1, 2], 33.0);
        assert_eq!(rare_f1(&preds, &y, &stats, 33.0, false), 0.0);
    }

    fn world(edges: &[(usize, usize)]) -> PlantedWorld {
        PlantedWorld {
            num_labels: 4,
            dim: 16,
            edges: edges
                .iter()
                .map(|&(src, dst)| PlantedEdge {
                    src,
                    dst,
                    strength: 1.0,
                })
                .collect(),
            causal_blocks: Vec::new(),
            spurious_blocks: Vec::new(),
            env_params: Vec::new(),
        }
    }

    fn graph(edges: &[(usize, usize)]) -> CausalGraph {
        CausalGraph {
            num_labels: 4,
            edges: edges
                .iter()
                .map(|&(src, dst)| crate::graph::Edge {
                    src,
                    dst,
                    strength: 0.5,
                })
                .collect(),
        }
    }

    #[test]
    fn structure_cases() {
        let planted = [(0, 1), (1, 2)];
        assert_eq!(structure_score(&graph(&planted), &world(&planted)).unwrap(), (1.0, 1.0));
        assert_eq!(structure_score(&graph(&[]), &world(&planted)).unwrap(), (0.0, 0.0));
        // Reversed direction does not count.
        let (p, r) = structure_score(&graph(&[(1, 0), (1, 2), (2, 3)]), &world(&planted)).unwrap();
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r, 0.5);
    }

    fn toy() -> (SemModel, Dataset) {
        let mut model = SemModel::zeros(2, 2, 1);
        model.bias = vec![0.3, -0.2];
        let ds = Dataset::new(
            vec![
                Sample::new(vec![0.0, 1.0], vec![1, 0]),
                Sample::new(vec![1.0, 0.0], vec![0, 1]),
            ],
            None,
        )
        .unwrap();
        (model, ds)
    }

    #[test]
    fn evaluate_keys_and_zero_delta() {
        let (model, ds) = toy();
        let stats = LabelStats::from_freq(vec![1, 1], 50.0);
        let opts = EvalOptions {
            rare_pcts: vec![30.0, 50.0],
            micro: false,
        };
        let r = evaluate(&model, &Mask::full(2), &ds, Some(&ds), &stats, &opts).unwrap();
        assert_eq!(r.rare_f1.keys().cloned().collect::<Vec<_>>(), vec!["30", "50"]);
        let d = r.ood_delta.unwrap();
        assert_eq!((d.map_drop, d.rare_f1_drop), (0.0, 0.0));
        // Constant scores tie; AP follows index order.
        assert_eq!(r.per_label_ap, vec![Some(1.0), Some(0.5)]);
        assert_eq!(r.map, 0.75);
        assert!(r.to_csv().starts_with("metric,value\nmap,0.75\n"));
    }

    #[test]
    fn evaluate_dimension_mismatch() {
        let (_, ds) = toy();
        let model = SemModel::zeros(3, 2, 1);
        let stats = LabelStats::from_freq(vec![1, 1], 50.0);
        assert!(evaluate(&model, &Mask::full(2), &ds, None, &stats, &EvalOptions::default()).is_err());
    }
}
