use ccg_core::data::{compute_label_stats, generate_synthetic, SyntheticSpec};
use ccg_core::graph::{extract_graph, graph_loss, ideal_weights, GraphLossConfig};
use ccg_core::matrix::Mask;
use ccg_core::players::{partition_labels, PlayerEncoder};
use ccg_core::sem::{init_model, CcgParams};
use ccg_core::training::{
    alpha_weights, composite_objective, ObjectiveContext, ObjectiveSpec, PlayerSetup, PreparedSample,
};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn kernels(c: &mut Criterion) {
    let spec = SyntheticSpec {
        labels: 10,
        dim: 64,
        samples: 256,
        envs: 1,
        seed: 1,
        edge_density: 0.2,
    };
    let (envs, _) = generate_synthetic(&spec).unwrap();
    let ds = &envs[0];
    let stats = compute_label_stats(ds, 30.0).unwrap();
    let sem = init_model(64, 10, 16, 1).unwrap();
    let x = ds.samples()[0].features.clone();
    let full = Mask::full(10);

    c.bench_function("predict_l10_d64", |b| {
        b.iter(|| sem.predict_masked(black_box(&x), &full).unwrap())
    });

    let w_ideal = ideal_weights(ds, 0.5).unwrap();
    let cfg = GraphLossConfig::new(0.5, 1.5, 0.1, stats.rare_set.clone()).unwrap();
    c.bench_function("graph_loss_l10", |b| {
        b.iter(|| graph_loss(black_box(&sem.weights), &w_ideal, &cfg).unwrap())
    });

    let graph = extract_graph(&w_ideal, 3, true).unwrap();
    c.bench_function("partition_l10_n5", |b| {
        b.iter(|| partition_labels(black_box(&graph), 5, &stats.freq).unwrap())
    });

    let setup = PlayerSetup::from_graph(partition_labels(&graph, 5, &stats.freq).unwrap(), &graph);
    let params = CcgParams {
        sem: sem.clone(),
        encoders: (0..5).map(|k| PlayerEncoder::random(64, 16, k)).collect(),
    };
    let batch: Vec<PreparedSample> = ds.samples()[..16]
        .iter()
        .map(|s| {
            let mut p = PreparedSample::plain(s.clone());
            p.views.push(s.features.iter().map(|v| v * 1.1).collect());
            p.views.push(s.features.iter().map(|v| v * 0.9).collect());
            p
        })
        .collect();
    let alpha = alpha_weights(&stats);
    let ctx = ObjectiveContext {
        alpha: &alpha,
        stats: &stats,
        w_ideal: &w_ideal,
        graph_cfg: &cfg,
        players: &setup,
    };
    let spec = ObjectiveSpec {
        lambda_ce: 1.0,
        lambda_rare: 0.5,
        lambda_graph: 1.0,
        lambda_inv: 1.0,
        lambda_env: 1.0,
        lambda_rwd: 1.0,
        beta: 0.6,
        gamma_r: 0.6,
    };
    c.bench_function("composite_objective_batch16", |b| {
        b.iter(|| composite_objective(black_box(&params), &batch, &ctx, &spec).unwrap())
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);
