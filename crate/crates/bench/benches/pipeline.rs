use std::sync::Arc;

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use echoagent_bench::{one_record, spheroid_pair};
use echoagent_core::fixtures::fixture_kb;
use echoagent_core::hub::{DiagnosticQuery, Hub, HubConfig};
use echoagent_core::kb::HashedBowEncoder;
use echoagent_core::quant::biplane_volume;
use echoagent_core::tools::{builtin_registry, ToolFabric, ViewTaxonomy};

fn volume(c: &mut Criterion) {
    let (a2c, a4c) = spheroid_pair();
    let mut g = c.benchmark_group("biplane_volume");
    for n in [20, 40] {
        g.bench_function(format!("spheroid_256_n{n}"), |b| b.iter(|| biplane_volume(black_box(&a2c), black_box(&a4c), 1, n)));
    }
    g.finish();
}

fn retrieval(c: &mut Criterion) {
    let kb = fixture_kb().unwrap();
    let enc = HashedBowEncoder::default();
    c.bench_function("retrieve_topk_k8", |b| {
        b.iter(|| kb.retrieve_topk(&enc, black_box("Is the ejection fraction normal?"), None, 8))
    });
}

fn hub_run(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let rec = one_record(dir.path(), 45.0);
    let kb = fixture_kb().unwrap();
    let enc = HashedBowEncoder::default();
    let reg = Arc::new(builtin_registry());
    let tax = Arc::new(ViewTaxonomy::default());
    let q = DiagnosticQuery::new("Is the ejection fraction normal?", vec![rec.join("a2c"), rec.join("a4c")]);
    let mut g = c.benchmark_group("hub");
    g.sample_size(10);
    g.bench_function("ef_study_256", |b| {
        b.iter(|| {
            let fabric = ToolFabric::new(reg.clone(), tax.clone());
            Hub::new(&kb, &enc, &fabric, HubConfig::default()).run(&q).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, volume, retrieval, hub_run);
criterion_main!(benches);
