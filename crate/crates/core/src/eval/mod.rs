//! Benchmark harness: dataset loading, metrics and the per-record runner.
//!
//! Per-grade accuracy is one-vs-rest: the share of records whose
//! membership in the grade was predicted correctly.

pub mod dataset;
pub mod metrics;

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anatomy::AnatomyGroup;
use crate::digest::{digest_json, sha256_id};
use crate::hub::{DiagnosticQuery, Hub, HubConfig};
use crate::kb::{Encoder, KnowledgeBase};
use crate::quant::EfGrade;
use crate::tools::{ToolFabric, ToolRegistry, ViewTaxonomy};

pub use dataset::{load_dataset, Dataset, DatasetError, GroundTruth, RecordFile, StudyRecord};
pub use metrics::{accuracy, auroc, class_accuracy, gmean, Confusion, MetricError};

/// Clinical cut-offs always reported.
pub const AUROC_THRESHOLDS: [f64; 2] = [50.0, 40.0];

fn d_threshold() -> f64 {
    45.0
}
fn d_parallel() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default)]
    pub hub: HubConfig,
    /// Extra AUROC cut-off on the true EF.
    #[serde(default = "d_threshold")]
    pub auroc_threshold: f64,
    #[serde(default = "d_parallel")]
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { hub: HubConfig::default(), auroc_threshold: d_threshold(), parallel: d_parallel() }
    }
}

/// What the runner needs besides the dataset.
#[derive(Clone, Copy)]
pub struct BenchEnv<'a> {
    pub kb: &'a KnowledgeBase,
    pub encoder: &'a dyn Encoder,
    pub registry: &'a Arc<ToolRegistry>,
    pub taxonomy: &'a Arc<ViewTaxonomy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub id: String,
    pub anatomy: AnatomyGroup,
    pub truth: String,
    pub predicted: Option<String>,
    pub correct: bool,
    pub max_posterior: Option<f64>,
    pub true_ef_percent: Option<f64>,
    pub predicted_ef_percent: Option<f64>,
    pub subgoal_steps: usize,
    pub flags: Vec<String>,
    /// Set when the record could not be run; such records are excluded from rates.
    pub error: Option<String>,
    pub trace_digest: Option<String>,
}

impl RecordOutcome {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeMetrics {
    pub grade: EfGrade,
    pub support: usize,
    pub acc: Option<f64>,
    pub gmean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocEntry {
    pub threshold: f64,
    pub value: Option<f64>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub n: usize,
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub dataset_size: usize,
    pub successes: usize,
    pub failures: usize,
    pub overall_acc: Option<f64>,
    pub per_grade: Vec<GradeMetrics>,
    pub auroc: Vec<AurocEntry>,
    pub per_anatomy: BTreeMap<AnatomyGroup, GroupAccuracy>,
    pub records: Vec<RecordOutcome>,
    pub config_digest: String,
    pub fixture_digest: String,
}

/// A report plus the JSON-lines trace of every record that ran, in id order.
#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub report: BenchmarkReport,
    pub traces: Vec<(String, String)>,
}

fn run_record(rec: &StudyRecord, env: BenchEnv<'_>, cfg: &HubConfig) -> (RecordOutcome, Option<String>) {
    let fabric = ToolFabric::new(env.registry.clone(), env.taxonomy.clone());
    let mut query = DiagnosticQuery::new(&rec.question, vec![rec.a2c.clone(), rec.a4c.clone()]);
    if let Some(opts) = &rec.options {
        query = query.with_options(opts.clone());
    }
    let (truth, true_ef) = match &rec.truth {
        GroundTruth::Ef { ef_percent, grade } => (grade.name().to_string(), Some(*ef_percent)),
        GroundTruth::Qa { answer_option, .. } => (answer_option.clone(), None),
    };
    let mut out = RecordOutcome {
        id: rec.id.clone(),
        anatomy: rec.truth.anatomy(),
        truth,
        predicted: None,
        correct: false,
        max_posterior: None,
        true_ef_percent: true_ef,
        predicted_ef_percent: None,
        subgoal_steps: 0,
        flags: vec![],
        error: None,
        trace_digest: None,
    };
    match Hub::new(env.kb, env.encoder, &fabric, cfg.clone()).run(&query) {
        Ok(c) => {
            let trace = c.trace_jsonl();
            out.predicted = match &rec.truth {
                GroundTruth::Ef { .. } => c.answer.as_deref().and_then(EfGrade::from_name).map(|g| g.name().to_string()),
                GroundTruth::Qa { .. } => c.answer.clone(),
            };
            out.correct = out.predicted.as_deref() == Some(out.truth.as_str());
            out.max_posterior = Some(c.max_posterior);
            out.predicted_ef_percent = c.ef_percent;
            out.subgoal_steps = c.subgoal_steps;
            out.flags = c.flags;
            out.trace_digest = Some(sha256_id(trace.as_bytes()));
            (out, Some(trace))
        }
        Err(e) => {
            tracing::warn!(record = %rec.id, "record failed: {e}");
            out.error = Some(e.to_string());
            (out, None)
        }
    }
}

/// Run every record through the hub and fold the outcomes into a report.
/// Records may run in parallel, each with its own fabric; the fold is in
/// id order either way.
pub fn run_benchmark(dataset: &Dataset, env: BenchEnv<'_>, cfg: &BenchConfig) -> BenchmarkRun {
    let results: Vec<(RecordOutcome, Option<String>)> = if cfg.parallel {
        dataset.records.par_iter().map(|r| run_record(r, env, &cfg.hub)).collect()
    } else {
        dataset.records.iter().map(|r| run_record(r, env, &cfg.hub)).collect()
    };
    let mut traces = Vec::new();
    let mut records = Vec::new();
    for (o, t) in results {
        if let Some(t) = t {
            traces.push((o.id.clone(), t));
        }
        records.push(o);
    }
    let report = assemble(records, cfg, &dataset.digest);
    BenchmarkRun { report, traces }
}

fn pct(hits: usize, n: usize) -> f64 {
    100.0 * hits as f64 / n as f64
}

/// Fold per-record outcomes into rates. Failed records only count in `failures`.
pub fn assemble(records: Vec<RecordOutcome>, cfg: &BenchConfig, fixture_digest: &str) -> BenchmarkReport {
    let ok: Vec<&RecordOutcome> = records.iter().filter(|r| !r.failed()).collect();
    let overall_acc = (!ok.is_empty()).then(|| pct(ok.iter().filter(|r| r.correct).count(), ok.len()));

    let ef: Vec<&RecordOutcome> = ok.iter().copied().filter(|r| r.true_ef_percent.is_some()).collect();
    let y_true: Vec<Option<EfGrade>> = ef.iter().map(|r| EfGrade::from_name(&r.truth)).collect();
    let y_pred: Vec<Option<EfGrade>> = ef.iter().map(|r| r.predicted.as_deref().and_then(EfGrade::from_name)).collect();
    let per_grade = EfGrade::ALL
        .iter()
        .map(|&g| {
            let c = Confusion::of(&y_true, &y_pred, &Some(g)).ok();
            GradeMetrics {
                grade: g,
                support: y_true.iter().filter(|t| **t == Some(g)).count(),
                acc: c.map(|c| c.accuracy()),
                gmean: c.map(|c| c.gmean()),
            }
        })
        .collect();

    let scored: Vec<(f64, f64)> =
        ef.iter().filter_map(|r| Some((r.predicted_ef_percent?, r.true_ef_percent?))).collect();
    let mut thresholds = AUROC_THRESHOLDS.to_vec();
    thresholds.push(cfg.auroc_threshold);
    let auroc = thresholds
        .into_iter()
        .map(|t| {
            let scores: Vec<f64> = scored.iter().map(|s| s.0).collect();
            let labels: Vec<bool> = scored.iter().map(|s| s.1 >= t).collect();
            let (value, note) = match metrics::auroc(&scores, &labels) {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            };
            AurocEntry { threshold: t, value, n: scores.len(), note }
        })
        .collect();

    let mut groups: BTreeMap<AnatomyGroup, (usize, usize)> = BTreeMap::new();
    for r in &ok {
        let e = groups.entry(r.anatomy).or_default();
        e.0 += 1;
        e.1 += r.correct as usize;
    }
    let per_anatomy = groups.into_iter().map(|(g, (n, hit))| (g, GroupAccuracy { n, acc: pct(hit, n) })).collect();

    BenchmarkReport {
        dataset_size: records.len(),
        successes: ok.len(),
        failures: records.len() - ok.len(),
        overall_acc,
        per_grade,
        auroc,
        per_anatomy,
        // execution mode does not affect results
        config_digest: digest_json(&(&cfg.hub, cfg.auroc_threshold)),
        fixture_digest: fixture_digest.to_string(),
        records,
    }
}
