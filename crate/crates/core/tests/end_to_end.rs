use std::sync::Arc;

use echoagent_core::anatomy::AnatomyGroup;
use echoagent_core::eval::{load_dataset, run_benchmark, BenchConfig, BenchEnv};
use echoagent_core::fixtures::{fixture_kb, generate_dataset, generate_qa_dataset, DatasetSpec};
use echoagent_core::hub::{plan_steps, resolve_repository, DiagnosticQuery, Hub, HubConfig, StepKind};
use echoagent_core::kb::HashedBowEncoder;
use echoagent_core::tools::{builtin_registry, ToolFabric, ViewTaxonomy};

fn fabric() -> ToolFabric {
    ToolFabric::new(Arc::new(builtin_registry()), Arc::new(ViewTaxonomy::default()))
}

#[test]
fn fixture_kb_has_every_anatomy() {
    let kb = fixture_kb().unwrap();
    assert_eq!(kb.entries().len(), 14);
    for g in AnatomyGroup::ALL {
        let e = kb.entry(g).unwrap();
        assert!(!e.summary_sections.is_empty(), "{g} has an empty entry");
    }
}

#[test]
fn ef_question_resolves_to_lv_and_plans_ten_steps() {
    let kb = fixture_kb().unwrap();
    let enc = HashedBowEncoder::default();
    for q in ["Is the ejection fraction normal?", "Is EF normal?"] {
        let (res, entry) = resolve_repository(&kb, &enc, q, 0.05).unwrap();
        assert_eq!(res.anatomy, AnatomyGroup::LeftVentricle, "{q}");
        let plan = plan_steps(&entry, &builtin_registry(), &ViewTaxonomy::default(), 20).unwrap();
        let kinds: Vec<String> = plan
            .steps
            .iter()
            .map(|s| match &s.kind {
                StepKind::ClassifyView { view } => format!("classify {view}"),
                StepKind::Segment { view, phase, .. } => format!("segment {view} {phase}"),
                StepKind::Volume { phase, .. } => format!("volume {phase}"),
                StepKind::EjectionFraction => "ef".into(),
                StepKind::GradeEf => "grade".into(),
                other => format!("{other:?}"),
            })
            .collect();
        assert_eq!(
            kinds,
            [
                "classify apical-2-chamber",
                "classify apical-4-chamber",
                "segment apical-2-chamber ED",
                "segment apical-2-chamber ES",
                "segment apical-4-chamber ED",
                "segment apical-4-chamber ES",
                "volume ED",
                "volume ES",
                "ef",
                "grade"
            ]
        );
        assert_eq!(plan.criteria.len(), 3);
    }
}

#[test]
fn pericardial_question_resolves_to_pericardium() {
    let kb = fixture_kb().unwrap();
    let (res, _) = resolve_repository(&kb, &HashedBowEncoder::default(), "Is there a pericardial effusion?", 0.05).unwrap();
    assert_eq!(res.anatomy, AnatomyGroup::Pericardium);
}

#[test]
fn dataset_runs_clean() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(dir.path(), &DatasetSpec::default()).unwrap();
    let ds = load_dataset(dir.path()).unwrap();
    assert_eq!(ds.records.len(), 12);
    let kb = fixture_kb().unwrap();
    let enc = HashedBowEncoder::default();
    let reg = Arc::new(builtin_registry());
    let tax = Arc::new(ViewTaxonomy::default());
    let env = BenchEnv { kb: &kb, encoder: &enc, registry: &reg, taxonomy: &tax };
    let run = run_benchmark(&ds, env, &BenchConfig::default());
    for r in &run.report.records {
        assert!(r.correct, "{r:?}");
        assert!(r.max_posterior.unwrap() >= 0.9, "{r:?}");
        assert_eq!(r.subgoal_steps, 0, "{r:?}");
        let err = (r.predicted_ef_percent.unwrap() - r.true_ef_percent.unwrap()).abs();
        assert!(err < 1.0, "{} EF error {err}", r.id);
    }
    assert_eq!(run.report.overall_acc, Some(100.0));
}

#[test]
fn qa_dataset_answers_with_options() {
    let dir = tempfile::tempdir().unwrap();
    generate_qa_dataset(dir.path(), 3).unwrap();
    let ds = load_dataset(dir.path()).unwrap();
    let kb = fixture_kb().unwrap();
    let enc = HashedBowEncoder::default();
    let reg = Arc::new(builtin_registry());
    let tax = Arc::new(ViewTaxonomy::default());
    let env = BenchEnv { kb: &kb, encoder: &enc, registry: &reg, taxonomy: &tax };
    let run = run_benchmark(&ds, env, &BenchConfig::default());
    assert_eq!(run.report.overall_acc, Some(100.0), "{:#?}", run.report.records);
    assert_eq!(run.report.per_anatomy[&AnatomyGroup::LeftVentricle].acc, 100.0);
}

#[test]
fn single_study_conclusion() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec { efs: vec![33.5], ..Default::default() };
    let recs = generate_dataset(dir.path(), &spec).unwrap();
    let kb = fixture_kb().unwrap();
    let enc = HashedBowEncoder::default();
    let f = fabric();
    let q = DiagnosticQuery::new("Is EF normal?", vec![recs[0].dir.join("a2c"), recs[0].dir.join("a4c")]);
    let c = Hub::new(&kb, &enc, &f, HubConfig::default()).run(&q).unwrap();
    assert_eq!(c.answer.as_deref(), Some("ConsiderablyReduced"));
    assert!(c.max_posterior >= 0.9);
    assert!(c.flags.is_empty(), "{:?}", c.flags);
}
