//! Query resolution against the knowledge base and compilation of a
//! repository entry into tool-mapped steps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::criteria::{parse_criteria, Criterion};
use super::HubError;
use crate::anatomy::AnatomyGroup;
use crate::kb::{EmbedError, Encoder, KbError, KnowledgeBase, RepositoryEntry};
use crate::tools::{capability, Layer, ToolRegistry, ValueMap, ViewTaxonomy, A2C, A4C, PLAX};

pub const ED: &str = "ED";
pub const ES: &str = "ES";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub anatomy: AnatomyGroup,
    pub primitive_id: String,
    pub similarity: f64,
}

/// Embed the query, take the single most similar tagged primitive and use
/// its dominant anatomy.
pub fn resolve_repository(
    kb: &KnowledgeBase,
    encoder: &dyn Encoder,
    text: &str,
    s_min: f64,
) -> Result<(Resolution, RepositoryEntry), HubError> {
    let q = match encoder.embed(text) {
        Ok(q) => Some(q),
        Err(EmbedError::ZeroVector(_)) => None,
        Err(e) => return Err(HubError::Kb(KbError::Embed(e))),
    };
    if q.is_some() && encoder.id() != kb.encoder_id() {
        return Err(HubError::Kb(KbError::EncoderMismatch {
            index: kb.encoder_id().to_string(),
            query: encoder.id().to_string(),
        }));
    }
    let mut best: Option<(f64, &str, AnatomyGroup)> = None;
    let mut per_anatomy: BTreeMap<AnatomyGroup, f64> = BTreeMap::new();
    if let Some(q) = &q {
        for p in kb.primitives() {
            // untagged chunks cannot select an entry
            let (Some(tag), Some(e)) = (p.dominant_tag(), p.embedding.as_deref()) else { continue };
            let s = crate::kb::embed::dot(q, e);
            if best.map_or(true, |(b, id, _)| s > b || (s == b && p.id.as_str() < id)) {
                best = Some((s, &p.id, tag));
            }
            for &g in &p.anatomy_tags {
                let slot = per_anatomy.entry(g).or_insert(f64::NEG_INFINITY);
                *slot = slot.max(s);
            }
        }
    }
    let nearest = || {
        let mut v: Vec<(AnatomyGroup, f64)> = per_anatomy.iter().map(|(&g, &s)| (g, s)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.canonical_name().cmp(b.0.canonical_name())));
        v.into_iter().take(3).map(|(g, _)| g).collect::<Vec<_>>()
    };
    match best {
        Some((s, id, anatomy)) if s >= s_min => {
            let entry = kb.entry(anatomy).cloned().ok_or(HubError::NoEntry(anatomy))?;
            Ok((Resolution { anatomy, primitive_id: id.to_string(), similarity: s }, entry))
        }
        other => Err(HubError::Unresolvable { similarity: other.map_or(0.0, |b| b.0), nearest: nearest() }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Origin {
    Planned,
    Subgoal { parent: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StepKind {
    ClassifyView { view: String },
    Segment { anatomy: AnatomyGroup, view: String, phase: String },
    Volume { anatomy: AnatomyGroup, phase: String },
    EjectionFraction,
    GradeEf,
    Area { anatomy: AnatomyGroup, view: String, phase: String },
    /// Produced by the remote sub-goal planner.
    External,
}

/// Inputs may hold `{"$ref": step, "field": name}` (a prior step's output),
/// `{"$frame": {"view", "phase"}}` (a frame of the study showing that view)
/// or `{"$study": view}`; the hub resolves them just before invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionStep {
    pub step_id: usize,
    pub goal: String,
    pub tool_name: String,
    pub inputs: ValueMap,
    pub origin: Origin,
    /// Planned step whose output this one supersedes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replaces: Option<usize>,
    pub kind: StepKind,
}

impl ActionStep {
    /// The planned step this one descends from.
    pub fn root(&self) -> usize {
        self.replaces.unwrap_or(self.step_id)
    }
}

pub fn step_ref(step: usize, field: &str) -> Value {
    json!({ "$ref": step, "field": field })
}

pub fn frame_ref(view: &str, phase: &str) -> Value {
    json!({ "$frame": { "view": view, "phase": phase } })
}

fn obj(v: Value) -> ValueMap {
    v.as_object().cloned().unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub anatomy: AnatomyGroup,
    pub steps: Vec<ActionStep>,
    pub criteria: Vec<Criterion>,
    pub views: Vec<String>,
    pub structures: Vec<AnatomyGroup>,
    pub warnings: Vec<String>,
}

fn normalize_words(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| match w {
            "two" => "2".to_string(),
            "three" => "3".to_string(),
            "four" => "4".to_string(),
            "five" => "5".to_string(),
            other => other.to_string(),
        })
        .collect()
}

fn contains_seq(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// Taxonomy views named in `text`, by full name or common abbreviation.
pub fn views_mentioned(text: &str, taxonomy: &ViewTaxonomy) -> Vec<String> {
    let words = normalize_words(text);
    let alias = |name: &str| match name {
        A2C => Some("a2c"),
        A4C => Some("a4c"),
        PLAX => Some("plax"),
        _ => None,
    };
    taxonomy
        .names()
        .iter()
        .filter(|n| contains_seq(&words, &normalize_words(n)) || alias(n).is_some_and(|a| words.iter().any(|w| w == a)))
        .cloned()
        .collect()
}

fn mentions_any(text: &str, words: &[&str]) -> bool {
    let w = normalize_words(text);
    words.iter().any(|x| contains_seq(&w, &normalize_words(x)))
}

struct Builder<'a> {
    registry: &'a ToolRegistry,
    steps: Vec<ActionStep>,
    warnings: Vec<String>,
}

impl Builder<'_> {
    fn tool(&mut self, layer: Layer, cap: &str, anatomy: Option<AnatomyGroup>) -> Result<String, HubError> {
        let matches = self.registry.matching(layer, cap, anatomy);
        match matches.as_slice() {
            [] => Err(HubError::Planning(format!(
                "no {layer} tool provides {cap}{}",
                anatomy.map(|a| format!(" for {a}")).unwrap_or_default()
            ))),
            [one] => Ok(one.name.clone()),
            [first, ..] => {
                let names: Vec<_> = matches.iter().map(|d| d.name.as_str()).collect();
                self.warnings.push(format!("{cap}: several tools match ({}), using {}", names.join(", "), first.name));
                Ok(first.name.clone())
            }
        }
    }

    fn push(&mut self, goal: String, tool_name: String, inputs: ValueMap, kind: StepKind) -> usize {
        let step_id = self.steps.len() + 1;
        self.steps.push(ActionStep { step_id, goal, tool_name, inputs, origin: Origin::Planned, replaces: None, kind });
        step_id
    }
}

pub fn segment_step_parts(anatomy: AnatomyGroup, view: &str, phase: &str) -> (String, ValueMap, StepKind) {
    (
        format!("segment {anatomy} in {view} at {phase}"),
        obj(json!({ "frame": frame_ref(view, phase), "target": anatomy.canonical_name() })),
        StepKind::Segment { anatomy, view: view.to_string(), phase: phase.to_string() },
    )
}

pub fn volume_step_parts(anatomy: AnatomyGroup, phase: &str, a2c: usize, a4c: usize, n_disks: usize) -> (String, ValueMap, StepKind) {
    (
        format!("biplane {anatomy} volume at {phase}"),
        obj(json!({
            "a2c_mask": step_ref(a2c, "mask"),
            "a4c_mask": step_ref(a4c, "mask"),
            "target": anatomy.canonical_name(),
            "n_disks": n_disks,
        })),
        StepKind::Volume { anatomy, phase: phase.to_string() },
    )
}

pub fn ef_step_parts(ed: usize, es: usize) -> (String, ValueMap, StepKind) {
    (
        "ejection fraction".to_string(),
        obj(json!({ "edv_ml": step_ref(ed, "volume_ml"), "esv_ml": step_ref(es, "volume_ml") })),
        StepKind::EjectionFraction,
    )
}

/// Compile an entry into steps. Views become classification steps,
/// structures become one segmentation per view and phase, measurements
/// become functional steps wired to earlier outputs and criteria become
/// hypothesis definitions.
pub fn plan_steps(
    entry: &RepositoryEntry,
    registry: &ToolRegistry,
    taxonomy: &ViewTaxonomy,
    n_disks: usize,
) -> Result<Plan, HubError> {
    let s = &entry.summary_sections;
    let criteria = parse_criteria(&s.diagnostic_criteria.items);
    let mut b = Builder { registry, steps: Vec::new(), warnings: Vec::new() };

    let mut views: Vec<String> = Vec::new();
    for item in &s.views_to_acquire.items {
        for v in views_mentioned(item, taxonomy) {
            if !views.contains(&v) {
                views.push(v);
            }
        }
    }
    let mut structures: Vec<AnatomyGroup> = Vec::new();
    for item in &s.structures_to_segment.items {
        for g in AnatomyGroup::tag_text(item) {
            if !structures.contains(&g) {
                structures.push(g);
            }
        }
    }
    let wants_ef = s.measurements.items.iter().any(|m| mentions_any(m, &["ejection fraction", "ef", "lvef"]));
    let wants_volume = wants_ef || s.measurements.items.iter().any(|m| mentions_any(m, &["volume", "volumes"]));
    let wants_area = s.measurements.items.iter().any(|m| mentions_any(m, &["area", "areas"]));
    let lv = AnatomyGroup::LeftVentricle;
    if wants_volume {
        for v in [A2C, A4C] {
            if !views.iter().any(|x| x == v) {
                views.push(v.to_string());
            }
        }
        if !structures.contains(&lv) {
            structures.push(lv);
        }
    }
    views.sort_by_key(|v| taxonomy.position(v).unwrap_or(usize::MAX));
    structures.sort();

    if entry.summary_sections.is_empty() {
        b.warnings.push(format!("no guidance found for {}; nothing to plan", entry.anatomy));
    }
    if views.is_empty() && !structures.is_empty() {
        b.warnings.push("structures to segment but no view to acquire; segmentation skipped".into());
    }

    for v in &views {
        let tool = b.tool(Layer::Perceptual, capability::CLASSIFY_VIEW, None)?;
        b.push(
            format!("classify view {v}"),
            tool,
            obj(json!({ "study": { "$study": v } })),
            StepKind::ClassifyView { view: v.clone() },
        );
    }
    let phases: &[&str] = if wants_volume { &[ED, ES] } else { &[ED] };
    let mut seg: BTreeMap<(AnatomyGroup, String, &str), usize> = BTreeMap::new();
    for &g in &structures {
        for v in &views {
            for &ph in phases {
                let tool = b.tool(Layer::Operational, capability::SEGMENT_STRUCTURE, Some(g))?;
                let (goal, inputs, kind) = segment_step_parts(g, v, ph);
                let id = b.push(goal, tool, inputs, kind);
                seg.insert((g, v.clone(), ph), id);
            }
        }
    }
    if wants_volume {
        let mut vol = Vec::new();
        for ph in [ED, ES] {
            let tool = b.tool(Layer::Functional, capability::BIPLANE_VOLUME, Some(lv))?;
            let (goal, inputs, kind) =
                volume_step_parts(lv, ph, seg[&(lv, A2C.to_string(), ph)], seg[&(lv, A4C.to_string(), ph)], n_disks);
            vol.push(b.push(goal, tool, inputs, kind));
        }
        if wants_ef {
            let tool = b.tool(Layer::Functional, capability::EJECTION_FRACTION, Some(lv))?;
            let (goal, inputs, kind) = ef_step_parts(vol[0], vol[1]);
            let ef = b.push(goal, tool, inputs, kind);
            let tool = b.tool(Layer::Functional, capability::GRADE_EF, Some(lv))?;
            b.push(
                "grade ejection fraction".into(),
                tool,
                obj(json!({ "ef_percent": step_ref(ef, "ef_percent") })),
                StepKind::GradeEf,
            );
        }
    }
    if wants_area {
        for &g in &structures {
            for v in &views {
                let Some(&sid) = seg.get(&(g, v.clone(), ED)) else { continue };
                let tool = b.tool(Layer::Functional, capability::MASK_AREA, Some(g))?;
                b.push(
                    format!("{g} area in {v} at {ED}"),
                    tool,
                    obj(json!({ "mask": step_ref(sid, "mask"), "target": g.canonical_name() })),
                    StepKind::Area { anatomy: g, view: v.clone(), phase: ED.to_string() },
                );
            }
        }
    }
    Ok(Plan { anatomy: entry.anatomy, steps: b.steps, criteria, views, structures, warnings: b.warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_mentions() {
        let t = ViewTaxonomy::default();
        assert_eq!(views_mentioned("Acquire the apical two-chamber and apical 4-chamber views.", &t), [A2C, A4C]);
        assert_eq!(views_mentioned("Use PLAX.", &t), [PLAX]);
        assert!(views_mentioned("Apical views only.", &t).is_empty());
    }
}
