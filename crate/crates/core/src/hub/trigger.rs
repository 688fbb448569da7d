//! Adaptive re-measurement: when to fire and which sub-goals to add.

use serde::{Deserialize, Serialize};

use super::plan::{segment_step_parts, ActionStep, Origin, StepKind};
use super::posterior::normalized_entropy;
use crate::tools::{A2C, A4C};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TriggerDecision {
    pub low_confidence: bool,
    pub high_entropy: bool,
}

impl TriggerDecision {
    pub fn fired(&self) -> bool {
        self.low_confidence || self.high_entropy
    }
}

/// Fires on a low-confidence result, or on a flat posterior right after a
/// step that contributed hypothesis evidence.
pub fn adaptive_trigger(
    last_confidence: f64,
    posterior: &[f64],
    hypothesis_bearing: bool,
    c_min: f64,
    e_max: f64,
) -> TriggerDecision {
    TriggerDecision {
        low_confidence: last_confidence < c_min,
        high_entropy: hypothesis_bearing && normalized_entropy(posterior) > e_max,
    }
}

/// The other apical view, or else the first different planned view.
pub fn alternate_view(view: &str, planned: &[String]) -> Option<String> {
    match view {
        A2C => Some(A4C.to_string()),
        A4C => Some(A2C.to_string()),
        _ => planned.iter().find(|v| v.as_str() != view).cloned(),
    }
}

/// Fixed recipe table. A weak segmentation is redone from the alternate
/// view; a weak or anomalous EF reruns both volume steps and the EF itself.
/// `next_id` hands out step ids; `lookup` finds executed or planned steps.
pub fn recipe<'a>(
    step: &ActionStep,
    planned_views: &[String],
    lookup: impl Fn(usize) -> Option<&'a ActionStep>,
    next_id: &mut usize,
) -> Vec<ActionStep> {
    let mut take = || {
        let id = *next_id;
        *next_id += 1;
        id
    };
    let origin = Origin::Subgoal { parent: step.step_id };
    match &step.kind {
        StepKind::Segment { anatomy, view, phase } => {
            let Some(alt) = alternate_view(view, planned_views) else { return vec![] };
            let (goal, inputs, kind) = segment_step_parts(*anatomy, &alt, phase);
            vec![ActionStep {
                step_id: take(),
                goal: format!("re-measure: {goal}"),
                tool_name: step.tool_name.clone(),
                inputs,
                origin,
                replaces: Some(step.root()),
                kind,
            }]
        }
        StepKind::EjectionFraction => {
            let mut out = Vec::new();
            for key in ["edv_ml", "esv_ml"] {
                let Some(id) = step.inputs.get(key).and_then(|v| v.get("$ref")).and_then(|v| v.as_u64()) else {
                    continue;
                };
                if let Some(vol) = lookup(id as usize) {
                    out.push(ActionStep {
                        step_id: take(),
                        goal: format!("re-run: {}", vol.goal),
                        tool_name: vol.tool_name.clone(),
                        inputs: vol.inputs.clone(),
                        origin: origin.clone(),
                        replaces: Some(vol.root()),
                        kind: vol.kind.clone(),
                    });
                }
            }
            out.push(ActionStep {
                step_id: take(),
                goal: format!("re-run: {}", step.goal),
                tool_name: step.tool_name.clone(),
                inputs: step.inputs.clone(),
                origin,
                replaces: Some(step.root()),
                kind: step.kind.clone(),
            });
            out
        }
        _ => vec![],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anatomy::AnatomyGroup;

    #[test]
    fn trigger_examples() {
        assert!(adaptive_trigger(0.3, &[1.0], false, 0.5, 0.8).low_confidence);
        let flat = adaptive_trigger(0.9, &[0.34, 0.33, 0.33], true, 0.5, 0.8);
        assert!(flat.high_entropy && flat.fired());
        assert!(!adaptive_trigger(0.9, &[0.98, 0.01, 0.01], true, 0.5, 0.8).fired());
        // flat posterior after a step with no hypothesis evidence
        assert!(!adaptive_trigger(0.9, &[0.34, 0.33, 0.33], false, 0.5, 0.8).fired());
    }

    #[test]
    fn weak_segmentation_switches_view() {
        let (goal, inputs, kind) = segment_step_parts(AnatomyGroup::LeftVentricle, A4C, "ES");
        let step = ActionStep {
            step_id: 6,
            goal,
            tool_name: "mock_segmenter".into(),
            inputs,
            origin: Origin::Planned,
            replaces: None,
            kind,
        };
        let mut next = 11;
        let subs = recipe(&step, &[A2C.into(), A4C.into()], |_| None, &mut next);
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].step_id, 11);
        assert_eq!(subs[0].replaces, Some(6));
        assert_eq!(subs[0].origin, Origin::Subgoal { parent: 6 });
        assert!(matches!(&subs[0].kind, StepKind::Segment { view, .. } if view == A2C));
        assert_eq!(next, 12);
    }
}
