//! Orchestration: resolve the query, plan tool steps, grow the evidence
//! graph, score hypotheses and add re-measurement sub-goals until the
//! posterior is decisive or the step budget runs out.

pub mod criteria;
mod engine;
pub mod graph;
pub mod plan;
pub mod posterior;
pub mod trigger;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::anatomy::AnatomyGroup;
use crate::kb::KbError;

pub use engine::Hub;
pub use graph::{EdgeKind, EvidenceGraph, EvidenceNode, GraphError, NodeKind, TypedEdge};
pub use plan::{plan_steps, resolve_repository, ActionStep, Origin, Plan, Resolution, StepKind};
pub use posterior::{update_posteriors, HypothesisSet, Posterior};
pub use trigger::{adaptive_trigger, TriggerDecision};

#[derive(Debug, thiserror::Error)]
pub enum HubError {
    #[error("unresolvable query (best similarity {similarity:.3}); nearest anatomies: {}", fmt_groups(.nearest))]
    Unresolvable { similarity: f64, nearest: Vec<AnatomyGroup> },
    #[error("knowledge base has no entry for {0}")]
    NoEntry(AnatomyGroup),
    #[error("planning failed: {0}")]
    Planning(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error("evidence graph invariant violated: {0}")]
    Graph(#[from] GraphError),
}

fn fmt_groups(g: &[AnatomyGroup]) -> String {
    if g.is_empty() {
        return "none".into();
    }
    g.iter().map(|a| a.canonical_name()).collect::<Vec<_>>().join(", ")
}

fn d_s_min() -> f64 {
    0.05
}
fn d_c_min() -> f64 {
    0.5
}
fn d_e_max() -> f64 {
    0.8
}
fn d_p_stop() -> f64 {
    0.9
}
fn d_d_max() -> usize {
    40
}
fn d_r_max() -> usize {
    3
}
fn d_beta() -> f64 {
    1.0
}
fn d_gamma() -> f64 {
    0.8
}
fn d_k() -> usize {
    crate::kb::DEFAULT_TOP_K
}
fn d_n_disks() -> usize {
    crate::quant::DEFAULT_N_DISKS
}

/// Reasoning thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HubConfig {
    /// Minimum query-to-primitive similarity.
    #[serde(default = "d_s_min")]
    pub s_min: f64,
    /// Evidence confidence below this triggers re-measurement.
    #[serde(default = "d_c_min")]
    pub c_min: f64,
    /// Normalized posterior entropy above this triggers re-measurement.
    #[serde(default = "d_e_max")]
    pub e_max: f64,
    /// Max posterior needed to stop once the plan is done.
    #[serde(default = "d_p_stop")]
    pub p_stop: f64,
    /// Executed-step budget.
    #[serde(default = "d_d_max", rename = "D_max", alias = "d_max")]
    pub d_max: usize,
    /// Trigger firings allowed per planned step.
    #[serde(default = "d_r_max")]
    pub r_max: usize,
    #[serde(default = "d_beta", alias = "β")]
    pub beta: f64,
    #[serde(default = "d_gamma", alias = "γ")]
    pub gamma: f64,
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_n_disks")]
    pub n_disks: usize,
    /// Hypothesis prior; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<f64>>,
}

impl Default for HubConfig {
    fn default() -> Self {
        HubConfig {
            s_min: d_s_min(),
            c_min: d_c_min(),
            e_max: d_e_max(),
            p_stop: d_p_stop(),
            d_max: d_d_max(),
            r_max: d_r_max(),
            beta: d_beta(),
            gamma: d_gamma(),
            k: d_k(),
            n_disks: d_n_disks(),
            prior: None,
        }
    }
}

impl HubConfig {
    pub fn validate(&self) -> Result<(), HubError> {
        let bad = |m: String| Err(HubError::Config(m));
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(HubError::Config(format!("{name} = {v} must lie in [0, 1]")))
            }
        };
        if !(-1.0..=1.0).contains(&self.s_min) {
            return bad(format!("s_min = {} must lie in [-1, 1]", self.s_min));
        }
        unit("c_min", self.c_min)?;
        unit("e_max", self.e_max)?;
        unit("p_stop", self.p_stop)?;
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta = {} must be non-negative", self.beta));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma = {} must lie in [0, 1)", self.gamma));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.n_disks == 0 {
            return bad("n_disks must be at least 1".into());
        }
        if let Some(p) = &self.prior {
            let s: f64 = p.iter().sum();
            if p.iter().any(|&x| !(x >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return bad("prior must be non-negative and sum to 1".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AnswerMode {
    FreeConclusion,
    MultipleChoice { options: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticQuery {
    pub text: String,
    /// Study directories.
    pub study_refs: Vec<PathBuf>,
    pub answer_mode: AnswerMode,
}

impl DiagnosticQuery {
    pub fn new(text: &str, study_refs: Vec<PathBuf>) -> Self {
        DiagnosticQuery { text: text.to_string(), study_refs, answer_mode: AnswerMode::FreeConclusion }
    }

    pub fn with_options(mut self, options: Vec<String>) -> Self {
        self.answer_mode = AnswerMode::MultipleChoice { options };
        self
    }

    pub fn validate(&self) -> Result<(), HubError> {
        if self.study_refs.is_empty() {
            return Err(HubError::InvalidQuery("at least one study is required".into()));
        }
        if let AnswerMode::MultipleChoice { options } = &self.answer_mode {
            if options.len() < 2 {
                return Err(HubError::InvalidQuery("multiple choice needs at least two options".into()));
            }
        }
        Ok(())
    }

    pub fn options(&self) -> Option<&[String]> {
        match &self.answer_mode {
            AnswerMode::MultipleChoice { options } => Some(options),
            AnswerMode::FreeConclusion => None,
        }
    }
}

/// One trace line. Nothing here depends on wall-clock time or absolute
/// paths, so reruns over the same fixtures serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub event_kind: String,
    pub step_id: Option<usize>,
    pub tool: Option<String>,
    pub outputs_digest: Option<String>,
    pub confidence: Option<f64>,
    pub posterior: Vec<f64>,
    pub trigger: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

pub const FLAG_LOW_CONSISTENCY: &str = "low_consistency";
pub const FLAG_DEGENERATE: &str = "numerical_degeneracy";
pub const FLAG_NO_HYPOTHESES: &str = "no_hypotheses";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conclusion {
    pub answer: Option<String>,
    pub hypotheses: Vec<String>,
    pub posterior: Vec<f64>,
    pub max_posterior: f64,
    pub anatomy: AnatomyGroup,
    pub similarity: f64,
    pub flags: Vec<String>,
    pub warnings: Vec<String>,
    /// Every executed step, in execution order.
    pub steps: Vec<ActionStep>,
    pub subgoal_steps: usize,
    /// Latest successfully measured EF, if any.
    pub ef_percent: Option<f64>,
    /// Posterior after each executed step.
    pub posterior_history: Vec<Vec<f64>>,
    pub graph: EvidenceGraph,
    pub trace: Vec<TraceRecord>,
}

impl Conclusion {
    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    /// JSON-lines trace.
    pub fn trace_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.trace {
            s.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            s.push('\n');
        }
        s
    }

    pub fn write_trace(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, self.trace_jsonl())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_unknown_keys() {
        let c: HubConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, HubConfig::default());
        let c: HubConfig = serde_json::from_str(r#"{"D_max": 5, "β": 2.0}"#).unwrap();
        assert_eq!((c.d_max, c.beta), (5, 2.0));
        assert!(serde_json::from_str::<HubConfig>(r#"{"p_sotp": 0.9}"#).is_err());
        assert!(HubConfig { gamma: 1.0, ..Default::default() }.validate().is_err());
        assert!(HubConfig::default().validate().is_ok());
    }

    #[test]
    fn query_validation() {
        assert!(DiagnosticQuery::new("q", vec![]).validate().is_err());
        let q = DiagnosticQuery::new("q", vec!["a".into()]).with_options(vec!["x".into()]);
        assert!(q.validate().is_err());
    }
}
