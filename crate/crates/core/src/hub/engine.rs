//! The reasoning loop.

use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;

use serde_json::{json, Value};

use super::criteria::{hypotheses_for, link_label, Criterion};
use super::graph::{EdgeKind, EvidenceGraph, NodeId};
use super::plan::{plan_steps, resolve_repository, ActionStep, Origin, Plan, StepKind};
use super::posterior::{argmax, update_posteriors, uniform, HypothesisSet, Posterior};
use super::trigger::{adaptive_trigger, recipe};
use super::{
    Conclusion, DiagnosticQuery, HubConfig, HubError, TraceRecord, FLAG_DEGENERATE, FLAG_LOW_CONSISTENCY,
    FLAG_NO_HYPOTHESES,
};
use crate::digest::digest_json;
use crate::kb::{Encoder, KnowledgeBase};
use crate::tools::{StudySidecar, ToolFabric, ValueMap};
use crate::transport::{HttpConfig, JsonClient};

pub struct Hub<'a> {
    kb: &'a KnowledgeBase,
    encoder: &'a dyn Encoder,
    fabric: &'a ToolFabric,
    config: HubConfig,
    instrumented: bool,
    subgoal_planner: Option<(String, JsonClient)>,
}

/// What a step left behind for later steps.
#[derive(Debug, Clone)]
struct StepRecord {
    node: NodeId,
    outputs: Option<ValueMap>,
    confidence: f64,
}

struct RunState<'q> {
    query: &'q DiagnosticQuery,
    plan: Plan,
    graph: EvidenceGraph,
    hyp: HypothesisSet,
    /// Numeric criteria and the hypothesis each one speaks for.
    links: Vec<(Criterion, usize)>,
    anchors: Vec<NodeId>,
    /// study index → (view, classification node); failed classifications keep an empty view.
    classified: BTreeMap<usize, (String, NodeId)>,
    results: BTreeMap<usize, StepRecord>,
    executed: Vec<ActionStep>,
    fires: BTreeMap<usize, usize>,
    next_step_id: usize,
    warnings: Vec<String>,
    t: usize,
}

enum Resolved {
    Ready { inputs: ValueMap, sources: Vec<(NodeId, EdgeKind)>, dep_confidence: f64 },
    Blocked { reason: String, sources: Vec<(NodeId, EdgeKind)> },
}

impl<'a> Hub<'a> {
    pub fn new(kb: &'a KnowledgeBase, encoder: &'a dyn Encoder, fabric: &'a ToolFabric, config: HubConfig) -> Self {
        Hub { kb, encoder, fabric, config, instrumented: false, subgoal_planner: None }
    }

    /// Verify the evidence graph after every mutation.
    pub fn instrumented(mut self, on: bool) -> Self {
        self.instrumented = on;
        self
    }

    /// Ask `POST {url}/subgoals` for sub-goals before falling back to the
    /// recipe table. Replies are not replayable, so traces stop being
    /// reproducible in this mode.
    pub fn with_subgoal_planner(mut self, url: &str, http: HttpConfig) -> Self {
        self.subgoal_planner = Some((url.trim_end_matches('/').to_string(), JsonClient::new(http)));
        self
    }

    pub fn config(&self) -> &HubConfig {
        &self.config
    }

    pub fn run(&self, query: &DiagnosticQuery) -> Result<Conclusion, HubError> {
        query.validate()?;
        self.config.validate()?;
        let cfg = &self.config;
        let (resolution, entry) = resolve_repository(self.kb, self.encoder, &query.text, cfg.s_min)?;
        let plan = plan_steps(&entry, self.fabric.registry(), self.fabric.taxonomy(), cfg.n_disks)?;
        let mut trace = vec![TraceRecord {
            t: 0,
            event_kind: "resolve".into(),
            step_id: None,
            tool: None,
            outputs_digest: None,
            confidence: Some(resolution.similarity),
            posterior: vec![],
            trigger: false,
            detail: Some(json!({ "anatomy": resolution.anatomy, "primitive": resolution.primitive_id })),
        }];

        let mut st = self.init_state(query, plan)?;
        let mut posterior = self.score(&st);
        let mut degenerate = posterior.degenerate;
        trace.push(TraceRecord {
            t: 0,
            event_kind: "plan".into(),
            step_id: None,
            tool: None,
            outputs_digest: Some(digest_json(&st.plan.steps)),
            confidence: None,
            posterior: posterior.values.clone(),
            trigger: false,
            detail: Some(json!({
                "steps": st.plan.steps.len(),
                "hypotheses": st.hyp.labels,
                "warnings": st.plan.warnings,
            })),
        });

        let mut queue: VecDeque<ActionStep> = st.plan.steps.iter().cloned().collect();
        let mut history = Vec::new();
        while st.executed.len() < cfg.d_max {
            let Some(step) = queue.pop_front() else { break };
            st.t += 1;
            let (record, bearing) = self.execute_step(&mut st, &step)?;
            posterior = self.score(&st);
            degenerate |= posterior.degenerate;
            history.push(posterior.values.clone());
            let decision = adaptive_trigger(record.confidence, &posterior.values, bearing, cfg.c_min, cfg.e_max);
            let digest = record.outputs.as_ref().map(digest_json);
            st.results.insert(step.step_id, record.clone());
            st.executed.push(step.clone());
            trace.push(TraceRecord {
                t: st.t,
                event_kind: "step".into(),
                step_id: Some(step.step_id),
                tool: Some(step.tool_name.clone()),
                outputs_digest: digest,
                confidence: Some(record.confidence),
                posterior: posterior.values.clone(),
                trigger: decision.fired(),
                detail: None,
            });
            if decision.fired() {
                let fired = st.fires.entry(step.root()).or_insert(0);
                if *fired < cfg.r_max {
                    let subs = self.subgoals(&mut st, &step, &posterior, decision.low_confidence);
                    if !subs.is_empty() {
                        *st.fires.get_mut(&step.root()).expect("entry exists") += 1;
                    }
                    for s in subs.iter().rev() {
                        queue.push_front(s.clone());
                    }
                    for s in &subs {
                        trace.push(TraceRecord {
                            t: st.t,
                            event_kind: "subgoal".into(),
                            step_id: Some(s.step_id),
                            tool: Some(s.tool_name.clone()),
                            outputs_digest: None,
                            confidence: None,
                            posterior: posterior.values.clone(),
                            trigger: true,
                            detail: Some(json!({ "parent": step.step_id, "goal": s.goal })),
                        });
                    }
                }
            }
            let planned_left = queue.iter().any(|s| s.origin == Origin::Planned);
            if !planned_left && !posterior.values.is_empty() && posterior.max() >= cfg.p_stop {
                break;
            }
        }

        let planned_left = queue.iter().any(|s| s.origin == Origin::Planned);
        let mut flags = Vec::new();
        if st.hyp.labels.is_empty() {
            flags.push(FLAG_NO_HYPOTHESES.to_string());
        }
        if planned_left || posterior.values.is_empty() || posterior.max() < cfg.p_stop {
            flags.push(FLAG_LOW_CONSISTENCY.to_string());
        }
        if degenerate {
            flags.push(FLAG_DEGENERATE.to_string());
        }
        let answer = argmax(&posterior.values).map(|i| st.hyp.labels[i].clone());
        let ef_percent = st
            .executed
            .iter()
            .rev()
            .filter(|s| matches!(s.kind, StepKind::EjectionFraction | StepKind::GradeEf))
            .find_map(|s| st.results[&s.step_id].outputs.as_ref()?.get("ef_percent")?.as_f64());
        trace.push(TraceRecord {
            t: st.t,
            event_kind: "conclusion".into(),
            step_id: None,
            tool: None,
            outputs_digest: None,
            confidence: Some(posterior.max()),
            posterior: posterior.values.clone(),
            trigger: false,
            detail: Some(json!({ "answer": answer, "flags": flags })),
        });
        let mut warnings = st.plan.warnings.clone();
        warnings.extend(st.warnings);
        Ok(Conclusion {
            answer,
            hypotheses: st.hyp.labels,
            max_posterior: posterior.max(),
            posterior: posterior.values,
            anatomy: resolution.anatomy,
            similarity: resolution.similarity,
            flags,
            warnings,
            subgoal_steps: st.executed.iter().filter(|s| s.origin != Origin::Planned).count(),
            steps: st.executed,
            ef_percent,
            posterior_history: history,
            graph: st.graph,
            trace,
        })
    }

    fn init_state<'q>(&self, query: &'q DiagnosticQuery, plan: Plan) -> Result<RunState<'q>, HubError> {
        let mut graph = EvidenceGraph::new(self.instrumented);
        let mut anchors = Vec::new();
        for (i, path) in query.study_refs.iter().enumerate() {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            anchors.push(graph.add_anchor(&format!("study-{i}"), json!({ "study": name }), 0)?);
        }
        let labels = hypotheses_for(&plan.criteria, query.options());
        let prior = match &self.config.prior {
            Some(p) if p.len() == labels.len() => p.clone(),
            Some(p) => {
                return Err(HubError::Config(format!(
                    "prior has {} entries but there are {} hypotheses",
                    p.len(),
                    labels.len()
                )))
            }
            None => uniform(labels.len()),
        };
        let mut nodes = Vec::new();
        for l in &labels {
            nodes.push(graph.add_concept(l, 0)?);
        }
        let links = plan
            .criteria
            .iter()
            .filter(|c| c.is_numeric())
            .filter_map(|c| link_label(&c.label, &labels).map(|h| (c.clone(), h)))
            .collect();
        let next_step_id = plan.steps.len() + 1;
        Ok(RunState {
            query,
            plan,
            graph,
            hyp: HypothesisSet { labels, prior, nodes },
            links,
            anchors,
            classified: BTreeMap::new(),
            results: BTreeMap::new(),
            executed: Vec::new(),
            fires: BTreeMap::new(),
            next_step_id,
            warnings: Vec::new(),
            t: 0,
        })
    }

    fn score(&self, st: &RunState<'_>) -> Posterior {
        if st.hyp.labels.is_empty() {
            return Posterior { values: vec![], degenerate: false };
        }
        update_posteriors(&st.graph, &st.hyp, self.config.beta, self.config.gamma)
    }

    /// Returns the step's record and whether it added hypothesis evidence.
    fn execute_step(&self, st: &mut RunState<'_>, step: &ActionStep) -> Result<(StepRecord, bool), HubError> {
        if let StepKind::ClassifyView { view } = &step.kind {
            return self.classify(st, step, view).map(|r| (r, false));
        }
        let t = st.t;
        match self.resolve_inputs(st, step) {
            Resolved::Blocked { reason, sources } => {
                let node = self.failure_node(st, step, &reason, sources)?;
                Ok((StepRecord { node, outputs: None, confidence: 0.0 }, false))
            }
            Resolved::Ready { inputs, sources, dep_confidence } => match self.fabric.invoke(&step.tool_name, &inputs) {
                Ok(r) => {
                    let confidence = r.confidence.min(dep_confidence);
                    let payload = json!({ "tool": r.tool_name, "outputs": r.outputs });
                    let node = st.graph.add_evidence(&step.goal, payload, confidence, t, &sources)?;
                    let bearing = self.link_evidence(st, node, &r.outputs, confidence)?;
                    Ok((StepRecord { node, outputs: Some(r.outputs), confidence }, bearing))
                }
                Err(e) => {
                    let node = self.failure_node(st, step, &e.to_string(), sources)?;
                    Ok((StepRecord { node, outputs: None, confidence: 0.0 }, false))
                }
            },
        }
    }

    fn failure_node(
        &self,
        st: &mut RunState<'_>,
        step: &ActionStep,
        reason: &str,
        mut sources: Vec<(NodeId, EdgeKind)>,
    ) -> Result<NodeId, HubError> {
        if !sources.iter().any(|(_, k)| k.is_provenance()) {
            sources = st.anchors.iter().map(|&a| (a, EdgeKind::Generates)).collect();
        }
        let payload = json!({ "tool": step.tool_name, "error": reason });
        Ok(st.graph.add_evidence(&step.goal, payload, 0.0, st.t, &sources)?)
    }

    /// Classify studies in order, each at most once per run, until one shows
    /// `view`.
    fn classify(&self, st: &mut RunState<'_>, step: &ActionStep, view: &str) -> Result<StepRecord, HubError> {
        let found = |st: &RunState<'_>| st.classified.values().find(|(v, _)| v == view).map(|&(_, n)| n);
        if found(st).is_none() {
            for (i, path) in st.query.study_refs.iter().enumerate() {
                if st.classified.contains_key(&i) {
                    continue;
                }
                let inputs = json!({ "study": path }).as_object().cloned().unwrap_or_default();
                let anchor = st.anchors[i];
                match self.fabric.invoke(&step.tool_name, &inputs) {
                    Ok(r) => {
                        let v = r.outputs.get("view").and_then(Value::as_str).unwrap_or_default().to_string();
                        let payload = json!({ "tool": r.tool_name, "outputs": r.outputs });
                        let node = st.graph.add_evidence(
                            &format!("study-{i} view"),
                            payload,
                            r.confidence,
                            st.t,
                            &[(anchor, EdgeKind::Generates)],
                        )?;
                        st.classified.insert(i, (v.clone(), node));
                        if v == view {
                            break;
                        }
                    }
                    Err(e) => {
                        let payload = json!({ "tool": step.tool_name, "error": e.to_string() });
                        let node = st.graph.add_evidence(
                            &format!("study-{i} view"),
                            payload,
                            0.0,
                            st.t,
                            &[(anchor, EdgeKind::Generates)],
                        )?;
                        st.classified.insert(i, (String::new(), node));
                    }
                }
            }
        }
        match found(st) {
            Some(node) => {
                let conf = st.graph.node(node).map_or(0.0, |n| n.confidence);
                let outputs = json!({ "view": view }).as_object().cloned();
                Ok(StepRecord { node, outputs, confidence: conf })
            }
            None => {
                let node = self.failure_node(st, step, &format!("no study shows {view}"), vec![])?;
                Ok(StepRecord { node, outputs: None, confidence: 0.0 })
            }
        }
    }

    /// Latest successful step among `id` and the sub-goals that replace it,
    /// else the latest attempt.
    fn redirect(st: &RunState<'_>, id: usize) -> Option<usize> {
        let candidates: Vec<usize> = st
            .executed
            .iter()
            .filter(|s| s.step_id == id || s.replaces == Some(id))
            .map(|s| s.step_id)
            .collect();
        candidates
            .iter()
            .rev()
            .find(|c| st.results.get(c).is_some_and(|r| r.outputs.is_some()))
            .or(candidates.last())
            .copied()
    }

    fn resolve_inputs(&self, st: &RunState<'_>, step: &ActionStep) -> Resolved {
        let mut inputs = ValueMap::new();
        let mut sources: Vec<(NodeId, EdgeKind)> = Vec::new();
        let mut dep_confidence: f64 = 1.0;
        let mut blocked: Option<String> = None;
        for (key, v) in &step.inputs {
            if let Some(id) = v.get("$ref").and_then(Value::as_u64) {
                let field = v.get("field").and_then(Value::as_str).unwrap_or(key);
                let target = Self::redirect(st, id as usize);
                let rec = target.and_then(|t| st.results.get(&t));
                if let Some(r) = rec {
                    sources.push((r.node, EdgeKind::Derives));
                }
                match rec.and_then(|r| Some((r, r.outputs.as_ref()?.get(field)?))) {
                    Some((r, val)) => {
                        dep_confidence = dep_confidence.min(r.confidence);
                        inputs.insert(key.clone(), val.clone());
                    }
                    None => {
                        blocked.get_or_insert(format!("step {id} produced no {field}"));
                    }
                }
            } else if let Some(fr) = v.get("$frame") {
                let view = fr.get("view").and_then(Value::as_str).unwrap_or_default();
                let phase = fr.get("phase").and_then(Value::as_str).unwrap_or_default();
                let hit = st.classified.iter().find(|(_, (v, _))| v == view).map(|(&i, &(_, n))| (i, n));
                match hit {
                    Some((i, node)) => {
                        sources.push((st.anchors[i], EdgeKind::Generates));
                        sources.push((node, EdgeKind::Derives));
                        let dir: &PathBuf = &st.query.study_refs[i];
                        match StudySidecar::load(dir).ok().and_then(|s| s.frame_path(dir, phase)) {
                            Some(p) => {
                                inputs.insert(key.clone(), Value::String(p.to_string_lossy().into_owned()));
                            }
                            None => {
                                blocked.get_or_insert(format!("study-{i} has no {phase} frame"));
                            }
                        }
                    }
                    None => {
                        // link to whichever classification attempts exist
                        sources.extend(
                            st.executed
                                .iter()
                                .filter(|s| matches!(&s.kind, StepKind::ClassifyView { view: v } if v == view))
                                .filter_map(|s| st.results.get(&s.step_id))
                                .map(|r| (r.node, EdgeKind::Derives)),
                        );
                        blocked.get_or_insert(format!("no study shows {view}"));
                    }
                }
            } else {
                inputs.insert(key.clone(), v.clone());
            }
        }
        match blocked {
            Some(reason) => Resolved::Blocked { reason, sources },
            None => Resolved::Ready { inputs, sources, dep_confidence },
        }
    }

    /// Compare numeric outputs with the criteria; returns whether any
    /// supports/contradicts edge was added.
    fn link_evidence(
        &self,
        st: &mut RunState<'_>,
        node: NodeId,
        outputs: &ValueMap,
        confidence: f64,
    ) -> Result<bool, HubError> {
        if confidence <= 0.0 {
            return Ok(false);
        }
        let mut added = false;
        let links = st.links.clone();
        for (c, h) in &links {
            let Some(v) = c.metric.as_ref().and_then(|m| outputs.get(m)).and_then(Value::as_f64) else { continue };
            let kind = if c.contains(v) { EdgeKind::Supports } else { EdgeKind::Contradicts };
            st.graph.add_edge(node, st.hyp.nodes[*h], kind, confidence)?;
            added = true;
        }
        Ok(added)
    }

    fn subgoals(
        &self,
        st: &mut RunState<'_>,
        step: &ActionStep,
        posterior: &Posterior,
        low_confidence: bool,
    ) -> Vec<ActionStep> {
        if let Some((url, client)) = &self.subgoal_planner {
            match self.remote_subgoals(st, url, client, step, posterior, low_confidence) {
                Ok(v) => return v,
                Err(m) => st.warnings.push(format!("sub-goal planner failed, using recipe table: {m}")),
            }
        }
        let mut next = st.next_step_id;
        let known: Vec<ActionStep> = st.plan.steps.iter().chain(st.executed.iter()).cloned().collect();
        let subs = recipe(step, &st.plan.views, |id| known.iter().find(|s| s.step_id == id), &mut next);
        st.next_step_id = next;
        subs
    }

    fn remote_subgoals(
        &self,
        st: &mut RunState<'_>,
        url: &str,
        client: &JsonClient,
        step: &ActionStep,
        posterior: &Posterior,
        low_confidence: bool,
    ) -> Result<Vec<ActionStep>, String> {
        let body = json!({
            "step": step,
            "reason": if low_confidence { "low_confidence" } else { "high_entropy" },
            "hypotheses": st.hyp.labels,
            "posterior": posterior.values,
        });
        let (reply, _) = client.post_json(&format!("{url}/subgoals"), &body);
        let reply = reply.map_err(|e| e.to_string())?;
        let items = reply.get("subgoals").and_then(Value::as_array).ok_or("reply has no subgoals list")?;
        let mut out = Vec::new();
        for it in items {
            let tool = it.get("tool_name").and_then(Value::as_str).ok_or("sub-goal without tool_name")?;
            if self.fabric.registry().get(tool).is_none() {
                return Err(format!("sub-goal names unregistered tool {tool:?}"));
            }
            let inputs = it.get("inputs").and_then(Value::as_object).cloned().unwrap_or_default();
            let goal = it.get("goal").and_then(Value::as_str).unwrap_or(tool).to_string();
            let replaces = it.get("replaces").and_then(Value::as_u64).map(|x| x as usize);
            out.push(ActionStep {
                step_id: st.next_step_id,
                goal,
                tool_name: tool.to_string(),
                inputs,
                origin: Origin::Subgoal { parent: step.step_id },
                replaces,
                kind: StepKind::External,
            });
            st.next_step_id += 1;
        }
        Ok(out)
    }
}
