//! Typed evidence graph: concepts, execution evidence and raw-data anchors
//! joined by generates / supports / contradicts / derives edges.
//!
//! Evidence nodes are only added together with their incoming provenance
//! edges, so every mutation leaves the graph causally complete.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Concept,
    Evidence,
    RawAnchor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Generates,
    Supports,
    Contradicts,
    Derives,
}

impl EdgeKind {
    pub fn is_provenance(self) -> bool {
        matches!(self, EdgeKind::Generates | EdgeKind::Derives)
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceNode {
    pub node_id: NodeId,
    pub kind: NodeKind,
    pub label: String,
    /// Text, tool outputs or a failure description.
    pub payload: Value,
    pub confidence: f64,
    pub created_at: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypedEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: EdgeKind,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("node {0} does not exist")]
    NoSuchNode(NodeId),
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("{what} {value} outside [0, 1]")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("{kind:?} edge {src} -> {dst} connects the wrong node kinds")]
    EdgeKinds { kind: EdgeKind, src: NodeId, dst: NodeId },
    #[error("edge {src} -> {dst} would close a generates/derives cycle")]
    Cycle { src: NodeId, dst: NodeId },
    #[error("evidence node {0} has no generates/derives path from a raw anchor")]
    Unanchored(NodeId),
    #[error("evidence must arrive with at least one generates or derives edge")]
    NoProvenance,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceGraph {
    pub nodes: Vec<EvidenceNode>,
    pub edges: Vec<TypedEdge>,
    /// Run `verify` after every mutation.
    #[serde(skip)]
    pub instrumented: bool,
    #[serde(skip)]
    pub verifications: usize,
}

fn unit(what: &'static str, value: f64) -> Result<(), GraphError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(GraphError::OutOfRange { what, value })
    }
}

impl EvidenceGraph {
    pub fn new(instrumented: bool) -> Self {
        EvidenceGraph { instrumented, ..Default::default() }
    }

    pub fn node(&self, id: NodeId) -> Option<&EvidenceNode> {
        self.nodes.get(id)
    }

    fn push_node(&mut self, kind: NodeKind, label: String, payload: Value, confidence: f64, t: usize) -> NodeId {
        let node_id = self.nodes.len();
        self.nodes.push(EvidenceNode { node_id, kind, label, payload, confidence, created_at: t });
        node_id
    }

    fn after_mutation(&mut self) -> Result<(), GraphError> {
        if self.instrumented {
            self.verifications += 1;
            self.verify()?;
        }
        Ok(())
    }

    pub fn add_anchor(&mut self, label: &str, payload: Value, t: usize) -> Result<NodeId, GraphError> {
        let id = self.push_node(NodeKind::RawAnchor, label.to_string(), payload, 1.0, t);
        self.after_mutation()?;
        Ok(id)
    }

    pub fn add_concept(&mut self, label: &str, t: usize) -> Result<NodeId, GraphError> {
        let id = self.push_node(NodeKind::Concept, label.to_string(), Value::String(label.to_string()), 1.0, t);
        self.after_mutation()?;
        Ok(id)
    }

    /// Add an evidence node with its incoming provenance edges, each given as
    /// `(source, kind)`. The edge weight is the new node's confidence.
    pub fn add_evidence(
        &mut self,
        label: &str,
        payload: Value,
        confidence: f64,
        t: usize,
        sources: &[(NodeId, EdgeKind)],
    ) -> Result<NodeId, GraphError> {
        unit("confidence", confidence)?;
        if !sources.iter().any(|(_, k)| k.is_provenance()) {
            return Err(GraphError::NoProvenance);
        }
        let next = self.nodes.len();
        for &(src, kind) in sources {
            self.check_edge(src, next, kind, Some(NodeKind::Evidence))?;
        }
        let id = self.push_node(NodeKind::Evidence, label.to_string(), payload, confidence, t);
        let mut seen = Vec::new();
        for &(src, kind) in sources {
            if !seen.contains(&(src, kind)) {
                seen.push((src, kind));
                self.edges.push(TypedEdge { src, dst: id, kind, weight: confidence });
            }
        }
        self.after_mutation()?;
        Ok(id)
    }

    fn check_edge(&self, src: NodeId, dst: NodeId, kind: EdgeKind, dst_kind: Option<NodeKind>) -> Result<(), GraphError> {
        let s = self.nodes.get(src).ok_or(GraphError::NoSuchNode(src))?.kind;
        let d = match dst_kind {
            Some(k) => k,
            None => self.nodes.get(dst).ok_or(GraphError::NoSuchNode(dst))?.kind,
        };
        if src == dst {
            return Err(GraphError::SelfLoop(src));
        }
        let ok = match kind {
            EdgeKind::Generates => s == NodeKind::RawAnchor && d == NodeKind::Evidence,
            EdgeKind::Derives => s == NodeKind::Evidence && d == NodeKind::Evidence,
            EdgeKind::Supports | EdgeKind::Contradicts => s == NodeKind::Evidence && d == NodeKind::Concept,
        };
        if !ok {
            return Err(GraphError::EdgeKinds { kind, src, dst });
        }
        if kind.is_provenance() && dst < self.nodes.len() && self.reaches(dst, src) {
            return Err(GraphError::Cycle { src, dst });
        }
        Ok(())
    }

    /// Add a supports/contradicts (or provenance) edge between existing nodes.
    pub fn add_edge(&mut self, src: NodeId, dst: NodeId, kind: EdgeKind, weight: f64) -> Result<(), GraphError> {
        unit("weight", weight)?;
        self.check_edge(src, dst, kind, None)?;
        self.edges.push(TypedEdge { src, dst, kind, weight });
        self.after_mutation()
    }

    /// Is `to` reachable from `from` over generates/derives edges?
    fn reaches(&self, from: NodeId, to: NodeId) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![from];
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if std::mem::replace(&mut seen[n], true) {
                continue;
            }
            stack.extend(self.edges.iter().filter(|e| e.src == n && e.kind.is_provenance()).map(|e| e.dst));
        }
        false
    }

    /// Check every structural invariant from scratch.
    pub fn verify(&self) -> Result<(), GraphError> {
        let n = self.nodes.len();
        for node in &self.nodes {
            unit("confidence", node.confidence)?;
        }
        for e in &self.edges {
            if e.src >= n {
                return Err(GraphError::NoSuchNode(e.src));
            }
            if e.dst >= n {
                return Err(GraphError::NoSuchNode(e.dst));
            }
            if e.src == e.dst {
                return Err(GraphError::SelfLoop(e.src));
            }
            unit("weight", e.weight)?;
        }
        // Kahn's algorithm over the provenance subgraph
        let mut indeg = vec![0usize; n];
        for e in self.edges.iter().filter(|e| e.kind.is_provenance()) {
            indeg[e.dst] += 1;
        }
        let mut queue: VecDeque<NodeId> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut visited = 0;
        while let Some(i) = queue.pop_front() {
            visited += 1;
            for e in self.edges.iter().filter(|e| e.src == i && e.kind.is_provenance()) {
                indeg[e.dst] -= 1;
                if indeg[e.dst] == 0 {
                    queue.push_back(e.dst);
                }
            }
        }
        if visited != n {
            let e = self.edges.iter().find(|e| e.kind.is_provenance() && indeg[e.dst] > 0).expect("cycle edge");
            return Err(GraphError::Cycle { src: e.src, dst: e.dst });
        }
        // forward reachability from all anchors
        let mut reached = vec![false; n];
        let mut stack: Vec<NodeId> = self.nodes.iter().filter(|x| x.kind == NodeKind::RawAnchor).map(|x| x.node_id).collect();
        while let Some(i) = stack.pop() {
            if std::mem::replace(&mut reached[i], true) {
                continue;
            }
            stack.extend(self.edges.iter().filter(|e| e.src == i && e.kind.is_provenance()).map(|e| e.dst));
        }
        if let Some(x) = self.nodes.iter().find(|x| x.kind == NodeKind::Evidence && !reached[x.node_id]) {
            return Err(GraphError::Unanchored(x.node_id));
        }
        Ok(())
    }

    /// `(supports, contradicts)` weight lists touching concept `c`, in
    /// either direction.
    pub fn concept_weights(&self, c: NodeId) -> (Vec<f64>, Vec<f64>) {
        let mut sup = Vec::new();
        let mut con = Vec::new();
        for e in self.edges.iter().filter(|e| e.src == c || e.dst == c) {
            match e.kind {
                EdgeKind::Supports => sup.push(e.weight),
                EdgeKind::Contradicts => con.push(e.weight),
                _ => {}
            }
        }
        (sup, con)
    }

    pub fn count_edges(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }
}
