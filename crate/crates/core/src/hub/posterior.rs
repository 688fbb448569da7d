//! Hypothesis scoring: a log-linear edge likelihood times the prior.
//!
//! Each supports edge of weight w multiplies a hypothesis' likelihood by
//! (1+β)^w and each contradicts edge by (1−γ)^w.

use serde::{Deserialize, Serialize};

use super::graph::{EvidenceGraph, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSet {
    pub labels: Vec<String>,
    pub prior: Vec<f64>,
    /// Concept node of each hypothesis.
    pub nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub values: Vec<f64>,
    /// Every likelihood underflowed and the prior was returned instead.
    pub degenerate: bool,
}

impl Posterior {
    /// Index of the largest value; ties go to the first.
    pub fn argmax(&self) -> Option<usize> {
        argmax(&self.values)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in v.iter().enumerate() {
        if best.map_or(true, |b| x > v[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Log-likelihood of one hypothesis from its incident edge weights.
pub fn log_likelihood(supports: &[f64], contradicts: &[f64], beta: f64, gamma: f64) -> f64 {
    let s: f64 = supports.iter().sum();
    let c: f64 = contradicts.iter().sum();
    let mut ll = 0.0;
    if s != 0.0 {
        ll += s * (1.0 + beta).ln();
    }
    if c != 0.0 {
        ll += c * (1.0 - gamma).ln();
    }
    ll
}

/// Normalize prior·likelihood. Falls back to the prior when the product
/// vanishes or is not finite.
pub fn normalize_likelihoods(prior: &[f64], likelihoods: &[f64]) -> Posterior {
    let unnorm: Vec<f64> = prior.iter().zip(likelihoods).map(|(p, l)| p * l).collect();
    let z: f64 = unnorm.iter().sum();
    if !(z > 0.0) || !z.is_finite() {
        return Posterior { values: prior.to_vec(), degenerate: true };
    }
    Posterior { values: unnorm.iter().map(|u| u / z).collect(), degenerate: false }
}

pub fn update_posteriors(graph: &EvidenceGraph, hyp: &HypothesisSet, beta: f64, gamma: f64) -> Posterior {
    let likelihoods: Vec<f64> = hyp
        .nodes
        .iter()
        .map(|&n| {
            let (s, c) = graph.concept_weights(n);
            log_likelihood(&s, &c, beta, gamma).exp()
        })
        .collect();
    normalize_likelihoods(&hyp.prior, &likelihoods)
}

/// Shannon entropy divided by ln(n); 0 for a single hypothesis.
pub fn normalized_entropy(p: &[f64]) -> f64 {
    if p.len() < 2 {
        return 0.0;
    }
    let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    h / (p.len() as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hub::graph::EdgeKind;
    use serde_json::json;

    fn set(g: &mut EvidenceGraph, n: usize) -> HypothesisSet {
        let nodes = (0..n).map(|i| g.add_concept(&format!("h{i}"), 0).unwrap()).collect();
        HypothesisSet { labels: (0..n).map(|i| format!("h{i}")).collect(), prior: uniform(n), nodes }
    }

    #[test]
    fn empty_graph_is_uniform() {
        let mut g = EvidenceGraph::default();
        let h = set(&mut g, 3);
        let p = update_posteriors(&g, &h, 1.0, 0.8);
        for v in p.values {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn one_support_edge_gives_half() {
        let mut g = EvidenceGraph::default();
        let h = set(&mut g, 3);
        let a = g.add_anchor("a", json!(null), 0).unwrap();
        let e = g.add_evidence("e", json!(null), 1.0, 1, &[(a, EdgeKind::Generates)]).unwrap();
        g.add_edge(e, h.nodes[0], EdgeKind::Supports, 1.0).unwrap();
        let p = update_posteriors(&g, &h, 1.0, 0.8);
        assert!((p.values[0] - 0.5).abs() < 1e-12);
        assert!((p.values[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn scaling_likelihoods_is_invisible() {
        let prior = [0.2, 0.5, 0.3];
        let l = [0.4, 2.0, 0.01];
        let base = normalize_likelihoods(&prior, &l);
        for c in [1e-6, 0.3, 7.0, 1e6] {
            let scaled: Vec<f64> = l.iter().map(|x| x * c).collect();
            let p = normalize_likelihoods(&prior, &scaled);
            for (a, b) in p.values.iter().zip(&base.values) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn underflow_falls_back_to_prior() {
        let p = normalize_likelihoods(&[0.5, 0.5], &[0.0, 0.0]);
        assert!(p.degenerate);
        assert_eq!(p.values, vec![0.5, 0.5]);
    }

    #[test]
    fn entropy_examples() {
        assert!(normalized_entropy(&[0.34, 0.33, 0.33]) > 0.99);
        assert!(normalized_entropy(&[0.98, 0.01, 0.01]) < 0.2);
        assert_eq!(normalized_entropy(&[1.0]), 0.0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), Some(1));
    }
}
