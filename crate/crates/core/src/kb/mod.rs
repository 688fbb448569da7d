//! Anatomy-indexed guideline knowledge base.
//!
//! Primitives are embedded into unit vectors, partitioned into one subset per
//! anatomy group, and retrieved by exact cosine scan. Once built (or loaded)
//! a [`KnowledgeBase`] is immutable and can be shared between threads.

pub mod corpus;
pub mod embed;
pub mod ingest;
pub mod persist;
pub mod repository;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::anatomy::AnatomyGroup;

pub use embed::{Encoder, EmbedError, HashedBowEncoder, HttpEncoder};
pub use ingest::{ingest_bytes, ingest_document, IngestConfig, IngestError, KnowledgePrimitive, SourceSpan};
pub use repository::{RepositoryEntry, Section, SummarySections, Summarizer, TemplateSummarizer};

pub const DEFAULT_TOP_K: usize = 8;
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("k must be positive")]
    InvalidK,
    #[error("duplicate primitive id {0}")]
    DuplicateId(String),
    #[error("primitive {0} has no embedding")]
    MissingEmbedding(String),
    #[error("primitive {id} has embedding dimension {found}, expected {expected}")]
    Dimension { id: String, expected: usize, found: usize },
    #[error("primitive {id} has embedding norm {norm}, expected 1")]
    BadNorm { id: String, norm: f64 },
    #[error("primitive {0} has empty text")]
    EmptyText(String),
    #[error("repository entry for {anatomy} references unknown primitive {id}")]
    DanglingId { anatomy: AnatomyGroup, id: String },
    #[error("index for {anatomy} disagrees with primitive tags at {id}")]
    IndexMismatch { anatomy: AnatomyGroup, id: String },
    #[error("unsupported index version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("index checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },
    #[error("encoder mismatch: index built with {index}, query encoder is {query}")]
    EncoderMismatch { index: String, query: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed index file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Per-group sorted primitive id lists plus the global id list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnatomyIndex {
    pub groups: BTreeMap<AnatomyGroup, Vec<String>>,
    pub all: Vec<String>,
}

impl AnatomyIndex {
    fn build(primitives: &[KnowledgePrimitive]) -> Self {
        let mut groups: BTreeMap<AnatomyGroup, Vec<String>> =
            AnatomyGroup::ALL.into_iter().map(|g| (g, Vec::new())).collect();
        let mut all = Vec::with_capacity(primitives.len());
        for p in primitives {
            all.push(p.id.clone());
            for tag in &p.anatomy_tags {
                groups.get_mut(tag).expect("all groups present").push(p.id.clone());
            }
        }
        for ids in groups.values_mut() {
            ids.sort();
        }
        all.sort();
        AnatomyIndex { groups, all }
    }

    pub fn subset(&self, anatomy: AnatomyGroup) -> &[String] {
        self.groups.get(&anatomy).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    /// (primitive id, cosine similarity), best first.
    pub hits: Vec<(String, f64)>,
    /// Anatomy filter was given but its subset is empty.
    pub no_knowledge_for_anatomy: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    encoder_id: String,
    dim: usize,
    primitives: Vec<KnowledgePrimitive>,
    by_id: HashMap<String, usize>,
    index: AnatomyIndex,
    entries: BTreeMap<AnatomyGroup, RepositoryEntry>,
}

fn check_primitive(p: &KnowledgePrimitive, dim: usize) -> Result<(), KbError> {
    if p.text.is_empty() {
        return Err(KbError::EmptyText(p.id.clone()));
    }
    let e = p.embedding.as_ref().ok_or_else(|| KbError::MissingEmbedding(p.id.clone()))?;
    if e.len() != dim {
        return Err(KbError::Dimension { id: p.id.clone(), expected: dim, found: e.len() });
    }
    let norm = embed::l2_norm(e);
    if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
        return Err(KbError::BadNorm { id: p.id.clone(), norm });
    }
    Ok(())
}

impl KnowledgeBase {
    /// Build from already-embedded primitives. Validates every invariant.
    pub fn from_primitives(
        encoder_id: impl Into<String>,
        dim: usize,
        mut primitives: Vec<KnowledgePrimitive>,
    ) -> Result<Self, KbError> {
        primitives.sort_by(|a, b| a.id.cmp(&b.id));
        let mut by_id = HashMap::with_capacity(primitives.len());
        for (i, p) in primitives.iter().enumerate() {
            check_primitive(p, dim)?;
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(KbError::DuplicateId(p.id.clone()));
            }
        }
        let index = AnatomyIndex::build(&primitives);
        Ok(KnowledgeBase { encoder_id: encoder_id.into(), dim, primitives, by_id, index, entries: BTreeMap::new() })
    }

    /// Embed unembedded primitives with `encoder` and build the base.
    pub fn embed_and_build(encoder: &dyn Encoder, mut primitives: Vec<KnowledgePrimitive>) -> Result<Self, KbError> {
        let texts: Vec<&str> = primitives.iter().map(|p| p.text.as_str()).collect();
        let vectors = if texts.is_empty() { Vec::new() } else { encoder.embed_batch(&texts)? };
        for (p, v) in primitives.iter_mut().zip(vectors) {
            p.embedding = Some(v);
        }
        Self::from_primitives(encoder.id(), encoder.dim(), primitives)
    }

    pub fn encoder_id(&self) -> &str {
        &self.encoder_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn primitives(&self) -> &[KnowledgePrimitive] {
        &self.primitives
    }

    pub fn primitive(&self, id: &str) -> Option<&KnowledgePrimitive> {
        self.by_id.get(id).map(|&i| &self.primitives[i])
    }

    pub fn index(&self) -> &AnatomyIndex {
        &self.index
    }

    pub fn entries(&self) -> &BTreeMap<AnatomyGroup, RepositoryEntry> {
        &self.entries
    }

    pub fn entry(&self, anatomy: AnatomyGroup) -> Option<&RepositoryEntry> {
        self.entries.get(&anatomy)
    }

    /// Membership biconditional: id ∈ group list ⇔ group ∈ primitive tags,
    /// with every list sorted.
    pub fn verify_index(&self) -> Result<(), KbError> {
        for (&anatomy, ids) in &self.index.groups {
            if let Some(w) = ids.windows(2).find(|w| w[0] >= w[1]) {
                return Err(KbError::IndexMismatch { anatomy, id: w[1].clone() });
            }
            for id in ids {
                let tagged = self.primitive(id).map(|p| p.anatomy_tags.contains(&anatomy)).unwrap_or(false);
                if !tagged {
                    return Err(KbError::IndexMismatch { anatomy, id: id.clone() });
                }
            }
            for p in &self.primitives {
                if p.anatomy_tags.contains(&anatomy) && ids.binary_search(&p.id).is_err() {
                    return Err(KbError::IndexMismatch { anatomy, id: p.id.clone() });
                }
            }
        }
        Ok(())
    }

    fn ensure_encoder(&self, encoder: &dyn Encoder) -> Result<(), KbError> {
        if encoder.id() != self.encoder_id {
            return Err(KbError::EncoderMismatch { index: self.encoder_id.clone(), query: encoder.id().to_string() });
        }
        Ok(())
    }

    /// Exact top-k by cosine similarity, ties broken by ascending id.
    pub fn retrieve_by_vector(&self, query: &[f64], anatomy: Option<AnatomyGroup>, k: usize) -> Result<Retrieval, KbError> {
        if k == 0 {
            return Err(KbError::InvalidK);
        }
        let candidates: Vec<usize> = match anatomy {
            Some(a) => self.index.subset(a).iter().map(|id| self.by_id[id]).collect(),
            None => (0..self.primitives.len()).collect(),
        };
        if candidates.is_empty() {
            return Ok(Retrieval { hits: Vec::new(), no_knowledge_for_anatomy: anatomy.is_some() });
        }
        let mut scored: Vec<(usize, f64)> = candidates
            .into_iter()
            .map(|i| {
                let e = self.primitives[i].embedding.as_ref().expect("validated");
                (i, embed::dot(query, e).clamp(-1.0, 1.0))
            })
            .collect();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1).then_with(|| self.primitives[a.0].id.cmp(&self.primitives[b.0].id))
        });
        scored.truncate(k);
        Ok(Retrieval {
            hits: scored.into_iter().map(|(i, s)| (self.primitives[i].id.clone(), s)).collect(),
            no_knowledge_for_anatomy: false,
        })
    }

    pub fn retrieve_topk(
        &self,
        encoder: &dyn Encoder,
        query_text: &str,
        anatomy: Option<AnatomyGroup>,
        k: usize,
    ) -> Result<Retrieval, KbError> {
        self.ensure_encoder(encoder)?;
        let q = encoder.embed(query_text)?;
        self.retrieve_by_vector(&q, anatomy, k)
    }

    /// Build the structured entry for one anatomy from its top-k primitives.
    ///
    /// A failing `summarizer` degrades to the template path and the entry
    /// records why.
    pub fn build_repository_entry(
        &self,
        encoder: &dyn Encoder,
        summarizer: Option<&dyn Summarizer>,
        anatomy: AnatomyGroup,
        k: usize,
    ) -> Result<RepositoryEntry, KbError> {
        let retrieval = self.retrieve_topk(encoder, &anatomy.query_text(), Some(anatomy), k)?;
        let ids: Vec<String> = retrieval.hits.iter().map(|(id, _)| id.clone()).collect();
        if ids.is_empty() {
            return Ok(RepositoryEntry {
                anatomy,
                summary_sections: SummarySections::no_guidance(),
                supporting_primitive_ids: ids,
                created_from_k: k,
                degradation: None,
            });
        }
        let prims: Vec<&KnowledgePrimitive> = ids.iter().map(|id| self.primitive(id).expect("retrieved")).collect();
        let mut degradation = None;
        let sections = match summarizer {
            Some(s) => match s.summarize(anatomy, &prims) {
                Ok(sections) => sections,
                Err(reason) => {
                    tracing::warn!(%anatomy, %reason, "summarizer failed, using template fallback");
                    degradation = Some(format!("summarizer fallback: {reason}"));
                    TemplateSummarizer.summarize(anatomy, &prims).expect("template is infallible")
                }
            },
            None => TemplateSummarizer.summarize(anatomy, &prims).expect("template is infallible"),
        };
        Ok(RepositoryEntry { anatomy, summary_sections: sections, supporting_primitive_ids: ids, created_from_k: k, degradation })
    }

    /// Build entries for all fourteen groups.
    pub fn build_all_entries(
        &mut self,
        encoder: &dyn Encoder,
        summarizer: Option<&dyn Summarizer>,
        k: usize,
    ) -> Result<(), KbError> {
        let mut entries = BTreeMap::new();
        for anatomy in AnatomyGroup::ALL {
            entries.insert(anatomy, self.build_repository_entry(encoder, summarizer, anatomy, k)?);
        }
        self.entries = entries;
        Ok(())
    }

    pub fn insert_entry(&mut self, entry: RepositoryEntry) -> Result<(), KbError> {
        for id in &entry.supporting_primitive_ids {
            if !self.by_id.contains_key(id) {
                return Err(KbError::DanglingId { anatomy: entry.anatomy, id: id.clone() });
            }
        }
        self.entries.insert(entry.anatomy, entry);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn kb_from(texts: &[(&str, &str)]) -> (KnowledgeBase, HashedBowEncoder) {
        let enc = HashedBowEncoder::default();
        let prims = texts
            .iter()
            .flat_map(|(src, t)| ingest_document(t, src, &BTreeSet::new(), &IngestConfig::default()))
            .collect();
        (KnowledgeBase::embed_and_build(&enc, prims).unwrap(), enc)
    }

    #[test]
    fn self_retrieval_scores_one() {
        let (kb, enc) = kb_from(&[
            ("a", "The left ventricle contracts."),
            ("b", "The mitral valve opens in diastole."),
        ]);
        let r = kb.retrieve_topk(&enc, "The mitral valve opens in diastole.", Some(AnatomyGroup::MitralValve), 1).unwrap();
        assert_eq!(r.hits[0].0, "b#0");
        assert!((r.hits[0].1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn exhaustive_k_returns_whole_subset_sorted() {
        let (kb, enc) = kb_from(&[
            ("a", "left ventricle size"),
            ("b", "left ventricle wall motion"),
            ("c", "mitral valve"),
        ]);
        let r = kb.retrieve_topk(&enc, "left ventricle", Some(AnatomyGroup::LeftVentricle), 50).unwrap();
        assert_eq!(r.hits.len(), 2);
        assert!(r.hits[0].1 >= r.hits[1].1);
    }

    #[test]
    fn empty_subset_flags_instead_of_failing() {
        let (kb, enc) = kb_from(&[("a", "left ventricle size")]);
        let r = kb.retrieve_topk(&enc, "pericardial effusion", Some(AnatomyGroup::Pericardium), 3).unwrap();
        assert!(r.hits.is_empty());
        assert!(r.no_knowledge_for_anatomy);
        assert!(matches!(kb.retrieve_topk(&enc, "x", None, 0), Err(KbError::InvalidK)));
    }

    #[test]
    fn empty_anatomy_entry_has_no_guidance() {
        let (kb, enc) = kb_from(&[("a", "left ventricle size")]);
        let e = kb.build_repository_entry(&enc, None, AnatomyGroup::Aorta, 8).unwrap();
        assert!(e.supporting_primitive_ids.is_empty());
        let s = &e.summary_sections;
        for sec in [&s.views_to_acquire, &s.structures_to_segment, &s.measurements, &s.diagnostic_criteria] {
            assert!(sec.no_guidance_found && sec.items.is_empty());
        }
    }

    struct Broken;
    impl Summarizer for Broken {
        fn summarize(&self, _: AnatomyGroup, _: &[&KnowledgePrimitive]) -> Result<SummarySections, String> {
            Err("missing list \"measurements\"".into())
        }
    }

    #[test]
    fn broken_summarizer_degrades_to_template() {
        let (kb, enc) = kb_from(&[("a", "EF below 40% indicates considerably reduced left ventricular function.")]);
        let e = kb.build_repository_entry(&enc, Some(&Broken), AnatomyGroup::LeftVentricle, 8).unwrap();
        assert!(e.degradation.is_some());
        assert_eq!(e.summary_sections.diagnostic_criteria.items.len(), 1);
    }

    #[test]
    fn index_membership_holds() {
        let (kb, _) = kb_from(&[("a", "left ventricle and mitral valve"), ("b", "aorta")]);
        kb.verify_index().unwrap();
        assert_eq!(kb.index().subset(AnatomyGroup::MitralValve), ["a#0"]);
        assert_eq!(kb.index().all, ["a#0", "b#0"]);
    }
}
