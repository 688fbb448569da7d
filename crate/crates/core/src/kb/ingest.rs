//! Decomposition of guideline documents into knowledge primitives.
//!
//! Documents are split at blank-line paragraph boundaries. Adjacent
//! paragraphs are merged (joined by a blank line) while the merged text stays
//! within `max_chunk_chars`; a single paragraph longer than the limit is cut
//! at sentence ends, then whitespace, then hard character boundaries.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::anatomy::AnatomyGroup;

pub const DEFAULT_MAX_CHUNK_CHARS: usize = 800;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub max_chunk_chars: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { max_chunk_chars: DEFAULT_MAX_CHUNK_CHARS }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IngestError {
    #[error("document {source_id} is not valid UTF-8 at byte offset {offset}")]
    Undecodable { source_id: String, offset: usize },
}

/// Where a primitive came from: document id and byte span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpan {
    pub document: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgePrimitive {
    pub id: String,
    pub text: String,
    pub source: SourceSpan,
    #[serde(rename = "tags")]
    pub anatomy_tags: BTreeSet<AnatomyGroup>,
    pub embedding: Option<Vec<f64>>,
}

impl KnowledgePrimitive {
    /// Tag weight used to pick a primitive's dominant anatomy: keyword hit count.
    pub fn tag_weight(&self, group: AnatomyGroup) -> usize {
        group.keyword_hits(&self.text)
    }

    /// The tag with the most keyword hits; ties go to the smaller canonical name.
    pub fn dominant_tag(&self) -> Option<AnatomyGroup> {
        self.anatomy_tags.iter().copied().min_by(|a, b| {
            self.tag_weight(*b)
                .cmp(&self.tag_weight(*a))
                .then_with(|| a.canonical_name().cmp(b.canonical_name()))
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Unit {
    start: usize,
    end: usize,
}

fn paragraphs(doc: &str) -> Vec<Unit> {
    let mut out = Vec::new();
    let mut cur: Option<Unit> = None;
    let mut offset = 0;
    for line in doc.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();
        if line.trim().is_empty() {
            if let Some(u) = cur.take() {
                out.push(u);
            }
        } else {
            let content_end = line_start + line.trim_end().len();
            match cur.as_mut() {
                Some(u) => u.end = content_end,
                None => {
                    let lead = line.len() - line.trim_start().len();
                    cur = Some(Unit { start: line_start + lead, end: content_end });
                }
            }
        }
    }
    out.extend(cur);
    out
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Byte index of the best cut in `s` such that `s[..cut]` has at most `max` chars.
fn cut_point(s: &str, max: usize) -> usize {
    let limit = s.char_indices().nth(max).map(|(i, _)| i).unwrap_or(s.len());
    if limit == s.len() {
        return limit;
    }
    let window = &s[..limit];
    let sentence = window
        .char_indices()
        .filter(|&(i, c)| {
            matches!(c, '.' | '?' | '!' | ';')
                && window[i + c.len_utf8()..].starts_with(char::is_whitespace)
        })
        .map(|(i, c)| i + c.len_utf8())
        .last();
    if let Some(i) = sentence {
        return i;
    }
    if let Some((i, _)) = window.char_indices().filter(|(_, c)| c.is_whitespace()).last() {
        if i > 0 {
            return i;
        }
    }
    limit
}

fn split_long(doc: &str, unit: Unit, max: usize) -> Vec<Unit> {
    let mut out = Vec::new();
    let mut start = unit.start;
    while start < unit.end {
        let rest = &doc[start..unit.end];
        let trimmed_lead = rest.len() - rest.trim_start().len();
        start += trimmed_lead;
        let rest = &doc[start..unit.end];
        if rest.is_empty() {
            break;
        }
        let cut = cut_point(rest, max);
        let piece = rest[..cut].trim_end();
        if !piece.is_empty() {
            out.push(Unit { start, end: start + piece.len() });
        }
        start += cut;
    }
    out
}

/// Split `doc_text` into unembedded primitives with ids `source_id#ordinal`.
pub fn ingest_document(
    doc_text: &str,
    source_id: &str,
    explicit_tags: &BTreeSet<AnatomyGroup>,
    config: &IngestConfig,
) -> Vec<KnowledgePrimitive> {
    let max = config.max_chunk_chars.max(1);
    let units: Vec<Unit> = paragraphs(doc_text)
        .into_iter()
        .flat_map(|u| {
            if char_len(&doc_text[u.start..u.end]) > max {
                split_long(doc_text, u, max)
            } else {
                vec![u]
            }
        })
        .collect();

    // (text, span start, span end)
    let mut chunks: Vec<(String, usize, usize)> = Vec::new();
    for u in units {
        let text = &doc_text[u.start..u.end];
        if let Some(last) = chunks.last_mut() {
            if char_len(&last.0) + 2 + char_len(text) <= max {
                last.0.push_str("\n\n");
                last.0.push_str(text);
                last.2 = u.end;
                continue;
            }
        }
        chunks.push((text.to_string(), u.start, u.end));
    }

    chunks
        .into_iter()
        .enumerate()
        .map(|(ordinal, (text, start, end))| {
            let mut tags: BTreeSet<AnatomyGroup> = AnatomyGroup::tag_text(&text).into_iter().collect();
            tags.extend(explicit_tags.iter().copied());
            KnowledgePrimitive {
                id: format!("{source_id}#{ordinal}"),
                text,
                source: SourceSpan { document: source_id.to_string(), start, end },
                anatomy_tags: tags,
                embedding: None,
            }
        })
        .collect()
}

/// Like [`ingest_document`] but starting from raw bytes.
pub fn ingest_bytes(
    bytes: &[u8],
    source_id: &str,
    explicit_tags: &BTreeSet<AnatomyGroup>,
    config: &IngestConfig,
) -> Result<Vec<KnowledgePrimitive>, IngestError> {
    let text = std::str::from_utf8(bytes).map_err(|e| IngestError::Undecodable {
        source_id: source_id.to_string(),
        offset: e.valid_up_to(),
    })?;
    Ok(ingest_document(text, source_id, explicit_tags, config))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(max: usize) -> IngestConfig {
        IngestConfig { max_chunk_chars: max }
    }

    #[test]
    fn empty_document_yields_nothing() {
        assert!(ingest_document("", "doc", &BTreeSet::new(), &cfg(800)).is_empty());
        assert!(ingest_document("\n\n  \n", "doc", &BTreeSet::new(), &cfg(800)).is_empty());
    }

    #[test]
    fn three_unmergeable_paragraphs() {
        // 40, 42 and 38 chars: any two joined exceed 80
        let doc = "The mitral valve has two leaflets today.\n\n\
                   Aortic stenosis is graded by jet velocity.\n\n\
                   The pericardium may contain fluid now.\n";
        let prims = ingest_document(doc, "src", &BTreeSet::new(), &cfg(80));
        let ids: Vec<_> = prims.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["src#0", "src#1", "src#2"]);
        for p in &prims {
            assert_eq!(&doc[p.source.start..p.source.end], p.text);
        }
    }

    #[test]
    fn small_paragraphs_merge() {
        let doc = "alpha.\n\nbeta.\n\ngamma.";
        let prims = ingest_document(doc, "d", &BTreeSet::new(), &cfg(800));
        assert_eq!(prims.len(), 1);
        assert_eq!(prims[0].text, "alpha.\n\nbeta.\n\ngamma.");
        assert_eq!((prims[0].source.start, prims[0].source.end), (0, doc.len()));
    }

    #[test]
    fn long_paragraph_is_split_within_limit() {
        let sentence = "The left ventricle is measured carefully in every view. ";
        let doc = sentence.repeat(40);
        let prims = ingest_document(&doc, "d", &BTreeSet::new(), &cfg(120));
        assert!(prims.len() > 1);
        for p in &prims {
            assert!(!p.text.is_empty());
            assert!(p.text.chars().count() <= 120, "{}", p.text.len());
        }
        let word = "x".repeat(300);
        let prims = ingest_document(&word, "w", &BTreeSet::new(), &cfg(100));
        assert_eq!(prims.len(), 3);
    }

    #[test]
    fn auto_tags_union_explicit() {
        let explicit: BTreeSet<_> = [AnatomyGroup::Aorta].into_iter().collect();
        let prims = ingest_document(
            "Left ventricular ejection fraction is the key index.",
            "d",
            &explicit,
            &cfg(800),
        );
        assert!(prims[0].anatomy_tags.contains(&AnatomyGroup::LeftVentricle));
        assert!(prims[0].anatomy_tags.contains(&AnatomyGroup::Aorta));
    }

    #[test]
    fn undecodable_bytes_report_offset() {
        let bytes = b"valid text \xff\xfe more";
        assert_eq!(
            ingest_bytes(bytes, "bad.md", &BTreeSet::new(), &cfg(800)),
            Err(IngestError::Undecodable { source_id: "bad.md".into(), offset: 11 })
        );
    }

    #[test]
    fn dominant_tag_by_hits_then_name() {
        let p = ingest_document(
            "The mitral valve and the mitral annulus sit beside the left atrium.",
            "d",
            &BTreeSet::new(),
            &cfg(800),
        )
        .remove(0);
        assert_eq!(p.dominant_tag(), Some(AnatomyGroup::MitralValve));
        let q = ingest_document("aorta and mitral", "d", &BTreeSet::new(), &cfg(800)).remove(0);
        assert_eq!(q.dominant_tag(), Some(AnatomyGroup::Aorta));
    }
}
