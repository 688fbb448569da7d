//! Per-anatomy structured repository entries.
//!
//! An entry condenses the top-k primitives of one anatomy group into four
//! ordered sections that the planner compiles into tool steps. A remote
//! summarizer may produce the sections; otherwise (or when it misbehaves)
//! the keyword template below buckets primitive sentences verbatim.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::anatomy::AnatomyGroup;
use crate::transport::{HttpConfig, JsonClient};

use super::KnowledgePrimitive;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub items: Vec<String>,
    pub no_guidance_found: bool,
}

impl Section {
    fn from_items(items: Vec<String>) -> Self {
        let no_guidance_found = items.is_empty();
        Section { items, no_guidance_found }
    }

    pub fn empty() -> Self {
        Section { items: Vec::new(), no_guidance_found: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummarySections {
    pub views_to_acquire: Section,
    pub structures_to_segment: Section,
    pub measurements: Section,
    pub diagnostic_criteria: Section,
}

impl SummarySections {
    pub fn no_guidance() -> Self {
        SummarySections {
            views_to_acquire: Section::empty(),
            structures_to_segment: Section::empty(),
            measurements: Section::empty(),
            diagnostic_criteria: Section::empty(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.views_to_acquire.items.is_empty()
            && self.structures_to_segment.items.is_empty()
            && self.measurements.items.is_empty()
            && self.diagnostic_criteria.items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepositoryEntry {
    pub anatomy: AnatomyGroup,
    pub summary_sections: SummarySections,
    pub supporting_primitive_ids: Vec<String>,
    pub created_from_k: usize,
    /// Set when the summarization backend failed and the template path was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degradation: Option<String>,
}

pub trait Summarizer: Send + Sync {
    fn summarize(&self, anatomy: AnatomyGroup, primitives: &[&KnowledgePrimitive]) -> Result<SummarySections, String>;
}

fn re(cell: &'static OnceLock<Regex>, pat: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pat).expect("static regex"))
}

fn comparator_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(
        &R,
        r"(?i)(\b(below|above|under|over|less than|greater than|more than|at least|at most|between|exceed\w*|or (higher|above|more|greater|lower|below|less))\b|[<>≤≥])",
    )
}

fn view_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"(?i)\b(apical|parasternal|subcostal|suprasternal)\b")
}

fn segment_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"(?i)\b(segment\w*|trac(e|ed|ing)|delineat\w*|contour\w*|outlin\w*)\b")
}

fn measure_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(
        &R,
        r"(?i)\b(measur\w*|calculat\w*|estimat\w*|quantif\w*|volumes?|dimensions?|diameters?|area|ml|mm|cm)\b",
    )
}

/// Split a primitive into sentences, dropping markdown heading lines.
pub fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut start = 0;
        let chars: Vec<(usize, char)> = line.char_indices().collect();
        for (n, &(i, c)) in chars.iter().enumerate() {
            let at_end = n + 1 == chars.len();
            let boundary = matches!(c, '.' | '?' | '!') && (at_end || chars[n + 1].1.is_whitespace());
            if boundary {
                let s = line[start..i + c.len_utf8()].trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                start = i + c.len_utf8();
            }
        }
        let tail = line[start..].trim();
        if !tail.is_empty() {
            out.push(tail.to_string());
        }
    }
    out
}

pub fn is_criterion(sentence: &str) -> bool {
    comparator_re().is_match(sentence) && sentence.chars().any(|c| c.is_ascii_digit())
}

/// Keyword-rule fallback summarizer.
#[derive(Debug, Default, Clone, Copy)]
pub struct TemplateSummarizer;

impl Summarizer for TemplateSummarizer {
    fn summarize(&self, _anatomy: AnatomyGroup, primitives: &[&KnowledgePrimitive]) -> Result<SummarySections, String> {
        let (mut views, mut structures, mut measures, mut criteria) = (vec![], vec![], vec![], vec![]);
        let push = |bucket: &mut Vec<String>, s: &str| {
            if !bucket.iter().any(|x| x == s) {
                bucket.push(s.to_string());
            }
        };
        for p in primitives {
            for s in sentences(&p.text) {
                if is_criterion(&s) {
                    push(&mut criteria, &s);
                    continue;
                }
                if view_re().is_match(&s) {
                    push(&mut views, &s);
                }
                if segment_re().is_match(&s) && !AnatomyGroup::tag_text(&s).is_empty() {
                    push(&mut structures, &s);
                }
                if measure_re().is_match(&s) {
                    push(&mut measures, &s);
                }
            }
        }
        Ok(SummarySections {
            views_to_acquire: Section::from_items(views),
            structures_to_segment: Section::from_items(structures),
            measurements: Section::from_items(measures),
            diagnostic_criteria: Section::from_items(criteria),
        })
    }
}

/// Remote summarizer: `POST {base_url}/summarize` with
/// `{anatomy, primitives:[{id,text}]}` → `{views_to_acquire:[..], structures_to_segment:[..],
/// measurements:[..], diagnostic_criteria:[..]}`.
pub struct HttpSummarizer {
    base_url: String,
    client: JsonClient,
}

impl HttpSummarizer {
    pub fn new(base_url: &str, http: HttpConfig) -> Self {
        HttpSummarizer { base_url: base_url.trim_end_matches('/').to_string(), client: JsonClient::new(http) }
    }
}

fn string_list(v: &Value, key: &str) -> Result<Vec<String>, String> {
    let arr = v.get(key).and_then(Value::as_array).ok_or_else(|| format!("missing list {key:?}"))?;
    arr.iter()
        .map(|x| x.as_str().map(str::to_string).ok_or_else(|| format!("non-string item in {key:?}")))
        .collect()
}

impl Summarizer for HttpSummarizer {
    fn summarize(&self, anatomy: AnatomyGroup, primitives: &[&KnowledgePrimitive]) -> Result<SummarySections, String> {
        let body = json!({
            "anatomy": anatomy,
            "primitives": primitives.iter().map(|p| json!({"id": p.id, "text": p.text})).collect::<Vec<_>>(),
        });
        let (resp, _) = self.client.post_json(&format!("{}/summarize", self.base_url), &body);
        let resp = resp.map_err(|e| e.to_string())?;
        Ok(SummarySections {
            views_to_acquire: Section::from_items(string_list(&resp, "views_to_acquire")?),
            structures_to_segment: Section::from_items(string_list(&resp, "structures_to_segment")?),
            measurements: Section::from_items(string_list(&resp, "measurements")?),
            diagnostic_criteria: Section::from_items(string_list(&resp, "diagnostic_criteria")?),
        })
    }
}
