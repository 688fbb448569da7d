//! Study directories and the view taxonomy.
//!
//! A study is a directory of PGM frames plus a `study.json` sidecar:
//!
//! ```json
//! {"view": "apical-2-chamber", "confidence": 0.97,
//!  "pixel_spacing_mm": [0.5, 0.5], "frames": {"ED": "ED.pgm", "ES": "ES.pgm"}}
//! ```
//!
//! Optional keys: `labels` (mask label → anatomy, default `{"1": "left ventricle"}`)
//! and `segmentation_confidence` (reported by the mock segmenter, default 1).
//! A bare `view.json` with `{view, confidence}` is accepted when the sidecar
//! carries no view.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anatomy::AnatomyGroup;

pub const STUDY_SIDECAR: &str = "study.json";
pub const VIEW_SIDECAR: &str = "view.json";
pub const MAX_TAXONOMY: usize = 48;

pub const A2C: &str = "apical-2-chamber";
pub const A4C: &str = "apical-4-chamber";
pub const PLAX: &str = "parasternal-long-axis";

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

fn default_labels() -> BTreeMap<String, AnatomyGroup> {
    [("1".to_string(), AnatomyGroup::LeftVentricle)].into_iter().collect()
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySidecar {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    pub pixel_spacing_mm: [f64; 2],
    pub frames: BTreeMap<String, String>,
    #[serde(default = "default_labels")]
    pub labels: BTreeMap<String, AnatomyGroup>,
    #[serde(default = "one")]
    pub segmentation_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSidecar {
    pub view: String,
    pub confidence: f64,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, StudyError> {
    let text = std::fs::read_to_string(path).map_err(|source| StudyError::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|e| StudyError::Invalid { path: path.into(), message: e.to_string() })
}

impl StudySidecar {
    pub fn load(study_dir: &Path) -> Result<Self, StudyError> {
        let path = study_dir.join(STUDY_SIDECAR);
        let s: StudySidecar = read_json(&path)?;
        let [sx, sy] = s.pixel_spacing_mm;
        if !(sx > 0.0 && sy > 0.0 && sx.is_finite() && sy.is_finite()) {
            return Err(StudyError::Invalid { path, message: format!("pixel spacing must be positive, got [{sx}, {sy}]") });
        }
        s.structure_map().map_err(|message| StudyError::Invalid { path: path.clone(), message })?;
        Ok(s)
    }

    pub fn save(&self, study_dir: &Path) -> Result<(), StudyError> {
        let path = study_dir.join(STUDY_SIDECAR);
        let text = serde_json::to_string_pretty(self).expect("sidecar serializes") + "\n";
        std::fs::write(&path, text).map_err(|source| StudyError::Io { path, source })
    }

    pub fn spacing(&self) -> (f64, f64) {
        (self.pixel_spacing_mm[0], self.pixel_spacing_mm[1])
    }

    pub fn structure_map(&self) -> Result<BTreeMap<u8, AnatomyGroup>, String> {
        self.labels
            .iter()
            .map(|(k, &g)| match k.parse::<u8>() {
                Ok(0) | Err(_) => Err(format!("mask label {k:?} must be an integer in 1..=255")),
                Ok(l) => Ok((l, g)),
            })
            .collect()
    }

    pub fn frame_path(&self, study_dir: &Path, phase: &str) -> Option<PathBuf> {
        self.frames.get(phase).map(|f| study_dir.join(f))
    }

    /// View label and confidence, falling back to `view.json`.
    pub fn view_label(&self, study_dir: &Path) -> Result<ViewSidecar, StudyError> {
        match (&self.view, self.confidence) {
            (Some(view), confidence) => Ok(ViewSidecar { view: view.clone(), confidence: confidence.unwrap_or(1.0) }),
            (None, _) => read_json(&study_dir.join(VIEW_SIDECAR)),
        }
    }
}

/// Study directory holding `frame` (its parent).
pub fn study_dir_of(frame: &Path) -> PathBuf {
    frame.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

/// Ordered list of admissible view names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewTaxonomy {
    names: Vec<String>,
}

impl Default for ViewTaxonomy {
    /// The three standard views followed by numbered placeholders up to 48.
    fn default() -> Self {
        let mut names: Vec<String> = [A2C, A4C, PLAX].iter().map(|s| s.to_string()).collect();
        names.extend((names.len() + 1..=MAX_TAXONOMY).map(|i| format!("view-{i:02}")));
        ViewTaxonomy { names }
    }
}

impl ViewTaxonomy {
    pub fn from_names(names: Vec<String>) -> Self {
        if names.len() > MAX_TAXONOMY {
            tracing::warn!(count = names.len(), "view taxonomy has more than {MAX_TAXONOMY} entries");
        }
        ViewTaxonomy { names }
    }

    /// Newline-delimited names; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Self {
        let mut names: Vec<String> = Vec::new();
        for line in text.lines().map(str::trim) {
            if !line.is_empty() && !line.starts_with('#') && !names.iter().any(|n| n == line) {
                names.push(line.to_string());
            }
        }
        Self::from_names(names)
    }

    pub fn load(path: &Path) -> Result<Self, StudyError> {
        let text = std::fs::read_to_string(path).map_err(|source| StudyError::Io { path: path.into(), source })?;
        Ok(Self::parse(&text))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_taxonomy_has_named_views_first() {
        let t = ViewTaxonomy::default();
        assert_eq!(t.names().len(), 48);
        assert_eq!(&t.names()[..3], [A2C, A4C, PLAX]);
        assert!(!t.contains("A9C"));
    }

    #[test]
    fn parse_skips_comments_and_duplicates() {
        let t = ViewTaxonomy::parse("# views\napical-2-chamber\n\napical-2-chamber\nsubcostal\n");
        assert_eq!(t.names(), ["apical-2-chamber", "subcostal"]);
    }

    #[test]
    fn sidecar_defaults_and_view_fallback() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(STUDY_SIDECAR),
            r#"{"pixel_spacing_mm":[0.3,0.3],"frames":{"ED":"ED.pgm"}}"#,
        )
        .unwrap();
        std::fs::write(dir.path().join(VIEW_SIDECAR), r#"{"view":"apical-2-chamber","confidence":0.97}"#).unwrap();
        let s = StudySidecar::load(dir.path()).unwrap();
        assert_eq!(s.structure_map().unwrap()[&1], AnatomyGroup::LeftVentricle);
        assert_eq!(s.segmentation_confidence, 1.0);
        let v = s.view_label(dir.path()).unwrap();
        assert_eq!((v.view.as_str(), v.confidence), (A2C, 0.97));
    }

    #[test]
    fn zero_spacing_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(STUDY_SIDECAR), r#"{"pixel_spacing_mm":[0,0.3],"frames":{}}"#).unwrap();
        assert!(matches!(StudySidecar::load(dir.path()), Err(StudyError::Invalid { .. })));
    }
}
