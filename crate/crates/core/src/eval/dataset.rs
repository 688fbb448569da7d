//! Dataset layout: one directory per record under the root, each holding a
//! `record.json` and the study directories it names.
//!
//! ```text
//! root/
//!   rec-01/
//!     record.json        {"id", "a2c", "a4c", "truth": {...}, "question"?, "options"?}
//!     a2c/study.json ED.pgm ES.pgm ED.mask.pgm ES.mask.pgm
//!     a4c/...
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anatomy::AnatomyGroup;
use crate::quant::{grade_ef, EfGrade};
use crate::tools::StudySidecar;

pub const RECORD_FILE: &str = "record.json";
pub const DEFAULT_EF_QUESTION: &str = "Is the ejection fraction normal?";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroundTruth {
    Ef { ef_percent: f64, grade: EfGrade },
    Qa { answer_option: String, anatomy_group: AnatomyGroup },
}

impl GroundTruth {
    pub fn anatomy(&self) -> AnatomyGroup {
        match self {
            GroundTruth::Ef { .. } => AnatomyGroup::LeftVentricle,
            GroundTruth::Qa { anatomy_group, .. } => *anatomy_group,
        }
    }
}

/// On-disk `record.json`. Study paths are relative to the record directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordFile {
    pub id: String,
    pub a2c: PathBuf,
    pub a4c: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRecord {
    pub id: String,
    pub a2c: PathBuf,
    pub a4c: PathBuf,
    pub question: String,
    pub options: Option<Vec<String>>,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub records: Vec<StudyRecord>,
    pub warnings: Vec<String>,
    /// Hash over every record file and study file, in id order.
    pub digest: String,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("record {record}: {message}")]
    Record { record: String, message: String },
    #[error("duplicate record id {0:?}")]
    Duplicate(String),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

fn validate(file: &RecordFile, dir: &Path) -> Result<StudyRecord, String> {
    let (question, options) = match &file.truth {
        GroundTruth::Ef { ef_percent, grade } => {
            let g = grade_ef(*ef_percent).map_err(|e| e.to_string())?;
            if g.grade != *grade {
                return Err(format!("grade {grade} is inconsistent with EF {ef_percent}% (expected {})", g.grade));
            }
            (file.question.clone().unwrap_or_else(|| DEFAULT_EF_QUESTION.to_string()), file.options.clone())
        }
        GroundTruth::Qa { answer_option, .. } => {
            let q = file.question.clone().ok_or("question record without a question")?;
            let opts = file.options.clone().ok_or("question record without options")?;
            if opts.len() < 2 {
                return Err("question record needs at least two options".into());
            }
            if !opts.contains(answer_option) {
                return Err(format!("answer {answer_option:?} is not one of the options"));
            }
            (q, Some(opts))
        }
    };
    let mut studies = Vec::new();
    for rel in [&file.a2c, &file.a4c] {
        let p = dir.join(rel);
        let side = StudySidecar::load(&p).map_err(|e| e.to_string())?;
        let (sx, sy) = side.spacing();
        if !(sx > 0.0 && sy > 0.0 && sx.is_finite() && sy.is_finite()) {
            return Err(format!("{}: pixel spacing must be positive", rel.display()));
        }
        side.structure_map().map_err(|e| format!("{}: {e}", rel.display()))?;
        studies.push(p);
    }
    let a4c = studies.pop().expect("two studies");
    let a2c = studies.pop().expect("two studies");
    Ok(StudyRecord { id: file.id.clone(), a2c, a4c, question, options, truth: file.truth.clone() })
}

fn hash_tree(h: &mut Sha256, base: &Path, dir: &Path) -> Result<(), DatasetError> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io(dir))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            hash_tree(h, base, &p)?;
        } else {
            let rel = p.strip_prefix(base).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            let bytes = std::fs::read(&p).map_err(io(&p))?;
            h.update((rel.len() as u64).to_le_bytes());
            h.update(rel.as_bytes());
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    }
    Ok(())
}

/// Load and validate every record under `root`, sorted by id.
pub fn load_dataset(root: &Path) -> Result<Dataset, DatasetError> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(io(root))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(io(root))?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut records = Vec::new();
    let mut hashed: Vec<(String, PathBuf)> = Vec::new();
    for dir in dirs {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let path = dir.join(RECORD_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| DatasetError::Record {
            record: name.clone(),
            message: format!("missing or unreadable {RECORD_FILE}: {e}"),
        })?;
        let file: RecordFile = serde_json::from_str(&text)
            .map_err(|e| DatasetError::Record { record: name.clone(), message: format!("{RECORD_FILE}: {e}") })?;
        let rec = validate(&file, &dir).map_err(|message| DatasetError::Record { record: file.id.clone(), message })?;
        hashed.push((rec.id.clone(), dir));
        records.push(rec);
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    for w in records.windows(2) {
        if w[0].id == w[1].id {
            return Err(DatasetError::Duplicate(w[0].id.clone()));
        }
    }
    hashed.sort();
    let mut h = Sha256::new();
    for (id, dir) in &hashed {
        h.update(id.as_bytes());
        hash_tree(&mut h, dir, dir)?;
    }
    let mut warnings = Vec::new();
    if records.is_empty() {
        let w = format!("no records found under {}", root.display());
        tracing::warn!("{w}");
        warnings.push(w);
    }
    Ok(Dataset { records, warnings, digest: format!("sha256:{}", hex::encode(h.finalize())) })
}
