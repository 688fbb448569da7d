//! Synthetic fixtures: the guideline corpus, analytic shape masks and a
//! small EF-graded study dataset with ground-truth masks.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anatomy::AnatomyGroup;
use crate::eval::dataset::{GroundTruth, RecordFile, RECORD_FILE};
use crate::kb::corpus::CorpusDocument;
use crate::kb::{HashedBowEncoder, IngestConfig, KbError, KnowledgeBase, TemplateSummarizer, DEFAULT_TOP_K};
use crate::mask::SegmentationMask;
use crate::pgm::{self, GrayImage};
use crate::quant::{grade_ef, EfGrade};
use crate::tools::{StudySidecar, A2C, A4C};

macro_rules! corpus_doc {
    ($name:literal) => {
        ($name, include_str!(concat!("../fixtures/corpus/", $name)))
    };
}

/// The bundled corpus, one short guideline note per anatomy group.
pub const CORPUS: [(&str, &str); 14] = [
    corpus_doc!("01-left-ventricle.md"),
    corpus_doc!("02-right-ventricle.md"),
    corpus_doc!("03-left-atrium.md"),
    corpus_doc!("04-right-atrium.md"),
    corpus_doc!("05-mitral-valve.md"),
    corpus_doc!("06-aortic-valve.md"),
    corpus_doc!("07-tricuspid-valve.md"),
    corpus_doc!("08-pulmonic-valve.md"),
    corpus_doc!("09-pericardium.md"),
    corpus_doc!("10-aorta.md"),
    corpus_doc!("11-pulmonary-artery.md"),
    corpus_doc!("12-interatrial-septum.md"),
    corpus_doc!("13-interventricular-septum.md"),
    corpus_doc!("14-inferior-vena-cava.md"),
];

pub fn corpus_documents() -> Vec<CorpusDocument> {
    CORPUS
        .iter()
        .map(|(name, text)| CorpusDocument {
            source_id: name.to_string(),
            path: PathBuf::from(name),
            bytes: text.as_bytes().to_vec(),
            explicit_tags: Default::default(),
        })
        .collect()
}

pub fn write_corpus(dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, text) in CORPUS {
        std::fs::write(dir.join(name), text)?;
    }
    Ok(())
}

/// Knowledge base over the bundled corpus with the default encoder and template summaries.
pub fn fixture_kb() -> Result<KnowledgeBase, KbError> {
    crate::kb::corpus::build_knowledge_base(
        &corpus_documents(),
        &HashedBowEncoder::default(),
        Some(&TemplateSummarizer),
        &IngestConfig::default(),
        DEFAULT_TOP_K,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// Prolate spheroid: elliptical long-axis sections, circular cross-sections.
    Spheroid,
    /// Cylinder along the long axis: rectangular long-axis sections.
    Cylinder,
}

impl std::str::FromStr for Shape {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "spheroid" => Ok(Shape::Spheroid),
            "cylinder" => Ok(Shape::Cylinder),
            _ => Err(format!("unknown shape {s:?} (spheroid, cylinder)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub shape: Shape,
    pub length_mm: f64,
    pub radius_mm: f64,
    pub spacing_mm: f64,
    pub size: usize,
}

impl ShapeSpec {
    pub fn spheroid(length_mm: f64, radius_mm: f64, spacing_mm: f64, size: usize) -> Self {
        ShapeSpec { shape: Shape::Spheroid, length_mm, radius_mm, spacing_mm, size }
    }

    pub fn cylinder(length_mm: f64, radius_mm: f64, spacing_mm: f64, size: usize) -> Self {
        ShapeSpec { shape: Shape::Cylinder, length_mm, radius_mm, spacing_mm, size }
    }

    /// Exact solid volume in mL.
    pub fn analytic_volume_ml(&self) -> f64 {
        let r2 = self.radius_mm * self.radius_mm;
        let v = match self.shape {
            Shape::Spheroid => 4.0 / 3.0 * std::f64::consts::PI * (self.length_mm / 2.0) * r2,
            Shape::Cylinder => std::f64::consts::PI * r2 * self.length_mm,
        };
        v / 1000.0
    }

    /// Long-axis section, axis vertical and centred.
    pub fn mask(&self) -> SegmentationMask {
        match self.shape {
            Shape::Spheroid => ellipse_mask(self.size, self.spacing_mm, self.length_mm / 2.0, self.radius_mm),
            Shape::Cylinder => {
                let n = self.size;
                let c = n as f64 * self.spacing_mm / 2.0;
                let (hl, r) = (self.length_mm / 2.0, self.radius_mm);
                fill(n, self.spacing_mm, |x, y| (x - c).abs() <= r && (y - c).abs() <= hl)
            }
        }
    }
}

fn lv_map() -> std::collections::BTreeMap<u8, AnatomyGroup> {
    [(1, AnatomyGroup::LeftVentricle)].into_iter().collect()
}

/// Label 1 wherever `inside` holds at the pixel centre (physical mm).
fn fill(n: usize, spacing: f64, inside: impl Fn(f64, f64) -> bool) -> SegmentationMask {
    let mut labels = vec![0u8; n * n];
    for py in 0..n {
        for px in 0..n {
            let (x, y) = ((px as f64 + 0.5) * spacing, (py as f64 + 0.5) * spacing);
            if inside(x, y) {
                labels[py * n + px] = 1;
            }
        }
    }
    SegmentationMask::new(n, n, (spacing, spacing), labels, lv_map()).expect("label 1 is mapped")
}

/// Centred ellipse with vertical semi-axis `a` and horizontal semi-axis `b` (mm).
pub fn ellipse_mask(size: usize, spacing: f64, a: f64, b: f64) -> SegmentationMask {
    let c = size as f64 * spacing / 2.0;
    fill(size, spacing, |x, y| {
        let (u, v) = ((x - c) / b, (y - c) / a);
        u * u + v * v <= 1.0
    })
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("cannot write {path}: {message}")]
    Write { path: PathBuf, message: String },
    #[error("invalid fixture parameters: {0}")]
    Params(String),
}

fn werr(path: &Path) -> impl FnOnce(String) -> FixtureError + '_ {
    move |message| FixtureError::Write { path: path.to_path_buf(), message }
}

fn write_mask(path: &Path, m: &SegmentationMask) -> Result<(), FixtureError> {
    pgm::write(path, &m.to_image()).map_err(|e| werr(path)(e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), FixtureError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| werr(path)(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| werr(path)(e.to_string()))
}

/// Write `a2c.mask.pgm`, `a4c.mask.pgm` and `shape.json` for `spec` into
/// `dir`. Both views see the same section.
pub fn write_shape_pair(dir: &Path, spec: &ShapeSpec) -> Result<(), FixtureError> {
    if !(spec.length_mm > 0.0 && spec.radius_mm > 0.0 && spec.spacing_mm > 0.0 && spec.size > 0) {
        return Err(FixtureError::Params("length, radius, spacing and size must be positive".into()));
    }
    let extent = spec.size as f64 * spec.spacing_mm;
    if spec.length_mm > extent || 2.0 * spec.radius_mm > extent {
        return Err(FixtureError::Params(format!("shape does not fit a {extent} mm field of view")));
    }
    std::fs::create_dir_all(dir).map_err(|e| werr(dir)(e.to_string()))?;
    let m = spec.mask();
    write_mask(&dir.join("a2c.mask.pgm"), &m)?;
    write_mask(&dir.join("a4c.mask.pgm"), &m)?;
    let meta = serde_json::json!({ "spec": spec, "analytic_volume_ml": spec.analytic_volume_ml() });
    write_json(&dir.join("shape.json"), &meta)
}

/// True EFs of the bundled dataset, four per grade.
pub const DATASET_EFS: [f64; 12] = [55.0, 60.0, 65.0, 70.0, 42.0, 44.0, 45.0, 47.0, 20.0, 28.0, 33.5, 37.0];

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub seed: u64,
    pub size: usize,
    pub spacing_mm: f64,
    pub efs: Vec<f64>,
    pub view_confidence: f64,
    pub segmentation_confidence: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            seed: 7,
            size: 256,
            spacing_mm: 0.5,
            efs: DATASET_EFS.to_vec(),
            view_confidence: 0.97,
            segmentation_confidence: 0.95,
        }
    }
}

/// Fake B-mode frame: dark cavity, bright wall band, speckle.
fn frame_image(mask: &SegmentationMask, rng: &mut ChaCha8Rng) -> GrayImage {
    let (w, h) = (mask.width, mask.height);
    let mut img = GrayImage::new(w, h);
    let wall = |x: usize, y: usize| {
        let x0 = x.saturating_sub(4);
        let y0 = y.saturating_sub(4);
        (y0..(y + 5).min(h)).any(|yy| (x0..(x + 5).min(w)).any(|xx| mask.get(xx, yy) != 0))
    };
    for y in 0..h {
        for x in 0..w {
            let base: i32 = if mask.get(x, y) != 0 {
                15
            } else if wall(x, y) {
                170
            } else {
                60
            };
            let v = base + rng.gen_range(-12..=12);
            img.set(x, y, v.clamp(0, 255) as u8);
        }
    }
    img
}

fn write_study(
    dir: &Path,
    view: &str,
    ed: &SegmentationMask,
    es: &SegmentationMask,
    spec: &DatasetSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(), FixtureError> {
    std::fs::create_dir_all(dir).map_err(|e| werr(dir)(e.to_string()))?;
    for (phase, m) in [("ED", ed), ("ES", es)] {
        let frame = dir.join(format!("{phase}.pgm"));
        pgm::write(&frame, &frame_image(m, rng)).map_err(|e| werr(&frame)(e.to_string()))?;
        write_mask(&dir.join(format!("{phase}.mask.pgm")), m)?;
    }
    let side = StudySidecar {
        view: Some(view.to_string()),
        confidence: Some(spec.view_confidence),
        pixel_spacing_mm: [spec.spacing_mm, spec.spacing_mm],
        frames: [("ED".to_string(), "ED.pgm".to_string()), ("ES".to_string(), "ES.pgm".to_string())]
            .into_iter()
            .collect(),
        labels: [("1".to_string(), AnatomyGroup::LeftVentricle)].into_iter().collect(),
        segmentation_confidence: spec.segmentation_confidence,
    };
    side.save(dir).map_err(|e| werr(dir)(e.to_string()))
}

/// One generated record.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedRecord {
    pub id: String,
    pub dir: PathBuf,
    pub ef_percent: f64,
    pub grade: EfGrade,
}

/// Ellipsoidal left ventricles with per-record random size. ES is ED shrunk
/// by s = (1 − EF)^(1/3) in every direction so the true EF is exact.
pub fn generate_dataset(root: &Path, spec: &DatasetSpec) -> Result<Vec<GeneratedRecord>, FixtureError> {
    if spec.size < 64 || !(spec.spacing_mm > 0.0) {
        return Err(FixtureError::Params("size must be at least 64 and spacing positive".into()));
    }
    let extent = spec.size as f64 * spec.spacing_mm;
    let mut out = Vec::new();
    for (i, &ef) in spec.efs.iter().enumerate() {
        if !(0.0..100.0).contains(&ef) {
            return Err(FixtureError::Params(format!("EF {ef} outside [0, 100)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
        // stay within 85% of the field of view
        let length = rng.gen_range(0.55..0.70) * extent;
        let r2 = rng.gen_range(0.28..0.34) * length;
        let r4 = rng.gen_range(0.28..0.34) * length;
        let s = (1.0 - ef / 100.0).cbrt();
        let id = format!("rec-{:02}", i + 1);
        let dir = root.join(&id);
        let n = spec.size;
        let a2c = (ellipse_mask(n, spec.spacing_mm, length / 2.0, r2), ellipse_mask(n, spec.spacing_mm, s * length / 2.0, s * r2));
        let a4c = (ellipse_mask(n, spec.spacing_mm, length / 2.0, r4), ellipse_mask(n, spec.spacing_mm, s * length / 2.0, s * r4));
        write_study(&dir.join("a2c"), A2C, &a2c.0, &a2c.1, spec, &mut rng)?;
        write_study(&dir.join("a4c"), A4C, &a4c.0, &a4c.1, spec, &mut rng)?;
        let grade = grade_ef(ef).expect("finite EF").grade;
        let rec = RecordFile {
            id: id.clone(),
            a2c: "a2c".into(),
            a4c: "a4c".into(),
            question: None,
            options: None,
            truth: GroundTruth::Ef { ef_percent: ef, grade },
        };
        write_json(&dir.join(RECORD_FILE), &rec)?;
        out.push(GeneratedRecord { id, dir, ef_percent: ef, grade });
    }
    Ok(out)
}

pub const QA_QUESTION: &str = "Which option best describes left ventricular systolic function?";

/// Option text for each grade in the multiple-choice dataset.
pub fn qa_option(g: EfGrade) -> String {
    let mut s = g.phrase().to_string();
    s[..1].make_ascii_uppercase();
    format!("{s} systolic function")
}

/// Multiple-choice variant: one record per grade, same studies as
/// [`generate_dataset`] would produce for EFs 60, 45 and 30.
pub fn generate_qa_dataset(root: &Path, seed: u64) -> Result<Vec<GeneratedRecord>, FixtureError> {
    let spec = DatasetSpec { seed, efs: vec![60.0, 45.0, 30.0], ..DatasetSpec::default() };
    let recs = generate_dataset(root, &spec)?;
    let options: Vec<String> = EfGrade::ALL.iter().map(|&g| qa_option(g)).collect();
    for (i, r) in recs.iter().enumerate() {
        let rec = RecordFile {
            id: format!("qa-{:02}", i + 1),
            a2c: "a2c".into(),
            a4c: "a4c".into(),
            question: Some(QA_QUESTION.to_string()),
            options: Some(options.clone()),
            truth: GroundTruth::Qa { answer_option: qa_option(r.grade), anatomy_group: AnatomyGroup::LeftVentricle },
        };
        write_json(&r.dir.join(RECORD_FILE), &rec)?;
    }
    Ok(recs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_volumes() {
        let s = ShapeSpec::spheroid(80.0, 25.0, 0.5, 256);
        assert!((s.analytic_volume_ml() - 104.72).abs() < 0.01);
        let c = ShapeSpec::cylinder(60.0, 10.0, 0.5, 256);
        assert!((c.analytic_volume_ml() - 18.85).abs() < 0.01);
        // pixel area of the section is close to the ellipse area
        let area = s.mask().count(1) as f64 * 0.25;
        assert!((area - std::f64::consts::PI * 40.0 * 25.0).abs() / area < 0.01);
    }

    #[test]
    fn qa_option_text() {
        assert_eq!(qa_option(EfGrade::MildlyReduced), "Mildly reduced systolic function");
    }
}
