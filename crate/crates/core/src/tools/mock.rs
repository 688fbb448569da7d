//! Deterministic fixture-driven perceptual and operational tools.

use std::path::Path;

use serde_json::json;

use super::study::{study_dir_of, StudySidecar};
use super::{
    capability, Artifact, BackendKind, BackendOutput, CallContext, FieldType, Layer, Schema, ToolBackend,
    ToolDescriptor, ToolError, ValueMap, PGM_MEDIA_TYPE,
};
use crate::anatomy::AnatomyGroup;
use crate::pgm::{self, GrayImage};

pub fn view_classifier_descriptor() -> ToolDescriptor {
    ToolDescriptor {
        name: "mock_view_classifier".into(),
        layer: Layer::Perceptual,
        capability: capability::CLASSIFY_VIEW.into(),
        input_schema: Schema::of(&[("study", FieldType::StudyDir, true)]),
        output_schema: Schema::of(&[("view", FieldType::String, true)]),
        applicable_anatomy: Default::default(),
        backend: BackendKind::Mock,
    }
}

/// Output schema shared by every segmenter after the fabric's post-processing.
pub fn segmentation_output_schema() -> Schema {
    Schema::of(&[
        ("mask", FieldType::Artifact, true),
        ("label", FieldType::Integer, false),
        ("empty_structure", FieldType::Bool, false),
        ("pixel_spacing_mm", FieldType::NumberPair, false),
    ])
}

pub fn segmenter_descriptor() -> ToolDescriptor {
    ToolDescriptor {
        name: "mock_segmenter".into(),
        layer: Layer::Operational,
        capability: capability::SEGMENT_STRUCTURE.into(),
        input_schema: Schema::of(&[("frame", FieldType::File, true), ("target", FieldType::String, true)]),
        output_schema: segmentation_output_schema(),
        applicable_anatomy: Default::default(),
        backend: BackendKind::Mock,
    }
}

fn str_input<'a>(tool: &str, inputs: &'a ValueMap, key: &str) -> Result<&'a str, ToolError> {
    inputs
        .get(key)
        .and_then(|v| v.as_str())
        .ok_or_else(|| ToolError::contract(tool, format!("missing string input {key:?}")))
}

fn sidecar(tool: &str, study: &Path) -> Result<StudySidecar, ToolError> {
    StudySidecar::load(study).map_err(|e| ToolError::fixture(tool, study.display(), e))
}

/// Reads the view label from the study sidecar.
pub struct MockViewClassifier;

impl ToolBackend for MockViewClassifier {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn call(&self, ctx: &mut CallContext<'_>, inputs: &ValueMap) -> Result<BackendOutput, ToolError> {
        let tool = ctx.descriptor.name.as_str();
        let dir = Path::new(str_input(tool, inputs, "study")?);
        let label = sidecar(tool, dir)?.view_label(dir).map_err(|e| ToolError::fixture(tool, dir.display(), e))?;
        Ok(BackendOutput {
            outputs: json!({ "view": label.view }).as_object().cloned().unwrap_or_default(),
            confidence: label.confidence,
            artifacts: vec![],
        })
    }
}

/// Path of the ground-truth mask co-named with `frame`: `ED.pgm` → `ED.mask.pgm`.
pub fn mask_path_for(frame: &Path) -> std::path::PathBuf {
    let stem = frame.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    frame.with_file_name(format!("{stem}.mask.pgm"))
}

/// Returns the ground-truth mask stored next to the frame.
pub struct MockSegmenter;

impl ToolBackend for MockSegmenter {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn call(&self, ctx: &mut CallContext<'_>, inputs: &ValueMap) -> Result<BackendOutput, ToolError> {
        let tool = ctx.descriptor.name.as_str();
        let frame = Path::new(str_input(tool, inputs, "frame")?);
        let path = mask_path_for(frame);
        let bytes = std::fs::read(&path).map_err(|e| ToolError::fixture(tool, path.display(), e))?;
        let study = sidecar(tool, &study_dir_of(frame))?;
        let artifact = Artifact::new(PGM_MEDIA_TYPE, bytes);
        Ok(BackendOutput {
            outputs: json!({ "mask": artifact.id }).as_object().cloned().unwrap_or_default(),
            confidence: study.segmentation_confidence,
            artifacts: vec![artifact],
        })
    }
}

/// Ignores the image and returns the same centred disc for every frame.
pub struct ConstantMaskSegmenter {
    pub radius_px: f64,
}

impl Default for ConstantMaskSegmenter {
    fn default() -> Self {
        ConstantMaskSegmenter { radius_px: 20.0 }
    }
}

pub fn constant_segmenter_descriptor() -> ToolDescriptor {
    ToolDescriptor { name: "constant_segmenter".into(), ..segmenter_descriptor() }
}

impl ToolBackend for ConstantMaskSegmenter {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn call(&self, ctx: &mut CallContext<'_>, inputs: &ValueMap) -> Result<BackendOutput, ToolError> {
        let tool = ctx.descriptor.name.as_str();
        let frame = Path::new(str_input(tool, inputs, "frame")?);
        let target: AnatomyGroup = str_input(tool, inputs, "target")?
            .parse()
            .map_err(|e| ToolError::contract(tool, format!("{e}")))?;
        let img = pgm::read(frame).map_err(|e| ToolError::fixture(tool, frame.display(), e))?;
        let study = sidecar(tool, &study_dir_of(frame))?;
        let label = study
            .structure_map()
            .ok()
            .and_then(|m| m.into_iter().find(|&(_, g)| g == target).map(|(l, _)| l))
            .unwrap_or(1);
        let mut out = GrayImage::new(img.width, img.height);
        let (cx, cy) = ((img.width as f64 - 1.0) / 2.0, (img.height as f64 - 1.0) / 2.0);
        for y in 0..img.height {
            for x in 0..img.width {
                if (x as f64 - cx).hypot(y as f64 - cy) <= self.radius_px {
                    out.set(x, y, label);
                }
            }
        }
        let artifact = Artifact::new(PGM_MEDIA_TYPE, pgm::encode(&out));
        Ok(BackendOutput {
            outputs: json!({ "mask": artifact.id }).as_object().cloned().unwrap_or_default(),
            confidence: 1.0,
            artifacts: vec![artifact],
        })
    }
}
