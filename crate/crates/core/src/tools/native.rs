//! Functional-layer tools backed by `quant`.

use std::sync::Arc;

use serde_json::json;

use super::{
    capability, decode_mask, BackendKind, BackendOutput, CallContext, FieldType, Layer, Schema, ToolBackend,
    ToolDescriptor, ToolError, ValueMap,
};
use crate::anatomy::AnatomyGroup;
use crate::mask::SegmentationMask;
use crate::quant;

/// Confidence reported for an ESV > EDV ejection fraction.
pub const ANOMALOUS_EF_CONFIDENCE: f64 = 0.2;

fn descriptor(name: &str, capability: &str, input: Schema, output: Schema) -> ToolDescriptor {
    ToolDescriptor {
        name: name.into(),
        layer: Layer::Functional,
        capability: capability.into(),
        input_schema: input,
        output_schema: output,
        applicable_anatomy: Default::default(),
        backend: BackendKind::Native,
    }
}

pub fn biplane_descriptor() -> ToolDescriptor {
    ToolDescriptor {
        applicable_anatomy: [AnatomyGroup::LeftVentricle].into_iter().collect(),
        ..descriptor(
            "biplane_volume",
            capability::BIPLANE_VOLUME,
            Schema::of(&[
                ("a2c_mask", FieldType::Artifact, true),
                ("a4c_mask", FieldType::Artifact, true),
                ("target", FieldType::String, true),
                ("n_disks", FieldType::Integer, false),
            ]),
            Schema::of(&[("volume_ml", FieldType::Number, true), ("length_mm", FieldType::Number, true)]),
        )
    }
}

pub fn ef_descriptor() -> ToolDescriptor {
    ToolDescriptor {
        applicable_anatomy: [AnatomyGroup::LeftVentricle].into_iter().collect(),
        ..descriptor(
            "ejection_fraction",
            capability::EJECTION_FRACTION,
            Schema::of(&[("edv_ml", FieldType::Number, true), ("esv_ml", FieldType::Number, true)]),
            Schema::of(&[("ef_percent", FieldType::Number, true), ("anomalous", FieldType::Bool, true)]),
        )
    }
}

pub fn grade_descriptor() -> ToolDescriptor {
    ToolDescriptor {
        applicable_anatomy: [AnatomyGroup::LeftVentricle].into_iter().collect(),
        ..descriptor(
            "grade_ef",
            capability::GRADE_EF,
            Schema::of(&[("ef_percent", FieldType::Number, true)]),
            Schema::of(&[("grade", FieldType::String, true), ("ef_percent", FieldType::Number, true)]),
        )
    }
}

pub fn mask_area_descriptor() -> ToolDescriptor {
    descriptor(
        "mask_area",
        capability::MASK_AREA,
        Schema::of(&[("mask", FieldType::Artifact, true), ("target", FieldType::String, true)]),
        Schema::of(&[("area_mm2", FieldType::Number, true), ("empty_structure", FieldType::Bool, true)]),
    )
}

pub fn native_tools() -> Vec<(ToolDescriptor, Arc<dyn ToolBackend>)> {
    vec![
        (biplane_descriptor(), Arc::new(BiplaneVolumeTool)),
        (ef_descriptor(), Arc::new(EjectionFractionTool)),
        (grade_descriptor(), Arc::new(GradeEfTool)),
        (mask_area_descriptor(), Arc::new(MaskAreaTool)),
    ]
}

fn output(v: serde_json::Value, confidence: f64) -> BackendOutput {
    BackendOutput { outputs: v.as_object().cloned().unwrap_or_default(), confidence, artifacts: vec![] }
}

fn number(tool: &str, inputs: &ValueMap, key: &str) -> Result<f64, ToolError> {
    inputs.get(key).and_then(|v| v.as_f64()).ok_or_else(|| ToolError::contract(tool, format!("missing number {key:?}")))
}

fn mask(ctx: &CallContext<'_>, inputs: &ValueMap, key: &str) -> Result<SegmentationMask, ToolError> {
    let tool = ctx.descriptor.name.as_str();
    let id = inputs.get(key).and_then(|v| v.as_str()).unwrap_or_default();
    let art = ctx.artifacts.get(id).ok_or_else(|| ToolError::contract(tool, format!("unknown artifact {id:?}")))?;
    decode_mask(&art).map_err(|m| ToolError::contract(tool, m))
}

fn target(tool: &str, inputs: &ValueMap) -> Result<AnatomyGroup, ToolError> {
    inputs
        .get("target")
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .parse()
        .map_err(|e| ToolError::contract(tool, format!("{e}")))
}

pub struct BiplaneVolumeTool;

impl ToolBackend for BiplaneVolumeTool {
    fn kind(&self) -> BackendKind {
        BackendKind::Native
    }

    fn call(&self, ctx: &mut CallContext<'_>, inputs: &ValueMap) -> Result<BackendOutput, ToolError> {
        let tool = ctx.descriptor.name.as_str();
        let anatomy = target(tool, inputs)?;
        let a2c = mask(ctx, inputs, "a2c_mask")?;
        let a4c = mask(ctx, inputs, "a4c_mask")?;
        let n = inputs.get("n_disks").and_then(|v| v.as_u64()).unwrap_or(quant::DEFAULT_N_DISKS as u64) as usize;
        let missing = |view: &str| ToolError::execution(tool, format!("{view} mask has no {anatomy} label"));
        let l2 = a2c.label_for(anatomy).ok_or_else(|| missing("A2C"))?;
        let l4 = a4c.label_for(anatomy).ok_or_else(|| missing("A4C"))?;
        let v = quant::biplane_volume_detailed(&a2c, l2, &a4c, l4, n).map_err(|e| ToolError::execution(tool, e))?;
        Ok(output(json!({ "volume_ml": v.volume_ml, "length_mm": v.length_mm }), 1.0))
    }
}

pub struct EjectionFractionTool;

impl ToolBackend for EjectionFractionTool {
    fn kind(&self) -> BackendKind {
        BackendKind::Native
    }

    fn call(&self, ctx: &mut CallContext<'_>, inputs: &ValueMap) -> Result<BackendOutput, ToolError> {
        let tool = ctx.descriptor.name.as_str();
        let ef = quant::ejection_fraction(number(tool, inputs, "edv_ml")?, number(tool, inputs, "esv_ml")?)
            .map_err(|e| ToolError::execution(tool, e))?;
        let confidence = if ef.anomalous { ANOMALOUS_EF_CONFIDENCE } else { 1.0 };
        Ok(output(json!({ "ef_percent": ef.ef_percent, "anomalous": ef.anomalous }), confidence))
    }
}

pub struct GradeEfTool;

impl ToolBackend for GradeEfTool {
    fn kind(&self) -> BackendKind {
        BackendKind::Native
    }

    fn call(&self, ctx: &mut CallContext<'_>, inputs: &ValueMap) -> Result<BackendOutput, ToolError> {
        let tool = ctx.descriptor.name.as_str();
        let g = quant::grade_ef(number(tool, inputs, "ef_percent")?).map_err(|e| ToolError::execution(tool, e))?;
        Ok(output(json!({ "grade": g.grade.name(), "ef_percent": g.ef_percent }), 1.0))
    }
}

pub struct MaskAreaTool;

impl ToolBackend for MaskAreaTool {
    fn kind(&self) -> BackendKind {
        BackendKind::Native
    }

    fn call(&self, ctx: &mut CallContext<'_>, inputs: &ValueMap) -> Result<BackendOutput, ToolError> {
        let tool = ctx.descriptor.name.as_str();
        let anatomy = target(tool, inputs)?;
        let m = mask(ctx, inputs, "mask")?;
        let a = match m.label_for(anatomy) {
            Some(l) => quant::mask_area(&m, l),
            None => quant::AreaMeasurement { area_mm2: 0.0, empty_structure: true },
        };
        let confidence = if a.empty_structure { 0.0 } else { 1.0 };
        Ok(output(json!({ "area_mm2": a.area_mm2, "empty_structure": a.empty_structure }), confidence))
    }
}
