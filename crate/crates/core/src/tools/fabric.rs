//! Validated invocation with an append-only log.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::study::{study_dir_of, StudySidecar};
use super::{
    capability, decode_mask, encode_mask, ArtifactRef, ArtifactStore, CallContext, ToolDescriptor, ToolError,
    ToolRegistry, ValueMap, ViewTaxonomy, MASK_MEDIA_TYPE, PGM_MEDIA_TYPE,
};
use crate::anatomy::AnatomyGroup;
use crate::digest::digest_json;
use crate::mask::SegmentationMask;
use crate::pgm;
use crate::transport::Attempt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool_name: String,
    pub invocation_id: String,
    pub outputs: ValueMap,
    pub confidence: f64,
    pub artifacts: Vec<ArtifactRef>,
    pub latency_ms: u64,
}

impl ToolResult {
    pub fn digest(&self) -> String {
        digest_json(&self.outputs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvocationStatus {
    Ok,
    UnknownTool,
    ContractError,
    TransportError,
    FixtureError,
    TaxonomyError,
    ExecutionError,
}

/// One log line per `invoke` call, whatever its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub invocation_id: String,
    pub tool: String,
    pub status: InvocationStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outputs_digest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub attempts: Vec<Attempt>,
    pub latency_ms: u64,
}

pub struct ToolFabric {
    registry: Arc<ToolRegistry>,
    taxonomy: Arc<ViewTaxonomy>,
    artifacts: ArtifactStore,
    log: Mutex<Vec<InvocationRecord>>,
    next_id: AtomicU64,
}

impl ToolFabric {
    pub fn new(registry: Arc<ToolRegistry>, taxonomy: Arc<ViewTaxonomy>) -> Self {
        ToolFabric {
            registry,
            taxonomy,
            artifacts: ArtifactStore::default(),
            log: Mutex::new(Vec::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    pub fn taxonomy(&self) -> &ViewTaxonomy {
        &self.taxonomy
    }

    pub fn artifacts(&self) -> &ArtifactStore {
        &self.artifacts
    }

    pub fn log(&self) -> Vec<InvocationRecord> {
        self.log.lock().expect("invocation log lock").clone()
    }

    /// Decoded mask artifact.
    pub fn mask(&self, id: &str) -> Option<SegmentationMask> {
        self.artifacts.get(id).and_then(|a| decode_mask(&a).ok())
    }

    pub fn invoke(&self, tool: &str, inputs: &ValueMap) -> Result<ToolResult, ToolError> {
        let invocation_id = format!("inv-{:06}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let start = Instant::now();
        let mut attempts = Vec::new();
        let result = self.invoke_inner(tool, &invocation_id, inputs, &mut attempts);
        let latency_ms = start.elapsed().as_millis() as u64;
        let record = match &result {
            Ok(r) => InvocationRecord {
                invocation_id: invocation_id.clone(),
                tool: tool.to_string(),
                status: InvocationStatus::Ok,
                confidence: Some(r.confidence),
                outputs_digest: Some(r.digest()),
                error: None,
                attempts,
                latency_ms,
            },
            Err(e) => InvocationRecord {
                invocation_id: invocation_id.clone(),
                tool: tool.to_string(),
                status: e.status(),
                confidence: None,
                outputs_digest: None,
                error: Some(e.to_string()),
                attempts,
                latency_ms,
            },
        };
        tracing::debug!(tool, id = %invocation_id, status = ?record.status, "invocation");
        self.log.lock().expect("invocation log lock").push(record);
        result.map(|mut r| {
            r.latency_ms = latency_ms;
            r
        })
    }

    fn invoke_inner(
        &self,
        tool: &str,
        invocation_id: &str,
        inputs: &ValueMap,
        attempts: &mut Vec<Attempt>,
    ) -> Result<ToolResult, ToolError> {
        let registered = self.registry.get(tool).ok_or_else(|| ToolError::UnknownTool(tool.to_string()))?;
        let d = &registered.descriptor;
        d.input_schema.validate(inputs).map_err(|m| ToolError::contract(tool, format!("input: {m}")))?;
        let mut ctx = CallContext { descriptor: d, invocation_id, artifacts: &self.artifacts, attempts: Vec::new() };
        let out = registered.backend.call(&mut ctx, inputs);
        attempts.append(&mut ctx.attempts);
        let out = out?;
        let mut refs: Vec<ArtifactRef> = out.artifacts.iter().map(|a| a.reference()).collect();
        for a in out.artifacts {
            self.artifacts.insert(a);
        }
        let mut outputs = out.outputs;
        let mut confidence = out.confidence;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(ToolError::contract(tool, format!("confidence {confidence} outside [0, 1]")));
        }
        match d.capability.as_str() {
            capability::CLASSIFY_VIEW => self.check_view(tool, &outputs)?,
            capability::SEGMENT_STRUCTURE => {
                let (o, c, r) = self.canonical_mask(d, inputs, outputs, confidence)?;
                outputs = o;
                confidence = c;
                refs = vec![r];
            }
            _ => {}
        }
        d.output_schema.validate(&outputs).map_err(|m| ToolError::contract(tool, format!("output: {m}")))?;
        Ok(ToolResult {
            tool_name: tool.to_string(),
            invocation_id: invocation_id.to_string(),
            outputs,
            confidence,
            artifacts: refs,
            latency_ms: 0,
        })
    }

    fn check_view(&self, tool: &str, outputs: &ValueMap) -> Result<(), ToolError> {
        let view = outputs
            .get("view")
            .and_then(Value::as_str)
            .ok_or_else(|| ToolError::contract(tool, "output: missing view"))?;
        if !self.taxonomy.contains(view) {
            return Err(ToolError::Taxonomy { tool: tool.to_string(), name: view.to_string() });
        }
        Ok(())
    }

    /// Rebuild a segmenter's mask with the frame's spacing and label map,
    /// check its size against the frame and flag an absent target.
    fn canonical_mask(
        &self,
        d: &ToolDescriptor,
        inputs: &ValueMap,
        outputs: ValueMap,
        confidence: f64,
    ) -> Result<(ValueMap, f64, ArtifactRef), ToolError> {
        let tool = d.name.as_str();
        let frame_str = inputs.get("frame").and_then(Value::as_str).unwrap_or_default();
        let frame = Path::new(frame_str);
        let target: AnatomyGroup = inputs
            .get("target")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .parse()
            .map_err(|e| ToolError::contract(tool, format!("input: {e}")))?;
        let mask_id = outputs
            .get("mask")
            .and_then(Value::as_str)
            .ok_or_else(|| ToolError::contract(tool, "output: missing mask"))?;
        let art = self
            .artifacts
            .get(mask_id)
            .ok_or_else(|| ToolError::contract(tool, format!("output: mask {mask_id} was not returned as an artifact")))?;
        let study_dir = study_dir_of(frame);
        let study = StudySidecar::load(&study_dir).map_err(|e| ToolError::fixture(tool, study_dir.display(), e))?;
        let structure_map = study.structure_map().map_err(|m| ToolError::fixture(tool, study_dir.display(), m))?;
        let frame_img = pgm::read(frame).map_err(|e| ToolError::fixture(tool, frame.display(), e))?;
        let (width, height, labels) = match art.media_type.as_str() {
            PGM_MEDIA_TYPE => {
                let img = pgm::decode(&art.bytes).map_err(|e| ToolError::contract(tool, format!("mask: {e}")))?;
                (img.width, img.height, img.pixels)
            }
            MASK_MEDIA_TYPE => {
                let m = decode_mask(&art).map_err(|e| ToolError::contract(tool, format!("mask: {e}")))?;
                (m.width, m.height, m.labels)
            }
            other => return Err(ToolError::contract(tool, format!("mask has unsupported media type {other}"))),
        };
        if (width, height) != (frame_img.width, frame_img.height) {
            return Err(ToolError::contract(
                tool,
                format!("mask is {width}x{height} but frame is {}x{}", frame_img.width, frame_img.height),
            ));
        }
        let mask = SegmentationMask::new(width, height, study.spacing(), labels, structure_map)
            .map_err(|e| ToolError::contract(tool, format!("mask: {e}")))?;
        let label = mask.label_for(target);
        let empty = label.map_or(true, |l| mask.count(l) == 0);
        let canonical = self.artifacts.insert(encode_mask(&mask));
        let mut o = json!({
            "mask": canonical.id,
            "empty_structure": empty,
            "pixel_spacing_mm": [mask.pixel_spacing.0, mask.pixel_spacing.1],
        });
        if let Some(l) = label {
            o["label"] = json!(l);
        }
        let confidence = if empty { 0.0 } else { confidence };
        Ok((o.as_object().cloned().unwrap_or_default(), confidence, canonical.reference()))
    }
}
