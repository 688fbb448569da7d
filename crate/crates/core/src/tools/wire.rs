//! HTTP adapter for external model endpoints.
//!
//! `POST {base}/invoke` with `{tool, invocation_id, inputs}`; the reply is
//! `{outputs, confidence, artifacts: [{id, media_type, bytes_b64}]}`.
//! File inputs are sent inline as `<field>_b64`, study directories as
//! `<field>_frames_b64` (phase → bytes) and artifacts as `<field>_b64`.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{json, Map, Value};

use super::study::StudySidecar;
use super::{Artifact, BackendKind, BackendOutput, CallContext, FieldType, ToolBackend, ToolError, ValueMap};
use crate::digest::sha256_id;
use crate::transport::{HttpConfig, JsonClient, TransportError};

pub struct WireBackend {
    base_url: String,
    client: JsonClient,
}

impl WireBackend {
    pub fn new(base_url: &str, http: HttpConfig) -> Self {
        WireBackend { base_url: base_url.trim_end_matches('/').to_string(), client: JsonClient::new(http) }
    }

    pub fn url(&self) -> String {
        format!("{}/invoke", self.base_url)
    }
}

fn inline_inputs(ctx: &CallContext<'_>, inputs: &ValueMap) -> Result<ValueMap, ToolError> {
    let tool = ctx.descriptor.name.as_str();
    let mut out = inputs.clone();
    for f in &ctx.descriptor.input_schema.fields {
        let Some(s) = inputs.get(&f.name).and_then(|v| v.as_str()) else { continue };
        match f.ty {
            FieldType::File => {
                let bytes = std::fs::read(s).map_err(|e| ToolError::fixture(tool, s, e))?;
                out.insert(format!("{}_b64", f.name), Value::String(B64.encode(bytes)));
            }
            FieldType::StudyDir => {
                let dir = Path::new(s);
                let study = StudySidecar::load(dir).map_err(|e| ToolError::fixture(tool, s, e))?;
                let mut frames = Map::new();
                for (phase, rel) in &study.frames {
                    let p = dir.join(rel);
                    let bytes = std::fs::read(&p).map_err(|e| ToolError::fixture(tool, p.display(), e))?;
                    frames.insert(phase.clone(), Value::String(B64.encode(bytes)));
                }
                out.insert(format!("{}_frames_b64", f.name), Value::Object(frames));
            }
            FieldType::Artifact => {
                if let Some(a) = ctx.artifacts.get(s) {
                    out.insert(format!("{}_b64", f.name), Value::String(B64.encode(&a.bytes)));
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Checks the reply shape; any deviation is a contract error.
pub fn parse_reply(tool: &str, reply: &Value) -> Result<BackendOutput, ToolError> {
    let bad = |m: &str| ToolError::contract(tool, format!("invalid reply: {m}"));
    let obj = reply.as_object().ok_or_else(|| bad("body is not an object"))?;
    let outputs = obj.get("outputs").and_then(Value::as_object).ok_or_else(|| bad("outputs must be an object"))?;
    let confidence = obj.get("confidence").and_then(Value::as_f64).ok_or_else(|| bad("confidence must be a number"))?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(bad(&format!("confidence {confidence} outside [0, 1]")));
    }
    let mut artifacts = Vec::new();
    for a in obj.get("artifacts").and_then(Value::as_array).map(Vec::as_slice).unwrap_or_default() {
        let field = |k: &str| a.get(k).and_then(Value::as_str).ok_or_else(|| bad(&format!("artifact missing {k}")));
        let (id, media_type) = (field("id")?, field("media_type")?);
        let bytes = B64.decode(field("bytes_b64")?).map_err(|e| bad(&format!("artifact {id}: {e}")))?;
        if sha256_id(&bytes) != id {
            return Err(bad(&format!("artifact id {id} does not match its content")));
        }
        artifacts.push(Artifact::new(media_type, bytes));
    }
    Ok(BackendOutput { outputs: outputs.clone(), confidence, artifacts })
}

impl ToolBackend for WireBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Wire
    }

    fn call(&self, ctx: &mut CallContext<'_>, inputs: &ValueMap) -> Result<BackendOutput, ToolError> {
        let tool = ctx.descriptor.name.clone();
        let body = json!({
            "tool": tool,
            "invocation_id": ctx.invocation_id,
            "inputs": inline_inputs(ctx, inputs)?,
        });
        let (result, attempts) = self.client.post_json(&self.url(), &body);
        ctx.attempts.extend(attempts);
        match result {
            Ok(reply) => parse_reply(&tool, &reply),
            Err(TransportError::Decode { message, .. }) => {
                Err(ToolError::contract(&tool, format!("reply is not JSON: {message}")))
            }
            Err(source) => Err(ToolError::Transport { tool, source }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reply_validation() {
        let ok = json!({"outputs": {"view": "apical-2-chamber"}, "confidence": 0.9, "artifacts": []});
        assert_eq!(parse_reply("t", &ok).unwrap().confidence, 0.9);
        assert!(parse_reply("t", &json!({"outputs": {}, "confidence": 1.5})).is_err());
        assert!(parse_reply("t", &json!({"confidence": 0.5})).is_err());
        let bytes = b"mask".to_vec();
        let good = json!({"outputs": {}, "confidence": 0.5,
            "artifacts": [{"id": sha256_id(&bytes), "media_type": "x", "bytes_b64": B64.encode(&bytes)}]});
        assert_eq!(parse_reply("t", &good).unwrap().artifacts.len(), 1);
        let forged = json!({"outputs": {}, "confidence": 0.5,
            "artifacts": [{"id": "sha256:00", "media_type": "x", "bytes_b64": B64.encode(&bytes)}]});
        assert!(matches!(parse_reply("t", &forged), Err(ToolError::Contract { .. })));
    }
}
