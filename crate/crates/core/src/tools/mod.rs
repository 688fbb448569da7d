//! Tool registry and invocation layer for the three-layer toolkit.
//!
//! Perceptual tools classify views, operational tools segment structures and
//! functional tools compute clinical parameters. Every tool is described by a
//! [`ToolDescriptor`] and backed by a wire endpoint, a fixture-driven mock or
//! native code.

mod artifact;
mod fabric;
pub mod mock;
pub mod native;
pub mod study;
pub mod wire;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::anatomy::AnatomyGroup;
use crate::transport::{Attempt, TransportError};

pub use artifact::{decode_mask, encode_mask, Artifact, ArtifactRef, ArtifactStore, MASK_MEDIA_TYPE, PGM_MEDIA_TYPE};
pub use fabric::{InvocationRecord, InvocationStatus, ToolFabric, ToolResult};
pub use study::{StudyError, StudySidecar, ViewTaxonomy, A2C, A4C, PLAX};

pub type ValueMap = Map<String, Value>;

/// Capability names the planner asks for.
pub mod capability {
    pub const CLASSIFY_VIEW: &str = "classify_view";
    pub const SEGMENT_STRUCTURE: &str = "segment_structure";
    pub const BIPLANE_VOLUME: &str = "biplane_volume";
    pub const EJECTION_FRACTION: &str = "ejection_fraction";
    pub const GRADE_EF: &str = "grade_ef";
    pub const MASK_AREA: &str = "mask_area";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Perceptual,
    Operational,
    Functional,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Perceptual => "perceptual",
            Layer::Operational => "operational",
            Layer::Functional => "functional",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Wire,
    Mock,
    Native,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    String,
    Number,
    Integer,
    Bool,
    /// Local file path; inlined as `<name>_b64` on the wire.
    File,
    /// Study directory; its frames are inlined as `<name>_frames_b64`.
    StudyDir,
    /// Content-addressed artifact id (`sha256:...`).
    Artifact,
    NumberPair,
    Any,
}

impl FieldType {
    fn accepts(self, v: &Value) -> bool {
        match self {
            FieldType::String | FieldType::File | FieldType::StudyDir => v.is_string(),
            FieldType::Number => v.as_f64().is_some_and(f64::is_finite),
            FieldType::Integer => v.is_i64() || v.is_u64(),
            FieldType::Bool => v.is_boolean(),
            FieldType::Artifact => v.as_str().is_some_and(|s| s.starts_with("sha256:")),
            FieldType::NumberPair => {
                v.as_array().is_some_and(|a| a.len() == 2 && a.iter().all(|x| x.as_f64().is_some()))
            }
            FieldType::Any => true,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: FieldType,
    #[serde(default = "yes")]
    pub required: bool,
}

/// Named, typed field list. Values may not carry fields outside the list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    pub fields: Vec<FieldSpec>,
}

impl Schema {
    /// `(name, type, required)` triples.
    pub fn of(fields: &[(&str, FieldType, bool)]) -> Self {
        Schema {
            fields: fields
                .iter()
                .map(|&(n, ty, required)| FieldSpec { name: n.to_string(), ty, required })
                .collect(),
        }
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn check_well_formed(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for f in &self.fields {
            if f.name.is_empty() {
                return Err("empty field name".into());
            }
            if !seen.insert(f.name.as_str()) {
                return Err(format!("field {:?} declared twice", f.name));
            }
        }
        Ok(())
    }

    pub fn validate(&self, value: &ValueMap) -> Result<(), String> {
        for f in &self.fields {
            match value.get(&f.name) {
                None | Some(Value::Null) if f.required => return Err(format!("missing required field {:?}", f.name)),
                None | Some(Value::Null) => {}
                Some(v) if !f.ty.accepts(v) => {
                    return Err(format!("field {:?} should be {:?}, got {v}", f.name, f.ty));
                }
                Some(_) => {}
            }
        }
        if let Some(k) = value.keys().find(|k| self.field(k).is_none()) {
            return Err(format!("unexpected field {k:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub layer: Layer,
    /// What the tool does, e.g. `segment_structure`; the planner matches on it.
    pub capability: String,
    pub input_schema: Schema,
    pub output_schema: Schema,
    /// Empty means universal.
    #[serde(default)]
    pub applicable_anatomy: BTreeSet<AnatomyGroup>,
    pub backend: BackendKind,
}

impl ToolDescriptor {
    pub fn applies_to(&self, anatomy: Option<AnatomyGroup>) -> bool {
        match anatomy {
            Some(a) => self.applicable_anatomy.is_empty() || self.applicable_anatomy.contains(&a),
            None => true,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("no tool named {0:?} is registered")]
    UnknownTool(String),
    #[error("cannot register {name:?}: {message}")]
    Registration { name: String, message: String },
    #[error("{tool}: contract violation: {message}")]
    Contract { tool: String, message: String },
    #[error("{tool}: transport failure: {source}")]
    Transport {
        tool: String,
        #[source]
        source: TransportError,
    },
    #[error("{tool}: fixture {path}: {message}")]
    Fixture { tool: String, path: String, message: String },
    #[error("{tool}: view {name:?} is not in the taxonomy")]
    Taxonomy { tool: String, name: String },
    #[error("{tool}: {message}")]
    Execution { tool: String, message: String },
}

impl ToolError {
    pub fn contract(tool: &str, message: impl Into<String>) -> Self {
        ToolError::Contract { tool: tool.to_string(), message: message.into() }
    }

    pub fn execution(tool: &str, message: impl fmt::Display) -> Self {
        ToolError::Execution { tool: tool.to_string(), message: message.to_string() }
    }

    pub fn fixture(tool: &str, path: impl fmt::Display, message: impl fmt::Display) -> Self {
        ToolError::Fixture { tool: tool.to_string(), path: path.to_string(), message: message.to_string() }
    }

    pub fn status(&self) -> InvocationStatus {
        match self {
            ToolError::UnknownTool(_) | ToolError::Registration { .. } => InvocationStatus::UnknownTool,
            ToolError::Contract { .. } => InvocationStatus::ContractError,
            ToolError::Transport { .. } => InvocationStatus::TransportError,
            ToolError::Fixture { .. } => InvocationStatus::FixtureError,
            ToolError::Taxonomy { .. } => InvocationStatus::TaxonomyError,
            ToolError::Execution { .. } => InvocationStatus::ExecutionError,
        }
    }
}

/// What a backend hands back before the fabric validates it.
#[derive(Debug, Clone, Default)]
pub struct BackendOutput {
    pub outputs: ValueMap,
    pub confidence: f64,
    pub artifacts: Vec<Artifact>,
}

pub struct CallContext<'a> {
    pub descriptor: &'a ToolDescriptor,
    pub invocation_id: &'a str,
    pub artifacts: &'a ArtifactStore,
    /// HTTP attempts made on behalf of this call.
    pub attempts: Vec<Attempt>,
}

pub trait ToolBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn call(&self, ctx: &mut CallContext<'_>, inputs: &ValueMap) -> Result<BackendOutput, ToolError>;
}

#[derive(Clone)]
pub struct RegisteredTool {
    pub descriptor: ToolDescriptor,
    backend: Arc<dyn ToolBackend>,
}

impl fmt::Debug for RegisteredTool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegisteredTool").field("descriptor", &self.descriptor).finish_non_exhaustive()
    }
}

/// Immutable once built; listing order is registration order.
#[derive(Debug, Clone, Default)]
pub struct ToolRegistry {
    tools: Vec<RegisteredTool>,
    by_name: HashMap<String, usize>,
}

impl ToolRegistry {
    pub fn builder() -> RegistryBuilder {
        RegistryBuilder::default()
    }

    pub fn list(&self) -> impl Iterator<Item = &ToolDescriptor> {
        self.tools.iter().map(|t| &t.descriptor)
    }

    pub fn list_layer(&self, layer: Layer) -> impl Iterator<Item = &ToolDescriptor> {
        self.list().filter(move |d| d.layer == layer)
    }

    pub fn get(&self, name: &str) -> Option<&RegisteredTool> {
        self.by_name.get(name).map(|&i| &self.tools[i])
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// Tools with the given layer and capability that apply to `anatomy`,
    /// sorted by name.
    pub fn matching(&self, layer: Layer, capability: &str, anatomy: Option<AnatomyGroup>) -> Vec<&ToolDescriptor> {
        let mut v: Vec<_> =
            self.list().filter(|d| d.layer == layer && d.capability == capability && d.applies_to(anatomy)).collect();
        v.sort_by(|a, b| a.name.cmp(&b.name));
        v
    }
}

#[derive(Debug, Default)]
pub struct RegistryBuilder {
    registry: ToolRegistry,
}

impl RegistryBuilder {
    pub fn register(mut self, descriptor: ToolDescriptor, backend: Arc<dyn ToolBackend>) -> Result<Self, ToolError> {
        let fail = |message: String| ToolError::Registration { name: descriptor.name.clone(), message };
        if descriptor.name.is_empty() {
            return Err(fail("tool name is empty".into()));
        }
        if self.registry.by_name.contains_key(&descriptor.name) {
            return Err(fail("a tool with this name is already registered".into()));
        }
        descriptor.input_schema.check_well_formed().map_err(|m| fail(format!("input schema: {m}")))?;
        descriptor.output_schema.check_well_formed().map_err(|m| fail(format!("output schema: {m}")))?;
        if backend.kind() != descriptor.backend {
            return Err(fail(format!("descriptor says {:?} but the backend is {:?}", descriptor.backend, backend.kind())));
        }
        self.registry.by_name.insert(descriptor.name.clone(), self.registry.tools.len());
        self.registry.tools.push(RegisteredTool { descriptor, backend });
        Ok(self)
    }

    pub fn build(self) -> ToolRegistry {
        self.registry
    }
}

/// Registry with the mock perceptual/operational tools and the native
/// functional tools.
pub fn builtin_registry() -> ToolRegistry {
    builtin_registry_with(mock::segmenter_descriptor(), Arc::new(mock::MockSegmenter))
}

/// Builtins with the segmenter swapped for another implementation.
pub fn builtin_registry_with(segmenter: ToolDescriptor, backend: Arc<dyn ToolBackend>) -> ToolRegistry {
    let mut b = ToolRegistry::builder()
        .register(mock::view_classifier_descriptor(), Arc::new(mock::MockViewClassifier))
        .and_then(|b| b.register(segmenter, backend))
        .expect("builtin tools register");
    for (d, backend) in native::native_tools() {
        b = b.register(d, backend).expect("builtin tools register");
    }
    b.build()
}

/// One entry of a registry file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolSpec {
    pub name: String,
    pub layer: Layer,
    pub capability: String,
    pub input_schema: Schema,
    pub output_schema: Schema,
    #[serde(default)]
    pub applicable_anatomy: BTreeSet<AnatomyGroup>,
    pub backend: BackendKind,
    /// Required for wire tools.
    #[serde(default)]
    pub base_url: Option<String>,
    /// Builtin implementation for mock/native tools: `view_classifier`,
    /// `segmenter`, `constant_segmenter`, `biplane_volume`,
    /// `ejection_fraction`, `grade_ef` or `mask_area`.
    #[serde(default)]
    pub builtin: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryFile {
    pub tools: Vec<ToolSpec>,
}

/// Build a registry from a registry file; wire tools share one HTTP config.
pub fn registry_from_specs(specs: &[ToolSpec], http: &crate::transport::HttpConfig) -> Result<ToolRegistry, ToolError> {
    let mut b = ToolRegistry::builder();
    for s in specs {
        let descriptor = ToolDescriptor {
            name: s.name.clone(),
            layer: s.layer,
            capability: s.capability.clone(),
            input_schema: s.input_schema.clone(),
            output_schema: s.output_schema.clone(),
            applicable_anatomy: s.applicable_anatomy.clone(),
            backend: s.backend,
        };
        let fail = |message: &str| ToolError::Registration { name: s.name.clone(), message: message.to_string() };
        let backend: Arc<dyn ToolBackend> = match s.backend {
            BackendKind::Wire => {
                let url = s.base_url.as_deref().ok_or_else(|| fail("wire tools need base_url"))?;
                Arc::new(wire::WireBackend::new(url, http.clone()))
            }
            BackendKind::Mock | BackendKind::Native => {
                let name = s.builtin.as_deref().ok_or_else(|| fail("mock and native tools need builtin"))?;
                builtin_backend(name).ok_or_else(|| fail(&format!("unknown builtin {name:?}")))?
            }
        };
        b = b.register(descriptor, backend)?;
    }
    Ok(b.build())
}

fn builtin_backend(name: &str) -> Option<Arc<dyn ToolBackend>> {
    Some(match name {
        "view_classifier" => Arc::new(mock::MockViewClassifier),
        "segmenter" => Arc::new(mock::MockSegmenter),
        "constant_segmenter" => Arc::new(mock::ConstantMaskSegmenter::default()),
        "biplane_volume" => Arc::new(native::BiplaneVolumeTool),
        "ejection_fraction" => Arc::new(native::EjectionFractionTool),
        "grade_ef" => Arc::new(native::GradeEfTool),
        "mask_area" => Arc::new(native::MaskAreaTool),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn obj(v: Value) -> ValueMap {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn schema_validation() {
        let s = Schema::of(&[("a", FieldType::Number, true), ("b", FieldType::String, false)]);
        assert!(s.validate(&obj(json!({"a": 1.5}))).is_ok());
        assert!(s.validate(&obj(json!({"a": 1, "b": "x"}))).is_ok());
        assert!(s.validate(&obj(json!({"b": "x"}))).unwrap_err().contains("missing"));
        assert!(s.validate(&obj(json!({"a": "1"}))).is_err());
        assert!(s.validate(&obj(json!({"a": 1, "c": 2}))).unwrap_err().contains("unexpected"));
        assert!(Schema::of(&[("a", FieldType::Any, true), ("a", FieldType::Any, true)]).check_well_formed().is_err());
    }

    #[test]
    fn duplicate_registration_names_the_clash() {
        let err = ToolRegistry::builder()
            .register(native::grade_descriptor(), Arc::new(native::GradeEfTool))
            .unwrap()
            .register(native::grade_descriptor(), Arc::new(native::GradeEfTool))
            .unwrap_err();
        assert!(err.to_string().contains("grade_ef"), "{err}");
    }

    #[test]
    fn builtin_layers_partition() {
        let r = builtin_registry();
        let total: usize = [Layer::Perceptual, Layer::Operational, Layer::Functional]
            .iter()
            .map(|&l| r.list_layer(l).count())
            .sum();
        assert_eq!(total, r.len());
        assert_eq!(r.list_layer(Layer::Perceptual).count(), 1);
        assert_eq!(r.list_layer(Layer::Operational).count(), 1);
    }

    #[test]
    fn three_layers_one_each() {
        let r = ToolRegistry::builder()
            .register(mock::view_classifier_descriptor(), Arc::new(mock::MockViewClassifier))
            .unwrap()
            .register(mock::segmenter_descriptor(), Arc::new(mock::MockSegmenter))
            .unwrap()
            .register(native::grade_descriptor(), Arc::new(native::GradeEfTool))
            .unwrap()
            .build();
        for l in [Layer::Perceptual, Layer::Operational, Layer::Functional] {
            assert_eq!(r.list_layer(l).count(), 1);
        }
        let names: Vec<_> = r.list().map(|d| d.name.as_str()).collect();
        assert_eq!(names, ["mock_view_classifier", "mock_segmenter", "grade_ef"]);
    }

    #[test]
    fn backend_kind_must_match() {
        let mut d = native::grade_descriptor();
        d.backend = BackendKind::Wire;
        assert!(ToolRegistry::builder().register(d, Arc::new(native::GradeEfTool)).is_err());
    }

    #[test]
    fn registry_file_parses() {
        let text = r#"{"tools":[
            {"name":"grade","layer":"functional","capability":"grade_ef",
             "input_schema":[{"name":"ef_percent","type":"number"}],
             "output_schema":[{"name":"grade","type":"string"},{"name":"ef_percent","type":"number"}],
             "backend":"native","builtin":"grade_ef"},
            {"name":"remote_seg","layer":"operational","capability":"segment_structure",
             "input_schema":[{"name":"frame","type":"file"}],"output_schema":[{"name":"mask","type":"artifact"}],
             "backend":"wire","base_url":"http://127.0.0.1:1"}]}"#;
        let f: RegistryFile = serde_json::from_str(text).unwrap();
        let r = registry_from_specs(&f.tools, &Default::default()).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r.get("remote_seg").unwrap().descriptor.backend, BackendKind::Wire);
    }
}
