//! Agentic echocardiography interpretation engine.
//!
//! Guideline text is indexed per anatomy group ([`kb`]), a layered tool
//! registry runs view classification, segmentation and quantification over
//! study directories ([`tools`], [`quant`]), and the [`hub`] grows an
//! evidence graph until one hypothesis dominates. [`eval`] scores the whole
//! loop on synthetic datasets from [`fixtures`].

pub mod anatomy;
pub mod digest;
pub mod eval;
pub mod fixtures;
pub mod hub;
pub mod kb;
pub mod mask;
pub mod pgm;
pub mod quant;
pub mod tools;
pub mod transport;

pub use anatomy::AnatomyGroup;
pub use eval::{load_dataset, run_benchmark, BenchConfig, BenchEnv, BenchmarkReport, Dataset, StudyRecord};
pub use hub::{Conclusion, DiagnosticQuery, Hub, HubConfig, HubError};
pub use kb::{Encoder, HashedBowEncoder, KbError, KnowledgeBase};
pub use mask::SegmentationMask;
pub use quant::{biplane_volume, ejection_fraction, grade_ef, EfGrade};
pub use tools::{builtin_registry, ToolError, ToolFabric, ToolRegistry, ViewTaxonomy};
pub use transport::HttpConfig;
