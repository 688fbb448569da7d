//! Content-addressed blobs produced by tools.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::anatomy::AnatomyGroup;
use crate::digest::sha256_id;
use crate::mask::SegmentationMask;

pub const PGM_MEDIA_TYPE: &str = "image/x-portable-graymap";
/// JSON header line followed by the raw label raster.
pub const MASK_MEDIA_TYPE: &str = "application/x-echoagent-mask";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub id: String,
    pub media_type: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(media_type: &str, bytes: Vec<u8>) -> Self {
        Artifact { id: sha256_id(&bytes), media_type: media_type.to_string(), bytes }
    }

    pub fn reference(&self) -> ArtifactRef {
        ArtifactRef { id: self.id.clone(), media_type: self.media_type.clone(), size: self.bytes.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub id: String,
    pub media_type: String,
    pub size: usize,
}

#[derive(Debug, Default)]
pub struct ArtifactStore {
    blobs: Mutex<BTreeMap<String, Arc<Artifact>>>,
}

impl ArtifactStore {
    pub fn insert(&self, artifact: Artifact) -> Arc<Artifact> {
        let mut blobs = self.blobs.lock().expect("artifact store lock");
        blobs.entry(artifact.id.clone()).or_insert_with(|| Arc::new(artifact)).clone()
    }

    pub fn get(&self, id: &str) -> Option<Arc<Artifact>> {
        self.blobs.lock().expect("artifact store lock").get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.blobs.lock().expect("artifact store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Serialize, Deserialize)]
struct MaskHeader {
    width: usize,
    height: usize,
    pixel_spacing_mm: [f64; 2],
    structure_map: BTreeMap<u8, AnatomyGroup>,
}

pub fn encode_mask(mask: &SegmentationMask) -> Artifact {
    let header = MaskHeader {
        width: mask.width,
        height: mask.height,
        pixel_spacing_mm: [mask.pixel_spacing.0, mask.pixel_spacing.1],
        structure_map: mask.structure_map.clone(),
    };
    let mut bytes = serde_json::to_vec(&header).expect("mask header serializes");
    bytes.push(b'\n');
    bytes.extend_from_slice(&mask.labels);
    Artifact::new(MASK_MEDIA_TYPE, bytes)
}

pub fn decode_mask(artifact: &Artifact) -> Result<SegmentationMask, String> {
    if artifact.media_type != MASK_MEDIA_TYPE {
        return Err(format!("artifact {} is {}, not a mask", artifact.id, artifact.media_type));
    }
    let nl = artifact.bytes.iter().position(|&b| b == b'\n').ok_or("mask artifact has no header")?;
    let h: MaskHeader = serde_json::from_slice(&artifact.bytes[..nl]).map_err(|e| e.to_string())?;
    SegmentationMask::new(
        h.width,
        h.height,
        (h.pixel_spacing_mm[0], h.pixel_spacing_mm[1]),
        artifact.bytes[nl + 1..].to_vec(),
        h.structure_map,
    )
    .map_err(|e| e.to_string())
}
