//! Knowledge index file: a single JSON document with a SHA-256 checksum over
//! the compact serialization of every other field.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{KbError, KnowledgeBase, KnowledgePrimitive, RepositoryEntry};

pub const INDEX_VERSION: u32 = 1;

#[derive(Serialize)]
struct IndexBody<'a> {
    version: u32,
    d_e: usize,
    encoder_id: &'a str,
    primitives: &'a [KnowledgePrimitive],
    entries: &'a [RepositoryEntry],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexFile {
    pub version: u32,
    pub d_e: usize,
    pub encoder_id: String,
    pub primitives: Vec<KnowledgePrimitive>,
    pub entries: Vec<RepositoryEntry>,
    pub checksum: String,
}

impl IndexFile {
    fn body(&self) -> IndexBody<'_> {
        IndexBody {
            version: self.version,
            d_e: self.d_e,
            encoder_id: &self.encoder_id,
            primitives: &self.primitives,
            entries: &self.entries,
        }
    }

    pub fn compute_checksum(&self) -> String {
        let bytes = serde_json::to_vec(&self.body()).expect("index body serializes");
        format!("sha256:{}", hex::encode(Sha256::digest(&bytes)))
    }

    pub fn from_kb(kb: &KnowledgeBase) -> Self {
        let mut file = IndexFile {
            version: INDEX_VERSION,
            d_e: kb.dim(),
            encoder_id: kb.encoder_id().to_string(),
            primitives: kb.primitives().to_vec(),
            entries: kb.entries().values().cloned().collect(),
            checksum: String::new(),
        };
        file.checksum = file.compute_checksum();
        file
    }

    /// Validate and turn into a knowledge base. Invariant violations are
    /// reported before checksum failures so the offending id is named.
    pub fn into_kb(self) -> Result<KnowledgeBase, KbError> {
        if self.version != INDEX_VERSION {
            return Err(KbError::Version { expected: INDEX_VERSION, found: self.version });
        }
        let computed = self.compute_checksum();
        let mut kb = KnowledgeBase::from_primitives(self.encoder_id, self.d_e, self.primitives)?;
        for entry in self.entries {
            kb.insert_entry(entry)?;
        }
        kb.verify_index()?;
        if computed != self.checksum {
            return Err(KbError::Checksum { stored: self.checksum, computed });
        }
        Ok(kb)
    }
}

pub fn to_json(kb: &KnowledgeBase) -> String {
    let mut s = serde_json::to_string_pretty(&IndexFile::from_kb(kb)).expect("index serializes");
    s.push('\n');
    s
}

pub fn save_index(kb: &KnowledgeBase, path: &Path) -> Result<(), KbError> {
    std::fs::write(path, to_json(kb)).map_err(|source| KbError::Io { path: path.display().to_string(), source })
}

pub fn load_index(path: &Path) -> Result<KnowledgeBase, KbError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| KbError::Io { path: path.display().to_string(), source })?;
    from_json(&text)
}

pub fn from_json(text: &str) -> Result<KnowledgeBase, KbError> {
    let version = serde_json::from_str::<serde_json::Value>(text)?
        .get("version")
        .and_then(|v| v.as_u64())
        .unwrap_or(0) as u32;
    if version != INDEX_VERSION {
        return Err(KbError::Version { expected: INDEX_VERSION, found: version });
    }
    serde_json::from_str::<IndexFile>(text)?.into_kb()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{ingest_document, HashedBowEncoder, IngestConfig};
    use std::collections::BTreeSet;

    fn sample() -> KnowledgeBase {
        let enc = HashedBowEncoder::default();
        let prims = ingest_document(
            "Left ventricular size.\n\nMitral valve inflow.",
            "doc",
            &BTreeSet::new(),
            &IngestConfig { max_chunk_chars: 25 },
        );
        let mut kb = KnowledgeBase::embed_and_build(&enc, prims).unwrap();
        kb.build_all_entries(&enc, None, 8).unwrap();
        kb
    }

    #[test]
    fn round_trip_is_lossless_and_deterministic() {
        let kb = sample();
        let json = to_json(&kb);
        let back = from_json(&json).unwrap();
        assert_eq!(back, kb);
        assert_eq!(to_json(&back), json);
    }

    #[test]
    fn version_mismatch_rejected() {
        let json = to_json(&sample()).replacen("\"version\": 1", "\"version\": 7", 1);
        assert!(matches!(from_json(&json), Err(KbError::Version { found: 7, .. })));
    }
}
