//! Corpus directories: `.txt`/`.md` documents with optional sidecar `.tags`
//! files (one anatomy name per line, `#` comments allowed).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::anatomy::AnatomyGroup;

use super::{ingest_bytes, Encoder, IngestConfig, KbError, KnowledgeBase, KnowledgePrimitive, Summarizer};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: unknown anatomy {name:?}")]
    BadTag { path: PathBuf, line: usize, name: String },
    #[error(transparent)]
    Kb(#[from] KbError),
}

#[derive(Debug, Clone)]
pub struct CorpusDocument {
    pub source_id: String,
    pub path: PathBuf,
    pub bytes: Vec<u8>,
    pub explicit_tags: BTreeSet<AnatomyGroup>,
}

fn read_tags(path: &Path) -> Result<BTreeSet<AnatomyGroup>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.into(), source })?;
    let mut tags = BTreeSet::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let g = line
            .parse()
            .map_err(|_| CorpusError::BadTag { path: path.into(), line: n + 1, name: line.to_string() })?;
        tags.insert(g);
    }
    Ok(tags)
}

/// Documents in `dir`, sorted by file name.
pub fn read_corpus(dir: &Path) -> Result<Vec<CorpusDocument>, CorpusError> {
    let io = |source| CorpusError::Io { path: dir.into(), source };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .collect::<Result<Vec<_>, _>>()
        .map_err(io)?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("txt" | "md")))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let bytes = std::fs::read(&path).map_err(|source| CorpusError::Io { path: path.clone(), source })?;
            let sidecar = path.with_extension("tags");
            let explicit_tags = if sidecar.is_file() { read_tags(&sidecar)? } else { BTreeSet::new() };
            let source_id = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            Ok(CorpusDocument { source_id, path, bytes, explicit_tags })
        })
        .collect()
}

/// Ingest every document into unembedded primitives.
pub fn ingest_corpus(docs: &[CorpusDocument], config: &IngestConfig) -> Result<Vec<KnowledgePrimitive>, KbError> {
    let mut out = Vec::new();
    for d in docs {
        out.extend(ingest_bytes(&d.bytes, &d.source_id, &d.explicit_tags, config)?);
    }
    Ok(out)
}

/// ingest → embed → index → entries, for every anatomy group.
pub fn build_knowledge_base(
    docs: &[CorpusDocument],
    encoder: &dyn Encoder,
    summarizer: Option<&dyn Summarizer>,
    config: &IngestConfig,
    k: usize,
) -> Result<KnowledgeBase, KbError> {
    let prims = ingest_corpus(docs, config)?;
    let mut kb = KnowledgeBase::embed_and_build(encoder, prims)?;
    kb.build_all_entries(encoder, summarizer, k)?;
    Ok(kb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_docs_and_sidecars_in_order() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b.md"), "Pericardial effusion.").unwrap();
        std::fs::write(dir.path().join("a.txt"), "General text.").unwrap();
        std::fs::write(dir.path().join("a.tags"), "# tags\naorta\n").unwrap();
        std::fs::write(dir.path().join("ignored.pdf"), "x").unwrap();
        let docs = read_corpus(dir.path()).unwrap();
        let ids: Vec<_> = docs.iter().map(|d| d.source_id.as_str()).collect();
        assert_eq!(ids, ["a.txt", "b.md"]);
        assert!(docs[0].explicit_tags.contains(&AnatomyGroup::Aorta));
    }

    #[test]
    fn bad_tag_names_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.md"), "x").unwrap();
        std::fs::write(dir.path().join("a.tags"), "aorta\nspleen\n").unwrap();
        match read_corpus(dir.path()) {
            Err(CorpusError::BadTag { line: 2, name, .. }) => assert_eq!(name, "spleen"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
