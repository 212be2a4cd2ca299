use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{
    extract_document, preprocess, segment, Chunk, ChunkOrigin, CleanupRules, DocumentFormat, IngestError,
    RawDocument, RawSection, Result, SegmentStrategy, SegmenterConfig,
};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes one chunk per line, in order.
pub fn write_corpus(path: &Path, chunks: &[Chunk]) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for chunk in chunks {
        let line = serde_json::to_string(chunk).expect("chunk serializes");
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_corpus(path: &Path) -> Result<Vec<Chunk>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut chunks = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let chunk = serde_json::from_str(&line).map_err(|source| IngestError::CorpusLine { line: i + 1, source })?;
        chunks.push(chunk);
    }
    Ok(chunks)
}

/// Extracts, cleans, and segments every `.docx`, `.txt`, and `.md` file in
/// `dir`. Files are processed in name order; the file stem is the spec id.
pub fn ingest_dir(dir: &Path, cfg: &SegmenterConfig, rules: &CleanupRules) -> Result<Vec<Chunk>> {
    let docs = load_documents(dir, rules)?;
    Ok(docs.iter().flat_map(|d| segment(d, cfg)).collect())
}

/// Extracts and cleans every supported file in `dir`, in name order.
pub fn load_documents(dir: &Path, rules: &CleanupRules) -> Result<Vec<RawDocument>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();

    let mut seen = BTreeSet::new();
    let mut docs = Vec::new();
    for path in paths {
        let Some(format) = path
            .extension()
            .and_then(|e| e.to_str())
            .and_then(DocumentFormat::from_extension)
        else {
            continue;
        };
        let spec_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        if !seen.insert(spec_id.clone()) {
            return Err(IngestError::DuplicateSpec(spec_id));
        }
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let doc = match extract_document(&bytes, format, &spec_id) {
            Ok(doc) => doc,
            Err(IngestError::EmptyDocument) => {
                tracing::warn!(file = %path.display(), "skipping empty document");
                continue;
            }
            Err(e) => return Err(e),
        };
        docs.push(preprocess(doc, rules));
    }
    Ok(docs)
}

/// Flat list of expert ids allowed to resolve requests.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExpertRegistry {
    ids: BTreeSet<String>,
}

impl ExpertRegistry {
    pub fn new<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            ids: ids.into_iter().map(Into::into).collect(),
        }
    }

    /// One id per line; blank lines and `#` comments are ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Ok(Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        ))
    }

    pub fn contains(&self, expert_id: &str) -> bool {
        self.ids.contains(expert_id)
    }
}

pub const EXPERT_SECTION_TITLE: &str = "Expert contribution";

/// Turns an expert's resolution text into chunks attributed to that expert.
/// The text goes through the same cleanup and section-aware packing as
/// document text, so a long contribution yields several chunks.
pub fn add_expert_chunk(
    text: &str,
    expert_id: &str,
    registry: &ExpertRegistry,
    cfg: &SegmenterConfig,
) -> Result<Vec<Chunk>> {
    if !registry.contains(expert_id) {
        return Err(IngestError::UnregisteredExpert(expert_id.to_string()));
    }
    let paragraphs: Vec<String> = text
        .replace("\r\n", "\n")
        .split("\n\n")
        .map(str::to_string)
        .collect();
    let doc = preprocess(
        RawDocument {
            spec_id: expert_id.to_string(),
            title: EXPERT_SECTION_TITLE.into(),
            sections: vec![RawSection {
                section_title: EXPERT_SECTION_TITLE.into(),
                paragraphs,
            }],
        },
        &CleanupRules::default(),
    );
    if doc.sections[0].paragraphs.is_empty() {
        return Err(IngestError::EmptyContribution);
    }
    let cfg = SegmenterConfig {
        strategy: SegmentStrategy::SectionAware,
        ..cfg.clone()
    };
    let digest = fnv1a(doc.sections[0].text().as_bytes());
    let source = format!("Expert: {expert_id}");
    Ok(segment(&doc, &cfg)
        .into_iter()
        .enumerate()
        .map(|(part, c)| {
            Chunk::new(
                format!("expert/{expert_id}/{digest:016x}/{part:03}"),
                c.body(),
                expert_id,
                EXPERT_SECTION_TITLE,
                source.clone(),
                ChunkOrigin::Expert,
            )
        })
        .collect())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    crate::embed::fnv1a_seeded(0, bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> ExpertRegistry {
        ExpertRegistry::new(["expert-7"])
    }

    #[test]
    fn expert_chunk_attribution() {
        let chunks = add_expert_chunk(
            "Numerology refers to subcarrier spacing configuration in NR.",
            "expert-7",
            &registry(),
            &SegmenterConfig::default(),
        )
        .unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].source, "Expert: expert-7");
        assert_eq!(chunks[0].origin, ChunkOrigin::Expert);
        assert!(chunks[0].text.ends_with("\nSource: Expert: expert-7"));
    }

    #[test]
    fn expert_chunk_errors() {
        let cfg = SegmenterConfig::default();
        assert!(matches!(
            add_expert_chunk("", "expert-7", &registry(), &cfg),
            Err(IngestError::EmptyContribution)
        ));
        assert!(matches!(
            add_expert_chunk("text", "nobody", &registry(), &cfg),
            Err(IngestError::UnregisteredExpert(_))
        ));
    }

    #[test]
    fn long_contribution_spans_several_chunks() {
        // 20 sentences of 40 words in one paragraph: 9 + 9 + 2 sentences.
        let text = (0..20)
            .map(|s| format!("{}.", (0..40).map(|w| format!("t{s}x{w}")).collect::<Vec<_>>().join(" ")))
            .collect::<Vec<_>>()
            .join(" ");
        let chunks = add_expert_chunk(&text, "expert-7", &registry(), &SegmenterConfig::default()).unwrap();
        assert_eq!(chunks.len(), 3);
        assert!(chunks.iter().all(|c| c.source == "Expert: expert-7"));
    }

    #[test]
    fn corpus_round_trip_keeps_field_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let chunks = add_expert_chunk("A short note.", "expert-7", &registry(), &SegmenterConfig::default()).unwrap();
        write_corpus(&path, &chunks).unwrap();
        let line = fs::read_to_string(&path).unwrap();
        let value: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        let mut keys: Vec<&str> = value.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(keys, ["chunk_id", "origin", "section_title", "source", "spec_id", "text", "word_count"]);
        assert_eq!(value["origin"], "expert");
        assert_eq!(read_corpus(&path).unwrap(), chunks);
    }

    #[test]
    fn registry_file_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("experts.txt");
        fs::write(&path, "# reviewers\nexpert-1\n\n  expert-2 \n").unwrap();
        let reg = ExpertRegistry::load(&path).unwrap();
        assert!(reg.contains("expert-1") && reg.contains("expert-2"));
        assert!(!reg.contains("# reviewers"));
    }

    #[test]
    fn ingest_directory_in_name_order() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("TS 2.txt"), "## B\nsecond doc.").unwrap();
        fs::write(dir.path().join("TS 1.txt"), "## A\nfirst doc.\n\nFigure 1: skip me").unwrap();
        fs::write(dir.path().join("notes.pdf"), "ignored").unwrap();
        let chunks = ingest_dir(dir.path(), &SegmenterConfig::default(), &CleanupRules::default()).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].text, "first doc.\nSource: TS 1 A");
        assert_eq!(chunks[1].source, "TS 2 B");
    }
}
