//! Turning directories, archives, and single files into corpora.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{extract_blocks, CodeBlock, Corpus, GranularitySet, SourceKind, SourceLocator};
use crate::error::IngestError;
use crate::license::{detect_header_license, is_license_file_name, resolve_with, PackageTree, ResolveInput, RuleSet};

pub const DEFAULT_QUESTION_URL: &str = "https://stackoverflow.com/q/{id}";
pub const DEFAULT_ANSWER_URL: &str = "https://stackoverflow.com/a/{id}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestConfig {
    /// Defaults to the source's file name without archive extensions.
    pub corpus_id: Option<String>,
    /// File extensions (without the dot) collected from directory trees.
    pub extensions: Vec<String>,
    pub granularities: GranularitySet,
    pub min_tokens: u64,
    /// License applied when neither a header nor a package file decides.
    pub default_license: Option<String>,
    /// Locator kind for filesystem sources (`filesystem` or `doc-file`).
    pub source_kind: SourceKind,
    pub question_url_template: String,
    pub answer_url_template: String,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            corpus_id: None,
            extensions: vec!["py".to_string()],
            granularities: GranularitySet::default(),
            min_tokens: crate::engine::DEFAULT_MIN_TOKENS,
            default_license: None,
            source_kind: SourceKind::Filesystem,
            question_url_template: DEFAULT_QUESTION_URL.to_string(),
            answer_url_template: DEFAULT_ANSWER_URL.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSource {
    pub source: String,
    pub reason: String,
}

/// Non-fatal events recorded while ingesting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestLog {
    pub files_seen: u64,
    pub skipped: Vec<SkippedSource>,
    /// Sources that could not be parsed and were reduced to a file block.
    pub degraded: Vec<String>,
    pub rows_seen: u64,
    pub malformed_rows: u64,
}

impl IngestLog {
    pub(crate) fn skip(&mut self, source: impl Into<String>, reason: impl Into<String>) {
        let (source, reason) = (source.into(), reason.into());
        tracing::warn!(%source, %reason, "skipped during ingest");
        self.skipped.push(SkippedSource { source, reason });
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub corpus: Corpus,
    pub log: IngestLog,
}

struct SourceFile {
    rel_path: String,
    bytes: Vec<u8>,
    mtime: Option<i64>,
}

/// License files gathered while walking a tree, keyed by directory.
#[derive(Default)]
struct MemTree {
    license_files: BTreeMap<PathBuf, Vec<(String, String)>>,
}

impl PackageTree for MemTree {
    fn license_files(&self, dir: &Path) -> Vec<(String, std::io::Result<String>)> {
        self.license_files
            .get(dir)
            .map(|v| v.iter().map(|(n, t)| (n.clone(), Ok(t.clone()))).collect())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ArchiveKind {
    Zip,
    TarGz,
}

fn archive_kind(path: &Path) -> Option<ArchiveKind> {
    let name = path.file_name()?.to_str()?.to_ascii_lowercase();
    if name.ends_with(".zip") {
        Some(ArchiveKind::Zip)
    } else if name.ends_with(".tar.gz") || name.ends_with(".tgz") {
        Some(ArchiveKind::TarGz)
    } else {
        None
    }
}

/// Corpus id derived from a source path: file name minus archive suffixes.
pub fn default_corpus_id(path: &Path) -> String {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("corpus")
        .to_string();
    for suffix in [".tar.gz", ".tgz", ".zip", ".xml"] {
        if name.to_ascii_lowercase().ends_with(suffix) && name.len() > suffix.len() {
            return name[..name.len() - suffix.len()].to_string();
        }
    }
    name
}

fn rel_string(path: &Path) -> String {
    path.components()
        .filter_map(|c| match c {
            std::path::Component::Normal(s) => s.to_str(),
            _ => None,
        })
        .collect::<Vec<_>>()
        .join("/")
}

fn read_directory(root: &Path, log: &mut IngestLog) -> Result<Vec<SourceFile>, IngestError> {
    let mut files = Vec::new();
    let walker = walkdir::WalkDir::new(root).follow_links(false).sort_by_file_name();
    for entry in walker {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                if e.depth() == 0 {
                    return Err(IngestError::Unreadable {
                        path: root.to_path_buf(),
                        source: e.into_io_error().unwrap_or_else(|| std::io::Error::other("walk failed")),
                    });
                }
                let source = e.path().map(|p| p.display().to_string()).unwrap_or_default();
                log.skip(source, e.to_string());
                continue;
            }
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = rel_string(entry.path().strip_prefix(root).unwrap_or(entry.path()));
        match std::fs::read(entry.path()) {
            Ok(bytes) => {
                let mtime = entry
                    .metadata()
                    .ok()
                    .and_then(|m| m.modified().ok())
                    .and_then(crate::clock::system_time_seconds);
                files.push(SourceFile { rel_path: rel, bytes, mtime });
            }
            Err(e) => log.skip(rel, e.to_string()),
        }
    }
    Ok(files)
}

fn archive_err(path: &Path, reason: impl ToString) -> IngestError {
    IngestError::Archive {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn read_zip(path: &Path, log: &mut IngestLog) -> Result<Vec<SourceFile>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let mut archive = zip::ZipArchive::new(file).map_err(|e| archive_err(path, e))?;
    let mut files = Vec::new();
    for i in 0..archive.len() {
        let mut entry = match archive.by_index(i) {
            Ok(e) => e,
            Err(e) => {
                log.skip(format!("{}#{i}", path.display()), e.to_string());
                continue;
            }
        };
        if !entry.is_file() {
            continue;
        }
        let Some(name) = entry.enclosed_name() else {
            log.skip(entry.name().to_string(), "unsafe path in archive");
            continue;
        };
        let rel = rel_string(&name);
        let mtime = entry.last_modified().and_then(|dt| {
            let date = chrono::NaiveDate::from_ymd_opt(dt.year().into(), dt.month().into(), dt.day().into())?;
            let time = chrono::NaiveTime::from_hms_opt(dt.hour().into(), dt.minute().into(), dt.second().into())?;
            Some(date.and_time(time).and_utc().timestamp())
        });
        let mut bytes = Vec::with_capacity(entry.size() as usize);
        match entry.read_to_end(&mut bytes) {
            Ok(_) => files.push(SourceFile { rel_path: rel, bytes, mtime }),
            Err(e) => log.skip(rel, e.to_string()),
        }
    }
    Ok(files)
}

fn read_tar_gz(path: &Path, log: &mut IngestLog) -> Result<Vec<SourceFile>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let mut archive = tar::Archive::new(flate2::read::GzDecoder::new(file));
    let mut files = Vec::new();
    for entry in archive.entries().map_err(|e| archive_err(path, e))? {
        let mut entry = entry.map_err(|e| archive_err(path, e))?;
        if !entry.header().entry_type().is_file() {
            continue;
        }
        let rel = match entry.path() {
            Ok(p) => rel_string(&p),
            Err(e) => {
                log.skip(path.display().to_string(), e.to_string());
                continue;
            }
        };
        let mtime = entry.header().mtime().ok().map(|t| t as i64);
        let mut bytes = Vec::new();
        match entry.read_to_end(&mut bytes) {
            Ok(_) => files.push(SourceFile { rel_path: rel, bytes, mtime }),
            Err(e) => return Err(archive_err(path, format!("{rel}: {e}"))),
        }
    }
    Ok(files)
}

/// Archives usually wrap everything in one top-level directory; drop it so
/// an archive ingests like the directory it was made from.
fn strip_common_root(files: &mut [SourceFile]) {
    let first = match files.first() {
        Some(f) => f.rel_path.split('/').next().unwrap_or("").to_string(),
        None => return,
    };
    let prefix = format!("{first}/");
    if files.iter().all(|f| f.rel_path.starts_with(&prefix)) {
        for f in files.iter_mut() {
            f.rel_path = f.rel_path[prefix.len()..].to_string();
        }
    }
}

fn has_extension(rel: &str, extensions: &[String]) -> bool {
    let name = rel.rsplit('/').next().unwrap_or(rel);
    match name.rsplit_once('.') {
        Some((stem, ext)) if !stem.is_empty() => extensions.iter().any(|e| e.eq_ignore_ascii_case(ext)),
        _ => false,
    }
}

fn decode_source(bytes: &[u8]) -> Result<&str, &'static str> {
    if bytes.contains(&0) {
        return Err("binary file (NUL byte)");
    }
    std::str::from_utf8(bytes).map_err(|_| "binary file (invalid UTF-8)")
}

struct FileResult {
    blocks: Vec<CodeBlock>,
    degraded: bool,
}

fn process_file(
    file: &SourceFile,
    text: &str,
    corpus_id: &str,
    config: &IngestConfig,
    tree: &MemTree,
    rules: &RuleSet,
) -> FileResult {
    let mut base = SourceLocator::file(file.rel_path.clone());
    base.kind = config.source_kind;
    let ex = extract_blocks(text, &base, corpus_id, &config.granularities, config.min_tokens);
    let file_header = detect_header_license(text, rules);
    let rel = PathBuf::from(&file.rel_path);
    let blocks = ex
        .blocks
        .into_iter()
        .map(|mut b| {
            b.last_modified = file.mtime;
            b.license = resolve_with(
                ResolveInput {
                    block_text: &b.raw_text,
                    file_header: Some(&file_header),
                    file_rel_path: Some(&rel),
                    corpus_default: config.default_license.as_deref(),
                },
                Some(tree),
                rules,
            );
            b
        })
        .collect();
    FileResult {
        blocks,
        degraded: ex.degraded,
    }
}

fn ingest_files(
    mut files: Vec<SourceFile>,
    corpus_id: String,
    config: &IngestConfig,
    rules: &RuleSet,
    mut log: IngestLog,
) -> Ingested {
    files.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
    let mut tree = MemTree::default();
    let mut sources = Vec::new();
    for file in files {
        let name = file.rel_path.rsplit('/').next().unwrap_or(&file.rel_path);
        if is_license_file_name(name) {
            let dir = Path::new(&file.rel_path).parent().map(Path::to_path_buf).unwrap_or_default();
            match String::from_utf8(file.bytes.clone()) {
                Ok(text) => tree.license_files.entry(dir).or_default().push((name.to_string(), text)),
                Err(_) => log.skip(file.rel_path.clone(), "license file is not UTF-8"),
            }
        }
        if has_extension(&file.rel_path, &config.extensions) {
            sources.push(file);
        }
    }
    log.files_seen += sources.len() as u64;

    let results: Vec<Result<FileResult, &'static str>> = sources
        .par_iter()
        .map(|f| {
            decode_source(&f.bytes).map(|text| process_file(f, text, &corpus_id, config, &tree, rules))
        })
        .collect();

    let mut blocks = Vec::new();
    for (file, result) in sources.iter().zip(results) {
        match result {
            Ok(r) => {
                if r.degraded {
                    log.degraded.push(file.rel_path.clone());
                }
                blocks.extend(r.blocks);
            }
            Err(reason) => log.skip(file.rel_path.clone(), reason),
        }
    }
    Ingested {
        corpus: Corpus::new(corpus_id, blocks),
        log,
    }
}

/// Ingest a directory, a `.zip` / `.tar.gz` archive, or a single file.
pub fn ingest_directory(path: &Path, config: &IngestConfig, rules: &RuleSet) -> Result<Ingested, IngestError> {
    let meta = std::fs::metadata(path).map_err(|source| IngestError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    let mut log = IngestLog::default();
    let files = if meta.is_dir() {
        read_directory(path, &mut log)?
    } else {
        match archive_kind(path) {
            Some(kind) => {
                let mut files = match kind {
                    ArchiveKind::Zip => read_zip(path, &mut log)?,
                    ArchiveKind::TarGz => read_tar_gz(path, &mut log)?,
                };
                strip_common_root(&mut files);
                files
            }
            None => {
                let bytes = std::fs::read(path).map_err(|source| IngestError::Unreadable {
                    path: path.to_path_buf(),
                    source,
                })?;
                let mtime = meta.modified().ok().and_then(crate::clock::system_time_seconds);
                let rel = path.file_name().and_then(|n| n.to_str()).unwrap_or("source").to_string();
                vec![SourceFile { rel_path: rel, bytes, mtime }]
            }
        }
    };
    let corpus_id = config.corpus_id.clone().unwrap_or_else(|| default_corpus_id(path));
    Ok(ingest_files(files, corpus_id, config, rules, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Granularity;
    use crate::license::{LicenseId, LicenseProvenance};

    fn write(root: &Path, rel: &str, bytes: &[u8]) {
        let p = root.join(rel);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, bytes).unwrap();
    }

    fn config() -> IngestConfig {
        IngestConfig {
            min_tokens: 1,
            ..IngestConfig::default()
        }
    }

    #[test]
    fn extension_filter() {
        let exts = vec!["py".to_string()];
        assert!(has_extension("a/b.py", &exts));
        assert!(has_extension("B.PY", &exts));
        assert!(!has_extension("a/.py", &exts));
        assert!(!has_extension("a/b.pyc", &exts));
        assert!(!has_extension("py", &exts));
    }

    #[test]
    fn corpus_ids_from_paths() {
        assert_eq!(default_corpus_id(Path::new("/x/proj.tar.gz")), "proj");
        assert_eq!(default_corpus_id(Path::new("/x/proj.zip")), "proj");
        assert_eq!(default_corpus_id(Path::new("/x/proj")), "proj");
        assert_eq!(default_corpus_id(Path::new("Posts.xml")), "Posts");
    }

    #[test]
    fn strips_single_wrapping_directory() {
        let mk = |p: &str| SourceFile { rel_path: p.into(), bytes: vec![], mtime: None };
        let mut files = vec![mk("proj/a.py"), mk("proj/sub/b.py")];
        strip_common_root(&mut files);
        assert_eq!(files[0].rel_path, "a.py");
        let mut files = vec![mk("a.py"), mk("sub/b.py")];
        strip_common_root(&mut files);
        assert_eq!(files[0].rel_path, "a.py");
    }

    #[test]
    fn missing_path_is_fatal() {
        let err = ingest_directory(Path::new("/definitely/not/here"), &config(), &RuleSet::default());
        assert!(matches!(err, Err(IngestError::Unreadable { .. })));
    }

    #[test]
    fn mtime_and_license_are_attached() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "LICENSE", b"Permission is hereby granted, free of charge, to any person obtaining a copy");
        write(dir.path(), "pkg/a.py", b"def f(x):\n    return x + 1\n");
        let mut cfg = config();
        cfg.granularities = GranularitySet::only(Granularity::Function);
        let out = ingest_directory(dir.path(), &cfg, &RuleSet::default()).unwrap();
        let block = &out.corpus.blocks[0];
        assert!(block.last_modified.is_some());
        assert_eq!(block.license.id, LicenseId::known("MIT"));
        assert_eq!(block.license.provenance, LicenseProvenance::PackageFile);
        assert_eq!(block.locator.path, "pkg/a.py");
        assert_eq!(out.corpus.corpus_id, dir.path().file_name().unwrap().to_str().unwrap());
    }
}
