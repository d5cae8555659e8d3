//! Code blocks, corpora, and the JSON-lines corpus file.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ConfigError, IngestError};
use crate::license::{LicenseId, LicenseProvenance, LicenseTag};
use crate::token::{lex, TokenBag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Filesystem,
    StackexchangePost,
    DocFile,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Filesystem => "filesystem",
            SourceKind::StackexchangePost => "stackexchange-post",
            SourceKind::DocFile => "doc-file",
        }
    }
}

/// Where a block came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceLocator {
    pub kind: SourceKind,
    /// Relative file path, or the decimal post id for StackExchange posts.
    pub path: String,
    pub start_line: usize,
    pub end_line: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

impl SourceLocator {
    pub fn file(path: impl Into<String>) -> Self {
        Self {
            kind: SourceKind::Filesystem,
            path: path.into(),
            start_line: 1,
            end_line: 1,
            url: None,
        }
    }

    pub fn line_count(&self) -> usize {
        self.end_line + 1 - self.start_line
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.start_line < 1 || self.end_line < self.start_line {
            return Err(format!(
                "bad line range {}-{} for {}",
                self.start_line, self.end_line, self.path
            ));
        }
        if self.kind == SourceKind::StackexchangePost {
            if self.path.is_empty() || !self.path.bytes().all(|b| b.is_ascii_digit()) {
                return Err(format!("post id {:?} is not a decimal integer", self.path));
            }
            if self.url.is_none() {
                return Err(format!("post {} has no url", self.path));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    File,
    Module,
    Function,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::File => "file",
            Granularity::Module => "module",
            Granularity::Function => "function",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "file" => Ok(Granularity::File),
            "module" => Ok(Granularity::Module),
            "function" => Ok(Granularity::Function),
            other => Err(ConfigError::UnknownGranularity(other.to_string())),
        }
    }
}

/// Non-empty set of granularities.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Granularity>", into = "Vec<Granularity>")]
pub struct GranularitySet(BTreeSet<Granularity>);

impl GranularitySet {
    pub fn new(items: impl IntoIterator<Item = Granularity>) -> Result<Self, ConfigError> {
        let set: BTreeSet<_> = items.into_iter().collect();
        if set.is_empty() {
            return Err(ConfigError::NoGranularity);
        }
        Ok(Self(set))
    }

    pub fn only(g: Granularity) -> Self {
        Self(BTreeSet::from([g]))
    }

    pub fn contains(&self, g: Granularity) -> bool {
        self.0.contains(&g)
    }

    pub fn iter(&self) -> impl Iterator<Item = Granularity> + '_ {
        self.0.iter().copied()
    }
}

impl Default for GranularitySet {
    fn default() -> Self {
        Self::only(Granularity::File)
    }
}

impl TryFrom<Vec<Granularity>> for GranularitySet {
    type Error = ConfigError;

    fn try_from(v: Vec<Granularity>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<GranularitySet> for Vec<Granularity> {
    fn from(s: GranularitySet) -> Self {
        s.0.into_iter().collect()
    }
}

impl FromStr for GranularitySet {
    type Err = ConfigError;

    /// Comma-separated list, e.g. `file,function`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let items = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(items)
    }
}

impl fmt::Display for GranularitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.iter().map(Granularity::as_str).collect();
        f.write_str(&names.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeBlock {
    pub block_id: String,
    pub corpus_id: String,
    pub locator: SourceLocator,
    pub granularity: Granularity,
    pub raw_text: String,
    pub tokens: TokenBag,
    /// UTC seconds.
    pub last_modified: Option<i64>,
    pub license: LicenseTag,
    /// Surrounding prose, e.g. the full body of the post a snippet came
    /// from. Scanned for attribution; not part of the token bag.
    pub context: Option<String>,
}

impl CodeBlock {
    pub fn total_tokens(&self) -> u64 {
        self.tokens.total()
    }

    pub fn line_count(&self) -> usize {
        self.locator.line_count()
    }
}

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub block_id: String,
    pub corpus_id: String,
    pub kind: SourceKind,
    pub path: String,
    pub start_line: usize,
    pub end_line: usize,
    pub url: Option<String>,
    pub granularity: Granularity,
    pub tokens: TokenBag,
    pub total_tokens: u64,
    pub line_count: usize,
    pub last_modified: Option<i64>,
    pub license: LicenseId,
    pub license_provenance: LicenseProvenance,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
}

impl From<&CodeBlock> for BlockRecord {
    fn from(b: &CodeBlock) -> Self {
        Self {
            block_id: b.block_id.clone(),
            corpus_id: b.corpus_id.clone(),
            kind: b.locator.kind,
            path: b.locator.path.clone(),
            start_line: b.locator.start_line,
            end_line: b.locator.end_line,
            url: b.locator.url.clone(),
            granularity: b.granularity,
            tokens: b.tokens.clone(),
            total_tokens: b.tokens.total(),
            line_count: b.line_count(),
            last_modified: b.last_modified,
            license: b.license.id.clone(),
            license_provenance: b.license.provenance,
            raw_text: b.raw_text.clone(),
            context: b.context.clone(),
        }
    }
}

impl TryFrom<BlockRecord> for CodeBlock {
    type Error = String;

    fn try_from(r: BlockRecord) -> Result<Self, Self::Error> {
        let locator = SourceLocator {
            kind: r.kind,
            path: r.path,
            start_line: r.start_line,
            end_line: r.end_line,
            url: r.url,
        };
        locator.validate()?;
        if r.total_tokens != r.tokens.total() {
            return Err(format!(
                "{}: total_tokens {} does not match token bag total {}",
                r.block_id,
                r.total_tokens,
                r.tokens.total()
            ));
        }
        if r.line_count != locator.line_count() {
            return Err(format!(
                "{}: line_count {} does not match span {}",
                r.block_id,
                r.line_count,
                locator.line_count()
            ));
        }
        Ok(CodeBlock {
            block_id: r.block_id,
            corpus_id: r.corpus_id,
            locator,
            granularity: r.granularity,
            raw_text: r.raw_text,
            tokens: r.tokens,
            last_modified: r.last_modified,
            license: LicenseTag::new(r.license, r.license_provenance),
            context: r.context,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub corpus_id: String,
    pub blocks: Vec<CodeBlock>,
    pub content_hash: String,
    pub created_at: i64,
}

impl Corpus {
    /// Assemble a corpus. Blocks are kept in the given order; duplicate
    /// block ids get a `~N` suffix so ids stay unique.
    pub fn new(corpus_id: impl Into<String>, mut blocks: Vec<CodeBlock>) -> Self {
        let corpus_id = corpus_id.into();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for block in &mut blocks {
            let n = seen.entry(block.block_id.clone()).or_insert(0);
            *n += 1;
            if *n > 1 {
                block.block_id = format!("{}~{}", block.block_id, n);
            }
        }
        let content_hash = content_hash(&corpus_id, &blocks);
        Self {
            corpus_id,
            blocks,
            content_hash,
            created_at: crate::clock::now_utc_seconds(),
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for block in &self.blocks {
            serde_json::to_writer(&mut out, &BlockRecord::from(block))?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// Read a corpus file. `fallback_id` names the corpus when the file has
    /// no blocks.
    pub fn read_jsonl<R: BufRead>(input: R, fallback_id: &str) -> Result<Self, IngestError> {
        let mut blocks = Vec::new();
        let mut ids = BTreeSet::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: BlockRecord = serde_json::from_str(&line)
                .map_err(|source| IngestError::CorpusLine { line: idx + 1, source })?;
            let block = CodeBlock::try_from(record)
                .map_err(|e| IngestError::CorpusInvalid(format!("line {}: {e}", idx + 1)))?;
            if !ids.insert(block.block_id.clone()) {
                return Err(IngestError::CorpusInvalid(format!(
                    "line {}: duplicate block id {}",
                    idx + 1,
                    block.block_id
                )));
            }
            blocks.push(block);
        }
        let corpus_id = blocks
            .first()
            .map(|b| b.corpus_id.clone())
            .unwrap_or_else(|| fallback_id.to_string());
        if let Some(other) = blocks.iter().find(|b| b.corpus_id != corpus_id) {
            return Err(IngestError::CorpusInvalid(format!(
                "block {} belongs to corpus {} but the file starts with corpus {}",
                other.block_id, other.corpus_id, corpus_id
            )));
        }
        Ok(Self::new(corpus_id, blocks))
    }
}

/// Digest over the corpus id and every block's identity, text, and license.
/// Timestamps are excluded so an archive and its unpacked directory hash
/// the same.
pub fn content_hash(corpus_id: &str, blocks: &[CodeBlock]) -> String {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(b"cloneguard-corpus-v1");
    field(corpus_id.as_bytes());
    for b in blocks {
        field(b.block_id.as_bytes());
        field(b.granularity.as_str().as_bytes());
        field(b.locator.kind.as_str().as_bytes());
        field(b.locator.path.as_bytes());
        field(&(b.locator.start_line as u64).to_le_bytes());
        field(&(b.locator.end_line as u64).to_le_bytes());
        field(b.locator.url.as_deref().unwrap_or("").as_bytes());
        field(b.license.id.as_str().as_bytes());
        field(b.license.provenance.as_str().as_bytes());
        field(b.raw_text.as_bytes());
        field(b.context.as_deref().unwrap_or("").as_bytes());
    }
    hex::encode(h.finalize())
}

/// Result of splitting one source text into blocks.
#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub blocks: Vec<CodeBlock>,
    /// The source could not be parsed; only a file-level block was emitted.
    pub degraded: bool,
}

fn block_id(corpus_id: &str, base: &SourceLocator, g: Granularity, start: usize, end: usize) -> String {
    format!("{corpus_id}:{}:{}:{start}-{end}", base.path, g.as_str())
}

fn slice_lines(lines: &[&str], first: usize, last: usize) -> String {
    lines[first - 1..last].join("\n")
}

/// Split `text` into blocks at the requested granularities.
///
/// Line numbers in `text` are offset so that its first line maps to
/// `base.start_line`. Blocks with fewer than `min_tokens` tokens (and
/// empty blocks) are dropped. Text that fails to lex cleanly yields a
/// single file-level block and sets `degraded`.
pub fn extract_blocks(
    text: &str,
    base: &SourceLocator,
    corpus_id: &str,
    granularities: &GranularitySet,
    min_tokens: u64,
) -> Extraction {
    let lexed = lex(text);
    let lines: Vec<&str> = text.lines().collect();
    let offset = base.start_line.max(1) - 1;
    let degraded = lexed.problem.is_some();
    let tokens = &lexed.tokens;

    let make = |g: Granularity, first: usize, last: usize, raw: String, bag: TokenBag| CodeBlock {
        block_id: block_id(corpus_id, base, g, first + offset, last + offset),
        corpus_id: corpus_id.to_string(),
        locator: SourceLocator {
            kind: base.kind,
            path: base.path.clone(),
            start_line: first + offset,
            end_line: last + offset,
            url: base.url.clone(),
        },
        granularity: g,
        raw_text: raw,
        tokens: bag,
        last_modified: None,
        license: LicenseTag::none(),
        context: None,
    };
    let keep = |b: &TokenBag| !b.is_empty() && b.total() >= min_tokens;

    let mut out = Vec::new();
    if tokens.is_empty() {
        return Extraction { blocks: out, degraded };
    }

    if granularities.contains(Granularity::File) || degraded {
        let bag: TokenBag = tokens.iter().map(|t| t.text.as_str()).collect();
        if keep(&bag) {
            let last = lines.len().max(1);
            out.push(make(Granularity::File, 1, last, text.to_string(), bag));
        }
    }
    if degraded {
        return Extraction { blocks: out, degraded };
    }

    // Function spans as token index ranges [start, end).
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for (i, tok) in tokens.iter().enumerate() {
        let Some(indent) = tok.line_start_indent else { continue };
        let def_at = match tok.text.as_str() {
            "def" => i,
            "async" if tokens.get(i + 1).is_some_and(|t| t.text == "def") => i,
            _ => continue,
        };
        let end = tokens[def_at + 1..]
            .iter()
            .position(|t| t.line_start_indent.is_some_and(|j| j <= indent))
            .map_or(tokens.len(), |p| def_at + 1 + p);
        spans.push((def_at, end));
    }

    if granularities.contains(Granularity::Module) {
        let mut in_function = vec![false; tokens.len()];
        for &(s, e) in &spans {
            in_function[s..e].iter_mut().for_each(|f| *f = true);
        }
        let mut covered_lines = vec![false; lines.len() + 2];
        for &(s, e) in &spans {
            let first = tokens[s].line;
            let last = tokens[s..e].iter().map(|t| t.end_line).max().unwrap_or(first);
            covered_lines[first..=last.min(lines.len())].iter_mut().for_each(|c| *c = true);
        }
        let module: Vec<_> = tokens.iter().zip(&in_function).filter(|(_, f)| !**f).map(|(t, _)| t).collect();
        if let (Some(first), Some(last)) = (
            module.iter().map(|t| t.line).min(),
            module.iter().map(|t| t.end_line).max(),
        ) {
            let bag: TokenBag = module.iter().map(|t| t.text.as_str()).collect();
            if keep(&bag) {
                let raw = (first..=last.min(lines.len()))
                    .filter(|l| !covered_lines[*l])
                    .map(|l| lines[l - 1])
                    .collect::<Vec<_>>()
                    .join("\n");
                out.push(make(Granularity::Module, first, last, raw, bag));
            }
        }
    }

    if granularities.contains(Granularity::Function) {
        for &(s, e) in &spans {
            let body = &tokens[s..e];
            let first = body[0].line;
            let last = body.iter().map(|t| t.end_line).max().unwrap_or(first).min(lines.len().max(first));
            let bag: TokenBag = body.iter().map(|t| t.text.as_str()).collect();
            if keep(&bag) {
                out.push(make(Granularity::Function, first, last, slice_lines(&lines, first, last), bag));
            }
        }
    }

    Extraction { blocks: out, degraded }
}
