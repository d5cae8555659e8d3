//! Persistent warm-start store for corpora and their indexes.
//!
//! Layout: one subdirectory per corpus hash, one entry file per detection
//! fingerprint inside it. An entry file is
//!
//! ```text
//! "CGIX" | version u32 | header_len u64 | header (JSON)
//!        | 4 × (section_len u64 | section bytes) | sha256 of everything before
//! ```
//!
//! with sections: corpus blocks, token table, indexed blocks, postings.
//! All integers are little-endian. Entries are written to a temporary file
//! and renamed into place, so a reader never sees a partial entry.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{CodeBlock, Corpus, Granularity, SourceKind, SourceLocator};
use crate::license::{LicenseId, LicenseProvenance, LicenseTag};
use crate::token::TokenBag;
use crate::engine::{Denominator, DetectionConfig, IndexedBlock, IndexedCorpus, InvertedIndex, Posting, Theta};
use crate::engine::build_index;
use crate::error::CacheError;
use crate::token::TOKENIZER_VERSION;

const MAGIC: &[u8; 4] = b"CGIX";
const FORMAT_VERSION: u32 = 2;
const ENTRY_EXT: &str = "idx";
const LRU_MARKER: &str = "last-used";
pub const DEFAULT_MAX_ENTRIES: usize = 8;
const SOURCES_DIR: &str = "sources";

fn source_file_name(source_key: &str) -> String {
    hex::encode(Sha256::digest(source_key.as_bytes()))
}

/// Detection settings an index depends on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    pub theta: Theta,
    pub min_tokens: u64,
    pub tokenizer_version: u32,
    pub denominator: Denominator,
}

impl Fingerprint {
    pub fn of(config: &DetectionConfig) -> Self {
        Self {
            theta: config.theta,
            min_tokens: config.min_tokens,
            tokenizer_version: TOKENIZER_VERSION,
            denominator: config.denominator,
        }
    }

    pub fn key(&self) -> String {
        let denom = match self.denominator {
            Denominator::Max => "max",
            Denominator::Query => "query",
        };
        format!(
            "t{}-m{}-v{}-{denom}",
            self.theta.millionths(),
            self.min_tokens,
            self.tokenizer_version
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct EntryHeader {
    corpus_hash: String,
    corpus_id: String,
    corpus_created_at: i64,
    fingerprint: Fingerprint,
    created_at: i64,
    block_count: usize,
}

#[derive(Debug, Default)]
struct Counters {
    hits: AtomicU64,
    misses: AtomicU64,
    builds: AtomicU64,
    evictions: AtomicU64,
    corrupt: AtomicU64,
}

/// Snapshot of cache activity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheMetrics {
    pub hits: u64,
    pub misses: u64,
    /// Index builds performed; zero on a pure warm path.
    pub builds: u64,
    pub evictions: u64,
    pub corrupt: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CacheOutcome {
    Hit,
    Miss,
}

#[derive(Debug)]
pub struct IndexStore {
    root: PathBuf,
    max_entries: usize,
    counters: Counters,
    build_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CacheError + '_ {
    move |source| CacheError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn valid_hash(hash: &str) -> bool {
    !hash.is_empty() && hash.bytes().all(|b| b.is_ascii_hexdigit())
}

impl IndexStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CacheError> {
        Self::with_capacity(root, DEFAULT_MAX_ENTRIES)
    }

    pub fn with_capacity(root: impl Into<PathBuf>, max_entries: usize) -> Result<Self, CacheError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self {
            root,
            max_entries: max_entries.max(1),
            counters: Counters::default(),
            build_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn metrics(&self) -> CacheMetrics {
        let c = &self.counters;
        CacheMetrics {
            hits: c.hits.load(Ordering::Relaxed),
            misses: c.misses.load(Ordering::Relaxed),
            builds: c.builds.load(Ordering::Relaxed),
            evictions: c.evictions.load(Ordering::Relaxed),
            corrupt: c.corrupt.load(Ordering::Relaxed),
        }
    }

    fn entry_dir(&self, corpus_hash: &str) -> PathBuf {
        self.root.join(corpus_hash)
    }

    fn entry_path(&self, corpus_hash: &str, fp: &Fingerprint) -> PathBuf {
        self.entry_dir(corpus_hash).join(format!("{}.{ENTRY_EXT}", fp.key()))
    }

    /// Corpus hashes with a committed subdirectory.
    pub fn entries(&self) -> Result<Vec<String>, CacheError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            if entry.file_type().map(|t| t.is_dir()).unwrap_or(false) {
                if let Some(name) = entry.file_name().to_str() {
                    if valid_hash(name) {
                        out.push(name.to_string());
                    }
                }
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn entry_count(&self) -> Result<usize, CacheError> {
        Ok(self.entries()?.len())
    }

    pub fn contains(&self, corpus_hash: &str, config: &DetectionConfig) -> bool {
        valid_hash(corpus_hash) && self.entry_path(corpus_hash, &Fingerprint::of(config)).is_file()
    }

    fn lock_for(&self, corpus_hash: &str) -> Arc<Mutex<()>> {
        let mut locks = self.build_locks.lock().expect("lock table poisoned");
        locks.entry(corpus_hash.to_string()).or_default().clone()
    }

    /// Return the index for `corpus` under `config`, building and persisting
    /// it on a miss.
    pub fn get_or_build(
        &self,
        corpus: Corpus,
        config: &DetectionConfig,
    ) -> Result<(IndexedCorpus, CacheOutcome), CacheError> {
        let fp = Fingerprint::of(config);
        let hash = corpus.content_hash.clone();
        let lock = self.lock_for(&hash);
        let _guard = lock.lock().expect("build lock poisoned");

        match self.read_entry(&hash, &fp, false) {
            Ok(Some((_, index))) => {
                self.counters.hits.fetch_add(1, Ordering::Relaxed);
                self.touch(&hash);
                return Ok((IndexedCorpus { corpus, index }, CacheOutcome::Hit));
            }
            Ok(None) => {}
            Err(e) => self.discard_corrupt(&hash, &fp, &e),
        }
        self.counters.misses.fetch_add(1, Ordering::Relaxed);
        self.counters.builds.fetch_add(1, Ordering::Relaxed);
        let index = build_index(&corpus, config);
        let ic = IndexedCorpus { corpus, index };
        self.write_entry(&ic, &fp)?;
        self.touch(&hash);
        self.enforce_capacity(&hash)?;
        Ok((ic, CacheOutcome::Miss))
    }

    /// Load a committed entry (corpus and index) by corpus hash. Corrupt
    /// entries are evicted and reported as absent.
    pub fn load(&self, corpus_hash: &str, config: &DetectionConfig) -> Result<Option<IndexedCorpus>, CacheError> {
        if !valid_hash(corpus_hash) {
            return Ok(None);
        }
        let fp = Fingerprint::of(config);
        match self.read_entry(corpus_hash, &fp, true) {
            Ok(Some((Some(corpus), index))) => {
                self.counters.hits.fetch_add(1, Ordering::Relaxed);
                self.touch(corpus_hash);
                Ok(Some(IndexedCorpus { corpus, index }))
            }
            Ok(_) => {
                self.counters.misses.fetch_add(1, Ordering::Relaxed);
                Ok(None)
            }
            Err(e) => {
                self.discard_corrupt(corpus_hash, &fp, &e);
                self.counters.misses.fetch_add(1, Ordering::Relaxed);
                Ok(None)
            }
        }
    }

    /// Remember that the source identified by `source_key` ingests to
    /// `corpus_hash`.
    pub fn record_source(&self, source_key: &str, corpus_hash: &str) -> Result<(), CacheError> {
        let dir = self.root.join(SOURCES_DIR);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(source_file_name(source_key));
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, corpus_hash).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    /// Corpus hash last recorded for `source_key`, if its entry still exists
    /// under `config`.
    pub fn resolve_source(&self, source_key: &str, config: &DetectionConfig) -> Option<String> {
        let path = self.root.join(SOURCES_DIR).join(source_file_name(source_key));
        let hash = fs::read_to_string(path).ok()?;
        let hash = hash.trim();
        self.contains(hash, config).then(|| hash.to_string())
    }

    /// Remove every entry for `corpus_hash`. Unknown hashes are a no-op.
    pub fn evict(&self, corpus_hash: &str) -> Result<(), CacheError> {
        if !valid_hash(corpus_hash) {
            return Ok(());
        }
        let dir = self.entry_dir(corpus_hash);
        match fs::remove_dir_all(&dir) {
            Ok(()) => {
                self.counters.evictions.fetch_add(1, Ordering::Relaxed);
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(io_err(&dir)(e)),
        }
    }

    fn discard_corrupt(&self, hash: &str, fp: &Fingerprint, err: &CacheError) {
        tracing::warn!(corpus_hash = hash, error = %err, "corrupt cache entry evicted");
        self.counters.corrupt.fetch_add(1, Ordering::Relaxed);
        let _ = fs::remove_file(self.entry_path(hash, fp));
    }

    fn touch(&self, hash: &str) {
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        let _ = fs::write(self.entry_dir(hash).join(LRU_MARKER), nanos.to_string());
    }

    fn last_used(&self, hash: &str) -> u128 {
        fs::read_to_string(self.entry_dir(hash).join(LRU_MARKER))
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(0)
    }

    fn enforce_capacity(&self, keep: &str) -> Result<(), CacheError> {
        let mut entries = self.entries()?;
        if entries.len() <= self.max_entries {
            return Ok(());
        }
        entries.retain(|h| h != keep);
        entries.sort_by_key(|h| (self.last_used(h), h.clone()));
        let excess = entries.len() + 1 - self.max_entries;
        for hash in entries.into_iter().take(excess) {
            self.evict(&hash)?;
        }
        Ok(())
    }

    fn write_entry(&self, ic: &IndexedCorpus, fp: &Fingerprint) -> Result<(), CacheError> {
        let dir = self.entry_dir(&ic.corpus.content_hash);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let bytes = encode_entry(ic, fp);
        let final_path = self.entry_path(&ic.corpus.content_hash, fp);
        let tmp = dir.join(format!(
            ".tmp-{}-{}-{}",
            fp.key(),
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_nanos())
                .unwrap_or(0)
        ));
        {
            let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(&bytes).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &final_path).map_err(io_err(&final_path))?;
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn read_entry(
        &self,
        hash: &str,
        fp: &Fingerprint,
        want_corpus: bool,
    ) -> Result<Option<(Option<Corpus>, InvertedIndex)>, CacheError> {
        let path = self.entry_path(hash, fp);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let (corpus, index) = decode_entry(&bytes, hash, fp, want_corpus)?;
        Ok(Some((corpus, index)))
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_section(out: &mut Vec<u8>, section: &[u8]) {
    put_u64(out, section.len() as u64);
    out.extend_from_slice(section);
}

fn encode_entry(ic: &IndexedCorpus, fp: &Fingerprint) -> Vec<u8> {
    let index = &ic.index;
    let header = EntryHeader {
        corpus_hash: ic.corpus.content_hash.clone(),
        corpus_id: ic.corpus.corpus_id.clone(),
        corpus_created_at: ic.corpus.created_at,
        fingerprint: fp.clone(),
        created_at: crate::clock::now_utc_seconds(),
        block_count: ic.corpus.len(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");

    let corpus = encode_blocks(&ic.corpus.blocks);

    let mut tokens = Vec::new();
    put_u32(&mut tokens, index.tokens.len() as u32);
    for t in &index.tokens {
        put_u32(&mut tokens, t.len() as u32);
        tokens.extend_from_slice(t.as_bytes());
    }

    let mut blocks = Vec::new();
    put_u32(&mut blocks, index.blocks.len() as u32);
    for b in &index.blocks {
        put_u32(&mut blocks, b.corpus_pos);
        put_u64(&mut blocks, b.size);
        put_u32(&mut blocks, b.id_order);
        put_u32(&mut blocks, b.ranked.len() as u32);
        for &(rank, freq) in &b.ranked {
            put_u32(&mut blocks, rank);
            put_u32(&mut blocks, freq);
        }
    }

    let mut postings = Vec::new();
    put_u32(&mut postings, index.postings.len() as u32);
    for list in &index.postings {
        put_u32(&mut postings, list.len() as u32);
        for p in list {
            put_u32(&mut postings, p.block);
            put_u32(&mut postings, p.freq);
        }
    }

    let mut out = Vec::with_capacity(header.len() + corpus.len() + tokens.len() + blocks.len() + postings.len() + 96);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_section(&mut out, &header);
    for section in [&corpus, &tokens, &blocks, &postings] {
        put_section(&mut out, section);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

const SOURCE_KINDS: [SourceKind; 3] = [SourceKind::Filesystem, SourceKind::StackexchangePost, SourceKind::DocFile];
const GRANULARITIES: [Granularity; 3] = [Granularity::File, Granularity::Module, Granularity::Function];
const PROVENANCES: [LicenseProvenance; 4] = [
    LicenseProvenance::Header,
    LicenseProvenance::PackageFile,
    LicenseProvenance::Inherited,
    LicenseProvenance::CorpusDefault,
];

fn code_of<T: PartialEq>(table: &[T], v: &T) -> u8 {
    table.iter().position(|x| x == v).expect("every variant is tabled") as u8
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_opt_str(out: &mut Vec<u8>, s: Option<&str>) {
    match s {
        Some(s) => {
            out.push(1);
            put_str(out, s);
        }
        None => out.push(0),
    }
}

/// Block records with token bags written against a shared dictionary.
fn encode_blocks(blocks: &[CodeBlock]) -> Vec<u8> {
    let mut dict: HashMap<&str, u32> = HashMap::new();
    let mut words: Vec<&str> = Vec::new();
    for b in blocks {
        for (t, _) in b.tokens.iter() {
            dict.entry(t).or_insert_with(|| {
                words.push(t);
                (words.len() - 1) as u32
            });
        }
    }
    let mut out = Vec::new();
    put_u32(&mut out, words.len() as u32);
    for w in &words {
        put_str(&mut out, w);
    }
    put_u32(&mut out, blocks.len() as u32);
    for b in blocks {
        put_str(&mut out, &b.block_id);
        put_str(&mut out, &b.corpus_id);
        out.push(code_of(&SOURCE_KINDS, &b.locator.kind));
        put_str(&mut out, &b.locator.path);
        put_u64(&mut out, b.locator.start_line as u64);
        put_u64(&mut out, b.locator.end_line as u64);
        put_opt_str(&mut out, b.locator.url.as_deref());
        out.push(code_of(&GRANULARITIES, &b.granularity));
        put_u32(&mut out, b.tokens.distinct() as u32);
        for (t, n) in b.tokens.iter() {
            put_u32(&mut out, dict[t]);
            put_u32(&mut out, n);
        }
        match b.last_modified {
            Some(t) => {
                out.push(1);
                put_u64(&mut out, t as u64);
            }
            None => out.push(0),
        }
        put_str(&mut out, b.license.id.as_str());
        out.push(code_of(&PROVENANCES, &b.license.provenance));
        put_str(&mut out, &b.raw_text);
        put_opt_str(&mut out, b.context.as_deref());
    }
    out
}

fn decode_blocks(bytes: &[u8]) -> Result<Vec<CodeBlock>, CacheError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let n_words = cur.u32()? as usize;
    let mut words: Vec<Arc<str>> = Vec::with_capacity(n_words.min(bytes.len()));
    for _ in 0..n_words {
        words.push(Arc::from(cur.string()?));
    }
    let n = cur.u32()? as usize;
    let mut blocks = Vec::with_capacity(n.min(bytes.len()));
    for _ in 0..n {
        let block_id = cur.string()?;
        let corpus_id = cur.string()?;
        let kind = *SOURCE_KINDS.get(cur.u8()? as usize).ok_or_else(|| corrupt("bad source kind"))?;
        let path = cur.string()?;
        let start_line = cur.u64()? as usize;
        let end_line = cur.u64()? as usize;
        let url = cur.opt_string()?;
        let granularity = *GRANULARITIES.get(cur.u8()? as usize).ok_or_else(|| corrupt("bad granularity"))?;
        let distinct = cur.u32()? as usize;
        let mut counts = Vec::with_capacity(distinct.min(n_words));
        for _ in 0..distinct {
            let w = words.get(cur.u32()? as usize).ok_or_else(|| corrupt("token out of range"))?;
            counts.push((w.clone(), cur.u32()?));
        }
        let last_modified = match cur.u8()? {
            0 => None,
            _ => Some(cur.u64()? as i64),
        };
        let license = LicenseId::from(cur.string()?.as_str());
        let provenance = *PROVENANCES.get(cur.u8()? as usize).ok_or_else(|| corrupt("bad provenance"))?;
        let raw_text = cur.string()?;
        let context = cur.opt_string()?;
        let locator = SourceLocator {
            kind,
            path,
            start_line,
            end_line,
            url,
        };
        locator.validate().map_err(corrupt)?;
        blocks.push(CodeBlock {
            block_id,
            corpus_id,
            locator,
            granularity,
            raw_text,
            tokens: TokenBag::from_distinct_counts(counts),
            last_modified,
            license: LicenseTag::new(license, provenance),
            context,
        });
    }
    if !cur.done() {
        return Err(corrupt("corpus section has trailing bytes"));
    }
    Ok(blocks)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CacheError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            CacheError::Corrupt(format!("truncated at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CacheError> {
        Ok(self.take(1)?[0])
    }

    fn string(&mut self) -> Result<String, CacheError> {
        let len = self.u32()? as usize;
        std::str::from_utf8(self.take(len)?)
            .map(str::to_string)
            .map_err(|_| corrupt("string is not UTF-8"))
    }

    fn opt_string(&mut self) -> Result<Option<String>, CacheError> {
        match self.u8()? {
            0 => Ok(None),
            _ => self.string().map(Some),
        }
    }

    fn u32(&mut self) -> Result<u32, CacheError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CacheError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn section(&mut self) -> Result<&'a [u8], CacheError> {
        let len = self.u64()?;
        let len = usize::try_from(len).map_err(|_| CacheError::Corrupt("section too large".into()))?;
        self.take(len)
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn corrupt(msg: impl Into<String>) -> CacheError {
    CacheError::Corrupt(msg.into())
}

fn decode_entry(
    bytes: &[u8],
    hash: &str,
    fp: &Fingerprint,
    want_corpus: bool,
) -> Result<(Option<Corpus>, InvertedIndex), CacheError> {
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(corrupt("entry too short"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let mut cur = Cursor { buf: body, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {version}")));
    }
    let header: EntryHeader =
        serde_json::from_slice(cur.section()?).map_err(|e| corrupt(format!("header: {e}")))?;
    if header.corpus_hash != hash || &header.fingerprint != fp {
        return Err(corrupt("header does not match entry key"));
    }
    let corpus_bytes = cur.section()?;
    let (tok, blk, pst) = (cur.section()?, cur.section()?, cur.section()?);
    if !cur.done() {
        return Err(corrupt("trailing bytes"));
    }

    // Checksum and both decoders run concurrently; nothing is returned
    // unless the checksum holds.
    let ((checksum_ok, blocks), index) = rayon::join(
        || {
            rayon::join(
                || Sha256::digest(body).as_slice() == digest,
                || want_corpus.then(|| decode_blocks(corpus_bytes)).transpose(),
            )
        },
        || decode_index(tok, blk, pst, &header, fp),
    );
    if !checksum_ok {
        return Err(corrupt("checksum mismatch"));
    }
    let index = index?;
    let corpus = match blocks? {
        Some(blocks) => {
            if blocks.len() != header.block_count {
                return Err(corrupt("block count mismatch"));
            }
            Some(Corpus {
                corpus_id: header.corpus_id,
                blocks,
                content_hash: header.corpus_hash,
                created_at: header.corpus_created_at,
            })
        }
        None => None,
    };
    Ok((corpus, index))
}

fn decode_index(tok: &[u8], blk: &[u8], pst: &[u8], header: &EntryHeader, fp: &Fingerprint) -> Result<InvertedIndex, CacheError> {
    let mut tok = Cursor { buf: tok, pos: 0 };
    let mut blk = Cursor { buf: blk, pos: 0 };
    let mut pst = Cursor { buf: pst, pos: 0 };

    let n_tokens = tok.u32()? as usize;
    let mut tokens = Vec::with_capacity(n_tokens.min(tok.buf.len()));
    for _ in 0..n_tokens {
        tokens.push(tok.string()?);
    }

    let n_blocks = blk.u32()? as usize;
    let mut blocks = Vec::with_capacity(n_blocks.min(blk.buf.len()));
    for _ in 0..n_blocks {
        let corpus_pos = blk.u32()?;
        let size = blk.u64()?;
        let id_order = blk.u32()?;
        let n = blk.u32()? as usize;
        let mut ranked = Vec::with_capacity(n.min(blk.buf.len()));
        for _ in 0..n {
            let rank = blk.u32()?;
            if rank as usize >= n_tokens {
                return Err(corrupt("rank out of range"));
            }
            ranked.push((rank, blk.u32()?));
        }
        if corpus_pos as usize >= header.block_count {
            return Err(corrupt("block position out of range"));
        }
        blocks.push(IndexedBlock { corpus_pos, size, ranked, id_order });
    }

    let n_lists = pst.u32()? as usize;
    if n_lists != n_tokens {
        return Err(corrupt("postings table does not match token table"));
    }
    let mut postings = Vec::with_capacity(n_lists);
    for _ in 0..n_lists {
        let n = pst.u32()? as usize;
        let mut list = Vec::with_capacity(n.min(pst.buf.len()));
        for _ in 0..n {
            let block = pst.u32()?;
            if block as usize >= n_blocks {
                return Err(corrupt("posting block out of range"));
            }
            list.push(Posting { block, freq: pst.u32()? });
        }
        postings.push(list);
    }
    if !(tok.done() && blk.done() && pst.done()) {
        return Err(corrupt("section has trailing bytes"));
    }

    Ok(InvertedIndex::from_parts(
        fp.theta,
        fp.denominator,
        fp.min_tokens,
        header.corpus_hash.clone(),
        tokens,
        blocks,
        postings,
    ))
}
