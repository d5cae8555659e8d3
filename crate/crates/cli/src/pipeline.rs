//! Local ingest, indexing and query pipeline shared by `query` and `bench`.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use cloneguard_core::cache::{CacheOutcome, IndexStore};
use cloneguard_core::engine::detect_clones;
use cloneguard_core::ingest::{ingest_directory, IngestConfig};
use cloneguard_core::report::{aggregate_license_stats, LicenseStats};
use cloneguard_core::stackexchange::ingest_stackexchange_dump;
use cloneguard_core::{
    finalize_pairs, ClonePair, CompatibilityMatrix, Corpus, DetectionConfig, GranularitySet, IndexedCorpus, RuleSet,
    RunConfig, Theta, Verdict,
};
use serde::Serialize;

use crate::args::{DetectArgs, SourceArgs};

pub fn detection_config(args: &DetectArgs) -> Result<DetectionConfig> {
    let config = DetectionConfig {
        theta: Theta::new(args.theta)?,
        min_tokens: args.min_tokens,
        exclude_self_pairs: !args.keep_self_pairs,
        denominator: args.denominator.into(),
    };
    config.validate()?;
    Ok(config)
}

/// Everything needed to turn inputs into pairs.
#[derive(Debug, Clone)]
pub struct Settings {
    pub ingest: IngestConfig,
    pub rules: RuleSet,
    pub matrix: CompatibilityMatrix,
    pub detection: DetectionConfig,
    pub run_config: RunConfig,
}

fn display(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

impl Settings {
    pub fn new(
        detect: &DetectArgs,
        source: &SourceArgs,
        matrix: Option<&PathBuf>,
        store: Option<&PathBuf>,
    ) -> Result<Self> {
        let detection = detection_config(detect)?;
        let granularities: GranularitySet = source.granularity.parse()?;
        let rules = match &source.rules {
            Some(p) => RuleSet::load(p)?,
            None => RuleSet::default(),
        };
        let matrix_value = match matrix {
            Some(p) => CompatibilityMatrix::load(p)?,
            None => CompatibilityMatrix::default(),
        };
        let ingest = IngestConfig {
            extensions: source.extensions.clone(),
            granularities: granularities.clone(),
            min_tokens: detection.min_tokens,
            default_license: source.default_license.clone(),
            ..IngestConfig::default()
        };
        let run_config = RunConfig {
            detection: detection.clone(),
            granularities,
            default_license: source.default_license.clone(),
            rules: display(&source.rules),
            matrix: display(&matrix.cloned()),
            store: display(&store.cloned()),
            ..RunConfig::default()
        };
        Ok(Self {
            ingest,
            rules,
            matrix: matrix_value,
            detection,
            run_config,
        })
    }
}

fn is_corpus_file(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

fn is_posts_dump(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml"))
}

/// Read a corpus file, or ingest a source tree, archive or posts dump.
pub fn load_corpus(path: &Path, settings: &Settings) -> Result<Corpus> {
    if !path.exists() {
        bail!("{} does not exist", path.display());
    }
    if is_corpus_file(path) {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let fallback = cloneguard_core::ingest::default_corpus_id(path);
        return Ok(Corpus::read_jsonl(BufReader::new(file), &fallback)?);
    }
    if is_posts_dump(path) {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        return Ok(ingest_stackexchange_dump(BufReader::new(file), "", &settings.ingest, &settings.rules)?.corpus);
    }
    let ingested = ingest_directory(path, &settings.ingest, &settings.rules)?;
    for skipped in &ingested.log.skipped {
        tracing::info!(source = %skipped.source, reason = %skipped.reason, "skipped");
    }
    Ok(ingested.corpus)
}

fn collect_stamps(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        let meta = entry.metadata()?;
        if meta.is_dir() {
            collect_stamps(root, &path, out)?;
        } else {
            out.push(stamp(path.strip_prefix(root).unwrap_or(&path), &meta));
        }
    }
    Ok(())
}

fn stamp(rel: &Path, meta: &std::fs::Metadata) -> String {
    let mtime = meta
        .modified()
        .ok()
        .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
        .map_or(0, |d| d.as_nanos());
    format!("{}\t{}\t{}", rel.display(), meta.len(), mtime)
}

/// Identity of an input as seen by the filesystem: path, sizes and
/// modification times of every file, plus the ingest settings. Equal keys
/// ingest to equal corpora.
pub fn source_key(path: &Path, settings: &Settings) -> Result<String> {
    let canonical = path.canonicalize().with_context(|| format!("resolving {}", path.display()))?;
    let mut parts = vec![
        canonical.display().to_string(),
        serde_json::to_string(&settings.ingest)?,
        serde_json::to_string(&settings.rules.rules().iter().map(|r| r.license_id()).collect::<Vec<_>>())?,
    ];
    let meta = std::fs::metadata(&canonical)?;
    if meta.is_dir() {
        collect_stamps(&canonical, &canonical, &mut parts)?;
    } else {
        parts.push(stamp(Path::new(""), &meta));
    }
    Ok(parts.join("\n"))
}

/// Index the corpus at `path`, reusing a stored index when the source is
/// unchanged.
pub fn index_corpus(
    path: &Path,
    settings: &Settings,
    store: Option<&IndexStore>,
) -> Result<(IndexedCorpus, Option<CacheOutcome>)> {
    let Some(store) = store else {
        let corpus = load_corpus(path, settings)?;
        return Ok((IndexedCorpus::build(corpus, &settings.detection), None));
    };
    let key = source_key(path, settings)?;
    if let Some(hash) = store.resolve_source(&key, &settings.detection) {
        if let Some(ic) = store.load(&hash, &settings.detection)? {
            return Ok((ic, Some(CacheOutcome::Hit)));
        }
    }
    let corpus = load_corpus(path, settings)?;
    let (ic, outcome) = store.get_or_build(corpus, &settings.detection)?;
    store.record_source(&key, &ic.corpus.content_hash)?;
    Ok((ic, Some(outcome)))
}

fn same_input(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

/// Result of one local run.
#[derive(Debug, Clone)]
pub struct LocalRun {
    pub corpus: IndexedCorpus,
    pub query_corpus_id: String,
    pub query_hash: String,
    pub pairs: Vec<ClonePair>,
    pub cache: Option<CacheOutcome>,
}

/// Index `corpus_path`, load `query_path` and detect clones.
pub fn run_local(corpus_path: &Path, query_path: &Path, settings: &Settings, store: Option<&IndexStore>) -> Result<LocalRun> {
    let (ic, cache) = index_corpus(corpus_path, settings, store)?;
    let (pairs, query_corpus_id, query_hash) = if same_input(corpus_path, query_path) {
        let pairs = detect_clones(&ic.corpus.blocks, &ic, &settings.detection, &settings.matrix)?;
        (pairs, ic.corpus.corpus_id.clone(), ic.corpus.content_hash.clone())
    } else {
        let query = load_corpus(query_path, settings)?;
        let pairs = detect_clones(&query.blocks, &ic, &settings.detection, &settings.matrix)?;
        (pairs, query.corpus_id, query.content_hash)
    };
    Ok(LocalRun {
        corpus: ic,
        query_corpus_id,
        query_hash,
        pairs: finalize_pairs(pairs),
        cache,
    })
}

#[derive(Serialize)]
struct RunConfigLine<'a> {
    run_config: &'a RunConfig,
}

/// Query output: a `run_config` JSON line, one JSON line per pair, then the
/// license statistics table.
pub fn write_query_output<W: Write>(mut out: W, run_config: &RunConfig, pairs: &[ClonePair]) -> Result<LicenseStats> {
    serde_json::to_writer(&mut out, &RunConfigLine { run_config })?;
    writeln!(out)?;
    for pair in pairs {
        serde_json::to_writer(&mut out, pair)?;
        writeln!(out)?;
    }
    let stats = aggregate_license_stats(pairs);
    out.write_all(stats.render_table().as_bytes())?;
    out.flush()?;
    Ok(stats)
}

pub fn has_conflicts(pairs: &[ClonePair]) -> bool {
    pairs.iter().any(|p| p.verdict == Verdict::Conflict)
}

/// Timing summary printed by `bench`.
#[derive(Debug, Clone, Serialize)]
pub struct BenchSummary {
    pub runs: usize,
    pub corpus_blocks: usize,
    pub pairs: usize,
    pub cold_ms: Vec<f64>,
    pub warm_ms: Vec<f64>,
    pub cold_mean_ms: f64,
    pub warm_mean_ms: f64,
    /// `warm_mean / cold_mean`.
    pub ratio: f64,
    pub warm_hits: usize,
    pub run_config: RunConfig,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// `runs` cold runs (store entry evicted, full ingest and build) followed
/// by `runs` warm runs (fresh store handle, stored index loaded). Every run
/// ends with the same detection pass, and all runs must agree on the pairs.
pub fn bench(corpus_path: &Path, query_path: &Path, settings: &Settings, store_root: &Path, runs: usize) -> Result<BenchSummary> {
    if runs == 0 {
        bail!("--runs must be at least 1");
    }
    let mut cold_ms = Vec::with_capacity(runs);
    let mut warm_ms = Vec::with_capacity(runs);
    let mut warm_hits = 0;
    let mut reference: Option<Vec<ClonePair>> = None;
    let mut corpus_blocks = 0;
    let mut check = |pairs: Vec<ClonePair>| -> Result<()> {
        match &reference {
            Some(r) if *r != pairs => bail!("runs disagree on the pairs"),
            Some(_) => {}
            None => reference = Some(pairs),
        }
        Ok(())
    };
    for _ in 0..runs {
        let store = IndexStore::open(store_root)?;
        if let Some(hash) = store.resolve_source(&source_key(corpus_path, settings)?, &settings.detection) {
            store.evict(&hash)?;
        }
        let t = Instant::now();
        let cold = run_local(corpus_path, query_path, settings, Some(&store))?;
        cold_ms.push(ms(t.elapsed()));
        if cold.cache != Some(CacheOutcome::Miss) {
            bail!("cold run did not rebuild the index");
        }
        check(cold.pairs)?;
    }
    for _ in 0..runs {
        let store = IndexStore::open(store_root)?;
        let t = Instant::now();
        let warm = run_local(corpus_path, query_path, settings, Some(&store))?;
        warm_ms.push(ms(t.elapsed()));
        if warm.cache == Some(CacheOutcome::Hit) {
            warm_hits += 1;
        }
        corpus_blocks = warm.corpus.corpus.len();
        check(warm.pairs)?;
    }
    let pairs = reference.map_or(0, |r| r.len());
    let (cold_mean_ms, warm_mean_ms) = (mean(&cold_ms), mean(&warm_ms));
    Ok(BenchSummary {
        runs,
        corpus_blocks,
        pairs,
        cold_ms,
        warm_ms,
        cold_mean_ms,
        warm_mean_ms,
        ratio: if cold_mean_ms > 0.0 { warm_mean_ms / cold_mean_ms } else { f64::NAN },
        warm_hits,
        run_config: settings.run_config.clone(),
    })
}
