//! License statistics, pair sampling, attribution scanning and report
//! rendering.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use html_escape::{encode_double_quoted_attribute, encode_text};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock;
use crate::corpus::{CodeBlock, GranularitySet, SourceKind};
use crate::engine::{ClonePair, DetectionConfig, PairSide, SizeClass};
use crate::error::ReportError;
use crate::license::Verdict;

/// Characters of context kept on each side of an attribution match.
pub const ATTRIBUTION_CONTEXT_CHARS: usize = 80;

/// Effective settings of a run, echoed into every output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub detection: DetectionConfig,
    pub granularities: GranularitySet,
    pub default_license: Option<String>,
    pub rules: Option<String>,
    pub matrix: Option<String>,
    pub store: Option<String>,
    pub apprentices: Vec<String>,
    pub manager: Option<String>,
}


#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatCategory {
    Conflict,
    Compatible,
    LackOfLicensing,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsRow {
    pub label: String,
    pub category: StatCategory,
    /// License the conflict is attributed to; only set for conflicts.
    pub license: Option<String>,
    pub count: u64,
    /// Percent of all pairs, two decimals.
    pub percent: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LicenseStats {
    pub total_pairs: u64,
    pub rows: Vec<StatsRow>,
}

impl LicenseStats {
    pub fn row(&self, label: &str) -> Option<&StatsRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Fixed-width text table with the columns License, Clone Pairs and
    /// Percent of Clones.
    pub fn render_table(&self) -> String {
        let mut lines = vec![
            ("License".to_string(), "Clone Pairs".to_string(), "Percent of Clones".to_string()),
            ("Total clones".to_string(), self.total_pairs.to_string(), "-".to_string()),
        ];
        for row in &self.rows {
            lines.push((row.label.clone(), row.count.to_string(), format!("{}%", row.percent)));
        }
        let w0 = lines.iter().map(|l| l.0.len()).max().unwrap_or(0);
        let w1 = lines.iter().map(|l| l.1.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (i, (a, b, c)) in lines.iter().enumerate() {
            let _ = writeln!(out, "{a:<w0$} | {b:>w1$} | {c}");
            if i == 0 {
                let _ = writeln!(out, "{}", "-".repeat(w0 + w1 + 6 + "Percent of Clones".len()));
            }
        }
        out
    }
}

/// `count / total` as a percentage rounded half-up to two decimals.
pub fn percent(count: u64, total: u64) -> String {
    if total == 0 {
        return "0.00".to_string();
    }
    let bp = (u128::from(count) * 20_000 + u128::from(total)) / (2 * u128::from(total));
    format!("{}.{:02}", bp / 100, bp % 100)
}

/// License a conflict is attributed to: the side that is not a
/// StackExchange post, or the query side when that does not decide it.
pub fn conflict_license(pair: &ClonePair) -> String {
    let q_post = pair.query.locator.kind == SourceKind::StackexchangePost;
    let c_post = pair.corpus.locator.kind == SourceKind::StackexchangePost;
    let side = if q_post && !c_post { &pair.corpus } else { &pair.query };
    side.license.id.to_string()
}

/// Count pairs per verdict, with conflicts split by license.
pub fn aggregate_license_stats(pairs: &[ClonePair]) -> LicenseStats {
    let total = pairs.len() as u64;
    let mut conflicts: BTreeMap<String, u64> = BTreeMap::new();
    let (mut compatible, mut lack, mut unknown) = (0u64, 0u64, 0u64);
    for p in pairs {
        match p.verdict {
            Verdict::Conflict => *conflicts.entry(conflict_license(p)).or_insert(0) += 1,
            Verdict::Compatible => compatible += 1,
            Verdict::LackOfLicensing => lack += 1,
            Verdict::Unknown => unknown += 1,
        }
    }
    let mut conflict_rows: Vec<(String, u64)> = conflicts.into_iter().collect();
    conflict_rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut rows: Vec<StatsRow> = conflict_rows
        .into_iter()
        .map(|(license, count)| StatsRow {
            label: format!("{license} conflicts"),
            category: StatCategory::Conflict,
            license: Some(license),
            count,
            percent: percent(count, total),
        })
        .collect();
    for (label, category, count) in [
        ("Compatible", StatCategory::Compatible, compatible),
        ("Lack of licensing", StatCategory::LackOfLicensing, lack),
        ("Unknown license", StatCategory::Unknown, unknown),
    ] {
        rows.push(StatsRow {
            label: label.to_string(),
            category,
            license: None,
            count,
            percent: percent(count, total),
        });
    }
    LicenseStats {
        total_pairs: total,
        rows,
    }
}

/// Apprentice that contributed to a report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSource {
    pub apprentice_id: String,
    pub base_url: Option<String>,
    pub corpus_id: Option<String>,
    pub corpus_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloneReport {
    pub report_id: String,
    pub query_set_id: String,
    pub sources: Vec<ReportSource>,
    pub pairs: Vec<ClonePair>,
    pub stats: LicenseStats,
    pub created_at: i64,
    pub run_config: RunConfig,
    /// Set when at least one apprentice failed.
    pub partial: bool,
    pub failures: Vec<String>,
}

impl CloneReport {
    /// Assemble a report; the id is derived from the inputs so identical
    /// runs produce identical reports.
    pub fn new(
        query_set_id: impl Into<String>,
        sources: Vec<ReportSource>,
        pairs: Vec<ClonePair>,
        run_config: RunConfig,
        failures: Vec<String>,
    ) -> Self {
        let query_set_id = query_set_id.into();
        let stats = aggregate_license_stats(&pairs);
        let report_id = report_id(&query_set_id, &sources, &pairs, &run_config, &failures);
        Self {
            report_id,
            query_set_id,
            sources,
            pairs,
            stats,
            created_at: clock::now_utc_seconds(),
            run_config,
            partial: !failures.is_empty(),
            failures,
        }
    }

    /// Whether the stored stats match a recomputation from the pairs.
    pub fn stats_consistent(&self) -> bool {
        aggregate_license_stats(&self.pairs) == self.stats
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(json)?)
    }
}

fn report_id(
    query_set_id: &str,
    sources: &[ReportSource],
    pairs: &[ClonePair],
    run_config: &RunConfig,
    failures: &[String],
) -> String {
    let mut h = Sha256::new();
    h.update(query_set_id.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(sources).expect("sources serialize"));
    h.update(serde_json::to_vec(run_config).expect("config serializes"));
    h.update(serde_json::to_vec(failures).expect("failures serialize"));
    for p in pairs {
        h.update(p.query_block_id.as_bytes());
        h.update([0]);
        h.update(p.corpus_block_id.as_bytes());
        h.update([0]);
    }
    format!("r-{}", &hex::encode(h.finalize())[..16])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub pairs: Vec<ClonePair>,
    /// Size of the filtered population.
    pub population: usize,
    /// The population was smaller than requested and was returned whole.
    pub short: bool,
}

/// Uniform sample without replacement, in report order. The same seed
/// always selects the same pairs.
pub fn sample_pairs(
    pairs: &[ClonePair],
    n: usize,
    size_class: Option<SizeClass>,
    seed: u64,
) -> Result<Sample, ReportError> {
    if n == 0 {
        return Err(ReportError::EmptySample);
    }
    let population: Vec<&ClonePair> = pairs
        .iter()
        .filter(|p| size_class.is_none_or(|c| p.size_class == c))
        .collect();
    if population.len() <= n {
        return Ok(Sample {
            short: population.len() < n,
            population: population.len(),
            pairs: population.into_iter().cloned().collect(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, population.len(), n).into_vec();
    picked.sort_unstable();
    Ok(Sample {
        pairs: picked.into_iter().map(|i| population[i].clone()).collect(),
        population: population.len(),
        short: false,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionMatch {
    pub block_id: String,
    pub pattern: String,
    pub snippet: String,
}

fn compile_pattern(p: &str) -> Regex {
    RegexBuilder::new(p)
        .case_insensitive(true)
        .build()
        .unwrap_or_else(|_| {
            RegexBuilder::new(&regex::escape(p))
                .case_insensitive(true)
                .build()
                .expect("escaped literal compiles")
        })
}

fn floor_boundary(s: &str, mut i: usize) -> usize {
    while !s.is_char_boundary(i) {
        i -= 1;
    }
    i
}

fn ceil_boundary(s: &str, mut i: usize) -> usize {
    while i < s.len() && !s.is_char_boundary(i) {
        i += 1;
    }
    i
}

fn snippet(text: &str, start: usize, end: usize) -> String {
    let before = text[..start].char_indices().rev().nth(ATTRIBUTION_CONTEXT_CHARS - 1);
    let from = before.map_or(0, |(i, _)| i);
    let to = text[end..]
        .char_indices()
        .nth(ATTRIBUTION_CONTEXT_CHARS)
        .map_or(text.len(), |(i, _)| end + i);
    text[floor_boundary(text, from)..ceil_boundary(text, to)].to_string()
}

/// Case-insensitive scan of post text for attribution notices.
///
/// Each pattern is a regular expression, or a literal when it does not
/// compile as one. A block's surrounding text is scanned when present,
/// otherwise its raw text; each source text and pattern yields at most one
/// match.
pub fn scan_attribution(blocks: &[CodeBlock], patterns: &[String]) -> Result<Vec<AttributionMatch>, ReportError> {
    if patterns.is_empty() {
        return Err(ReportError::NoPatterns);
    }
    let compiled: Vec<(&String, Regex)> = patterns.iter().map(|p| (p, compile_pattern(p))).collect();
    let mut seen: HashSet<(String, usize)> = HashSet::new();
    let mut out = Vec::new();
    for block in blocks {
        let (text, source) = match &block.context {
            Some(ctx) => (
                ctx.as_str(),
                block.locator.url.clone().unwrap_or_else(|| block.locator.path.clone()),
            ),
            None => (block.raw_text.as_str(), block.block_id.clone()),
        };
        for (i, (pattern, re)) in compiled.iter().enumerate() {
            if let Some(m) = re.find(text) {
                if seen.insert((source.clone(), i)) {
                    out.push(AttributionMatch {
                        block_id: block.block_id.clone(),
                        pattern: (*pattern).clone(),
                        snippet: snippet(text, m.start(), m.end()),
                    });
                }
            }
        }
    }
    Ok(out)
}

fn format_time(secs: Option<i64>) -> String {
    secs.and_then(|s| chrono::DateTime::from_timestamp(s, 0))
        .map(|t| t.format("%Y-%m-%d %H:%M:%SZ").to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

fn side_html(out: &mut String, title: &str, side: &PairSide) {
    let loc = &side.locator;
    let place = format!("{}:{}-{}", loc.path, loc.start_line, loc.end_line);
    let _ = writeln!(out, "<td class=\"side\">");
    let _ = writeln!(out, "<div class=\"meta\"><strong>{}</strong> ({})<br>", title, encode_text(&side.corpus_id));
    match &loc.url {
        Some(url) => {
            let _ = writeln!(
                out,
                "<a href=\"{}\">{}</a><br>",
                encode_double_quoted_attribute(url),
                encode_text(&place)
            );
        }
        None => {
            let _ = writeln!(out, "<span class=\"path\">{}</span><br>", encode_text(&place));
        }
    }
    let _ = writeln!(
        out,
        "license: {} ({})<br>modified: {}</div>",
        encode_text(side.license.id.as_str()),
        side.license.provenance.as_str(),
        format_time(side.last_modified)
    );
    let _ = writeln!(out, "<pre><code>{}</code></pre>", encode_text(&side.raw_text));
    let _ = writeln!(out, "</td>");
}

const STYLE: &str = "body{font-family:sans-serif;margin:1em}\
table{border-collapse:collapse}\
td,th{border:1px solid #999;padding:4px;vertical-align:top}\
td.side{width:50%}\
pre{margin:0;white-space:pre-wrap}\
.conflict{color:#b00}";

/// Standalone HTML page: statistics table, then each pair with both
/// snippets side by side.
pub fn render_html(report: &CloneReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "<!DOCTYPE html>");
    let _ = writeln!(out, "<html><head><meta charset=\"utf-8\">");
    let _ = writeln!(out, "<title>Clone report {}</title>", encode_text(&report.report_id));
    let _ = writeln!(out, "<style>{STYLE}</style></head><body>");
    let _ = writeln!(out, "<h1>Clone report {}</h1>", encode_text(&report.report_id));
    let _ = writeln!(
        out,
        "<p>query set {} &middot; created {} &middot; theta {} &middot; min tokens {}</p>",
        encode_text(&report.query_set_id),
        format_time(Some(report.created_at)),
        report.run_config.detection.theta,
        report.run_config.detection.min_tokens
    );
    if report.partial {
        let _ = writeln!(out, "<p class=\"conflict\">Partial report. Failures:</p><ul>");
        for f in &report.failures {
            let _ = writeln!(out, "<li>{}</li>", encode_text(f));
        }
        let _ = writeln!(out, "</ul>");
    }

    let _ = writeln!(out, "<table class=\"stats\">");
    let _ = writeln!(out, "<tr><th>License</th><th>Clone Pairs</th><th>Percent of Clones</th></tr>");
    let _ = writeln!(out, "<tr><td>Total clones</td><td>{}</td><td>-</td></tr>", report.stats.total_pairs);
    for row in &report.stats.rows {
        let _ = writeln!(
            out,
            "<tr><td>{}</td><td>{}</td><td>{}%</td></tr>",
            encode_text(&row.label),
            row.count,
            row.percent
        );
    }
    let _ = writeln!(out, "</table>");

    let _ = writeln!(out, "<h2>Pairs</h2>");
    let _ = writeln!(out, "<table class=\"pairs\">");
    for (i, p) in report.pairs.iter().enumerate() {
        let class = if p.verdict == Verdict::Conflict { " class=\"conflict\"" } else { "" };
        let _ = writeln!(
            out,
            "<tr><th colspan=\"2\"{class}>#{} {} &harr; {} &middot; verdict {} &middot; similarity {:.4} (overlap {}, required {}) &middot; {}</th></tr>",
            i + 1,
            encode_text(&p.query_block_id),
            encode_text(&p.corpus_block_id),
            p.verdict,
            p.similarity,
            p.overlap,
            p.required,
            p.size_class
        );
        let _ = writeln!(out, "<tr>");
        side_html(&mut out, "query", &p.query);
        side_html(&mut out, "corpus", &p.corpus);
        let _ = writeln!(out, "</tr>");
    }
    let _ = writeln!(out, "</table>");
    let _ = writeln!(out, "</body></html>");
    out
}

pub fn render_json(report: &CloneReport) -> String {
    report.to_json()
}
