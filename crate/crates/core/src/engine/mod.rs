//! Clone detection by multiset token overlap.
//!
//! Two blocks are clones when the sum over shared tokens of the smaller
//! frequency reaches `ceil(theta * max(|a|, |b|))`. Candidate pairs come from
//! an inverted index over each corpus block's prefix in global token-rarity
//! order, which finds every pair the exhaustive comparison would.

mod detect;
mod index;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{CodeBlock, SourceLocator};
use crate::error::ConfigError;
use crate::license::{LicenseTag, Verdict};
use crate::token::TokenBag;

pub use detect::{detect_clones, detect_exhaustive};
pub use index::{build_index, IndexedBlock, IndexedCorpus, InvertedIndex, Posting};

pub const DEFAULT_THETA: f64 = 0.8;
pub const DEFAULT_MIN_TOKENS: u64 = 23;

const THETA_SCALE: u64 = 1_000_000;

/// Overlap threshold in (0, 1], held as an exact count of millionths so
/// `ceil(theta * n)` has no floating-point drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Theta(u32);

impl Theta {
    pub fn new(value: f64) -> Result<Self, ConfigError> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(ConfigError::Theta(value));
        }
        let scaled = (value * THETA_SCALE as f64).round() as u32;
        if scaled == 0 {
            return Err(ConfigError::Theta(value));
        }
        Ok(Self(scaled))
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / THETA_SCALE as f64
    }

    pub fn millionths(self) -> u32 {
        self.0
    }

    /// `ceil(theta * total)`.
    pub fn required(self, total: u64) -> u64 {
        let num = u128::from(self.0) * u128::from(total);
        num.div_ceil(u128::from(THETA_SCALE)) as u64
    }

    /// Number of leading tokens (in global order) that must be indexed for
    /// a block of `total` tokens: `total - ceil(theta * total) + 1`.
    pub fn prefix_len(self, total: u64) -> u64 {
        if total == 0 {
            0
        } else {
            total - self.required(total) + 1
        }
    }
}

impl Default for Theta {
    fn default() -> Self {
        Self::new(DEFAULT_THETA).expect("default theta is valid")
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl Serialize for Theta {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for Theta {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Theta::new(v).map_err(serde::de::Error::custom)
    }
}

/// Which block size the threshold is taken against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Denominator {
    /// `max(|query|, |corpus|)`: symmetric and the stricter reading.
    #[default]
    Max,
    /// `|query|` only. Disables prefix filtering.
    Query,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub theta: Theta,
    pub min_tokens: u64,
    pub exclude_self_pairs: bool,
    pub denominator: Denominator,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            theta: Theta::default(),
            min_tokens: DEFAULT_MIN_TOKENS,
            exclude_self_pairs: true,
            denominator: Denominator::Max,
        }
    }
}

impl DetectionConfig {
    pub fn with_theta(theta: f64) -> Result<Self, ConfigError> {
        Ok(Self {
            theta: Theta::new(theta)?,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.min_tokens < 1 {
            return Err(ConfigError::MinTokens);
        }
        Ok(())
    }

    /// Overlap needed for a pair with these sizes.
    pub fn required(&self, query_total: u64, corpus_total: u64) -> u64 {
        match self.denominator {
            Denominator::Max => self.theta.required(query_total.max(corpus_total)),
            Denominator::Query => self.theta.required(query_total),
        }
    }
}

/// Sum over shared tokens of the smaller frequency.
pub fn overlap(a: &TokenBag, b: &TokenBag) -> u64 {
    let (small, large) = if a.distinct() <= b.distinct() { (a, b) } else { (b, a) };
    small
        .iter()
        .map(|(tok, freq)| u64::from(freq.min(large.get(tok))))
        .sum()
}

/// Clone predicate with the symmetric `max` denominator.
pub fn is_clone(a: &TokenBag, b: &TokenBag, theta: Theta) -> bool {
    overlap(a, b) >= theta.required(a.total().max(b.total()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        }
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SizeClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "small" => Ok(SizeClass::Small),
            "medium" => Ok(SizeClass::Medium),
            "large" => Ok(SizeClass::Large),
            other => Err(format!("unknown size class {other:?}")),
        }
    }
}

/// 1-10 lines small, 11-20 medium, more than 20 large.
pub fn size_class(line_count: usize) -> SizeClass {
    match line_count {
        0..=10 => SizeClass::Small,
        11..=20 => SizeClass::Medium,
        _ => SizeClass::Large,
    }
}

/// One side of a clone pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSide {
    pub corpus_id: String,
    pub locator: SourceLocator,
    pub license: LicenseTag,
    pub last_modified: Option<i64>,
    pub total_tokens: u64,
    pub raw_text: String,
}

impl From<&CodeBlock> for PairSide {
    fn from(b: &CodeBlock) -> Self {
        Self {
            corpus_id: b.corpus_id.clone(),
            locator: b.locator.clone(),
            license: b.license.clone(),
            last_modified: b.last_modified,
            total_tokens: b.total_tokens(),
            raw_text: b.raw_text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClonePair {
    pub query_block_id: String,
    pub corpus_block_id: String,
    pub overlap: u64,
    pub required: u64,
    pub similarity: f64,
    pub size_class: SizeClass,
    pub verdict: Verdict,
    pub query: PairSide,
    pub corpus: PairSide,
}

impl ClonePair {
    pub fn key(&self) -> (&str, &str) {
        (&self.query_block_id, &self.corpus_block_id)
    }
}

/// Merge step shared by local and distributed runs: drop duplicate
/// `(query, corpus)` keys, keep one of each mirrored pair when a corpus is
/// queried against itself, and sort by `(query, corpus)` id.
pub fn finalize_pairs(mut pairs: Vec<ClonePair>) -> Vec<ClonePair> {
    pairs.sort_by(|a, b| a.key().cmp(&b.key()));
    pairs.dedup_by(|a, b| a.key() == b.key());
    let keys: HashSet<(String, String)> = pairs
        .iter()
        .map(|p| (p.query_block_id.clone(), p.corpus_block_id.clone()))
        .collect();
    pairs.retain(|p| {
        let same_corpus = p.query.corpus_id == p.corpus.corpus_id;
        let mirrored = keys.contains(&(p.corpus_block_id.clone(), p.query_block_id.clone()));
        !(same_corpus && mirrored && p.query_block_id > p.corpus_block_id)
    });
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bag(pairs: &[(&str, u32)]) -> TokenBag {
        let mut b = TokenBag::new();
        for (t, n) in pairs {
            b.add(*t, *n);
        }
        b
    }

    fn bag_of_total(prefix: &str, n: usize) -> TokenBag {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn overlap_examples() {
        let a = bag(&[("a", 2), ("b", 1)]);
        let b = bag(&[("a", 1), ("b", 1), ("c", 1)]);
        assert_eq!(overlap(&a, &b), 2);
        assert_eq!(overlap(&a, &a), a.total());
        assert_eq!(overlap(&a, &bag(&[("z", 4)])), 0);
    }

    #[test]
    fn threshold_arithmetic() {
        let t = Theta::new(0.8).unwrap();
        assert_eq!(t.required(10), 8);
        assert_eq!(t.prefix_len(10), 3);
        assert_eq!(Theta::new(1.0).unwrap().prefix_len(37), 1);
        // 0.7 * 10 is 7.000000000000001 in binary floating point.
        assert_eq!(Theta::new(0.7).unwrap().required(10), 7);
        assert_eq!(Theta::new(0.7).unwrap().required(11), 8);
        assert!(Theta::new(0.0).is_err());
        assert!(Theta::new(1.01).is_err());
        assert!(Theta::new(f64::NAN).is_err());
    }

    #[test]
    fn is_clone_examples() {
        let t = Theta::new(0.8).unwrap();
        // Totals 10 and 10 sharing k tokens.
        let make = |shared: usize| {
            let a = bag_of_total("s", 10);
            let mut b: TokenBag = (0..shared).map(|i| format!("s{i}")).collect();
            for i in 0..10 - shared {
                b.insert(format!("o{i}"));
            }
            (a, b)
        };
        let (a, b) = make(8);
        assert!(is_clone(&a, &b, t));
        let (a, b) = make(7);
        assert!(!is_clone(&a, &b, t));
        assert!(is_clone(&a, &a, Theta::new(1.0).unwrap()));
    }

    #[test]
    fn size_classes() {
        assert_eq!(size_class(1), SizeClass::Small);
        assert_eq!(size_class(10), SizeClass::Small);
        assert_eq!(size_class(11), SizeClass::Medium);
        assert_eq!(size_class(20), SizeClass::Medium);
        assert_eq!(size_class(21), SizeClass::Large);
    }

    #[test]
    fn theta_serde() {
        let cfg = DetectionConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(json, r#"{"theta":0.8,"min_tokens":23,"exclude_self_pairs":true,"denominator":"max"}"#);
        assert!(serde_json::from_str::<DetectionConfig>(r#"{"theta":1.5}"#).is_err());
        let partial: DetectionConfig = serde_json::from_str(r#"{"theta":0.7}"#).unwrap();
        assert_eq!(partial.min_tokens, 23);
    }
}
