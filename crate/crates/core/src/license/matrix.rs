use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LicenseId, LicenseTag};
use crate::error::ConfigError;

/// Outcome of comparing the licenses on the two sides of a clone pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Compatible,
    Conflict,
    LackOfLicensing,
    Unknown,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Compatible => "compatible",
            Verdict::Conflict => "conflict",
            Verdict::LackOfLicensing => "lack-of-licensing",
            Verdict::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixPair {
    pub a: String,
    pub b: String,
    pub verdict: Verdict,
    /// A directed entry applies to `(a, b)` only.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub directed: bool,
}

/// On-disk matrix file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixFile {
    /// Identifiers the matrix knows about in addition to those named in
    /// `pairs`. Unknown identifiers classify as `unknown`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub licenses: Vec<String>,
    pub pairs: Vec<MatrixPair>,
    pub default_verdict: Verdict,
}

const DEFAULT_MATRIX: &str = include_str!("default_matrix.json");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompatibilityMatrix {
    known: BTreeSet<String>,
    rules: BTreeMap<(String, String), Verdict>,
    default_verdict: Verdict,
}

impl CompatibilityMatrix {
    pub fn from_file(file: MatrixFile) -> Result<Self, ConfigError> {
        let check = |v: Verdict| match v {
            Verdict::Compatible | Verdict::Conflict => Ok(v),
            other => Err(ConfigError::BadVerdict(other.as_str().to_string())),
        };
        let default_verdict = check(file.default_verdict)?;
        let mut known: BTreeSet<String> = file.licenses.into_iter().collect();
        let mut rules = BTreeMap::new();
        // Undirected entries first so explicit directed ones override them.
        let (directed, undirected): (Vec<_>, Vec<_>) = file.pairs.into_iter().partition(|p| p.directed);
        for pair in undirected.into_iter().chain(directed) {
            let verdict = check(pair.verdict)?;
            known.insert(pair.a.clone());
            known.insert(pair.b.clone());
            if !pair.directed {
                rules.insert((pair.b.clone(), pair.a.clone()), verdict);
            }
            rules.insert((pair.a, pair.b), verdict);
        }
        Ok(Self {
            known,
            rules,
            default_verdict,
        })
    }

    pub fn from_json(json: &str) -> Result<Self, ConfigError> {
        Self::from_file(serde_json::from_str(json)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    pub fn knows(&self, id: &str) -> bool {
        self.known.contains(id)
    }

    /// Verdict for two concrete identifiers. Identical identifiers are always
    /// compatible; an identifier the matrix does not know resolves to
    /// `unknown`.
    pub fn lookup(&self, a: &str, b: &str) -> Verdict {
        if a == b {
            return Verdict::Compatible;
        }
        if !self.knows(a) || !self.knows(b) {
            return Verdict::Unknown;
        }
        self.rules
            .get(&(a.to_string(), b.to_string()))
            .copied()
            .unwrap_or(self.default_verdict)
    }

    /// Classify a clone pair's license tags. `NONE` on either side takes
    /// precedence over `UNKNOWN`.
    pub fn classify(&self, a: &LicenseTag, b: &LicenseTag) -> Verdict {
        classify_pair(&a.id, &b.id, self)
    }
}

impl Default for CompatibilityMatrix {
    fn default() -> Self {
        Self::from_json(DEFAULT_MATRIX).expect("shipped matrix is valid")
    }
}

pub fn classify_pair(a: &LicenseId, b: &LicenseId, matrix: &CompatibilityMatrix) -> Verdict {
    match (a, b) {
        (LicenseId::None, _) | (_, LicenseId::None) => Verdict::LackOfLicensing,
        (LicenseId::Unknown, _) | (_, LicenseId::Unknown) => Verdict::Unknown,
        (LicenseId::Known(x), LicenseId::Known(y)) => matrix.lookup(x, y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> LicenseId {
        LicenseId::from(s)
    }

    #[test]
    fn shipped_verdicts() {
        let m = CompatibilityMatrix::default();
        let cases = [
            ("GPL-3.0", "CC-BY-SA-3.0", Verdict::Conflict),
            ("CC-BY-SA-3.0", "CC-BY-SA-3.0", Verdict::Compatible),
            ("MIT", "CC-BY-SA-3.0", Verdict::Conflict),
            ("NONE", "CC-BY-SA-3.0", Verdict::LackOfLicensing),
            ("UNKNOWN", "MIT", Verdict::Unknown),
            ("NONE", "UNKNOWN", Verdict::LackOfLicensing),
            ("MIT", "Apache-2.0", Verdict::Compatible),
            ("Guild-Custom", "CC-BY-SA-3.0", Verdict::Unknown),
        ];
        for (a, b, want) in cases {
            assert_eq!(classify_pair(&id(a), &id(b), &m), want, "{a} vs {b}");
            assert_eq!(classify_pair(&id(b), &id(a), &m), want, "{b} vs {a}");
        }
    }

    #[test]
    fn directed_rule_overrides_one_direction() {
        let m = CompatibilityMatrix::from_json(
            r#"{"pairs":[
                {"a":"Apache-2.0","b":"GPL-3.0","verdict":"conflict"},
                {"a":"Apache-2.0","b":"GPL-3.0","verdict":"compatible","directed":true}
            ],"default_verdict":"conflict"}"#,
        )
        .unwrap();
        assert_eq!(m.lookup("Apache-2.0", "GPL-3.0"), Verdict::Compatible);
        assert_eq!(m.lookup("GPL-3.0", "Apache-2.0"), Verdict::Conflict);
    }

    #[test]
    fn sentinel_verdicts_are_rejected_in_files() {
        let err = CompatibilityMatrix::from_json(r#"{"pairs":[],"default_verdict":"unknown"}"#);
        assert!(matches!(err, Err(ConfigError::BadVerdict(_))));
    }

    #[test]
    fn default_verdict_for_known_unlisted_pairs() {
        let m = CompatibilityMatrix::default();
        assert_eq!(m.lookup("GPL-2.0", "PSF-2.0"), Verdict::Conflict);
    }
}
