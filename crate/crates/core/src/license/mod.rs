//! License inference for code blocks and license compatibility of clone pairs.
//!
//! Detection scans the leading comment region of a file with an ordered set
//! of regular-expression rules. When a block carries no license of its own,
//! resolution falls back to the enclosing file's header, then to `LICENSE` /
//! `COPYING` files in ancestor directories up to the package root, then to
//! a corpus-wide default.

mod header;
mod matrix;

use std::fmt;
use std::path::{Path, PathBuf};

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

pub use header::leading_comment_region;
pub use matrix::{classify_pair, CompatibilityMatrix, MatrixFile, MatrixPair, Verdict};

/// A license identifier or one of the two detection sentinels.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LicenseId {
    Known(String),
    /// Nothing license-bearing was found.
    None,
    /// Something license-like was found but no rule recognized it.
    Unknown,
}

impl LicenseId {
    pub fn known(id: impl Into<String>) -> Self {
        LicenseId::Known(id.into())
    }

    pub fn is_concrete(&self) -> bool {
        matches!(self, LicenseId::Known(_))
    }

    pub fn as_str(&self) -> &str {
        match self {
            LicenseId::Known(s) => s,
            LicenseId::None => "NONE",
            LicenseId::Unknown => "UNKNOWN",
        }
    }
}

impl fmt::Display for LicenseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<&str> for LicenseId {
    fn from(s: &str) -> Self {
        match s {
            "NONE" => LicenseId::None,
            "UNKNOWN" => LicenseId::Unknown,
            other => LicenseId::Known(other.to_string()),
        }
    }
}

impl Serialize for LicenseId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for LicenseId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(LicenseId::from(s.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LicenseProvenance {
    Header,
    PackageFile,
    Inherited,
    CorpusDefault,
}

impl LicenseProvenance {
    pub fn as_str(self) -> &'static str {
        match self {
            LicenseProvenance::Header => "header",
            LicenseProvenance::PackageFile => "package-file",
            LicenseProvenance::Inherited => "inherited",
            LicenseProvenance::CorpusDefault => "corpus-default",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LicenseTag {
    pub id: LicenseId,
    pub provenance: LicenseProvenance,
}

impl LicenseTag {
    pub fn new(id: LicenseId, provenance: LicenseProvenance) -> Self {
        Self { id, provenance }
    }

    pub fn none() -> Self {
        Self::new(LicenseId::None, LicenseProvenance::Header)
    }
}

impl fmt::Display for LicenseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.id, self.provenance.as_str())
    }
}

/// On-disk form of one rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub license_id: String,
    pub patterns: Vec<String>,
}

/// A rule matches when every one of its patterns matches.
#[derive(Debug, Clone)]
pub struct LicenseRule {
    license_id: String,
    patterns: Vec<Regex>,
}

impl LicenseRule {
    pub fn license_id(&self) -> &str {
        &self.license_id
    }

    fn matches(&self, text: &str) -> bool {
        self.patterns.iter().all(|re| re.is_match(text))
    }
}

/// Ordered rule set; the first matching rule wins.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<LicenseRule>,
}

const DEFAULT_RULES: &str = include_str!("default_rules.json");

/// Identifiers every shipped rule set has to cover.
pub const REQUIRED_RULE_IDS: &[&str] = &[
    "GPL-2.0",
    "GPL-3.0",
    "MIT",
    "Apache-2.0",
    "BSD-3-Clause",
    "CC-BY-SA-3.0",
    "PSF-2.0",
];

impl RuleSet {
    pub fn from_specs(specs: &[RuleSpec]) -> Result<Self, ConfigError> {
        let mut rules = Vec::with_capacity(specs.len());
        for spec in specs {
            if spec.patterns.is_empty() {
                return Err(ConfigError::EmptyRule(spec.license_id.clone()));
            }
            if matches!(spec.license_id.as_str(), "NONE" | "UNKNOWN" | "") {
                return Err(ConfigError::ReservedLicenseId(spec.license_id.clone()));
            }
            let patterns = spec
                .patterns
                .iter()
                .map(|p| {
                    RegexBuilder::new(p)
                        .case_insensitive(true)
                        .build()
                        .map_err(|e| ConfigError::BadPattern {
                            license_id: spec.license_id.clone(),
                            source: e,
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rules.push(LicenseRule {
                license_id: spec.license_id.clone(),
                patterns,
            });
        }
        Ok(Self { rules })
    }

    pub fn from_json(json: &str) -> Result<Self, ConfigError> {
        let specs: Vec<RuleSpec> = serde_json::from_str(json)?;
        Self::from_specs(&specs)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    pub fn rules(&self) -> &[LicenseRule] {
        &self.rules
    }

    pub fn covers(&self, license_id: &str) -> bool {
        self.rules.iter().any(|r| r.license_id == license_id)
    }

    /// First rule matching `text`, if any. `text` is whitespace-normalized
    /// so patterns may span line breaks.
    pub fn match_text(&self, text: &str) -> Option<&str> {
        let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ");
        self.rules
            .iter()
            .find(|r| r.matches(&normalized))
            .map(|r| r.license_id.as_str())
    }
}

impl Default for RuleSet {
    fn default() -> Self {
        Self::from_json(DEFAULT_RULES).expect("shipped rule set is valid")
    }
}

/// Scan the leading comment region of `text`.
///
/// A recognized license yields that id; a license-bearing comment that no
/// rule recognizes yields `UNKNOWN`; no such comment yields `NONE`.
pub fn detect_header_license(text: &str, rules: &RuleSet) -> LicenseTag {
    let id = match leading_comment_region(text) {
        None => LicenseId::None,
        Some(region) => match rules.match_text(&region.text) {
            Some(id) => LicenseId::known(id),
            None if region.has_plain_comment => LicenseId::Unknown,
            None => LicenseId::None,
        },
    };
    LicenseTag::new(id, LicenseProvenance::Header)
}

/// Source of package-level license files, so resolution works the same
/// over a real directory and over an unpacked archive.
pub trait PackageTree {
    /// License-file candidates directly inside `dir` (relative to the
    /// package root), as `(file name, contents)`, sorted by name.
    fn license_files(&self, dir: &Path) -> Vec<(String, std::io::Result<String>)>;
}

/// `LICENSE`, `LICENSE.*`, `COPYING`, `COPYING.*`, case-insensitively.
pub fn is_license_file_name(name: &str) -> bool {
    let upper = name.to_ascii_uppercase();
    ["LICENSE", "COPYING"].iter().any(|stem| {
        upper == *stem || (upper.starts_with(stem) && upper[stem.len()..].starts_with('.'))
    })
}

/// Package tree rooted at a filesystem directory.
#[derive(Debug, Clone)]
pub struct FsPackageTree {
    root: PathBuf,
}

impl FsPackageTree {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl PackageTree for FsPackageTree {
    fn license_files(&self, dir: &Path) -> Vec<(String, std::io::Result<String>)> {
        let Ok(entries) = std::fs::read_dir(self.root.join(dir)) else {
            return Vec::new();
        };
        let mut found: Vec<(String, PathBuf)> = entries
            .filter_map(Result::ok)
            .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
            .filter_map(|e| {
                let name = e.file_name().to_str()?.to_string();
                is_license_file_name(&name).then(|| (name, e.path()))
            })
            .collect();
        found.sort();
        found
            .into_iter()
            .map(|(name, path)| (name, std::fs::read_to_string(path)))
            .collect()
    }
}

/// Nearest-first package license lookup for a file at `file_rel_path`.
///
/// Returns `None` when no license file exists anywhere up to the root, and
/// `UNKNOWN` when files exist but none matches a rule.
pub fn package_license(
    file_rel_path: &Path,
    tree: &dyn PackageTree,
    rules: &RuleSet,
) -> Option<LicenseTag> {
    let mut saw_file = false;
    let mut dir = file_rel_path.parent();
    while let Some(d) = dir {
        for (name, contents) in tree.license_files(d) {
            match contents {
                Ok(text) => {
                    saw_file = true;
                    if let Some(id) = rules.match_text(&text) {
                        return Some(LicenseTag::new(
                            LicenseId::known(id),
                            LicenseProvenance::PackageFile,
                        ));
                    }
                }
                Err(e) => {
                    tracing::warn!(dir = %d.display(), file = %name, error = %e, "unreadable license file ignored");
                }
            }
        }
        dir = d.parent();
    }
    saw_file.then(|| LicenseTag::new(LicenseId::Unknown, LicenseProvenance::PackageFile))
}

/// Inputs for resolving one block's license.
#[derive(Debug, Clone, Copy)]
pub struct ResolveInput<'a> {
    pub block_text: &'a str,
    /// Header tag of the enclosing file, for sub-file blocks.
    pub file_header: Option<&'a LicenseTag>,
    /// Path of the source file relative to the package root; `None` when
    /// the block did not come from a filesystem tree.
    pub file_rel_path: Option<&'a Path>,
    pub corpus_default: Option<&'a str>,
}

/// Resolve a block's license with precedence
/// header ≻ inherited file header ≻ package file ≻ corpus default ≻ fallback.
///
/// The fallback is `UNKNOWN` when any stage saw license-bearing text it
/// could not recognize, otherwise `NONE`.
pub fn resolve_with(input: ResolveInput<'_>, tree: Option<&dyn PackageTree>, rules: &RuleSet) -> LicenseTag {
    let own = detect_header_license(input.block_text, rules);
    if own.id.is_concrete() {
        return own;
    }
    let mut fallback = own;
    if let Some(file) = input.file_header {
        if file.id.is_concrete() {
            return LicenseTag::new(file.id.clone(), LicenseProvenance::Inherited);
        }
        if file.id == LicenseId::Unknown {
            fallback = LicenseTag::new(LicenseId::Unknown, LicenseProvenance::Header);
        }
    }
    if let (Some(path), Some(tree)) = (input.file_rel_path, tree) {
        match package_license(path, tree, rules) {
            Some(tag) if tag.id.is_concrete() => return tag,
            Some(tag) => fallback = tag,
            None if fallback.id == LicenseId::None => {
                fallback = LicenseTag::new(LicenseId::None, LicenseProvenance::PackageFile);
            }
            None => {}
        }
    }
    if let Some(default) = input.corpus_default {
        return LicenseTag::new(LicenseId::known(default), LicenseProvenance::CorpusDefault);
    }
    fallback
}

/// Resolve the license of a block that came from a filesystem ingest rooted
/// at `package_root`.
pub fn resolve_license(
    block: &crate::corpus::CodeBlock,
    package_root: &Path,
    rules: &RuleSet,
    corpus_default: Option<&str>,
) -> LicenseTag {
    let rel = Path::new(&block.locator.path);
    let tree = FsPackageTree::new(package_root);
    let file_text = std::fs::read_to_string(package_root.join(rel)).ok();
    let file_header = file_text.as_deref().map(|t| detect_header_license(t, rules));
    resolve_with(
        ResolveInput {
            block_text: &block.raw_text,
            file_header: file_header.as_ref(),
            file_rel_path: Some(rel),
            corpus_default,
        },
        Some(&tree),
        rules,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const GPL3_HEADER: &str = "# This program is free software: you can redistribute it and/or modify\n\
# it under the terms of the GNU General Public License as published by\n\
# the Free Software Foundation, either version 3 of the License, or\n\
# (at your option) any later version.\n\nimport os\n";

    const MIT_TEXT: &str = "MIT License\n\nCopyright (c) 2017 Someone\n\n\
Permission is hereby granted, free of charge, to any person obtaining a copy\n\
of this software and associated documentation files (the \"Software\")...\n";

    #[test]
    fn default_rules_cover_required_ids() {
        let rules = RuleSet::default();
        for id in REQUIRED_RULE_IDS {
            assert!(rules.covers(id), "{id}");
        }
    }

    #[test]
    fn gpl3_header() {
        let tag = detect_header_license(GPL3_HEADER, &RuleSet::default());
        assert_eq!(tag, LicenseTag::new(LicenseId::known("GPL-3.0"), LicenseProvenance::Header));
    }

    #[test]
    fn gpl2_is_not_mistaken_for_gpl3() {
        let text = "# GNU General Public License as published by the Free Software Foundation;\n\
# either version 2 of the License, or (at your option) any later version.\n";
        assert_eq!(detect_header_license(text, &RuleSet::default()).id, LicenseId::known("GPL-2.0"));
    }

    #[test]
    fn no_comments_is_none() {
        let tag = detect_header_license("def f(x):\n    return x\n", &RuleSet::default());
        assert_eq!(tag.id, LicenseId::None);
    }

    #[test]
    fn unrecognized_comment_is_unknown() {
        let tag = detect_header_license(
            "# all rights reserved to the Guild\nx = 1\n",
            &RuleSet::default(),
        );
        assert_eq!(tag.id, LicenseId::Unknown);
    }

    #[test]
    fn shebang_and_coding_lines_are_not_license_comments() {
        let text = "#!/usr/bin/env python\n# -*- coding: utf-8 -*-\nx = 1\n";
        assert_eq!(detect_header_license(text, &RuleSet::default()).id, LicenseId::None);
    }

    #[test]
    fn license_in_docstring_is_found_but_plain_docstring_is_not_unknown() {
        let rules = RuleSet::default();
        let licensed = "\"\"\"Utility module.\n\nLicensed under the MIT License.\n\"\"\"\nx = 1\n";
        assert_eq!(detect_header_license(licensed, &rules).id, LicenseId::known("MIT"));
        let plain = "\"\"\"Utility module.\"\"\"\nx = 1\n";
        assert_eq!(detect_header_license(plain, &rules).id, LicenseId::None);
    }

    #[test]
    fn first_match_wins_in_rule_order() {
        let rules = RuleSet::from_specs(&[
            RuleSpec { license_id: "A".into(), patterns: vec!["shared".into()] },
            RuleSpec { license_id: "B".into(), patterns: vec!["shared".into()] },
        ])
        .unwrap();
        assert_eq!(detect_header_license("# shared text\n", &rules).id, LicenseId::known("A"));
    }

    #[test]
    fn rule_validation() {
        assert!(matches!(
            RuleSet::from_specs(&[RuleSpec { license_id: "X".into(), patterns: vec![] }]),
            Err(ConfigError::EmptyRule(_))
        ));
        assert!(RuleSet::from_specs(&[RuleSpec { license_id: "X".into(), patterns: vec!["(".into()] }]).is_err());
        assert!(RuleSet::from_specs(&[RuleSpec { license_id: "NONE".into(), patterns: vec!["x".into()] }]).is_err());
    }

    #[test]
    fn license_file_names() {
        for ok in ["LICENSE", "license", "LICENSE.txt", "License.md", "COPYING", "copying.lesser"] {
            assert!(is_license_file_name(ok), "{ok}");
        }
        for bad in ["LICENSES", "license_check.py", "README", "COPYINGS"] {
            assert!(!is_license_file_name(bad), "{bad}");
        }
    }

    fn write(root: &Path, rel: &str, text: &str) {
        let p = root.join(rel);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, text).unwrap();
    }

    fn resolve_file(root: &Path, rel: &str, default: Option<&str>) -> LicenseTag {
        let text = std::fs::read_to_string(root.join(rel)).unwrap();
        let rules = RuleSet::default();
        let header = detect_header_license(&text, &rules);
        resolve_with(
            ResolveInput {
                block_text: &text,
                file_header: Some(&header),
                file_rel_path: Some(Path::new(rel)),
                corpus_default: default,
            },
            Some(&FsPackageTree::new(root)),
            &rules,
        )
    }

    #[test]
    fn package_file_fallback() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "LICENSE", MIT_TEXT);
        write(dir.path(), "pkg/sub/mod.py", "def f():\n    return 1\n");
        let tag = resolve_file(dir.path(), "pkg/sub/mod.py", None);
        assert_eq!(tag, LicenseTag::new(LicenseId::known("MIT"), LicenseProvenance::PackageFile));
    }

    #[test]
    fn header_beats_package_file() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "LICENSE", MIT_TEXT);
        write(dir.path(), "gpl.py", GPL3_HEADER);
        let tag = resolve_file(dir.path(), "gpl.py", None);
        assert_eq!(tag, LicenseTag::new(LicenseId::known("GPL-3.0"), LicenseProvenance::Header));
    }

    #[test]
    fn nearest_license_file_wins() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "LICENSE", MIT_TEXT);
        write(dir.path(), "vendored/COPYING", "GNU General Public License version 3");
        write(dir.path(), "vendored/x.py", "x = 1\n");
        assert_eq!(resolve_file(dir.path(), "vendored/x.py", None).id, LicenseId::known("GPL-3.0"));
    }

    #[test]
    fn corpus_default_and_none() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "bare.py", "x = 1\n");
        let tag = resolve_file(dir.path(), "bare.py", Some("CC-BY-SA-3.0"));
        assert_eq!(tag, LicenseTag::new(LicenseId::known("CC-BY-SA-3.0"), LicenseProvenance::CorpusDefault));
        let tag = resolve_file(dir.path(), "bare.py", None);
        assert_eq!(tag, LicenseTag::new(LicenseId::None, LicenseProvenance::PackageFile));
    }

    #[test]
    fn unrecognized_license_file_is_unknown() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "LICENSE", "Custom terms: do whatever the Guild allows.");
        write(dir.path(), "a.py", "x = 1\n");
        assert_eq!(
            resolve_file(dir.path(), "a.py", None),
            LicenseTag::new(LicenseId::Unknown, LicenseProvenance::PackageFile)
        );
    }

    #[test]
    fn function_blocks_inherit_file_header() {
        let rules = RuleSet::default();
        let header = detect_header_license(GPL3_HEADER, &rules);
        let tag = resolve_with(
            ResolveInput {
                block_text: "def f():\n    return 1\n",
                file_header: Some(&header),
                file_rel_path: None,
                corpus_default: None,
            },
            None,
            &rules,
        );
        assert_eq!(tag, LicenseTag::new(LicenseId::known("GPL-3.0"), LicenseProvenance::Inherited));
    }

    #[test]
    fn license_id_serde() {
        let tag = LicenseTag::new(LicenseId::None, LicenseProvenance::PackageFile);
        let json = serde_json::to_string(&tag).unwrap();
        assert_eq!(json, r#"{"id":"NONE","provenance":"package-file"}"#);
        assert_eq!(serde_json::from_str::<LicenseTag>(&json).unwrap(), tag);
    }
}
