use std::io::Write;
use std::path::Path;

use cloneguard_core::corpus::{Granularity, GranularitySet, SourceKind};
use cloneguard_core::ingest::{ingest_directory, IngestConfig};
use cloneguard_core::license::{LicenseId, LicenseProvenance};
use cloneguard_core::stackexchange::ingest_stackexchange_dump;
use cloneguard_core::synth::{python_function, python_tree};
use cloneguard_core::token::tokenize;
use cloneguard_core::{Corpus, RuleSet};
use proptest::prelude::*;
use rand::SeedableRng;

const GPL3_HEADER: &str = "# This program is free software: you can redistribute it and/or modify\n\
# it under the terms of the GNU General Public License as published by\n\
# the Free Software Foundation, either version 3 of the License, or\n\
# (at your option) any later version.\n";

const MIT_LICENSE: &str = "MIT License\n\nPermission is hereby granted, free of charge, to any person \
obtaining a copy of this software and associated documentation files (the \"Software\").\n";

const BODY: &str = "def scale(values, factor):\n    out = []\n    for v in values:\n        out.append(v * factor + 1)\n    return out\n";

fn write(root: &Path, rel: &str, text: &[u8]) {
    let p = root.join(rel);
    std::fs::create_dir_all(p.parent().unwrap()).unwrap();
    std::fs::write(p, text).unwrap();
}

fn small_config() -> IngestConfig {
    IngestConfig {
        min_tokens: 1,
        granularities: "file,module,function".parse().unwrap(),
        ..IngestConfig::default()
    }
}

#[test]
fn three_layer_package_provenance() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "licensed/a.py", format!("{GPL3_HEADER}\n{BODY}").as_bytes());
    write(dir.path(), "pkg/LICENSE", MIT_LICENSE.as_bytes());
    write(dir.path(), "pkg/b.py", BODY.as_bytes());
    write(dir.path(), "bare/c.py", BODY.as_bytes());
    let config = IngestConfig {
        granularities: GranularitySet::only(Granularity::File),
        ..small_config()
    };
    let out = ingest_directory(dir.path(), &config, &RuleSet::default()).unwrap();
    let tag = |path: &str| {
        out.corpus
            .blocks
            .iter()
            .find(|b| b.locator.path == path)
            .unwrap()
            .license
            .clone()
    };
    assert_eq!(tag("licensed/a.py").id, LicenseId::known("GPL-3.0"));
    assert_eq!(tag("licensed/a.py").provenance, LicenseProvenance::Header);
    assert_eq!(tag("pkg/b.py").id, LicenseId::known("MIT"));
    assert_eq!(tag("pkg/b.py").provenance, LicenseProvenance::PackageFile);
    assert_eq!(tag("bare/c.py").id, LicenseId::None);
}

#[test]
fn function_blocks_inherit_file_header() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "a.py", format!("{GPL3_HEADER}\n{BODY}").as_bytes());
    let config = IngestConfig {
        granularities: GranularitySet::only(Granularity::Function),
        ..small_config()
    };
    let out = ingest_directory(dir.path(), &config, &RuleSet::default()).unwrap();
    assert_eq!(out.corpus.blocks.len(), 1);
    assert_eq!(out.corpus.blocks[0].license.provenance, LicenseProvenance::Inherited);
    assert_eq!(out.corpus.blocks[0].license.id, LicenseId::known("GPL-3.0"));
}

#[test]
fn corpus_default_applies_last() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "x.py", BODY.as_bytes());
    let config = IngestConfig {
        default_license: Some("CC-BY-SA-3.0".into()),
        ..small_config()
    };
    let out = ingest_directory(dir.path(), &config, &RuleSet::default()).unwrap();
    assert!(out.corpus.blocks.iter().all(|b| b.license.provenance == LicenseProvenance::CorpusDefault));
}

fn zip_dir(root: &Path, files: &[(String, String)], wrap: &str) -> std::path::PathBuf {
    let path = root.join("proj.zip");
    let mut zip = zip::ZipWriter::new(std::fs::File::create(&path).unwrap());
    let opts = zip::write::SimpleFileOptions::default();
    for (rel, text) in files {
        zip.start_file(format!("{wrap}/{rel}"), opts).unwrap();
        zip.write_all(text.as_bytes()).unwrap();
    }
    zip.finish().unwrap();
    path
}

fn tar_dir(root: &Path, files: &[(String, String)], wrap: &str) -> std::path::PathBuf {
    let path = root.join("proj.tar.gz");
    let gz = flate2::write::GzEncoder::new(std::fs::File::create(&path).unwrap(), flate2::Compression::fast());
    let mut tar = tar::Builder::new(gz);
    for (rel, text) in files {
        let mut header = tar::Header::new_gnu();
        header.set_size(text.len() as u64);
        header.set_mode(0o644);
        header.set_mtime(1_500_000_000);
        header.set_cksum();
        tar.append_data(&mut header, format!("{wrap}/{rel}"), text.as_bytes()).unwrap();
    }
    tar.into_inner().unwrap().finish().unwrap();
    path
}

#[test]
fn archives_hash_like_their_directory() {
    let tree = python_tree(9, 6, 3, 0.3);
    let work = tempfile::tempdir().unwrap();
    let src = work.path().join("proj");
    tree.write_to(&src).unwrap();
    let config = IngestConfig {
        corpus_id: Some("proj".into()),
        ..small_config()
    };
    let rules = RuleSet::default();
    let from_dir = ingest_directory(&src, &config, &rules).unwrap().corpus;
    let from_zip = ingest_directory(&zip_dir(work.path(), &tree.files, "proj"), &config, &rules).unwrap().corpus;
    let from_tar = ingest_directory(&tar_dir(work.path(), &tree.files, "proj"), &config, &rules).unwrap().corpus;
    assert!(!from_dir.is_empty());
    assert_eq!(from_dir.content_hash, from_zip.content_hash);
    assert_eq!(from_dir.content_hash, from_tar.content_hash);
    assert!(from_tar.blocks.iter().all(|b| b.last_modified == Some(1_500_000_000)));
}

#[test]
fn binary_files_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "ok.py", BODY.as_bytes());
    write(dir.path(), "blob.py", &[0x00, 0xff, 0xfe, 0x01, b'x']);
    let out = ingest_directory(dir.path(), &small_config(), &RuleSet::default()).unwrap();
    assert!(out.corpus.blocks.iter().all(|b| b.locator.path == "ok.py"));
    assert_eq!(out.log.skipped.len(), 1);
    assert_eq!(out.log.skipped[0].source, "blob.py");
}

#[test]
fn corpus_file_round_trip_preserves_hash() {
    let dir = tempfile::tempdir().unwrap();
    python_tree(2, 4, 3, 0.2).write_to(dir.path()).unwrap();
    let corpus = ingest_directory(dir.path(), &small_config(), &RuleSet::default()).unwrap().corpus;
    let back = Corpus::read_jsonl(corpus.to_jsonl().as_bytes(), "x").unwrap();
    assert_eq!(back.content_hash, corpus.content_hash);
    assert_eq!(back.blocks, corpus.blocks);
}

#[test]
fn stackexchange_tag_filter() {
    let dump = r#"<?xml version="1.0" encoding="utf-8"?>
<posts>
  <row Id="10" PostTypeId="1" CreationDate="2015-01-01T00:00:00.000" Tags="&lt;python&gt;&lt;list&gt;" Body="&lt;p&gt;How?&lt;/p&gt;&lt;pre&gt;&lt;code&gt;def f(a):&#xA;    return [x * 2 for x in a if x &amp;gt; 3]&#xA;&lt;/code&gt;&lt;/pre&gt;" />
  <row Id="11" PostTypeId="1" CreationDate="2015-01-01T00:00:00.000" Tags="&lt;java&gt;" Body="&lt;pre&gt;&lt;code&gt;class A { int f(int a) { return a * 2 + 3 - 4; } }&lt;/code&gt;&lt;/pre&gt;" />
  <row Id="12" PostTypeId="2" ParentId="10" CreationDate="2015-01-02T00:00:00.000" Body="&lt;pre&gt;&lt;code&gt;def g(a):&#xA;    return list(map(lambda x: x * 2, a))&#xA;&lt;/code&gt;&lt;/pre&gt;" />
</posts>
"#;
    let config = IngestConfig {
        source_kind: SourceKind::StackexchangePost,
        ..small_config()
    };
    let out = ingest_stackexchange_dump(dump.as_bytes(), "python", &config, &RuleSet::default()).unwrap();
    let urls: Vec<_> = out.corpus.blocks.iter().filter_map(|b| b.locator.url.clone()).collect();
    assert!(urls.contains(&"https://stackoverflow.com/q/10".to_string()));
    assert!(urls.contains(&"https://stackoverflow.com/a/12".to_string()));
    assert!(urls.iter().all(|u| !u.ends_with("/11")));
    assert!(out.corpus.blocks.iter().all(|b| b.locator.kind == SourceKind::StackexchangePost));
}

fn decorate(source: &str, seed: u64) -> String {
    // Comments, blank lines and trailing spaces that do not change tokens.
    let mut out = String::from("# leading comment\n\n");
    for (i, line) in source.lines().enumerate() {
        out.push_str(line);
        if (i as u64 + seed).is_multiple_of(3) {
            out.push_str("   # note");
        }
        out.push_str("  \n");
        if (i as u64 + seed).is_multiple_of(4) {
            out.push_str("\n    # indented comment\n");
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tokens_ignore_layout_and_comments(seed in any::<u64>(), statements in 1usize..8) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let src = python_function(&mut rng, "f", statements);
        prop_assert_eq!(tokenize(&src), tokenize(&decorate(&src, seed)));
    }

    #[test]
    fn granularities_nest(seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        python_tree(seed, 3, 3, 0.3).write_to(dir.path()).unwrap();
        let out = ingest_directory(dir.path(), &small_config(), &RuleSet::default()).unwrap();
        let blocks = &out.corpus.blocks;
        for file in blocks.iter().filter(|b| b.granularity == Granularity::File) {
            let parts: Vec<_> = blocks
                .iter()
                .filter(|b| b.granularity != Granularity::File && b.locator.path == file.locator.path)
                .collect();
            for p in &parts {
                prop_assert!(p.tokens.is_sub_multiset_of(&file.tokens));
            }
            let summed: u64 = parts.iter().map(|p| p.total_tokens()).sum();
            prop_assert_eq!(summed, file.total_tokens());
        }
    }

    #[test]
    fn ingest_is_deterministic(seed in any::<u64>()) {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let tree = python_tree(seed, 3, 2, 0.5);
        tree.write_to(a.path()).unwrap();
        tree.write_to(b.path()).unwrap();
        let config = IngestConfig { corpus_id: Some("same".into()), ..small_config() };
        let x = ingest_directory(a.path(), &config, &RuleSet::default()).unwrap().corpus;
        let y = ingest_directory(b.path(), &config, &RuleSet::default()).unwrap().corpus;
        prop_assert_eq!(&x.content_hash, &y.content_hash);
        prop_assert_eq!(x.blocks.len(), y.blocks.len());
    }
}
