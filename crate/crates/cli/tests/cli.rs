use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use cloneguard_core::{CloneReport, Corpus};

const BIN: &str = env!("CARGO_BIN_EXE_cloneguard");

const MIT_TEXT: &str = "MIT License\n\nPermission is hereby granted, free of charge, to any person obtaining a copy\nof this software and associated documentation files.\n";

const POSTS: &str = r#"<?xml version="1.0" encoding="utf-8"?>
<posts>
  <row Id="10" PostTypeId="1" CreationDate="2015-01-01T00:00:00.000" Tags="&lt;python&gt;&lt;list&gt;" Body="&lt;p&gt;How? Credit to the original answer.&lt;/p&gt;&lt;pre&gt;&lt;code&gt;def doubled(values):&#xA;    return [x * 2 for x in values if x &amp;gt; 3]&#xA;&lt;/code&gt;&lt;/pre&gt;" />
  <row Id="11" PostTypeId="1" CreationDate="2015-01-01T00:00:00.000" Tags="&lt;java&gt;" Body="&lt;pre&gt;&lt;code&gt;class A { int f(int a) { return a * 2 + 3 - 4; } }&lt;/code&gt;&lt;/pre&gt;" />
  <row Id="12" PostTypeId="2" ParentId="10" CreationDate="2015-01-02T00:00:00.000" Body="&lt;pre&gt;&lt;code&gt;def g(a):&#xA;    return list(map(lambda x: x * 2, a))&#xA;&lt;/code&gt;&lt;/pre&gt;" />
</posts>
"#;

const COPIED: &str = "def doubled(values):\n    return [x * 2 for x in values if x > 3]\n";

fn cli() -> Command {
    let mut cmd = Command::new(BIN);
    cmd.env("SOURCE_DATE_EPOCH", "1700000000").env_remove("CLONEGUARD_LOG");
    cmd
}

fn run(args: &[&str]) -> Output {
    cli().args(args).output().expect("spawn cloneguard")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write(root: &Path, rel: &str, text: &str) {
    let path = root.join(rel);
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, text).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Posts.xml ingested as a StackExchange corpus plus an MIT project copying one post.
fn conflict_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let posts = dir.join("Posts.xml");
    std::fs::write(&posts, POSTS).unwrap();
    let se = dir.join("se.jsonl");
    let out = run(&["ingest", p(&posts), "-o", p(&se), "--stackexchange", "--tag", "python", "--min-tokens", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let project = dir.join("project");
    write(&project, "LICENSE", MIT_TEXT);
    write(&project, "util.py", COPIED);
    (se, project)
}

#[test]
fn missing_source_exits_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["ingest", p(&dir.path().join("absent")), "-o", p(&dir.path().join("c.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

#[test]
fn usage_errors_exit_with_error() {
    assert_eq!(run(&["query"]).status.code(), Some(2));
    assert_eq!(run(&["serve"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn stackexchange_ingest_filters_by_tag() {
    let dir = tempfile::tempdir().unwrap();
    let (se, _) = conflict_fixture(dir.path());
    let corpus = Corpus::read_jsonl(BufReader::new(std::fs::File::open(&se).unwrap()), "se").unwrap();
    let urls: Vec<String> = corpus.blocks.iter().filter_map(|b| b.locator.url.clone()).collect();
    assert_eq!(urls.len(), 2);
    assert!(urls.contains(&"https://stackoverflow.com/q/10".to_string()));
    assert!(urls.contains(&"https://stackoverflow.com/a/12".to_string()));
    assert!(corpus.blocks.iter().all(|b| b.license.id.to_string() == "CC-BY-SA-3.0"));
}

#[test]
fn conflicting_clone_exits_one_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (se, project) = conflict_fixture(dir.path());
    let report_dir = dir.path().join("report");
    let out = run(&["query", p(&se), p(&project), "--min-tokens", "1", "--report", p(&report_dir)]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("{\"run_config\""), "{first}");
    assert_eq!(text.lines().filter(|l| l.starts_with("{\"query_block_id\"")).count(), 1);
    assert!(text.contains("util.py"));

    let report = CloneReport::from_json(&std::fs::read_to_string(report_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.pairs.len(), 1);
    assert!(std::fs::read_to_string(report_dir.join("report.html")).unwrap().contains("util.py"));

    let sample = run(&["sample", p(&report_dir.join("report.json")), "--n", "5", "--seed", "7"]);
    assert_eq!(sample.status.code(), Some(0));
    let again = run(&["sample", p(&report_dir.join("report.json")), "--n", "5", "--seed", "7"]);
    assert_eq!(stdout(&sample), stdout(&again));
    let value: serde_json::Value = serde_json::from_str(&stdout(&sample)).unwrap();
    assert_eq!(value["population"], 1);
}

#[test]
fn clean_query_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (se, _) = conflict_fixture(dir.path());
    let other = dir.path().join("other");
    write(&other, "other.py", "import os\nprint(os.getcwd())\n");
    let out = run(&["query", p(&se), p(&other), "--min-tokens", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).lines().filter(|l| l.starts_with("{\"query_block_id\"")).count(), 0);
}

#[test]
fn attribution_scans_post_text() {
    let dir = tempfile::tempdir().unwrap();
    let (se, _) = conflict_fixture(dir.path());
    let out = run(&["attribution", p(&se), "--pattern", "credit to"]);
    assert_eq!(out.status.code(), Some(0));
    let matches: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let matches = matches.as_array().unwrap();
    assert_eq!(matches.len(), 1);
    assert_eq!(matches[0]["pattern"], "credit to");
}

fn http_get(addr: &str, path: &str) -> String {
    let mut stream = TcpStream::connect(addr).unwrap();
    write!(stream, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut body = String::new();
    stream.read_to_string(&mut body).unwrap();
    body
}

#[test]
fn serve_answers_and_stops_on_sigterm() {
    let mut child = cli()
        .args(["serve", "--apprentice", "--bind", "127.0.0.1:0", "--id", "smoke"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut banner = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut banner).unwrap();
    let addr = banner.trim().strip_prefix("listening on http://").expect("banner").to_string();

    let response = http_get(&addr, "/v1/status");
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("smoke"));

    let killed = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let start = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait().unwrap() {
            break status;
        }
        if start.elapsed() > Duration::from_secs(10) {
            child.kill().unwrap();
            panic!("server did not stop");
        }
        std::thread::sleep(Duration::from_millis(50));
    };
    assert_eq!(status.code(), Some(0));
}

#[test]
fn bind_failure_exits_with_error() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let out = run(&["serve", "--apprentice", "--bind", &addr]);
    assert_eq!(out.status.code(), Some(2));
}
