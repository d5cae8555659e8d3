use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;

use cloneguard_core::cache::IndexStore;
use cloneguard_core::corpus::BlockRecord;
use cloneguard_core::engine::SizeClass;
use cloneguard_core::license::{LicenseId, LicenseProvenance, LicenseTag, Verdict};
use cloneguard_core::synth::{token_blocks, BlockShape};
use cloneguard_core::{CodeBlock, CompatibilityMatrix, Corpus, DetectionConfig};
use cloneguard_service::apprentice::{self, Lifecycle};
use cloneguard_service::manager::{self, AttributionRequest, SampleRequest};
use cloneguard_service::{ApprenticeClient, ApprenticeState, LoadParams, ManagerClient, ManagerState, ReportRequest};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

struct Running {
    url: String,
    stop: Option<oneshot::Sender<()>>,
}

impl Running {
    fn stop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
    }
}

async fn spawn(router: axum::Router) -> Running {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = oneshot::channel();
    tokio::spawn(cloneguard_service::serve(listener, router, async {
        let _ = rx.await;
    }));
    Running { url, stop: Some(tx) }
}

async fn spawn_apprentice(id: &str, store: Option<IndexStore>) -> (Running, Arc<ApprenticeState>) {
    let state = Arc::new(ApprenticeState::new(id, store, CompatibilityMatrix::default()));
    (spawn(apprentice::router(state.clone())).await, state)
}

fn blocks(seed: u64, id: &str, count: usize) -> Vec<CodeBlock> {
    token_blocks(seed, id, &BlockShape { count, ..BlockShape::default() })
}

fn records(blocks: &[CodeBlock]) -> Vec<BlockRecord> {
    blocks.iter().map(BlockRecord::from).collect()
}

fn keys(pairs: &[cloneguard_core::ClonePair]) -> BTreeSet<(String, String)> {
    pairs.iter().map(|p| (p.query_block_id.clone(), p.corpus_block_id.clone())).collect()
}

#[tokio::test]
async fn apprentice_lifecycle() {
    let (_srv, state) = spawn_apprentice("a1", None).await;
    let client = ApprenticeClient::new(&_srv.url);
    assert_eq!(client.status().await.unwrap().state, Lifecycle::Idle);

    let err = client.query(vec![], &DetectionConfig::default()).await.unwrap_err();
    assert_eq!(err.status(), Some(503));

    let corpus = Corpus::new("c", blocks(1, "c", 10));
    let status = client.load_corpus(&corpus, &LoadParams::default()).await.unwrap();
    assert_eq!(status.state, Lifecycle::Ready);
    assert_eq!(status.block_count, 10);
    assert_eq!(status.corpus_hash.as_deref(), Some(corpus.content_hash.as_str()));

    {
        let _q = state.begin_query();
        assert_eq!(client.status().await.unwrap().state, Lifecycle::Querying);
    }
    {
        let _l = state.begin_load().unwrap();
        assert_eq!(client.status().await.unwrap().state, Lifecycle::Loading);
        let err = client.load_corpus(&corpus, &LoadParams::default()).await.unwrap_err();
        assert_eq!(err.status(), Some(409));
    }
    assert_eq!(client.status().await.unwrap().state, Lifecycle::Ready);
}

#[tokio::test]
async fn apprentice_queries() {
    let (srv, _) = spawn_apprentice("a1", None).await;
    let client = ApprenticeClient::new(&srv.url);
    let mut corpus_blocks = blocks(2, "so", 10);
    for b in &mut corpus_blocks {
        b.license = LicenseTag::new(LicenseId::known("CC-BY-SA-3.0"), LicenseProvenance::CorpusDefault);
    }
    let corpus = Corpus::new("so", corpus_blocks.clone());
    client.load_corpus(&corpus, &LoadParams::default()).await.unwrap();
    let config = DetectionConfig::default();

    assert!(client.query(vec![], &config).await.unwrap().is_empty());

    let mut q = corpus_blocks[3].clone();
    q.block_id = "proj:x.py:file:1-1".into();
    q.corpus_id = "proj".into();
    q.license = LicenseTag::new(LicenseId::known("MIT"), LicenseProvenance::PackageFile);
    let pairs = client.query(records(&[q.clone()]), &config).await.unwrap();
    let exact: Vec<_> = pairs.iter().filter(|p| p.corpus_block_id == corpus_blocks[3].block_id).collect();
    assert_eq!(exact.len(), 1);
    assert_eq!(exact[0].similarity, 1.0);
    assert_eq!(exact[0].verdict, Verdict::Conflict);
    let again = client.query(records(&[q.clone()]), &config).await.unwrap();
    assert_eq!(pairs, again);
    let shard: BTreeSet<_> = corpus_blocks.iter().map(|b| b.block_id.clone()).collect();
    assert!(pairs.iter().all(|p| shard.contains(&p.corpus_block_id)));

    let other = DetectionConfig::with_theta(0.7).unwrap();
    let err = client.query(records(&[q]), &other).await.unwrap_err();
    assert_eq!(err.status(), Some(422));
}

#[tokio::test]
async fn empty_corpus_and_bad_payloads() {
    let (srv, _) = spawn_apprentice("a1", None).await;
    let client = ApprenticeClient::new(&srv.url);
    let status = client.load_corpus(&Corpus::new("e", vec![]), &LoadParams::default()).await.unwrap();
    assert_eq!(status.state, Lifecycle::Ready);
    assert_eq!(status.block_count, 0);
    let q = blocks(3, "q", 5);
    assert!(client.query(records(&q), &DetectionConfig::default()).await.unwrap().is_empty());

    let http = reqwest::Client::new();
    let resp = http
        .put(format!("{}/v1/corpus", srv.url))
        .body("{\"block_id\": 1}\n")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let resp = http
        .put(format!("{}/v1/corpus?theta=1.5", srv.url))
        .body("")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
}

#[tokio::test]
async fn gzip_upload_and_store_pull() {
    let store_dir = tempfile::tempdir().unwrap();
    let (srv, _) = spawn_apprentice("a1", Some(IndexStore::open(store_dir.path()).unwrap())).await;
    let corpus = Corpus::new("c", blocks(4, "c", 30));
    let mut gz = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
    gz.write_all(corpus.to_jsonl().as_bytes()).unwrap();
    let resp = reqwest::Client::new()
        .put(format!("{}/v1/corpus", srv.url))
        .header("content-encoding", "gzip")
        .body(gz.finish().unwrap())
        .send()
        .await
        .unwrap();
    assert!(resp.status().is_success());

    let (other, _) = spawn_apprentice("a2", Some(IndexStore::open(store_dir.path()).unwrap())).await;
    let client = ApprenticeClient::new(&other.url);
    let status = client.load_store_ref(&corpus.content_hash, &LoadParams::default()).await.unwrap();
    assert_eq!(status.corpus_hash.as_deref(), Some(corpus.content_hash.as_str()));
    assert_eq!(status.cache_metrics.unwrap().builds, 0);
    let err = client.load_store_ref("abcdef", &LoadParams::default()).await.unwrap_err();
    assert_eq!(err.status(), Some(404));
}

async fn spawn_manager(dir: &std::path::Path) -> (Running, ManagerClient) {
    let state = Arc::new(ManagerState::open(dir).unwrap().with_chunk_size(7));
    let srv = spawn(manager::router(state)).await;
    let client = ManagerClient::new(&srv.url);
    (srv, client)
}

#[tokio::test]
async fn registration_rules() {
    let dir = tempfile::tempdir().unwrap();
    let (_m, manager) = spawn_manager(dir.path()).await;
    let (a, _) = spawn_apprentice("a1", None).await;
    let first = manager.register(&a.url).await.unwrap();
    assert_eq!(first.apprentice_id, "a1");
    manager.register(&a.url).await.unwrap();
    assert_eq!(manager.apprentices().await.unwrap().len(), 1);

    let closed = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let dead = format!("http://{}", closed.local_addr().unwrap());
    drop(closed);
    let err = manager.register(&dead).await.unwrap_err();
    assert_eq!(err.status(), Some(502));
    assert_eq!(manager.apprentices().await.unwrap().len(), 1);
}

async fn sharded_report(corpus: &[CodeBlock], query: &Corpus, shards: usize) -> cloneguard_core::CloneReport {
    let dir = tempfile::tempdir().unwrap();
    let (_m, manager) = spawn_manager(dir.path()).await;
    let mut servers = Vec::new();
    for s in 0..shards {
        let part: Vec<CodeBlock> = corpus.iter().skip(s).step_by(shards).cloned().collect();
        let (srv, _) = spawn_apprentice(&format!("a{s}"), None).await;
        ApprenticeClient::new(&srv.url)
            .load_corpus(&Corpus::new("c", part), &LoadParams::default())
            .await
            .unwrap();
        manager.register(&srv.url).await.unwrap();
        servers.push(srv);
    }
    let qs = manager.create_query_set(query).await.unwrap();
    manager
        .create_report(&ReportRequest {
            query_set_id: qs.query_set_id,
            config: DetectionConfig::default(),
            chunk_size: None,
        })
        .await
        .unwrap()
}

#[tokio::test]
async fn partitions_agree() {
    let corpus = blocks(5, "c", 120);
    let query = Corpus::new("c", corpus.clone());
    let one = sharded_report(&corpus, &query, 1).await;
    let two = sharded_report(&corpus, &query, 2).await;
    assert!(!one.pairs.is_empty());
    assert_eq!(keys(&one.pairs), keys(&two.pairs));
    assert_eq!(one.stats, two.stats);
    assert!(!one.partial && !two.partial);
}

#[tokio::test]
async fn dispatch_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let (_m, manager) = spawn_manager(dir.path()).await;
    let qs = manager.create_query_set(&Corpus::new("q", blocks(6, "q", 12))).await.unwrap();
    let req = ReportRequest {
        query_set_id: qs.query_set_id.clone(),
        config: DetectionConfig::default(),
        chunk_size: Some(5),
    };
    assert_eq!(manager.create_report(&req).await.unwrap_err().status(), Some(503));

    let (a, _) = spawn_apprentice("a1", None).await;
    ApprenticeClient::new(&a.url)
        .load_corpus(&Corpus::new("q", blocks(6, "q", 12)), &LoadParams::default())
        .await
        .unwrap();
    manager.register(&a.url).await.unwrap();
    let (mut b, _) = spawn_apprentice("a2", None).await;
    ApprenticeClient::new(&b.url)
        .load_corpus(&Corpus::new("q", vec![]), &LoadParams::default())
        .await
        .unwrap();
    manager.register(&b.url).await.unwrap();
    b.stop();
    tokio::time::sleep(std::time::Duration::from_millis(100)).await;

    let report = manager.create_report(&req).await.unwrap();
    assert!(report.partial);
    assert_eq!(report.failures.len(), 1);
    assert!(report.stats_consistent());

    let empty = manager.create_query_set(&Corpus::new("none", vec![])).await.unwrap();
    let r = manager
        .create_report(&ReportRequest {
            query_set_id: empty.query_set_id,
            ..req.clone()
        })
        .await
        .unwrap();
    assert!(r.pairs.is_empty());
    assert_eq!(r.stats.total_pairs, 0);

    let missing = ReportRequest {
        query_set_id: "qs-missing".into(),
        ..req
    };
    assert_eq!(manager.create_report(&missing).await.unwrap_err().status(), Some(404));
}

#[tokio::test]
async fn reports_are_served_and_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let (mut m, manager) = spawn_manager(dir.path()).await;
    let (a, _) = spawn_apprentice("a1", None).await;
    let mut corpus_blocks = blocks(7, "so", 60);
    for b in &mut corpus_blocks {
        b.locator.url = Some(format!("https://stackoverflow.com/a/{}", 1000 + b.block_id.len()));
        b.context = Some("Snippet adapted from the Python Software Foundation docs.".into());
    }
    let corpus = Corpus::new("so", corpus_blocks);
    ApprenticeClient::new(&a.url).load_corpus(&corpus, &LoadParams::default()).await.unwrap();
    manager.register(&a.url).await.unwrap();
    let qs = manager.create_query_set(&corpus).await.unwrap();
    let report = manager
        .create_report(&ReportRequest {
            query_set_id: qs.query_set_id,
            config: DetectionConfig::default(),
            chunk_size: None,
        })
        .await
        .unwrap();
    assert_eq!(manager.report(&report.report_id).await.unwrap(), report);
    let html = manager.report_html(&report.report_id).await.unwrap();
    assert!(html.contains("Total clones"));
    assert_eq!(manager.report("r-nope").await.unwrap_err().status(), Some(404));

    let sample = manager
        .sample(&report.report_id, &SampleRequest { n: 3, size_class: Some(SizeClass::Small), seed: 9 })
        .await
        .unwrap();
    assert_eq!(sample.pairs.len(), 3.min(sample.population));

    let hits = manager
        .attribution(&AttributionRequest {
            corpus_id: "so".into(),
            patterns: vec!["Python Software Foundation".into()],
        })
        .await
        .unwrap();
    assert!(!hits.is_empty());

    m.stop();
    let reopened = ManagerState::open(dir.path()).unwrap();
    assert_eq!(*reopened.report(&report.report_id).unwrap(), report);
    assert_eq!(reopened.apprentices().len(), 1);
    assert_eq!(reopened.query_sets().len(), 1);
}
