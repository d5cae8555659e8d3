//! Coordinator: apprentice registry, query sets, fan-out and reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::HeaderMap;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cloneguard_core::clock;
use cloneguard_core::corpus::BlockRecord;
use cloneguard_core::engine::SizeClass;
use cloneguard_core::report::{render_html, sample_pairs, scan_attribution, AttributionMatch, ReportSource, Sample};
use cloneguard_core::{finalize_pairs, ClonePair, CloneReport, Corpus, DetectionConfig, RunConfig};
use futures::future::join_all;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::apprentice::{ApprenticeStatus, Lifecycle};
use crate::client::ApprenticeClient;
use crate::error::ServiceError;
use crate::payload::{decode_body, parse_corpus};

/// Query blocks sent to an apprentice per request.
pub const DEFAULT_CHUNK_SIZE: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApprenticeRecord {
    pub apprentice_id: String,
    pub base_url: String,
    pub last_status: ApprenticeStatus,
    pub registered_at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySetRecord {
    pub query_set_id: String,
    pub corpus_id: String,
    pub corpus_hash: String,
    pub block_count: usize,
    pub created_at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub base_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRequest {
    pub query_set_id: String,
    #[serde(default)]
    pub config: DetectionConfig,
    #[serde(default)]
    pub chunk_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub n: usize,
    #[serde(default)]
    pub size_class: Option<SizeClass>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionRequest {
    /// Query set id, or the corpus id of a stored query set.
    pub corpus_id: String,
    pub patterns: Vec<String>,
}

#[derive(Debug)]
struct StoredQuerySet {
    record: QuerySetRecord,
    corpus: Corpus,
}

#[derive(Debug)]
pub struct ManagerState {
    data_dir: PathBuf,
    http: reqwest::Client,
    chunk_size: usize,
    registry: Mutex<BTreeMap<String, ApprenticeRecord>>,
    query_sets: Mutex<BTreeMap<String, Arc<StoredQuerySet>>>,
    reports: Mutex<BTreeMap<String, Arc<CloneReport>>>,
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Internal(format!("{}: {e}", path.display()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| io_error(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_error(path, e))
}

fn json_files(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .into_iter()
        .flatten()
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    out.sort();
    out
}

impl ManagerState {
    /// Open (or create) a data directory and load what it holds.
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let data_dir = data_dir.into();
        for sub in ["querysets", "reports"] {
            let d = data_dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| io_error(&d, e))?;
        }
        let state = Self {
            http: reqwest::Client::new(),
            chunk_size: DEFAULT_CHUNK_SIZE,
            registry: Mutex::new(BTreeMap::new()),
            query_sets: Mutex::new(BTreeMap::new()),
            reports: Mutex::new(BTreeMap::new()),
            data_dir,
        };
        state.reload()?;
        Ok(state)
    }

    pub fn with_chunk_size(mut self, chunk_size: usize) -> Self {
        self.chunk_size = chunk_size.max(1);
        self
    }

    fn reload(&self) -> Result<(), ServiceError> {
        let reg_path = self.data_dir.join("apprentices.json");
        if reg_path.is_file() {
            let text = std::fs::read_to_string(&reg_path).map_err(|e| io_error(&reg_path, e))?;
            let records: Vec<ApprenticeRecord> = serde_json::from_str(&text).map_err(|e| io_error(&reg_path, e))?;
            let mut reg = self.registry.lock();
            for r in records {
                reg.insert(r.base_url.clone(), r);
            }
        }
        for path in json_files(&self.data_dir.join("querysets")) {
            let loaded = std::fs::read_to_string(&path)
                .map_err(|e| e.to_string())
                .and_then(|t| serde_json::from_str::<QuerySetRecord>(&t).map_err(|e| e.to_string()))
                .and_then(|record| {
                    let body = std::fs::read(path.with_extension("jsonl")).map_err(|e| e.to_string())?;
                    let corpus = Corpus::read_jsonl(body.as_slice(), &record.corpus_id).map_err(|e| e.to_string())?;
                    Ok(StoredQuerySet { record, corpus })
                });
            match loaded {
                Ok(qs) => {
                    self.query_sets.lock().insert(qs.record.query_set_id.clone(), Arc::new(qs));
                }
                Err(e) => tracing::warn!(path = %path.display(), error = %e, "skipping unreadable query set"),
            }
        }
        for path in json_files(&self.data_dir.join("reports")) {
            match std::fs::read_to_string(&path)
                .map_err(|e| e.to_string())
                .and_then(|t| CloneReport::from_json(&t).map_err(|e| e.to_string()))
            {
                Ok(r) => {
                    self.reports.lock().insert(r.report_id.clone(), Arc::new(r));
                }
                Err(e) => tracing::warn!(path = %path.display(), error = %e, "skipping unreadable report"),
            }
        }
        Ok(())
    }

    fn persist_registry(&self) -> Result<(), ServiceError> {
        let records: Vec<ApprenticeRecord> = self.registry.lock().values().cloned().collect();
        let bytes = serde_json::to_vec_pretty(&records).expect("records serialize");
        write_atomic(&self.data_dir.join("apprentices.json"), &bytes)
    }

    pub fn apprentices(&self) -> Vec<ApprenticeRecord> {
        self.registry.lock().values().cloned().collect()
    }

    /// Probe `base_url` and record it. A known url has its record refreshed.
    pub async fn register(&self, base_url: &str) -> Result<ApprenticeRecord, ServiceError> {
        let client = ApprenticeClient::with_client(base_url, self.http.clone());
        let status = client
            .status()
            .await
            .map_err(|e| ServiceError::BadGateway(format!("status probe failed: {e}")))?;
        let key = client.base_url().to_string();
        let record = {
            let mut reg = self.registry.lock();
            let registered_at = reg.get(&key).map_or_else(clock::now_utc_seconds, |r| r.registered_at);
            let record = ApprenticeRecord {
                apprentice_id: status.apprentice_id.clone(),
                base_url: key.clone(),
                last_status: status,
                registered_at,
            };
            reg.insert(key, record.clone());
            record
        };
        self.persist_registry()?;
        Ok(record)
    }

    /// Store a query set from a corpus file body. The id is derived from the
    /// corpus hash, so posting the same corpus twice yields the same record.
    pub fn create_query_set(&self, body: &[u8]) -> Result<QuerySetRecord, ServiceError> {
        let corpus = parse_corpus(body, "queryset")?;
        let id = format!("qs-{}", &corpus.content_hash[..16]);
        if let Some(existing) = self.query_sets.lock().get(&id) {
            return Ok(existing.record.clone());
        }
        let record = QuerySetRecord {
            query_set_id: id.clone(),
            corpus_id: corpus.corpus_id.clone(),
            corpus_hash: corpus.content_hash.clone(),
            block_count: corpus.len(),
            created_at: clock::now_utc_seconds(),
        };
        let dir = self.data_dir.join("querysets");
        write_atomic(&dir.join(format!("{id}.jsonl")), corpus.to_jsonl().as_bytes())?;
        write_atomic(
            &dir.join(format!("{id}.json")),
            &serde_json::to_vec_pretty(&record).expect("record serializes"),
        )?;
        self.query_sets.lock().insert(
            id,
            Arc::new(StoredQuerySet {
                record: record.clone(),
                corpus,
            }),
        );
        Ok(record)
    }

    pub fn query_sets(&self) -> Vec<QuerySetRecord> {
        self.query_sets.lock().values().map(|q| q.record.clone()).collect()
    }

    fn query_set(&self, id: &str) -> Result<Arc<StoredQuerySet>, ServiceError> {
        self.query_sets
            .lock()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("query set {id} not found")))
    }

    /// Send a query set to every ready apprentice, merge the pairs and store
    /// the report.
    pub async fn dispatch(&self, req: &ReportRequest) -> Result<CloneReport, ServiceError> {
        req.config.validate().map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let qs = self.query_set(&req.query_set_id)?;
        let chunk_size = req.chunk_size.unwrap_or(self.chunk_size).max(1);
        let urls: Vec<String> = self.registry.lock().keys().cloned().collect();

        let probes = join_all(urls.iter().map(|url| {
            let client = ApprenticeClient::with_client(url, self.http.clone());
            async move { (client.status().await, client) }
        }))
        .await;

        let mut failures = Vec::new();
        let mut ready = Vec::new();
        for (probe, client) in probes {
            match probe {
                Ok(status) => {
                    if let Some(rec) = self.registry.lock().get_mut(client.base_url()) {
                        rec.last_status = status.clone();
                    }
                    if matches!(status.state, Lifecycle::Ready | Lifecycle::Querying) {
                        ready.push((client, status));
                    }
                }
                Err(e) => failures.push(format!("{}: {e}", client.base_url())),
            }
        }
        if ready.is_empty() {
            return Err(ServiceError::Unavailable("no ready apprentices".into()));
        }

        let records: Vec<BlockRecord> = qs.corpus.blocks.iter().map(BlockRecord::from).collect();
        let chunks: Vec<Vec<BlockRecord>> = records.chunks(chunk_size).map(<[BlockRecord]>::to_vec).collect();
        let results = join_all(ready.iter().map(|(client, _)| {
            let chunks = &chunks;
            let config = &req.config;
            async move {
                let mut pairs: Vec<ClonePair> = Vec::new();
                for chunk in chunks {
                    pairs.extend(client.query(chunk.clone(), config).await?);
                }
                Ok::<_, crate::client::ClientError>(pairs)
            }
        }))
        .await;

        let mut all = Vec::new();
        let mut sources = Vec::new();
        for ((client, status), result) in ready.iter().zip(results) {
            match result {
                Ok(pairs) => {
                    all.extend(pairs);
                    sources.push(ReportSource {
                        apprentice_id: status.apprentice_id.clone(),
                        base_url: Some(client.base_url().to_string()),
                        corpus_id: status.corpus_id.clone(),
                        corpus_hash: status.corpus_hash.clone(),
                    });
                }
                Err(e) => failures.push(format!("{}: {e}", client.base_url())),
            }
        }
        failures.sort();
        let run_config = RunConfig {
            detection: req.config.clone(),
            apprentices: urls,
            ..RunConfig::default()
        };
        let report = CloneReport::new(&qs.record.query_set_id, sources, finalize_pairs(all), run_config, failures);
        let path = self.data_dir.join("reports").join(format!("{}.json", report.report_id));
        write_atomic(&path, report.to_json().as_bytes())?;
        self.reports.lock().insert(report.report_id.clone(), Arc::new(report.clone()));
        if let Err(e) = self.persist_registry() {
            tracing::warn!(error = %e, "could not persist refreshed apprentice statuses");
        }
        Ok(report)
    }

    pub fn report(&self, id: &str) -> Result<Arc<CloneReport>, ServiceError> {
        self.reports
            .lock()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("report {id} not found")))
    }

    pub fn sample(&self, id: &str, req: &SampleRequest) -> Result<Sample, ServiceError> {
        let report = self.report(id)?;
        sample_pairs(&report.pairs, req.n, req.size_class, req.seed).map_err(|e| ServiceError::BadRequest(e.to_string()))
    }

    pub fn attribution(&self, req: &AttributionRequest) -> Result<Vec<AttributionMatch>, ServiceError> {
        let qs = {
            let sets = self.query_sets.lock();
            sets.get(&req.corpus_id)
                .or_else(|| sets.values().find(|q| q.record.corpus_id == req.corpus_id))
                .cloned()
        }
        .ok_or_else(|| ServiceError::NotFound(format!("corpus {} not found", req.corpus_id)))?;
        scan_attribution(&qs.corpus.blocks, &req.patterns).map_err(|e| ServiceError::BadRequest(e.to_string()))
    }
}

type Shared = Arc<ManagerState>;

async fn register(State(s): State<Shared>, Json(req): Json<RegisterRequest>) -> Result<Json<ApprenticeRecord>, ServiceError> {
    s.register(&req.base_url).await.map(Json)
}

async fn list_apprentices(State(s): State<Shared>) -> Json<Vec<ApprenticeRecord>> {
    Json(s.apprentices())
}

async fn create_query_set(
    State(s): State<Shared>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<QuerySetRecord>, ServiceError> {
    let bytes = decode_body(&headers, &body)?;
    tokio::task::spawn_blocking(move || s.create_query_set(&bytes))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
        .map(Json)
}

async fn create_report(State(s): State<Shared>, Json(req): Json<ReportRequest>) -> Result<Json<CloneReport>, ServiceError> {
    s.dispatch(&req).await.map(Json)
}

#[derive(Debug, Deserialize)]
struct FormatParam {
    format: Option<String>,
}

async fn get_report(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<FormatParam>,
) -> Result<Response, ServiceError> {
    let report = s.report(&id)?;
    match q.format.as_deref().unwrap_or("json") {
        "html" => Ok(Html(render_html(&report)).into_response()),
        "json" => Ok(Json(report.as_ref().clone()).into_response()),
        other => Err(ServiceError::BadRequest(format!("unknown format {other:?}"))),
    }
}

async fn sample(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<SampleRequest>,
) -> Result<Json<Sample>, ServiceError> {
    s.sample(&id, &req).map(Json)
}

async fn attribution(
    State(s): State<Shared>,
    Json(req): Json<AttributionRequest>,
) -> Result<Json<Vec<AttributionMatch>>, ServiceError> {
    s.attribution(&req).map(Json)
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/v1/apprentices", post(register).get(list_apprentices))
        .route("/v1/querysets", post(create_query_set))
        .route("/v1/reports", post(create_report))
        .route("/v1/reports/:id", get(get_report))
        .route("/v1/reports/:id/sample", post(sample))
        .route("/v1/attribution", post(attribution))
        .layer(DefaultBodyLimit::disable())
        .with_state(state)
}
