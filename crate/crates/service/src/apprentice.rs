//! Shard worker: holds one indexed corpus and answers clone queries.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::HeaderMap;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use cloneguard_core::cache::{CacheMetrics, IndexStore};
use cloneguard_core::corpus::BlockRecord;
use cloneguard_core::engine::{detect_clones, Denominator};
use cloneguard_core::error::EngineError;
use cloneguard_core::{ClonePair, CodeBlock, CompatibilityMatrix, Corpus, DetectionConfig, IndexedCorpus};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::payload::{decode_body, parse_corpus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lifecycle {
    Idle,
    Loading,
    Ready,
    Querying,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApprenticeStatus {
    pub apprentice_id: String,
    pub corpus_id: Option<String>,
    pub corpus_hash: Option<String>,
    pub state: Lifecycle,
    pub block_count: usize,
    /// Settings the loaded index was built with.
    pub config: Option<DetectionConfig>,
    pub cache_metrics: Option<CacheMetrics>,
}

/// Index settings for a corpus load; unset fields take the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadParams {
    pub theta: Option<f64>,
    pub min_tokens: Option<u64>,
    pub denominator: Option<Denominator>,
}

impl LoadParams {
    pub fn from_config(config: &DetectionConfig) -> Self {
        Self {
            theta: Some(config.theta.value()),
            min_tokens: Some(config.min_tokens),
            denominator: Some(config.denominator),
        }
    }

    pub fn to_config(&self) -> Result<DetectionConfig, ServiceError> {
        let mut config = DetectionConfig::default();
        if let Some(t) = self.theta {
            config.theta = cloneguard_core::Theta::new(t).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        }
        if let Some(m) = self.min_tokens {
            config.min_tokens = m;
        }
        if let Some(d) = self.denominator {
            config.denominator = d;
        }
        config.validate().map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        Ok(config)
    }
}

/// Body of a pull-style load: a corpus hash already committed to the
/// apprentice's index store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreRef {
    pub store_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    #[serde(default)]
    pub config: DetectionConfig,
    pub blocks: Vec<BlockRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub pairs: Vec<ClonePair>,
}

#[derive(Debug)]
pub struct ApprenticeState {
    id: String,
    store: Option<IndexStore>,
    matrix: CompatibilityMatrix,
    loaded: RwLock<Option<Arc<IndexedCorpus>>>,
    loading: AtomicBool,
    active_queries: AtomicUsize,
}

pub type ServiceState = Arc<ApprenticeState>;

/// Held while a load is in progress.
pub struct LoadGuard<'a>(&'a AtomicBool);

impl Drop for LoadGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

/// Held while a query is running; the apprentice reports `querying` while
/// any guard is alive.
pub struct QueryGuard<'a>(&'a AtomicUsize);

impl Drop for QueryGuard<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::AcqRel);
    }
}

fn engine_error(e: EngineError) -> ServiceError {
    ServiceError::Unprocessable(e.to_string())
}

impl ApprenticeState {
    pub fn new(id: impl Into<String>, store: Option<IndexStore>, matrix: CompatibilityMatrix) -> Self {
        Self {
            id: id.into(),
            store,
            matrix,
            loaded: RwLock::new(None),
            loading: AtomicBool::new(false),
            active_queries: AtomicUsize::new(0),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn status(&self) -> ApprenticeStatus {
        let loaded = self.loaded.read().clone();
        let state = if self.loading.load(Ordering::Acquire) {
            Lifecycle::Loading
        } else if loaded.is_none() {
            Lifecycle::Idle
        } else if self.active_queries.load(Ordering::Acquire) > 0 {
            Lifecycle::Querying
        } else {
            Lifecycle::Ready
        };
        ApprenticeStatus {
            apprentice_id: self.id.clone(),
            corpus_id: loaded.as_ref().map(|ic| ic.corpus.corpus_id.clone()),
            corpus_hash: loaded.as_ref().map(|ic| ic.corpus.content_hash.clone()),
            state,
            block_count: loaded.as_ref().map_or(0, |ic| ic.corpus.len()),
            config: loaded.as_ref().map(|ic| DetectionConfig {
                theta: ic.index.theta(),
                min_tokens: ic.index.min_tokens(),
                denominator: ic.index.denominator(),
                ..DetectionConfig::default()
            }),
            cache_metrics: self.store.as_ref().map(IndexStore::metrics),
        }
    }

    /// Reserve the apprentice for a load; fails while another load runs.
    pub fn begin_load(&self) -> Result<LoadGuard<'_>, ServiceError> {
        self.loading
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map(|_| LoadGuard(&self.loading))
            .map_err(|_| ServiceError::Conflict("a corpus load is already in progress".into()))
    }

    pub fn begin_query(&self) -> QueryGuard<'_> {
        self.active_queries.fetch_add(1, Ordering::AcqRel);
        QueryGuard(&self.active_queries)
    }

    fn install(&self, ic: IndexedCorpus, guard: LoadGuard<'_>) -> ApprenticeStatus {
        *self.loaded.write() = Some(Arc::new(ic));
        drop(guard);
        tracing::info!(apprentice = %self.id, "corpus loaded");
        self.status()
    }

    fn build(&self, corpus: Corpus, config: &DetectionConfig) -> Result<IndexedCorpus, ServiceError> {
        match &self.store {
            Some(store) => store
                .get_or_build(corpus, config)
                .map(|(ic, _)| ic)
                .map_err(|e| ServiceError::Internal(e.to_string())),
            None => Ok(IndexedCorpus::build(corpus, config)),
        }
    }

    /// Replace the loaded corpus. Blocking.
    pub fn load_corpus(&self, corpus: Corpus, params: &LoadParams) -> Result<ApprenticeStatus, ServiceError> {
        let config = params.to_config()?;
        let guard = self.begin_load()?;
        let ic = self.build(corpus, &config)?;
        Ok(self.install(ic, guard))
    }

    /// Load a corpus file body (JSON lines, optionally gzipped) or a
    /// `{"store_ref": hash}` reference.
    pub fn load_payload(&self, body: &[u8], params: &LoadParams) -> Result<ApprenticeStatus, ServiceError> {
        let config = params.to_config()?;
        let guard = self.begin_load()?;
        if let Ok(r) = serde_json::from_slice::<StoreRef>(body) {
            let store = self
                .store
                .as_ref()
                .ok_or_else(|| ServiceError::BadRequest("this apprentice has no index store".into()))?;
            let ic = store
                .load(&r.store_ref, &config)
                .map_err(|e| ServiceError::Internal(e.to_string()))?
                .ok_or_else(|| ServiceError::NotFound(format!("no stored index for {} with these settings", r.store_ref)))?;
            return Ok(self.install(ic, guard));
        }
        let corpus = parse_corpus(body, &self.id)?;
        let ic = self.build(corpus, &config)?;
        Ok(self.install(ic, guard))
    }

    /// Run a query against the loaded corpus. Blocking.
    pub fn query(&self, req: QueryRequest) -> Result<Vec<ClonePair>, ServiceError> {
        let ic = self
            .loaded
            .read()
            .clone()
            .ok_or_else(|| ServiceError::Unavailable("no corpus loaded".into()))?;
        let _guard = self.begin_query();
        let blocks = req
            .blocks
            .into_iter()
            .map(CodeBlock::try_from)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ServiceError::BadRequest(format!("invalid query block: {e}")))?;
        detect_clones(&blocks, &ic, &req.config, &self.matrix).map_err(engine_error)
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
}

async fn status(State(state): State<ServiceState>) -> Json<ApprenticeStatus> {
    Json(state.status())
}

async fn load(
    State(state): State<ServiceState>,
    Query(params): Query<LoadParams>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<ApprenticeStatus>, ServiceError> {
    let bytes = decode_body(&headers, &body)?;
    blocking(move || state.load_payload(&bytes, &params)).await.map(Json)
}

async fn query(
    State(state): State<ServiceState>,
    Json(req): Json<QueryRequest>,
) -> Result<Json<QueryResponse>, ServiceError> {
    if state.loaded.read().is_none() {
        return Err(ServiceError::Unavailable("no corpus loaded".into()));
    }
    blocking(move || state.query(req)).await.map(|pairs| Json(QueryResponse { pairs }))
}

pub fn router(state: ServiceState) -> Router {
    Router::new()
        .route("/v1/status", get(status))
        .route("/v1/corpus", put(load))
        .route("/v1/query", post(query))
        .layer(DefaultBodyLimit::disable())
        .with_state(state)
}
