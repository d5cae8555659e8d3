//! Typed HTTP clients for both services.

use cloneguard_core::corpus::BlockRecord;
use cloneguard_core::report::{AttributionMatch, Sample};
use cloneguard_core::{ClonePair, CloneReport, Corpus, DetectionConfig};
use serde::de::DeserializeOwned;
use thiserror::Error;

use crate::apprentice::{ApprenticeStatus, LoadParams, QueryRequest, QueryResponse, StoreRef};
use crate::manager::{ApprenticeRecord, AttributionRequest, QuerySetRecord, RegisterRequest, ReportRequest, SampleRequest};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request to {url} failed: {source}")]
    Http {
        url: String,
        #[source]
        source: reqwest::Error,
    },
    #[error("{url} answered {status}: {message}")]
    Status {
        url: String,
        status: u16,
        message: String,
    },
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            ClientError::Http { .. } => None,
        }
    }
}

fn trim(base: &str) -> String {
    base.trim_end_matches('/').to_string()
}

async fn check(url: &str, resp: Result<reqwest::Response, reqwest::Error>) -> Result<reqwest::Response, ClientError> {
    let resp = resp.map_err(|source| ClientError::Http {
        url: url.to_string(),
        source,
    })?;
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let text = resp.text().await.unwrap_or_default();
    let message = serde_json::from_str::<serde_json::Value>(&text)
        .ok()
        .and_then(|v| v.get("error").and_then(|e| e.as_str()).map(str::to_string))
        .unwrap_or(text);
    Err(ClientError::Status {
        url: url.to_string(),
        status: status.as_u16(),
        message,
    })
}

async fn json<T: DeserializeOwned>(url: &str, resp: Result<reqwest::Response, reqwest::Error>) -> Result<T, ClientError> {
    check(url, resp)
        .await?
        .json()
        .await
        .map_err(|source| ClientError::Http {
            url: url.to_string(),
            source,
        })
}

#[derive(Debug, Clone)]
pub struct ApprenticeClient {
    base: String,
    http: reqwest::Client,
}

impl ApprenticeClient {
    pub fn new(base_url: &str) -> Self {
        Self::with_client(base_url, reqwest::Client::new())
    }

    pub fn with_client(base_url: &str, http: reqwest::Client) -> Self {
        Self {
            base: trim(base_url),
            http,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub async fn status(&self) -> Result<ApprenticeStatus, ClientError> {
        let url = format!("{}/v1/status", self.base);
        json(&url, self.http.get(&url).send().await).await
    }

    /// Push a corpus as JSON lines.
    pub async fn load_corpus(&self, corpus: &Corpus, params: &LoadParams) -> Result<ApprenticeStatus, ClientError> {
        let url = format!("{}/v1/corpus", self.base);
        let resp = self
            .http
            .put(&url)
            .query(params)
            .header("content-type", "application/x-ndjson")
            .body(corpus.to_jsonl())
            .send()
            .await;
        json(&url, resp).await
    }

    /// Ask the apprentice to load a corpus from its own index store.
    pub async fn load_store_ref(&self, corpus_hash: &str, params: &LoadParams) -> Result<ApprenticeStatus, ClientError> {
        let url = format!("{}/v1/corpus", self.base);
        let body = StoreRef {
            store_ref: corpus_hash.to_string(),
        };
        json(&url, self.http.put(&url).query(params).json(&body).send().await).await
    }

    pub async fn query(&self, blocks: Vec<BlockRecord>, config: &DetectionConfig) -> Result<Vec<ClonePair>, ClientError> {
        let url = format!("{}/v1/query", self.base);
        let req = QueryRequest {
            config: config.clone(),
            blocks,
        };
        let resp: QueryResponse = json(&url, self.http.post(&url).json(&req).send().await).await?;
        Ok(resp.pairs)
    }
}

#[derive(Debug, Clone)]
pub struct ManagerClient {
    base: String,
    http: reqwest::Client,
}

impl ManagerClient {
    pub fn new(base_url: &str) -> Self {
        Self {
            base: trim(base_url),
            http: reqwest::Client::new(),
        }
    }

    pub async fn register(&self, base_url: &str) -> Result<ApprenticeRecord, ClientError> {
        let url = format!("{}/v1/apprentices", self.base);
        let body = RegisterRequest {
            base_url: base_url.to_string(),
        };
        json(&url, self.http.post(&url).json(&body).send().await).await
    }

    pub async fn apprentices(&self) -> Result<Vec<ApprenticeRecord>, ClientError> {
        let url = format!("{}/v1/apprentices", self.base);
        json(&url, self.http.get(&url).send().await).await
    }

    pub async fn create_query_set(&self, corpus: &Corpus) -> Result<QuerySetRecord, ClientError> {
        let url = format!("{}/v1/querysets", self.base);
        let resp = self
            .http
            .post(&url)
            .header("content-type", "application/x-ndjson")
            .body(corpus.to_jsonl())
            .send()
            .await;
        json(&url, resp).await
    }

    pub async fn create_report(&self, req: &ReportRequest) -> Result<CloneReport, ClientError> {
        let url = format!("{}/v1/reports", self.base);
        json(&url, self.http.post(&url).json(req).send().await).await
    }

    pub async fn report(&self, report_id: &str) -> Result<CloneReport, ClientError> {
        let url = format!("{}/v1/reports/{report_id}?format=json", self.base);
        json(&url, self.http.get(&url).send().await).await
    }

    pub async fn report_html(&self, report_id: &str) -> Result<String, ClientError> {
        let url = format!("{}/v1/reports/{report_id}?format=html", self.base);
        check(&url, self.http.get(&url).send().await)
            .await?
            .text()
            .await
            .map_err(|source| ClientError::Http { url, source })
    }

    pub async fn sample(&self, report_id: &str, req: &SampleRequest) -> Result<Sample, ClientError> {
        let url = format!("{}/v1/reports/{report_id}/sample", self.base);
        json(&url, self.http.post(&url).json(req).send().await).await
    }

    pub async fn attribution(&self, req: &AttributionRequest) -> Result<Vec<AttributionMatch>, ClientError> {
        let url = format!("{}/v1/attribution", self.base);
        json(&url, self.http.post(&url).json(req).send().await).await
    }
}
