use std::io::Read;

use axum::http::HeaderMap;
use cloneguard_core::Corpus;

use crate::error::ServiceError;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Request body bytes, gunzipped when the client sent gzip.
pub(crate) fn decode_body(headers: &HeaderMap, body: &[u8]) -> Result<Vec<u8>, ServiceError> {
    let declared = headers
        .get(axum::http::header::CONTENT_ENCODING)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.eq_ignore_ascii_case("gzip"));
    if declared || body.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(body)
            .read_to_end(&mut out)
            .map_err(|e| ServiceError::BadRequest(format!("invalid gzip body: {e}")))?;
        Ok(out)
    } else {
        Ok(body.to_vec())
    }
}

pub(crate) fn parse_corpus(bytes: &[u8], fallback_id: &str) -> Result<Corpus, ServiceError> {
    Corpus::read_jsonl(bytes, fallback_id).map_err(|e| ServiceError::BadRequest(format!("malformed corpus: {e}")))
}
