use std::collections::BTreeMap;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{ConfidenceResult, Oracle, OracleError, Result};
use crate::tensorops::{encode_png, ImageTensor};

/// Environment variable holding the bearer token sent to remote oracles.
pub const AUTH_TOKEN_ENV: &str = "ECLIPSE_ORACLE_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEndpointConfig {
    pub url: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Sent as `Authorization: Bearer <token>` when present.
    #[serde(default, skip_serializing)]
    pub auth_token: Option<String>,
}

fn default_timeout() -> f64 {
    30.0
}

fn default_top_k() -> usize {
    5
}

impl OracleEndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout_secs: default_timeout(),
            top_k: default_top_k(),
            auth_token: None,
        }
    }

    /// Fills `auth_token` from [`AUTH_TOKEN_ENV`] if it is not already set.
    pub fn with_env_token(mut self) -> Self {
        if self.auth_token.is_none() {
            self.auth_token = std::env::var(AUTH_TOKEN_ENV).ok().filter(|t| !t.is_empty());
        }
        self
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    image_b64: &'a str,
    top_k: usize,
}

#[derive(Deserialize)]
struct WireResponse {
    scores: BTreeMap<String, serde_json::Value>,
}

/// JSON request body: `{"image_b64": <base64 PNG>, "top_k": <int>}`.
pub fn encode_request(image: &ImageTensor, top_k: usize) -> Result<String> {
    let png = encode_png(image)?;
    let b64 = BASE64.encode(png);
    Ok(serde_json::to_string(&WireRequest {
        image_b64: &b64,
        top_k,
    })
    .expect("request serializes"))
}

/// Parses `{"scores": {"<label>": <float>, ...}}` and enforces the score range.
pub fn parse_response(body: &str) -> Result<ConfidenceResult> {
    let wire: WireResponse =
        serde_json::from_str(body).map_err(|e| OracleError::Schema(e.to_string()))?;
    let mut scores = BTreeMap::new();
    for (label, value) in wire.scores {
        let score = value
            .as_f64()
            .ok_or_else(|| OracleError::Schema(format!("score for {label:?} is not a number")))?;
        scores.insert(label, score);
    }
    ConfidenceResult::new(scores)
}

/// Oracle reached over HTTP. Failed calls are reported, never retried.
pub struct RemoteOracle {
    config: OracleEndpointConfig,
    client: reqwest::blocking::Client,
}

impl RemoteOracle {
    pub fn new(config: OracleEndpointConfig) -> Result<Self> {
        if !(config.timeout_secs > 0.0) {
            return Err(OracleError::InvalidSpec("timeout must be positive".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| OracleError::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &OracleEndpointConfig {
        &self.config
    }
}

fn transport(e: reqwest::Error) -> OracleError {
    if e.is_timeout() {
        OracleError::Timeout
    } else {
        OracleError::Transport(e.to_string())
    }
}

impl Oracle for RemoteOracle {
    fn confidences(&self, image: &ImageTensor) -> Result<ConfidenceResult> {
        let body = encode_request(image, self.config.top_k)?;
        let mut req = self
            .client
            .post(&self.config.url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body);
        if let Some(token) = &self.config.auth_token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(transport)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(OracleError::Status(status.as_u16()));
        }
        let text = resp.text().map_err(transport)?;
        parse_response(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_well_formed_response() {
        let r = parse_response(r#"{"scores": {"cat": 0.7, "dog": 0.3}}"#).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r.score("cat"), 0.7);
        assert_eq!(r.score("dog"), 0.3);
    }

    #[test]
    fn rejects_schema_violations() {
        for body in [
            r#"{"scores": {"cat": 1.2}}"#,
            r#"{"scores": {}}"#,
            r#"{"scores": {"cat": "high"}}"#,
            r#"{"labels": ["cat"]}"#,
            "not json",
        ] {
            assert!(matches!(parse_response(body), Err(OracleError::Schema(_))), "{body}");
        }
    }

    #[test]
    fn request_carries_png_and_top_k() {
        let img = ImageTensor::from_fn(3, 2, |r, c, ch| ((r + c + ch) % 2) as f64).unwrap();
        let body: serde_json::Value = serde_json::from_str(&encode_request(&img, 3).unwrap()).unwrap();
        assert_eq!(body["top_k"], 3);
        let png = BASE64.decode(body["image_b64"].as_str().unwrap()).unwrap();
        assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");
    }
}
