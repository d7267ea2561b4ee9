//! JSON bodies of the `/v1` gateway protocol.
//!
//! | route                   | request                    | response                    |
//! |-------------------------|----------------------------|-----------------------------|
//! | `GET /v1/health`        | none                       | [`HealthResponse`]          |
//! | `POST /v1/generate`     | [`GenerateRequest`]        | [`GenerateResponse`]        |
//! | `POST /v1/embed`        | [`EmbedRequest`]           | [`EmbedResponse`]           |
//! | `POST /v1/nli`          | [`NliRequest`]             | [`NliResponse`]             |
//! | `POST /v1/forced_logprobs` | [`ForcedLogprobsRequest`] | [`ForcedLogprobsResponse`] |
//! | `POST /v1/attention_weights` | [`AttentionRequest`]  | [`AttentionResponse`]       |
//! | `POST /v1/ner`          | [`NerRequest`]             | [`NerResponse`]             |
//! | `POST /v1/extract`      | [`ExtractionRequest`]      | [`ExtractResponse`]         |
//!
//! Errors come back as a non-2xx status with an optional [`ErrorBody`].
//! `404` and `501` mean the capability is not deployed. All log-probabilities
//! and entropies are in nats.

use serde::{Deserialize, Serialize};

pub use super::{AttentionRequest, ExtractionRequest};
use super::{Capability, Completion, Decoding};

pub const ROUTE_HEALTH: &str = "/v1/health";
pub const ROUTE_GENERATE: &str = "/v1/generate";
pub const ROUTE_EMBED: &str = "/v1/embed";
pub const ROUTE_NLI: &str = "/v1/nli";
pub const ROUTE_FORCED_LOGPROBS: &str = "/v1/forced_logprobs";
pub const ROUTE_ATTENTION: &str = "/v1/attention_weights";
pub const ROUTE_NER: &str = "/v1/ner";
pub const ROUTE_EXTRACT: &str = "/v1/extract";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub capabilities: Vec<Capability>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub decoding: Decoding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    pub top_p: f64,
    pub max_tokens: u32,
    pub n: u32,
    pub return_logprobs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub completions: Vec<Completion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliRequest {
    pub premise: String,
    pub hypothesis: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliResponse {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcedLogprobsRequest {
    pub prompt: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcedLogprobsResponse {
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropies: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionResponse {
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerResponse {
    pub entities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    #[serde(default)]
    pub code: String,
    pub message: String,
}
