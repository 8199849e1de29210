use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use prefalign_core::backend::BackendError;
use prefalign_core::mllm::MllmError;
use prefalign_core::PipelineError;
use serde::{Deserialize, Serialize};

/// Error body returned by every failing endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    /// Raw model output when a response could not be parsed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub raw: Option<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), raw: None }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "revision_conflict", message)
    }

    pub fn too_large(message: impl Into<String>) -> Self {
        Self::new(StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large", message)
    }

    pub fn timeout(secs: u64) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "timeout", format!("generation exceeded {secs} s"))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody { code: self.code.to_string(), message: self.message.clone(), raw: self.raw.clone() }
    }
}

/// Machine code and HTTP status for a pipeline error. Each variant (and each
/// MLLM/backend sub-variant) has its own code.
pub fn classify(err: &PipelineError) -> (StatusCode, &'static str) {
    use PipelineError as P;
    match err {
        P::Mllm(m) => match m {
            MllmError::Transport { .. } => (StatusCode::BAD_GATEWAY, "mllm_transport"),
            MllmError::MalformedResponse { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "mllm_malformed_response"),
            MllmError::OversizeImage { .. } => (StatusCode::PAYLOAD_TOO_LARGE, "oversize_image"),
            MllmError::InvalidImage(_) => (StatusCode::BAD_REQUEST, "invalid_image"),
            MllmError::UnknownFixture(_) => (StatusCode::BAD_GATEWAY, "mllm_unknown_fixture"),
            MllmError::InvalidInput(_) => (StatusCode::BAD_REQUEST, "mllm_invalid_input"),
        },
        P::Encode(_) => (StatusCode::SERVICE_UNAVAILABLE, "encoder_failure"),
        P::Backend(b) => match b {
            BackendError::Failure(_) => (StatusCode::SERVICE_UNAVAILABLE, "backend_failure"),
            BackendError::Compose(_) => (StatusCode::SERVICE_UNAVAILABLE, "backend_compose"),
            BackendError::InvalidConfig(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_sampler_config"),
        },
        P::UnknownEntity(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_entity"),
        P::InvalidRegion(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_region"),
        P::LambdaOutOfRange(_) => (StatusCode::UNPROCESSABLE_ENTITY, "lambda_out_of_range"),
        P::InvalidParameter(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_parameter"),
        P::InvalidKeywords(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_keywords"),
        P::InvalidGroup(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_group"),
        P::Inconsistent(_) => (StatusCode::INTERNAL_SERVER_ERROR, "inconsistent_state"),
        P::SchemaVersionMismatch { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "schema_version_mismatch"),
        P::CorruptPayload(_) => (StatusCode::INTERNAL_SERVER_ERROR, "corrupt_payload"),
        P::InvalidInput(_) => (StatusCode::BAD_REQUEST, "invalid_input"),
        P::Configuration(_) => (StatusCode::SERVICE_UNAVAILABLE, "configuration"),
    }
}

impl From<PipelineError> for ApiError {
    fn from(err: PipelineError) -> Self {
        let (status, code) = classify(&err);
        let raw = match &err {
            PipelineError::Mllm(MllmError::MalformedResponse { raw, .. }) => Some(raw.clone()),
            _ => None,
        };
        Self { status, code, message: err.to_string(), raw }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}: {}", self.code, self.message);
        }
        (self.status, Json(self.body())).into_response()
    }
}
