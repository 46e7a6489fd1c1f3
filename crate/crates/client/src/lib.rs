//! Async HTTP client for the grounding service.

use lasp_core::api::{
    BenchRequest, BenchResponse, DefinitionBody, ErrorBody, ErrorKind, EvalRequest, EvalResponse, GroundRequest,
    GroundResponse, Health, MutateRequest, OptimizeRequest, OptimizeResponse, ParseRequest, ParseResponse, SceneInfo,
    SuiteRunRequest, ValidateResponse,
};
use lasp_core::encoder::{EncoderDefinition, EncoderRegistry};
use lasp_core::llm::UsageLedger;
use lasp_core::optimizer::CandidateReport;
use lasp_core::scene::Scene;
use reqwest::Method;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service answered with a non-2xx status.
    #[error("{message} (HTTP {status})")]
    Api {
        status: u16,
        kind: Option<ErrorKind>,
        message: String,
    },
    #[error("request to the service failed: {0}")]
    Transport(String),
}

impl ClientError {
    /// 2 for rejected input, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::Api { status, .. } if (400..500).contains(status) => 2,
            _ => 1,
        }
    }
}

impl From<reqwest::Error> for ClientError {
    fn from(e: reqwest::Error) -> Self {
        ClientError::Transport(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn call<B: Serialize + ?Sized, T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&B>,
    ) -> Result<T> {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await?;
        let status = resp.status();
        let text = resp.text().await?;
        if !status.is_success() {
            let (kind, message) = match serde_json::from_str::<ErrorBody>(&text) {
                Ok(e) => (Some(e.kind), e.message),
                Err(_) => (None, text),
            };
            return Err(ClientError::Api {
                status: status.as_u16(),
                kind,
                message,
            });
        }
        serde_json::from_str(&text).map_err(|e| ClientError::Transport(format!("malformed response body: {e}")))
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        self.call::<(), T>(Method::GET, path, None).await
    }

    async fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        self.call(Method::POST, path, Some(body)).await
    }

    pub async fn health(&self) -> Result<Health> {
        self.get("/healthz").await
    }

    pub async fn upload_scene(&self, scene: &Scene) -> Result<SceneInfo> {
        self.post("/v1/scenes", scene).await
    }

    pub async fn scenes(&self) -> Result<Vec<SceneInfo>> {
        self.get("/v1/scenes").await
    }

    pub async fn parse(&self, req: &ParseRequest) -> Result<ParseResponse> {
        self.post("/v1/parse", req).await
    }

    pub async fn ground(&self, req: &GroundRequest) -> Result<GroundResponse> {
        self.post("/v1/ground", req).await
    }

    pub async fn optimize(&self, req: &OptimizeRequest) -> Result<OptimizeResponse> {
        self.post("/v1/optimize", req).await
    }

    pub async fn bench(&self, req: &BenchRequest) -> Result<BenchResponse> {
        self.post("/v1/bench", req).await
    }

    pub async fn registry(&self) -> Result<EncoderRegistry> {
        self.get("/v1/registry").await
    }

    pub async fn replace_registry(&self, registry: &EncoderRegistry) -> Result<EncoderRegistry> {
        self.call(Method::PUT, "/v1/registry", Some(registry)).await
    }

    pub async fn validate(&self, definition: &EncoderDefinition) -> Result<ValidateResponse> {
        self.post(
            "/v1/encoders/validate",
            &DefinitionBody {
                definition: definition.clone(),
            },
        )
        .await
    }

    pub async fn eval(&self, req: &EvalRequest) -> Result<EvalResponse> {
        self.post("/v1/encoders/eval", req).await
    }

    pub async fn mutate(&self, req: &MutateRequest) -> Result<EncoderDefinition> {
        self.post::<_, DefinitionBody>("/v1/encoders/mutate", req)
            .await
            .map(|b| b.definition)
    }

    pub async fn run_suite(&self, req: &SuiteRunRequest) -> Result<CandidateReport> {
        self.post("/v1/suites/run", req).await
    }

    pub async fn usage(&self) -> Result<UsageLedger> {
        self.get("/v1/usage").await
    }
}
