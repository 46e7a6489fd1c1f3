//! Request and response bodies of the HTTP service, shared by server and
//! client.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bench::{BenchAggregates, BenchItem, BenchRecord, PlotManifest};
use crate::encoder::{EncoderDefinition, EncoderRegistry, RelationFeature};
use crate::executor::{GroundingResult, TraceStep};
use crate::expr::{RelationName, SymbolicExpression};
use crate::llm::UsageRecord;
use crate::optimizer::{CandidateLogRecord, SuiteFile};
use crate::scene::Scene;

/// Error body for every non-2xx reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: ErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Bad input; the CLI exits with 2.
    Validation,
    NotFound,
    /// Failure while running valid input; the CLI exits with 1.
    Runtime,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub registry_generation: u64,
    pub llm_configured: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneInfo {
    pub scene_id: String,
    pub fingerprint: String,
    pub objects: usize,
}

/// Exactly one of `utterance` and `expression` must be set. An expression
/// is validated and canonicalized without any LLM call.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParseRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utterance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParseResponse {
    pub expression: SymbolicExpression,
    /// Canonical compact JSON of `expression`.
    pub canonical: String,
    pub usage: Vec<UsageRecord>,
}

/// A scene given inline or by the id of a previously uploaded scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneRef {
    Inline(Scene),
    Id(String),
}

fn default_top_k() -> usize {
    5
}

fn default_threshold() -> f64 {
    0.9
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundRequest {
    pub scene: SceneRef,
    pub expression: Value,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub trace: bool,
    /// Used instead of the service's registry when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry: Option<EncoderRegistry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundResponse {
    pub result: GroundingResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceStep>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    #[default]
    Mutate,
    Llm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeRequest {
    pub relation: RelationName,
    pub suite: SuiteFile,
    pub scenes: Vec<Scene>,
    #[serde(default)]
    pub source: SourceKind,
    pub n_iter: usize,
    pub n_sample: usize,
    pub top_k: usize,
    pub seed: u64,
    /// Starting point for the mutation source instead of the builtin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<EncoderDefinition>,
    /// Optimized in place of the service's registry and returned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry: Option<EncoderRegistry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeResponse {
    pub best: EncoderDefinition,
    pub best_pass_rate: f64,
    pub history: Vec<f64>,
    pub log: Vec<CandidateLogRecord>,
    pub evaluations: usize,
    pub registry: EncoderRegistry,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetBody {
    pub scenes: Vec<Scene>,
    pub items: Vec<BenchItem>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRequest {
    pub dataset: DatasetBody,
    #[serde(default)]
    pub random_choice: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_true")]
    pub timing: bool,
    /// Also return plot data.
    #[serde(default)]
    pub plots: bool,
    /// Echoed into the report.
    #[serde(default)]
    pub config: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry: Option<EncoderRegistry>,
}

fn default_workers() -> usize {
    4
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotData {
    pub manifest: PlotManifest,
    /// `(file name, CSV text)` pairs.
    pub files: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchResponse {
    pub records: Vec<BenchRecord>,
    pub aggregates: BenchAggregates,
    pub config: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plots: Option<PlotData>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefinitionBody {
    pub definition: EncoderDefinition,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidateResponse {
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRequest {
    pub definition: EncoderDefinition,
    pub scene: SceneRef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResponse {
    pub feature: RelationFeature,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MutateRequest {
    pub definition: EncoderDefinition,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteRunRequest {
    pub definition: EncoderDefinition,
    pub suite: SuiteFile,
    pub scenes: Vec<Scene>,
}
