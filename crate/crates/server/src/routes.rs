use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Request, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;

use lasp_core::api::{
    BenchRequest, BenchResponse, DefinitionBody, EvalRequest, EvalResponse, GroundRequest, GroundResponse, Health,
    MutateRequest, OptimizeRequest, OptimizeResponse, ParseRequest, ParseResponse, PlotData, SceneInfo, SceneRef,
    SourceKind, SuiteRunRequest, ValidateResponse,
};
use lasp_core::bench::{plot_data, run_bench, BenchConfig, BenchDataset};
use lasp_core::encoder::{eval_encoder, mutate_definition, validate_definition, EncoderRegistry};
use lasp_core::executor::{execute_traced, ground, FeatureCache};
use lasp_core::expr::{from_value, serialize_expression, DEFAULT_MAX_DEPTH};
use lasp_core::llm::{parse_utterance_via_llm, LlmClient, LlmError, LlmSource, UsageLedger};
use lasp_core::optimizer::{
    optimize_encoder, run_test_suite, CandidateReport, CandidateSource, ExampleGraph, MutationSource, OptimizerConfig,
    SuiteFile, TestSuite,
};
use lasp_core::scene::{precompute_geometry, Scene};

use crate::{ApiError, AppState};

type AppResult<T> = Result<Json<T>, ApiError>;

/// JSON extractor whose rejections use the service's error body.
struct Body<T>(T);

impl<S, T> FromRequest<S> for Body<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(rejection(e)),
        }
    }
}

fn rejection(e: JsonRejection) -> ApiError {
    ApiError::validation(e.body_text())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(health))
        .route("/v1/scenes", get(list_scenes).post(put_scene))
        .route("/v1/parse", post(parse))
        .route("/v1/ground", post(ground_route))
        .route("/v1/optimize", post(optimize))
        .route("/v1/bench", post(bench))
        .route("/v1/registry", get(get_registry).put(put_registry))
        .route("/v1/encoders/validate", post(validate))
        .route("/v1/encoders/eval", post(eval))
        .route("/v1/encoders/mutate", post(mutate))
        .route("/v1/suites/run", post(run_suite))
        .route("/v1/usage", get(usage))
        .with_state(state)
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await?
}

/// Registries arriving in request bodies get the same checks as files.
fn checked_registry(reg: EncoderRegistry) -> Result<EncoderRegistry, ApiError> {
    Ok(EncoderRegistry::from_json_str(&reg.to_json_string())?)
}

fn resolve_scene(state: &AppState, scene: SceneRef) -> Result<Arc<Scene>, ApiError> {
    match scene {
        SceneRef::Inline(s) => Ok(Arc::new(s)),
        SceneRef::Id(id) => state
            .scenes
            .read()
            .expect("scene lock")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown scene id {id:?}"))),
    }
}

fn build_suite(suite: SuiteFile, scenes: Vec<Scene>) -> Result<TestSuite, ApiError> {
    Ok(TestSuite::new(
        suite.relation,
        suite.cases,
        scenes.into_iter().map(Arc::new),
    )?)
}

fn llm_client(state: &AppState, ledger: Arc<Mutex<UsageLedger>>) -> Result<LlmClient, ApiError> {
    let config = state.llm.clone().ok_or(LlmError::NotConfigured)?;
    Ok(LlmClient::with_ledger(config, ledger))
}

/// Copies a per-request ledger into the service ledger.
fn merge_usage(state: &AppState, local: &Mutex<UsageLedger>) -> Vec<lasp_core::llm::UsageRecord> {
    let records = local.lock().expect("ledger lock").records().to_vec();
    let mut global = state.ledger.lock().expect("ledger lock");
    for r in &records {
        global.record(r.clone());
    }
    records
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        registry_generation: state.registry.read().expect("registry lock").generation(),
        llm_configured: state.llm.is_some(),
    })
}

fn scene_info(scene: &Scene) -> SceneInfo {
    SceneInfo {
        scene_id: scene.scene_id().to_string(),
        fingerprint: scene.fingerprint().to_string(),
        objects: scene.len(),
    }
}

async fn list_scenes(State(state): State<Arc<AppState>>) -> Json<Vec<SceneInfo>> {
    let scenes = state.scenes.read().expect("scene lock");
    let mut infos: Vec<SceneInfo> = scenes.values().map(|s| scene_info(s)).collect();
    infos.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    Json(infos)
}

async fn put_scene(State(state): State<Arc<AppState>>, Body(scene): Body<Scene>) -> AppResult<SceneInfo> {
    // re-run constructor checks that plain deserialization may skip
    let scene = Scene::from_json_str(&scene.to_json_string())?;
    let info = scene_info(&scene);
    state
        .scenes
        .write()
        .expect("scene lock")
        .insert(info.scene_id.clone(), Arc::new(scene));
    Ok(Json(info))
}

async fn parse(State(state): State<Arc<AppState>>, Body(req): Body<ParseRequest>) -> AppResult<ParseResponse> {
    let (expression, usage) = match (req.utterance, req.expression) {
        (Some(_), Some(_)) | (None, None) => {
            return Err(ApiError::validation(
                "exactly one of utterance and expression is required",
            ))
        }
        (None, Some(value)) => (from_value(&value, DEFAULT_MAX_DEPTH)?, Vec::new()),
        (Some(utterance), None) => {
            let local = Arc::new(Mutex::new(UsageLedger::default()));
            let client = llm_client(&state, local.clone())?;
            let templates = state.templates.clone();
            let parsed = blocking(move || Ok(parse_utterance_via_llm(&client, &templates, &utterance)?)).await;
            let usage = merge_usage(&state, &local);
            (parsed?, usage)
        }
    };
    Ok(Json(ParseResponse {
        canonical: serialize_expression(&expression),
        expression,
        usage,
    }))
}

async fn ground_route(State(state): State<Arc<AppState>>, Body(req): Body<GroundRequest>) -> AppResult<GroundResponse> {
    let expr = from_value(&req.expression, DEFAULT_MAX_DEPTH)?;
    let scene = resolve_scene(&state, req.scene)?;
    let cache = match req.registry {
        Some(reg) => Arc::new(FeatureCache::new(&scene, checked_registry(reg)?.snapshot())),
        None => state.cache_for(&scene),
    };
    blocking(move || {
        let result = ground(&expr, &scene, &cache, req.top_k, req.threshold)?;
        let trace = if req.trace {
            Some(execute_traced(&expr, &scene, &cache)?)
        } else {
            None
        };
        Ok(GroundResponse { result, trace })
    })
    .await
    .map(Json)
}

async fn optimize(State(state): State<Arc<AppState>>, Body(req): Body<OptimizeRequest>) -> AppResult<OptimizeResponse> {
    let suite = build_suite(req.suite, req.scenes)?;
    let cfg = OptimizerConfig {
        n_iter: req.n_iter,
        n_sample: req.n_sample,
        top_k: req.top_k,
        seed: req.seed,
    };
    let local = Arc::new(Mutex::new(UsageLedger::default()));
    let source: Box<dyn CandidateSource> = match req.source {
        SourceKind::Mutate => {
            let mut s = MutationSource::new();
            if let Some(skeleton) = req.skeleton {
                validate_definition(&skeleton).map_err(|e| ApiError::validation(e.to_string()))?;
                s = s.with_skeleton(skeleton);
            }
            Box::new(s)
        }
        SourceKind::Llm => Box::new(LlmSource::new(
            llm_client(&state, local.clone())?,
            state.templates.clone(),
        )),
    };
    let inline = req.registry.is_some();
    let mut registry = match req.registry {
        Some(reg) => checked_registry(reg)?,
        None => state.registry(),
    };
    let relation = req.relation;
    let (outcome, registry) = blocking(move || {
        let outcome = optimize_encoder(
            relation,
            &suite,
            source.as_ref(),
            &mut registry,
            &ExampleGraph::default_graph(),
            &cfg,
        )?;
        Ok((outcome, registry))
    })
    .await
    .inspect_err(|_| {
        merge_usage(&state, &local);
    })?;
    merge_usage(&state, &local);

    let registry = if inline {
        registry
    } else {
        // apply to the live registry so concurrent changes are kept
        let mut live = state.registry.write().expect("registry lock");
        live.accept(outcome.best.clone())?;
        state.persist(&live)?;
        live.clone()
    };
    Ok(Json(OptimizeResponse {
        best: outcome.best,
        best_pass_rate: outcome.best_pass_rate,
        history: outcome.history,
        log: outcome.log,
        evaluations: outcome.evaluations,
        registry,
    }))
}

async fn bench(State(state): State<Arc<AppState>>, Body(req): Body<BenchRequest>) -> AppResult<BenchResponse> {
    let dataset = BenchDataset::new(req.dataset.scenes, req.dataset.items)?;
    let snapshot = match req.registry {
        Some(reg) => checked_registry(reg)?.snapshot(),
        None => state.registry.read().expect("registry lock").snapshot(),
    };
    let cfg = BenchConfig {
        workers: req.workers,
        random_choice: req.random_choice,
        seed: req.seed,
        timing: req.timing,
    };
    let (plots, config) = (req.plots, req.config);
    blocking(move || {
        let report = run_bench(&dataset, &snapshot, &cfg, config)?;
        let plots = if plots {
            let (manifest, files) = plot_data(&dataset, &snapshot)?;
            Some(PlotData { manifest, files })
        } else {
            None
        };
        Ok(BenchResponse {
            records: report.records,
            aggregates: report.aggregates,
            config: report.config,
            plots,
        })
    })
    .await
    .map(Json)
}

async fn get_registry(State(state): State<Arc<AppState>>) -> Json<EncoderRegistry> {
    Json(state.registry())
}

async fn put_registry(
    State(state): State<Arc<AppState>>,
    Body(reg): Body<EncoderRegistry>,
) -> AppResult<EncoderRegistry> {
    let reg = checked_registry(reg)?;
    let mut live = state.registry.write().expect("registry lock");
    *live = reg;
    state.persist(&live)?;
    Ok(Json(live.clone()))
}

async fn validate(Body(req): Body<DefinitionBody>) -> Json<ValidateResponse> {
    let error = validate_definition(&req.definition).err().map(|e| e.to_string());
    Json(ValidateResponse {
        valid: error.is_none(),
        error,
        hash: req.definition.hash(),
    })
}

async fn eval(State(state): State<Arc<AppState>>, Body(req): Body<EvalRequest>) -> AppResult<EvalResponse> {
    validate_definition(&req.definition).map_err(|e| ApiError::validation(e.to_string()))?;
    let scene = resolve_scene(&state, req.scene)?;
    blocking(move || {
        let geometry = precompute_geometry(&scene);
        Ok(EvalResponse {
            feature: eval_encoder(&req.definition, &scene, &geometry),
        })
    })
    .await
    .map(Json)
}

async fn mutate(Body(req): Body<MutateRequest>) -> AppResult<DefinitionBody> {
    validate_definition(&req.definition).map_err(|e| ApiError::validation(e.to_string()))?;
    Ok(Json(DefinitionBody {
        definition: mutate_definition(&req.definition, req.seed),
    }))
}

async fn run_suite(Body(req): Body<SuiteRunRequest>) -> AppResult<CandidateReport> {
    let suite = build_suite(req.suite, req.scenes)?;
    blocking(move || Ok(run_test_suite(&req.definition, &suite)?))
        .await
        .map(Json)
}

async fn usage(State(state): State<Arc<AppState>>) -> Json<UsageLedger> {
    Json(state.ledger())
}
