use lasp_client::{Client, ClientError};
use lasp_core::api::{
    BenchRequest, DatasetBody, ErrorKind, GroundRequest, OptimizeRequest, ParseRequest, SceneRef, SourceKind,
    SuiteRunRequest,
};
use lasp_core::bench::BenchDataset;
use lasp_core::encoder::{encoder_to_dsl, EncoderRegistry};
use lasp_core::expr::RelationName;
use lasp_core::llm::LlmConfig;
use lasp_core::scene::{BoundingBox, Scene, SceneObject};
use lasp_core::synthetic::suite_from_builtin;
use lasp_server::stub::{self, StubHandle, StubState};
use lasp_server::{spawn, ServerConfig, ServerHandle};
use serde_json::json;

fn chairs_and_table() -> Scene {
    let obj = |id, label: &str, x: f64| SceneObject {
        id,
        label: label.into(),
        bbox: BoundingBox::new([x, 0.0, 0.5], [1.0, 1.0, 1.0]),
    };
    Scene::new(
        "room",
        vec![obj(1, "table", 0.0), obj(10, "chair", 1.5), obj(11, "chair", 6.0)],
    )
    .unwrap()
}

fn near_table() -> serde_json::Value {
    json!({"category": "chair", "relations": [{"relation_name": "near", "anchors": [{"category": "table"}]}]})
}

async fn start(config: ServerConfig) -> (ServerHandle, Client) {
    let handle = spawn(([127, 0, 0, 1], 0).into(), config).await.unwrap();
    let client = Client::new(handle.url());
    (handle, client)
}

async fn start_stub(replies: &[&str], status: Option<u16>) -> StubHandle {
    let state = StubState::new(replies.iter().map(|s| s.to_string()).collect(), status);
    stub::spawn(([127, 0, 0, 1], 0).into(), state).await.unwrap()
}

fn fast_llm(url: String) -> LlmConfig {
    let mut cfg = LlmConfig::new(url);
    cfg.backoff_base_ms = 1;
    cfg.timeout_secs = 10.0;
    cfg
}

fn api_status(err: ClientError) -> (u16, Option<ErrorKind>) {
    match err {
        ClientError::Api { status, kind, .. } => (status, kind),
        other => panic!("expected an API error, got {other}"),
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn ground_inline_and_uploaded_scene() {
    let (_h, client) = start(ServerConfig::default()).await;
    assert_eq!(client.health().await.unwrap().status, "ok");

    let req = GroundRequest {
        scene: SceneRef::Inline(chairs_and_table()),
        expression: near_table(),
        top_k: 5,
        threshold: 0.9,
        trace: true,
        registry: None,
    };
    let inline = client.ground(&req).await.unwrap();
    assert_eq!(inline.result.argmax, 10);
    assert_eq!(inline.trace.as_ref().unwrap().len(), 2);

    let info = client.upload_scene(&chairs_and_table()).await.unwrap();
    assert_eq!(info.objects, 3);
    let by_id = client
        .ground(&GroundRequest {
            scene: SceneRef::Id("room".into()),
            trace: false,
            ..req.clone()
        })
        .await
        .unwrap();
    assert_eq!(by_id.result, inline.result);
    assert_eq!(client.scenes().await.unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn input_errors_are_422_and_unknown_scene_is_404() {
    let (_h, client) = start(ServerConfig::default()).await;
    let bad = GroundRequest {
        scene: SceneRef::Inline(chairs_and_table()),
        expression: json!({"category": "chair", "relations": [{"relation_name": "beside", "anchors": []}]}),
        top_k: 5,
        threshold: 0.9,
        trace: false,
        registry: None,
    };
    let (status, kind) = api_status(client.ground(&bad).await.unwrap_err());
    assert_eq!((status, kind), (422, Some(ErrorKind::Validation)));

    let missing = GroundRequest {
        scene: SceneRef::Id("nowhere".into()),
        expression: near_table(),
        ..bad
    };
    assert_eq!(api_status(client.ground(&missing).await.unwrap_err()).0, 404);

    // parse without an endpoint configured is a caller error
    let req = ParseRequest {
        utterance: Some("the chair near the table".into()),
        ..Default::default()
    };
    assert_eq!(api_status(client.parse(&req).await.unwrap_err()).0, 422);

    // malformed bodies still get the JSON error shape
    let resp = reqwest::Client::new()
        .post(format!("{}/v1/ground", client.base_url()))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 422);
    let body: lasp_core::api::ErrorBody = resp.json().await.unwrap();
    assert_eq!(body.kind, ErrorKind::Validation);
}

#[tokio::test(flavor = "multi_thread")]
async fn parse_through_stub_records_usage() {
    let reply = format!("Here is the tree:\n```json\n{}\n```", near_table());
    let stub = start_stub(&[&reply], None).await;
    let (_h, client) = start(ServerConfig {
        llm: Some(fast_llm(stub.url())),
        ..Default::default()
    })
    .await;
    let req = ParseRequest {
        utterance: Some("the chair near the table".into()),
        ..Default::default()
    };
    let first = client.parse(&req).await.unwrap();
    let second = client.parse(&req).await.unwrap();
    assert_eq!(first.canonical, second.canonical);
    assert_eq!(first.expression.relations[0].relation, RelationName::Near);
    assert_eq!(first.usage.len(), 1);

    let ledger = client.usage().await.unwrap();
    assert_eq!(ledger.len(), 2);
    assert_eq!(stub.state.hits(), 2);
    let totals = ledger.totals();
    let sum: u64 = ledger
        .records()
        .iter()
        .map(|r| r.prompt_tokens + r.completion_tokens)
        .sum();
    assert_eq!(totals.tokens(), sum);
    assert_eq!(totals.calls, 2);
    let sent = stub.state.requests();
    assert!(sent[0]["messages"][1]["content"]
        .as_str()
        .unwrap()
        .contains("the chair near the table"));
}

#[tokio::test(flavor = "multi_thread")]
async fn failing_endpoint_gives_up_after_three_attempts() {
    let stub = start_stub(&[], Some(500)).await;
    let (_h, client) = start(ServerConfig {
        llm: Some(fast_llm(stub.url())),
        ..Default::default()
    })
    .await;
    let req = ParseRequest {
        utterance: Some("the lamp".into()),
        ..Default::default()
    };
    let err = client.parse(&req).await.unwrap_err();
    let msg = err.to_string();
    assert_eq!(api_status(err).0, 500);
    assert!(msg.contains('3'), "retry count missing from {msg:?}");
    assert_eq!(stub.state.hits(), 3);
    assert!(client.usage().await.unwrap().is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn optimize_with_llm_source_and_persisted_registry() {
    let builtin = encoder_to_dsl(RelationName::Near);
    let reply = serde_json::to_string(&json!({"relation": "near", "body": builtin.body})).unwrap();
    let stub = start_stub(&[&reply], None).await;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("registry.json");
    let (_h, client) = start(ServerConfig {
        registry_path: Some(path.clone()),
        llm: Some(fast_llm(stub.url())),
        ..Default::default()
    })
    .await;

    let suite = suite_from_builtin(RelationName::Near, 12, 5);
    let resp = client
        .optimize(&OptimizeRequest {
            relation: RelationName::Near,
            suite: suite.to_file(),
            scenes: suite.scenes().map(|s| (**s).clone()).collect(),
            source: SourceKind::Llm,
            n_iter: 2,
            n_sample: 2,
            top_k: 1,
            seed: 0,
            skeleton: None,
            registry: None,
        })
        .await
        .unwrap();
    assert_eq!(resp.best_pass_rate, 1.0);
    assert_eq!(resp.best.body, builtin.body);
    assert!(stub.state.hits() >= 1);
    assert_eq!(client.usage().await.unwrap().len(), stub.state.hits());

    let saved = EncoderRegistry::load(&path).unwrap();
    assert_eq!(saved, client.registry().await.unwrap());
    assert_eq!(saved.library().len(), 1);

    // a replacement registry is validated and persisted
    let fresh = EncoderRegistry::with_builtins();
    client.replace_registry(&fresh).await.unwrap();
    assert_eq!(EncoderRegistry::load(&path).unwrap(), fresh);
}

#[tokio::test(flavor = "multi_thread")]
async fn suite_run_and_bench_over_the_wire() {
    let (_h, client) = start(ServerConfig::default()).await;
    let suite = suite_from_builtin(RelationName::Far, 8, 2);
    let report = client
        .run_suite(&SuiteRunRequest {
            definition: encoder_to_dsl(RelationName::Far),
            suite: suite.to_file(),
            scenes: suite.scenes().map(|s| (**s).clone()).collect(),
        })
        .await
        .unwrap();
    assert_eq!(report.pass_rate, 1.0);

    let wrong = client
        .run_suite(&SuiteRunRequest {
            definition: encoder_to_dsl(RelationName::Near),
            suite: suite.to_file(),
            scenes: suite.scenes().map(|s| (**s).clone()).collect(),
        })
        .await
        .unwrap_err();
    assert_eq!(api_status(wrong).0, 422);

    let data = BenchDataset::mini(0);
    let resp = client
        .bench(&BenchRequest {
            dataset: DatasetBody {
                scenes: data.scenes.values().map(|s| (**s).clone()).collect(),
                items: data.items.clone(),
            },
            random_choice: false,
            seed: 0,
            workers: 3,
            timing: false,
            plots: true,
            config: json!({"note": "echo"}),
            registry: None,
        })
        .await
        .unwrap();
    assert_eq!(resp.records.len(), 40);
    assert_eq!(resp.config["note"], "echo");
    let plots = resp.plots.unwrap();
    assert_eq!(
        plots.files.len(),
        plots.manifest.heatmaps.len() + plots.manifest.traces.len()
    );
}
