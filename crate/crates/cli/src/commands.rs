use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use lasp_client::Client;
use lasp_core::api::{BenchRequest, DatasetBody, GroundRequest, OptimizeRequest, ParseRequest, SceneRef};
use lasp_core::bench::{write_plot_files, BenchDataset, BenchReport};
use lasp_core::encoder::{EncoderDefinition, EncoderRegistry};
use lasp_core::expr::serialize_expression;
use lasp_core::llm::{LlmConfig, OfflineExpressions, PromptTemplates};
use lasp_core::optimizer::TestSuite;
use lasp_core::scene::load_scene;
use lasp_core::synthetic::suite_from_builtin;
use lasp_server::stub::{self, StubState};
use lasp_server::{ServerConfig, ServerHandle};

use crate::config::{ConfigFile, RunConfig};
use crate::{
    BenchArgs, Cli, CliError, Command, GenBenchArgs, GenSuiteArgs, GlobalArgs, GroundArgs, OptimizeArgs, ParseArgs,
    ServeArgs, StubArgs,
};

type Result<T> = std::result::Result<T, CliError>;

pub async fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Parse(a) => parse(g, a).await,
        Command::Ground(a) => ground(g, a).await,
        Command::Optimize(a) => optimize(g, a).await,
        Command::Bench(a) => bench(g, a).await,
        Command::GenBench(a) => gen_bench(a),
        Command::GenSuite(a) => gen_suite(a),
        Command::Serve(a) => serve(g, a).await,
        Command::StubLlm(a) => stub_llm(a).await,
    }
}

fn llm_config(cfg: &RunConfig) -> Option<LlmConfig> {
    match &cfg.llm_endpoint {
        Some(endpoint) => {
            let mut c = LlmConfig::new(endpoint.clone());
            c.api_key = std::env::var("LASP_LLM_API_KEY").ok().filter(|s| !s.is_empty());
            Some(c)
        }
        None => LlmConfig::from_env().ok(),
    }
}

/// Client for `--server`, or for a service started on a loopback port.
/// The handle keeps the in-process service alive.
async fn connect(g: &GlobalArgs, cfg: &RunConfig) -> Result<(Client, Option<ServerHandle>)> {
    if let Some(url) = &g.server {
        return Ok((Client::new(url.clone()), None));
    }
    let config = ServerConfig {
        registry_path: None,
        llm: llm_config(cfg),
        templates: None,
    };
    let handle = lasp_server::spawn(([127, 0, 0, 1], 0).into(), config)
        .await
        .map_err(|e| CliError::runtime(format!("cannot start the service: {e}")))?;
    Ok((Client::new(handle.url()), Some(handle)))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

fn read_json(path: &Path) -> Result<Value> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::input(format!("{}: invalid JSON: {e}", path.display())))
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)
                    .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
            }
            fs::write(p, text).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", p.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("response serialization is infallible");
    s.push('\n');
    s
}

fn load_registry(path: Option<&Path>) -> Result<Option<EncoderRegistry>> {
    match path {
        Some(p) if p.exists() => EncoderRegistry::load(p)
            .map(Some)
            .map_err(|e| CliError::input(e.to_string())),
        Some(_) => Ok(Some(EncoderRegistry::with_builtins())),
        None => Ok(None),
    }
}

enum ParseInput {
    Utterance(String),
    Expression(Value),
}

fn parse_inputs(a: &ParseArgs) -> Result<Vec<ParseInput>> {
    if let Some(u) = &a.utterance {
        return Ok(vec![ParseInput::Utterance(u.clone())]);
    }
    let path = a.input.as_deref().expect("clap requires --utterance or --in");
    let text = read_text(path)?;
    // a whole-file object is one (possibly pretty-printed) expression
    if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(&text) {
        return Ok(vec![ParseInput::Expression(v)]);
    }
    let mut inputs = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let value: Value = serde_json::from_str(line)
            .map_err(|e| CliError::input(format!("{} line {}: invalid JSON: {e}", path.display(), n + 1)))?;
        inputs.push(match value {
            Value::String(s) => ParseInput::Utterance(s),
            Value::Object(_) => ParseInput::Expression(value),
            _ => {
                return Err(CliError::input(format!(
                    "{} line {}: expected an expression object or an utterance string",
                    path.display(),
                    n + 1
                )))
            }
        });
    }
    if inputs.is_empty() {
        return Err(CliError::input(format!("{} holds no input", path.display())));
    }
    Ok(inputs)
}

async fn parse(g: &GlobalArgs, a: ParseArgs) -> Result<()> {
    let cfg = RunConfig::resolve(g.config.as_deref(), &g.as_layer())?;
    let offline = a
        .offline_expr
        .as_deref()
        .map(OfflineExpressions::load)
        .transpose()
        .map_err(|e| CliError::input(e.to_string()))?;
    let inputs = parse_inputs(&a)?;
    let (client, _server) = connect(g, &cfg).await?;
    let mut out = String::new();
    for input in inputs {
        let req = match input {
            ParseInput::Expression(v) => ParseRequest {
                expression: Some(v),
                ..Default::default()
            },
            ParseInput::Utterance(u) => match &offline {
                Some(table) => {
                    let expr = table.lookup(&u).map_err(|e| CliError::input(e.to_string()))?;
                    ParseRequest {
                        expression: Some(serde_json::to_value(&expr).expect("expression serialization is infallible")),
                        ..Default::default()
                    }
                }
                None => ParseRequest {
                    utterance: Some(u.clone()),
                    ..Default::default()
                },
            },
        };
        let resp = client.parse(&req).await?;
        debug_assert_eq!(resp.canonical, serialize_expression(&resp.expression));
        out.push_str(&resp.canonical);
        out.push('\n');
    }
    write_text(a.out.as_deref(), &out)
}

async fn ground(g: &GlobalArgs, a: GroundArgs) -> Result<()> {
    let flags = ConfigFile {
        top_k: a.top_k,
        threshold: a.threshold,
        registry: a.registry.clone(),
        ..g.as_layer()
    };
    let cfg = RunConfig::resolve(g.config.as_deref(), &flags)?;
    let scene = load_scene(&a.scene).map_err(|e| CliError::input(format!("{}: {e}", a.scene.display())))?;
    let expression = read_json(&a.expr)?;
    let registry = load_registry(cfg.registry.as_deref())?;
    let (client, _server) = connect(g, &cfg).await?;
    let resp = client
        .ground(&GroundRequest {
            scene: SceneRef::Inline(scene),
            expression,
            top_k: cfg.top_k,
            threshold: cfg.threshold,
            trace: a.trace,
            registry,
        })
        .await?;
    write_text(a.out.as_deref(), &pretty(&resp))
}

async fn optimize(g: &GlobalArgs, a: OptimizeArgs) -> Result<()> {
    let flags = ConfigFile {
        scene_dir: a.scenes.clone(),
        n_iter: a.n_iter,
        n_sample: a.n_sample,
        optimizer_top_k: a.top_k,
        seed: a.seed,
        source: a.source.map(Into::into),
        registry: a.registry.clone(),
        ..g.as_layer()
    };
    let cfg = RunConfig::resolve(g.config.as_deref(), &flags)?;
    let scenes_dir = cfg
        .scene_dir
        .clone()
        .or_else(|| a.suite.parent().map(|p| p.join("scenes")))
        .ok_or_else(|| CliError::input("--scenes is required"))?;
    let suite = TestSuite::load(&a.suite, &scenes_dir).map_err(|e| CliError::input(e.to_string()))?;
    let skeleton: Option<EncoderDefinition> = a
        .skeleton
        .as_deref()
        .map(|p| serde_json::from_value(read_json(p)?).map_err(|e| CliError::input(format!("{}: {e}", p.display()))))
        .transpose()?;
    let registry = load_registry(cfg.registry.as_deref())?;
    let (client, _server) = connect(g, &cfg).await?;
    let resp = client
        .optimize(&OptimizeRequest {
            relation: a.relation,
            suite: suite.to_file(),
            scenes: suite.scenes().map(|s| (**s).clone()).collect(),
            source: cfg.source,
            n_iter: cfg.n_iter,
            n_sample: cfg.n_sample,
            top_k: cfg.optimizer_top_k,
            seed: cfg.seed,
            skeleton,
            registry,
        })
        .await?;

    let mut summary = String::new();
    for (i, rate) in resp.history.iter().enumerate() {
        let _ = writeln!(summary, "iteration {}: best pass rate {rate:.4}", i + 1);
    }
    let _ = writeln!(
        summary,
        "best {} pass rate {:.4} after {} evaluations",
        resp.best.hash(),
        resp.best_pass_rate,
        resp.evaluations
    );
    print!("{summary}");

    if let Some(path) = &cfg.registry {
        write_text(Some(path), &resp.registry.to_json_string())?;
    }
    if let Some(path) = &a.log {
        let mut log = String::new();
        for rec in &resp.log {
            log.push_str(&serde_json::to_string(rec).expect("log serialization is infallible"));
            log.push('\n');
        }
        write_text(Some(path), &log)?;
    }
    Ok(())
}

async fn bench(g: &GlobalArgs, a: BenchArgs) -> Result<()> {
    let flags = ConfigFile {
        scene_dir: Some(a.dataset.join("scenes")),
        registry: a.registry.clone(),
        seed: a.seed,
        workers: a.workers,
        timing: a.no_timing.then_some(false),
        ..g.as_layer()
    };
    let cfg = RunConfig::resolve(g.config.as_deref(), &flags)?;
    let dataset = BenchDataset::load(&a.dataset).map_err(|e| CliError::input(e.to_string()))?;
    let registry = load_registry(cfg.registry.as_deref())?;
    let (client, _server) = connect(g, &cfg).await?;
    let mut echo = serde_json::to_value(&cfg).expect("config serialization is infallible");
    echo["random_choice"] = Value::Bool(a.random_choice);
    let resp = client
        .bench(&BenchRequest {
            dataset: DatasetBody {
                scenes: dataset.scenes.values().map(|s| (**s).clone()).collect(),
                items: dataset.items.clone(),
            },
            random_choice: a.random_choice,
            seed: cfg.seed,
            workers: cfg.workers,
            timing: cfg.timing,
            plots: a.plots.is_some(),
            config: echo,
            registry,
        })
        .await?;
    let report = BenchReport {
        records: resp.records,
        aggregates: resp.aggregates,
        config: resp.config,
    };
    if !report.is_consistent() {
        return Err(CliError::runtime("service returned an inconsistent report"));
    }
    write_text(a.out.as_deref(), &pretty(&report))?;
    if a.out.is_some() {
        let agg = &report.aggregates;
        println!(
            "accuracy {:.4} ({}/{}), random baseline {:.4}",
            agg.accuracy, agg.correct, agg.total, agg.random_baseline
        );
    }
    if let (Some(dir), Some(plots)) = (&a.plots, resp.plots) {
        write_plot_files(dir, &plots.manifest, &plots.files).map_err(|e| CliError::runtime(e.to_string()))?;
    }
    Ok(())
}

fn gen_bench(a: GenBenchArgs) -> Result<()> {
    BenchDataset::mini(a.seed)
        .write(&a.out)
        .map_err(|e| CliError::runtime(e.to_string()))
}

fn gen_suite(a: GenSuiteArgs) -> Result<()> {
    if a.cases == 0 {
        return Err(CliError::input("--cases must be positive"));
    }
    let suite = suite_from_builtin(a.relation, a.cases, a.seed);
    let path = suite
        .write_to_dir(&a.out)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", a.out.display())))?;
    println!("{}", path.display());
    Ok(())
}

async fn shutdown_signal() {
    if let Err(e) = tokio::signal::ctrl_c().await {
        log::error!("cannot listen for ctrl-c: {e}");
        std::future::pending::<()>().await;
    }
}

async fn serve(g: &GlobalArgs, a: ServeArgs) -> Result<()> {
    let flags = ConfigFile {
        registry: a.registry.clone(),
        ..g.as_layer()
    };
    let cfg = RunConfig::resolve(g.config.as_deref(), &flags)?;
    let templates = a
        .prompts
        .as_deref()
        .map(PromptTemplates::from_dir)
        .transpose()
        .map_err(|e| CliError::input(e.to_string()))?;
    let state = lasp_server::AppState::new(ServerConfig {
        registry_path: cfg.registry.clone(),
        llm: llm_config(&cfg),
        templates,
    })
    .map_err(|e| CliError::input(e.message))?;
    let listener = tokio::net::TcpListener::bind(a.addr)
        .await
        .map_err(|e| CliError::runtime(format!("cannot bind {}: {e}", a.addr)))?;
    let addr = listener.local_addr().map_err(|e| CliError::runtime(e.to_string()))?;
    println!("listening on http://{addr}");
    lasp_server::serve(listener, state, shutdown_signal())
        .await
        .map_err(|e| CliError::runtime(e.to_string()))
}

async fn stub_llm(a: StubArgs) -> Result<()> {
    let mut replies = match &a.replies {
        Some(dir) => {
            stub::read_replies(dir).map_err(|e| CliError::input(format!("cannot read {}: {e}", dir.display())))?
        }
        None => Vec::new(),
    };
    replies.extend(a.reply.iter().cloned());
    let state = StubState::new(replies, a.status);
    let handle = stub::spawn(a.addr, state)
        .await
        .map_err(|e| CliError::runtime(format!("cannot bind {}: {e}", a.addr)))?;
    println!("listening on {}", handle.url());
    shutdown_signal().await;
    Ok(())
}
