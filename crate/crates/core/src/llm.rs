//! Chat-completion client, prompt assembly and token accounting.
//!
//! Everything here is optional: grounding and offline optimization never
//! touch the network. The client speaks the OpenAI-compatible
//! `/chat/completions` wire format.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::encoder::{EncoderDefinition, Node};
use crate::expr::{parse_expression, Arity, ExprError, RelationName, SymbolicExpression};
use crate::optimizer::{CandidateSource, DrawRequest, Failure, SourceError};

/// Attempts made by [`parse_utterance_via_llm`] before giving up.
pub const PARSE_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Parsing,
    InitGeneration,
    Refinement,
    SelfRefine,
}

impl TemplateId {
    pub const ALL: [TemplateId; 4] = [
        TemplateId::Parsing,
        TemplateId::InitGeneration,
        TemplateId::Refinement,
        TemplateId::SelfRefine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Parsing => "parsing",
            TemplateId::InitGeneration => "init_generation",
            TemplateId::Refinement => "refinement",
            TemplateId::SelfRefine => "self_refine",
        }
    }

    fn file_name(self) -> String {
        format!("{}.txt", self.as_str())
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown template {s:?}"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("LLM endpoint not configured (set LASP_LLM_ENDPOINT)")]
    NotConfigured,
    #[error("failed to read template {path}: {source}")]
    TemplateIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("template {0} is missing a user section")]
    TemplateFormat(TemplateId),
    #[error("template {template} needs {field}")]
    MissingInput { template: TemplateId, field: &'static str },
    #[error("request failed after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("endpoint returned HTTP {status} after {attempts} attempts: {body}")]
    Status { attempts: usize, status: u16, body: String },
    #[error("malformed reply after {attempts} attempts: {message}")]
    Malformed { attempts: usize, message: String },
    #[error("no parseable expression in reply after {attempts} attempts: {last}")]
    NoExpression { attempts: usize, last: String },
    #[error("offline expressions: {0}")]
    Offline(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Template {
    /// Absent for templates appended to the initial prompt.
    system: Option<String>,
    user: String,
}

impl Template {
    fn parse(id: TemplateId, text: &str) -> Result<Self, LlmError> {
        let text = text.replace("\r\n", "\n");
        match text.strip_prefix("## system\n") {
            Some(rest) => {
                let (system, user) = rest.split_once("\n## user\n").ok_or(LlmError::TemplateFormat(id))?;
                Ok(Self {
                    system: Some(system.trim_end().to_string()),
                    user: user.trim_end().to_string(),
                })
            }
            None => Ok(Self {
                system: None,
                user: text.trim_end().to_string(),
            }),
        }
    }
}

/// The four prompt templates. Defaults are compiled in; [`Self::from_dir`]
/// loads replacements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    templates: HashMap<TemplateId, Template>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        let sources = [
            (TemplateId::Parsing, include_str!("../prompts/parsing.txt")),
            (
                TemplateId::InitGeneration,
                include_str!("../prompts/init_generation.txt"),
            ),
            (TemplateId::Refinement, include_str!("../prompts/refinement.txt")),
            (TemplateId::SelfRefine, include_str!("../prompts/self_refine.txt")),
        ];
        let templates = sources
            .into_iter()
            .map(|(id, text)| (id, Template::parse(id, text).expect("bundled template is well formed")))
            .collect();
        Self { templates }
    }
}

impl PromptTemplates {
    /// Every template file must be present as `<dir>/<template_id>.txt`.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, LlmError> {
        let mut templates = HashMap::new();
        for id in TemplateId::ALL {
            let path = dir.as_ref().join(id.file_name());
            let text = fs::read_to_string(&path).map_err(|source| LlmError::TemplateIo { path, source })?;
            templates.insert(id, Template::parse(id, &text)?);
        }
        if templates[&TemplateId::Parsing].system.is_none() {
            return Err(LlmError::TemplateFormat(TemplateId::Parsing));
        }
        if templates[&TemplateId::InitGeneration].system.is_none() {
            return Err(LlmError::TemplateFormat(TemplateId::InitGeneration));
        }
        Ok(Self { templates })
    }

    fn get(&self, id: TemplateId) -> &Template {
        &self.templates[&id]
    }
}

/// Substitutes `{name}` placeholders in one left-to-right pass; inserted
/// text is never rescanned and unknown braces are kept literally.
fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let tail = &rest[start + 1..];
        let replaced = tail.find('}').and_then(|end| {
            let key = &tail[..end];
            vars.iter().find(|(k, _)| *k == key).map(|(_, v)| (v, end))
        });
        match replaced {
            Some((value, end)) => {
                out.push_str(value);
                rest = &tail[end + 1..];
            }
            None => {
                out.push('{');
                rest = tail;
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub template_id: TemplateId,
}

/// Inputs for [`assemble_prompt`]; which fields are required depends on the
/// template.
#[derive(Debug, Clone, Copy, Default)]
pub struct PromptInputs<'a> {
    pub relation: Option<RelationName>,
    pub example: Option<&'a EncoderDefinition>,
    pub prior: Option<(&'a EncoderDefinition, &'a [Failure])>,
    pub utterance: Option<&'a str>,
}

fn objects_phrase(relation: RelationName) -> &'static str {
    match relation.arity() {
        Arity::Unary => "unary: score object i alone",
        Arity::Binary => "binary: score object i relative to anchor j",
        Arity::Ternary => "ternary: score object i relative to anchors j and k",
    }
}

fn compact(def: &EncoderDefinition) -> String {
    json!({ "relation": def.relation, "body": def.body.to_json() }).to_string()
}

/// Deterministic prompt assembly. Refinement prompts are the initial
/// generation prompt followed by the prior definition and, for
/// `refinement`, its error messages in suite order.
pub fn assemble_prompt(
    templates: &PromptTemplates,
    template_id: TemplateId,
    inputs: &PromptInputs<'_>,
) -> Result<PromptBundle, LlmError> {
    let missing = |field| LlmError::MissingInput {
        template: template_id,
        field,
    };
    if template_id == TemplateId::Parsing {
        let utterance = inputs.utterance.ok_or_else(|| missing("an utterance"))?;
        let t = templates.get(TemplateId::Parsing);
        let names: Vec<&str> = RelationName::ALL.iter().map(|r| r.as_str()).collect();
        let relations = names.join(", ");
        return Ok(PromptBundle {
            system: render(t.system.as_deref().unwrap_or_default(), &[("relations", &relations)]),
            user: render(&t.user, &[("utterance", utterance)]),
            template_id,
        });
    }

    let relation = inputs.relation.ok_or_else(|| missing("a relation"))?;
    let init = templates.get(TemplateId::InitGeneration);
    let example = match inputs.example {
        Some(ex) => format!(
            "Here is an accepted encoder for the related relation \"{}\" that you may adapt:\n{}",
            ex.relation,
            compact(ex)
        ),
        None => String::new(),
    };
    let mut user = render(
        &init.user,
        &[
            ("relation", relation.as_str()),
            ("objects", objects_phrase(relation)),
            ("example", &example),
        ],
    )
    .trim_end()
    .to_string();

    if template_id != TemplateId::InitGeneration {
        let (prior, failures) = inputs.prior.ok_or_else(|| missing("a prior definition"))?;
        let errors: Vec<&str> = failures.iter().map(|f| f.message.as_str()).collect();
        let tail = render(
            &templates.get(template_id).user,
            &[("definition", &compact(prior)), ("errors", &errors.join("\n"))],
        );
        user.push_str("\n\n");
        user.push_str(&tail);
    }
    Ok(PromptBundle {
        system: init.system.clone().unwrap_or_default(),
        user,
        template_id,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    /// Base URL; requests go to `{endpoint}/chat/completions`.
    pub endpoint: String,
    #[serde(skip_serializing, default)]
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub timeout_secs: f64,
    /// Extra attempts after the first.
    pub max_retries: usize,
    /// Delay before retry n is `backoff_base_ms * 2^(n-1)`.
    pub backoff_base_ms: u64,
}

impl LlmConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            model: "gpt-4o".into(),
            temperature: 1.0,
            top_p: 0.95,
            timeout_secs: 120.0,
            max_retries: 2,
            backoff_base_ms: 500,
        }
    }

    /// Reads `LASP_LLM_ENDPOINT`, `LASP_LLM_API_KEY` and `LASP_LLM_MODEL`.
    pub fn from_env() -> Result<Self, LlmError> {
        let endpoint = std::env::var("LASP_LLM_ENDPOINT")
            .ok()
            .filter(|s| !s.trim().is_empty())
            .ok_or(LlmError::NotConfigured)?;
        let mut cfg = Self::new(endpoint);
        cfg.api_key = std::env::var("LASP_LLM_API_KEY").ok().filter(|s| !s.is_empty());
        if let Ok(model) = std::env::var("LASP_LLM_MODEL") {
            if !model.is_empty() {
                cfg.model = model;
            }
        }
        Ok(cfg)
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.endpoint.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub purpose: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageTotals {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_ms: u64,
}

impl UsageTotals {
    pub fn tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// One record per completed round trip; totals always equal the sum of the
/// records.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageLedger {
    records: Vec<UsageRecord>,
    totals: UsageTotals,
}

impl UsageLedger {
    pub fn record(&mut self, rec: UsageRecord) {
        self.totals.calls += 1;
        self.totals.prompt_tokens += rec.prompt_tokens;
        self.totals.completion_tokens += rec.completion_tokens;
        self.totals.wall_ms += rec.wall_ms;
        self.records.push(rec);
    }

    pub fn records(&self) -> &[UsageRecord] {
        &self.records
    }

    pub fn totals(&self) -> UsageTotals {
        self.totals
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Shareable blocking client. Clones share one ledger.
#[derive(Debug, Clone)]
pub struct LlmClient {
    config: LlmConfig,
    ledger: Arc<Mutex<UsageLedger>>,
}

enum Attempt {
    Retry(LlmError),
    Fatal(LlmError),
}

impl LlmClient {
    pub fn new(config: LlmConfig) -> Self {
        Self::with_ledger(config, Arc::default())
    }

    pub fn with_ledger(config: LlmConfig, ledger: Arc<Mutex<UsageLedger>>) -> Self {
        Self { config, ledger }
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    pub fn ledger(&self) -> UsageLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    pub fn shared_ledger(&self) -> Arc<Mutex<UsageLedger>> {
        self.ledger.clone()
    }

    /// One chat-completion round trip with retries on transport errors,
    /// 5xx/429 replies and malformed bodies.
    pub fn chat_complete(&self, bundle: &PromptBundle) -> Result<(String, UsageRecord), LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(self.config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": bundle.system},
                {"role": "user", "content": bundle.user},
            ],
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
        });
        let total = self.config.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let started = Instant::now();
            match self.attempt(&http, &body, attempt) {
                Ok((text, prompt_tokens, completion_tokens)) => {
                    let rec = UsageRecord {
                        purpose: bundle.template_id.to_string(),
                        prompt_tokens,
                        completion_tokens,
                        wall_ms: started.elapsed().as_millis() as u64,
                    };
                    self.ledger.lock().expect("ledger lock").record(rec.clone());
                    return Ok((text, rec));
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) if attempt >= total => return Err(e),
                Err(Attempt::Retry(e)) => {
                    log::warn!("LLM call attempt {attempt}/{total} failed: {e}");
                    let delay = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
        }
    }

    fn attempt(
        &self,
        http: &reqwest::blocking::Client,
        body: &Value,
        attempts: usize,
    ) -> Result<(String, u64, u64), Attempt> {
        let mut req = http.post(self.config.url()).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            Attempt::Retry(LlmError::Transport {
                attempts,
                message: e.to_string(),
            })
        })?;
        let status = resp.status();
        let text = resp.text().unwrap_or_default();
        if !status.is_success() {
            let err = LlmError::Status {
                attempts,
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            };
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                Attempt::Retry(err)
            } else {
                Attempt::Fatal(err)
            });
        }
        let malformed = |message: String| Attempt::Retry(LlmError::Malformed { attempts, message });
        let value: Value = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
        let content = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed("missing choices[0].message.content".into()))?;
        let tokens = |key: &str| value.pointer(&format!("/usage/{key}")).and_then(Value::as_u64);
        let (prompt, completion) = match (tokens("prompt_tokens"), tokens("completion_tokens")) {
            (Some(p), Some(c)) => (p, c),
            _ => {
                log::warn!("reply carried no usage block; recording zero tokens");
                (0, 0)
            }
        };
        Ok((content.to_string(), prompt, completion))
    }
}

/// Byte range of a balanced `{...}` block starting at `start`, skipping
/// braces inside JSON strings.
fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (off, ch) in text[start..].char_indices() {
        if in_string {
            match ch {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match ch {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + off + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// First balanced brace block in `text` that is a JSON object. Replies
/// often wrap JSON in prose or code fences.
pub fn extract_first_json_object(text: &str) -> Option<Value> {
    text.match_indices('{').find_map(|(start, _)| {
        let end = balanced_end(text, start)?;
        serde_json::from_str::<Value>(&text[start..end])
            .ok()
            .filter(Value::is_object)
    })
}

/// Sends the parsing prompt and parses the first JSON object of the reply.
/// Up to [`PARSE_ATTEMPTS`] replies are requested.
pub fn parse_utterance_via_llm(
    client: &LlmClient,
    templates: &PromptTemplates,
    utterance: &str,
) -> Result<SymbolicExpression, LlmError> {
    let bundle = assemble_prompt(
        templates,
        TemplateId::Parsing,
        &PromptInputs {
            utterance: Some(utterance),
            ..Default::default()
        },
    )?;
    let mut last = String::new();
    for attempt in 1..=PARSE_ATTEMPTS {
        let (reply, _) = client.chat_complete(&bundle)?;
        let parsed = extract_first_json_object(&reply)
            .ok_or_else(|| "reply contains no JSON object".to_string())
            .and_then(|v| {
                crate::expr::from_value(&v, crate::expr::DEFAULT_MAX_DEPTH).map_err(|e: ExprError| e.to_string())
            });
        match parsed {
            Ok(expr) => return Ok(expr),
            Err(e) => {
                log::warn!("parse attempt {attempt} for {utterance:?} failed: {e}");
                last = e;
            }
        }
    }
    Err(LlmError::NoExpression {
        attempts: PARSE_ATTEMPTS,
        last,
    })
}

#[derive(Debug, Deserialize)]
struct KeyedExpression {
    utterance: String,
    expression: Value,
}

/// Pre-parsed expressions used instead of the network.
///
/// The file is either a single expression, which answers every utterance,
/// or JSON lines of `{"utterance": .., "expression": ..}`.
#[derive(Debug, Clone, PartialEq)]
pub enum OfflineExpressions {
    Single(SymbolicExpression),
    Keyed(HashMap<String, SymbolicExpression>),
}

impl OfflineExpressions {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| LlmError::Offline(format!("{}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    pub fn lookup(&self, utterance: &str) -> Result<SymbolicExpression, LlmError> {
        match self {
            OfflineExpressions::Single(e) => Ok(e.clone()),
            OfflineExpressions::Keyed(map) => map
                .get(utterance.trim())
                .cloned()
                .ok_or_else(|| LlmError::Offline(format!("no expression for utterance {utterance:?}"))),
        }
    }
}

impl FromStr for OfflineExpressions {
    type Err = LlmError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        if let Ok(expr) = parse_expression(text) {
            return Ok(OfflineExpressions::Single(expr));
        }
        let mut map = HashMap::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let err = |m: String| LlmError::Offline(format!("line {}: {m}", n + 1));
            let keyed: KeyedExpression = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            let expr = crate::expr::from_value(&keyed.expression, crate::expr::DEFAULT_MAX_DEPTH)
                .map_err(|e| err(e.to_string()))?;
            map.insert(keyed.utterance.trim().to_string(), expr);
        }
        if map.is_empty() {
            return Err(LlmError::Offline("file holds no expressions".into()));
        }
        Ok(OfflineExpressions::Keyed(map))
    }
}

/// Parses a candidate from a reply: either `{"relation", "body"}` or a bare
/// DSL node. The relation is forced to the one requested.
pub fn definition_from_reply(relation: RelationName, reply: &str) -> Result<EncoderDefinition, SourceError> {
    let value = extract_first_json_object(reply)
        .ok_or_else(|| SourceError::Unparseable("reply contains no JSON object".into()))?;
    let body_value = value.get("body").unwrap_or(&value);
    let body = Node::from_json(body_value).map_err(|e| SourceError::Unparseable(e.to_string()))?;
    Ok(EncoderDefinition {
        relation,
        metadata: "llm".into(),
        body,
    })
}

/// Candidate source backed by a chat-completion endpoint. Refinement draws
/// use the `refinement` template, or `self_refine` when failures are to be
/// withheld.
#[derive(Debug, Clone)]
pub struct LlmSource {
    client: LlmClient,
    templates: PromptTemplates,
    refine_with: TemplateId,
}

impl LlmSource {
    pub fn new(client: LlmClient, templates: PromptTemplates) -> Self {
        Self {
            client,
            templates,
            refine_with: TemplateId::Refinement,
        }
    }

    pub fn self_refine(mut self) -> Self {
        self.refine_with = TemplateId::SelfRefine;
        self
    }

    pub fn client(&self) -> &LlmClient {
        &self.client
    }
}

impl CandidateSource for LlmSource {
    fn draw(&self, request: &DrawRequest<'_>) -> Result<EncoderDefinition, SourceError> {
        let template = if request.context.is_some() {
            self.refine_with
        } else {
            TemplateId::InitGeneration
        };
        let bundle = assemble_prompt(
            &self.templates,
            template,
            &PromptInputs {
                relation: Some(request.relation),
                example: request.example,
                prior: request.context,
                utterance: None,
            },
        )?;
        let (reply, _) = self.client.chat_complete(&bundle)?;
        definition_from_reply(request.relation, &reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::encoder_to_dsl;
    use crate::optimizer::TestCase;

    fn failure(n: u64) -> Failure {
        Failure {
            case: TestCase {
                scene_id: "s".into(),
                target: n,
                distractor: n + 1,
                anchor: Some(n + 2),
                anchor2: None,
            },
            message: format!("message number {n}"),
        }
    }

    #[test]
    fn init_prompt_embeds_example_verbatim() {
        let t = PromptTemplates::default();
        let near = encoder_to_dsl(RelationName::Near);
        let b = assemble_prompt(
            &t,
            TemplateId::InitGeneration,
            &PromptInputs {
                relation: Some(RelationName::Far),
                example: Some(&near),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(b.user.contains(&compact(&near)));
        assert!(b.user.contains("\"far\""));
        assert_eq!(b.template_id, TemplateId::InitGeneration);
    }

    #[test]
    fn refinement_lists_failures_in_order() {
        let t = PromptTemplates::default();
        let near = encoder_to_dsl(RelationName::Near);
        let fails = vec![failure(1), failure(2), failure(3)];
        let b = assemble_prompt(
            &t,
            TemplateId::Refinement,
            &PromptInputs {
                relation: Some(RelationName::Near),
                prior: Some((&near, &fails)),
                ..Default::default()
            },
        )
        .unwrap();
        let pos: Vec<usize> = fails.iter().map(|f| b.user.find(&f.message).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(b.user.matches(&compact(&near)).count(), 1);
        let init = assemble_prompt(
            &t,
            TemplateId::InitGeneration,
            &PromptInputs {
                relation: Some(RelationName::Near),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(b.user.starts_with(&init.user));

        let s = assemble_prompt(
            &t,
            TemplateId::SelfRefine,
            &PromptInputs {
                relation: Some(RelationName::Near),
                prior: Some((&near, &fails)),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!s.user.contains("message number"));
    }

    #[test]
    fn parsing_prompt_has_utterance_once() {
        let u = "the green mug to the left of the kettle";
        let b = assemble_prompt(
            &PromptTemplates::default(),
            TemplateId::Parsing,
            &PromptInputs {
                utterance: Some(u),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(format!("{}{}", b.system, b.user).matches(u).count(), 1);
        assert!(b.system.contains("against_the_wall"));
    }

    #[test]
    fn missing_inputs_are_reported() {
        let t = PromptTemplates::default();
        assert!(matches!(
            assemble_prompt(
                &t,
                TemplateId::Refinement,
                &PromptInputs {
                    relation: Some(RelationName::Near),
                    ..Default::default()
                }
            ),
            Err(LlmError::MissingInput { .. })
        ));
        assert!(assemble_prompt(&t, TemplateId::Parsing, &PromptInputs::default()).is_err());
    }

    #[test]
    fn template_dir_requires_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let err = PromptTemplates::from_dir(dir.path()).unwrap_err();
        assert!(matches!(err, LlmError::TemplateIo { .. }));
        let bundled = Path::new(env!("CARGO_MANIFEST_DIR")).join("prompts");
        assert_eq!(PromptTemplates::from_dir(bundled).unwrap(), PromptTemplates::default());
    }

    #[test]
    fn render_leaves_unknown_braces() {
        assert_eq!(render("{a} {\"k\": 1} {b", &[("a", "{b}")]), "{b} {\"k\": 1} {b");
    }

    #[test]
    fn extraction_skips_prose_and_fences() {
        let reply = "Sure! Here it is:\n```json\n{\"category\": \"chair\", \"note\": \"a } brace\"}\n```\nDone {";
        let v = extract_first_json_object(reply).unwrap();
        assert_eq!(v["category"], "chair");
        assert_eq!(extract_first_json_object("no json {here"), None);
        assert_eq!(extract_first_json_object("{not json} {\"a\": 1}").unwrap()["a"], 1);
    }

    #[test]
    fn ledger_totals_are_sums() {
        let mut l = UsageLedger::default();
        for n in 1..=5u64 {
            l.record(UsageRecord {
                purpose: "x".into(),
                prompt_tokens: n,
                completion_tokens: 2 * n,
                wall_ms: 10 * n,
            });
        }
        let t = l.totals();
        assert_eq!(t.calls, 5);
        assert_eq!(
            t.prompt_tokens,
            l.records().iter().map(|r| r.prompt_tokens).sum::<u64>()
        );
        assert_eq!(t.completion_tokens, 30);
        assert_eq!(t.wall_ms, 150);
    }

    #[test]
    fn offline_expressions() {
        let single = OfflineExpressions::from_str(
            r#"{"category":"chair","relations":[{"relation_name":"near","objects":[{"category":"table"}]}]}"#,
        )
        .unwrap();
        assert_eq!(single.lookup("anything").unwrap().category, "chair");
        let keyed = OfflineExpressions::from_str(
            "{\"utterance\": \"the bed\", \"expression\": {\"category\": \"bed\"}}\n\n{\"utterance\": \"a lamp\", \"expression\": {\"category\": \"lamp\"}}\n",
        )
        .unwrap();
        assert_eq!(keyed.lookup("a lamp").unwrap().category, "lamp");
        assert!(keyed.lookup("a sofa").is_err());
    }

    #[test]
    fn definition_reply_forms() {
        let full = r#"ok {"relation": "near", "body": {"const": 2}}"#;
        assert_eq!(
            definition_from_reply(RelationName::Far, full).unwrap().relation,
            RelationName::Far
        );
        let bare = r#"{"op": "abs", "args": [{"const": -1}]}"#;
        assert!(definition_from_reply(RelationName::Far, bare).is_ok());
        assert!(matches!(
            definition_from_reply(RelationName::Far, "nothing"),
            Err(SourceError::Unparseable(_))
        ));
    }

    #[test]
    fn env_config_requires_endpoint() {
        // only checks the parsing path; the variable is not expected in CI
        if std::env::var("LASP_LLM_ENDPOINT").is_err() {
            assert!(matches!(LlmConfig::from_env(), Err(LlmError::NotConfigured)));
        }
        let cfg = LlmConfig::new("http://x/v1/");
        assert_eq!(cfg.url(), "http://x/v1/chat/completions");
        assert_eq!((cfg.temperature, cfg.top_p, cfg.max_retries), (1.0, 0.95, 2));
    }
}
