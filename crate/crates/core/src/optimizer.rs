//! Test-driven encoder search.
//!
//! Candidates are scored by their pass rate on a suite of triplet test cases
//! `(target, distractor, anchor)`; failing cases become error messages that
//! condition the next round of candidates. The best `top_k` candidates of
//! each round are refined `n_sample` times, for up to `n_iter` rounds.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::encoder::{
    encoder_to_dsl, eval_encoder, mutate_definition, validate_definition, DefinitionError, EncoderDefinition,
    EncoderRegistry, RegistryError, RelationFeature,
};
use crate::expr::{Arity, RelationName};
use crate::llm::LlmError;
use crate::scene::{load_scene, precompute_geometry, BoundingBox, PairGeometry, Scene, SceneError};

/// Draw attempts per candidate before a source failure aborts the run.
pub const DRAW_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub scene_id: String,
    pub target: u64,
    pub distractor: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor2: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed suite file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scene {scene_id}: {source}")]
    Scene {
        scene_id: String,
        #[source]
        source: SceneError,
    },
    #[error("test suite has no cases")]
    Empty,
    #[error("case {index}: unknown scene {scene_id}")]
    UnknownScene { index: usize, scene_id: String },
    #[error("case {index}: id {id} not in scene {scene_id}")]
    UnknownId { index: usize, scene_id: String, id: u64 },
    #[error("case {index}: {reason}")]
    Degenerate { index: usize, reason: String },
}

#[derive(Debug)]
struct SuiteScene {
    scene: Arc<Scene>,
    geometry: PairGeometry,
}

/// Positions of a case's objects within its scene.
#[derive(Debug, Clone, Copy)]
struct ResolvedCase {
    target: usize,
    distractor: usize,
    anchor: usize,
    anchor2: usize,
}

#[derive(Debug)]
pub struct TestSuite {
    relation: RelationName,
    cases: Vec<TestCase>,
    resolved: Vec<ResolvedCase>,
    scenes: BTreeMap<String, SuiteScene>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteFile {
    pub relation: RelationName,
    pub cases: Vec<TestCase>,
}

impl TestSuite {
    pub fn new(
        relation: RelationName,
        cases: Vec<TestCase>,
        scenes: impl IntoIterator<Item = Arc<Scene>>,
    ) -> Result<Self, SuiteError> {
        if cases.is_empty() {
            return Err(SuiteError::Empty);
        }
        let scenes: BTreeMap<String, SuiteScene> = scenes
            .into_iter()
            .map(|scene| {
                let geometry = precompute_geometry(&scene);
                (scene.scene_id().to_string(), SuiteScene { scene, geometry })
            })
            .collect();
        let arity = relation.arity();
        let mut resolved = Vec::with_capacity(cases.len());
        for (index, case) in cases.iter().enumerate() {
            let entry = scenes.get(&case.scene_id).ok_or_else(|| SuiteError::UnknownScene {
                index,
                scene_id: case.scene_id.clone(),
            })?;
            let pos = |id: u64| {
                entry.scene.index_of(id).ok_or_else(|| SuiteError::UnknownId {
                    index,
                    scene_id: case.scene_id.clone(),
                    id,
                })
            };
            let degenerate = |reason: &str| SuiteError::Degenerate {
                index,
                reason: reason.to_string(),
            };
            if case.target == case.distractor {
                return Err(degenerate("target equals distractor"));
            }
            let mut r = ResolvedCase {
                target: pos(case.target)?,
                distractor: pos(case.distractor)?,
                anchor: 0,
                anchor2: 0,
            };
            let mut anchors = Vec::new();
            if arity >= Arity::Binary {
                anchors.push(case.anchor.ok_or_else(|| degenerate("missing anchor"))?);
            }
            if arity == Arity::Ternary {
                anchors.push(case.anchor2.ok_or_else(|| degenerate("missing anchor2"))?);
            }
            for &a in &anchors {
                if a == case.target || a == case.distractor {
                    return Err(degenerate("anchor coincides with target or distractor"));
                }
            }
            if anchors.len() == 2 && anchors[0] == anchors[1] {
                return Err(degenerate("anchor equals anchor2"));
            }
            if let Some(&a) = anchors.first() {
                r.anchor = pos(a)?;
            }
            if let Some(&a) = anchors.get(1) {
                r.anchor2 = pos(a)?;
            }
            resolved.push(r);
        }
        Ok(Self {
            relation,
            cases,
            resolved,
            scenes,
        })
    }

    /// Reads a suite file and resolves each `scene_id` to
    /// `<scenes_dir>/<scene_id>.json`.
    pub fn load(path: impl AsRef<Path>, scenes_dir: impl AsRef<Path>) -> Result<Self, SuiteError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| SuiteError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: SuiteFile = serde_json::from_str(&text)?;
        let mut scenes = BTreeMap::new();
        for case in &file.cases {
            if !scenes.contains_key(&case.scene_id) {
                let scene_path = scenes_dir.as_ref().join(format!("{}.json", case.scene_id));
                let scene = load_scene(&scene_path).map_err(|source| SuiteError::Scene {
                    scene_id: case.scene_id.clone(),
                    source,
                })?;
                scenes.insert(case.scene_id.clone(), Arc::new(scene));
            }
        }
        Self::new(file.relation, file.cases, scenes.into_values())
    }

    pub fn relation(&self) -> RelationName {
        self.relation
    }

    pub fn cases(&self) -> &[TestCase] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn scene(&self, scene_id: &str) -> Option<&Arc<Scene>> {
        self.scenes.get(scene_id).map(|s| &s.scene)
    }

    pub fn scenes(&self) -> impl Iterator<Item = &Arc<Scene>> {
        self.scenes.values().map(|s| &s.scene)
    }

    /// Writes `<dir>/suite.json` and `<dir>/scenes/<scene_id>.json`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> std::io::Result<PathBuf> {
        let scenes_dir = dir.as_ref().join("scenes");
        fs::create_dir_all(&scenes_dir)?;
        for scene in self.scenes() {
            fs::write(
                scenes_dir.join(format!("{}.json", scene.scene_id())),
                scene.to_json_string(),
            )?;
        }
        let path = dir.as_ref().join("suite.json");
        let text = serde_json::to_string_pretty(&self.to_file()).expect("suite serialization is infallible");
        fs::write(&path, text)?;
        Ok(path)
    }

    pub fn to_file(&self) -> SuiteFile {
        SuiteFile {
            relation: self.relation,
            cases: self.cases.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub case: TestCase,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub definition: EncoderDefinition,
    pub pass_rate: f64,
    pub passed: usize,
    pub total: usize,
    pub failures: Vec<Failure>,
    /// Set when the candidate failed static validation and was not run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_error: Option<String>,
}

fn render_box(b: &BoundingBox) -> String {
    let parts: Vec<String> = b.to_array().iter().map(|v| format!("{v:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Failure message for one case. Boxes render as `[cx, cy, cz, w, d, h]`
/// with six fractional digits.
pub fn synthesize_error_message(relation: RelationName, case: &TestCase, scene: &Scene) -> String {
    let render = |id: Option<u64>| {
        id.and_then(|id| scene.object(id))
            .map(|o| render_box(&o.bbox))
            .unwrap_or_else(|| "[?]".to_string())
    };
    let t = render(Some(case.target));
    let d = render(Some(case.distractor));
    let rel = relation.as_str();
    match relation.arity() {
        Arity::Unary => {
            let spaced = relation.spaced();
            format!("{t} is {spaced} So feature value of {t} should be larger than the feature value of {d}.")
        }
        Arity::Binary => {
            let a = render(case.anchor);
            let spaced = relation.spaced();
            format!(
                "{t} is {spaced} {a} So feature value of {t} \"{rel}\" {a} should be larger than the feature value of {d} \"{rel}\" {a}."
            )
        }
        Arity::Ternary => {
            let a = render(case.anchor);
            let a2 = render(case.anchor2);
            format!(
                "{t} is {rel} {a} and {a2} So feature value of {t} \"{rel}\" {a} and {a2} should be larger than the feature value of {d} \"{rel}\" {a} and {a2}."
            )
        }
    }
}

fn case_values(feature: &RelationFeature, r: &ResolvedCase) -> (f64, f64) {
    match feature.relation.arity() {
        Arity::Unary => (feature.get1(r.target), feature.get1(r.distractor)),
        Arity::Binary => (feature.get2(r.target, r.anchor), feature.get2(r.distractor, r.anchor)),
        Arity::Ternary => (
            feature.get3(r.target, r.anchor, r.anchor2),
            feature.get3(r.distractor, r.anchor, r.anchor2),
        ),
    }
}

fn score(def: &EncoderDefinition, suite: &TestSuite) -> CandidateReport {
    let mut features: HashMap<&str, RelationFeature> = HashMap::new();
    let mut failures = Vec::new();
    for (case, r) in suite.cases.iter().zip(&suite.resolved) {
        let entry = &suite.scenes[&case.scene_id];
        let feature = features
            .entry(case.scene_id.as_str())
            .or_insert_with(|| eval_encoder(def, &entry.scene, &entry.geometry));
        let (target, distractor) = case_values(feature, r);
        // ties and NaN fail
        if target.partial_cmp(&distractor) != Some(std::cmp::Ordering::Greater) {
            failures.push(Failure {
                case: case.clone(),
                message: synthesize_error_message(suite.relation, case, &entry.scene),
            });
        }
    }
    let total = suite.cases.len();
    let passed = total - failures.len();
    CandidateReport {
        definition: def.clone(),
        pass_rate: passed as f64 / total as f64,
        passed,
        total,
        failures,
        validation_error: None,
    }
}

pub fn run_test_suite(def: &EncoderDefinition, suite: &TestSuite) -> Result<CandidateReport, OptimizeError> {
    if def.relation != suite.relation {
        return Err(OptimizeError::RelationMismatch {
            definition: def.relation,
            suite: suite.relation,
        });
    }
    validate_definition(def)?;
    Ok(score(def, suite))
}

/// Like [`run_test_suite`] but total: invalid or mismatched candidates score 0.
fn evaluate_candidate(def: &EncoderDefinition, suite: &TestSuite) -> CandidateReport {
    let problem = if def.relation != suite.relation {
        Some(format!(
            "definition is for {}, suite is for {}",
            def.relation, suite.relation
        ))
    } else {
        validate_definition(def).err().map(|e| e.to_string())
    };
    match problem {
        None => score(def, suite),
        Some(msg) => CandidateReport {
            definition: def.clone(),
            pass_rate: 0.0,
            passed: 0,
            total: suite.len(),
            failures: Vec::new(),
            validation_error: Some(msg),
        },
    }
}

/// Highest pass rates first; equal rates keep their original order.
pub fn select_top_k(reports: &[CandidateReport], k: usize) -> Vec<CandidateReport> {
    let mut sorted: Vec<&CandidateReport> = reports.iter().collect();
    sorted.sort_by(|a, b| b.pass_rate.total_cmp(&a.pass_rate));
    sorted.into_iter().take(k).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("relation {0} has more than one in-context predecessor")]
    MultiplePredecessors(RelationName),
    #[error("in-context example graph has a cycle through {0}")]
    Cycle(RelationName),
}

/// Directed acyclic graph; an edge `A -> B` makes A's accepted encoder the
/// in-context example when generating B.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExampleGraph {
    /// target -> source
    predecessors: BTreeMap<RelationName, RelationName>,
}

impl ExampleGraph {
    pub fn new(edges: impl IntoIterator<Item = (RelationName, RelationName)>) -> Result<Self, GraphError> {
        let mut predecessors = BTreeMap::new();
        for (from, to) in edges {
            if predecessors.insert(to, from).is_some_and(|prev| prev != from) {
                return Err(GraphError::MultiplePredecessors(to));
            }
        }
        let graph = Self { predecessors };
        for &start in graph.predecessors.keys() {
            let mut cur = start;
            for _ in 0..=RelationName::ALL.len() {
                match graph.predecessor(cur) {
                    Some(p) if p == start => return Err(GraphError::Cycle(start)),
                    Some(p) => cur = p,
                    None => break,
                }
            }
        }
        Ok(graph)
    }

    /// Relations that share most of their arithmetic are linked; left,
    /// above and at_the_corner start from scratch.
    pub fn default_graph() -> Self {
        use RelationName::*;
        Self::new([
            (Near, Far),
            (Near, Between),
            (Left, Right),
            (Left, Front),
            (Front, Behind),
            (Above, Below),
            (Large, Small),
            (High, Low),
            (Low, OnTheFloor),
            (AtTheCorner, AgainstTheWall),
        ])
        .expect("default graph is acyclic")
    }

    pub fn predecessor(&self, relation: RelationName) -> Option<RelationName> {
        self.predecessors.get(&relation).copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = (RelationName, RelationName)> + '_ {
        self.predecessors.iter().map(|(&to, &from)| (from, to))
    }
}

/// The accepted encoder of `relation`'s predecessor, if there is one.
pub fn retrieve_example(
    relation: RelationName,
    graph: &ExampleGraph,
    registry: &EncoderRegistry,
) -> Option<EncoderDefinition> {
    let pred = graph.predecessor(relation)?;
    let found = registry.accepted(pred).cloned();
    if found.is_none() {
        log::warn!("in-context example {pred} for {relation} has no accepted encoder yet");
    }
    found
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub n_iter: usize,
    pub n_sample: usize,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_iter: 5,
            n_sample: 5,
            top_k: 3,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    /// Upper bound on candidate evaluations for one run.
    pub fn budget(&self) -> usize {
        self.n_sample + self.n_iter.saturating_sub(1) * self.top_k * self.n_sample
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SourceError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("reply did not contain a usable definition: {0}")]
    Unparseable(String),
    #[error("{0}")]
    Other(String),
}

pub struct DrawRequest<'a> {
    pub relation: RelationName,
    pub iteration: usize,
    /// Definition to refine and its failures.
    pub context: Option<(&'a EncoderDefinition, &'a [Failure])>,
    pub example: Option<&'a EncoderDefinition>,
    pub seed: u64,
}

/// Where candidates come from.
pub trait CandidateSource: Send + Sync {
    fn draw(&self, request: &DrawRequest<'_>) -> Result<EncoderDefinition, SourceError>;
}

/// Offline candidate source built on [`mutate_definition`].
///
/// Without a definition to refine it mutates the in-context example when
/// present, else its skeleton for the relation (the builtin unless
/// overridden).
#[derive(Debug, Clone, Default)]
pub struct MutationSource {
    skeletons: BTreeMap<RelationName, EncoderDefinition>,
}

impl MutationSource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_skeleton(mut self, def: EncoderDefinition) -> Self {
        self.skeletons.insert(def.relation, def);
        self
    }

    fn base(&self, request: &DrawRequest<'_>) -> EncoderDefinition {
        if let Some((def, _)) = request.context {
            return def.clone();
        }
        if let Some(example) = request.example {
            let retargeted = EncoderDefinition {
                relation: request.relation,
                ..example.clone()
            };
            if validate_definition(&retargeted).is_ok() {
                return retargeted;
            }
        }
        self.skeletons
            .get(&request.relation)
            .cloned()
            .unwrap_or_else(|| encoder_to_dsl(request.relation))
    }
}

impl CandidateSource for MutationSource {
    fn draw(&self, request: &DrawRequest<'_>) -> Result<EncoderDefinition, SourceError> {
        let mut def = mutate_definition(&self.base(request), request.seed);
        def.metadata = format!("mutated-gen{}", request.iteration);
        Ok(def)
    }
}

/// One line of the optimization run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateLogRecord {
    pub iteration: usize,
    pub index: usize,
    pub pass_rate: f64,
    pub n_failures: usize,
    pub definition_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeOutcome {
    pub best: EncoderDefinition,
    pub best_pass_rate: f64,
    /// Best-so-far pass rate after each completed iteration.
    pub history: Vec<f64>,
    pub log: Vec<CandidateLogRecord>,
    pub evaluations: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum OptimizeError {
    #[error("definition is for {definition}, suite is for {suite}")]
    RelationMismatch {
        definition: RelationName,
        suite: RelationName,
    },
    #[error("invalid definition: {0}")]
    InvalidDefinition(#[from] DefinitionError),
    #[error("optimizer config: {0}")]
    Config(String),
    #[error("candidate source failed after {attempts} attempts: {source}")]
    Source {
        attempts: usize,
        #[source]
        source: SourceError,
        history: Vec<f64>,
        log: Vec<CandidateLogRecord>,
    },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Per-candidate seed, independent of evaluation order.
fn candidate_seed(seed: u64, iteration: usize, parent: usize, sample: usize, attempt: usize) -> u64 {
    [iteration, parent, sample, attempt]
        .iter()
        .fold(mix(seed), |acc, &v| mix(acc ^ v as u64))
}

struct Run<'a> {
    suite: &'a TestSuite,
    memo: HashMap<String, CandidateReport>,
    log: Vec<CandidateLogRecord>,
    history: Vec<f64>,
    evaluations: usize,
}

impl Run<'_> {
    fn evaluate(&mut self, def: EncoderDefinition, iteration: usize, index: usize) -> CandidateReport {
        self.evaluations += 1;
        let hash = def.hash();
        let report = match self.memo.get(&hash) {
            Some(r) => CandidateReport {
                definition: def,
                ..r.clone()
            },
            None => {
                let r = evaluate_candidate(&def, self.suite);
                self.memo.insert(hash.clone(), r.clone());
                r
            }
        };
        self.log.push(CandidateLogRecord {
            iteration,
            index,
            pass_rate: report.pass_rate,
            n_failures: report.failures.len(),
            definition_hash: hash,
        });
        report
    }

    fn source_error(self, source: SourceError) -> OptimizeError {
        OptimizeError::Source {
            attempts: DRAW_ATTEMPTS,
            source,
            history: self.history,
            log: self.log,
        }
    }
}

fn draw_with_retry(
    source: &dyn CandidateSource,
    relation: RelationName,
    iteration: usize,
    context: Option<&CandidateReport>,
    example: Option<&EncoderDefinition>,
    seed: impl Fn(usize) -> u64,
) -> Result<EncoderDefinition, SourceError> {
    let mut last = None;
    for attempt in 0..DRAW_ATTEMPTS {
        let request = DrawRequest {
            relation,
            iteration,
            context: context.map(|r| (&r.definition, r.failures.as_slice())),
            example,
            seed: seed(attempt),
        };
        match source.draw(&request) {
            Ok(def) => return Ok(def),
            Err(e) => {
                log::warn!("candidate draw failed (attempt {}): {e}", attempt + 1);
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Searches for an encoder of `relation` that passes `suite`, installs the
/// best candidate in `registry`'s library and returns it with the run
/// history. Returns as soon as a candidate passes every case.
pub fn optimize_encoder(
    relation: RelationName,
    suite: &TestSuite,
    source: &dyn CandidateSource,
    registry: &mut EncoderRegistry,
    graph: &ExampleGraph,
    cfg: &OptimizerConfig,
) -> Result<OptimizeOutcome, OptimizeError> {
    if suite.relation != relation {
        return Err(OptimizeError::RelationMismatch {
            definition: relation,
            suite: suite.relation,
        });
    }
    if cfg.n_iter == 0 || cfg.n_sample == 0 || cfg.top_k == 0 {
        return Err(OptimizeError::Config(
            "n_iter, n_sample and top_k must be positive".into(),
        ));
    }
    let example = retrieve_example(relation, graph, registry);
    let mut run = Run {
        suite,
        memo: HashMap::new(),
        log: Vec::new(),
        history: Vec::new(),
        evaluations: 0,
    };

    let mut drawn = Vec::with_capacity(cfg.n_sample);
    for m in 0..cfg.n_sample {
        match draw_with_retry(source, relation, 1, None, example.as_ref(), |a| {
            candidate_seed(cfg.seed, 1, 0, m, a)
        }) {
            Ok(def) => drawn.push(def),
            Err(e) => return Err(run.source_error(e)),
        }
    }
    let mut reports = Vec::with_capacity(drawn.len());
    for (index, def) in drawn.into_iter().enumerate() {
        reports.push(run.evaluate(def, 1, index));
    }
    let mut best = reports
        .iter()
        .fold(None::<&CandidateReport>, |best, r| match best {
            Some(b) if b.pass_rate >= r.pass_rate => Some(b),
            _ => Some(r),
        })
        .expect("n_sample > 0")
        .clone();
    run.history.push(best.pass_rate);

    if best.pass_rate < 1.0 {
        let mut top = select_top_k(&reports, cfg.top_k);
        'search: for iteration in 2..=cfg.n_iter {
            let mut drawn = Vec::with_capacity(top.len() * cfg.n_sample);
            for (p, parent) in top.iter().enumerate() {
                for m in 0..cfg.n_sample {
                    match draw_with_retry(source, relation, iteration, Some(parent), example.as_ref(), |a| {
                        candidate_seed(cfg.seed, iteration, p, m, a)
                    }) {
                        Ok(def) => drawn.push(def),
                        Err(e) => return Err(run.source_error(e)),
                    }
                }
            }
            let mut results = Vec::with_capacity(drawn.len());
            for (index, def) in drawn.into_iter().enumerate() {
                let report = run.evaluate(def, iteration, index);
                if report.pass_rate > best.pass_rate {
                    best = report.clone();
                }
                if report.pass_rate >= 1.0 {
                    run.history.push(best.pass_rate);
                    break 'search;
                }
                results.push(report);
            }
            run.history.push(best.pass_rate);
            top = select_top_k(&results, cfg.top_k);
        }
    }

    registry.accept(best.definition.clone())?;
    Ok(OptimizeOutcome {
        best: best.definition,
        best_pass_rate: best.pass_rate,
        history: run.history,
        log: run.log,
        evaluations: run.evaluations,
    })
}
