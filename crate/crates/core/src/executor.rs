//! Executes symbolic expressions against a scene.
//!
//! The score of an expression starts at its category feature. Every clause
//! contracts its relation feature with the anchor scores, is normalized with
//! a softmax, optionally negated as `max(f) - f`, and multiplies into the
//! running score.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::encoder::{eval_encoder, RegistrySnapshot, RelationFeature};
use crate::expr::{Arity, RelationClause, RelationName, SymbolicExpression};
use crate::scene::{normalize_label, precompute_geometry, PairGeometry, Scene};

/// Multiplier applied to similarities before the category softmax.
pub const CATEGORY_SCALE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExecError {
    #[error("feature cache belongs to scene {cache} but was used with scene {scene}")]
    FingerprintMismatch { cache: String, scene: String },
    #[error("no active encoder for relation {0}")]
    MissingEncoder(RelationName),
    #[error("similarity column has {found} entries for {expected} objects")]
    SimilarityLength { expected: usize, found: usize },
    #[error("ground-truth id {id} does not exist in scene {scene}")]
    UnknownTarget { id: u64, scene: String },
}

/// Numerically stabilized softmax.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryFeature {
    pub category: String,
    pub data: Vec<f64>,
}

/// `softmax(100 * sim)` over the scene's objects.
pub fn compute_category_feature(scene: &Scene, category: &str, sim: &[f64]) -> Result<CategoryFeature, ExecError> {
    if sim.len() != scene.len() {
        return Err(ExecError::SimilarityLength {
            expected: scene.len(),
            found: sim.len(),
        });
    }
    let scaled: Vec<f64> = sim.iter().map(|s| CATEGORY_SCALE * s).collect();
    Ok(CategoryFeature {
        category: category.to_string(),
        data: softmax(&scaled),
    })
}

type Cell<T> = Arc<OnceLock<Arc<T>>>;

/// Lazily populated relation and category features for one scene.
///
/// Population is single-flight: concurrent requests for the same feature
/// compute it once and share the result.
#[derive(Debug)]
pub struct FeatureCache {
    fingerprint: String,
    geometry: PairGeometry,
    encoders: RegistrySnapshot,
    relations: Mutex<HashMap<RelationName, Cell<RelationFeature>>>,
    categories: Mutex<HashMap<String, Cell<CategoryFeature>>>,
    evaluations: AtomicUsize,
}

impl FeatureCache {
    pub fn new(scene: &Scene, encoders: RegistrySnapshot) -> Self {
        Self {
            fingerprint: scene.fingerprint().to_string(),
            geometry: precompute_geometry(scene),
            encoders,
            relations: Mutex::default(),
            categories: Mutex::default(),
            evaluations: AtomicUsize::new(0),
        }
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn geometry(&self) -> &PairGeometry {
        &self.geometry
    }

    pub fn encoders(&self) -> &RegistrySnapshot {
        &self.encoders
    }

    /// Number of relation encoders evaluated so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    fn check(&self, scene: &Scene) -> Result<(), ExecError> {
        if scene.fingerprint() != self.fingerprint {
            return Err(ExecError::FingerprintMismatch {
                cache: self.fingerprint.clone(),
                scene: scene.fingerprint().to_string(),
            });
        }
        Ok(())
    }

    pub fn relation(&self, scene: &Scene, relation: RelationName) -> Result<Arc<RelationFeature>, ExecError> {
        self.check(scene)?;
        let def = self.encoders.get(relation).ok_or(ExecError::MissingEncoder(relation))?;
        let cell = self
            .relations
            .lock()
            .expect("feature cache poisoned")
            .entry(relation)
            .or_default()
            .clone();
        Ok(cell
            .get_or_init(|| {
                self.evaluations.fetch_add(1, Ordering::Relaxed);
                Arc::new(eval_encoder(def, scene, &self.geometry))
            })
            .clone())
    }

    pub fn category(&self, scene: &Scene, category: &str) -> Result<Arc<CategoryFeature>, ExecError> {
        self.check(scene)?;
        let cell = self
            .categories
            .lock()
            .expect("feature cache poisoned")
            .entry(normalize_label(category))
            .or_default()
            .clone();
        if let Some(f) = cell.get() {
            return Ok(f.clone());
        }
        let (sim, from_table) = scene.similarity_column(category);
        if !from_table && scene.similarities().is_some() {
            log::warn!("category \"{category}\" missing from similarity table; using exact label match");
        }
        if sim.iter().all(|&s| s == 0.0) {
            log::warn!(
                "category \"{category}\" matches no object in scene {}; category feature is uniform",
                scene.scene_id()
            );
        }
        let feature = compute_category_feature(scene, category, &sim)?;
        Ok(cell.get_or_init(|| Arc::new(feature)).clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingScore {
    pub data: Vec<f64>,
    /// Positions by descending score; ties keep ascending position.
    pub argsort: Vec<usize>,
}

impl MatchingScore {
    pub fn new(data: Vec<f64>) -> Self {
        let mut argsort: Vec<usize> = (0..data.len()).collect();
        argsort.sort_by(|&a, &b| data[b].total_cmp(&data[a]).then(a.cmp(&b)));
        Self { data, argsort }
    }

    pub fn argmax(&self) -> usize {
        self.argsort[0]
    }
}

fn clause_feature(clause: &RelationClause, scene: &Scene, cache: &FeatureCache) -> Result<Vec<f64>, ExecError> {
    let rel = cache.relation(scene, clause.relation)?;
    let n = scene.len();
    let f: Vec<f64> = match clause.relation.arity() {
        Arity::Unary => rel.data.clone(),
        Arity::Binary => {
            let a = execute_raw(&clause.anchors[0], scene, cache)?;
            (0..n)
                .map(|i| rel.row(i).iter().zip(&a).map(|(r, a)| r * a).sum())
                .collect()
        }
        Arity::Ternary => {
            let a1 = execute_raw(&clause.anchors[0], scene, cache)?;
            let a2 = execute_raw(&clause.anchors[1], scene, cache)?;
            (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            let inner: f64 = (0..n).map(|k| rel.get3(i, j, k) * a2[k]).sum();
                            a1[j] * inner
                        })
                        .sum()
                })
                .collect()
        }
    };
    let mut f = softmax(&f);
    if clause.negative {
        let m = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in f.iter_mut() {
            *v = m - *v;
        }
    }
    Ok(f)
}

fn execute_raw(expr: &SymbolicExpression, scene: &Scene, cache: &FeatureCache) -> Result<Vec<f64>, ExecError> {
    let mut score = cache.category(scene, &expr.category)?.data.clone();
    for clause in &expr.relations {
        let f = clause_feature(clause, scene, cache)?;
        for (s, v) in score.iter_mut().zip(f) {
            *s *= v;
        }
    }
    Ok(score)
}

pub fn execute(expr: &SymbolicExpression, scene: &Scene, cache: &FeatureCache) -> Result<MatchingScore, ExecError> {
    execute_raw(expr, scene, cache).map(MatchingScore::new)
}

/// Running score after the category feature and after each root clause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub label: String,
    pub score: Vec<f64>,
}

pub fn execute_traced(
    expr: &SymbolicExpression,
    scene: &Scene,
    cache: &FeatureCache,
) -> Result<Vec<TraceStep>, ExecError> {
    let mut score = cache.category(scene, &expr.category)?.data.clone();
    let mut steps = vec![TraceStep {
        label: format!("category:{}", expr.category),
        score: score.clone(),
    }];
    for clause in &expr.relations {
        let f = clause_feature(clause, scene, cache)?;
        for (s, v) in score.iter_mut().zip(f) {
            *s *= v;
        }
        let prefix = if clause.negative { "not " } else { "" };
        steps.push(TraceStep {
            label: format!("{prefix}{}", clause.relation),
            score: score.clone(),
        });
    }
    Ok(steps)
}

/// Top-`top_k` positions by score, keeping those within `threshold` of the
/// best (`score >= threshold * max`). The argmax is always kept.
pub fn rank_candidates(score: &MatchingScore, top_k: usize, threshold: f64) -> Vec<usize> {
    let top: Vec<usize> = score.argsort.iter().copied().take(top_k.max(1)).collect();
    let best = score.data[top[0]];
    let total: f64 = top.iter().map(|&p| score.data[p]).sum();
    // the ratio test is unchanged by normalizing the top-k to sum 1
    let norm = |p: usize| if total > 0.0 { score.data[p] / total } else { 0.0 };
    let best_norm = norm(top[0]);
    top.into_iter()
        .enumerate()
        .filter(|&(rank, p)| rank == 0 || (best > 0.0 && norm(p) >= threshold * best_norm))
        .map(|(_, p)| p)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub id: u64,
    pub score: f64,
}

/// Wire form of one grounding run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingResult {
    pub scene_id: String,
    pub expression: SymbolicExpression,
    pub scores: Vec<ScoreEntry>,
    pub candidates: Vec<u64>,
    pub argmax: u64,
}

pub fn ground(
    expr: &SymbolicExpression,
    scene: &Scene,
    cache: &FeatureCache,
    top_k: usize,
    threshold: f64,
) -> Result<GroundingResult, ExecError> {
    let score = execute(expr, scene, cache)?;
    let id = |p: usize| scene.objects()[p].id;
    Ok(GroundingResult {
        scene_id: scene.scene_id().to_string(),
        expression: expr.clone(),
        scores: score
            .argsort
            .iter()
            .map(|&p| ScoreEntry {
                id: id(p),
                score: score.data[p],
            })
            .collect(),
        candidates: rank_candidates(&score, top_k, threshold).into_iter().map(id).collect(),
        argmax: id(score.argmax()),
    })
}

/// Hand-off point for an image-based decision among the candidates.
pub trait VisualDecision {
    fn decide(&self, scene: &Scene, result: &GroundingResult) -> Option<u64>;
}

/// A decision made elsewhere and supplied as an object id.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExternalChoice(pub Option<u64>);

impl VisualDecision for ExternalChoice {
    fn decide(&self, _scene: &Scene, _result: &GroundingResult) -> Option<u64> {
        self.0
    }
}

/// The decider's pick when it names a candidate, the argmax otherwise.
pub fn resolve_target(scene: &Scene, result: &GroundingResult, decider: &dyn VisualDecision) -> u64 {
    match decider.decide(scene, result) {
        Some(id) if result.candidates.contains(&id) => id,
        _ => result.argmax,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConditionSample<'a> {
    pub scene: &'a Scene,
    pub expression: &'a SymbolicExpression,
    pub target_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub conditions: usize,
    pub hits: usize,
}

/// Single-condition accuracy.
///
/// Every root clause is executed on its own against the target category.
/// Objects of one category in one scene form a group; within a group each
/// object is a class, predictions are argmaxes, and precision and recall are
/// macro-averaged over all classes that were predicted (precision) or were
/// a ground truth (recall).
pub fn condition_level_eval(
    samples: &[ConditionSample<'_>],
    encoders: &RegistrySnapshot,
) -> Result<ConditionMetrics, ExecError> {
    let mut caches: HashMap<String, FeatureCache> = HashMap::new();
    // (scene fingerprint, category, object id) -> (true positives, predicted, actual)
    let mut classes: BTreeMap<(String, String, u64), (usize, usize, usize)> = BTreeMap::new();
    let mut conditions = 0;
    let mut hits = 0;
    for sample in samples {
        let scene = sample.scene;
        if scene.object(sample.target_id).is_none() {
            return Err(ExecError::UnknownTarget {
                id: sample.target_id,
                scene: scene.scene_id().to_string(),
            });
        }
        let cache = caches
            .entry(scene.fingerprint().to_string())
            .or_insert_with(|| FeatureCache::new(scene, encoders.clone()));
        let group = normalize_label(&sample.expression.category);
        for clause in &sample.expression.relations {
            let single = SymbolicExpression {
                category: sample.expression.category.clone(),
                relations: vec![clause.clone()],
            };
            let predicted = scene.objects()[execute(&single, scene, cache)?.argmax()].id;
            conditions += 1;
            let key = |id| (scene.fingerprint().to_string(), group.clone(), id);
            classes.entry(key(predicted)).or_default().1 += 1;
            classes.entry(key(sample.target_id)).or_default().2 += 1;
            if predicted == sample.target_id {
                hits += 1;
                classes.entry(key(predicted)).or_default().0 += 1;
            }
        }
    }
    if conditions == 0 {
        log::warn!("condition-level evaluation over an empty condition set");
        return Ok(ConditionMetrics {
            precision: 1.0,
            recall: 1.0,
            conditions: 0,
            hits: 0,
        });
    }
    let mean = |vals: Vec<f64>| vals.iter().sum::<f64>() / vals.len() as f64;
    let precision = mean(
        classes
            .values()
            .filter(|c| c.1 > 0)
            .map(|c| c.0 as f64 / c.1 as f64)
            .collect(),
    );
    let recall = mean(
        classes
            .values()
            .filter(|c| c.2 > 0)
            .map(|c| c.0 as f64 / c.2 as f64)
            .collect(),
    );
    Ok(ConditionMetrics {
        precision,
        recall,
        conditions,
        hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderRegistry;
    use crate::expr::parse_expression;
    use crate::scene::{BoundingBox, SceneObject};

    fn obj(id: u64, label: &str, x: f64) -> SceneObject {
        SceneObject {
            id,
            label: label.into(),
            bbox: BoundingBox::new([x, 0.0, 0.5], [1.0, 1.0, 1.0]),
        }
    }

    fn chairs_and_table() -> Scene {
        Scene::new(
            "s",
            vec![obj(10, "chair", 0.0), obj(11, "chair", 10.0), obj(12, "table", 1.0)],
        )
        .unwrap()
    }

    fn cache(scene: &Scene) -> FeatureCache {
        FeatureCache::new(scene, EncoderRegistry::with_builtins().snapshot())
    }

    #[test]
    fn softmax_examples() {
        let s = Scene::new("s", vec![obj(0, "a", 0.0), obj(1, "a", 2.0), obj(2, "a", 4.0)]).unwrap();
        let f = compute_category_feature(&s, "a", &[0.5, 0.5, 0.5]).unwrap();
        for v in &f.data {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let s2 = Scene::new("s", vec![obj(0, "a", 0.0), obj(1, "a", 2.0)]).unwrap();
        let f = compute_category_feature(&s2, "a", &[1.0, 0.0]).unwrap();
        // exp(-100) / (1 + exp(-100)) = 3.720075976020836e-44
        assert!((f.data[1] - 3.720075976020836e-44).abs() < 1e-57);
        assert_eq!(f.data[0], 1.0);
        assert!((f.data.iter().sum::<f64>() - 1.0).abs() < 1e-15);

        let f = compute_category_feature(&s2, "a", &[0.6, 0.55]).unwrap();
        // 1 / (1 + exp(-5)) = 0.9933071490757153
        assert!((f.data[0] - 0.9933071490757153).abs() < 1e-12);

        assert!(compute_category_feature(&s2, "a", &[1.0]).is_err());
    }

    #[test]
    fn bare_category_score_is_category_feature() {
        let s = chairs_and_table();
        let c = cache(&s);
        let score = execute(&SymbolicExpression::leaf("chair"), &s, &c).unwrap();
        assert_eq!(score.data, c.category(&s, "chair").unwrap().data);
    }

    #[test]
    fn chair_near_table() {
        let s = chairs_and_table();
        let c = cache(&s);
        let e = parse_expression(
            r#"{"category":"chair","relations":[{"relation_name":"near","anchors":[{"category":"table"}]}]}"#,
        )
        .unwrap();
        assert_eq!(s.objects()[execute(&e, &s, &c).unwrap().argmax()].id, 10);

        let neg = parse_expression(
            r#"{"category":"chair","relations":[{"relation_name":"near","anchors":[{"category":"table"}],"negative":true}]}"#,
        )
        .unwrap();
        assert_eq!(s.objects()[execute(&neg, &s, &c).unwrap().argmax()].id, 11);
    }

    #[test]
    fn cache_rejects_other_scene() {
        let s = chairs_and_table();
        let c = cache(&s);
        let other = Scene::new("other", vec![obj(1, "chair", 0.0)]).unwrap();
        assert!(matches!(
            execute(&SymbolicExpression::leaf("chair"), &other, &c),
            Err(ExecError::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn missing_encoder_is_reported() {
        let s = chairs_and_table();
        let c = FeatureCache::new(&s, RegistrySnapshot::from_definitions(Vec::new()));
        let e = parse_expression(r#"{"category":"chair","relations":[{"relation_name":"large"}]}"#).unwrap();
        assert_eq!(
            execute(&e, &s, &c).unwrap_err(),
            ExecError::MissingEncoder(RelationName::Large)
        );
    }

    #[test]
    fn features_are_computed_once_across_threads() {
        let s = chairs_and_table();
        let c = cache(&s);
        std::thread::scope(|scope| {
            for _ in 0..8 {
                scope.spawn(|| c.relation(&s, RelationName::Between).unwrap());
            }
        });
        assert_eq!(c.evaluations(), 1);
    }

    #[test]
    fn candidate_rule() {
        let score = MatchingScore::new(vec![0.9, 0.1, 0.05]);
        assert_eq!(rank_candidates(&score, 5, 0.9), vec![0]);
        let uniform = MatchingScore::new(vec![0.2, 0.2, 0.2]);
        assert_eq!(rank_candidates(&uniform, 5, 0.9), vec![0, 1, 2]);
        let close = MatchingScore::new(vec![0.5, 0.46, 0.3, 0.49]);
        assert_eq!(rank_candidates(&close, 1, 0.0), vec![0]);
        assert_eq!(rank_candidates(&close, 5, 0.9), vec![0, 3, 1]);
        assert_eq!(rank_candidates(&MatchingScore::new(vec![0.0, 0.0]), 5, 0.9), vec![0]);
    }

    #[test]
    fn argsort_ties_keep_position_order() {
        let s = MatchingScore::new(vec![0.1, 0.3, 0.3, 0.2]);
        assert_eq!(s.argsort, vec![1, 2, 3, 0]);
    }

    #[test]
    fn external_choice_must_be_a_candidate() {
        let s = chairs_and_table();
        let c = cache(&s);
        let r = ground(&SymbolicExpression::leaf("chair"), &s, &c, 5, 0.9).unwrap();
        assert_eq!(r.candidates, vec![10, 11]);
        assert_eq!(resolve_target(&s, &r, &ExternalChoice(Some(11))), 11);
        assert_eq!(resolve_target(&s, &r, &ExternalChoice(Some(12))), r.argmax);
        assert_eq!(resolve_target(&s, &r, &ExternalChoice(None)), r.argmax);
    }

    #[test]
    fn condition_eval_cases() {
        let enc = EncoderRegistry::with_builtins().snapshot();
        let empty = condition_level_eval(&[], &enc).unwrap();
        assert_eq!((empty.precision, empty.recall), (1.0, 1.0));

        let s = chairs_and_table();
        let near = parse_expression(
            r#"{"category":"chair","relations":[{"relation_name":"near","anchors":[{"category":"table"}]}]}"#,
        )
        .unwrap();
        let far = parse_expression(
            r#"{"category":"chair","relations":[{"relation_name":"far","anchors":[{"category":"table"}]}]}"#,
        )
        .unwrap();
        let samples = [
            ConditionSample {
                scene: &s,
                expression: &near,
                target_id: 10,
            },
            ConditionSample {
                scene: &s,
                expression: &far,
                target_id: 11,
            },
        ];
        let m = condition_level_eval(&samples, &enc).unwrap();
        assert_eq!((m.precision, m.recall, m.conditions, m.hits), (1.0, 1.0, 2, 2));

        // a wrong label on the second condition: chair 10 is predicted twice
        let samples = [
            samples[0],
            ConditionSample {
                scene: &s,
                expression: &near,
                target_id: 11,
            },
        ];
        let m = condition_level_eval(&samples, &enc).unwrap();
        assert_eq!(m.hits, 1);
        assert!((m.precision - 0.5).abs() < 1e-12);
        assert!((m.recall - 0.5).abs() < 1e-12);

        let bad = [ConditionSample {
            scene: &s,
            expression: &near,
            target_id: 99,
        }];
        assert!(matches!(
            condition_level_eval(&bad, &enc),
            Err(ExecError::UnknownTarget { id: 99, .. })
        ));
    }
}
