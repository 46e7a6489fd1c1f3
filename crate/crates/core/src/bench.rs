//! Benchmark datasets, reports and plot data.
//!
//! A dataset directory holds `scenes/<scene_id>.json` and
//! `expressions.jsonl`, one `{scene_id, expression, target_id, utterance?}`
//! record per line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::encoder::RegistrySnapshot;
use crate::executor::{condition_level_eval, execute, execute_traced, ConditionSample, ExecError, FeatureCache};
use crate::expr::{RelationName, SymbolicExpression};
use crate::scene::{load_scene, normalize_label, Scene, SceneError};
use crate::synthetic;
pub use crate::synthetic::BenchItem;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("expressions.jsonl line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("scene {scene_id}: {source}")]
    Scene {
        scene_id: String,
        #[source]
        source: SceneError,
    },
    #[error("record {index}: ground truth {target_id} missing from scene {scene_id}")]
    MissingGroundTruth {
        index: usize,
        scene_id: String,
        target_id: u64,
    },
    #[error(transparent)]
    Exec(#[from] ExecError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone)]
pub struct BenchDataset {
    pub scenes: BTreeMap<String, Arc<Scene>>,
    pub items: Vec<BenchItem>,
}

#[derive(Deserialize)]
struct RawItem {
    scene_id: String,
    expression: Value,
    target_id: u64,
    #[serde(default)]
    utterance: String,
}

impl BenchDataset {
    pub fn new(scenes: impl IntoIterator<Item = Scene>, items: Vec<BenchItem>) -> Result<Self, BenchError> {
        let scenes: BTreeMap<String, Arc<Scene>> = scenes
            .into_iter()
            .map(|s| (s.scene_id().to_string(), Arc::new(s)))
            .collect();
        for (index, item) in items.iter().enumerate() {
            let ok = scenes
                .get(&item.scene_id)
                .is_some_and(|s| s.object(item.target_id).is_some());
            if !ok {
                return Err(BenchError::MissingGroundTruth {
                    index,
                    scene_id: item.scene_id.clone(),
                    target_id: item.target_id,
                });
            }
        }
        Ok(Self { scenes, items })
    }

    /// The bundled 40-utterance synthetic benchmark.
    pub fn mini(seed: u64) -> Self {
        let (scenes, items) = synthetic::mini_benchmark(seed);
        Self::new(scenes, items).expect("generated benchmark is consistent")
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, BenchError> {
        let dir = dir.as_ref();
        let path = dir.join("expressions.jsonl");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut items = Vec::new();
        let mut scenes = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record = |message: String| BenchError::Record { line: n + 1, message };
            let raw: RawItem = serde_json::from_str(line).map_err(|e| record(e.to_string()))?;
            let expression = crate::expr::from_value(&raw.expression, crate::expr::DEFAULT_MAX_DEPTH)
                .map_err(|e| record(e.to_string()))?;
            if !scenes.contains_key(&raw.scene_id) {
                let scene =
                    load_scene(dir.join("scenes").join(format!("{}.json", raw.scene_id))).map_err(|source| {
                        BenchError::Scene {
                            scene_id: raw.scene_id.clone(),
                            source,
                        }
                    })?;
                scenes.insert(raw.scene_id.clone(), scene);
            }
            items.push(BenchItem {
                scene_id: raw.scene_id,
                utterance: raw.utterance,
                expression,
                target_id: raw.target_id,
            });
        }
        Self::new(scenes.into_values(), items)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), BenchError> {
        let dir = dir.as_ref();
        let scenes_dir = dir.join("scenes");
        fs::create_dir_all(&scenes_dir).map_err(io_err(&scenes_dir))?;
        for scene in self.scenes.values() {
            let path = scenes_dir.join(format!("{}.json", scene.scene_id()));
            fs::write(&path, scene.to_json_string() + "\n").map_err(io_err(&path))?;
        }
        let mut lines = String::new();
        for item in &self.items {
            lines.push_str(&serde_json::to_string(item).expect("item serialization is infallible"));
            lines.push('\n');
        }
        let path = dir.join("expressions.jsonl");
        fs::write(&path, lines).map_err(io_err(&path))
    }

    /// Expected accuracy of picking uniformly among objects of the target
    /// category.
    pub fn random_baseline(&self) -> f64 {
        if self.items.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .items
            .iter()
            .map(|item| 1.0 / self.same_category(item).len().max(1) as f64)
            .sum();
        total / self.items.len() as f64
    }

    fn same_category(&self, item: &BenchItem) -> Vec<u64> {
        let want = normalize_label(&item.expression.category);
        self.scenes[&item.scene_id]
            .objects()
            .iter()
            .filter(|o| normalize_label(&o.label) == want)
            .map(|o| o.id)
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub workers: usize,
    /// Replaces the grounding pipeline with a uniform pick among objects of
    /// the target category.
    pub random_choice: bool,
    pub seed: u64,
    /// Record wall-clock time per utterance; off for byte-stable reports.
    pub timing: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            random_choice: false,
            seed: 0,
            timing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub scene_id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub utterance: String,
    pub expression: SymbolicExpression,
    pub argmax: u64,
    pub ground_truth: u64,
    pub correct: bool,
    pub wall_ms: f64,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchAggregates {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub mean_wall_ms: f64,
    pub mean_tokens: f64,
    pub condition_precision: f64,
    pub condition_recall: f64,
    /// Expected accuracy of a uniform pick within the target category.
    pub random_baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    pub aggregates: BenchAggregates,
    pub config: Value,
}

impl BenchReport {
    /// Accuracy, totals and means recomputed from the records.
    pub fn recount(&self) -> (usize, usize, f64) {
        let total = self.records.len();
        let correct = self.records.iter().filter(|r| r.correct).count();
        let acc = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        (total, correct, acc)
    }

    pub fn is_consistent(&self) -> bool {
        let (total, correct, acc) = self.recount();
        let wall = if total == 0 {
            0.0
        } else {
            self.records.iter().map(|r| r.wall_ms).sum::<f64>() / total as f64
        };
        total == self.aggregates.total
            && correct == self.aggregates.correct
            && acc == self.aggregates.accuracy
            && (wall - self.aggregates.mean_wall_ms).abs() <= 1e-9 * wall.abs().max(1.0)
    }
}

fn ground_one(
    dataset: &BenchDataset,
    item: &BenchItem,
    cache: &FeatureCache,
    cfg: &BenchConfig,
    index: usize,
) -> Result<BenchRecord, ExecError> {
    let started = Instant::now();
    let scene = &dataset.scenes[&item.scene_id];
    let argmax = if cfg.random_choice {
        let pool = dataset.same_category(item);
        let mut rng = synthetic::rng(cfg.seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        pool.choose(&mut rng).copied().unwrap_or(scene.objects()[0].id)
    } else {
        let score = execute(&item.expression, scene, cache)?;
        scene.objects()[score.argmax()].id
    };
    let wall_ms = if cfg.timing {
        started.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    Ok(BenchRecord {
        scene_id: item.scene_id.clone(),
        utterance: item.utterance.clone(),
        expression: item.expression.clone(),
        argmax,
        ground_truth: item.target_id,
        correct: argmax == item.target_id,
        wall_ms,
        tokens: 0,
    })
}

/// Grounds every item and aggregates. Items are spread over `workers`
/// threads; record order is input order.
pub fn run_bench(
    dataset: &BenchDataset,
    encoders: &RegistrySnapshot,
    cfg: &BenchConfig,
    config_echo: Value,
) -> Result<BenchReport, BenchError> {
    let caches: BTreeMap<&str, FeatureCache> = dataset
        .scenes
        .iter()
        .map(|(id, scene)| (id.as_str(), FeatureCache::new(scene, encoders.clone())))
        .collect();
    let n = dataset.items.len();
    let workers = cfg.workers.clamp(1, n.max(1));
    let chunk = n.div_ceil(workers).max(1);
    let results: Vec<Result<BenchRecord, ExecError>> = std::thread::scope(|s| {
        let handles: Vec<_> = dataset
            .items
            .chunks(chunk)
            .enumerate()
            .map(|(c, items)| {
                let caches = &caches;
                s.spawn(move || {
                    items
                        .iter()
                        .enumerate()
                        .map(|(k, item)| ground_one(dataset, item, &caches[item.scene_id.as_str()], cfg, c * chunk + k))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("bench worker panicked"))
            .collect()
    });
    let records = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let samples: Vec<ConditionSample<'_>> = dataset
        .items
        .iter()
        .map(|item| ConditionSample {
            scene: &dataset.scenes[&item.scene_id],
            expression: &item.expression,
            target_id: item.target_id,
        })
        .collect();
    let cond = condition_level_eval(&samples, encoders)?;

    let total = records.len();
    let correct = records.iter().filter(|r| r.correct).count();
    let mean = |f: &dyn Fn(&BenchRecord) -> f64| {
        if total == 0 {
            0.0
        } else {
            records.iter().map(f).sum::<f64>() / total as f64
        }
    };
    let aggregates = BenchAggregates {
        total,
        correct,
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        mean_wall_ms: mean(&|r| r.wall_ms),
        mean_tokens: mean(&|r| r.tokens as f64),
        condition_precision: cond.precision,
        condition_recall: cond.recall,
        random_baseline: dataset.random_baseline(),
    };
    Ok(BenchReport {
        records,
        aggregates,
        config: config_echo,
    })
}

/// Relations shown as heatmaps: a symmetric and an antisymmetric pair.
pub const HEATMAP_RELATIONS: [RelationName; 4] = [
    RelationName::Near,
    RelationName::Far,
    RelationName::Left,
    RelationName::Right,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotManifest {
    pub heatmaps: Vec<PlotFile>,
    pub traces: Vec<PlotFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotFile {
    pub file: String,
    pub scene_id: String,
    pub title: String,
}

fn write_file(path: &Path, text: &str) -> Result<(), BenchError> {
    fs::write(path, text).map_err(io_err(path))
}

/// CSV plot data: one relation heatmap per [`HEATMAP_RELATIONS`] entry for
/// the first scene, and the per-step grounding scores of every item.
/// Returns the manifest and `(file name, contents)` pairs.
pub fn plot_data(
    dataset: &BenchDataset,
    encoders: &RegistrySnapshot,
) -> Result<(PlotManifest, Vec<(String, String)>), BenchError> {
    let mut manifest = PlotManifest {
        heatmaps: Vec::new(),
        traces: Vec::new(),
    };
    let mut files = Vec::new();
    let caches: BTreeMap<&str, FeatureCache> = dataset
        .scenes
        .iter()
        .map(|(id, scene)| (id.as_str(), FeatureCache::new(scene, encoders.clone())))
        .collect();

    if let Some(item) = dataset.items.first() {
        let scene = &dataset.scenes[&item.scene_id];
        let ids: Vec<String> = scene.objects().iter().map(|o| o.id.to_string()).collect();
        for relation in HEATMAP_RELATIONS {
            let f = caches[item.scene_id.as_str()].relation(scene, relation)?;
            let mut csv = format!("id,{}\n", ids.join(","));
            for (i, id) in ids.iter().enumerate() {
                let row: Vec<String> = f.row(i).iter().map(|v| format!("{v:.9}")).collect();
                let _ = writeln!(csv, "{id},{}", row.join(","));
            }
            let file = format!("heatmap_{}_{}.csv", scene.scene_id(), relation);
            manifest.heatmaps.push(PlotFile {
                file: file.clone(),
                scene_id: scene.scene_id().to_string(),
                title: relation.to_string(),
            });
            files.push((file, csv));
        }
    }

    for (index, item) in dataset.items.iter().enumerate() {
        let scene = &dataset.scenes[&item.scene_id];
        let steps = execute_traced(&item.expression, scene, &caches[item.scene_id.as_str()])?;
        let ids: Vec<String> = scene.objects().iter().map(|o| o.id.to_string()).collect();
        let mut csv = format!("step,{}\n", ids.join(","));
        for step in &steps {
            let vals: Vec<String> = step.score.iter().map(|v| format!("{v:.9e}")).collect();
            let _ = writeln!(csv, "{},{}", step.label.replace(',', ";"), vals.join(","));
        }
        let file = format!("trace_{index:03}.csv");
        manifest.traces.push(PlotFile {
            file: file.clone(),
            scene_id: item.scene_id.clone(),
            title: item.utterance.clone(),
        });
        files.push((file, csv));
    }
    Ok((manifest, files))
}

/// Writes plot files plus `manifest.json` into `dir`.
pub fn write_plot_files(
    dir: impl AsRef<Path>,
    manifest: &PlotManifest,
    files: &[(String, String)],
) -> Result<(), BenchError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, text) in files {
        // names come from the wire; keep them inside `dir`
        let name = Path::new(name).file_name().map(PathBuf::from).unwrap_or_default();
        write_file(&dir.join(name), text)?;
    }
    let text = serde_json::to_string_pretty(manifest).expect("manifest serialization is infallible");
    write_file(&dir.join("manifest.json"), &text)
}

pub fn write_plot_data(
    dataset: &BenchDataset,
    encoders: &RegistrySnapshot,
    dir: impl AsRef<Path>,
) -> Result<PlotManifest, BenchError> {
    let (manifest, files) = plot_data(dataset, encoders)?;
    write_plot_files(dir, &manifest, &files)?;
    Ok(manifest)
}
