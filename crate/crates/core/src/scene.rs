//! Scene representation, file ingestion and shared pairwise geometry.
//!
//! Axis convention: z is up. A box's size is `(width, depth, height)`, the
//! extents along x, y and z respectively.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("scene parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("object {id}: {reason}")]
    InvalidObject { id: u64, reason: String },
    #[error("duplicate id {0}")]
    DuplicateId(u64),
    #[error("scene has no objects")]
    Empty,
    #[error("similarity table: {0}")]
    Similarity(String),
}

impl From<serde_json::Error> for SceneError {
    fn from(err: serde_json::Error) -> Self {
        SceneError::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

/// Axis-aligned box given by its center and full extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub center: [f64; 3],
    pub size: [f64; 3],
}

impl BoundingBox {
    pub fn new(center: [f64; 3], size: [f64; 3]) -> Self {
        Self { center, size }
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            center: [v[0], v[1], v[2]],
            size: [v[3], v[4], v[5]],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        let [cx, cy, cz] = self.center;
        let [w, d, h] = self.size;
        [cx, cy, cz, w, d, h]
    }

    fn check(&self) -> Result<(), String> {
        if let Some(v) = self.to_array().iter().find(|v| !v.is_finite()) {
            return Err(format!("non-finite bbox value {v}"));
        }
        if let Some(v) = self.size.iter().find(|&&v| v <= 0.0) {
            return Err(format!("non-positive size component {v}"));
        }
        Ok(())
    }

    pub fn bottom(&self) -> f64 {
        self.center[2] - self.size[2] * 0.5
    }

    pub fn top(&self) -> f64 {
        self.center[2] + self.size[2] * 0.5
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    pub fn diagonal(&self) -> f64 {
        let [w, d, h] = self.size;
        (w * w + d * d + h * h).sqrt()
    }

    /// Lower face along `axis`.
    pub fn min(&self, axis: usize) -> f64 {
        self.center[axis] - self.size[axis] * 0.5
    }

    /// Upper face along `axis`.
    pub fn max(&self, axis: usize) -> f64 {
        self.center[axis] + self.size[axis] * 0.5
    }
}

impl Serialize for BoundingBox {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        <[f64; 6]>::deserialize(d).map(BoundingBox::from_array)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u64,
    pub label: String,
    pub bbox: BoundingBox,
}

/// Precomputed object-to-category similarities (cosine semantics, N x Q).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTable {
    pub categories: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityTable {
    fn check(&self, n: usize) -> Result<(), SceneError> {
        if self.values.len() != n {
            return Err(SceneError::Similarity(format!(
                "{} rows for {} objects",
                self.values.len(),
                n
            )));
        }
        for (row_idx, row) in self.values.iter().enumerate() {
            if row.len() != self.categories.len() {
                return Err(SceneError::Similarity(format!(
                    "row {row_idx} has {} entries, expected {}",
                    row.len(),
                    self.categories.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
                return Err(SceneError::Similarity(format!(
                    "row {row_idx} value {v} outside [-1, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Column for `category`, matched after label normalization.
    pub fn column(&self, category: &str) -> Option<Vec<f64>> {
        let key = normalize_label(category);
        let q = self.categories.iter().position(|c| normalize_label(c) == key)?;
        Some(self.values.iter().map(|row| row[q]).collect())
    }
}

/// Case-fold, trim and collapse internal whitespace.
pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SceneFile {
    scene_id: String,
    objects: Vec<SceneObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    similarities: Option<SimilarityTable>,
}

/// A validated scene. Object positions are fixed after construction.
#[derive(Debug, Clone)]
pub struct Scene {
    scene_id: String,
    objects: Vec<SceneObject>,
    index_of: HashMap<u64, usize>,
    similarities: Option<SimilarityTable>,
    fingerprint: String,
}

impl PartialEq for Scene {
    fn eq(&self, other: &Self) -> bool {
        self.scene_id == other.scene_id && self.objects == other.objects && self.similarities == other.similarities
    }
}

impl Scene {
    pub fn new(scene_id: impl Into<String>, objects: Vec<SceneObject>) -> Result<Self, SceneError> {
        Self::with_similarities(scene_id, objects, None)
    }

    pub fn with_similarities(
        scene_id: impl Into<String>,
        objects: Vec<SceneObject>,
        similarities: Option<SimilarityTable>,
    ) -> Result<Self, SceneError> {
        if objects.is_empty() {
            return Err(SceneError::Empty);
        }
        let mut index_of = HashMap::with_capacity(objects.len());
        for (pos, obj) in objects.iter().enumerate() {
            if obj.label.trim().is_empty() {
                return Err(SceneError::InvalidObject {
                    id: obj.id,
                    reason: "empty label".into(),
                });
            }
            obj.bbox
                .check()
                .map_err(|reason| SceneError::InvalidObject { id: obj.id, reason })?;
            if index_of.insert(obj.id, pos).is_some() {
                return Err(SceneError::DuplicateId(obj.id));
            }
        }
        if let Some(table) = &similarities {
            table.check(objects.len())?;
        }
        let scene_id = scene_id.into();
        let fingerprint = fingerprint(&scene_id, &objects, similarities.as_ref());
        Ok(Self {
            scene_id,
            objects,
            index_of,
            similarities,
            fingerprint,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, SceneError> {
        let file: SceneFile = serde_json::from_str(text)?;
        Self::with_similarities(file.scene_id, file.objects, file.similarities)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("scene serialization is infallible")
    }

    fn to_file(&self) -> SceneFile {
        SceneFile {
            scene_id: self.scene_id.clone(),
            objects: self.objects.clone(),
            similarities: self.similarities.clone(),
        }
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.index_of.get(&id).copied()
    }

    pub fn object(&self, id: u64) -> Option<&SceneObject> {
        self.index_of(id).map(|pos| &self.objects[pos])
    }

    pub fn similarities(&self) -> Option<&SimilarityTable> {
        self.similarities.as_ref()
    }

    /// Content hash over ids, labels, box bits and similarities.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Similarity column for `category`: the embedded table when it lists the
    /// category, exact label matching otherwise.
    pub fn similarity_column(&self, category: &str) -> (Vec<f64>, bool) {
        if let Some(col) = self.similarities.as_ref().and_then(|t| t.column(category)) {
            return (col, true);
        }
        let table = exact_match_similarity(self, &[category.to_string()]);
        (table.values.into_iter().map(|row| row[0]).collect(), false)
    }
}

impl Serialize for Scene {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_file().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Scene {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let file = SceneFile::deserialize(d)?;
        Scene::with_similarities(file.scene_id, file.objects, file.similarities).map_err(serde::de::Error::custom)
    }
}

fn fingerprint(scene_id: &str, objects: &[SceneObject], sim: Option<&SimilarityTable>) -> String {
    let mut h = Sha256::new();
    h.update(scene_id.as_bytes());
    h.update([0u8]);
    for obj in objects {
        h.update(obj.id.to_le_bytes());
        h.update(obj.label.as_bytes());
        h.update([0u8]);
        for v in obj.bbox.to_array() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    if let Some(table) = sim {
        for c in &table.categories {
            h.update(c.as_bytes());
            h.update([0u8]);
        }
        for v in table.values.iter().flatten() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..16])
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene, SceneError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Scene::from_json_str(&text)
}

/// Exact-match stand-in for learned label similarity: 1.0 when the
/// normalized label equals the normalized category, else 0.0.
pub fn exact_match_similarity(scene: &Scene, categories: &[String]) -> SimilarityTable {
    let keys: Vec<String> = categories.iter().map(|c| normalize_label(c)).collect();
    let values = scene
        .objects
        .iter()
        .map(|obj| {
            let label = normalize_label(&obj.label);
            keys.iter().map(|k| if *k == label { 1.0 } else { 0.0 }).collect()
        })
        .collect();
    SimilarityTable {
        categories: categories.to_vec(),
        values,
    }
}

/// Geometry shared by every relation encoder of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGeometry {
    n: usize,
    delta: Vec<[f64; 3]>,
    dist: Vec<f64>,
    pub mean_diagonal: f64,
    pub floor_z: f64,
    /// Minimum box extent in x and y over all objects.
    pub hull_min: [f64; 2],
    /// Maximum box extent in x and y over all objects.
    pub hull_max: [f64; 2],
    /// Mean of object centers.
    pub centroid: [f64; 3],
    pub min_volume: f64,
    pub max_volume: f64,
    pub center_min: [f64; 3],
    pub center_max: [f64; 3],
}

impl PairGeometry {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `center_i - center_j`.
    pub fn delta(&self, i: usize, j: usize) -> [f64; 3] {
        self.delta[i * self.n + j]
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }
}

pub fn precompute_geometry(scene: &Scene) -> PairGeometry {
    let boxes: Vec<&BoundingBox> = scene.objects.iter().map(|o| &o.bbox).collect();
    let n = boxes.len();
    let mut delta = vec![[0.0; 3]; n * n];
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let a = boxes[i].center;
            let b = boxes[j].center;
            delta[i * n + j] = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        }
        for j in (i + 1)..n {
            let [dx, dy, dz] = delta[i * n + j];
            let d = (dx * dx + dy * dy + dz * dz).sqrt();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    let mut hull_min = [f64::INFINITY; 2];
    let mut hull_max = [f64::NEG_INFINITY; 2];
    let mut center_min = [f64::INFINITY; 3];
    let mut center_max = [f64::NEG_INFINITY; 3];
    let mut centroid = [0.0; 3];
    let mut floor_z = f64::INFINITY;
    let mut min_volume = f64::INFINITY;
    let mut max_volume = f64::NEG_INFINITY;
    let mut diag_sum = 0.0;
    for b in &boxes {
        for axis in 0..2 {
            hull_min[axis] = hull_min[axis].min(b.min(axis));
            hull_max[axis] = hull_max[axis].max(b.max(axis));
        }
        for axis in 0..3 {
            center_min[axis] = center_min[axis].min(b.center[axis]);
            center_max[axis] = center_max[axis].max(b.center[axis]);
            centroid[axis] += b.center[axis];
        }
        floor_z = floor_z.min(b.bottom());
        min_volume = min_volume.min(b.volume());
        max_volume = max_volume.max(b.volume());
        diag_sum += b.diagonal();
    }
    for c in &mut centroid {
        *c /= n as f64;
    }

    PairGeometry {
        n,
        delta,
        dist,
        mean_diagonal: diag_sum / n as f64,
        floor_z,
        hull_min,
        hull_max,
        centroid,
        min_volume,
        max_volume,
        center_min,
        center_max,
    }
}
