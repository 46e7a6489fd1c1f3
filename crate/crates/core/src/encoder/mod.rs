//! Relation encoders: features, DSL definitions, builtins, mutation and the
//! active-encoder registry.

pub mod builtin;
pub mod dsl;
mod mutate;
mod registry;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::expr::{Arity, RelationName};
use crate::scene::{BoundingBox, PairGeometry, Scene};

pub use builtin::{encoder_to_dsl, native_feature};
pub use dsl::{DefinitionError, Node};
pub use mutate::{mutate_definition, MutationKind};
pub use registry::{EncoderRegistry, RegistryError, RegistrySnapshot};

/// A dense nonnegative relation tensor of rank 1, 2 or 3, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationFeature {
    pub relation: RelationName,
    pub n: usize,
    pub data: Vec<f64>,
}

impl RelationFeature {
    pub fn rank(&self) -> usize {
        self.relation.arity().rank()
    }

    pub fn get1(&self, i: usize) -> f64 {
        self.data[i]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn get3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.n + k]
    }

    /// Row `i` of a rank-2 feature.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// Clamps to finite nonnegative values and zeroes every entry with a
/// repeated index.
pub(crate) fn finish_feature(relation: RelationName, n: usize, mut data: Vec<f64>) -> RelationFeature {
    for v in data.iter_mut() {
        *v = if v.is_nan() || *v <= 0.0 {
            0.0
        } else if v.is_infinite() {
            f64::MAX
        } else {
            *v
        };
    }
    match relation.arity() {
        Arity::Unary => {}
        Arity::Binary => {
            for i in 0..n {
                data[i * n + i] = 0.0;
            }
        }
        Arity::Ternary => {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        if i == j || j == k || i == k {
                            data[(i * n + j) * n + k] = 0.0;
                        }
                    }
                }
            }
        }
    }
    RelationFeature { relation, n, data }
}

/// One encoder candidate: a DSL body for a relation plus a note on where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderDefinition {
    pub relation: RelationName,
    #[serde(default)]
    pub metadata: String,
    pub body: Node,
}

impl EncoderDefinition {
    /// Short content hash of relation and body (metadata excluded).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.relation.as_str().as_bytes());
        h.update([0u8]);
        h.update(self.body.to_json().to_string().as_bytes());
        hex::encode(&h.finalize()[..8])
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("definition serialization is infallible")
    }
}

pub fn validate_definition(def: &EncoderDefinition) -> Result<(), DefinitionError> {
    def.body.validate(def.relation.arity())
}

/// Evaluates a definition over every tuple of the scene. Assumes the
/// definition passed [`validate_definition`]; out-of-scope object references
/// read object 0 rather than fail.
pub fn eval_encoder(def: &EncoderDefinition, scene: &Scene, geom: &PairGeometry) -> RelationFeature {
    let boxes: Vec<BoundingBox> = scene.objects().iter().map(|o| o.bbox).collect();
    let body = def.body.desugar();
    let ctx = dsl::EvalContext { boxes: &boxes, geom };
    let n = boxes.len();
    let data = match def.relation.arity() {
        Arity::Unary => (0..n).map(|i| ctx.eval(&body, [i, 0, 0])).collect(),
        Arity::Binary => {
            let mut data = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    data.push(if i == j { 0.0 } else { ctx.eval(&body, [i, j, 0]) });
                }
            }
            data
        }
        Arity::Ternary => {
            // only tuples of distinct objects are evaluated; the rest stay zero
            let mut data = vec![0.0; n * n * n];
            for i in 0..n {
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    for k in 0..n {
                        if k != i && k != j {
                            data[(i * n + j) * n + k] = ctx.eval(&body, [i, j, k]);
                        }
                    }
                }
            }
            data
        }
    };
    finish_feature(def.relation, n, data)
}

#[cfg(test)]
mod tests {
    use super::dsl::build::*;
    use super::*;

    #[test]
    fn negative_and_nonfinite_values_are_clamped() {
        let f = finish_feature(RelationName::Large, 4, vec![-1.0, f64::NAN, f64::INFINITY, 0.5]);
        assert_eq!(f.data, vec![0.0, 0.0, f64::MAX, 0.5]);
    }

    #[test]
    fn hash_ignores_metadata() {
        let mut a = encoder_to_dsl(RelationName::Near);
        let h = a.hash();
        a.metadata = "llm".into();
        assert_eq!(a.hash(), h);
        a.body = c(1.0);
        assert_ne!(a.hash(), h);
    }

    #[test]
    fn definition_wire_format() {
        let text = r#"{"relation":"above","metadata":"llm","body":{"op":"mul","args":[{"const":2},{"get":"size","obj":"j","axis":"x"}]}}"#;
        let def: EncoderDefinition = serde_json::from_str(text).unwrap();
        assert_eq!(def.relation, RelationName::Above);
        assert_eq!(def.body, mul(vec![c(2.0), size(dsl::ObjRef::J, dsl::Axis::X)]));
        let back: EncoderDefinition = serde_json::from_str(&def.to_json_string()).unwrap();
        assert_eq!(back, def);
    }
}
