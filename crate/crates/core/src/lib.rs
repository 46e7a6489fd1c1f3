//! Training-free 3D visual grounding.
//!
//! Referring expressions are parsed into a small symbolic language
//! ([`expr`]), spatial relations are scored by encoders written in an
//! expression-tree DSL ([`encoder`]), and the [`executor`] combines category
//! and relation features into per-object matching scores. Encoders are
//! searched for with a test-driven refinement loop ([`optimizer`]) whose
//! candidates come either from seeded mutation or from an LLM endpoint
//! ([`llm`]).

pub mod api;
pub mod bench;
pub mod encoder;
pub mod executor;
pub mod expr;
pub mod llm;
pub mod optimizer;
pub mod scene;
pub mod synthetic;

pub use encoder::{
    encoder_to_dsl, eval_encoder, mutate_definition, validate_definition, EncoderDefinition, EncoderRegistry,
    RegistrySnapshot, RelationFeature,
};
pub use executor::{
    compute_category_feature, execute, rank_candidates, CategoryFeature, FeatureCache, GroundingResult, MatchingScore,
};
pub use expr::{parse_expression, serialize_expression, Arity, RelationClause, RelationName, SymbolicExpression};
pub use scene::{load_scene, precompute_geometry, BoundingBox, PairGeometry, Scene, SceneObject, SimilarityTable};
