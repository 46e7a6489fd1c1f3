use lasp_core::encoder::{encoder_to_dsl, eval_encoder, native_feature, EncoderRegistry, RelationFeature};
use lasp_core::expr::{parse_expression, serialize_expression, RelationClause, RelationName, SymbolicExpression};
use lasp_core::scene::{precompute_geometry, BoundingBox, Scene, SceneObject};
use lasp_core::synthetic::random_scene;
use proptest::prelude::*;

fn assert_close(a: &RelationFeature, b: &RelationFeature, tol: f64) {
    assert_eq!(a.data.len(), b.data.len());
    for (k, (x, y)) in a.data.iter().zip(&b.data).enumerate() {
        assert!((x - y).abs() <= tol, "{} entry {k}: {x} vs {y}", a.relation);
    }
}

#[test]
fn dsl_builtins_match_native_formulas() {
    for seed in 0..50 {
        let scene = random_scene(seed, 2 + (seed as usize % 7));
        let geom = precompute_geometry(&scene);
        for r in RelationName::ALL {
            let dsl = eval_encoder(&encoder_to_dsl(r), &scene, &geom);
            assert_close(&dsl, &native_feature(r, &scene, &geom), 1e-9);
        }
    }
}

#[test]
fn registry_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("registry.json");
    let mut reg = EncoderRegistry::with_builtins();
    let mut def = encoder_to_dsl(RelationName::Far);
    def.metadata = "accepted".into();
    reg.accept(def.clone()).unwrap();
    reg.save(&path).unwrap();
    let back = EncoderRegistry::load(&path).unwrap();
    assert_eq!(back, reg);
    assert_eq!(back.accepted(RelationName::Far), Some(&def));
    assert_eq!(back.generation(), 1);
}

fn category() -> impl Strategy<Value = String> {
    "[a-z]{1,8}( [a-z]{1,6})?"
}

fn expression() -> impl Strategy<Value = SymbolicExpression> {
    let leaf = category().prop_map(SymbolicExpression::leaf);
    leaf.prop_recursive(3, 24, 3, |inner| {
        let clause = (
            0..RelationName::ALL.len(),
            any::<bool>(),
            prop::collection::vec(inner, 2),
        )
            .prop_map(|(r, negative, mut anchors)| {
                let relation = RelationName::ALL[r];
                anchors.truncate(relation.arity().anchors());
                RelationClause {
                    relation,
                    anchors,
                    negative,
                }
            });
        (category(), prop::collection::vec(clause, 0..3))
            .prop_map(|(category, relations)| SymbolicExpression { category, relations })
    })
}

fn scene_strategy() -> impl Strategy<Value = Scene> {
    let object = (
        (-5.0..5.0f64, -5.0..5.0f64, 0.0..3.0f64),
        (0.1..2.0f64, 0.1..2.0f64, 0.1..2.0f64),
        0..3usize,
    );
    prop::collection::vec(object, 2..7).prop_map(|objs| {
        let objects = objs
            .into_iter()
            .enumerate()
            .map(|(k, ((x, y, z), size, l))| SceneObject {
                id: k as u64,
                label: ["chair", "table", "lamp"][l].into(),
                bbox: BoundingBox::new([x, y, z + size.2 / 2.0], [size.0, size.1, size.2]),
            })
            .collect();
        Scene::new("prop", objects).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn expression_round_trip(expr in expression()) {
        let text = serialize_expression(&expr);
        prop_assert_eq!(parse_expression(&text).unwrap(), expr);
    }

    #[test]
    fn pairwise_constraints(scene in scene_strategy()) {
        let geom = precompute_geometry(&scene);
        let n = scene.len();
        let f = |r| native_feature(r, &scene, &geom);
        let (near, far, left, right, above, below) = (
            f(RelationName::Near),
            f(RelationName::Far),
            f(RelationName::Left),
            f(RelationName::Right),
            f(RelationName::Above),
            f(RelationName::Below),
        );
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(near.get2(i, j), near.get2(j, i));
                prop_assert_eq!(far.get2(i, j), far.get2(j, i));
                prop_assert_eq!(below.get2(i, j), above.get2(j, i));
                for side in [&left, &right] {
                    if side.get2(i, j) > 0.0 {
                        prop_assert_eq!(side.get2(j, i), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn scene_json_round_trip_keeps_fingerprint(scene in scene_strategy()) {
        let back = Scene::from_json_str(&scene.to_json_string()).unwrap();
        prop_assert_eq!(back.fingerprint(), scene.fingerprint());
        prop_assert_eq!(back.objects(), scene.objects());
    }
}
