//! Seeded generators: random scenes and expressions for property checks,
//! test suites labelled by the builtin encoders, and the mini benchmark.

use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::dsl::build::*;
use crate::encoder::dsl::{Aggregate, Axis, ObjRef};
use crate::encoder::{native_feature, EncoderDefinition, RelationFeature};
use crate::expr::{Arity, RelationClause, RelationName, SymbolicExpression};
use crate::optimizer::{TestCase, TestSuite};
use crate::scene::{precompute_geometry, BoundingBox, Scene, SceneObject};

pub const LABELS: [&str; 8] = ["chair", "table", "lamp", "sofa", "bed", "desk", "shelf", "door"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` boxes in a 8 x 8 room; about a third float above the floor.
pub fn random_scene(seed: u64, n: usize) -> Scene {
    let mut rng = rng(seed);
    let objects = (0..n)
        .map(|k| {
            let size = [
                rng.random_range(0.2..2.0),
                rng.random_range(0.2..2.0),
                rng.random_range(0.2..2.0),
            ];
            let bottom = if rng.random_bool(0.35) {
                rng.random_range(0.1..2.0)
            } else {
                0.0
            };
            SceneObject {
                id: 100 + k as u64,
                label: LABELS.choose(&mut rng).expect("non-empty").to_string(),
                bbox: BoundingBox::new(
                    [
                        rng.random_range(0.0..8.0),
                        rng.random_range(0.0..8.0),
                        bottom + size[2] * 0.5,
                    ],
                    size,
                ),
            }
        })
        .collect();
    Scene::new(format!("rand-{seed}"), objects).expect("generated scene is valid")
}

/// Random tree of at most `depth` levels over `categories` (a leaf is depth
/// 1). Root clauses draw from `relations` in turn when given.
pub fn random_expression(
    rng: &mut ChaCha8Rng,
    categories: &[&str],
    depth: usize,
    relations: &[RelationName],
) -> SymbolicExpression {
    let category = categories.choose(rng).expect("non-empty categories").to_string();
    let mut expr = SymbolicExpression::leaf(category);
    if depth <= 1 {
        return expr;
    }
    let pool: &[RelationName] = if relations.is_empty() {
        &RelationName::ALL
    } else {
        relations
    };
    for _ in 0..rng.random_range(0..=2) {
        let relation = *pool.choose(rng).expect("non-empty relations");
        let anchors = (0..relation.arity().anchors())
            .map(|_| random_expression(rng, categories, depth - 1, pool))
            .collect();
        let mut clause = RelationClause::new(relation, anchors);
        clause.negative = rng.random_bool(0.25);
        expr = expr.with(clause);
    }
    expr
}

fn feature_value(f: &RelationFeature, t: usize, a: &[usize]) -> f64 {
    match f.relation.arity() {
        Arity::Unary => f.get1(t),
        Arity::Binary => f.get2(t, a[0]),
        Arity::Ternary => f.get3(t, a[0], a[1]),
    }
}

/// Relative margin a suite case keeps between target and distractor under
/// the builtin encoder.
pub const SUITE_MARGIN: f64 = 0.3;

/// A suite of `n_cases` cases that the builtin encoder of `relation` passes
/// with a margin of [`SUITE_MARGIN`].
pub fn suite_from_builtin(relation: RelationName, n_cases: usize, seed: u64) -> TestSuite {
    let mut rng = rng(seed ^ 0x5eed5_u64);
    let mut cases = Vec::with_capacity(n_cases);
    let mut scenes = Vec::new();
    let anchors_needed = relation.arity().anchors();
    let mut scene_seed = seed.wrapping_mul(1000);
    while cases.len() < n_cases {
        scene_seed += 1;
        let scene = random_scene(scene_seed, 7);
        let geom = precompute_geometry(&scene);
        let feature = native_feature(relation, &scene, &geom);
        let mut used = false;
        for _ in 0..40 {
            if cases.len() >= n_cases {
                break;
            }
            let mut idx: Vec<usize> = (0..scene.len()).collect();
            idx.shuffle(&mut rng);
            let (t, d, a) = (idx[0], idx[1], &idx[2..2 + anchors_needed]);
            let (vt, vd) = (feature_value(&feature, t, a), feature_value(&feature, d, a));
            if vt > vd * (1.0 + SUITE_MARGIN) + 1e-3 {
                let id = |p: usize| scene.objects()[p].id;
                cases.push(TestCase {
                    scene_id: scene.scene_id().to_string(),
                    target: id(t),
                    distractor: id(d),
                    anchor: a.first().map(|&p| id(p)),
                    anchor2: a.get(1).map(|&p| id(p)),
                });
                used = true;
                if cases.len() % 3 == 0 {
                    break;
                }
            }
        }
        if used {
            scenes.push(Arc::new(scene));
        }
    }
    TestSuite::new(relation, cases, scenes).expect("generated suite is valid")
}

/// `near` whose peak is moved out to `offset` mean diagonals; `offset = 0`
/// orders pairs like the builtin.
pub fn perturbed_near(offset: f64) -> EncoderDefinition {
    let d = |axis| sub(center(ObjRef::I, axis), center(ObjRef::J, axis));
    let sq = |axis| mul(vec![d(axis), d(axis)]);
    let dist = sqrt(add(vec![sq(Axis::X), sq(Axis::Y), sq(Axis::Z)]));
    let md = || agg(Aggregate::MeanDiagonal);
    EncoderDefinition {
        relation: RelationName::Near,
        metadata: format!("perturbed:{offset}"),
        body: decay(div(abs(sub(dist, mul(vec![md(), c(offset)]))), md())),
    }
}

/// One benchmark utterance with its answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchItem {
    pub scene_id: String,
    pub utterance: String,
    pub expression: SymbolicExpression,
    pub target_id: u64,
}

struct Builder {
    rng: ChaCha8Rng,
    objects: Vec<SceneObject>,
}

type Placement = (&'static str, [f64; 2], [f64; 3], f64);

const CHAIR: [f64; 3] = [0.5, 0.5, 0.9];
const TABLE: [f64; 3] = [1.2, 0.8, 0.75];
const LAMP: [f64; 3] = [0.3, 0.3, 0.5];
const BOX: [f64; 3] = [0.4, 0.4, 0.4];
const CABINET: [f64; 3] = [0.6, 0.5, 1.0];

impl Builder {
    fn new(seed: u64) -> Self {
        Self {
            rng: rng(seed),
            objects: Vec::new(),
        }
    }

    fn jit(&mut self, amount: f64) -> f64 {
        self.rng.random_range(-amount..=amount)
    }

    /// Adds a box with its bottom at `bottom`; returns its id.
    fn put(&mut self, label: &str, xy: [f64; 2], size: [f64; 3], bottom: f64) -> u64 {
        let id = 1 + self.objects.len() as u64;
        self.objects.push(SceneObject {
            id,
            label: label.into(),
            bbox: BoundingBox::new([xy[0], xy[1], bottom + size[2] * 0.5], size),
        });
        id
    }

    /// Like [`Self::put`] with up to 0.1 of positional jitter.
    fn put_j(&mut self, label: &str, xy: [f64; 2], size: [f64; 3], bottom: f64) -> u64 {
        let xy = [xy[0] + self.jit(0.1), xy[1] + self.jit(0.1)];
        self.put(label, xy, size, bottom)
    }

    /// Objects in shuffled order so targets sit at arbitrary positions.
    fn finish(mut self) -> Vec<SceneObject> {
        self.objects.shuffle(&mut self.rng);
        self.objects
    }
}

/// Positions for frame-relative objects: `(label, lateral, depth, size)`
/// offsets from `anchor` in the viewing frame of the final scene.
///
/// The frame depends on the centroid, which depends on the placement, so
/// the layout is solved by fixed-point iteration.
fn place_in_frame(fixed: &[Placement], anchor: [f64; 2], rel: &[(&'static str, f64, f64, [f64; 3])]) -> Vec<Placement> {
    let mut placed: Vec<Placement> = Vec::new();
    for _ in 0..8 {
        let n = (fixed.len() + placed.len().max(rel.len())) as f64;
        let mut cx = fixed.iter().map(|s| s.1[0]).sum::<f64>();
        let mut cy = fixed.iter().map(|s| s.1[1]).sum::<f64>();
        for s in &placed {
            cx += s.1[0];
            cy += s.1[1];
        }
        if placed.is_empty() {
            cx += anchor[0] * rel.len() as f64;
            cy += anchor[1] * rel.len() as f64;
        }
        let (cx, cy) = (cx / n, cy / n);
        let (wx, wy) = (anchor[0] - cx, anchor[1] - cy);
        let norm = (wx * wx + wy * wy).sqrt();
        let v = [wx / norm, wy / norm];
        // right-hand side of a viewer looking along v
        let r = [v[1], -v[0]];
        placed = rel
            .iter()
            .map(|&(label, lat, dep, size)| {
                (
                    label,
                    [anchor[0] + lat * r[0] + dep * v[0], anchor[1] + lat * r[1] + dep * v[1]],
                    size,
                    0.0,
                )
            })
            .collect();
    }
    placed
}

fn leaf(category: &str) -> SymbolicExpression {
    SymbolicExpression::leaf(category)
}

fn clause(relation: RelationName, anchors: &[&str]) -> RelationClause {
    RelationClause::new(relation, anchors.iter().map(|a| leaf(a)).collect())
}

/// Background furniture in the room corners area, away from the action.
fn furnish(b: &mut Builder) {
    b.put("plant", [0.6, 7.4], [0.5, 0.5, 1.2], 0.0);
    b.put("trash_can", [9.4, 0.6], [0.4, 0.4, 0.6], 0.0);
}

fn directional(seed: u64, relation: RelationName) -> (Vec<SceneObject>, SymbolicExpression, u64, String) {
    use RelationName::*;
    let mut b = Builder::new(seed);
    let anchor = [7.0 + b.jit(0.4), 6.0 + b.jit(0.4)];
    let fixed: Vec<Placement> = vec![
        ("plant", [0.6, 7.4], [0.5, 0.5, 1.2], 0.0),
        ("trash_can", [9.4, 0.6], [0.4, 0.4, 0.6], 0.0),
        ("sofa", [2.0, 1.5], [2.0, 0.9, 0.8], 0.0),
        ("chair", [1.5, 4.0], CHAIR, 0.0),
    ];
    // target offset and its mirror, plus a depth-wise and a distant chair
    let (lat, dep) = match relation {
        Right => (1.3, 0.0),
        Left => (-1.3, 0.0),
        Behind => (0.0, 1.3),
        Front => (0.0, -1.3),
        _ => unreachable!(),
    };
    let rel = [
        ("chair", lat, dep, CHAIR),
        ("chair", -lat, -dep, CHAIR),
        ("chair", dep, lat, CHAIR),
        ("table", 0.0, 0.0, TABLE),
    ];
    let placed = place_in_frame(&fixed, anchor, &rel);
    for (label, xy, size, bottom) in fixed {
        b.put(label, xy, size, bottom);
    }
    let mut target = 0;
    for (k, (label, xy, size, bottom)) in placed.into_iter().enumerate() {
        let id = b.put(label, xy, size, bottom);
        if k == 0 {
            target = id;
        }
    }
    let expr = leaf("chair").with(clause(relation, &["table"]));
    let phrase = match relation {
        Right => "to the right of",
        Left => "to the left of",
        Behind => "behind",
        _ => "in front of",
    };
    let utterance = format!("the chair {phrase} the table");
    (b.finish(), expr, target, utterance)
}

/// The 40-utterance benchmark. Every target category has at least four
/// instances in its scene, and the geometry leaves one clear answer.
pub fn mini_benchmark(seed: u64) -> (Vec<Scene>, Vec<BenchItem>) {
    use RelationName::*;
    let mut scenes = Vec::new();
    let mut items = Vec::new();
    let mut push = |objects: Vec<SceneObject>, expr: SymbolicExpression, target: u64, utterance: String| {
        let scene_id = format!("mini-{:02}", items.len());
        let scene = Scene::new(scene_id.clone(), objects).expect("benchmark scene is valid");
        items.push(BenchItem {
            scene_id,
            utterance,
            expression: expr,
            target_id: target,
        });
        scenes.push(scene);
    };

    for rep in 0..2u64 {
        let s = seed.wrapping_mul(97).wrapping_add(rep * 1_000);

        // near / far / not near
        for (k, relation) in [Near, Far].into_iter().enumerate() {
            let mut b = Builder::new(s + 10 + k as u64);
            furnish(&mut b);
            let t = [3.0 + b.jit(1.0), 4.0 + b.jit(1.0)];
            b.put_j("table", t, TABLE, 0.0);
            let close = [[t[0] + 1.1, t[1]], [t[0], t[1] + 1.0], [t[0] - 1.1, t[1]]];
            let away = [t[0] + 5.5, t[1] - 2.5];
            let target = if relation == Near {
                let id = b.put_j("chair", close[0], CHAIR, 0.0);
                for p in [away, [away[0], away[1] + 2.0], [away[0] - 1.0, away[1] + 4.0]] {
                    b.put_j("chair", p, CHAIR, 0.0);
                }
                id
            } else {
                let id = b.put_j("chair", away, CHAIR, 0.0);
                for p in close {
                    b.put_j("chair", p, CHAIR, 0.0);
                }
                id
            };
            let word = if relation == Near { "near" } else { "far from" };
            push(
                b.finish(),
                leaf("chair").with(clause(relation, &["table"])),
                target,
                format!("the chair {word} the table"),
            );
        }

        // above / below
        {
            let mut b = Builder::new(s + 20);
            furnish(&mut b);
            let d = [4.0 + b.jit(1.0), 3.0 + b.jit(1.0)];
            b.put("desk", d, [1.4, 0.7, 0.75], 0.0);
            let target = b.put("lamp", [d[0] + 0.3, d[1]], LAMP, 0.75);
            for p in [[d[0] + 2.0, d[1]], [d[0], d[1] + 2.5], [d[0] + 3.5, d[1] + 3.0]] {
                b.put_j("lamp", p, LAMP, 0.0);
            }
            push(
                b.finish(),
                leaf("lamp").with(clause(Above, &["desk"])),
                target,
                "the lamp on top of the desk".into(),
            );

            let mut b = Builder::new(s + 21);
            furnish(&mut b);
            let sh = [5.0 + b.jit(1.0), 5.0 + b.jit(1.0)];
            b.put("shelf", sh, [1.0, 0.4, 0.8], 1.0);
            let target = b.put("box", sh, BOX, 0.0);
            for p in [[sh[0] - 2.5, sh[1]], [sh[0], sh[1] - 2.5], [sh[0] + 2.0, sh[1] - 2.0]] {
                b.put_j("box", p, BOX, 0.0);
            }
            // one box sits on the shelf, above rather than below it
            b.put("box", [sh[0] + 0.2, sh[1]], BOX, 1.8);
            push(
                b.finish(),
                leaf("box").with(clause(Below, &["shelf"])),
                target,
                "the box under the shelf".into(),
            );
        }

        // left / right / front / behind
        for (k, relation) in [Left, Right, Front, Behind].into_iter().enumerate() {
            let (scene, expr, target, utterance) = directional(s + 30 + k as u64, relation);
            push(scene, expr, target, utterance);
        }

        // between
        {
            let mut b = Builder::new(s + 40);
            furnish(&mut b);
            let bed = [2.5 + b.jit(0.5), 3.0 + b.jit(0.5)];
            let sofa = [bed[0] + 4.0, bed[1] + 1.0];
            b.put("bed", bed, [2.0, 1.6, 0.6], 0.0);
            b.put("sofa", sofa, [2.0, 0.9, 0.8], 0.0);
            let mid = [(bed[0] + sofa[0]) * 0.5, (bed[1] + sofa[1]) * 0.5];
            let target = b.put_j("lamp", mid, LAMP, 0.0);
            for p in [
                [mid[0], mid[1] + 3.0],
                [bed[0] - 1.5, bed[1] - 1.5],
                [sofa[0] + 1.8, sofa[1] + 1.5],
            ] {
                b.put_j("lamp", p, LAMP, 0.0);
            }
            push(
                b.finish(),
                leaf("lamp").with(clause(Between, &["bed", "sofa"])),
                target,
                "the lamp between the bed and the sofa".into(),
            );
        }

        // large / small
        for (k, relation) in [Large, Small].into_iter().enumerate() {
            let mut b = Builder::new(s + 50 + k as u64);
            furnish(&mut b);
            let base = [2.0 + b.jit(0.5), 2.0 + b.jit(0.5)];
            let scales = if relation == Large {
                [1.6, 1.0, 0.9, 1.1]
            } else {
                [0.5, 1.0, 0.9, 1.1]
            };
            let mut target = 0;
            for (m, f) in scales.into_iter().enumerate() {
                let id = b.put_j(
                    "table",
                    [base[0] + 2.2 * m as f64, base[1] + 1.3 * m as f64],
                    [TABLE[0] * f, TABLE[1] * f, TABLE[2] * f],
                    0.0,
                );
                if m == 0 {
                    target = id;
                }
            }
            let word = if relation == Large { "big" } else { "small" };
            push(
                b.finish(),
                leaf("table").with(clause(relation, &[])),
                target,
                format!("the {word} table"),
            );
        }

        // high / low
        for (k, relation) in [High, Low].into_iter().enumerate() {
            let mut b = Builder::new(s + 60 + k as u64);
            furnish(&mut b);
            let heights = if relation == High {
                [1.8, 0.0, 0.4, 0.8]
            } else {
                [0.0, 1.8, 1.0, 1.4]
            };
            let mut target = 0;
            for (m, h) in heights.into_iter().enumerate() {
                let id = b.put_j("box", [2.0 + 1.8 * m as f64, 4.0 + 0.5 * m as f64], BOX, h);
                if m == 0 {
                    target = id;
                }
            }
            let word = if relation == High { "highest" } else { "lowest" };
            push(
                b.finish(),
                leaf("box").with(clause(relation, &[])),
                target,
                format!("the {word} box"),
            );
        }

        // on the floor / against the wall / at the corner
        {
            let mut b = Builder::new(s + 70);
            furnish(&mut b);
            let target = b.put_j("box", [3.0, 3.0], BOX, 0.0);
            for (m, h) in [0.9, 1.3, 1.7].into_iter().enumerate() {
                b.put_j("box", [4.5 + 1.5 * m as f64, 4.0], BOX, h);
            }
            push(
                b.finish(),
                leaf("box").with(clause(OnTheFloor, &[])),
                target,
                "the box on the floor".into(),
            );

            // room extent is fixed by wall-mounted furniture
            let mut b = Builder::new(s + 71);
            b.put("door", [0.05, 4.0], [0.1, 1.0, 2.0], 0.0);
            b.put("window", [10.0, 4.0], [0.1, 1.2, 1.0], 1.0);
            b.put("radiator", [5.0, 0.05], [1.0, 0.1, 0.6], 0.2);
            b.put("painting", [5.0, 8.0], [1.0, 0.1, 0.8], 1.2);
            let y = 3.0 + b.jit(1.0);
            let target = b.put("cabinet", [0.1 + CABINET[0] * 0.5, y], CABINET, 0.0);
            for p in [[3.5, 3.0], [6.0, 5.0], [4.5, 5.5]] {
                b.put_j("cabinet", p, CABINET, 0.0);
            }
            push(
                b.finish(),
                leaf("cabinet").with(clause(AgainstTheWall, &[])),
                target,
                "the cabinet against the wall".into(),
            );

            let mut b = Builder::new(s + 72);
            b.put("door", [0.05, 4.0], [0.1, 1.0, 2.0], 0.0);
            b.put("window", [10.0, 4.0], [0.1, 1.2, 1.0], 1.0);
            b.put("radiator", [5.0, 0.05], [1.0, 0.1, 0.6], 0.2);
            b.put("painting", [5.0, 8.0], [1.0, 0.1, 0.8], 1.2);
            let target = b.put(
                "cabinet",
                [9.9 - CABINET[0] * 0.5, 7.95 - CABINET[1] * 0.5],
                CABINET,
                0.0,
            );
            for p in [[9.6, 4.0], [4.0, 3.0], [5.0, 0.5]] {
                b.put_j("cabinet", p, CABINET, 0.0);
            }
            push(
                b.finish(),
                leaf("cabinet").with(clause(AtTheCorner, &[])),
                target,
                "the cabinet in the corner".into(),
            );
        }

        // negation: not near, not on the floor
        {
            let mut b = Builder::new(s + 80);
            furnish(&mut b);
            let t = [4.0 + b.jit(0.8), 4.0 + b.jit(0.8)];
            b.put_j("table", t, TABLE, 0.0);
            let target = b.put_j("chair", [t[0] + 4.5, t[1] - 2.5], CHAIR, 0.0);
            for p in [[t[0] + 1.1, t[1]], [t[0] - 1.1, t[1]], [t[0], t[1] + 1.0]] {
                b.put_j("chair", p, CHAIR, 0.0);
            }
            push(
                b.finish(),
                leaf("chair").with(clause(Near, &["table"]).negated()),
                target,
                "the chair that is not near the table".into(),
            );

            let mut b = Builder::new(s + 81);
            furnish(&mut b);
            let target = b.put_j("box", [3.0, 5.0], BOX, 1.2);
            for m in 0..3 {
                b.put_j("box", [4.5 + 1.5 * m as f64, 3.0], BOX, 0.0);
            }
            push(
                b.finish(),
                leaf("box").with(clause(OnTheFloor, &[]).negated()),
                target,
                "the box that is not on the floor".into(),
            );
        }

        // nesting: the anchor itself is disambiguated by a relation
        {
            let mut b = Builder::new(s + 90);
            furnish(&mut b);
            let door = [8.0 + b.jit(0.3), 6.5 + b.jit(0.3)];
            b.put("door", door, [1.0, 0.1, 2.0], 0.0);
            let t1 = [door[0] - 1.5, door[1] - 0.5];
            let t2 = [2.0, 2.0];
            b.put("table", t1, TABLE, 0.0);
            b.put("table", t2, TABLE, 0.0);
            let target = b.put_j("chair", [t1[0] - 1.0, t1[1] - 0.6], CHAIR, 0.0);
            for p in [[t2[0] + 1.0, t2[1] + 0.6], [t2[0] + 1.0, t2[1] - 0.8], [4.5, 7.0]] {
                b.put_j("chair", p, CHAIR, 0.0);
            }
            let anchor = leaf("table").with(clause(Near, &["door"]));
            push(
                b.finish(),
                leaf("chair").with(RelationClause::new(Near, vec![anchor])),
                target,
                "the chair near the table that is next to the door".into(),
            );

            let mut b = Builder::new(s + 91);
            furnish(&mut b);
            let d = [3.0 + b.jit(0.5), 5.0 + b.jit(0.5)];
            b.put("desk", d, [1.4, 0.7, 0.75], 0.0);
            b.put("desk", [d[0] + 4.0, d[1] - 2.0], [1.4, 0.7, 0.75], 0.0);
            b.put("lamp", [d[0] + 0.3, d[1]], LAMP, 0.75);
            let target = b.put_j("chair", [d[0], d[1] - 1.0], CHAIR, 0.0);
            for p in [
                [d[0] + 4.0, d[1] - 3.0],
                [d[0] + 5.2, d[1] - 2.0],
                [d[0] - 2.0, d[1] - 3.5],
            ] {
                b.put_j("chair", p, CHAIR, 0.0);
            }
            let anchor = leaf("desk").with(RelationClause::new(Below, vec![leaf("lamp")]));
            push(
                b.finish(),
                leaf("chair").with(RelationClause::new(Near, vec![anchor])),
                target,
                "the chair near the desk with a lamp on it".into(),
            );
        }
    }
    (scenes, items)
}
