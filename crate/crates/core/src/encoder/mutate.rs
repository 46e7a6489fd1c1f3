//! Seeded structural mutation of encoder definitions.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dsl::build::{abs, c, decay, mul};
use super::dsl::{Node, Op};
use super::{encoder_to_dsl, validate_definition, EncoderDefinition};
use crate::expr::RelationName;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    ScaleConstant,
    SwapOperator,
    InsertWrapper,
    Graft,
}

impl MutationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MutationKind::ScaleConstant => "scale",
            MutationKind::SwapOperator => "swap",
            MutationKind::InsertWrapper => "wrap",
            MutationKind::Graft => "graft",
        }
    }
}

type Path = Vec<usize>;

fn paths(node: &Node) -> Vec<Path> {
    fn walk(node: &Node, prefix: &mut Path, out: &mut Vec<Path>) {
        out.push(prefix.clone());
        if let Node::Apply { args, .. } = node {
            for (idx, arg) in args.iter().enumerate() {
                prefix.push(idx);
                walk(arg, prefix, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(node, &mut Vec::new(), &mut out);
    out
}

fn at<'a>(node: &'a Node, path: &[usize]) -> &'a Node {
    path.iter().fold(node, |n, &idx| match n {
        Node::Apply { args, .. } => &args[idx],
        _ => unreachable!("path leads through a leaf"),
    })
}

fn at_mut<'a>(node: &'a mut Node, path: &[usize]) -> &'a mut Node {
    path.iter().fold(node, |n, &idx| match n {
        Node::Apply { args, .. } => &mut args[idx],
        _ => unreachable!("path leads through a leaf"),
    })
}

fn scale_factor(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let f: f64 = rng.random_range(0.5..=2.0);
        if f != 1.0 {
            return f;
        }
    }
}

fn scale_constant(body: &Node, rng: &mut ChaCha8Rng) -> Option<Node> {
    let targets: Vec<Path> = paths(body)
        .into_iter()
        .filter(|p| matches!(at(body, p), Node::Const(v) if *v != 0.0))
        .collect();
    let path = targets.choose(rng)?;
    let mut out = body.clone();
    if let Node::Const(v) = at_mut(&mut out, path) {
        *v *= scale_factor(rng);
    }
    Some(out)
}

fn swap_operator(body: &Node, rng: &mut ChaCha8Rng) -> Option<Node> {
    let targets: Vec<Path> = paths(body)
        .into_iter()
        .filter(|p| {
            matches!(
                at(body, p),
                Node::Apply {
                    op: Op::Add | Op::Mul | Op::Min | Op::Max,
                    ..
                }
            )
        })
        .collect();
    let path = targets.choose(rng)?;
    let mut out = body.clone();
    if let Node::Apply { op, .. } = at_mut(&mut out, path) {
        *op = match *op {
            Op::Add => Op::Mul,
            Op::Mul => Op::Add,
            Op::Min => Op::Max,
            Op::Max => Op::Min,
            other => other,
        };
    }
    Some(out)
}

fn insert_wrapper(body: &Node, rng: &mut ChaCha8Rng) -> Option<Node> {
    let all = paths(body);
    let path = all.choose(rng)?;
    let mut out = body.clone();
    let slot = at_mut(&mut out, path);
    let inner = slot.clone();
    *slot = if rng.random_bool(0.5) { decay(inner) } else { abs(inner) };
    Some(out)
}

fn graft(def: &EncoderDefinition, rng: &mut ChaCha8Rng) -> Option<Node> {
    let arity = def.relation.arity();
    let donors: Vec<RelationName> = RelationName::ALL
        .iter()
        .copied()
        .filter(|r| r.arity() <= arity)
        .collect();
    let donor = encoder_to_dsl(*donors.choose(rng)?).body;
    let donor_path = paths(&donor).choose(rng)?.clone();
    let piece = at(&donor, &donor_path).clone();
    let target = paths(&def.body).choose(rng)?.clone();
    let mut out = def.body.clone();
    *at_mut(&mut out, &target) = piece;
    Some(out)
}

/// Last resort: scale a constant, or wrap the root in a scaling factor, or
/// overwrite a leaf with a constant when wrapping would break the size cap.
fn forced_scale(def: &EncoderDefinition, rng: &mut ChaCha8Rng) -> Node {
    if let Some(body) = scale_constant(&def.body, rng) {
        return body;
    }
    let wrapped = mul(vec![c(scale_factor(rng)), def.body.clone()]);
    if wrapped.validate(def.relation.arity()).is_ok() {
        return wrapped;
    }
    let leaves: Vec<Path> = paths(&def.body)
        .into_iter()
        .filter(|p| !matches!(at(&def.body, p), Node::Apply { .. }))
        .collect();
    let mut out = def.body.clone();
    if let Some(path) = leaves.choose(rng) {
        *at_mut(&mut out, path) = c(scale_factor(rng));
    }
    out
}

/// Returns a valid definition that differs from `def` in at least one node.
/// The same `(def, seed)` always yields the same result.
pub fn mutate_definition(def: &EncoderDefinition, seed: u64) -> EncoderDefinition {
    mutate_with_kind(def, seed).0
}

pub(crate) fn mutate_with_kind(def: &EncoderDefinition, seed: u64) -> (EncoderDefinition, MutationKind) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kinds = [
        MutationKind::ScaleConstant,
        MutationKind::SwapOperator,
        MutationKind::InsertWrapper,
        MutationKind::Graft,
    ];
    kinds.shuffle(&mut rng);
    for kind in kinds {
        let candidate = match kind {
            MutationKind::ScaleConstant => scale_constant(&def.body, &mut rng),
            MutationKind::SwapOperator => swap_operator(&def.body, &mut rng),
            MutationKind::InsertWrapper => insert_wrapper(&def.body, &mut rng),
            MutationKind::Graft => graft(def, &mut rng),
        };
        if let Some(body) = candidate {
            let out = EncoderDefinition {
                relation: def.relation,
                metadata: format!("mutated:{}", kind.as_str()),
                body,
            };
            if out.body != def.body && validate_definition(&out).is_ok() {
                return (out, kind);
            }
        }
    }
    let out = EncoderDefinition {
        relation: def.relation,
        metadata: "mutated:scale".into(),
        body: forced_scale(def, &mut rng),
    };
    (out, MutationKind::ScaleConstant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::dsl::build::*;
    use crate::encoder::dsl::{Aggregate, Axis, ObjRef};

    #[test]
    fn near_mutation_differs_and_is_deterministic() {
        let near = encoder_to_dsl(RelationName::Near);
        for seed in 0..50 {
            let a = mutate_definition(&near, seed);
            let b = mutate_definition(&near, seed);
            assert_eq!(a, b);
            assert_ne!(
                serde_json::to_string(&a.body).unwrap(),
                serde_json::to_string(&near.body).unwrap()
            );
        }
    }

    #[test]
    fn thousand_above_mutations_validate() {
        let above = encoder_to_dsl(RelationName::Above);
        for seed in 0..1000 {
            let m = mutate_definition(&above, seed);
            validate_definition(&m).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            assert_ne!(m.body, above.body);
        }
    }

    #[test]
    fn chained_mutations_stay_valid() {
        for rel in RelationName::ALL {
            let mut def = encoder_to_dsl(rel);
            for seed in 0..40 {
                let next = mutate_definition(&def, seed * 31 + 7);
                validate_definition(&next).unwrap_or_else(|e| panic!("{rel} seed {seed}: {e}"));
                assert_ne!(next.body, def.body);
                def = next;
            }
        }
    }

    #[test]
    fn constant_free_leaf_falls_back() {
        let def = EncoderDefinition {
            relation: RelationName::Large,
            metadata: String::new(),
            body: agg(Aggregate::MeanDiagonal),
        };
        let m = mutate_definition(&def, 3);
        assert_ne!(m.body, def.body);
        validate_definition(&m).unwrap();

        let def = EncoderDefinition {
            relation: RelationName::Large,
            metadata: String::new(),
            body: center(ObjRef::I, Axis::Z),
        };
        for seed in 0..20 {
            assert_ne!(mutate_definition(&def, seed).body, def.body);
        }
    }
}
