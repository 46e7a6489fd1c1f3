//! Reference encoders for all sixteen relations.
//!
//! Each relation exists twice: as a native Rust formula and as a DSL tree
//! ([`encoder_to_dsl`]). Both evaluate the same arithmetic in the same order,
//! so the exported trees reproduce the native features to rounding.
//!
//! Directional relations (left, right, front, behind) look at the pair from
//! the scene centroid toward the midpoint of the two centers; the viewing
//! direction is shared by `(i, j)` and `(j, i)`, which makes the features
//! antisymmetric. A small `+y` bias keeps the direction defined when the
//! midpoint sits on the centroid.

use super::dsl::build::*;
use super::dsl::{guarded_div, Accessor, Aggregate, Axis, Node, ObjRef};
use super::{finish_feature, EncoderDefinition, RelationFeature};
use crate::expr::{Arity, RelationName};
use crate::scene::{BoundingBox, PairGeometry, Scene};

/// Added to `high` normalization so a flat scene does not divide by zero.
pub const HIGH_EPS: f64 = 1e-6;
/// Viewing-direction bias along +y, as a fraction of the mean box diagonal.
pub const VIEW_BIAS: f64 = 1e-3;

const X: Axis = Axis::X;
const Y: Axis = Axis::Y;
const Z: Axis = Axis::Z;
const I: ObjRef = ObjRef::I;
const J: ObjRef = ObjRef::J;
const K: ObjRef = ObjRef::K;

fn decay_f(x: f64) -> f64 {
    (-x).exp()
}

fn proximity(geom: &PairGeometry, i: usize, j: usize) -> f64 {
    decay_f(guarded_div(geom.dist(i, j), geom.mean_diagonal))
}

fn above(b: &[BoundingBox], i: usize, j: usize) -> f64 {
    let (bi, bj) = (&b[i], &b[j]);
    let vertical = decay_f(guarded_div((bi.bottom() - bj.top()).abs(), bi.size[2] * 0.5));
    let dx = (bi.center[0] - bj.center[0]).abs();
    let dy = (bi.center[1] - bj.center[1]).abs();
    let horizontal =
        ((-guarded_div(dx, (bi.size[0] + bj.size[0]) * 0.5)) - guarded_div(dy, (bi.size[1] + bj.size[1]) * 0.5)).exp();
    vertical * horizontal
}

/// Unit viewing direction for the pair `(i, j)`.
fn view_dir(b: &[BoundingBox], geom: &PairGeometry, i: usize, j: usize) -> (f64, f64) {
    let wx = (b[i].center[0] + b[j].center[0]) * 0.5 - geom.centroid[0];
    let wy = (b[i].center[1] + b[j].center[1]) * 0.5 - geom.centroid[1] + geom.mean_diagonal * VIEW_BIAS;
    let norm = (wx * wx + wy * wy).max(0.0).sqrt();
    (guarded_div(wx, norm), guarded_div(wy, norm))
}

/// Signed offset of `i` from `j` along the viewer's right-hand side.
fn lateral(b: &[BoundingBox], geom: &PairGeometry, i: usize, j: usize) -> f64 {
    let (vx, vy) = view_dir(b, geom, i, j);
    let ex = b[i].center[0] - b[j].center[0];
    let ey = b[i].center[1] - b[j].center[1];
    ex * vy - ey * vx
}

/// Signed offset of `i` from `j` away from the viewer.
fn depthwise(b: &[BoundingBox], geom: &PairGeometry, i: usize, j: usize) -> f64 {
    let (vx, vy) = view_dir(b, geom, i, j);
    let ex = b[i].center[0] - b[j].center[0];
    let ey = b[i].center[1] - b[j].center[1];
    ex * vx + ey * vy
}

fn between(b: &[BoundingBox], geom: &PairGeometry, i: usize, j: usize, k: usize) -> f64 {
    let w: [f64; 3] = std::array::from_fn(|a| b[i].center[a] - b[j].center[a]);
    let e: [f64; 3] = std::array::from_fn(|a| b[k].center[a] - b[j].center[a]);
    let t = guarded_div(
        w[0] * e[0] + w[1] * e[1] + w[2] * e[2],
        e[0] * e[0] + e[1] * e[1] + e[2] * e[2],
    );
    let p = t.clamp(0.0, 1.0);
    let res: [f64; 3] = std::array::from_fn(|a| w[a] - p * e[a]);
    let r = (res[0] * res[0] + res[1] * res[1] + res[2] * res[2]).max(0.0).sqrt();
    decay_f(guarded_div(r, geom.mean_diagonal)) * 4.0 * p * (1.0 - p)
}

fn high(b: &BoundingBox, geom: &PairGeometry) -> f64 {
    guarded_div(
        b.center[2] - geom.center_min[2],
        (geom.center_max[2] - geom.center_min[2]) + HIGH_EPS,
    )
}

/// Gaps from the box faces to the scene hull: `[-x, +x, -y, +y]`.
fn wall_gaps(b: &BoundingBox, geom: &PairGeometry) -> [f64; 4] {
    [
        b.min(0) - geom.hull_min[0],
        geom.hull_max[0] - b.max(0),
        b.min(1) - geom.hull_min[1],
        geom.hull_max[1] - b.max(1),
    ]
}

fn unary(rel: RelationName, b: &BoundingBox, geom: &PairGeometry) -> f64 {
    let quarter = geom.mean_diagonal * 0.25;
    match rel {
        RelationName::Large => guarded_div(b.volume(), geom.max_volume),
        RelationName::Small => guarded_div(geom.min_volume, b.volume()),
        RelationName::High => high(b, geom),
        RelationName::Low => 1.0 - high(b, geom),
        RelationName::OnTheFloor => decay_f(guarded_div(b.bottom() - geom.floor_z, quarter)),
        RelationName::AgainstTheWall => {
            let g = wall_gaps(b, geom);
            decay_f(guarded_div(g[0].min(g[1]).min(g[2]).min(g[3]), quarter))
        }
        RelationName::AtTheCorner => {
            let g = wall_gaps(b, geom);
            decay_f(guarded_div(g[0].min(g[1]) + g[2].min(g[3]), quarter))
        }
        _ => unreachable!("{rel} is not unary"),
    }
}

fn binary(rel: RelationName, b: &[BoundingBox], geom: &PairGeometry, i: usize, j: usize) -> f64 {
    match rel {
        RelationName::Near => proximity(geom, i, j),
        RelationName::Far => 1.0 - proximity(geom, i, j),
        RelationName::Above => above(b, i, j),
        RelationName::Below => above(b, j, i),
        RelationName::Right => lateral(b, geom, i, j).max(0.0) * proximity(geom, i, j),
        RelationName::Left => (-lateral(b, geom, i, j)).max(0.0) * proximity(geom, i, j),
        RelationName::Behind => depthwise(b, geom, i, j).max(0.0) * proximity(geom, i, j),
        RelationName::Front => (-depthwise(b, geom, i, j)).max(0.0) * proximity(geom, i, j),
        _ => unreachable!("{rel} is not binary"),
    }
}

/// Native evaluation of a builtin relation.
pub fn native_feature(rel: RelationName, scene: &Scene, geom: &PairGeometry) -> RelationFeature {
    let boxes: Vec<BoundingBox> = scene.objects().iter().map(|o| o.bbox).collect();
    let n = boxes.len();
    let data = match rel.arity() {
        Arity::Unary => boxes.iter().map(|b| unary(rel, b, geom)).collect(),
        Arity::Binary => {
            let mut data = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    data.push(if i == j { 0.0 } else { binary(rel, &boxes, geom, i, j) });
                }
            }
            data
        }
        Arity::Ternary => {
            let mut data = Vec::with_capacity(n * n * n);
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let distinct = i != j && j != k && i != k;
                        data.push(if distinct { between(&boxes, geom, i, j, k) } else { 0.0 });
                    }
                }
            }
            data
        }
    };
    finish_feature(rel, n, data)
}

// DSL exports

fn md() -> Node {
    agg(Aggregate::MeanDiagonal)
}

fn half(x: Node) -> Node {
    mul(vec![x, c(0.5)])
}

fn diff(axis: Axis, a: ObjRef, b: ObjRef) -> Node {
    sub(center(a, axis), center(b, axis))
}

fn dsl_dist(a: ObjRef, b: ObjRef) -> Node {
    let sq = |axis| mul(vec![diff(axis, a, b), diff(axis, a, b)]);
    sqrt(add(vec![sq(X), sq(Y), sq(Z)]))
}

fn dsl_proximity(a: ObjRef, b: ObjRef) -> Node {
    decay(div(dsl_dist(a, b), md()))
}

fn dsl_above(a: ObjRef, b: ObjRef) -> Node {
    let vertical = decay(div(
        abs(sub(get(Accessor::Bottom, a), get(Accessor::Top, b))),
        half(size(a, Z)),
    ));
    let horizontal = exp(sub(
        neg(div(abs(diff(X, a, b)), half(add(vec![size(a, X), size(b, X)])))),
        div(abs(diff(Y, a, b)), half(add(vec![size(a, Y), size(b, Y)]))),
    ));
    mul(vec![vertical, horizontal])
}

fn dsl_view_dir() -> (Node, Node) {
    let mid = |axis| half(add(vec![center(I, axis), center(J, axis)]));
    let wx = sub(mid(X), agg(Aggregate::Centroid(X)));
    let wy = add(vec![
        sub(mid(Y), agg(Aggregate::Centroid(Y))),
        mul(vec![md(), c(VIEW_BIAS)]),
    ]);
    let norm = sqrt(add(vec![
        mul(vec![wx.clone(), wx.clone()]),
        mul(vec![wy.clone(), wy.clone()]),
    ]));
    (div(wx, norm.clone()), div(wy, norm))
}

fn dsl_lateral() -> Node {
    let (vx, vy) = dsl_view_dir();
    sub(mul(vec![diff(X, I, J), vy]), mul(vec![diff(Y, I, J), vx]))
}

fn dsl_depthwise() -> Node {
    let (vx, vy) = dsl_view_dir();
    add(vec![mul(vec![diff(X, I, J), vx]), mul(vec![diff(Y, I, J), vy])])
}

fn dsl_between() -> Node {
    let w = |axis| diff(axis, I, J);
    let e = |axis| diff(axis, K, J);
    let t = div(
        add(vec![
            mul(vec![w(X), e(X)]),
            mul(vec![w(Y), e(Y)]),
            mul(vec![w(Z), e(Z)]),
        ]),
        add(vec![
            mul(vec![e(X), e(X)]),
            mul(vec![e(Y), e(Y)]),
            mul(vec![e(Z), e(Z)]),
        ]),
    );
    let p = clamp01(t);
    let res = |axis| sub(w(axis), mul(vec![p.clone(), e(axis)]));
    let sq = |axis| mul(vec![res(axis), res(axis)]);
    let r = sqrt(add(vec![sq(X), sq(Y), sq(Z)]));
    mul(vec![decay(div(r, md())), c(4.0), p.clone(), sub(c(1.0), p)])
}

fn dsl_high() -> Node {
    div(
        sub(center(I, Z), agg(Aggregate::MinCenter(Z))),
        add(vec![
            sub(agg(Aggregate::MaxCenter(Z)), agg(Aggregate::MinCenter(Z))),
            c(HIGH_EPS),
        ]),
    )
}

fn dsl_wall_gaps() -> [Node; 4] {
    let lo = |axis| sub(center(I, axis), half(size(I, axis)));
    let hi = |axis| add(vec![center(I, axis), half(size(I, axis))]);
    [
        sub(lo(X), agg(Aggregate::HullMin(X))),
        sub(agg(Aggregate::HullMax(X)), hi(X)),
        sub(lo(Y), agg(Aggregate::HullMin(Y))),
        sub(agg(Aggregate::HullMax(Y)), hi(Y)),
    ]
}

fn quarter() -> Node {
    mul(vec![md(), c(0.25)])
}

fn dsl_body(rel: RelationName) -> Node {
    use RelationName::*;
    match rel {
        Large => div(get(Accessor::Volume, I), agg(Aggregate::MaxVolume)),
        Small => div(agg(Aggregate::MinVolume), get(Accessor::Volume, I)),
        High => dsl_high(),
        Low => sub(c(1.0), dsl_high()),
        OnTheFloor => decay(div(sub(get(Accessor::Bottom, I), agg(Aggregate::FloorZ)), quarter())),
        AgainstTheWall => {
            let [a, b, cc, d] = dsl_wall_gaps();
            decay(div(min(vec![min(vec![min(vec![a, b]), cc]), d]), quarter()))
        }
        AtTheCorner => {
            let [a, b, cc, d] = dsl_wall_gaps();
            decay(div(add(vec![min(vec![a, b]), min(vec![cc, d])]), quarter()))
        }
        Near => dsl_proximity(I, J),
        Far => sub(c(1.0), dsl_proximity(I, J)),
        Above => dsl_above(I, J),
        Below => dsl_above(J, I),
        Right => mul(vec![relu(dsl_lateral()), dsl_proximity(I, J)]),
        Left => mul(vec![relu(neg(dsl_lateral())), dsl_proximity(I, J)]),
        Behind => mul(vec![relu(dsl_depthwise()), dsl_proximity(I, J)]),
        Front => mul(vec![relu(neg(dsl_depthwise())), dsl_proximity(I, J)]),
        Between => dsl_between(),
    }
}

/// The builtin encoder for `rel` as a DSL definition.
pub fn encoder_to_dsl(rel: RelationName) -> EncoderDefinition {
    EncoderDefinition {
        relation: rel,
        metadata: "builtin".into(),
        body: dsl_body(rel),
    }
}
