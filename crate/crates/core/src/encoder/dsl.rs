//! Expression-tree DSL in which relation encoders are written.
//!
//! A body is evaluated once per object tuple `(i)`, `(i, j)` or `(i, j, k)`.
//! Leaves read per-object box attributes or scene aggregates; interior nodes
//! apply arithmetic. Every operation is total: division is guarded and
//! `sqrt` clamps its argument at zero.
//!
//! Wire format:
//!
//! ```json
//! {"op": "mul", "args": [{"const": 0.5}, {"get": "center", "obj": "i", "axis": "z"}]}
//! {"agg": "mean_diagonal"}
//! ```

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value};

use crate::expr::Arity;
use crate::scene::{BoundingBox, PairGeometry};

/// Guard added to divisors: `a / (b + EPS * sign(b))`, with `sign(0) = 1`.
pub const DIV_EPS: f64 = 1e-6;
pub const MAX_DEPTH: usize = 64;
pub const MAX_NODES: usize = 512;

#[inline]
pub fn guarded_div(a: f64, b: f64) -> f64 {
    let sign = if b < 0.0 { -1.0 } else { 1.0 };
    a / (b + DIV_EPS * sign)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    fn as_str(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "x" => Some(Axis::X),
            "y" => Some(Axis::Y),
            "z" => Some(Axis::Z),
            _ => None,
        }
    }
}

/// Which object of the evaluated tuple a leaf reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjRef {
    I,
    J,
    K,
}

impl ObjRef {
    fn as_str(self) -> &'static str {
        match self {
            ObjRef::I => "i",
            ObjRef::J => "j",
            ObjRef::K => "k",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "i" => Some(ObjRef::I),
            "j" => Some(ObjRef::J),
            "k" => Some(ObjRef::K),
            _ => None,
        }
    }

    /// Smallest arity under which this reference is in scope.
    pub fn min_arity(self) -> Arity {
        match self {
            ObjRef::I => Arity::Unary,
            ObjRef::J => Arity::Binary,
            ObjRef::K => Arity::Ternary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Accessor {
    Center(Axis),
    Size(Axis),
    Bottom,
    Top,
    Volume,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregate {
    MeanDiagonal,
    FloorZ,
    /// Only x and y are defined.
    HullMin(Axis),
    HullMax(Axis),
    Centroid(Axis),
    MinVolume,
    MaxVolume,
    MinCenter(Axis),
    MaxCenter(Axis),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
    Abs,
    Neg,
    Exp,
    Sqrt,
    Relu,
    Clamp01,
    /// `dot2(ax, ay, bx, by)`, expanded before evaluation.
    Dot2,
    /// `cross2(ax, ay, bx, by) = ax*by - ay*bx`, expanded before evaluation.
    Cross2,
}

impl Op {
    pub const ALL: [Op; 14] = [
        Op::Add,
        Op::Sub,
        Op::Mul,
        Op::Div,
        Op::Min,
        Op::Max,
        Op::Abs,
        Op::Neg,
        Op::Exp,
        Op::Sqrt,
        Op::Relu,
        Op::Clamp01,
        Op::Dot2,
        Op::Cross2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Min => "min",
            Op::Max => "max",
            Op::Abs => "abs",
            Op::Neg => "neg",
            Op::Exp => "exp",
            Op::Sqrt => "sqrt",
            Op::Relu => "relu",
            Op::Clamp01 => "clamp01",
            Op::Dot2 => "dot2",
            Op::Cross2 => "cross2",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Op::ALL.iter().copied().find(|op| op.as_str() == s)
    }

    /// Allowed argument counts as `(min, max)`.
    pub fn arg_range(self) -> (usize, usize) {
        match self {
            Op::Add | Op::Mul | Op::Min | Op::Max => (2, usize::MAX),
            Op::Sub | Op::Div => (2, 2),
            Op::Abs | Op::Neg | Op::Exp | Op::Sqrt | Op::Relu | Op::Clamp01 => (1, 1),
            Op::Dot2 | Op::Cross2 => (4, 4),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Get { accessor: Accessor, obj: ObjRef },
    Agg(Aggregate),
    Apply { op: Op, args: Vec<Node> },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct DslParseError {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DefinitionErrorKind {
    ObjectOutOfScope { obj: &'static str, arity: Arity },
    ArgCount { op: &'static str, found: usize },
    NonFiniteConstant,
    HullAxis,
    TooDeep { max: usize },
    TooLarge { nodes: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{path}: {kind}")]
pub struct DefinitionError {
    pub path: String,
    pub kind: DefinitionErrorKind,
}

impl fmt::Display for DefinitionErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DefinitionErrorKind::ObjectOutOfScope { obj, arity } => {
                write!(f, "object \"{obj}\" is not available to a {arity:?} relation")
            }
            DefinitionErrorKind::ArgCount { op, found } => {
                write!(f, "operator \"{op}\" cannot take {found} argument(s)")
            }
            DefinitionErrorKind::NonFiniteConstant => f.write_str("constant is not finite"),
            DefinitionErrorKind::HullAxis => f.write_str("hull aggregates are defined for x and y only"),
            DefinitionErrorKind::TooDeep { max } => write!(f, "tree deeper than {max}"),
            DefinitionErrorKind::TooLarge { nodes, max } => write!(f, "{nodes} nodes exceeds the cap of {max}"),
        }
    }
}

impl Node {
    pub fn node_count(&self) -> usize {
        match self {
            Node::Apply { args, .. } => 1 + args.iter().map(Node::node_count).sum::<usize>(),
            _ => 1,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Apply { args, .. } => 1 + args.iter().map(Node::depth).max().unwrap_or(0),
            _ => 1,
        }
    }

    /// Checks scope, operator arity, constants and the size caps. Returns the
    /// first offending node path, rooted at `body`.
    pub fn validate(&self, arity: Arity) -> Result<(), DefinitionError> {
        let nodes = self.node_count();
        if nodes > MAX_NODES {
            return Err(DefinitionError {
                path: "body".into(),
                kind: DefinitionErrorKind::TooLarge { nodes, max: MAX_NODES },
            });
        }
        self.validate_at(arity, "body".to_string(), 1)
    }

    fn validate_at(&self, arity: Arity, path: String, depth: usize) -> Result<(), DefinitionError> {
        if depth > MAX_DEPTH {
            return Err(DefinitionError {
                path,
                kind: DefinitionErrorKind::TooDeep { max: MAX_DEPTH },
            });
        }
        let kind = match self {
            Node::Const(v) if !v.is_finite() => Some(DefinitionErrorKind::NonFiniteConstant),
            Node::Get { obj, .. } if obj.min_arity() > arity => Some(DefinitionErrorKind::ObjectOutOfScope {
                obj: obj.as_str(),
                arity,
            }),
            Node::Agg(Aggregate::HullMin(Axis::Z) | Aggregate::HullMax(Axis::Z)) => Some(DefinitionErrorKind::HullAxis),
            Node::Apply { op, args } => {
                let (lo, hi) = op.arg_range();
                if args.len() < lo || args.len() > hi {
                    Some(DefinitionErrorKind::ArgCount {
                        op: op.as_str(),
                        found: args.len(),
                    })
                } else {
                    for (idx, arg) in args.iter().enumerate() {
                        arg.validate_at(arity, format!("{path}.args[{idx}]"), depth + 1)?;
                    }
                    None
                }
            }
            _ => None,
        };
        match kind {
            Some(kind) => Err(DefinitionError { path, kind }),
            None => Ok(()),
        }
    }

    /// Expands `dot2` and `cross2` into plain arithmetic.
    pub fn desugar(&self) -> Node {
        match self {
            Node::Apply { op, args } => {
                let args: Vec<Node> = args.iter().map(Node::desugar).collect();
                match (op, args.as_slice()) {
                    (Op::Dot2, [ax, ay, bx, by]) => build::add(vec![
                        build::mul(vec![ax.clone(), bx.clone()]),
                        build::mul(vec![ay.clone(), by.clone()]),
                    ]),
                    (Op::Cross2, [ax, ay, bx, by]) => build::sub(
                        build::mul(vec![ax.clone(), by.clone()]),
                        build::mul(vec![ay.clone(), bx.clone()]),
                    ),
                    _ => Node::Apply { op: *op, args },
                }
            }
            other => other.clone(),
        }
    }

    /// Largest object reference in the tree.
    pub fn max_obj(&self) -> Option<ObjRef> {
        match self {
            Node::Get { obj, .. } => Some(*obj),
            Node::Apply { args, .. } => args.iter().filter_map(Node::max_obj).max(),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Node::Const(v) => json!({ "const": v }),
            Node::Get { accessor, obj } => {
                let mut m = Map::new();
                let (name, axis) = match accessor {
                    Accessor::Center(a) => ("center", Some(*a)),
                    Accessor::Size(a) => ("size", Some(*a)),
                    Accessor::Bottom => ("bottom", None),
                    Accessor::Top => ("top", None),
                    Accessor::Volume => ("volume", None),
                };
                m.insert("get".into(), name.into());
                m.insert("obj".into(), obj.as_str().into());
                if let Some(a) = axis {
                    m.insert("axis".into(), a.as_str().into());
                }
                Value::Object(m)
            }
            Node::Agg(agg) => {
                let mut m = Map::new();
                let (name, axis) = match agg {
                    Aggregate::MeanDiagonal => ("mean_diagonal", None),
                    Aggregate::FloorZ => ("floor_z", None),
                    Aggregate::HullMin(a) => ("hull_min", Some(*a)),
                    Aggregate::HullMax(a) => ("hull_max", Some(*a)),
                    Aggregate::Centroid(a) => ("centroid", Some(*a)),
                    Aggregate::MinVolume => ("min_volume", None),
                    Aggregate::MaxVolume => ("max_volume", None),
                    Aggregate::MinCenter(a) => ("min_center", Some(*a)),
                    Aggregate::MaxCenter(a) => ("max_center", Some(*a)),
                };
                m.insert("agg".into(), name.into());
                if let Some(a) = axis {
                    m.insert("axis".into(), a.as_str().into());
                }
                Value::Object(m)
            }
            Node::Apply { op, args } => json!({
                "op": op.as_str(),
                "args": args.iter().map(Node::to_json).collect::<Vec<_>>(),
            }),
        }
    }

    pub fn from_json(value: &Value) -> Result<Node, DslParseError> {
        parse_node(value, "body")
    }
}

fn err(path: &str, message: impl Into<String>) -> DslParseError {
    DslParseError {
        path: path.to_string(),
        message: message.into(),
    }
}

fn parse_axis(obj: &Map<String, Value>, path: &str) -> Result<Axis, DslParseError> {
    let raw = obj
        .get("axis")
        .and_then(Value::as_str)
        .ok_or_else(|| err(path, "missing \"axis\""))?;
    Axis::parse(raw).ok_or_else(|| err(path, format!("unknown axis \"{raw}\"")))
}

fn parse_node(value: &Value, path: &str) -> Result<Node, DslParseError> {
    let obj = value.as_object().ok_or_else(|| err(path, "expected a JSON object"))?;
    if let Some(c) = obj.get("const") {
        let v = c.as_f64().ok_or_else(|| err(path, "\"const\" must be a number"))?;
        return Ok(Node::Const(v));
    }
    if let Some(name) = obj.get("get") {
        let name = name.as_str().ok_or_else(|| err(path, "\"get\" must be a string"))?;
        let raw_obj = obj
            .get("obj")
            .and_then(Value::as_str)
            .ok_or_else(|| err(path, "missing \"obj\""))?;
        let target = ObjRef::parse(raw_obj).ok_or_else(|| err(path, format!("unknown object \"{raw_obj}\"")))?;
        let accessor = match name {
            "center" => Accessor::Center(parse_axis(obj, path)?),
            "size" => Accessor::Size(parse_axis(obj, path)?),
            "bottom" => Accessor::Bottom,
            "top" => Accessor::Top,
            "volume" => Accessor::Volume,
            other => return Err(err(path, format!("unknown accessor \"{other}\""))),
        };
        return Ok(Node::Get { accessor, obj: target });
    }
    if let Some(name) = obj.get("agg") {
        let name = name.as_str().ok_or_else(|| err(path, "\"agg\" must be a string"))?;
        let agg = match name {
            "mean_diagonal" => Aggregate::MeanDiagonal,
            "floor_z" => Aggregate::FloorZ,
            "hull_min" => Aggregate::HullMin(parse_axis(obj, path)?),
            "hull_max" => Aggregate::HullMax(parse_axis(obj, path)?),
            "centroid" => Aggregate::Centroid(parse_axis(obj, path)?),
            "min_volume" => Aggregate::MinVolume,
            "max_volume" => Aggregate::MaxVolume,
            "min_center" => Aggregate::MinCenter(parse_axis(obj, path)?),
            "max_center" => Aggregate::MaxCenter(parse_axis(obj, path)?),
            other => return Err(err(path, format!("unknown aggregate \"{other}\""))),
        };
        return Ok(Node::Agg(agg));
    }
    if let Some(name) = obj.get("op") {
        let name = name.as_str().ok_or_else(|| err(path, "\"op\" must be a string"))?;
        let op = Op::parse(name).ok_or_else(|| err(path, format!("unknown operator \"{name}\"")))?;
        let args = obj
            .get("args")
            .and_then(Value::as_array)
            .ok_or_else(|| err(path, "missing \"args\" array"))?;
        let args = args
            .iter()
            .enumerate()
            .map(|(idx, a)| parse_node(a, &format!("{path}.args[{idx}]")))
            .collect::<Result<_, _>>()?;
        return Ok(Node::Apply { op, args });
    }
    Err(err(path, "expected one of \"const\", \"get\", \"agg\" or \"op\""))
}

impl Serialize for Node {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Node {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(d)?;
        Node::from_json(&value).map_err(serde::de::Error::custom)
    }
}

/// Everything a body can read while evaluating one tuple.
pub struct EvalContext<'a> {
    pub boxes: &'a [BoundingBox],
    pub geom: &'a PairGeometry,
}

impl EvalContext<'_> {
    fn accessor(&self, accessor: Accessor, b: &BoundingBox) -> f64 {
        match accessor {
            Accessor::Center(a) => b.center[a.index()],
            Accessor::Size(a) => b.size[a.index()],
            Accessor::Bottom => b.bottom(),
            Accessor::Top => b.top(),
            Accessor::Volume => b.volume(),
        }
    }

    fn aggregate(&self, agg: Aggregate) -> f64 {
        let g = self.geom;
        match agg {
            Aggregate::MeanDiagonal => g.mean_diagonal,
            Aggregate::FloorZ => g.floor_z,
            Aggregate::HullMin(a) => g.hull_min.get(a.index()).copied().unwrap_or(0.0),
            Aggregate::HullMax(a) => g.hull_max.get(a.index()).copied().unwrap_or(0.0),
            Aggregate::Centroid(a) => g.centroid[a.index()],
            Aggregate::MinVolume => g.min_volume,
            Aggregate::MaxVolume => g.max_volume,
            Aggregate::MinCenter(a) => g.center_min[a.index()],
            Aggregate::MaxCenter(a) => g.center_max[a.index()],
        }
    }

    /// Evaluates a desugared node for the tuple `idx = [i, j, k]`.
    pub fn eval(&self, node: &Node, idx: [usize; 3]) -> f64 {
        match node {
            Node::Const(v) => *v,
            Node::Get { accessor, obj } => {
                let pos = match obj {
                    ObjRef::I => idx[0],
                    ObjRef::J => idx[1],
                    ObjRef::K => idx[2],
                };
                self.accessor(*accessor, &self.boxes[pos])
            }
            Node::Agg(agg) => self.aggregate(*agg),
            Node::Apply { op, args } => {
                let mut vals = args.iter().map(|a| self.eval(a, idx));
                let first = vals.next().unwrap_or(0.0);
                match op {
                    Op::Add => vals.fold(first, |acc, v| acc + v),
                    Op::Mul => vals.fold(first, |acc, v| acc * v),
                    Op::Min => vals.fold(first, f64::min),
                    Op::Max => vals.fold(first, f64::max),
                    Op::Sub => first - vals.next().unwrap_or(0.0),
                    Op::Div => guarded_div(first, vals.next().unwrap_or(0.0)),
                    Op::Abs => first.abs(),
                    Op::Neg => -first,
                    Op::Exp => first.exp(),
                    Op::Sqrt => first.max(0.0).sqrt(),
                    Op::Relu => first.max(0.0),
                    Op::Clamp01 => first.clamp(0.0, 1.0),
                    // only reached when called on a tree that was not desugared
                    Op::Dot2 | Op::Cross2 => self.eval(&node.desugar(), idx),
                }
            }
        }
    }
}

/// Constructors used to write builtin encoders and mutations.
pub mod build {
    use super::*;

    pub fn c(v: f64) -> Node {
        Node::Const(v)
    }

    pub fn get(accessor: Accessor, obj: ObjRef) -> Node {
        Node::Get { accessor, obj }
    }

    pub fn center(obj: ObjRef, axis: Axis) -> Node {
        get(Accessor::Center(axis), obj)
    }

    pub fn size(obj: ObjRef, axis: Axis) -> Node {
        get(Accessor::Size(axis), obj)
    }

    pub fn agg(a: Aggregate) -> Node {
        Node::Agg(a)
    }

    fn apply(op: Op, args: Vec<Node>) -> Node {
        Node::Apply { op, args }
    }

    pub fn add(args: Vec<Node>) -> Node {
        apply(Op::Add, args)
    }

    pub fn mul(args: Vec<Node>) -> Node {
        apply(Op::Mul, args)
    }

    pub fn min(args: Vec<Node>) -> Node {
        apply(Op::Min, args)
    }

    pub fn sub(a: Node, b: Node) -> Node {
        apply(Op::Sub, vec![a, b])
    }

    pub fn div(a: Node, b: Node) -> Node {
        apply(Op::Div, vec![a, b])
    }

    pub fn abs(a: Node) -> Node {
        apply(Op::Abs, vec![a])
    }

    pub fn neg(a: Node) -> Node {
        apply(Op::Neg, vec![a])
    }

    pub fn exp(a: Node) -> Node {
        apply(Op::Exp, vec![a])
    }

    pub fn sqrt(a: Node) -> Node {
        apply(Op::Sqrt, vec![a])
    }

    pub fn relu(a: Node) -> Node {
        apply(Op::Relu, vec![a])
    }

    pub fn clamp01(a: Node) -> Node {
        apply(Op::Clamp01, vec![a])
    }

    pub fn dot2(ax: Node, ay: Node, bx: Node, by: Node) -> Node {
        apply(Op::Dot2, vec![ax, ay, bx, by])
    }

    /// `exp(-x)`
    pub fn decay(x: Node) -> Node {
        exp(neg(x))
    }
}
