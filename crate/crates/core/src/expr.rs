//! The JSON symbolic-expression language for referring utterances.
//!
//! An expression names a target category and a list of relation clauses;
//! each clause names a relation from a closed set and carries anchor
//! sub-expressions (none for unary, one for binary, two for ternary
//! relations). Clauses in one list are conjunctive.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

pub const DEFAULT_MAX_DEPTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arity {
    Unary,
    Binary,
    Ternary,
}

impl Arity {
    /// Number of anchors a clause of this arity carries.
    pub fn anchors(self) -> usize {
        self.rank() - 1
    }

    /// Rank of the relation feature tensor.
    pub fn rank(self) -> usize {
        match self {
            Arity::Unary => 1,
            Arity::Binary => 2,
            Arity::Ternary => 3,
        }
    }
}

macro_rules! relations {
    ($($variant:ident => $name:literal, $arity:ident;)*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum RelationName {
            $($variant,)*
        }

        impl RelationName {
            pub const ALL: [RelationName; 16] = [$(RelationName::$variant,)*];

            /// Canonical snake-case name.
            pub fn as_str(self) -> &'static str {
                match self {
                    $(RelationName::$variant => $name,)*
                }
            }

            pub fn arity(self) -> Arity {
                match self {
                    $(RelationName::$variant => Arity::$arity,)*
                }
            }
        }
    };
}

relations! {
    Large => "large", Unary;
    Small => "small", Unary;
    High => "high", Unary;
    Low => "low", Unary;
    OnTheFloor => "on_the_floor", Unary;
    AgainstTheWall => "against_the_wall", Unary;
    AtTheCorner => "at_the_corner", Unary;
    Near => "near", Binary;
    Far => "far", Binary;
    Above => "above", Binary;
    Below => "below", Binary;
    Left => "left", Binary;
    Right => "right", Binary;
    Front => "front", Binary;
    Behind => "behind", Binary;
    Between => "between", Ternary;
}

impl RelationName {
    /// The name with underscores shown as spaces ("on the floor").
    pub fn spaced(self) -> String {
        self.as_str().replace('_', " ")
    }

    pub fn closed_set() -> String {
        Self::ALL.iter().map(|r| r.as_str()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for RelationName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationName {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s
            .trim()
            .to_lowercase()
            .split(|c: char| c == '_' || c == '-' || c.is_whitespace())
            .filter(|part| !part.is_empty())
            .collect::<Vec<_>>()
            .join("_");
        RelationName::ALL
            .iter()
            .copied()
            .find(|r| r.as_str() == key)
            .ok_or_else(|| ExprError::UnknownRelation {
                name: s.to_string(),
                path: "$".into(),
            })
    }
}

impl Serialize for RelationName {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RelationName {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExprError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: expected a JSON object")]
    NotAnObject { path: String },
    #[error("{path}: missing or empty \"category\"")]
    MissingCategory { path: String },
    #[error(
        "{path}: unknown relation \"{name}\" (expected one of: {})",
        RelationName::closed_set()
    )]
    UnknownRelation { name: String, path: String },
    #[error("{path}: relation \"{relation}\" takes {expected} anchor(s), found {found}")]
    ArityMismatch {
        relation: RelationName,
        expected: usize,
        found: usize,
        path: String,
    },
    #[error("{path}: expression nesting exceeds depth {max}")]
    TooDeep { max: usize, path: String },
    #[error("{path}: {message}")]
    InvalidField { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymbolicExpression {
    pub category: String,
    pub relations: Vec<RelationClause>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationClause {
    #[serde(rename = "relation_name")]
    pub relation: RelationName,
    pub anchors: Vec<SymbolicExpression>,
    pub negative: bool,
}

impl SymbolicExpression {
    pub fn leaf(category: impl Into<String>) -> Self {
        Self {
            category: category.into(),
            relations: Vec::new(),
        }
    }

    pub fn with(mut self, clause: RelationClause) -> Self {
        self.relations.push(clause);
        self
    }

    /// Nesting depth; a bare category has depth 1.
    pub fn depth(&self) -> usize {
        1 + self
            .relations
            .iter()
            .flat_map(|c| c.anchors.iter())
            .map(|a| a.depth())
            .max()
            .unwrap_or(0)
    }

    /// Every relation used anywhere in the tree.
    pub fn relations_used(&self) -> Vec<RelationName> {
        let mut out = Vec::new();
        self.visit(&mut |_, clause| out.push(clause.relation));
        out.sort();
        out.dedup();
        out
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a str, &'a RelationClause)) {
        for clause in &self.relations {
            f(&self.category, clause);
            for anchor in &clause.anchors {
                anchor.visit(f);
            }
        }
    }
}

impl RelationClause {
    pub fn new(relation: RelationName, anchors: Vec<SymbolicExpression>) -> Self {
        Self {
            relation,
            anchors,
            negative: false,
        }
    }

    pub fn negated(mut self) -> Self {
        self.negative = true;
        self
    }
}

impl<'de> Deserialize<'de> for SymbolicExpression {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(d)?;
        from_value(&value, DEFAULT_MAX_DEPTH).map_err(serde::de::Error::custom)
    }
}

pub fn parse_expression(text: &str) -> Result<SymbolicExpression, ExprError> {
    parse_expression_with_depth(text, DEFAULT_MAX_DEPTH)
}

pub fn parse_expression_with_depth(text: &str, max_depth: usize) -> Result<SymbolicExpression, ExprError> {
    let value: Value = serde_json::from_str(text)?;
    from_value(&value, max_depth)
}

pub fn from_value(value: &Value, max_depth: usize) -> Result<SymbolicExpression, ExprError> {
    parse_node(value, "$", 1, max_depth)
}

fn parse_node(value: &Value, path: &str, depth: usize, max_depth: usize) -> Result<SymbolicExpression, ExprError> {
    if depth > max_depth {
        return Err(ExprError::TooDeep {
            max: max_depth,
            path: path.to_string(),
        });
    }
    let obj = value
        .as_object()
        .ok_or_else(|| ExprError::NotAnObject { path: path.to_string() })?;
    let category = match obj.get("category") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
        _ => return Err(ExprError::MissingCategory { path: path.to_string() }),
    };
    let relations = match obj.get("relations") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(idx, item)| parse_clause(item, &format!("{path}.relations[{idx}]"), depth, max_depth))
            .collect::<Result<_, _>>()?,
        Some(_) => {
            return Err(ExprError::InvalidField {
                path: format!("{path}.relations"),
                message: "expected an array".into(),
            })
        }
    };
    Ok(SymbolicExpression { category, relations })
}

fn parse_clause(value: &Value, path: &str, depth: usize, max_depth: usize) -> Result<RelationClause, ExprError> {
    let obj = value
        .as_object()
        .ok_or_else(|| ExprError::NotAnObject { path: path.to_string() })?;
    let name = ["relation_name", "relation", "name"]
        .iter()
        .find_map(|key| obj.get(*key))
        .and_then(Value::as_str)
        .ok_or_else(|| ExprError::InvalidField {
            path: path.to_string(),
            message: "missing \"relation_name\"".into(),
        })?;
    let relation: RelationName = name.parse().map_err(|_| ExprError::UnknownRelation {
        name: name.to_string(),
        path: path.to_string(),
    })?;

    // "objects" is accepted as an alias for "anchors"
    let (key, anchors_value) = match (obj.get("anchors"), obj.get("objects")) {
        (Some(v), _) => ("anchors", Some(v)),
        (None, Some(v)) => ("objects", Some(v)),
        (None, None) => ("anchors", None),
    };
    let anchors = match anchors_value {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(idx, item)| parse_node(item, &format!("{path}.{key}[{idx}]"), depth + 1, max_depth))
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => {
            return Err(ExprError::InvalidField {
                path: format!("{path}.{key}"),
                message: "expected an array".into(),
            })
        }
    };
    let expected = relation.arity().anchors();
    if anchors.len() != expected {
        return Err(ExprError::ArityMismatch {
            relation,
            expected,
            found: anchors.len(),
            path: path.to_string(),
        });
    }
    let negative = match obj.get("negative") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => {
            return Err(ExprError::InvalidField {
                path: format!("{path}.negative"),
                message: "expected a boolean".into(),
            })
        }
    };
    Ok(RelationClause {
        relation,
        anchors,
        negative,
    })
}

/// Canonical compact JSON: keys `category, relations` and
/// `relation_name, anchors, negative`, in that order.
pub fn serialize_expression(expr: &SymbolicExpression) -> String {
    serde_json::to_string(expr).expect("expression serialization is infallible")
}

/// Every `(target category, clause)` pair in the tree, depth-first with the
/// root's clauses first.
pub fn collect_conditions(expr: &SymbolicExpression) -> Vec<(String, RelationClause)> {
    let mut out = Vec::new();
    expr.visit(&mut |category, clause| out.push((category.to_string(), clause.clone())));
    out
}
