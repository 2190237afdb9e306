use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Number, Value};

use super::MutationError;

/// What a container holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElemKind {
    Numeric,
    Text,
}

/// Type tag of a fuzz value, also used as a per-parameter type hint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FuzzKind {
    Int,
    Float,
    Str,
    Bool,
    List(ElemKind),
    Dict(ElemKind),
}

impl fmt::Display for FuzzKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = |k: &ElemKind| match k {
            ElemKind::Numeric => "numeric",
            ElemKind::Text => "text",
        };
        match self {
            FuzzKind::Int => f.write_str("int"),
            FuzzKind::Float => f.write_str("float"),
            FuzzKind::Str => f.write_str("str"),
            FuzzKind::Bool => f.write_str("bool"),
            FuzzKind::List(k) => write!(f, "list[{}]", kind(k)),
            FuzzKind::Dict(k) => write!(f, "dict[{}]", kind(k)),
        }
    }
}

impl FromStr for FuzzKind {
    type Err = MutationError;

    /// Accepts the canonical spellings (`int`, `list[text]`, ...) plus the
    /// usual Python annotations (`List[int]`, `dict[str, str]`, `string`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect();
        let elem = |inner: &str| -> Option<ElemKind> {
            match inner {
                "" | "int" | "float" | "number" | "numeric" | "integer" => Some(ElemKind::Numeric),
                "str" | "string" | "text" => Some(ElemKind::Text),
                _ => None,
            }
        };
        let container = |norm: &str, head: &str| -> Option<Option<ElemKind>> {
            if norm == head {
                return Some(elem(""));
            }
            let inner = norm.strip_prefix(head)?.strip_prefix('[')?.strip_suffix(']')?;
            // dict[str, V] keys are always text; the value kind decides.
            let inner = inner.rsplit(',').next().unwrap_or(inner);
            Some(elem(inner))
        };
        let kind = match norm.as_str() {
            "int" | "integer" => Some(FuzzKind::Int),
            "float" | "number" | "real" => Some(FuzzKind::Float),
            "str" | "string" | "text" => Some(FuzzKind::Str),
            "bool" | "boolean" => Some(FuzzKind::Bool),
            _ => container(&norm, "list")
                .map(|k| k.map(FuzzKind::List))
                .or_else(|| container(&norm, "dict").map(|k| k.map(FuzzKind::Dict)))
                .flatten(),
        };
        kind.ok_or_else(|| MutationError::UnknownKind(s.to_string()))
    }
}

impl Serialize for FuzzKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FuzzKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A typed argument value.
#[derive(Debug, Clone, PartialEq)]
pub enum FuzzValue {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
    List {
        kind: ElemKind,
        items: Vec<FuzzValue>,
    },
    Dict {
        kind: ElemKind,
        entries: BTreeMap<String, FuzzValue>,
    },
}

impl FuzzValue {
    pub fn kind(&self) -> FuzzKind {
        match self {
            FuzzValue::Int(_) => FuzzKind::Int,
            FuzzValue::Float(_) => FuzzKind::Float,
            FuzzValue::Str(_) => FuzzKind::Str,
            FuzzValue::Bool(_) => FuzzKind::Bool,
            FuzzValue::List { kind, .. } => FuzzKind::List(*kind),
            FuzzValue::Dict { kind, .. } => FuzzKind::Dict(*kind),
        }
    }

    /// Zero value of a kind: 0, 0.0, "", false, or an empty container.
    pub fn default_of(kind: FuzzKind) -> Self {
        match kind {
            FuzzKind::Int => FuzzValue::Int(0),
            FuzzKind::Float => FuzzValue::Float(0.0),
            FuzzKind::Str => FuzzValue::Str(String::new()),
            FuzzKind::Bool => FuzzValue::Bool(false),
            FuzzKind::List(kind) => FuzzValue::List {
                kind,
                items: Vec::new(),
            },
            FuzzKind::Dict(kind) => FuzzValue::Dict {
                kind,
                entries: BTreeMap::new(),
            },
        }
    }

    fn fits(&self, kind: ElemKind) -> bool {
        match kind {
            ElemKind::Numeric => matches!(self, FuzzValue::Int(_) | FuzzValue::Float(_)),
            ElemKind::Text => matches!(self, FuzzValue::Str(_)),
        }
    }

    pub fn list(kind: ElemKind, items: Vec<FuzzValue>) -> Result<Self, MutationError> {
        if let Some(bad) = items.iter().find(|v| !v.fits(kind)) {
            return Err(MutationError::Heterogeneous(bad.to_json().to_string()));
        }
        Ok(FuzzValue::List { kind, items })
    }

    pub fn dict(kind: ElemKind, entries: BTreeMap<String, FuzzValue>) -> Result<Self, MutationError> {
        if let Some(bad) = entries.values().find(|v| !v.fits(kind)) {
            return Err(MutationError::Heterogeneous(bad.to_json().to_string()));
        }
        Ok(FuzzValue::Dict { kind, entries })
    }

    /// Canonical JSON: numbers, strings, booleans, arrays, objects.
    pub fn to_json(&self) -> Value {
        match self {
            FuzzValue::Int(i) => Value::Number((*i).into()),
            FuzzValue::Float(x) => Number::from_f64(*x).map_or(Value::Null, Value::Number),
            FuzzValue::Str(s) => Value::String(s.clone()),
            FuzzValue::Bool(b) => Value::Bool(*b),
            FuzzValue::List { items, .. } => Value::Array(items.iter().map(Self::to_json).collect()),
            FuzzValue::Dict { entries, .. } => Value::Object(
                entries
                    .iter()
                    .map(|(k, v)| (k.clone(), v.to_json()))
                    .collect(),
            ),
        }
    }

    /// Decodes a JSON value, choosing the narrowest tag. Empty containers are
    /// taken as numeric.
    pub fn from_json(value: &Value) -> Result<Self, MutationError> {
        let scalar = |v: &Value| -> Result<FuzzValue, MutationError> {
            match v {
                Value::Number(n) => Ok(match n.as_i64() {
                    Some(i) => FuzzValue::Int(i),
                    None => FuzzValue::Float(n.as_f64().filter(|x| x.is_finite()).ok_or_else(
                        || MutationError::Unsupported(v.to_string()),
                    )?),
                }),
                Value::String(s) => Ok(FuzzValue::Str(s.clone())),
                Value::Bool(b) => Ok(FuzzValue::Bool(*b)),
                other => Err(MutationError::Unsupported(other.to_string())),
            }
        };
        let kind_of = |items: &[FuzzValue]| -> ElemKind {
            match items.first() {
                Some(FuzzValue::Str(_)) => ElemKind::Text,
                _ => ElemKind::Numeric,
            }
        };
        match value {
            Value::Array(xs) => {
                let items = xs.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
                if items.iter().any(|v| matches!(v, FuzzValue::Bool(_))) {
                    return Err(MutationError::Unsupported(value.to_string()));
                }
                Self::list(kind_of(&items), items)
            }
            Value::Object(map) => {
                let entries = map
                    .iter()
                    .map(|(k, v)| Ok((k.clone(), scalar(v)?)))
                    .collect::<Result<BTreeMap<_, _>, MutationError>>()?;
                if entries.values().any(|v| matches!(v, FuzzValue::Bool(_))) {
                    return Err(MutationError::Unsupported(value.to_string()));
                }
                let items: Vec<FuzzValue> = entries.values().take(1).cloned().collect();
                Self::dict(kind_of(&items), entries)
            }
            other => scalar(other),
        }
    }

    /// Converts into `kind` where that is lossless in meaning: integers widen
    /// to floats and empty containers adopt the wanted element kind.
    pub fn coerce(self, kind: FuzzKind) -> Option<Self> {
        match (self, kind) {
            (v, k) if v.kind() == k => Some(v),
            (FuzzValue::Int(i), FuzzKind::Float) => Some(FuzzValue::Float(i as f64)),
            (FuzzValue::List { items, .. }, FuzzKind::List(k)) => {
                let items = items
                    .into_iter()
                    .map(|v| match (v, k) {
                        (FuzzValue::Int(i), ElemKind::Numeric) => Some(FuzzValue::Int(i)),
                        (v, k) if v.fits(k) => Some(v),
                        _ => None,
                    })
                    .collect::<Option<Vec<_>>>()?;
                Some(FuzzValue::List { kind: k, items })
            }
            (FuzzValue::Dict { entries, .. }, FuzzKind::Dict(k)) => {
                if entries.values().all(|v| v.fits(k)) {
                    Some(FuzzValue::Dict { kind: k, entries })
                } else {
                    None
                }
            }
            _ => None,
        }
    }
}

impl Serialize for FuzzValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for FuzzValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        FuzzValue::from_json(&v).map_err(serde::de::Error::custom)
    }
}

/// Where an input tuple came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Seed { index: usize },
    Mutated { parent: String, iteration: usize },
}

/// Positional arguments for one call of the function under test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputTuple {
    pub args: Vec<FuzzValue>,
    pub origin: Origin,
}

impl InputTuple {
    pub fn seed(index: usize, args: Vec<FuzzValue>) -> Self {
        Self {
            args,
            origin: Origin::Seed { index },
        }
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    /// Stable name within one fuzz run: `seed-<i>` or `mut-<iteration>`.
    pub fn label(&self) -> String {
        match &self.origin {
            Origin::Seed { index } => format!("seed-{index}"),
            Origin::Mutated { iteration, .. } => format!("mut-{iteration}"),
        }
    }

    /// The harness wire form: one compact JSON array.
    pub fn args_json(&self) -> String {
        Value::Array(self.args.iter().map(FuzzValue::to_json).collect()).to_string()
    }

    /// Parses an argument array such as `[1, "a"]`.
    pub fn from_args_json(index: usize, value: &Value) -> Result<Self, MutationError> {
        let Value::Array(xs) = value else {
            return Err(MutationError::Unsupported(value.to_string()));
        };
        let args = xs.iter().map(FuzzValue::from_json).collect::<Result<_, _>>()?;
        Ok(Self::seed(index, args))
    }
}

/// Per-position type tags of an entry point's parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypeSignature(pub Vec<FuzzKind>);

impl TypeSignature {
    pub fn arity(&self) -> usize {
        self.0.len()
    }

    /// The all-defaults tuple used when no usable seeds exist.
    pub fn default_tuple(&self, index: usize) -> InputTuple {
        InputTuple::seed(index, self.0.iter().map(|k| FuzzValue::default_of(*k)).collect())
    }

    /// Coerces `tuple` to this signature, or `None` when it cannot fit.
    pub fn coerce(&self, tuple: InputTuple) -> Option<InputTuple> {
        if tuple.arity() != self.arity() {
            return None;
        }
        let args = tuple
            .args
            .into_iter()
            .zip(&self.0)
            .map(|(v, k)| v.coerce(*k))
            .collect::<Option<Vec<_>>>()?;
        Some(InputTuple {
            args,
            origin: tuple.origin,
        })
    }
}

/// Comma-separated kinds; commas inside brackets belong to the kind, as in
/// `int, dict[str, str]`. An empty string is the zero-argument signature.
impl FromStr for TypeSignature {
    type Err = MutationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().is_empty() {
            return Ok(Self(Vec::new()));
        }
        let mut parts = Vec::new();
        let (mut depth, mut start) = (0i32, 0);
        for (i, c) in s.char_indices() {
            match c {
                '[' => depth += 1,
                ']' => depth -= 1,
                ',' if depth == 0 => {
                    parts.push(&s[start..i]);
                    start = i + 1;
                }
                _ => {}
            }
        }
        parts.push(&s[start..]);
        let kinds = parts.into_iter().map(|p| p.trim().parse()).collect::<Result<_, _>>()?;
        Ok(Self(kinds))
    }
}

fn unify(a: FuzzKind, b: FuzzKind, a_empty: bool, b_empty: bool) -> Option<(FuzzKind, bool)> {
    use FuzzKind::*;
    match (a, b) {
        (x, y) if x == y => Some((x, a_empty && b_empty)),
        (Int, Float) | (Float, Int) => Some((Float, false)),
        (List(_), List(_)) | (Dict(_), Dict(_)) if a_empty => Some((b, b_empty)),
        (List(_), List(_)) | (Dict(_), Dict(_)) if b_empty => Some((a, a_empty)),
        _ => None,
    }
}

fn is_empty_container(v: &FuzzValue) -> bool {
    match v {
        FuzzValue::List { items, .. } => items.is_empty(),
        FuzzValue::Dict { entries, .. } => entries.is_empty(),
        _ => false,
    }
}

/// Per-position tag shared by every seed. Int and Float unify to Float; an
/// empty container is compatible with either element kind.
pub fn infer_types(seeds: &[InputTuple]) -> Result<TypeSignature, MutationError> {
    let first = seeds.first().ok_or(MutationError::NoSeeds)?;
    let arity = first.arity();
    if let Some(bad) = seeds.iter().find(|s| s.arity() != arity) {
        return Err(MutationError::ArityMismatch {
            expected: arity,
            found: bad.arity(),
        });
    }
    let mut kinds = Vec::with_capacity(arity);
    for pos in 0..arity {
        let mut acc = (first.args[pos].kind(), is_empty_container(&first.args[pos]));
        for seed in &seeds[1..] {
            let v = &seed.args[pos];
            acc = unify(acc.0, v.kind(), acc.1, is_empty_container(v))
                .ok_or(MutationError::ConflictingTypes(pos))?;
        }
        kinds.push(acc.0);
    }
    Ok(TypeSignature(kinds))
}
