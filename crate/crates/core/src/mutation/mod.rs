//! Type-aware mutation of fuzz inputs.
//!
//! Each value is mutated by a strategy chosen from its type:
//!
//! * `Int` / `Float`: add a random non-zero delta of either sign.
//! * `Str`: generate a new string, shuffle characters, add one character, or
//!   remove one character.
//! * `Bool`: draw a fresh random boolean.
//! * `List` / `Dict`: mutate one element according to the element kind.
//!
//! A tuple mutation touches exactly one parameter position. All randomness
//! flows through [`FuzzRng`], so a seed fixes the whole sequence.

mod value;

use serde::{Deserialize, Serialize};

pub use value::{infer_types, ElemKind, FuzzKind, FuzzValue, InputTuple, Origin, TypeSignature};

use crate::rng::FuzzRng;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MutationError {
    #[error("cannot mutate a zero-argument tuple")]
    EmptyTuple,
    #[error("no seeds to infer types from")]
    NoSeeds,
    #[error("seed arity {found} differs from {expected}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("seeds disagree on the type of parameter {0}")]
    ConflictingTypes(usize),
    #[error("unknown parameter type {0:?}")]
    UnknownKind(String),
    #[error("container elements must share one kind: {0}")]
    Heterogeneous(String),
    #[error("value has no fuzz representation: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    NumDelta,
    StrNew,
    StrShuffle,
    StrAdd,
    StrRemove,
    BoolFlip,
    ContainerElem,
}

/// What one mutation did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationRecord {
    pub strategy: Strategy,
    /// Parameter index; 0 for a bare value mutation.
    pub param: usize,
    /// Element index inside a container, `-1` for an empty container.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element: Option<i64>,
    /// Strategy applied to the container element.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner: Option<Strategy>,
}

impl MutationRecord {
    fn simple(strategy: Strategy) -> Self {
        Self {
            strategy,
            param: 0,
            element: None,
            inner: None,
        }
    }
}

const INT_DELTA_MAX: u64 = 1 << 16;
const FLOAT_DELTA_SCALE: f64 = 1000.0;
const NEW_STRING_MAX_LEN: u64 = 64;

/// Inputs that tend to break string handling: empty, very long, quoting and
/// escaping, format directives, path traversal, and embedded NUL.
pub const HAZARD_STRINGS: &[&str] = &[
    "",
    "'\"\\'\\\"\\\\''\"\"",
    "%s%s%s%s%n%x%d",
    "{0}{1}{__class__}",
    "../../../../../../etc/passwd",
    "' OR '1'='1'; --",
    "\u{0}",
    "\u{feff}é漢字🙂",
];

fn hazard_string(rng: &mut FuzzRng) -> String {
    // One extra slot stands for the very long string.
    let pick = rng.index(HAZARD_STRINGS.len() + 1);
    match HAZARD_STRINGS.get(pick) {
        Some(s) => s.to_string(),
        None => "A".repeat(4096),
    }
}

fn printable_char(rng: &mut FuzzRng) -> char {
    char::from(rng.between(0x20, 0x7e) as u8)
}

fn new_string(rng: &mut FuzzRng) -> String {
    if rng.chance(1, 10) {
        return hazard_string(rng);
    }
    let len = rng.between(0, NEW_STRING_MAX_LEN);
    (0..len).map(|_| printable_char(rng)).collect()
}

fn mutate_int(v: i64, rng: &mut FuzzRng) -> i64 {
    let magnitude = rng.between(1, INT_DELTA_MAX) as i64;
    let delta = if rng.coin() { magnitude } else { -magnitude };
    v.checked_add(delta).unwrap_or_else(|| v - delta)
}

fn mutate_float(v: f64, rng: &mut FuzzRng) -> f64 {
    let scale = v.abs().max(1.0);
    for _ in 0..4 {
        let magnitude = rng.unit_open_closed() * FLOAT_DELTA_SCALE * scale;
        let delta = if rng.coin() { magnitude } else { -magnitude };
        let out = v + delta;
        if out.is_finite() && out != v {
            return out;
        }
        let flipped = v - delta;
        if flipped.is_finite() && flipped != v {
            return flipped;
        }
    }
    if v == 0.0 {
        1.0
    } else {
        -v
    }
}

fn mutate_str(s: &str, rng: &mut FuzzRng) -> (String, Strategy) {
    let mut chars: Vec<char> = s.chars().collect();
    match rng.below(4) {
        0 => (new_string(rng), Strategy::StrNew),
        1 => {
            for i in (1..chars.len()).rev() {
                let j = rng.index(i + 1);
                chars.swap(i, j);
            }
            (chars.into_iter().collect(), Strategy::StrShuffle)
        }
        2 => {
            let at = rng.index(chars.len() + 1);
            chars.insert(at, printable_char(rng));
            (chars.into_iter().collect(), Strategy::StrAdd)
        }
        _ => {
            if chars.is_empty() {
                return (new_string(rng), Strategy::StrNew);
            }
            let at = rng.index(chars.len());
            chars.remove(at);
            (chars.into_iter().collect(), Strategy::StrRemove)
        }
    }
}

/// Mutates one value, preserving its type tag.
pub fn mutate_value(v: &FuzzValue, rng: &mut FuzzRng) -> (FuzzValue, MutationRecord) {
    match v {
        FuzzValue::Int(i) => (
            FuzzValue::Int(mutate_int(*i, rng)),
            MutationRecord::simple(Strategy::NumDelta),
        ),
        FuzzValue::Float(x) => (
            FuzzValue::Float(mutate_float(*x, rng)),
            MutationRecord::simple(Strategy::NumDelta),
        ),
        FuzzValue::Str(s) => {
            let (out, strategy) = mutate_str(s, rng);
            (FuzzValue::Str(out), MutationRecord::simple(strategy))
        }
        FuzzValue::Bool(_) => (
            FuzzValue::Bool(rng.coin()),
            MutationRecord::simple(Strategy::BoolFlip),
        ),
        FuzzValue::List { kind, items } => {
            if items.is_empty() {
                return (v.clone(), container_record(-1, None));
            }
            let at = rng.index(items.len());
            let (elem, rec) = mutate_value(&items[at], rng);
            let mut items = items.clone();
            items[at] = elem;
            (
                FuzzValue::List { kind: *kind, items },
                container_record(at as i64, Some(rec.strategy)),
            )
        }
        FuzzValue::Dict { kind, entries } => {
            if entries.is_empty() {
                return (v.clone(), container_record(-1, None));
            }
            let at = rng.index(entries.len());
            let (key, old) = entries.iter().nth(at).expect("index in range");
            let (elem, rec) = mutate_value(old, rng);
            let mut entries = entries.clone();
            entries.insert(key.clone(), elem);
            (
                FuzzValue::Dict {
                    kind: *kind,
                    entries,
                },
                container_record(at as i64, Some(rec.strategy)),
            )
        }
    }
}

fn container_record(element: i64, inner: Option<Strategy>) -> MutationRecord {
    MutationRecord {
        strategy: Strategy::ContainerElem,
        param: 0,
        element: Some(element),
        inner,
    }
}

/// Mutates exactly one position of `t`; the result's origin points at `t`.
pub fn mutate_tuple(
    t: &InputTuple,
    rng: &mut FuzzRng,
    iteration: usize,
) -> Result<(InputTuple, MutationRecord), MutationError> {
    if t.args.is_empty() {
        return Err(MutationError::EmptyTuple);
    }
    let position = rng.index(t.args.len());
    let (value, mut record) = mutate_value(&t.args[position], rng);
    record.param = position;
    let mut args = t.args.clone();
    args[position] = value;
    Ok((
        InputTuple {
            args,
            origin: Origin::Mutated {
                parent: t.label(),
                iteration,
            },
        },
        record,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn rng() -> FuzzRng {
        FuzzRng::seed_from_u64(0)
    }

    #[test]
    fn bool_flip_record() {
        let mut r = rng();
        for _ in 0..100 {
            let (out, rec) = mutate_value(&FuzzValue::Bool(true), &mut r);
            assert!(matches!(out, FuzzValue::Bool(_)));
            assert_eq!(rec.strategy, Strategy::BoolFlip);
        }
    }

    #[test]
    fn bool_draw_reaches_both_values() {
        let mut r = rng();
        let outs: Vec<FuzzValue> =
            (0..64).map(|_| mutate_value(&FuzzValue::Bool(true), &mut r).0).collect();
        assert!(outs.contains(&FuzzValue::Bool(true)));
        assert!(outs.contains(&FuzzValue::Bool(false)));
    }

    #[test]
    fn empty_containers_unchanged() {
        let mut r = rng();
        let list = FuzzValue::default_of(FuzzKind::List(ElemKind::Numeric));
        let (out, rec) = mutate_value(&list, &mut r);
        assert_eq!(out, list);
        assert_eq!(rec.strategy, Strategy::ContainerElem);
        assert_eq!(rec.element, Some(-1));
        let dict = FuzzValue::default_of(FuzzKind::Dict(ElemKind::Text));
        assert_eq!(mutate_value(&dict, &mut r).0, dict);
    }

    #[test]
    fn container_mutates_exactly_one_element() {
        let mut r = rng();
        let list = FuzzValue::list(
            ElemKind::Text,
            vec![FuzzValue::Str("aa".into()), FuzzValue::Str("bb".into())],
        )
        .unwrap();
        for _ in 0..200 {
            let (out, rec) = mutate_value(&list, &mut r);
            let (FuzzValue::List { items: a, .. }, FuzzValue::List { items: b, .. }) = (&list, &out)
            else {
                panic!("tag changed");
            };
            let at = rec.element.unwrap() as usize;
            for i in 0..2 {
                if i != at {
                    assert_eq!(a[i], b[i]);
                }
            }
            assert!(matches!(b[at], FuzzValue::Str(_)));
        }
    }

    #[test]
    fn dict_keys_are_stable() {
        let mut r = rng();
        let entries: BTreeMap<String, FuzzValue> =
            [("a".to_string(), FuzzValue::Int(1)), ("b".to_string(), FuzzValue::Float(2.0))]
                .into_iter()
                .collect();
        let dict = FuzzValue::dict(ElemKind::Numeric, entries).unwrap();
        for _ in 0..100 {
            let (out, _) = mutate_value(&dict, &mut r);
            let FuzzValue::Dict { entries, .. } = out else {
                panic!("tag changed")
            };
            assert_eq!(entries.keys().collect::<Vec<_>>(), ["a", "b"]);
        }
    }

    #[test]
    fn int_overflow_turns_around() {
        let mut r = rng();
        for _ in 0..200 {
            let (out, _) = mutate_value(&FuzzValue::Int(i64::MAX), &mut r);
            let FuzzValue::Int(x) = out else { panic!() };
            assert!(x < i64::MAX);
            let (out, _) = mutate_value(&FuzzValue::Int(i64::MIN), &mut r);
            let FuzzValue::Int(x) = out else { panic!() };
            assert!(x > i64::MIN);
        }
    }

    #[test]
    fn huge_floats_stay_finite() {
        let mut r = rng();
        for v in [f64::MAX, -f64::MAX, 1e300, f64::MIN_POSITIVE, 0.0, -0.0] {
            for _ in 0..100 {
                let (out, _) = mutate_value(&FuzzValue::Float(v), &mut r);
                let FuzzValue::Float(x) = out else { panic!() };
                assert!(x.is_finite());
                assert_ne!(x, v);
            }
        }
    }

    #[test]
    fn str_remove_on_empty_falls_back_to_new() {
        let mut r = rng();
        for _ in 0..500 {
            let (_, rec) = mutate_value(&FuzzValue::Str(String::new()), &mut r);
            assert_ne!(rec.strategy, Strategy::StrRemove);
        }
    }

    #[test]
    fn tuple_mutates_one_position() {
        let mut r = rng();
        let t = InputTuple::seed(0, vec![FuzzValue::Int(1), FuzzValue::Str("ab".into())]);
        for it in 1..100 {
            let (m, rec) = mutate_tuple(&t, &mut r, it).unwrap();
            let other = 1 - rec.param;
            assert_eq!(m.args[other], t.args[other]);
            assert_eq!(
                m.origin,
                Origin::Mutated {
                    parent: "seed-0".into(),
                    iteration: it
                }
            );
        }
    }

    #[test]
    fn arity_one_always_position_zero() {
        let mut r = rng();
        let t = InputTuple::seed(0, vec![FuzzValue::Int(1)]);
        for it in 0..50 {
            assert_eq!(mutate_tuple(&t, &mut r, it).unwrap().1.param, 0);
        }
    }

    #[test]
    fn arity_zero_is_an_error() {
        let t = InputTuple::seed(0, vec![]);
        assert_eq!(
            mutate_tuple(&t, &mut rng(), 1).unwrap_err(),
            MutationError::EmptyTuple
        );
    }
}
