use rand::distributions::Alphanumeric;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::Chain;
use super::types::{PrimKind, TypeDesc, TypeError, TypeRegistry};
use super::value::{conforms, render_chain, Value};

/// Seedable deterministic random stream. The same seed always reproduces
/// the same construction and mutation decisions.
#[derive(Debug, Clone)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent stream keyed by `seed` and a tuple of indices. Streams for
    /// distinct keys do not overlap in practice, and extending a loop bound
    /// never perturbs earlier keys.
    pub fn derive(seed: u64, keys: &[u64]) -> Self {
        let mut h = splitmix64(seed);
        for k in keys {
            h = splitmix64(h ^ splitmix64(k.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        }
        Rng::seeded(h)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.0.gen_range(0..n)
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Bounds for random value construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub max_array_len: usize,
    pub max_string_len: usize,
    /// Inclusive integer domain shared by int32 and int64 draws (clamped to
    /// the int32 range for int32).
    pub int_min: i64,
    pub int_max: i64,
    pub float_abs_max: f64,
    pub max_depth: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_array_len: 8,
            max_string_len: 16,
            int_min: -(1 << 31),
            int_max: (1 << 31) - 1,
            float_abs_max: 1.0e6,
            max_depth: 5,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_array_len == 0 || self.max_string_len == 0 || self.max_depth == 0 {
            return Err("array length, string length and depth bounds must be positive".into());
        }
        if self.int_min > self.int_max {
            return Err("empty integer domain".into());
        }
        if self.int_min > i32::MAX as i64 || self.int_max < i32::MIN as i64 {
            return Err("integer domain does not intersect int32".into());
        }
        if !(self.float_abs_max.is_finite() && self.float_abs_max > 0.0) {
            return Err("float bound must be positive and finite".into());
        }
        Ok(())
    }
}

/// Builds a random value of type `t`. Arrays get between 1 and
/// `max_array_len` elements; below `max_depth` records become `Null` and
/// arrays become empty.
pub fn construct_random(reg: &TypeRegistry, t: &TypeDesc, rng: &mut Rng, cfg: &GenConfig) -> Result<Value, TypeError> {
    reg.check_type(t)?;
    construct_at(reg, t, rng, cfg, 0)
}

fn construct_at(
    reg: &TypeRegistry,
    t: &TypeDesc,
    rng: &mut Rng,
    cfg: &GenConfig,
    depth: usize,
) -> Result<Value, TypeError> {
    match t {
        TypeDesc::Prim(k) => Ok(random_prim(*k, rng, cfg)),
        TypeDesc::Str => Ok(Value::Str(random_string(rng, cfg))),
        TypeDesc::Array(elem) => {
            if depth >= cfg.max_depth {
                return Ok(Value::array(elem.as_ref().clone(), Vec::new()));
            }
            build_array(reg, elem, rng, cfg, depth)
        }
        TypeDesc::Record(_) | TypeDesc::Abstract(_) => {
            if depth >= cfg.max_depth {
                return Ok(Value::Null);
            }
            build_object(reg, t, rng, cfg, depth)
        }
    }
}

fn build_array(
    reg: &TypeRegistry,
    elem: &TypeDesc,
    rng: &mut Rng,
    cfg: &GenConfig,
    depth: usize,
) -> Result<Value, TypeError> {
    let len = rng.0.gen_range(1..=cfg.max_array_len);
    let elems = (0..len)
        .map(|_| construct_at(reg, elem, rng, cfg, depth + 1))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Value::array(elem.clone(), elems))
}

/// Constructs a non-null record (choosing a subtype for abstract types).
fn build_object(
    reg: &TypeRegistry,
    t: &TypeDesc,
    rng: &mut Rng,
    cfg: &GenConfig,
    depth: usize,
) -> Result<Value, TypeError> {
    let name = match t {
        TypeDesc::Record(n) => n.clone(),
        TypeDesc::Abstract(n) => {
            let def = reg.abstract_def(n)?;
            def.subtypes[rng.below(def.subtypes.len())].clone()
        }
        other => unreachable!("build_object on {other}"),
    };
    let def = reg.record(&name)?;
    let mut fields = Vec::with_capacity(def.fields.len());
    for f in &def.fields {
        fields.push((f.name.clone(), construct_at(reg, &f.ty, rng, cfg, depth + 1)?));
    }
    Ok(Value::Rec {
        type_name: name,
        fields,
    })
}

fn random_prim(kind: PrimKind, rng: &mut Rng, cfg: &GenConfig) -> Value {
    match kind {
        PrimKind::Bool => Value::Bool(rng.0.gen()),
        PrimKind::Int32 => {
            let lo = cfg.int_min.max(i32::MIN as i64);
            let hi = cfg.int_max.min(i32::MAX as i64);
            Value::Int32(rng.0.gen_range(lo..=hi) as i32)
        }
        PrimKind::Int64 => Value::Int64(rng.0.gen_range(cfg.int_min..=cfg.int_max)),
        PrimKind::Float64 => Value::Float64(rng.0.gen_range(-cfg.float_abs_max..cfg.float_abs_max)),
        PrimKind::Char => Value::Char(rng.0.gen_range(0x20u16..=0x7e)),
    }
}

fn random_string(rng: &mut Rng, cfg: &GenConfig) -> String {
    let len = rng.0.gen_range(1..=cfg.max_string_len);
    (&mut rng.0)
        .sample_iter(&Alphanumeric)
        .take(len)
        .map(char::from)
        .collect()
}

/// Result of a single mutation: the new value and the chain of the field
/// that was actually changed (empty for a whole-value replacement).
#[derive(Debug, Clone, PartialEq)]
pub struct Mutation {
    pub value: Value,
    pub chain: Chain,
}

const REDRAW_ATTEMPTS: usize = 256;

/// Mutates exactly one leaf of `v`: atomic values are redrawn until they
/// differ, arrays mutate one random element, mutable records mutate one
/// random field, and everything else is cloned.
pub fn mutate(
    reg: &TypeRegistry,
    t: &TypeDesc,
    v: &Value,
    rng: &mut Rng,
    cfg: &GenConfig,
) -> Result<Mutation, TypeError> {
    conforms(reg, t, v)?;
    let mut chain = Vec::new();
    let value = mutate_at(reg, t, v, rng, cfg, 0, &mut chain)?;
    Ok(Mutation { value, chain })
}

fn empty_aggregate(chain: &[String]) -> TypeError {
    TypeError::EmptyAggregate {
        path: render_chain(chain),
    }
}

fn mutate_at(
    reg: &TypeRegistry,
    t: &TypeDesc,
    v: &Value,
    rng: &mut Rng,
    cfg: &GenConfig,
    depth: usize,
    chain: &mut Chain,
) -> Result<Value, TypeError> {
    if v.is_null() {
        return match t {
            TypeDesc::Array(elem) => build_array(reg, elem, rng, cfg, depth),
            _ => build_object(reg, t, rng, cfg, depth),
        };
    }
    match (t, v) {
        (TypeDesc::Prim(PrimKind::Bool), Value::Bool(b)) => Ok(Value::Bool(!b)),
        (TypeDesc::Prim(k), _) => redraw(chain, v, || Ok(random_prim(*k, rng, cfg))),
        (TypeDesc::Str, _) => redraw(chain, v, || Ok(Value::Str(random_string(rng, cfg)))),
        (TypeDesc::Array(elem), Value::Arr { elems, .. }) => {
            let candidates: Vec<usize> = (0..elems.len()).filter(|&i| can_mutate(reg, elem, &elems[i])).collect();
            if candidates.is_empty() {
                return Err(empty_aggregate(chain));
            }
            let pick = candidates[rng.below(candidates.len())];
            let mut out = Vec::with_capacity(elems.len());
            for (i, e) in elems.iter().enumerate() {
                if i == pick {
                    out.push(mutate_at(reg, elem, e, rng, cfg, depth + 1, chain)?);
                } else {
                    out.push(e.clone());
                }
            }
            Ok(Value::array(elem.as_ref().clone(), out))
        }
        (TypeDesc::Record(_) | TypeDesc::Abstract(_), Value::Rec { type_name, fields }) => {
            let def = reg.record(type_name)?;
            if !def.mutable {
                let concrete = TypeDesc::Record(type_name.clone());
                return redraw(chain, v, || build_object(reg, &concrete, rng, cfg, depth));
            }
            let candidates: Vec<usize> = def
                .fields
                .iter()
                .enumerate()
                .filter(|(i, fd)| can_mutate(reg, &fd.ty, &fields[*i].1))
                .map(|(i, _)| i)
                .collect();
            if candidates.is_empty() {
                return Err(empty_aggregate(chain));
            }
            let pick = candidates[rng.below(candidates.len())];
            let mut out = Vec::with_capacity(fields.len());
            for (i, ((name, fv), fd)) in fields.iter().zip(&def.fields).enumerate() {
                if i == pick {
                    chain.push(name.clone());
                    let m = mutate_at(reg, &fd.ty, fv, rng, cfg, depth + 1, chain)?;
                    out.push((name.clone(), m));
                } else {
                    out.push((name.clone(), fv.clone()));
                }
            }
            Ok(Value::Rec {
                type_name: type_name.clone(),
                fields: out,
            })
        }
        _ => Err(TypeError::Conformance {
            path: render_chain(chain),
            expected: t.display_name(),
            found: v.kind_name(),
        }),
    }
}

fn redraw(
    chain: &[String],
    old: &Value,
    mut draw: impl FnMut() -> Result<Value, TypeError>,
) -> Result<Value, TypeError> {
    for _ in 0..REDRAW_ATTEMPTS {
        let fresh = draw()?;
        if &fresh != old {
            return Ok(fresh);
        }
    }
    Err(empty_aggregate(chain))
}

/// Whether `mutate` can change `v` at all.
pub fn can_mutate(reg: &TypeRegistry, t: &TypeDesc, v: &Value) -> bool {
    match v {
        Value::Null => true,
        Value::Arr { elems, .. } => match t {
            TypeDesc::Array(elem) => elems.iter().any(|e| can_mutate(reg, elem, e)),
            _ => false,
        },
        Value::Rec { type_name, fields } => match reg.record(type_name) {
            Ok(def) if !def.mutable => !def.fields.is_empty(),
            Ok(def) => def
                .fields
                .iter()
                .zip(fields)
                .any(|(fd, (_, fv))| can_mutate(reg, &fd.ty, fv)),
            Err(_) => false,
        },
        _ => true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::typesys::ops::diff_paths;
    use crate::typesys::types::{FieldDef, RecordDef};
    use std::collections::BTreeSet;

    fn reg() -> TypeRegistry {
        TypeRegistry::new()
            .with_record(RecordDef::new(
                "Data",
                vec![FieldDef::new("s", TypeDesc::Str), FieldDef::new("t", TypeDesc::Str)],
            ))
            .with_record(RecordDef::new("A", vec![FieldDef::new("a", TypeDesc::Str)]))
            .with_record(RecordDef::new(
                "B",
                vec![FieldDef::new("b", TypeDesc::Prim(PrimKind::Int32))],
            ))
            .with_abstract("AB", &["A", "B"])
            .with_record(RecordDef::new("Empty", vec![]))
    }

    #[test]
    fn bool_mutation_flips() {
        let reg = reg();
        let mut rng = Rng::seeded(7);
        let m = mutate(
            &reg,
            &TypeDesc::Prim(PrimKind::Bool),
            &Value::Bool(true),
            &mut rng,
            &GenConfig::default(),
        )
        .unwrap();
        assert_eq!(m.value, Value::Bool(false));
        assert!(m.chain.is_empty());
    }

    #[test]
    fn record_mutation_changes_exactly_one_field() {
        let reg = reg();
        let t = TypeDesc::record("Data");
        let cfg = GenConfig::default();
        for seed in 0..50 {
            let mut rng = Rng::seeded(seed);
            let v = construct_random(&reg, &t, &mut rng, &cfg).unwrap();
            let m = mutate(&reg, &t, &v, &mut rng, &cfg).unwrap();
            let d = diff_paths(&reg, &t, &v, &m.value, usize::MAX).unwrap();
            assert_eq!(d, BTreeSet::from([m.chain.clone()]));
            assert!(m.chain == ["s"] || m.chain == ["t"]);
        }
    }

    #[test]
    fn array_mutation_preserves_length_and_changes_one_element() {
        let reg = reg();
        let t = TypeDesc::array_of(TypeDesc::Prim(PrimKind::Int32));
        let v = Value::array(TypeDesc::Prim(PrimKind::Int32), (0..5).map(Value::Int32).collect());
        let mut rng = Rng::seeded(3);
        let m = mutate(&reg, &t, &v, &mut rng, &GenConfig::default()).unwrap();
        let (Value::Arr { elems: a, .. }, Value::Arr { elems: b, .. }) = (&v, &m.value) else {
            panic!("not arrays");
        };
        assert_eq!(a.len(), b.len());
        assert_eq!(a.iter().zip(b).filter(|(x, y)| x != y).count(), 1);
    }

    #[test]
    fn empty_aggregates_cannot_mutate() {
        let reg = reg();
        let mut rng = Rng::seeded(1);
        let cfg = GenConfig::default();
        let arr = Value::array(TypeDesc::Str, vec![]);
        let err = mutate(&reg, &TypeDesc::array_of(TypeDesc::Str), &arr, &mut rng, &cfg);
        assert!(matches!(err, Err(TypeError::EmptyAggregate { .. })));
        let empty = Value::record("Empty", vec![]);
        let err = mutate(&reg, &TypeDesc::record("Empty"), &empty, &mut rng, &cfg);
        assert!(matches!(err, Err(TypeError::EmptyAggregate { .. })));
    }

    #[test]
    fn null_mutates_into_an_object() {
        let reg = reg();
        let mut rng = Rng::seeded(9);
        let m = mutate(
            &reg,
            &TypeDesc::record("Data"),
            &Value::Null,
            &mut rng,
            &GenConfig::default(),
        )
        .unwrap();
        assert!(!m.value.is_null());
        assert!(m.chain.is_empty());
    }

    #[test]
    fn depth_cutoff_emits_null_and_empty_arrays() {
        let reg = TypeRegistry::new().with_record(RecordDef::new(
            "Node",
            vec![
                FieldDef::new("kids", TypeDesc::array_of(TypeDesc::record("Node"))),
                FieldDef::new("v", TypeDesc::Prim(PrimKind::Int32)),
            ],
        ));
        let cfg = GenConfig {
            max_depth: 1,
            ..GenConfig::default()
        };
        let mut rng = Rng::seeded(5);
        let v = construct_random(&reg, &TypeDesc::record("Node"), &mut rng, &cfg).unwrap();
        match v.field("kids") {
            Some(Value::Arr { elems, .. }) => assert!(elems.is_empty()),
            other => panic!("unexpected {other:?}"),
        }
        let cfg0 = GenConfig {
            max_depth: 2,
            ..GenConfig::default()
        };
        let v = construct_random(&reg, &TypeDesc::record("Node"), &mut rng, &cfg0).unwrap();
        match v.field("kids") {
            Some(Value::Arr { elems, .. }) => {
                assert!(!elems.is_empty());
                assert!(elems.iter().all(Value::is_null));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn abstract_instantiates_every_subtype() {
        let reg = reg();
        let t = TypeDesc::Abstract("AB".into());
        let cfg = GenConfig::default();
        let mut seen = BTreeSet::new();
        for seed in 0..10_000 {
            let mut rng = Rng::seeded(seed);
            match construct_random(&reg, &t, &mut rng, &cfg).unwrap() {
                Value::Rec { type_name, .. } => {
                    seen.insert(type_name);
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        assert_eq!(seen, BTreeSet::from(["A".to_string(), "B".to_string()]));
    }

    #[test]
    fn unknown_type_rejected() {
        let reg = reg();
        let err = construct_random(
            &reg,
            &TypeDesc::record("Nope"),
            &mut Rng::seeded(0),
            &GenConfig::default(),
        );
        assert_eq!(err, Err(TypeError::UnknownType("Nope".into())));
    }

    #[test]
    fn derive_is_deterministic_and_key_sensitive() {
        let a: Vec<u64> = (0..4).map(|_| Rng::derive(1, &[2, 3]).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(Rng::derive(1, &[2, 3]).next_u64(), Rng::derive(1, &[3, 2]).next_u64());
    }
}
