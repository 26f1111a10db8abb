use std::collections::BTreeSet;

use super::types::{TypeDesc, TypeError, TypeRegistry};
use super::value::{conforms, Value};

/// A field chain relative to an argument slot, e.g. `["ev", "s"]`.
/// Array elements contribute no component.
pub type Chain = Vec<String>;

/// Deep clone. The result shares nothing with `v`.
pub fn clone_value(reg: &TypeRegistry, t: &TypeDesc, v: &Value) -> Result<Value, TypeError> {
    conforms(reg, t, v)?;
    Ok(v.clone())
}

/// Deep comparison; arrays of different lengths are unequal and floats are
/// compared bitwise.
pub fn cmp(reg: &TypeRegistry, t: &TypeDesc, a: &Value, b: &Value) -> Result<bool, TypeError> {
    conforms(reg, t, a)?;
    conforms(reg, t, b)?;
    Ok(a == b)
}

/// Field chains (truncated to `max_depth` components) at which `a` and `b`
/// differ. Empty exactly when the values are equal.
pub fn diff_paths(
    reg: &TypeRegistry,
    t: &TypeDesc,
    a: &Value,
    b: &Value,
    max_depth: usize,
) -> Result<BTreeSet<Chain>, TypeError> {
    conforms(reg, t, a)?;
    conforms(reg, t, b)?;
    let mut out = BTreeSet::new();
    let mut prefix = Vec::new();
    diff_into(reg, a, b, max_depth, &mut prefix, &mut out);
    Ok(out)
}

fn diff_into(
    reg: &TypeRegistry,
    a: &Value,
    b: &Value,
    max_depth: usize,
    prefix: &mut Chain,
    out: &mut BTreeSet<Chain>,
) {
    if a == b {
        return;
    }
    match (a, b) {
        (Value::Arr { elems: ea, .. }, Value::Arr { elems: eb, .. }) if ea.len() == eb.len() => {
            for (x, y) in ea.iter().zip(eb) {
                diff_into(reg, x, y, max_depth, prefix, out);
            }
        }
        (
            Value::Rec {
                type_name: na,
                fields: fa,
            },
            Value::Rec {
                type_name: nb,
                fields: fb,
            },
        ) if na == nb && prefix.len() < max_depth && reg.record(na).map(|r| r.mutable).unwrap_or(false) => {
            for ((name, x), (_, y)) in fa.iter().zip(fb) {
                prefix.push(name.clone());
                diff_into(reg, x, y, max_depth, prefix, out);
                prefix.pop();
            }
        }
        _ => {
            out.insert(prefix.clone());
        }
    }
}
