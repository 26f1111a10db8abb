use super::types::{PrimKind, TypeDesc, TypeError, TypeRegistry};

/// A concrete runtime value tree mirroring a [`TypeDesc`].
///
/// Equality is deep and compares floats bitwise, so `NaN == NaN` when the
/// payloads match and `0.0 != -0.0`.
#[derive(Debug, Clone)]
pub enum Value {
    Bool(bool),
    Int32(i32),
    Int64(i64),
    Float64(f64),
    /// UTF-16 code unit.
    Char(u16),
    Str(String),
    Arr {
        elem_type: TypeDesc,
        elems: Vec<Value>,
    },
    Rec {
        type_name: String,
        fields: Vec<(String, Value)>,
    },
    Null,
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        use Value::*;
        match (self, other) {
            (Bool(a), Bool(b)) => a == b,
            (Int32(a), Int32(b)) => a == b,
            (Int64(a), Int64(b)) => a == b,
            (Float64(a), Float64(b)) => a.to_bits() == b.to_bits(),
            (Char(a), Char(b)) => a == b,
            (Str(a), Str(b)) => a == b,
            (
                Arr {
                    elem_type: ta,
                    elems: ea,
                },
                Arr {
                    elem_type: tb,
                    elems: eb,
                },
            ) => ta == tb && ea.len() == eb.len() && ea.iter().zip(eb).all(|(x, y)| x == y),
            (
                Rec {
                    type_name: na,
                    fields: fa,
                },
                Rec {
                    type_name: nb,
                    fields: fb,
                },
            ) => na == nb && fa.len() == fb.len() && fa.iter().zip(fb).all(|((ka, va), (kb, vb))| ka == kb && va == vb),
            (Null, Null) => true,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl Value {
    pub fn str(s: impl Into<String>) -> Value {
        Value::Str(s.into())
    }

    pub fn record(type_name: impl Into<String>, fields: Vec<(&str, Value)>) -> Value {
        Value::Rec {
            type_name: type_name.into(),
            fields: fields.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    pub fn array(elem_type: TypeDesc, elems: Vec<Value>) -> Value {
        Value::Arr { elem_type, elems }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn field(&self, name: &str) -> Option<&Value> {
        match self {
            Value::Rec { fields, .. } => fields.iter().find(|(k, _)| k == name).map(|(_, v)| v),
            _ => None,
        }
    }

    pub fn field_mut(&mut self, name: &str) -> Option<&mut Value> {
        match self {
            Value::Rec { fields, .. } => fields.iter_mut().find(|(k, _)| k == name).map(|(_, v)| v),
            _ => None,
        }
    }

    /// Short description of the value's shape, for error messages.
    pub fn kind_name(&self) -> String {
        match self {
            Value::Bool(_) => "bool".into(),
            Value::Int32(_) => "int32".into(),
            Value::Int64(_) => "int64".into(),
            Value::Float64(_) => "float64".into(),
            Value::Char(_) => "char".into(),
            Value::Str(_) => "string".into(),
            Value::Arr { elem_type, .. } => format!("{}[]", elem_type.display_name()),
            Value::Rec { type_name, .. } => type_name.clone(),
            Value::Null => "null".into(),
        }
    }

    pub fn prim_kind(&self) -> Option<PrimKind> {
        match self {
            Value::Bool(_) => Some(PrimKind::Bool),
            Value::Int32(_) => Some(PrimKind::Int32),
            Value::Int64(_) => Some(PrimKind::Int64),
            Value::Float64(_) => Some(PrimKind::Float64),
            Value::Char(_) => Some(PrimKind::Char),
            _ => None,
        }
    }
}

pub(crate) fn render_chain(chain: &[String]) -> String {
    if chain.is_empty() {
        "<root>".to_string()
    } else {
        chain.join(".")
    }
}

fn mismatch(chain: &[String], expected: &TypeDesc, v: &Value) -> TypeError {
    TypeError::Conformance {
        path: render_chain(chain),
        expected: expected.display_name(),
        found: v.kind_name(),
    }
}

/// Checks that `v` has the shape of `t`. Null is accepted only at record,
/// abstract and array positions.
pub fn conforms(reg: &TypeRegistry, t: &TypeDesc, v: &Value) -> Result<(), TypeError> {
    let mut chain = Vec::new();
    conforms_at(reg, t, v, &mut chain)
}

fn conforms_at(reg: &TypeRegistry, t: &TypeDesc, v: &Value, chain: &mut Vec<String>) -> Result<(), TypeError> {
    match (t, v) {
        (TypeDesc::Prim(k), _) => {
            if v.prim_kind() == Some(*k) {
                Ok(())
            } else {
                Err(mismatch(chain, t, v))
            }
        }
        (TypeDesc::Str, Value::Str(_)) => Ok(()),
        (TypeDesc::Array(_) | TypeDesc::Record(_) | TypeDesc::Abstract(_), Value::Null) => reg.check_type(t),
        (TypeDesc::Array(elem), Value::Arr { elem_type, elems }) => {
            if elem.as_ref() != elem_type {
                return Err(mismatch(chain, t, v));
            }
            for e in elems {
                conforms_at(reg, elem, e, chain)?;
            }
            Ok(())
        }
        (TypeDesc::Record(name), Value::Rec { type_name, fields }) => {
            if name != type_name {
                return Err(mismatch(chain, t, v));
            }
            conforms_record(reg, type_name, fields, chain)
        }
        (TypeDesc::Abstract(name), Value::Rec { type_name, fields }) => {
            let def = reg.abstract_def(name)?;
            if !def.subtypes.iter().any(|s| s == type_name) {
                return Err(mismatch(chain, t, v));
            }
            conforms_record(reg, type_name, fields, chain)
        }
        _ => Err(mismatch(chain, t, v)),
    }
}

fn conforms_record(
    reg: &TypeRegistry,
    type_name: &str,
    fields: &[(String, Value)],
    chain: &mut Vec<String>,
) -> Result<(), TypeError> {
    let def = reg.record(type_name)?;
    if def.fields.len() != fields.len() {
        return Err(TypeError::Conformance {
            path: render_chain(chain),
            expected: format!("{} fields", def.fields.len()),
            found: format!("{} fields", fields.len()),
        });
    }
    for (fd, (name, fv)) in def.fields.iter().zip(fields) {
        if &fd.name != name {
            return Err(TypeError::Conformance {
                path: render_chain(chain),
                expected: format!("field `{}`", fd.name),
                found: format!("field `{name}`"),
            });
        }
        chain.push(name.clone());
        conforms_at(reg, &fd.ty, fv, chain)?;
        chain.pop();
    }
    Ok(())
}
