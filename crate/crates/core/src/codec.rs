//! Canonical JSON encoding for types and values, plus the length-prefixed
//! framing shared by every executor transport.
//!
//! Values are tagged by `kind`. `int64` payloads are decimal strings and
//! `float64` payloads are IEEE-754 hex literals (`0x1.8p+1`), so every value
//! round-trips bit-exactly.

use std::io::{self, Read, Write};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value as Json};
use thiserror::Error;

use crate::typesys::{AbstractDef, FieldDef, PrimKind, RecordDef, TypeDesc, TypeRegistry, Value};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
    #[error("frame error: {0}")]
    Frame(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn malformed(what: &'static str, detail: impl Into<String>) -> CodecError {
    CodecError::Malformed {
        what,
        detail: detail.into(),
    }
}

fn field<'a>(obj: &'a Map<String, Json>, key: &str, what: &'static str) -> Result<&'a Json, CodecError> {
    obj.get(key).ok_or_else(|| malformed(what, format!("missing `{key}`")))
}

fn str_field<'a>(obj: &'a Map<String, Json>, key: &str, what: &'static str) -> Result<&'a str, CodecError> {
    field(obj, key, what)?
        .as_str()
        .ok_or_else(|| malformed(what, format!("`{key}` must be a string")))
}

fn as_object<'a>(j: &'a Json, what: &'static str) -> Result<&'a Map<String, Json>, CodecError> {
    j.as_object().ok_or_else(|| malformed(what, "expected an object"))
}

pub fn type_to_json(t: &TypeDesc) -> Json {
    match t {
        TypeDesc::Prim(k) => json!({ "kind": k.tag() }),
        TypeDesc::Str => json!({ "kind": "string" }),
        TypeDesc::Array(elem) => json!({ "kind": "array", "elem": type_to_json(elem) }),
        TypeDesc::Record(n) => json!({ "kind": "record", "type": n }),
        TypeDesc::Abstract(n) => json!({ "kind": "abstract", "type": n }),
    }
}

pub fn type_from_json(j: &Json) -> Result<TypeDesc, CodecError> {
    let obj = as_object(j, "type")?;
    let kind = str_field(obj, "kind", "type")?;
    if let Some(k) = PrimKind::from_tag(kind) {
        return Ok(TypeDesc::Prim(k));
    }
    match kind {
        "string" => Ok(TypeDesc::Str),
        "array" => Ok(TypeDesc::array_of(type_from_json(field(obj, "elem", "type")?)?)),
        "record" => Ok(TypeDesc::Record(str_field(obj, "type", "type")?.to_string())),
        "abstract" => Ok(TypeDesc::Abstract(str_field(obj, "type", "type")?.to_string())),
        other => Err(malformed("type", format!("unknown kind `{other}`"))),
    }
}

pub fn value_to_json(v: &Value) -> Json {
    match v {
        Value::Bool(b) => json!({ "kind": "bool", "value": b }),
        Value::Int32(i) => json!({ "kind": "int32", "value": i }),
        Value::Int64(i) => json!({ "kind": "int64", "value": i.to_string() }),
        Value::Float64(f) => json!({ "kind": "float64", "value": format_hex_f64(*f) }),
        Value::Char(c) => json!({ "kind": "char", "value": c }),
        Value::Str(s) => json!({ "kind": "string", "value": s }),
        Value::Arr { elem_type, elems } => json!({
            "kind": "array",
            "elem_type": type_to_json(elem_type),
            "elems": elems.iter().map(value_to_json).collect::<Vec<_>>(),
        }),
        Value::Rec { type_name, fields } => {
            let mut m = Map::new();
            for (k, fv) in fields {
                m.insert(k.clone(), value_to_json(fv));
            }
            json!({ "kind": "record", "type": type_name, "fields": m })
        }
        Value::Null => json!({ "kind": "null" }),
    }
}

pub fn value_from_json(j: &Json) -> Result<Value, CodecError> {
    let obj = as_object(j, "value")?;
    let kind = str_field(obj, "kind", "value")?;
    let payload = || field(obj, "value", "value");
    Ok(match kind {
        "bool" => Value::Bool(payload()?.as_bool().ok_or_else(|| malformed("value", "bool payload"))?),
        "int32" => {
            let n = payload()?.as_i64().ok_or_else(|| malformed("value", "int32 payload"))?;
            Value::Int32(i32::try_from(n).map_err(|_| malformed("value", "int32 out of range"))?)
        }
        "int64" => {
            let s = payload()?
                .as_str()
                .ok_or_else(|| malformed("value", "int64 payload must be a decimal string"))?;
            Value::Int64(s.parse().map_err(|_| malformed("value", format!("bad int64 `{s}`")))?)
        }
        "float64" => {
            let s = payload()?
                .as_str()
                .ok_or_else(|| malformed("value", "float64 payload must be a hex literal"))?;
            Value::Float64(parse_hex_f64(s)?)
        }
        "char" => {
            let n = payload()?.as_u64().ok_or_else(|| malformed("value", "char payload"))?;
            Value::Char(u16::try_from(n).map_err(|_| malformed("value", "char out of range"))?)
        }
        "string" => Value::Str(
            payload()?
                .as_str()
                .ok_or_else(|| malformed("value", "string payload"))?
                .to_string(),
        ),
        "array" => {
            let elem_type = type_from_json(field(obj, "elem_type", "value")?)?;
            let elems = field(obj, "elems", "value")?
                .as_array()
                .ok_or_else(|| malformed("value", "`elems` must be a list"))?
                .iter()
                .map(value_from_json)
                .collect::<Result<Vec<_>, _>>()?;
            Value::Arr { elem_type, elems }
        }
        "record" => {
            let type_name = str_field(obj, "type", "value")?.to_string();
            let fields = as_object(field(obj, "fields", "value")?, "record fields")?
                .iter()
                .map(|(k, fv)| Ok((k.clone(), value_from_json(fv)?)))
                .collect::<Result<Vec<_>, CodecError>>()?;
            Value::Rec { type_name, fields }
        }
        "null" => Value::Null,
        other => return Err(malformed("value", format!("unknown kind `{other}`"))),
    })
}

pub fn registry_to_json(reg: &TypeRegistry) -> Json {
    let records: Vec<Json> = reg
        .records()
        .map(|r| {
            json!({
                "name": r.name,
                "mutable": r.mutable,
                "fields": r.fields.iter().map(|f| json!({
                    "name": f.name,
                    "type": type_to_json(&f.ty),
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    let abstracts: Vec<Json> = reg
        .abstracts()
        .map(|a| json!({ "name": a.name, "subtypes": a.subtypes }))
        .collect();
    json!({ "records": records, "abstracts": abstracts })
}

pub fn registry_from_json(j: &Json) -> Result<TypeRegistry, CodecError> {
    let obj = as_object(j, "type registry")?;
    let mut reg = TypeRegistry::new();
    if let Some(records) = obj.get("records") {
        for r in records
            .as_array()
            .ok_or_else(|| malformed("type registry", "`records` must be a list"))?
        {
            let ro = as_object(r, "record")?;
            let name = str_field(ro, "name", "record")?;
            let mutable = ro.get("mutable").and_then(Json::as_bool).unwrap_or(true);
            let mut fields = Vec::new();
            for f in field(ro, "fields", "record")?
                .as_array()
                .ok_or_else(|| malformed("record", "`fields` must be a list"))?
            {
                let fo = as_object(f, "field")?;
                fields.push(FieldDef::new(
                    str_field(fo, "name", "field")?,
                    type_from_json(field(fo, "type", "field")?)?,
                ));
            }
            let mut def = RecordDef::new(name, fields);
            def.mutable = mutable;
            reg.add_record(def);
        }
    }
    if let Some(abstracts) = obj.get("abstracts") {
        for a in abstracts
            .as_array()
            .ok_or_else(|| malformed("type registry", "`abstracts` must be a list"))?
        {
            let ao = as_object(a, "abstract")?;
            let subtypes = field(ao, "subtypes", "abstract")?
                .as_array()
                .ok_or_else(|| malformed("abstract", "`subtypes` must be a list"))?
                .iter()
                .map(|s| {
                    s.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| malformed("abstract", "subtype names must be strings"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            reg.add_abstract(AbstractDef {
                name: str_field(ao, "name", "abstract")?.to_string(),
                subtypes,
            });
        }
    }
    Ok(reg)
}

macro_rules! json_serde {
    ($ty:ty, $to:ident, $from:ident) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                $to(self).serialize(s)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let j = Json::deserialize(d)?;
                $from(&j).map_err(D::Error::custom)
            }
        }
    };
}

json_serde!(TypeDesc, type_to_json, type_from_json);
json_serde!(Value, value_to_json, value_from_json);
json_serde!(TypeRegistry, registry_to_json, registry_from_json);

impl Serialize for PrimKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.tag())
    }
}

impl<'de> Deserialize<'de> for PrimKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let tag = String::deserialize(d)?;
        PrimKind::from_tag(&tag).ok_or_else(|| D::Error::custom(format!("unknown primitive `{tag}`")))
    }
}

const FRAC_BITS: u32 = 52;
const FRAC_MASK: u64 = (1 << FRAC_BITS) - 1;
const CANONICAL_NAN: u64 = 0x7ff8_0000_0000_0000;

/// Formats `f` as a C99-style hex float literal. NaNs with a non-canonical
/// payload carry their raw bits: `nan(0x7ff0000000000001)`.
pub fn format_hex_f64(f: f64) -> String {
    let bits = f.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> FRAC_BITS) & 0x7ff) as i32;
    let frac = bits & FRAC_MASK;
    if exp == 0x7ff {
        if frac == 0 {
            return format!("{sign}inf");
        }
        if bits == CANONICAL_NAN {
            return "nan".to_string();
        }
        return format!("nan(0x{bits:016x})");
    }
    let digits = format!("{frac:013x}");
    let digits = digits.trim_end_matches('0');
    let dot = if digits.is_empty() { "" } else { "." };
    match (exp, frac) {
        (0, 0) => format!("{sign}0x0p+0"),
        (0, _) => format!("{sign}0x0{dot}{digits}p-1022"),
        _ => format!("{sign}0x1{dot}{digits}p{:+}", exp - 1023),
    }
}

/// Parses the literals produced by [`format_hex_f64`].
pub fn parse_hex_f64(s: &str) -> Result<f64, CodecError> {
    let bad = || malformed("float64", format!("`{s}` is not a canonical hex float"));
    if s == "nan" {
        return Ok(f64::from_bits(CANONICAL_NAN));
    }
    if let Some(inner) = s.strip_prefix("nan(0x").and_then(|r| r.strip_suffix(')')) {
        let bits = u64::from_str_radix(inner, 16).map_err(|_| bad())?;
        let f = f64::from_bits(bits);
        return if f.is_nan() { Ok(f) } else { Err(bad()) };
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let sign_bit = if neg { 1u64 << 63 } else { 0 };
    if body == "inf" {
        return Ok(f64::from_bits(sign_bit | (0x7ffu64 << FRAC_BITS)));
    }
    let body = body.strip_prefix("0x").ok_or_else(bad)?;
    let (mantissa, exp) = body.split_once('p').ok_or_else(bad)?;
    let exp: i32 = exp.parse().map_err(|_| bad())?;
    let (lead, digits) = match mantissa.split_once('.') {
        Some((l, d)) if !d.is_empty() => (l, d),
        Some(_) => return Err(bad()),
        None => (mantissa, ""),
    };
    if digits.len() > 13 || !digits.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(bad());
    }
    let frac = if digits.is_empty() {
        0
    } else {
        u64::from_str_radix(digits, 16).map_err(|_| bad())? << (4 * (13 - digits.len()))
    };
    let bits = match lead {
        "1" if (-1022..=1023).contains(&exp) => ((exp + 1023) as u64) << FRAC_BITS | frac,
        "0" if frac == 0 => 0,
        "0" if exp == -1022 => frac,
        _ => return Err(bad()),
    };
    Ok(f64::from_bits(sign_bit | bits))
}

/// Prefixes `payload` with its length as a 4-byte little-endian integer.
pub fn frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 4);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// Strips the length prefix from a complete frame.
pub fn unframe(bytes: &[u8]) -> Result<&[u8], CodecError> {
    if bytes.len() < 4 {
        return Err(CodecError::Frame("frame shorter than its header".into()));
    }
    let len = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    let body = &bytes[4..];
    if body.len() != len {
        return Err(CodecError::Frame(format!(
            "header announces {len} bytes, frame carries {}",
            body.len()
        )));
    }
    Ok(body)
}

pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    w.write_all(&(payload.len() as u32).to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Vec<u8>>, CodecError> {
    let mut header = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut header[filled..])? {
            0 if filled == 0 => return Ok(None),
            0 => return Err(CodecError::Frame("truncated frame header".into())),
            n => filled += n,
        }
    }
    let len = u32::from_le_bytes(header) as usize;
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)
        .map_err(|e| CodecError::Frame(format!("truncated frame body: {e}")))?;
    Ok(Some(body))
}
