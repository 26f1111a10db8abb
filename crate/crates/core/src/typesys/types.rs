use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

/// Errors raised by type and value operations.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("value at `{path}` does not conform: expected {expected}, found {found}")]
    Conformance {
        path: String,
        expected: String,
        found: String,
    },
    #[error("nothing to mutate at `{path}` (empty aggregate)")]
    EmptyAggregate { path: String },
    #[error("invalid type registry: {0}")]
    InvalidRegistry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PrimKind {
    Bool,
    Int32,
    Int64,
    Float64,
    Char,
}

impl PrimKind {
    pub const ALL: [PrimKind; 5] = [
        PrimKind::Bool,
        PrimKind::Int32,
        PrimKind::Int64,
        PrimKind::Float64,
        PrimKind::Char,
    ];

    /// Wire tag used by the canonical JSON encoding.
    pub fn tag(self) -> &'static str {
        match self {
            PrimKind::Bool => "bool",
            PrimKind::Int32 => "int32",
            PrimKind::Int64 => "int64",
            PrimKind::Float64 => "float64",
            PrimKind::Char => "char",
        }
    }

    pub fn from_tag(tag: &str) -> Option<PrimKind> {
        PrimKind::ALL.into_iter().find(|k| k.tag() == tag)
    }

    /// Boxed-type name used when printing dependency paths (`Boolean@2`).
    pub fn boxed_name(self) -> &'static str {
        match self {
            PrimKind::Bool => "Boolean",
            PrimKind::Int32 => "Integer",
            PrimKind::Int64 => "Long",
            PrimKind::Float64 => "Double",
            PrimKind::Char => "Character",
        }
    }
}

/// Description of a value's type. Records and abstract types are referenced
/// by name and resolved through a [`TypeRegistry`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TypeDesc {
    Prim(PrimKind),
    Str,
    Array(Box<TypeDesc>),
    Record(String),
    Abstract(String),
}

impl TypeDesc {
    pub fn array_of(elem: TypeDesc) -> TypeDesc {
        TypeDesc::Array(Box::new(elem))
    }

    pub fn record(name: impl Into<String>) -> TypeDesc {
        TypeDesc::Record(name.into())
    }

    pub fn is_primitive(&self) -> bool {
        matches!(self, TypeDesc::Prim(_))
    }

    /// Name used in field paths: boxed names for primitives, `String`,
    /// `T[]` for arrays, and the declared name for records.
    pub fn display_name(&self) -> String {
        match self {
            TypeDesc::Prim(k) => k.boxed_name().to_string(),
            TypeDesc::Str => "String".to_string(),
            TypeDesc::Array(elem) => format!("{}[]", elem.display_name()),
            TypeDesc::Record(n) | TypeDesc::Abstract(n) => n.clone(),
        }
    }
}

impl fmt::Display for TypeDesc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDef {
    pub name: String,
    pub ty: TypeDesc,
}

impl FieldDef {
    pub fn new(name: impl Into<String>, ty: TypeDesc) -> Self {
        FieldDef { name: name.into(), ty }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordDef {
    pub name: String,
    pub fields: Vec<FieldDef>,
    /// Immutable records behave like strings: mutation redraws the whole value.
    pub mutable: bool,
}

impl RecordDef {
    pub fn new(name: impl Into<String>, fields: Vec<FieldDef>) -> Self {
        RecordDef {
            name: name.into(),
            fields,
            mutable: true,
        }
    }

    pub fn immutable(mut self) -> Self {
        self.mutable = false;
        self
    }

    pub fn field(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractDef {
    pub name: String,
    pub subtypes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TypeDef {
    Record(RecordDef),
    Abstract(AbstractDef),
}

/// All named record and abstract types known to an analysis.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypeRegistry {
    defs: BTreeMap<String, TypeDef>,
}

impl TypeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_record(mut self, def: RecordDef) -> Self {
        self.add_record(def);
        self
    }

    pub fn with_abstract(mut self, name: impl Into<String>, subtypes: &[&str]) -> Self {
        let name = name.into();
        self.defs.insert(
            name.clone(),
            TypeDef::Abstract(AbstractDef {
                name,
                subtypes: subtypes.iter().map(|s| s.to_string()).collect(),
            }),
        );
        self
    }

    pub fn add_record(&mut self, def: RecordDef) {
        self.defs.insert(def.name.clone(), TypeDef::Record(def));
    }

    pub fn add_abstract(&mut self, def: AbstractDef) {
        self.defs.insert(def.name.clone(), TypeDef::Abstract(def));
    }

    pub fn get(&self, name: &str) -> Option<&TypeDef> {
        self.defs.get(name)
    }

    pub fn record(&self, name: &str) -> Result<&RecordDef, TypeError> {
        match self.defs.get(name) {
            Some(TypeDef::Record(r)) => Ok(r),
            _ => Err(TypeError::UnknownType(name.to_string())),
        }
    }

    pub fn abstract_def(&self, name: &str) -> Result<&AbstractDef, TypeError> {
        match self.defs.get(name) {
            Some(TypeDef::Abstract(a)) => Ok(a),
            _ => Err(TypeError::UnknownType(name.to_string())),
        }
    }

    pub fn records(&self) -> impl Iterator<Item = &RecordDef> {
        self.defs.values().filter_map(|d| match d {
            TypeDef::Record(r) => Some(r),
            TypeDef::Abstract(_) => None,
        })
    }

    pub fn abstracts(&self) -> impl Iterator<Item = &AbstractDef> {
        self.defs.values().filter_map(|d| match d {
            TypeDef::Abstract(a) => Some(a),
            TypeDef::Record(_) => None,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    /// Merges `other` into `self`. Conflicting definitions under the same
    /// name are rejected.
    pub fn merge(&mut self, other: &TypeRegistry) -> Result<(), TypeError> {
        for (name, def) in &other.defs {
            match self.defs.get(name) {
                Some(existing) if existing != def => {
                    return Err(TypeError::InvalidRegistry(format!(
                        "conflicting definitions for `{name}`"
                    )))
                }
                Some(_) => {}
                None => {
                    self.defs.insert(name.clone(), def.clone());
                }
            }
        }
        Ok(())
    }

    /// Checks that `t` only names registered types.
    pub fn check_type(&self, t: &TypeDesc) -> Result<(), TypeError> {
        match t {
            TypeDesc::Prim(_) | TypeDesc::Str => Ok(()),
            TypeDesc::Array(elem) => self.check_type(elem),
            TypeDesc::Record(n) => self.record(n).map(|_| ()),
            TypeDesc::Abstract(n) => self.abstract_def(n).map(|_| ()),
        }
    }

    /// Whether `t` is mutable in the sense of Algorithm-1 style mutation:
    /// primitives, strings and immutable records are redrawn whole.
    pub fn is_atomic(&self, t: &TypeDesc) -> bool {
        match t {
            TypeDesc::Prim(_) | TypeDesc::Str => true,
            TypeDesc::Record(n) => self.record(n).map(|r| !r.mutable).unwrap_or(false),
            TypeDesc::Array(_) | TypeDesc::Abstract(_) => false,
        }
    }

    /// Validates registry invariants: unique field names, non-empty
    /// abstract subtypes naming records, closure under reference, and no
    /// record cycles except through arrays or abstract types.
    pub fn validate(&self) -> Result<(), TypeError> {
        for def in self.defs.values() {
            match def {
                TypeDef::Record(r) => {
                    let mut seen = BTreeSet::new();
                    for f in &r.fields {
                        if !seen.insert(f.name.as_str()) {
                            return Err(TypeError::InvalidRegistry(format!(
                                "duplicate field `{}` in record `{}`",
                                f.name, r.name
                            )));
                        }
                        self.check_type(&f.ty)?;
                    }
                }
                TypeDef::Abstract(a) => {
                    if a.subtypes.is_empty() {
                        return Err(TypeError::InvalidRegistry(format!(
                            "abstract type `{}` has no subtypes",
                            a.name
                        )));
                    }
                    for s in &a.subtypes {
                        self.record(s)?;
                    }
                }
            }
        }
        // Direct record-to-record containment must be acyclic.
        let mut state: BTreeMap<&str, u8> = BTreeMap::new();
        for r in self.records() {
            self.visit_direct(&r.name, &mut state)?;
        }
        Ok(())
    }

    fn visit_direct<'a>(&'a self, name: &'a str, state: &mut BTreeMap<&'a str, u8>) -> Result<(), TypeError> {
        match state.get(name) {
            Some(2) => return Ok(()),
            Some(1) => {
                return Err(TypeError::InvalidRegistry(format!(
                    "record `{name}` contains itself without array or abstract indirection"
                )))
            }
            _ => {}
        }
        state.insert(name, 1);
        let r = self.record(name)?;
        for f in &r.fields {
            if let TypeDesc::Record(inner) = &f.ty {
                self.visit_direct(inner, state)?;
            }
        }
        state.insert(name, 2);
        Ok(())
    }
}

/// Abstract types resolve to their declared concrete subtypes; every other
/// type resolves to itself.
pub fn resolve_concrete(t: &TypeDesc, reg: &TypeRegistry) -> Result<Vec<TypeDesc>, TypeError> {
    match t {
        TypeDesc::Abstract(name) => {
            let def = reg.abstract_def(name)?;
            def.subtypes
                .iter()
                .map(|s| reg.record(s).map(|r| TypeDesc::Record(r.name.clone())))
                .collect()
        }
        other => {
            reg.check_type(other)?;
            Ok(vec![other.clone()])
        }
    }
}
