//! Taint stubs: summaries of what a native function does to taint.
//!
//! A stub is a short list of [`StubOp`]s over [`FieldPath`]s. The taint
//! analyzer interprets it at every call of the native function instead of
//! looking into the native body.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depgen::{DependencyRelation, Edge, FieldPath, Marker, Slot};
use crate::executor::FunctionSig;
use crate::typesys::{PrimKind, TypeDesc, TypeRegistry};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StubError {
    #[error("path `{path}` does not exist in the signature of `{function}`: {detail}")]
    PathType {
        function: String,
        path: String,
        detail: String,
    },
    #[error("relation is for `{found}`, signature is `{expected}`")]
    FunctionMismatch { expected: String, found: String },
    #[error("malformed stub document: {0}")]
    Document(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum StubOp {
    /// `out = in`, for compatible types. Primitive pairs carry the target
    /// kind as a cast.
    AssignFlow {
        out: FieldPath,
        #[serde(rename = "in")]
        inp: FieldPath,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cast: Option<PrimKind>,
    },
    /// Join the taint of `in` into the taint cell of the object at `out`.
    AddTaint {
        out: FieldPath,
        #[serde(rename = "in")]
        inp: FieldPath,
    },
    /// Read the taint cell of the object at `in` into the primitive `out`.
    GetTaintAssign {
        out: FieldPath,
        #[serde(rename = "in")]
        inp: FieldPath,
        #[serde(rename = "as")]
        kind: PrimKind,
    },
    /// `out = in_1 ⊕ … ⊕ in_n` over primitive inputs; ⊕ joins taint.
    SumAssign { out: FieldPath, ins: Vec<FieldPath> },
    /// Fresh taint labelled `label` on `out`.
    TaintGen { out: FieldPath, label: String },
}

impl StubOp {
    pub fn out(&self) -> &FieldPath {
        match self {
            StubOp::AssignFlow { out, .. }
            | StubOp::AddTaint { out, .. }
            | StubOp::GetTaintAssign { out, .. }
            | StubOp::SumAssign { out, .. }
            | StubOp::TaintGen { out, .. } => out,
        }
    }

    pub fn inputs(&self) -> Vec<&FieldPath> {
        match self {
            StubOp::AssignFlow { inp, .. } | StubOp::AddTaint { inp, .. } | StubOp::GetTaintAssign { inp, .. } => {
                vec![inp]
            }
            StubOp::SumAssign { ins, .. } => ins.iter().collect(),
            StubOp::TaintGen { .. } => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StubKind {
    Normal,
    Empty,
    TaintSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stub {
    pub function: String,
    pub kind: StubKind,
    pub ops: Vec<StubOp>,
}

impl Stub {
    pub fn empty(function: impl Into<String>) -> Self {
        Stub {
            function: function.into(),
            kind: StubKind::Empty,
            ops: Vec::new(),
        }
    }

    pub fn check(&self) -> Result<(), StubError> {
        match self.kind {
            StubKind::Empty if !self.ops.is_empty() => Err(StubError::Document(format!(
                "empty stub `{}` has operations",
                self.function
            ))),
            StubKind::TaintSource if !self.ops.iter().any(|o| matches!(o, StubOp::TaintGen { .. })) => Err(
                StubError::Document(format!("taint source stub `{}` generates no taint", self.function)),
            ),
            _ => Ok(()),
        }
    }

    /// Adds `other`'s operations (skipping duplicates). Generated taint makes
    /// the result a taint source.
    pub fn merge(&mut self, other: &Stub) {
        for op in &other.ops {
            if !self.ops.contains(op) {
                self.ops.push(op.clone());
            }
        }
        if self.ops.iter().any(|o| matches!(o, StubOp::TaintGen { .. })) {
            self.kind = StubKind::TaintSource;
        } else if !self.ops.is_empty() {
            self.kind = StubKind::Normal;
        }
    }
}

/// Type of the value a path names. Chains step through arrays implicitly,
/// since paths carry no element indices.
pub fn resolve_path(reg: &TypeRegistry, sig: &FunctionSig, path: &FieldPath) -> Result<TypeDesc, StubError> {
    let err = |detail: String| StubError::PathType {
        function: sig.name.clone(),
        path: path.to_string(),
        detail,
    };
    let declared = match path.slot {
        Slot::Arg(i) => sig
            .slot_types()
            .get(i)
            .cloned()
            .ok_or_else(|| err(format!("no argument slot {i}")))?,
        Slot::Return => sig
            .returns
            .clone()
            .ok_or_else(|| err("function returns nothing".into()))?,
    };
    let mut ty = match &declared {
        TypeDesc::Abstract(name) => {
            let def = reg.abstract_def(name).map_err(|e| err(e.to_string()))?;
            if !def.subtypes.contains(&path.type_name) {
                return Err(err(format!("`{}` is not a subtype of `{name}`", path.type_name)));
            }
            TypeDesc::Record(path.type_name.clone())
        }
        other if other.display_name() == path.type_name => other.clone(),
        other => return Err(err(format!("slot has type `{other}`"))),
    };
    for field in &path.chain {
        let mut inner = &ty;
        while let TypeDesc::Array(e) = inner {
            inner = e;
        }
        let candidates: Vec<&str> = match inner {
            TypeDesc::Record(name) => vec![name.as_str()],
            TypeDesc::Abstract(name) => reg
                .abstract_def(name)
                .map_err(|e| err(e.to_string()))?
                .subtypes
                .iter()
                .map(String::as_str)
                .collect(),
            other => return Err(err(format!("`{other}` has no field `{field}`"))),
        };
        let found = candidates
            .iter()
            .find_map(|n| reg.record(n).ok().and_then(|r| r.field(field)).map(|f| f.ty.clone()));
        ty = found.ok_or_else(|| err(format!("no field `{field}` in `{inner}`")))?;
    }
    Ok(ty)
}

/// Records match by name, primitives by kind, and strings match strings.
pub fn compatible(a: &TypeDesc, b: &TypeDesc) -> bool {
    match (a, b) {
        (TypeDesc::Prim(x), TypeDesc::Prim(y)) => x == y,
        (TypeDesc::Str, TypeDesc::Str) => true,
        (TypeDesc::Record(x), TypeDesc::Record(y)) => x == y,
        _ => false,
    }
}

fn taint_gen_stub(sig: &FunctionSig, reg: &TypeRegistry) -> Stub {
    let mut ops = Vec::new();
    if let Some(rt) = &sig.returns {
        ops.push(StubOp::TaintGen {
            out: FieldPath {
                slot: Slot::Return,
                type_name: rt.display_name(),
                chain: Vec::new(),
            },
            label: sig.name.clone(),
        });
    }
    for (i, t) in sig.slot_types().iter().enumerate() {
        if !t.is_primitive() && !reg.is_atomic(t) {
            ops.push(StubOp::TaintGen {
                out: FieldPath {
                    slot: Slot::Arg(i),
                    type_name: t.display_name(),
                    chain: Vec::new(),
                },
                label: sig.name.clone(),
            });
        }
    }
    if ops.is_empty() {
        warn!("{}: no output can carry generated taint; using an empty stub", sig.name);
        return Stub::empty(&sig.name);
    }
    Stub {
        function: sig.name.clone(),
        kind: StubKind::TaintSource,
        ops,
    }
}

/// Turns a dependency relation into a stub.
pub fn synthesize(reg: &TypeRegistry, sig: &FunctionSig, d: &DependencyRelation) -> Result<Stub, StubError> {
    if d.function != sig.name {
        return Err(StubError::FunctionMismatch {
            expected: sig.name.clone(),
            found: d.function.clone(),
        });
    }
    match d.marker {
        Some(Marker::EmptyStub) => return Ok(Stub::empty(&sig.name)),
        Some(Marker::TaintGen) => return Ok(taint_gen_stub(sig, reg)),
        Some(Marker::Unknown) => {
            warn!("{}: dependencies unknown; using an empty stub", sig.name);
            return Ok(Stub::empty(&sig.name));
        }
        None => {}
    }

    // Inputs grouped by output, both in path order.
    let mut by_out: BTreeMap<&FieldPath, Vec<(&FieldPath, TypeDesc)>> = BTreeMap::new();
    let mut out_types = BTreeMap::new();
    for Edge { out, inp } in d.edges.keys() {
        let ot = resolve_path(reg, sig, out)?;
        let it = resolve_path(reg, sig, inp)?;
        out_types.insert(out, ot);
        by_out.entry(out).or_default().push((inp, it));
    }

    let mut ops = Vec::new();
    for (out, ins) in by_out {
        let ot = &out_types[out];
        match ot {
            TypeDesc::Prim(kind) => {
                let prim_ins: Vec<&FieldPath> = ins.iter().filter(|(_, t)| t.is_primitive()).map(|(p, _)| *p).collect();
                if prim_ins.len() > 1 {
                    ops.push(StubOp::SumAssign {
                        out: out.clone(),
                        ins: prim_ins.into_iter().cloned().collect(),
                    });
                } else if let Some(p) = prim_ins.first() {
                    ops.push(StubOp::AssignFlow {
                        out: out.clone(),
                        inp: (*p).clone(),
                        cast: Some(*kind),
                    });
                }
                for (p, _) in ins.iter().filter(|(_, t)| !t.is_primitive()) {
                    ops.push(StubOp::GetTaintAssign {
                        out: out.clone(),
                        inp: (*p).clone(),
                        kind: *kind,
                    });
                }
            }
            _ => {
                for (p, it) in &ins {
                    let op = if compatible(ot, it) {
                        StubOp::AssignFlow {
                            out: out.clone(),
                            inp: (*p).clone(),
                            cast: None,
                        }
                    } else {
                        StubOp::AddTaint {
                            out: out.clone(),
                            inp: (*p).clone(),
                        }
                    };
                    ops.push(op);
                }
            }
        }
    }
    let kind = if ops.is_empty() {
        StubKind::Empty
    } else {
        StubKind::Normal
    };
    Ok(Stub {
        function: sig.name.clone(),
        kind,
        ops,
    })
}

const PROXY_DEPTH: usize = 5;

fn collect_compatible(
    reg: &TypeRegistry,
    ty: &TypeDesc,
    targets: &[TypeDesc],
    emit_here: bool,
    chain: &mut Vec<String>,
    out: &mut Vec<Vec<String>>,
) {
    if emit_here && targets.iter().any(|t| compatible(ty, t)) {
        out.push(chain.clone());
        return;
    }
    if chain.len() >= PROXY_DEPTH {
        return;
    }
    match ty {
        // Elements of an array are writable even when the array is an
        // argument root.
        TypeDesc::Array(elem) => collect_compatible(reg, elem, targets, true, chain, out),
        TypeDesc::Record(name) => {
            if let Ok(r) = reg.record(name) {
                for f in &r.fields {
                    chain.push(f.name.clone());
                    collect_compatible(reg, &f.ty, targets, true, chain, out);
                    chain.pop();
                }
            }
        }
        _ => {}
    }
}

/// Stub for a native function that calls a source internally: every output
/// location whose type matches one of the source's return types gets taint
/// labelled with the function's own name.
pub fn proxy_source_stub(reg: &TypeRegistry, sig: &FunctionSig, source_returns: &[TypeDesc]) -> Stub {
    let mut ops = Vec::new();
    let mut push = |slot: Slot, ty: &TypeDesc, emit_root: bool| {
        let mut chains = Vec::new();
        collect_compatible(reg, ty, source_returns, emit_root, &mut Vec::new(), &mut chains);
        for chain in chains {
            ops.push(StubOp::TaintGen {
                out: FieldPath {
                    slot,
                    type_name: ty.display_name(),
                    chain,
                },
                label: sig.name.clone(),
            });
        }
    };
    if let Some(rt) = &sig.returns {
        push(Slot::Return, rt, true);
    }
    for (i, t) in sig.slot_types().iter().enumerate() {
        if !t.is_primitive() {
            push(Slot::Arg(i), t, false);
        }
    }
    if ops.is_empty() {
        warn!(
            "{}: no output is compatible with the source return type; proxy stub is empty",
            sig.name
        );
        return Stub::empty(&sig.name);
    }
    Stub {
        function: sig.name.clone(),
        kind: StubKind::TaintSource,
        ops,
    }
}

/// The `stubs.json` document: one stub per native function.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubSet {
    pub stubs: Vec<Stub>,
}

impl StubSet {
    pub fn from_map(map: BTreeMap<String, Stub>) -> Self {
        StubSet {
            stubs: map.into_values().collect(),
        }
    }

    pub fn to_map(&self) -> BTreeMap<String, Stub> {
        self.stubs.iter().map(|s| (s.function.clone(), s.clone())).collect()
    }

    pub fn get(&self, function: &str) -> Option<&Stub> {
        self.stubs.iter().find(|s| s.function == function)
    }

    /// Merges a stub in, keeping the set sorted by function.
    pub fn upsert(&mut self, stub: Stub) {
        let mut map = self.to_map();
        match map.get_mut(&stub.function) {
            Some(existing) => existing.merge(&stub),
            None => {
                map.insert(stub.function.clone(), stub);
            }
        }
        *self = StubSet::from_map(map);
    }
}

pub fn emit(stubs: &StubSet) -> String {
    serde_json::to_string_pretty(stubs).expect("stub serialization is infallible")
}

pub fn parse(doc: &str) -> Result<StubSet, StubError> {
    let set: StubSet = serde_json::from_str(doc).map_err(|e| StubError::Document(e.to_string()))?;
    for s in &set.stubs {
        s.check()?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::typesys::{FieldDef, RecordDef};

    fn int() -> TypeDesc {
        TypeDesc::Prim(PrimKind::Int32)
    }

    fn reg() -> TypeRegistry {
        TypeRegistry::new()
            .with_record(RecordDef::new("Data", vec![FieldDef::new("s", TypeDesc::Str)]))
            .with_record(RecordDef::new(
                "Eavesdropper",
                vec![
                    FieldDef::new("s", TypeDesc::Str),
                    FieldDef::new("number", TypeDesc::Str),
                ],
            ))
            .with_record(RecordDef::new(
                "Imei",
                vec![
                    FieldDef::new("imei", TypeDesc::Str),
                    FieldDef::new("ok", TypeDesc::Prim(PrimKind::Bool)),
                ],
            ))
            .with_record(RecordDef::new("Box", vec![FieldDef::new("x", int())]))
            .with_record(RecordDef::new(
                "Holder",
                vec![FieldDef::new("items", TypeDesc::array_of(TypeDesc::record("Data")))],
            ))
    }

    fn rel(name: &str, edges: &[(FieldPath, FieldPath)]) -> DependencyRelation {
        let mut d = DependencyRelation::new(name);
        for (o, i) in edges {
            d.insert(Edge::new(o.clone(), i.clone()));
        }
        d
    }

    #[test]
    fn primitive_to_primitive_is_cast_assignment() {
        let sig = FunctionSig::new_static("f", vec![int(), int()], Some(int()));
        let d = rel(
            "f",
            &[(FieldPath::ret("Integer", &[]), FieldPath::arg(1, "Integer", &[]))],
        );
        let stub = synthesize(&reg(), &sig, &d).unwrap();
        assert_eq!(
            stub.ops,
            vec![StubOp::AssignFlow {
                out: FieldPath::ret("Integer", &[]),
                inp: FieldPath::arg(1, "Integer", &[]),
                cast: Some(PrimKind::Int32),
            }]
        );
        assert_eq!(stub.kind, StubKind::Normal);
    }

    #[test]
    fn motivating_relation() {
        let sig = FunctionSig::new_instance(
            "propagateData",
            "Data",
            vec![TypeDesc::record("Eavesdropper"), TypeDesc::Prim(PrimKind::Bool)],
            None,
        );
        let ev = FieldPath::arg(1, "Eavesdropper", &["s"]);
        let d = rel(
            "propagateData",
            &[
                (ev.clone(), FieldPath::arg(0, "Data", &["s"])),
                (ev.clone(), FieldPath::arg(2, "Boolean", &[])),
            ],
        );
        let stub = synthesize(&reg(), &sig, &d).unwrap();
        assert_eq!(
            stub.ops,
            vec![
                StubOp::AssignFlow {
                    out: ev.clone(),
                    inp: FieldPath::arg(0, "Data", &["s"]),
                    cast: None
                },
                StubOp::AddTaint {
                    out: ev,
                    inp: FieldPath::arg(2, "Boolean", &[])
                },
            ]
        );
    }

    #[test]
    fn several_primitive_inputs_sum() {
        let sig = FunctionSig::new_static("add", vec![int(), int()], Some(int()));
        let r = FieldPath::ret("Integer", &[]);
        let d = rel(
            "add",
            &[
                (r.clone(), FieldPath::arg(0, "Integer", &[])),
                (r.clone(), FieldPath::arg(1, "Integer", &[])),
            ],
        );
        let stub = synthesize(&reg(), &sig, &d).unwrap();
        assert_eq!(
            stub.ops,
            vec![StubOp::SumAssign {
                out: r,
                ins: vec![FieldPath::arg(0, "Integer", &[]), FieldPath::arg(1, "Integer", &[])]
            }]
        );
    }

    #[test]
    fn object_to_primitive_reads_taint() {
        let sig = FunctionSig::new_static("len", vec![TypeDesc::Str], Some(int()));
        let d = rel(
            "len",
            &[(FieldPath::ret("Integer", &[]), FieldPath::arg(0, "String", &[]))],
        );
        let stub = synthesize(&reg(), &sig, &d).unwrap();
        assert!(matches!(
            stub.ops[..],
            [StubOp::GetTaintAssign {
                kind: PrimKind::Int32,
                ..
            }]
        ));
    }

    #[test]
    fn every_edge_class_yields_one_op() {
        let sig = FunctionSig::new_static(
            "mix",
            vec![int(), TypeDesc::Str, TypeDesc::record("Box")],
            Some(TypeDesc::record("Imei")),
        );
        let d = rel(
            "mix",
            &[
                (FieldPath::ret("Imei", &["imei"]), FieldPath::arg(1, "String", &[])),
                (FieldPath::ret("Imei", &["imei"]), FieldPath::arg(0, "Integer", &[])),
                (FieldPath::arg(2, "Box", &["x"]), FieldPath::arg(1, "String", &[])),
                (FieldPath::ret("Imei", &["ok"]), FieldPath::arg(0, "Integer", &[])),
                (FieldPath::ret("Imei", &[]), FieldPath::arg(2, "Box", &[])),
            ],
        );
        let stub = synthesize(&reg(), &sig, &d).unwrap();
        assert_eq!(stub.ops.len(), d.edges.len());
    }

    #[test]
    fn missing_path_is_an_error() {
        let sig = FunctionSig::new_static("f", vec![TypeDesc::record("Box")], None);
        let d = rel(
            "f",
            &[(FieldPath::arg(0, "Box", &["nope"]), FieldPath::arg(0, "Box", &["x"]))],
        );
        assert!(matches!(synthesize(&reg(), &sig, &d), Err(StubError::PathType { .. })));
    }

    #[test]
    fn chains_step_through_arrays() {
        let sig = FunctionSig::new_static("f", vec![TypeDesc::record("Holder")], None);
        let p = FieldPath::arg(0, "Holder", &["items", "s"]);
        assert_eq!(resolve_path(&reg(), &sig, &p).unwrap(), TypeDesc::Str);
    }

    #[test]
    fn markers_map_to_kinds() {
        let gen_sig = FunctionSig::new_static("counter", vec![], Some(TypeDesc::Prim(PrimKind::Int64)));
        let stub = synthesize(
            &reg(),
            &gen_sig,
            &DependencyRelation::with_marker("counter", Marker::TaintGen),
        )
        .unwrap();
        assert_eq!(stub.kind, StubKind::TaintSource);
        assert_eq!(stub.ops.len(), 1);
        stub.check().unwrap();
        let void_sig = FunctionSig::new_static("log", vec![int()], None);
        let stub = synthesize(
            &reg(),
            &void_sig,
            &DependencyRelation::with_marker("log", Marker::EmptyStub),
        )
        .unwrap();
        assert_eq!(stub, Stub::empty("log"));
    }

    #[test]
    fn proxy_taints_compatible_fields_only() {
        let sig = FunctionSig::new_static("getImei", vec![], Some(TypeDesc::record("Imei")));
        let stub = proxy_source_stub(&reg(), &sig, &[TypeDesc::Str]);
        assert_eq!(
            stub.ops,
            vec![StubOp::TaintGen {
                out: FieldPath::ret("Imei", &["imei"]),
                label: "getImei".into()
            }]
        );
        let sig = FunctionSig::new_static("fill", vec![TypeDesc::record("Box")], None);
        let stub = proxy_source_stub(&reg(), &sig, &[int()]);
        assert_eq!(stub.ops[0].out(), &FieldPath::arg(0, "Box", &["x"]));
        let stub = proxy_source_stub(&reg(), &sig, &[TypeDesc::Str]);
        assert_eq!(stub.kind, StubKind::Empty);
    }

    #[test]
    fn proxy_unions_source_types() {
        let sig = FunctionSig::new_static("both", vec![TypeDesc::record("Box")], Some(TypeDesc::record("Imei")));
        let stub = proxy_source_stub(&reg(), &sig, &[TypeDesc::Str, int()]);
        let outs: Vec<String> = stub.ops.iter().map(|o| o.out().to_string()).collect();
        assert_eq!(outs, ["Imei@return.imei", "Box@0.x"]);
    }

    #[test]
    fn documents_round_trip() {
        let sig = FunctionSig::new_static("add", vec![int(), int()], Some(int()));
        let r = FieldPath::ret("Integer", &[]);
        let d = rel(
            "add",
            &[
                (r.clone(), FieldPath::arg(0, "Integer", &[])),
                (r, FieldPath::arg(1, "Integer", &[])),
            ],
        );
        let mut set = StubSet::default();
        set.upsert(synthesize(&reg(), &sig, &d).unwrap());
        set.upsert(Stub::empty("log"));
        set.upsert(proxy_source_stub(
            &reg(),
            &FunctionSig::new_static("getImei", vec![], Some(TypeDesc::record("Imei"))),
            &[TypeDesc::Str],
        ));
        let doc = emit(&set);
        assert_eq!(parse(&doc).unwrap(), set);
        assert_eq!(emit(&parse(&doc).unwrap()), doc);
        assert!(doc.contains("\"op\": \"sum_assign\""));
    }

    #[test]
    fn merging_proxy_taint_makes_a_source() {
        let mut s = Stub::empty("f");
        s.merge(&Stub {
            function: "f".into(),
            kind: StubKind::TaintSource,
            ops: vec![StubOp::TaintGen {
                out: FieldPath::ret("String", &[]),
                label: "f".into(),
            }],
        });
        assert_eq!(s.kind, StubKind::TaintSource);
        s.check().unwrap();
    }
}
