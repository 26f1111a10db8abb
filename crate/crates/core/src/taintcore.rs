//! Whole-program taint analysis over a small app IR.
//!
//! The analysis is flow- and context-insensitive with an allocation-site
//! heap. Every local, field, array element, parameter and return value is a
//! cell holding a points-to set and a taint set; every heap object also has
//! an object-level taint cell. Native calls are interpreted through their
//! stubs. All methods are roots, because methods called back from native
//! code have no Java-side call edge.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depgen::{FieldPath, Slot};
use crate::executor::FunctionSig;
use crate::nativescan::{MethodSig, SourceSinkList, SsEntry};
use crate::stubgen::{resolve_path, Stub, StubError, StubOp};
use crate::typesys::{TypeDesc, TypeRegistry};

#[derive(Debug, Error)]
pub enum TaintError {
    #[error("invalid app IR: {0}")]
    Validation(String),
    #[error("no stub for native method `{0}`")]
    MissingStub(String),
    #[error(transparent)]
    Stub(#[from] StubError),
}

fn invalid(msg: impl Into<String>) -> TaintError {
    TaintError::Validation(msg.into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: TypeDesc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Stmt {
    New {
        dst: String,
        #[serde(rename = "type")]
        ty: String,
    },
    NewArray {
        dst: String,
        elem: TypeDesc,
    },
    Assign {
        dst: String,
        src: String,
    },
    Load {
        dst: String,
        obj: String,
        field: String,
    },
    Store {
        obj: String,
        field: String,
        src: String,
    },
    ArrayLoad {
        dst: String,
        arr: String,
    },
    ArrayStore {
        arr: String,
        src: String,
    },
    ConstStr {
        dst: String,
        value: String,
    },
    ConstPrim {
        dst: String,
        value: serde_json::Value,
    },
    /// Any arithmetic or string operation: the result carries both
    /// operands' taint.
    BinOp {
        dst: String,
        lhs: String,
        rhs: String,
        #[serde(default)]
        operator: String,
    },
    CallJava {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ret: Option<String>,
        method: String,
        #[serde(default)]
        args: Vec<String>,
    },
    CallNative {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ret: Option<String>,
        method: String,
        #[serde(default)]
        args: Vec<String>,
    },
    CallSource {
        ret: String,
        method: String,
        #[serde(default)]
        args: Vec<String>,
    },
    CallSink {
        method: String,
        #[serde(default)]
        args: Vec<String>,
    },
    Return {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        src: Option<String>,
    },
}

impl Stmt {
    fn locals(&self) -> Vec<&str> {
        let mut v: Vec<&str> = match self {
            Stmt::New { dst, .. } | Stmt::NewArray { dst, .. } => vec![dst],
            Stmt::ConstStr { dst, .. } | Stmt::ConstPrim { dst, .. } => vec![dst],
            Stmt::Assign { dst, src } => vec![dst, src],
            Stmt::Load { dst, obj, .. } => vec![dst, obj],
            Stmt::Store { obj, src, .. } => vec![obj, src],
            Stmt::ArrayLoad { dst, arr } => vec![dst, arr],
            Stmt::ArrayStore { arr, src } => vec![arr, src],
            Stmt::BinOp { dst, lhs, rhs, .. } => vec![dst, lhs, rhs],
            Stmt::CallJava { ret, args, .. } | Stmt::CallNative { ret, args, .. } => {
                ret.iter().chain(args.iter()).map(String::as_str).collect()
            }
            Stmt::CallSource { ret, args, .. } => std::iter::once(ret).chain(args.iter()).map(String::as_str).collect(),
            Stmt::CallSink { args, .. } => args.iter().map(String::as_str).collect(),
            Stmt::Return { src } => src.iter().map(String::as_str).collect(),
        };
        v.dedup();
        v
    }

    fn call(&self) -> Option<(&str, Option<&String>, &[String])> {
        match self {
            Stmt::CallJava { ret, method, args } | Stmt::CallNative { ret, method, args } => {
                Some((method, ret.as_ref(), args))
            }
            Stmt::CallSource { ret, method, args } => Some((method, Some(ret), args)),
            Stmt::CallSink { method, args } => Some((method, None, args)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Method {
    pub name: String,
    #[serde(default)]
    pub params: Vec<Param>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub returns: Option<TypeDesc>,
    #[serde(default)]
    pub locals: BTreeMap<String, TypeDesc>,
    pub body: Vec<Stmt>,
}

/// The app under analysis: Java-side methods plus declarations of the
/// native methods they call.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AppIR {
    #[serde(default)]
    pub types: TypeRegistry,
    #[serde(default)]
    pub natives: Vec<FunctionSig>,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub entries: Vec<String>,
}

impl AppIR {
    pub fn method(&self, name: &str) -> Option<&Method> {
        let sig = MethodSig::new(name_part(name));
        self.methods
            .iter()
            .find(|m| MethodSig::new(name_part(&m.name)).matches(&sig))
    }

    /// The declared native `name`; an exact match (descriptor included)
    /// wins over a name-only match, so overloads stay apart.
    pub fn native(&self, name: &str) -> Option<&FunctionSig> {
        let n = name_part(name);
        self.natives
            .iter()
            .find(|f| f.name == name)
            .or_else(|| self.natives.iter().find(|f| name_part(&f.name) == n))
    }

    pub fn validate(&self) -> Result<(), TaintError> {
        self.types.validate().map_err(|e| invalid(e.to_string()))?;
        for n in &self.natives {
            n.validate(&self.types).map_err(|e| invalid(e.to_string()))?;
        }
        let mut names = BTreeSet::new();
        for m in &self.methods {
            if !names.insert(m.name.as_str()) {
                return Err(invalid(format!("duplicate method `{}`", m.name)));
            }
        }
        for e in &self.entries {
            if self.method(e).is_none() {
                return Err(invalid(format!("entry `{e}` is not a method")));
            }
        }
        for m in &self.methods {
            self.validate_method(m)?;
        }
        Ok(())
    }

    fn validate_method(&self, m: &Method) -> Result<(), TaintError> {
        let mut declared: BTreeSet<&str> = m.locals.keys().map(String::as_str).collect();
        for p in &m.params {
            self.types
                .check_type(&p.ty)
                .map_err(|e| invalid(format!("{}: {e}", m.name)))?;
            if !declared.insert(&p.name) && !m.locals.contains_key(&p.name) {
                return Err(invalid(format!("{}: duplicate parameter `{}`", m.name, p.name)));
            }
        }
        for (k, s) in m.body.iter().enumerate() {
            let at = || format!("{}#{k}", m.name);
            for l in s.locals() {
                if !declared.contains(l) {
                    return Err(invalid(format!("{}: undeclared local `{l}`", at())));
                }
            }
            match s {
                Stmt::New { ty, .. } => {
                    self.types.record(ty).map_err(|e| invalid(format!("{}: {e}", at())))?;
                }
                Stmt::NewArray { elem, .. } => {
                    self.types
                        .check_type(elem)
                        .map_err(|e| invalid(format!("{}: {e}", at())))?;
                }
                Stmt::CallNative { ret, method, args } => {
                    let sig = self
                        .native(method)
                        .ok_or_else(|| invalid(format!("{}: `{method}` is not a declared native method", at())))?;
                    if args.len() != sig.slot_count() {
                        return Err(invalid(format!(
                            "{}: `{method}` takes {} arguments, got {}",
                            at(),
                            sig.slot_count(),
                            args.len()
                        )));
                    }
                    if ret.is_some() && sig.returns.is_none() {
                        return Err(invalid(format!("{}: `{method}` returns nothing", at())));
                    }
                }
                Stmt::CallJava { method, args, .. } => {
                    if let Some(target) = self.method(method) {
                        if target.params.len() != args.len() {
                            return Err(invalid(format!(
                                "{}: `{method}` takes {} arguments, got {}",
                                at(),
                                target.params.len(),
                                args.len()
                            )));
                        }
                    }
                }
                _ => {}
            }
            if let Some((method, _, _)) = s.call() {
                method
                    .parse::<MethodSig>()
                    .map_err(|e| invalid(format!("{}: {e}", at())))?;
            }
        }
        Ok(())
    }

    /// App methods matching `sig`, by name.
    pub fn defines(&self, sig: &MethodSig) -> bool {
        self.methods
            .iter()
            .any(|m| m.name.parse::<MethodSig>().is_ok_and(|s| s.matches(sig)))
    }
}

fn name_part(s: &str) -> &str {
    s.split('(').next().unwrap_or(s)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Flow {
    pub source: String,
    pub sink: String,
    /// Source site then sink site, as `method#statement`.
    pub witness: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowReport {
    pub flows: Vec<Flow>,
}

impl FlowReport {
    pub fn pairs(&self) -> BTreeSet<(String, String)> {
        self.flows.iter().map(|f| (f.source.clone(), f.sink.clone())).collect()
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingStub {
    /// Treat the call as having no taint effect.
    #[default]
    Empty,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyzeOptions {
    /// Ignore every stub, cutting taint at native calls.
    pub empty_stubs: bool,
    pub missing_stub: MissingStub,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Site {
    Alloc(String, usize),
    /// Object a native call returns or writes, keyed by call and path.
    Native(String, usize, String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Cell {
    Local(String, String),
    Field(usize, String),
    Ret(String),
    CallRet(String, usize),
}

const ELEM: &str = "[]";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Label {
    source: String,
    site: String,
}

#[derive(Debug, Clone, Default)]
struct CellState {
    pts: BTreeSet<usize>,
    taint: BTreeSet<usize>,
}

struct Analyzer<'a> {
    ir: &'a AppIR,
    ss: &'a SourceSinkList,
    stubs: &'a BTreeMap<String, Stub>,
    opts: AnalyzeOptions,
    sites: Vec<Site>,
    site_ids: BTreeMap<Site, usize>,
    site_fields: BTreeMap<usize, BTreeSet<String>>,
    labels: Vec<Label>,
    label_ids: BTreeMap<Label, usize>,
    cells: BTreeMap<Cell, CellState>,
    obj_taint: BTreeMap<usize, BTreeSet<usize>>,
    changed: bool,
}

fn local(m: &str, l: &str) -> Cell {
    Cell::Local(m.to_string(), l.to_string())
}

impl<'a> Analyzer<'a> {
    fn site(&mut self, s: Site) -> usize {
        if let Some(&id) = self.site_ids.get(&s) {
            return id;
        }
        self.sites.push(s.clone());
        self.site_ids.insert(s, self.sites.len() - 1);
        self.changed = true;
        self.sites.len() - 1
    }

    fn label(&mut self, source: &str, site: String) -> usize {
        let l = Label {
            source: source.to_string(),
            site,
        };
        if let Some(&id) = self.label_ids.get(&l) {
            return id;
        }
        self.labels.push(l.clone());
        self.label_ids.insert(l, self.labels.len() - 1);
        self.labels.len() - 1
    }

    fn pts(&self, c: &Cell) -> BTreeSet<usize> {
        self.cells.get(c).map(|s| s.pts.clone()).unwrap_or_default()
    }

    fn taint(&self, c: &Cell) -> BTreeSet<usize> {
        self.cells.get(c).map(|s| s.taint.clone()).unwrap_or_default()
    }

    fn obj(&self, site: usize) -> BTreeSet<usize> {
        self.obj_taint.get(&site).cloned().unwrap_or_default()
    }

    fn entry(&mut self, c: &Cell) -> &mut CellState {
        if let Cell::Field(site, f) = c {
            self.site_fields.entry(*site).or_default().insert(f.clone());
        }
        self.cells.entry(c.clone()).or_default()
    }

    fn add_pts(&mut self, c: &Cell, pts: &BTreeSet<usize>) {
        if pts.is_empty() {
            return;
        }
        let e = self.entry(c);
        let before = e.pts.len();
        e.pts.extend(pts);
        if e.pts.len() != before {
            self.changed = true;
        }
    }

    fn add_taint(&mut self, c: &Cell, taint: &BTreeSet<usize>) {
        if taint.is_empty() {
            return;
        }
        let e = self.entry(c);
        let before = e.taint.len();
        e.taint.extend(taint);
        if e.taint.len() != before {
            self.changed = true;
        }
    }

    fn add_obj_taint(&mut self, site: usize, taint: &BTreeSet<usize>) {
        if taint.is_empty() {
            return;
        }
        let e = self.obj_taint.entry(site).or_default();
        let before = e.len();
        e.extend(taint);
        if e.len() != before {
            self.changed = true;
        }
    }

    fn flow(&mut self, dst: &Cell, src: &Cell) {
        let (p, t) = (self.pts(src), self.taint(src));
        self.add_pts(dst, &p);
        self.add_taint(dst, &t);
    }

    /// Taint of a value and everything reachable from it.
    fn deep(&self, c: &Cell) -> BTreeSet<usize> {
        let mut out = self.taint(c);
        let mut seen = BTreeSet::new();
        let mut stack: Vec<usize> = self.pts(c).into_iter().collect();
        while let Some(site) = stack.pop() {
            if !seen.insert(site) {
                continue;
            }
            out.extend(self.obj(site));
            for f in self.site_fields.get(&site).into_iter().flatten() {
                let fc = Cell::Field(site, f.clone());
                out.extend(self.taint(&fc));
                stack.extend(self.pts(&fc));
            }
        }
        out
    }

    fn source_name(&self, method: &str) -> Option<String> {
        let sig: MethodSig = method.parse().ok()?;
        self.ss.is_source(&sig).then(|| sig.name.clone())
    }

    fn sink_name(&self, method: &str) -> Option<String> {
        let sig: MethodSig = method.parse().ok()?;
        self.ss.is_sink(&sig).then(|| sig.name.clone())
    }

    fn run(&mut self) -> Result<(), TaintError> {
        loop {
            self.changed = false;
            for m in &self.ir.methods {
                if let Some(src) = self.source_name(&m.name) {
                    let l = self.label(&src, format!("{}#param", m.name));
                    for p in &m.params {
                        self.add_taint(&local(&m.name, &p.name), &BTreeSet::from([l]));
                    }
                }
                for (k, s) in m.body.iter().enumerate() {
                    self.transfer(m, k, s)?;
                }
            }
            if !self.changed {
                return Ok(());
            }
        }
    }

    fn transfer(&mut self, m: &Method, k: usize, s: &Stmt) -> Result<(), TaintError> {
        let mn = m.name.as_str();
        match s {
            Stmt::New { dst, .. } | Stmt::NewArray { dst, .. } => {
                let site = self.site(Site::Alloc(mn.to_string(), k));
                self.add_pts(&local(mn, dst), &BTreeSet::from([site]));
            }
            Stmt::Assign { dst, src } => self.flow(&local(mn, dst), &local(mn, src)),
            Stmt::Load { dst, obj, field } => self.load(mn, dst, obj, field),
            Stmt::ArrayLoad { dst, arr } => self.load(mn, dst, arr, ELEM),
            Stmt::Store { obj, field, src } => self.store(mn, obj, field, src),
            Stmt::ArrayStore { arr, src } => self.store(mn, arr, ELEM, src),
            Stmt::ConstStr { .. } | Stmt::ConstPrim { .. } => {}
            Stmt::BinOp { dst, lhs, rhs, .. } => {
                let mut t = self.deep(&local(mn, lhs));
                t.extend(self.deep(&local(mn, rhs)));
                self.add_taint(&local(mn, dst), &t);
            }
            Stmt::Return { src } => {
                if let Some(src) = src {
                    self.flow(&Cell::Ret(mn.to_string()), &local(mn, src));
                }
            }
            call => {
                let (method, ret, args) = call.call().expect("remaining statements are calls");
                let ret_cell = Cell::CallRet(mn.to_string(), k);
                if let Some(src) = self.source_name(method) {
                    let l = self.label(&src, format!("{mn}#{k}"));
                    self.add_taint(&ret_cell, &BTreeSet::from([l]));
                }
                match call {
                    Stmt::CallJava { .. } => {
                        if let Some(target) = self.ir.method(method) {
                            for (p, a) in target.params.iter().zip(args) {
                                self.flow(&local(&target.name, &p.name), &local(mn, a));
                            }
                            self.flow(&ret_cell, &Cell::Ret(target.name.clone()));
                        }
                    }
                    Stmt::CallNative { .. } if !self.opts.empty_stubs => {
                        let sig = self.ir.native(method).expect("validated native call");
                        let stub = match self.stubs.get(&sig.name) {
                            Some(s) => s,
                            None if self.opts.missing_stub == MissingStub::Error => {
                                return Err(TaintError::MissingStub(sig.name.clone()))
                            }
                            None => return self.bind_ret(mn, ret, &ret_cell),
                        };
                        for op in &stub.ops {
                            self.interpret(mn, k, sig, args, op)?;
                        }
                    }
                    _ => {}
                }
                self.bind_ret(mn, ret, &ret_cell)?;
            }
        }
        Ok(())
    }

    fn bind_ret(&mut self, mn: &str, ret: Option<&String>, ret_cell: &Cell) -> Result<(), TaintError> {
        if let Some(r) = ret {
            self.flow(&local(mn, r), ret_cell);
        }
        Ok(())
    }

    fn load(&mut self, mn: &str, dst: &str, obj: &str, field: &str) {
        for o in self.pts(&local(mn, obj)) {
            self.flow(&local(mn, dst), &Cell::Field(o, field.to_string()));
            let t = self.obj(o);
            self.add_taint(&local(mn, dst), &t);
        }
    }

    fn store(&mut self, mn: &str, obj: &str, field: &str, src: &str) {
        for o in self.pts(&local(mn, obj)) {
            self.flow(&Cell::Field(o, field.to_string()), &local(mn, src));
        }
    }

    /// Objects held by `cells`; with `create`, an empty cell gets a fresh
    /// native-allocated object keyed by `key`.
    fn objects(&mut self, mn: &str, k: usize, cells: &[Cell], create: bool, key: &str) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for c in cells {
            let mut p = self.pts(c);
            if p.is_empty() && create {
                let site = self.site(Site::Native(mn.to_string(), k, key.to_string()));
                p.insert(site);
                self.add_pts(c, &p);
            }
            out.extend(p);
        }
        out
    }

    /// Cells a stub path names at one call, plus the object taint of the
    /// objects passed through on the way.
    fn resolve(
        &mut self,
        mn: &str,
        k: usize,
        sig: &FunctionSig,
        args: &[String],
        path: &FieldPath,
        create: bool,
    ) -> Result<(Vec<Cell>, BTreeSet<usize>, TypeDesc), TaintError> {
        let reg = &self.ir.types;
        let root = FieldPath {
            chain: Vec::new(),
            ..path.clone()
        };
        let mut ty = resolve_path(reg, sig, &root)?;
        let mut cells = vec![match path.slot {
            Slot::Arg(i) => local(mn, &args[i]),
            Slot::Return => Cell::CallRet(mn.to_string(), k),
        }];
        let mut key = root.to_string();
        let mut anc = BTreeSet::new();
        for (j, f) in path.chain.iter().enumerate() {
            while let TypeDesc::Array(e) = ty {
                let objs = self.objects(mn, k, &cells, create, &key);
                objs.iter().for_each(|o| anc.extend(self.obj(*o)));
                cells = objs.into_iter().map(|o| Cell::Field(o, ELEM.to_string())).collect();
                key.push_str(ELEM);
                ty = *e;
            }
            let objs = self.objects(mn, k, &cells, create, &key);
            objs.iter().for_each(|o| anc.extend(self.obj(*o)));
            cells = objs.into_iter().map(|o| Cell::Field(o, f.clone())).collect();
            key.push('.');
            key.push_str(f);
            let prefix = FieldPath {
                chain: path.chain[..=j].to_vec(),
                ..path.clone()
            };
            ty = resolve_path(reg, sig, &prefix)?;
        }
        Ok((cells, anc, ty))
    }

    fn read(
        &mut self,
        mn: &str,
        k: usize,
        sig: &FunctionSig,
        args: &[String],
        path: &FieldPath,
    ) -> Result<BTreeSet<usize>, TaintError> {
        let (cells, mut t, _) = self.resolve(mn, k, sig, args, path, false)?;
        for c in &cells {
            t.extend(self.deep(c));
        }
        Ok(t)
    }

    fn taint_out(
        &mut self,
        mn: &str,
        k: usize,
        sig: &FunctionSig,
        args: &[String],
        out: &FieldPath,
        t: &BTreeSet<usize>,
    ) -> Result<(), TaintError> {
        let (cells, _, ty) = self.resolve(mn, k, sig, args, out, true)?;
        if matches!(ty, TypeDesc::Record(_) | TypeDesc::Abstract(_) | TypeDesc::Array(_)) {
            for o in self.objects(mn, k, &cells, true, &out.to_string()) {
                self.add_obj_taint(o, t);
            }
        } else {
            for c in &cells {
                self.add_taint(c, t);
            }
        }
        Ok(())
    }

    fn interpret(
        &mut self,
        mn: &str,
        k: usize,
        sig: &FunctionSig,
        args: &[String],
        op: &StubOp,
    ) -> Result<(), TaintError> {
        match op {
            StubOp::AssignFlow { out, inp, .. } if !(out.chain.is_empty() && matches!(out.slot, Slot::Arg(_))) => {
                let (ocells, _, _) = self.resolve(mn, k, sig, args, out, true)?;
                let (icells, anc, _) = self.resolve(mn, k, sig, args, inp, false)?;
                for oc in &ocells {
                    for ic in &icells {
                        self.flow(oc, ic);
                    }
                    self.add_taint(oc, &anc);
                }
            }
            StubOp::AssignFlow { out, inp, .. } | StubOp::AddTaint { out, inp } => {
                let t = self.read(mn, k, sig, args, inp)?;
                self.taint_out(mn, k, sig, args, out, &t)?;
            }
            StubOp::GetTaintAssign { out, inp, .. } => {
                let t = self.read(mn, k, sig, args, inp)?;
                let (cells, _, _) = self.resolve(mn, k, sig, args, out, true)?;
                cells.iter().for_each(|c| self.add_taint(c, &t));
            }
            StubOp::SumAssign { out, ins } => {
                let mut t = BTreeSet::new();
                for i in ins {
                    t.extend(self.read(mn, k, sig, args, i)?);
                }
                let (cells, _, _) = self.resolve(mn, k, sig, args, out, true)?;
                cells.iter().for_each(|c| self.add_taint(c, &t));
            }
            StubOp::TaintGen { out, label } => {
                let l = self.label(label, format!("{mn}#{k}"));
                self.taint_out(mn, k, sig, args, out, &BTreeSet::from([l]))?;
            }
        }
        Ok(())
    }

    fn report(&self) -> FlowReport {
        let mut found: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
        let mut record = |taint: BTreeSet<usize>, sink: &str, at: String| {
            for l in taint {
                let label = &self.labels[l];
                let witness = vec![label.site.clone(), at.clone()];
                found
                    .entry((label.source.clone(), sink.to_string()))
                    .and_modify(|w| {
                        if witness < *w {
                            *w = witness.clone();
                        }
                    })
                    .or_insert(witness);
            }
        };
        for m in &self.ir.methods {
            let method_sink = self.sink_name(&m.name);
            for (k, s) in m.body.iter().enumerate() {
                if let (Stmt::Return { src: Some(src) }, Some(sink)) = (s, &method_sink) {
                    record(self.deep(&local(&m.name, src)), sink, format!("{}#{k}", m.name));
                }
                if let Some((method, _, args)) = s.call() {
                    if let Some(sink) = self.sink_name(method) {
                        for a in args {
                            record(self.deep(&local(&m.name, a)), &sink, format!("{}#{k}", m.name));
                        }
                    }
                }
            }
        }
        FlowReport {
            flows: found
                .into_iter()
                .map(|((source, sink), witness)| Flow { source, sink, witness })
                .collect(),
        }
    }
}

/// Runs the analysis to its fixpoint and reports source-to-sink flows.
pub fn analyze(
    ir: &AppIR,
    ss: &SourceSinkList,
    stubs: &BTreeMap<String, Stub>,
    opts: AnalyzeOptions,
) -> Result<FlowReport, TaintError> {
    ir.validate()?;
    let mut a = Analyzer {
        ir,
        ss,
        stubs,
        opts,
        sites: Vec::new(),
        site_ids: BTreeMap::new(),
        site_fields: BTreeMap::new(),
        labels: Vec::new(),
        label_ids: BTreeMap::new(),
        cells: BTreeMap::new(),
        obj_taint: BTreeMap::new(),
        changed: false,
    };
    a.run()?;
    Ok(a.report())
}

/// An expected flow.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TruthPair {
    pub source: String,
    pub sink: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: f64,
}

impl Score {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => 2.0 * p * r / (p + r),
            _ => 0.0,
        };
        Score {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
        }
    }
}

fn same_method(a: &str, b: &str) -> bool {
    match (a.parse::<MethodSig>(), b.parse::<MethodSig>()) {
        (Ok(x), Ok(y)) => x.matches(&y),
        _ => a == b,
    }
}

pub fn score(report: &FlowReport, truth: &[TruthPair]) -> Score {
    let hit = |f: &Flow, t: &TruthPair| same_method(&f.source, &t.source) && same_method(&f.sink, &t.sink);
    let tp = report.flows.iter().filter(|f| truth.iter().any(|t| hit(f, t))).count();
    let fp = report.flows.len() - tp;
    let fn_ = truth.iter().filter(|t| !report.flows.iter().any(|f| hit(f, t))).count();
    Score::from_counts(tp, fp, fn_)
}

const HARNESS: &str = "harness";
const HARNESS_DEPTH: usize = 5;
const IN_PREFIX: &str = "in:";
const OUT_PREFIX: &str = "out:";

/// Leaf locations of every argument slot and of the return value. Arrays
/// contribute no path component; immutable records are leaves.
pub fn leaf_paths(reg: &TypeRegistry, sig: &FunctionSig) -> Vec<FieldPath> {
    let mut out = Vec::new();
    let roots = sig
        .slot_types()
        .into_iter()
        .enumerate()
        .map(|(i, t)| (Slot::Arg(i), t))
        .chain(sig.returns.clone().map(|t| (Slot::Return, t)));
    for (slot, t) in roots {
        for (name, concrete) in concretes(reg, &t) {
            let mut chains = Vec::new();
            collect_leaves(reg, &concrete, &mut Vec::new(), &mut chains);
            out.extend(chains.into_iter().map(|chain| FieldPath {
                slot,
                type_name: name.clone(),
                chain,
            }));
        }
    }
    out
}

fn concretes(reg: &TypeRegistry, t: &TypeDesc) -> Vec<(String, TypeDesc)> {
    match t {
        TypeDesc::Abstract(name) => reg
            .abstract_def(name)
            .map(|d| {
                d.subtypes
                    .iter()
                    .map(|s| (s.clone(), TypeDesc::Record(s.clone())))
                    .collect()
            })
            .unwrap_or_default(),
        other => vec![(other.display_name(), other.clone())],
    }
}

fn mutable_record<'r>(reg: &'r TypeRegistry, t: &TypeDesc) -> Option<&'r crate::typesys::RecordDef> {
    match t {
        TypeDesc::Record(n) => reg.record(n).ok().filter(|r| r.mutable),
        _ => None,
    }
}

fn collect_leaves(reg: &TypeRegistry, t: &TypeDesc, chain: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    match t {
        TypeDesc::Array(e) => collect_leaves(reg, e, chain, out),
        _ => match mutable_record(reg, t) {
            Some(r) if chain.len() < HARNESS_DEPTH => {
                for f in &r.fields {
                    chain.push(f.name.clone());
                    collect_leaves(reg, &f.ty, chain, out);
                    chain.pop();
                }
            }
            _ => out.push(chain.clone()),
        },
    }
}

struct HarnessBuilder<'r> {
    reg: &'r TypeRegistry,
    body: Vec<Stmt>,
    locals: BTreeMap<String, TypeDesc>,
    ss: Vec<SsEntry>,
}

impl HarnessBuilder<'_> {
    fn fresh(&mut self, t: &TypeDesc) -> String {
        let l = format!("v{}", self.locals.len());
        self.locals.insert(l.clone(), t.clone());
        l
    }

    fn build(&mut self, t: &TypeDesc, path: &mut FieldPath) -> String {
        let l = self.fresh(t);
        match t {
            TypeDesc::Array(e) => {
                self.body.push(Stmt::NewArray {
                    dst: l.clone(),
                    elem: (**e).clone(),
                });
                let c = self.build(e, path);
                self.body.push(Stmt::ArrayStore { arr: l.clone(), src: c });
            }
            _ => match mutable_record(self.reg, t) {
                Some(r) if path.chain.len() < HARNESS_DEPTH => {
                    self.body.push(Stmt::New {
                        dst: l.clone(),
                        ty: r.name.clone(),
                    });
                    for f in r.fields.clone() {
                        path.chain.push(f.name.clone());
                        let c = self.build(&f.ty, path);
                        path.chain.pop();
                        self.body.push(Stmt::Store {
                            obj: l.clone(),
                            field: f.name,
                            src: c,
                        });
                    }
                }
                _ => {
                    let name = format!("{IN_PREFIX}{path}");
                    self.ss.push(SsEntry::source(MethodSig::new(&name), vec![t.clone()]));
                    self.body.push(Stmt::CallSource {
                        ret: l.clone(),
                        method: name,
                        args: Vec::new(),
                    });
                }
            },
        }
        l
    }

    fn observe(&mut self, l: &str, t: &TypeDesc, path: &mut FieldPath) {
        match t {
            TypeDesc::Array(e) => {
                let c = self.fresh(e);
                self.body.push(Stmt::ArrayLoad {
                    dst: c.clone(),
                    arr: l.to_string(),
                });
                self.observe(&c, e, path);
            }
            _ => match mutable_record(self.reg, t) {
                Some(r) if path.chain.len() < HARNESS_DEPTH => {
                    for f in r.fields.clone() {
                        let c = self.fresh(&f.ty);
                        self.body.push(Stmt::Load {
                            dst: c.clone(),
                            obj: l.to_string(),
                            field: f.name.clone(),
                        });
                        path.chain.push(f.name);
                        self.observe(&c, &f.ty, path);
                        path.chain.pop();
                    }
                }
                _ => {
                    let name = format!("{OUT_PREFIX}{path}");
                    self.ss.push(SsEntry::sink(MethodSig::new(&name)));
                    self.body.push(Stmt::CallSink {
                        method: name,
                        args: vec![l.to_string()],
                    });
                }
            },
        }
    }
}

/// Output/input leaf pairs connected by `stub`, computed by analyzing a
/// harness that taints every input leaf with its own label, calls the
/// native method once and checks every output leaf. Pairs within one slot
/// and outputs in primitive slots are not reported.
pub fn stub_flow_relation(
    reg: &TypeRegistry,
    sig: &FunctionSig,
    stub: &Stub,
) -> Result<BTreeSet<(FieldPath, FieldPath)>, TaintError> {
    let mut b = HarnessBuilder {
        reg,
        body: Vec::new(),
        locals: BTreeMap::new(),
        ss: Vec::new(),
    };
    let slots = sig.slot_types();
    let mut args = Vec::new();
    for (i, t) in slots.iter().enumerate() {
        let cs = concretes(reg, t);
        let arg = b.fresh(t);
        for (name, concrete) in cs {
            let mut path = FieldPath {
                slot: Slot::Arg(i),
                type_name: name,
                chain: Vec::new(),
            };
            let v = b.build(&concrete, &mut path);
            b.body.push(Stmt::Assign {
                dst: arg.clone(),
                src: v,
            });
        }
        args.push(arg);
    }
    let ret = sig.returns.as_ref().map(|t| b.fresh(t));
    b.body.push(Stmt::CallNative {
        ret: ret.clone(),
        method: sig.name.clone(),
        args: args.clone(),
    });
    for (i, t) in slots.iter().enumerate() {
        if t.is_primitive() {
            continue;
        }
        for (name, concrete) in concretes(reg, t) {
            let mut path = FieldPath {
                slot: Slot::Arg(i),
                type_name: name,
                chain: Vec::new(),
            };
            b.observe(&args[i], &concrete, &mut path);
        }
    }
    if let (Some(r), Some(t)) = (&ret, &sig.returns) {
        for (name, concrete) in concretes(reg, t) {
            let mut path = FieldPath {
                slot: Slot::Return,
                type_name: name,
                chain: Vec::new(),
            };
            b.observe(r, &concrete, &mut path);
        }
    }
    let ir = AppIR {
        types: reg.clone(),
        natives: vec![sig.clone()],
        methods: vec![Method {
            name: HARNESS.to_string(),
            params: Vec::new(),
            returns: None,
            locals: b.locals,
            body: b.body,
        }],
        entries: vec![HARNESS.to_string()],
    };
    let ss = SourceSinkList::new(b.ss);
    let stubs = BTreeMap::from([(sig.name.clone(), stub.clone())]);
    let report = analyze(&ir, &ss, &stubs, AnalyzeOptions::default())?;
    let mut out = BTreeSet::new();
    for f in report.flows {
        let (Some(i), Some(o)) = (f.source.strip_prefix(IN_PREFIX), f.sink.strip_prefix(OUT_PREFIX)) else {
            continue;
        };
        let (i, o): (FieldPath, FieldPath) = match (i.parse(), o.parse()) {
            (Ok(i), Ok(o)) => (i, o),
            _ => continue,
        };
        if i.slot != o.slot {
            out.insert((o, i));
        }
    }
    Ok(out)
}

/// Expands dependency edges to the leaf pairs they cover.
pub fn project_to_leaves(
    reg: &TypeRegistry,
    sig: &FunctionSig,
    edges: impl IntoIterator<Item = (FieldPath, FieldPath)>,
) -> BTreeSet<(FieldPath, FieldPath)> {
    let leaves = leaf_paths(reg, sig);
    let under = |p: &FieldPath| -> Vec<FieldPath> {
        let v: Vec<FieldPath> = leaves
            .iter()
            .filter(|l| l.type_name == p.type_name && p.is_prefix_of(l))
            .cloned()
            .collect();
        if v.is_empty() {
            vec![p.clone()]
        } else {
            v
        }
    };
    let mut out = BTreeSet::new();
    for (o, i) in edges {
        for lo in under(&o) {
            for li in under(&i) {
                out.insert((lo.clone(), li));
            }
        }
    }
    out
}
