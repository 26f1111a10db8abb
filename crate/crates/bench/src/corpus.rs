//! Reference native corpus: small functions with known behavior, each
//! mirroring one native-code benchmark case.
//!
//! Functions work on decoded argument trees in place, the way JNI code
//! would work on the Java heap. Ground truth lives in a JSON sidecar
//! (`fixtures/corpus/sidecar.json`), not here.

use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use mudep_core::executor::{CallResult, FunctionSig, Manifest};
use mudep_core::typesys::{FieldDef, PrimKind, RecordDef, TypeDesc, TypeRegistry, Value};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    DirectLeak,
    FieldPropagation,
    ArrayPropagation,
    ConditionalPropagation,
    NoLeak,
    NoLeakArray,
    Nondeterministic,
    PureVoid,
    ZeroArgStatic,
    Crash,
    Hang,
}

type Body = fn(&mut [Value]) -> CallResult;

pub struct CorpusEntry {
    pub sig: FunctionSig,
    pub behavior: Behavior,
    pub deterministic: bool,
    body: Body,
}

impl CorpusEntry {
    pub fn name(&self) -> &str {
        &self.sig.name
    }

    pub fn call(&self, args: &mut [Value]) -> CallResult {
        if args.len() != self.sig.slot_count() {
            return Err(format!(
                "`{}` expects {} argument(s), got {}",
                self.sig.name,
                self.sig.slot_count(),
                args.len()
            ));
        }
        (self.body)(args)
    }
}

pub const DEVICE_ID: &str = "356938035643809";
pub const LINE_NUMBER: &str = "+15555550100";

static TICKS: AtomicU64 = AtomicU64::new(0);

pub fn registry() -> TypeRegistry {
    let s = || TypeDesc::Str;
    TypeRegistry::new()
        .with_record(RecordDef::new("Data", vec![FieldDef::new("s", s())]))
        .with_record(RecordDef::new(
            "Eavesdropper",
            vec![FieldDef::new("s", s()), FieldDef::new("number", s())],
        ))
        .with_record(RecordDef::new(
            "Person",
            vec![FieldDef::new("name", s()), FieldDef::new("phone", s())],
        ))
        .with_record(RecordDef::new("Box", vec![FieldDef::new("val", s())]))
        .with_record(RecordDef::new(
            "Info",
            vec![FieldDef::new("a", s()), FieldDef::new("b", s())],
        ))
}

fn text(v: &Value, field: &str) -> Result<String, String> {
    match v.field(field) {
        Some(Value::Str(s)) => Ok(s.clone()),
        Some(Value::Null) | None => Err(format!("null dereference reading `{field}`")),
        Some(other) => Err(format!("`{field}` holds {}", other.kind_name())),
    }
}

fn set_text(v: &mut Value, field: &str, s: String) -> Result<(), String> {
    match v.field_mut(field) {
        Some(slot) => {
            *slot = Value::Str(s);
            Ok(())
        }
        None => Err(format!("null dereference writing `{field}`")),
    }
}

fn string(v: &Value) -> Result<String, String> {
    match v {
        Value::Str(s) => Ok(s.clone()),
        other => Err(format!("expected a string, got {}", other.kind_name())),
    }
}

fn int(v: &Value) -> Result<i32, String> {
    match v {
        Value::Int32(i) => Ok(*i),
        other => Err(format!("expected an int32, got {}", other.kind_name())),
    }
}

fn strings(v: &Value) -> Result<Vec<String>, String> {
    match v {
        Value::Arr { elems, .. } => elems.iter().map(string).collect(),
        other => Err(format!("expected an array, got {}", other.kind_name())),
    }
}

fn nothing(_: &mut [Value]) -> CallResult {
    Ok(None)
}

fn propagate_data(a: &mut [Value]) -> CallResult {
    if !matches!(a[2], Value::Bool(true)) {
        let s = text(&a[0], "s")?;
        set_text(&mut a[1], "s", s)?;
    }
    Ok(None)
}

fn get_imei(_: &mut [Value]) -> CallResult {
    Ok(Some(Value::str(DEVICE_ID)))
}

fn describe(a: &mut [Value]) -> CallResult {
    int(&a[0])?;
    Ok(Some(Value::str("count")))
}

fn scrub(a: &mut [Value]) -> CallResult {
    string(&a[0])?;
    Ok(Some(Value::str("[redacted]")))
}

fn join(a: &mut [Value]) -> CallResult {
    Ok(Some(Value::Str(strings(&a[0])?.concat())))
}

fn count(a: &mut [Value]) -> CallResult {
    Ok(Some(Value::Int32(strings(&a[0])?.len() as i32)))
}

fn echo(a: &mut [Value]) -> CallResult {
    Ok(Some(Value::Str(string(&a[0])?)))
}

fn pick_second(a: &mut [Value]) -> CallResult {
    Ok(Some(Value::Str(string(&a[1])?)))
}

fn bracket(a: &mut [Value]) -> CallResult {
    Ok(Some(Value::Str(format!("[{}]", string(&a[0])?))))
}

fn format_phone(a: &mut [Value]) -> CallResult {
    let phone = text(&a[0], "phone")?;
    set_text(&mut a[0], "phone", format!("tel:{phone}"))?;
    Ok(None)
}

fn set_secret(a: &mut [Value]) -> CallResult {
    let s = string(&a[1])?;
    set_text(&mut a[0], "val", s)?;
    Ok(None)
}

fn fill_from_device(a: &mut [Value]) -> CallResult {
    set_text(&mut a[0], "a", DEVICE_ID.to_string())?;
    set_text(&mut a[0], "b", LINE_NUMBER.to_string())?;
    Ok(None)
}

fn set_from_args(a: &mut [Value]) -> CallResult {
    let (x, y) = (string(&a[1])?, string(&a[2])?);
    set_text(&mut a[0], "a", x)?;
    set_text(&mut a[0], "b", y)?;
    Ok(None)
}

fn copy_fields(a: &mut [Value]) -> CallResult {
    let (x, y) = (text(&a[1], "a")?, text(&a[1], "b")?);
    set_text(&mut a[0], "a", x)?;
    set_text(&mut a[0], "b", y)?;
    Ok(None)
}

fn tick(a: &mut [Value]) -> CallResult {
    let n = TICKS.fetch_add(1, Ordering::Relaxed);
    set_text(&mut a[0], "s", n.to_string())?;
    Ok(None)
}

fn crash(_: &mut [Value]) -> CallResult {
    panic!("segmentation fault (simulated)");
}

fn hang(_: &mut [Value]) -> CallResult {
    loop {
        thread::sleep(Duration::from_millis(20));
    }
}

fn sum(a: &mut [Value]) -> CallResult {
    Ok(Some(Value::Int32(int(&a[0])?.wrapping_add(int(&a[1])?))))
}

fn entry(name: &str, params: Vec<TypeDesc>, returns: Option<TypeDesc>, behavior: Behavior, body: Body) -> CorpusEntry {
    CorpusEntry {
        sig: FunctionSig::new_static(name, params, returns),
        behavior,
        deterministic: behavior != Behavior::Nondeterministic,
        body,
    }
}

/// Every corpus function, sorted by name.
pub fn entries() -> Vec<CorpusEntry> {
    use Behavior::*;
    let s = || TypeDesc::Str;
    let i = || TypeDesc::Prim(PrimKind::Int32);
    let rec = TypeDesc::record;
    let mut v = vec![
        CorpusEntry {
            sig: FunctionSig::new_instance(
                "com.example.Data.propagateData",
                "Data",
                vec![rec("Eavesdropper"), TypeDesc::Prim(PrimKind::Bool)],
                None,
            ),
            behavior: ConditionalPropagation,
            deterministic: true,
            body: propagate_data,
        },
        entry("nfb.Leak.send", vec![s()], None, DirectLeak, nothing),
        entry("nfb.Source.getImei", vec![], Some(s()), ZeroArgStatic, get_imei),
        entry("nfb.NoSource.describe", vec![i()], Some(s()), NoLeak, describe),
        entry("nfb.Clean.scrub", vec![s()], Some(s()), NoLeak, scrub),
        entry(
            "nfb.Arr.join",
            vec![TypeDesc::array_of(s())],
            Some(s()),
            ArrayPropagation,
            join,
        ),
        entry(
            "nfb.Arr.count",
            vec![TypeDesc::array_of(s())],
            Some(i()),
            NoLeakArray,
            count,
        ),
        entry("nfb.DynReg.report", vec![s()], None, DirectLeak, nothing),
        entry("nfb.DynMulti.relay", vec![s()], Some(s()), FieldPropagation, echo),
        entry("nfb.DynMulti.emit", vec![s()], None, DirectLeak, nothing),
        entry("nfb.NoLeak.pick", vec![s(), s()], Some(s()), NoLeak, pick_second),
        entry("nfb.NoLeak.send", vec![s()], None, DirectLeak, nothing),
        entry(
            "nfb.Over.log(Ljava/lang/String;)V",
            vec![s()],
            None,
            DirectLeak,
            nothing,
        ),
        entry("nfb.Over.log(I)V", vec![i()], None, PureVoid, nothing),
        entry("nfb.Multi.relay", vec![s()], None, DirectLeak, nothing),
        entry("nfb.Multi.nativeLog", vec![s()], None, DirectLeak, nothing),
        entry("nfb.LibA.wrap", vec![s()], Some(s()), FieldPropagation, bracket),
        entry("nfb.LibB.emit", vec![s()], None, DirectLeak, nothing),
        entry("nfb.Complex.logName", vec![rec("Person")], None, DirectLeak, nothing),
        entry("nfb.Complex.logPhone", vec![rec("Person")], None, DirectLeak, nothing),
        entry("nfb.Complex.format", vec![rec("Person")], None, NoLeak, format_phone),
        entry(
            "nfb.Heap.setSecret",
            vec![rec("Box"), s()],
            None,
            FieldPropagation,
            set_secret,
        ),
        entry(
            "nfb.SetNative.fill",
            vec![rec("Info")],
            None,
            FieldPropagation,
            fill_from_device,
        ),
        entry(
            "nfb.SetArg.set",
            vec![rec("Info"), s(), s()],
            None,
            FieldPropagation,
            set_from_args,
        ),
        entry(
            "nfb.SetArgField.copy",
            vec![rec("Info"), rec("Info")],
            None,
            FieldPropagation,
            copy_fields,
        ),
        entry("nfb.Misc.tick", vec![rec("Data"), i()], None, Nondeterministic, tick),
        entry("nfb.Misc.crash", vec![rec("Data")], None, Crash, crash),
        entry("nfb.Misc.hang", vec![rec("Data")], None, Hang, hang),
        entry("nfb.Misc.sum", vec![i(), i()], Some(i()), FieldPropagation, sum),
        entry(
            "nfb.Misc.touch",
            vec![i(), TypeDesc::Prim(PrimKind::Bool)],
            None,
            PureVoid,
            nothing,
        ),
    ];
    v.sort_by(|a, b| a.sig.name.cmp(&b.sig.name));
    v
}

pub fn find(name: &str) -> Option<CorpusEntry> {
    entries().into_iter().find(|e| e.sig.name == name)
}

/// Manifest covering the whole corpus.
pub fn manifest() -> Manifest {
    Manifest {
        types: registry(),
        functions: entries().into_iter().map(|e| e.sig).collect(),
    }
}

/// Manifest restricted to the named functions.
pub fn manifest_of(names: &[&str]) -> Manifest {
    Manifest {
        types: registry(),
        functions: entries()
            .into_iter()
            .filter(|e| names.contains(&e.name()))
            .map(|e| e.sig)
            .collect(),
    }
}
