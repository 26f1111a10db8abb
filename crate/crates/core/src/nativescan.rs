//! Control-flow scan of native images for source and sink usage.
//!
//! A native image is a JSON description of native functions (basic blocks
//! holding resolved callsites), a registration table and an export list.
//! Functions that reach a source or sink are mapped back to the Java-side
//! bridge methods that invoke them, which then stand in for the source or
//! sink in the Java analysis.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::typesys::TypeDesc;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScanError {
    #[error("schema error at {location}: {detail}")]
    Schema { location: String, detail: String },
    #[error("malformed method signature `{0}`")]
    BadSignature(String),
}

fn schema(location: impl Into<String>, detail: impl Into<String>) -> ScanError {
    ScanError::Schema {
        location: location.into(),
        detail: detail.into(),
    }
}

/// A method name, optionally with a JVM descriptor: `com.x.A.leak` or
/// `com.x.A.leak(Ljava/lang/String;)V`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MethodSig {
    pub name: String,
    pub descriptor: Option<String>,
}

impl MethodSig {
    pub fn new(name: impl Into<String>) -> Self {
        MethodSig {
            name: name.into(),
            descriptor: None,
        }
    }

    pub fn with_descriptor(name: impl Into<String>, descriptor: impl Into<String>) -> Self {
        MethodSig {
            name: name.into(),
            descriptor: Some(descriptor.into()),
        }
    }

    /// Same name, and descriptors agree wherever both are known. A bare
    /// parameter list `(…)` matches any return type.
    pub fn matches(&self, other: &MethodSig) -> bool {
        if self.name != other.name {
            return false;
        }
        match (&self.descriptor, &other.descriptor) {
            (Some(a), Some(b)) => {
                let split = |d: &str| match d.find(')') {
                    Some(i) => (d[..=i].to_string(), d[i + 1..].to_string()),
                    None => (d.to_string(), String::new()),
                };
                let ((pa, ra), (pb, rb)) = (split(a), split(b));
                pa == pb && (ra.is_empty() || rb.is_empty() || ra == rb)
            }
            _ => true,
        }
    }

    /// The simple method name after the last `.`.
    pub fn simple_name(&self) -> &str {
        self.name.rsplit('.').next().unwrap_or(&self.name)
    }
}

impl fmt::Display for MethodSig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if let Some(d) = &self.descriptor {
            f.write_str(d)?;
        }
        Ok(())
    }
}

impl FromStr for MethodSig {
    type Err = ScanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, desc) = match s.find('(') {
            Some(i) => (&s[..i], Some(&s[i..])),
            None => (s, None),
        };
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(ScanError::BadSignature(s.to_string()));
        }
        if let Some(d) = desc {
            if !d.contains(')') {
                return Err(ScanError::BadSignature(s.to_string()));
            }
        }
        Ok(MethodSig {
            name: name.to_string(),
            descriptor: desc.map(str::to_string),
        })
    }
}

impl Serialize for MethodSig {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MethodSig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Callsite {
    /// A call back into Java (the `Call<Type>Method` family), resolved.
    JavaCall { method: MethodSig },
    /// A call into a native library function such as `__android_log_print`.
    NativeLibCall { symbol: String },
    /// A call to another function of the same image.
    LocalCall { function: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: u32,
    #[serde(default)]
    pub callsites: Vec<Callsite>,
    #[serde(default)]
    pub successors: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NativeFunc {
    pub name: String,
    pub entry: u32,
    pub blocks: Vec<Block>,
}

impl NativeFunc {
    /// Straight-line function: one block holding `callsites`.
    pub fn single_block(name: impl Into<String>, callsites: Vec<Callsite>) -> Self {
        NativeFunc {
            name: name.into(),
            entry: 0,
            blocks: vec![Block {
                id: 0,
                callsites,
                successors: Vec::new(),
            }],
        }
    }

    /// Callsites in blocks reachable from the entry block. Branch
    /// conditions are not evaluated.
    pub fn reachable_callsites(&self) -> Vec<&Callsite> {
        let by_id: BTreeMap<u32, &Block> = self.blocks.iter().map(|b| (b.id, b)).collect();
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([self.entry]);
        let mut out = Vec::new();
        while let Some(id) = queue.pop_front() {
            if !seen.insert(id) {
                continue;
            }
            if let Some(b) = by_id.get(&id) {
                out.extend(b.callsites.iter());
                queue.extend(b.successors.iter().copied());
            }
        }
        out
    }
}

/// A dynamic registration entry (`JNINativeMethod`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registration {
    pub entry: String,
    pub java_name: String,
    pub java_sig: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NativeImage {
    pub functions: Vec<NativeFunc>,
    #[serde(default, alias = "registration_table")]
    pub registrations: Vec<Registration>,
    #[serde(default)]
    pub exports: Vec<String>,
}

impl NativeImage {
    pub fn function(&self, name: &str) -> Option<&NativeFunc> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        let mut names = BTreeSet::new();
        for (fi, f) in self.functions.iter().enumerate() {
            let loc = format!("functions[{fi}] ({})", f.name);
            if !names.insert(f.name.as_str()) {
                return Err(schema(loc, "duplicate function name"));
            }
            let mut ids = BTreeSet::new();
            for b in &f.blocks {
                if !ids.insert(b.id) {
                    return Err(schema(&loc, format!("duplicate block id {}", b.id)));
                }
            }
            if !ids.contains(&f.entry) {
                return Err(schema(&loc, format!("entry block {} does not exist", f.entry)));
            }
            for b in &f.blocks {
                for s in &b.successors {
                    if !ids.contains(s) {
                        return Err(schema(
                            format!("{loc}.blocks[{}]", b.id),
                            format!("dangling successor {s}"),
                        ));
                    }
                }
            }
        }
        for f in &self.functions {
            for b in &f.blocks {
                for c in &b.callsites {
                    if let Callsite::LocalCall { function } = c {
                        if !names.contains(function.as_str()) {
                            return Err(schema(
                                format!("{}.blocks[{}]", f.name, b.id),
                                format!("local call to unknown function `{function}`"),
                            ));
                        }
                    }
                }
            }
        }
        for (i, r) in self.registrations.iter().enumerate() {
            if !names.contains(r.entry.as_str()) {
                return Err(schema(
                    format!("registrations[{i}]"),
                    format!("entry `{}` is not a function of the image", r.entry),
                ));
            }
            format!("{}{}", r.java_name, r.java_sig)
                .parse::<MethodSig>()
                .map_err(|e| schema(format!("registrations[{i}]"), e.to_string()))?;
        }
        for (i, e) in self.exports.iter().enumerate() {
            if !names.contains(e.as_str()) {
                return Err(schema(
                    format!("exports[{i}]"),
                    format!("`{e}` is not a function of the image"),
                ));
            }
        }
        Ok(())
    }

    /// Merges several images (multiple native libraries of one app).
    pub fn combine(images: &[NativeImage]) -> Result<NativeImage, ScanError> {
        let mut out = NativeImage::default();
        for img in images {
            out.functions.extend(img.functions.iter().cloned());
            out.registrations.extend(img.registrations.iter().cloned());
            out.exports.extend(img.exports.iter().cloned());
        }
        out.validate()?;
        Ok(out)
    }
}

pub fn parse_image(doc: &serde_json::Value) -> Result<NativeImage, ScanError> {
    let img: NativeImage = serde_json::from_value(doc.clone()).map_err(|e| schema("document", e.to_string()))?;
    img.validate()?;
    Ok(img)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Source,
    Sink,
}

/// One line of a source/sink list.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SsEntry {
    pub method: MethodSig,
    pub category: Category,
    /// Return types of a source (several for proxies over mixed sources).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub returns: Vec<TypeDesc>,
    /// For proxies: the native function whose body uses the source or sink.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub native: Option<String>,
}

impl SsEntry {
    pub fn source(method: MethodSig, returns: Vec<TypeDesc>) -> Self {
        SsEntry {
            method,
            category: Category::Source,
            returns,
            native: None,
        }
    }

    pub fn sink(method: MethodSig) -> Self {
        SsEntry {
            method,
            category: Category::Sink,
            returns: Vec::new(),
            native: None,
        }
    }
}

/// The merged source/sink list (`ss.json`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSinkList {
    pub entries: Vec<SsEntry>,
}

impl SourceSinkList {
    pub fn new(entries: impl IntoIterator<Item = SsEntry>) -> Self {
        let mut l = SourceSinkList::default();
        for e in entries {
            l.add(e);
        }
        l
    }

    fn find(&self, m: &MethodSig, cat: Category) -> Option<&SsEntry> {
        self.entries.iter().find(|e| e.category == cat && e.method.matches(m))
    }

    pub fn source_entry(&self, m: &MethodSig) -> Option<&SsEntry> {
        self.find(m, Category::Source)
    }

    pub fn sink_entry(&self, m: &MethodSig) -> Option<&SsEntry> {
        self.find(m, Category::Sink)
    }

    pub fn is_source(&self, m: &MethodSig) -> bool {
        self.source_entry(m).is_some()
    }

    pub fn is_sink(&self, m: &MethodSig) -> bool {
        self.sink_entry(m).is_some()
    }

    pub fn sources(&self) -> impl Iterator<Item = &SsEntry> {
        self.entries.iter().filter(|e| e.category == Category::Source)
    }

    pub fn sinks(&self) -> impl Iterator<Item = &SsEntry> {
        self.entries.iter().filter(|e| e.category == Category::Sink)
    }

    /// Inserts `e`, or unions its return types into an existing exact
    /// entry. Returns whether the list changed.
    pub fn add(&mut self, e: SsEntry) -> bool {
        if let Some(existing) = self
            .entries
            .iter_mut()
            .find(|x| x.category == e.category && x.method == e.method)
        {
            let before = existing.returns.len();
            for t in e.returns {
                if !existing.returns.contains(&t) {
                    existing.returns.push(t);
                }
            }
            existing.returns.sort();
            if existing.native.is_none() && e.native.is_some() {
                existing.native = e.native;
                return true;
            }
            return existing.returns.len() != before;
        }
        let mut e = e;
        e.returns.sort();
        e.returns.dedup();
        self.entries.push(e);
        self.entries.sort();
        true
    }

    /// Adds every entry of `other`; returns the entries that were new.
    pub fn extend(&mut self, other: &SourceSinkList) -> SourceSinkList {
        let mut added = SourceSinkList::default();
        for e in &other.entries {
            if !self
                .entries
                .iter()
                .any(|x| x.category == e.category && x.method.matches(&e.method))
                && self.add(e.clone())
            {
                added.add(e.clone());
            }
        }
        added
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains_entries_of(&self, other: &SourceSinkList) -> bool {
        other.entries.iter().all(|e| {
            self.entries
                .iter()
                .any(|x| x.category == e.category && x.method.matches(&e.method))
        })
    }
}

/// Sources and sinks a native function uses, directly or through callees.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Uses {
    pub sources: BTreeSet<MethodSig>,
    pub sinks: BTreeSet<MethodSig>,
}

impl Uses {
    pub fn is_flagged(&self) -> bool {
        !self.sources.is_empty() || !self.sinks.is_empty()
    }
}

fn callsite_sig(c: &Callsite) -> Option<MethodSig> {
    match c {
        Callsite::JavaCall { method } => Some(method.clone()),
        Callsite::NativeLibCall { symbol } => Some(MethodSig::new(symbol)),
        Callsite::LocalCall { .. } => None,
    }
}

/// Direct source/sink callsites per function.
pub fn find_ss_callsites(img: &NativeImage, list: &SourceSinkList) -> BTreeMap<String, Uses> {
    img.functions
        .iter()
        .map(|f| {
            let mut uses = Uses::default();
            for sig in f.reachable_callsites().into_iter().filter_map(callsite_sig) {
                if list.is_source(&sig) {
                    uses.sources.insert(sig.clone());
                }
                if list.is_sink(&sig) {
                    uses.sinks.insert(sig);
                }
            }
            (f.name.clone(), uses)
        })
        .collect()
}

/// Closes `direct` over local calls: a caller uses whatever its callees use.
pub fn propagate_reachability(img: &NativeImage, direct: &BTreeMap<String, Uses>) -> BTreeMap<String, Uses> {
    let mut callers: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for f in &img.functions {
        for c in f.reachable_callsites() {
            if let Callsite::LocalCall { function } = c {
                callers.entry(function.as_str()).or_default().insert(f.name.as_str());
            }
        }
    }
    let mut flags = direct.clone();
    for f in &img.functions {
        flags.entry(f.name.clone()).or_default();
    }
    let mut work: VecDeque<String> = flags.keys().cloned().collect();
    while let Some(callee) = work.pop_front() {
        let uses = flags[&callee].clone();
        for caller in callers.get(callee.as_str()).into_iter().flatten() {
            let entry = flags.get_mut(*caller).expect("every function has flags");
            let before = (entry.sources.len(), entry.sinks.len());
            entry.sources.extend(uses.sources.iter().cloned());
            entry.sinks.extend(uses.sinks.iter().cloned());
            if (entry.sources.len(), entry.sinks.len()) != before {
                work.push_back(caller.to_string());
            }
        }
    }
    flags
}

/// Decodes a `Java_<class>_<method>[__<params>]` export into a method
/// signature. Returns `None` for names that are not JNI exports.
pub fn demangle_jni(symbol: &str) -> Option<MethodSig> {
    let body = symbol.strip_prefix("Java_")?;
    let (main, params) = match body.find("__") {
        Some(i) => (&body[..i], Some(&body[i + 2..])),
        None => (body, None),
    };
    let name = decode_component(main, '.')?;
    if !name.contains('.') {
        return None;
    }
    let descriptor = match params {
        Some(p) => Some(format!("({})", decode_component(p, '/')?)),
        None => None,
    };
    Some(MethodSig { name, descriptor })
}

fn decode_component(s: &str, sep: char) -> Option<String> {
    let mut out = String::new();
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '_' {
            out.push(c);
            continue;
        }
        match chars.peek() {
            Some('1') => {
                chars.next();
                out.push('_');
            }
            Some('2') => {
                chars.next();
                out.push(';');
            }
            Some('3') => {
                chars.next();
                out.push('[');
            }
            Some('0') => {
                chars.next();
                let hex: String = chars.by_ref().take(4).collect();
                let code = u32::from_str_radix(&hex, 16).ok().filter(|_| hex.len() == 4)?;
                out.push(char::from_u32(code)?);
            }
            _ => out.push(sep),
        }
    }
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Sink,
    Both,
}

/// A Java-side native method standing in for a source or sink.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bridge {
    pub method: MethodSig,
    pub native: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_returns: Vec<TypeDesc>,
}

/// Bridge methods of a native function: its registrations and its JNI
/// export name, if any.
pub fn bridges_of(img: &NativeImage, function: &str) -> Vec<MethodSig> {
    let mut out: Vec<MethodSig> = img
        .registrations
        .iter()
        .filter(|r| r.entry == function)
        .map(|r| MethodSig::with_descriptor(&r.java_name, &r.java_sig))
        .collect();
    if img.exports.iter().any(|e| e == function) {
        if let Some(m) = demangle_jni(function) {
            out.push(m);
        }
    }
    out
}

/// Maps flagged functions to bridge methods. Flagged functions without a
/// bridge are returned separately (they are internal helpers).
pub fn map_bridges(
    img: &NativeImage,
    flags: &BTreeMap<String, Uses>,
    list: &SourceSinkList,
) -> (Vec<Bridge>, Vec<String>) {
    let mut bridges = Vec::new();
    let mut unmapped = Vec::new();
    for (function, uses) in flags.iter().filter(|(_, u)| u.is_flagged()) {
        let methods = bridges_of(img, function);
        if methods.is_empty() {
            warn!("native function `{function}` uses a source or sink but has no bridge");
            unmapped.push(function.clone());
            continue;
        }
        let role = match (uses.sources.is_empty(), uses.sinks.is_empty()) {
            (false, false) => Role::Both,
            (false, true) => Role::Source,
            _ => Role::Sink,
        };
        let mut source_returns: Vec<TypeDesc> = uses
            .sources
            .iter()
            .filter_map(|s| list.source_entry(s))
            .flat_map(|e| e.returns.iter().cloned())
            .collect();
        source_returns.sort();
        source_returns.dedup();
        for method in methods {
            bridges.push(Bridge {
                method,
                native: function.clone(),
                role,
                source_returns: source_returns.clone(),
            });
        }
    }
    (bridges, unmapped)
}

/// Result of one scan: the bridges found and the list entries they add.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanResult {
    pub delta: SourceSinkList,
    pub bridges: Vec<Bridge>,
    pub unmapped: Vec<String>,
}

/// Runs the whole scan and returns the list entries not yet in `list`.
pub fn scan(img: &NativeImage, list: &SourceSinkList) -> ScanResult {
    let direct = find_ss_callsites(img, list);
    let flags = propagate_reachability(img, &direct);
    let (bridges, unmapped) = map_bridges(img, &flags, list);
    let mut delta = SourceSinkList::default();
    for b in &bridges {
        let mut proposed = Vec::new();
        if matches!(b.role, Role::Source | Role::Both) {
            proposed.push(SsEntry {
                native: Some(b.native.clone()),
                ..SsEntry::source(b.method.clone(), b.source_returns.clone())
            });
        }
        if matches!(b.role, Role::Sink | Role::Both) {
            proposed.push(SsEntry {
                native: Some(b.native.clone()),
                ..SsEntry::sink(b.method.clone())
            });
        }
        for e in proposed {
            let known = match e.category {
                Category::Source => list.source_entry(&e.method),
                Category::Sink => list.sink_entry(&e.method),
            };
            let covered = known.is_some_and(|k| e.returns.iter().all(|t| k.returns.contains(t)));
            if !covered {
                delta.add(e);
            }
        }
    }
    ScanResult {
        delta,
        bridges,
        unmapped,
    }
}

/// Java methods each native function calls back (directly, in reachable
/// blocks).
pub fn java_callees(img: &NativeImage) -> BTreeMap<String, BTreeSet<MethodSig>> {
    img.functions
        .iter()
        .map(|f| {
            let calls = f
                .reachable_callsites()
                .into_iter()
                .filter_map(|c| match c {
                    Callsite::JavaCall { method } => Some(method.clone()),
                    _ => None,
                })
                .collect();
            (f.name.clone(), calls)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn lib(symbol: &str) -> Callsite {
        Callsite::NativeLibCall { symbol: symbol.into() }
    }

    fn local(f: &str) -> Callsite {
        Callsite::LocalCall { function: f.into() }
    }

    fn java(m: &str) -> Callsite {
        Callsite::JavaCall {
            method: m.parse().unwrap(),
        }
    }

    fn base_list() -> SourceSinkList {
        SourceSinkList::new([
            SsEntry::sink(MethodSig::new("__android_log_print")),
            SsEntry::source(
                MethodSig::new("android.telephony.TelephonyManager.getDeviceId"),
                vec![TypeDesc::Str],
            ),
        ])
    }

    #[test]
    fn signature_text_and_matching() {
        let full: MethodSig = "com.x.A.leak(Ljava/lang/String;)V".parse().unwrap();
        assert_eq!(full.to_string(), "com.x.A.leak(Ljava/lang/String;)V");
        assert_eq!(full.simple_name(), "leak");
        assert!(full.matches(&MethodSig::new("com.x.A.leak")));
        assert!(full.matches(&"com.x.A.leak(Ljava/lang/String;)".parse().unwrap()));
        assert!(!full.matches(&"com.x.A.leak(I)V".parse().unwrap()));
        assert!(!full.matches(&MethodSig::new("com.x.A.other")));
        assert!("com.x.A.leak(".parse::<MethodSig>().is_err());
    }

    #[test]
    fn parse_minimal_image() {
        let doc = json!({"functions": [{"name": "f", "entry": 0, "blocks": [{"id": 0}]}]});
        let img = parse_image(&doc).unwrap();
        assert_eq!(img.functions.len(), 1);
    }

    #[test]
    fn parse_rejects_dangling_references() {
        let doc = json!({"functions": [{"name": "f", "entry": 0, "blocks": [{"id": 0, "successors": [7]}]}]});
        let err = parse_image(&doc).unwrap_err();
        assert!(err.to_string().contains("dangling successor 7"), "{err}");
        let doc = json!({
            "functions": [{"name": "f", "entry": 0, "blocks": [{"id": 0}]}],
            "registrations": [{"entry": "missing", "java_name": "a.B.c", "java_sig": "()V"}]
        });
        assert!(matches!(parse_image(&doc), Err(ScanError::Schema { .. })));
        let doc = json!({"functions": [{"name": "f", "entry": 3, "blocks": [{"id": 0}]}]});
        assert!(parse_image(&doc).is_err());
    }

    #[test]
    fn direct_callsites() {
        let img = NativeImage {
            functions: vec![
                NativeFunc::single_block("logger", vec![lib("__android_log_print")]),
                NativeFunc::single_block("quiet", vec![lib("strlen")]),
                NativeFunc::single_block(
                    "imei",
                    vec![java(
                        "android.telephony.TelephonyManager.getDeviceId()Ljava/lang/String;",
                    )],
                ),
            ],
            ..Default::default()
        };
        let d = find_ss_callsites(&img, &base_list());
        assert_eq!(
            d["logger"].sinks,
            BTreeSet::from([MethodSig::new("__android_log_print")])
        );
        assert!(!d["quiet"].is_flagged());
        assert_eq!(d["imei"].sources.len(), 1);
    }

    #[test]
    fn callers_inherit_callee_uses() {
        let img = NativeImage {
            functions: vec![
                NativeFunc::single_block("f", vec![local("g")]),
                NativeFunc::single_block("g", vec![local("f"), lib("__android_log_print")]),
                NativeFunc::single_block("h", vec![]),
            ],
            ..Default::default()
        };
        let flags = propagate_reachability(&img, &find_ss_callsites(&img, &base_list()));
        assert!(!flags["f"].sinks.is_empty());
        assert!(!flags["g"].sinks.is_empty());
        assert!(!flags["h"].is_flagged());
    }

    #[test]
    fn unreachable_blocks_are_ignored_but_branches_are_not_evaluated() {
        let f = NativeFunc {
            name: "f".into(),
            entry: 0,
            blocks: vec![
                Block {
                    id: 0,
                    callsites: vec![],
                    successors: vec![1],
                },
                Block {
                    id: 1,
                    callsites: vec![lib("__android_log_print")],
                    successors: vec![],
                },
                Block {
                    id: 2,
                    callsites: vec![lib("other_sink")],
                    successors: vec![],
                },
            ],
        };
        assert_eq!(f.reachable_callsites().len(), 1);
    }

    #[test]
    fn jni_demangling() {
        assert_eq!(
            demangle_jni("Java_com_x_A_getId"),
            Some(MethodSig::new("com.x.A.getId"))
        );
        assert_eq!(
            demangle_jni("Java_com_x_A_get_1id"),
            Some(MethodSig::new("com.x.A.get_id"))
        );
        assert_eq!(
            demangle_jni("Java_com_x_A_leak__Ljava_lang_String_2I"),
            Some(MethodSig::with_descriptor("com.x.A.leak", "(Ljava/lang/String;I)"))
        );
        assert_eq!(
            demangle_jni("Java_com_x_A_f_000e9"),
            Some(MethodSig::new("com.x.A.f\u{e9}"))
        );
        assert_eq!(demangle_jni("helper"), None);
    }

    #[test]
    fn bridges_via_registration_and_export() {
        let img = NativeImage {
            functions: vec![
                NativeFunc::single_block("fn_impl", vec![lib("__android_log_print")]),
                NativeFunc::single_block(
                    "Java_com_x_A_getId",
                    vec![java("android.telephony.TelephonyManager.getDeviceId")],
                ),
                NativeFunc::single_block("orphan", vec![lib("__android_log_print")]),
            ],
            registrations: vec![Registration {
                entry: "fn_impl".into(),
                java_name: "com.x.A.leak".into(),
                java_sig: "(Ljava/lang/String;)V".into(),
            }],
            exports: vec!["Java_com_x_A_getId".into()],
        };
        img.validate().unwrap();
        let r = scan(&img, &base_list());
        assert_eq!(r.unmapped, vec!["orphan".to_string()]);
        assert!(r.delta.is_sink(&MethodSig::new("com.x.A.leak")));
        let src = r.delta.source_entry(&MethodSig::new("com.x.A.getId")).unwrap();
        assert_eq!(src.returns, vec![TypeDesc::Str]);
        assert_eq!(src.native.as_deref(), Some("Java_com_x_A_getId"));
        // A second scan with the grown list adds nothing.
        let mut grown = base_list();
        grown.extend(&r.delta);
        assert!(scan(&img, &grown).delta.is_empty());
    }

    #[test]
    fn list_document_round_trip() {
        let l = base_list();
        let doc = serde_json::to_string(&l).unwrap();
        assert!(doc.contains("\"category\":\"sink\""));
        let back: SourceSinkList = serde_json::from_str(&doc).unwrap();
        assert_eq!(back, l);
    }
}
