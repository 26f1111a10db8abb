//! Growing the source/sink list over several folds.
//!
//! Fold 1 is the plain native scan. Each later fold looks at the Java
//! methods that native code calls back (`m`). Backward: a method of `m`
//! whose data reaches a native sink bridge becomes a sink. Forward: a
//! method of `m` that receives or returns data of a native source bridge
//! becomes a source. The native image is then rescanned with the grown
//! list. Within a fold the backward update runs first.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::executor::FunctionSig;
use crate::nativescan::{self, MethodSig, NativeImage, SourceSinkList, SsEntry};
use crate::stubgen::{proxy_source_stub, Stub};
use crate::taintcore::{analyze, AnalyzeOptions, AppIR, Flow, TaintError};
use crate::typesys::TypeRegistry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    BackwardSink,
    ForwardSource,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FoldConfig {
    pub max_folds: usize,
    pub direction: Direction,
}

impl Default for FoldConfig {
    fn default() -> Self {
        FoldConfig {
            max_folds: 2,
            direction: Direction::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub added: SourceSinkList,
    /// Flows that justified the Java-side additions of this fold.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flows: Vec<Flow>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldTrace {
    pub folds: Vec<FoldRecord>,
}

impl FoldTrace {
    pub fn reached_fixpoint(&self) -> bool {
        self.folds.last().is_some_and(|f| f.added.is_empty())
    }
}

/// Merges proxy-source stubs into `stubs` for every native source bridge
/// of `ss` declared in `natives`.
pub fn apply_proxy_stubs(
    types: &TypeRegistry,
    natives: &[FunctionSig],
    ss: &SourceSinkList,
    stubs: &BTreeMap<String, Stub>,
) -> BTreeMap<String, Stub> {
    let mut out = stubs.clone();
    for e in ss.sources().filter(|e| e.native.is_some()) {
        let Some(sig) = natives.iter().find(|n| MethodSig::new(&n.name).matches(&e.method)) else {
            continue;
        };
        let proxy = proxy_source_stub(types, sig, &e.returns);
        match out.get_mut(&sig.name) {
            Some(existing) => existing.merge(&proxy),
            None => {
                out.insert(sig.name.clone(), proxy);
            }
        }
    }
    out
}

/// App methods that native code calls back.
pub fn native_callbacks(app: &AppIR, img: &NativeImage) -> BTreeSet<MethodSig> {
    nativescan::java_callees(img)
        .into_values()
        .flatten()
        .filter(|m| app.defines(m))
        .collect()
}

fn native_bridges<'a>(app: &AppIR, entries: impl Iterator<Item = &'a SsEntry>) -> Vec<MethodSig> {
    entries
        .filter(|e| app.native(&e.method.name).is_some())
        .map(|e| e.method.clone())
        .collect()
}

fn query(
    app: &AppIR,
    sources: &[SsEntry],
    sinks: &[SsEntry],
    stubs: &BTreeMap<String, Stub>,
) -> Result<Vec<Flow>, TaintError> {
    let list = SourceSinkList::new(sources.iter().chain(sinks).cloned());
    let report = analyze(app, &list, stubs, AnalyzeOptions::default())?;
    let named = |set: &[SsEntry], name: &str| {
        name.parse::<MethodSig>()
            .is_ok_and(|n| set.iter().any(|e| e.method.matches(&n)))
    };
    Ok(report
        .flows
        .into_iter()
        .filter(|f| named(sources, &f.source) && named(sinks, &f.sink))
        .collect())
}

fn rescan(img: &NativeImage, ss: &mut SourceSinkList) -> SourceSinkList {
    let mut added = SourceSinkList::default();
    for e in nativescan::scan(img, ss).delta.entries {
        if ss.add(e.clone()) {
            added.add(e);
        }
    }
    added
}

/// One backward step: callbacks whose data reaches a native sink bridge
/// become sinks. Returns the added entries and the justifying flows.
pub fn backward_sink_update(
    app: &AppIR,
    img: &NativeImage,
    ss: &SourceSinkList,
    stubs: &BTreeMap<String, Stub>,
) -> Result<(SourceSinkList, Vec<Flow>), TaintError> {
    let bridges = native_bridges(app, ss.sinks());
    if bridges.is_empty() {
        return Ok(Default::default());
    }
    let temp_sources: Vec<SsEntry> = native_callbacks(app, img)
        .into_iter()
        .filter(|m| !ss.is_sink(m))
        .map(|m| SsEntry::source(m, Vec::new()))
        .collect();
    let sinks: Vec<SsEntry> = bridges.into_iter().map(SsEntry::sink).collect();
    let flows = query(app, &temp_sources, &sinks, stubs)?;
    let mut added = SourceSinkList::default();
    for f in &flows {
        if let Some(e) = temp_sources.iter().find(|e| e.method.name == f.source) {
            added.add(SsEntry::sink(e.method.clone()));
        }
    }
    Ok((added, flows))
}

/// One forward step: callbacks that receive or return data of a native
/// source bridge become sources.
pub fn forward_source_update(
    app: &AppIR,
    img: &NativeImage,
    ss: &SourceSinkList,
    stubs: &BTreeMap<String, Stub>,
) -> Result<(SourceSinkList, Vec<Flow>), TaintError> {
    let bridges = native_bridges(app, ss.sources());
    if bridges.is_empty() {
        return Ok(Default::default());
    }
    let temp_sinks: Vec<SsEntry> = native_callbacks(app, img)
        .into_iter()
        .filter(|m| !ss.is_source(m))
        .map(SsEntry::sink)
        .collect();
    let sources: Vec<SsEntry> = bridges.into_iter().map(|m| SsEntry::source(m, Vec::new())).collect();
    let flows = query(app, &sources, &temp_sinks, stubs)?;
    let mut added = SourceSinkList::default();
    for f in &flows {
        if let Some(e) = temp_sinks.iter().find(|e| e.method.name == f.sink) {
            let returns = app
                .method(&e.method.name)
                .and_then(|m| m.returns.clone())
                .into_iter()
                .collect();
            added.add(SsEntry::source(e.method.clone(), returns));
        }
    }
    Ok((added, flows))
}

type Update = fn(
    &AppIR,
    &NativeImage,
    &SourceSinkList,
    &BTreeMap<String, Stub>,
) -> Result<(SourceSinkList, Vec<Flow>), TaintError>;

/// Runs up to `max_folds` folds, stopping after the first fold that adds
/// nothing. Returns the final list, the stubs with proxy-source taint for
/// every native source bridge, and the trace.
pub fn run_folds(
    app: &AppIR,
    img: &NativeImage,
    ss: &SourceSinkList,
    stubs: &BTreeMap<String, Stub>,
    cfg: &FoldConfig,
) -> Result<(SourceSinkList, BTreeMap<String, Stub>, FoldTrace), TaintError> {
    let mut list = ss.clone();
    let mut trace = FoldTrace::default();
    let first = rescan(img, &mut list);
    let mut done = first.is_empty();
    trace.folds.push(FoldRecord {
        fold: 1,
        added: first,
        flows: Vec::new(),
    });
    let mut current_stubs = apply_proxy_stubs(&app.types, &app.natives, &list, stubs);
    for fold in 2..=cfg.max_folds {
        if done {
            break;
        }
        let mut added = SourceSinkList::default();
        let mut flows = Vec::new();
        let mut steps: Vec<Update> = Vec::new();
        if matches!(cfg.direction, Direction::BackwardSink | Direction::Both) {
            steps.push(backward_sink_update);
        }
        if matches!(cfg.direction, Direction::ForwardSource | Direction::Both) {
            steps.push(forward_source_update);
        }
        for step in steps {
            let (delta, why) = step(app, img, &list, &current_stubs)?;
            for e in delta.entries {
                if list.add(e.clone()) {
                    added.add(e);
                }
            }
            added.extend(&rescan(img, &mut list));
            flows.extend(why);
            current_stubs = apply_proxy_stubs(&app.types, &app.natives, &list, stubs);
        }
        flows.sort();
        flows.dedup();
        done = added.is_empty();
        trace.folds.push(FoldRecord { fold, added, flows });
    }
    Ok((list, current_stubs, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nativescan::{Callsite, NativeFunc, Registration};
    use crate::typesys::TypeDesc;
    use serde_json::json;

    fn base() -> SourceSinkList {
        SourceSinkList::new([
            SsEntry::sink(MethodSig::new("__android_log_print")),
            SsEntry::source(
                MethodSig::new("android.telephony.TelephonyManager.getDeviceId"),
                vec![TypeDesc::Str],
            ),
            SsEntry::sink(MethodSig::new("android.util.Log.v")),
        ])
    }

    fn reg(entry: &str, java: &str, sig: &str) -> Registration {
        Registration {
            entry: entry.into(),
            java_name: java.into(),
            java_sig: sig.into(),
        }
    }

    /// `a.M.helper(s)` passes its argument to native `a.M.nativeLog`, which
    /// logs. Native `a.M.relay` calls `helper` back.
    fn backward_scenario() -> (AppIR, NativeImage) {
        let app: AppIR = serde_json::from_value(json!({
            "natives": [
                {"name": "a.M.nativeLog", "static": true, "params": [{"kind": "string"}]},
                {"name": "a.M.relay", "static": true, "params": [{"kind": "string"}]}
            ],
            "methods": [
                {"name": "a.M.helper", "params": [{"name": "s", "type": {"kind": "string"}}],
                 "body": [{"op": "call_native", "method": "a.M.nativeLog", "args": ["s"]}]},
                {"name": "a.M.main", "locals": {"x": {"kind": "string"}}, "body": [
                    {"op": "call_source", "ret": "x", "method": "android.telephony.TelephonyManager.getDeviceId"},
                    {"op": "call_native", "method": "a.M.relay", "args": ["x"]}
                ]}
            ],
            "entries": ["a.M.main"]
        }))
        .unwrap();
        let img = NativeImage {
            functions: vec![
                NativeFunc::single_block(
                    "log_impl",
                    vec![Callsite::NativeLibCall {
                        symbol: "__android_log_print".into(),
                    }],
                ),
                NativeFunc::single_block(
                    "relay_impl",
                    vec![Callsite::JavaCall {
                        method: MethodSig::new("a.M.helper"),
                    }],
                ),
            ],
            registrations: vec![
                reg("log_impl", "a.M.nativeLog", "(Ljava/lang/String;)V"),
                reg("relay_impl", "a.M.relay", "(Ljava/lang/String;)V"),
            ],
            exports: vec![],
        };
        (app, img)
    }

    #[test]
    fn helper_becomes_a_sink_in_fold_two() {
        let (app, img) = backward_scenario();
        let cfg = FoldConfig {
            max_folds: 3,
            ..Default::default()
        };
        let (list, _, trace) = run_folds(&app, &img, &base(), &BTreeMap::new(), &cfg).unwrap();
        assert!(trace.folds[0].added.is_sink(&MethodSig::new("a.M.nativeLog")));
        assert!(!trace.folds[0].added.is_sink(&MethodSig::new("a.M.helper")));
        assert!(trace.folds[1].added.is_sink(&MethodSig::new("a.M.helper")));
        assert!(trace.folds[1].added.is_sink(&MethodSig::new("a.M.relay")));
        assert!(trace.folds[2].added.is_empty());
        assert!(trace.reached_fixpoint());
        assert!(list.contains_entries_of(&base()));
    }

    #[test]
    fn one_fold_is_the_plain_scan() {
        let (app, img) = backward_scenario();
        let cfg = FoldConfig {
            max_folds: 1,
            ..Default::default()
        };
        let (list, _, trace) = run_folds(&app, &img, &base(), &BTreeMap::new(), &cfg).unwrap();
        let mut plain = base();
        plain.extend(&nativescan::scan(&img, &base()).delta);
        assert_eq!(list, plain);
        assert_eq!(trace.folds.len(), 1);
    }

    #[test]
    fn no_native_sinks_means_no_growth() {
        let (app, _) = backward_scenario();
        let img = NativeImage::default();
        let (list, _, trace) = run_folds(&app, &img, &base(), &BTreeMap::new(), &FoldConfig::default()).unwrap();
        assert_eq!(list, base());
        assert_eq!(trace.folds.len(), 1);
        let (delta, _) = backward_sink_update(&app, &img, &base(), &BTreeMap::new()).unwrap();
        assert!(delta.is_empty());
    }

    /// Native `a.W.getId` reads the device id. Java `a.W.wrap` returns its
    /// result, and native `a.W.fetch` calls `wrap` back.
    #[test]
    fn wrapper_becomes_a_source() {
        let app: AppIR = serde_json::from_value(json!({
            "natives": [
                {"name": "a.W.getId", "static": true, "params": [], "returns": {"kind": "string"}},
                {"name": "a.W.fetch", "static": true, "params": [], "returns": {"kind": "string"}}
            ],
            "methods": [
                {"name": "a.W.wrap", "returns": {"kind": "string"}, "locals": {"v": {"kind": "string"}},
                 "body": [{"op": "call_native", "ret": "v", "method": "a.W.getId"}, {"op": "return", "src": "v"}]}
            ]
        }))
        .unwrap();
        let img = NativeImage {
            functions: vec![
                NativeFunc::single_block(
                    "Java_a_W_getId",
                    vec![Callsite::JavaCall {
                        method: MethodSig::new("android.telephony.TelephonyManager.getDeviceId"),
                    }],
                ),
                NativeFunc::single_block(
                    "Java_a_W_fetch",
                    vec![Callsite::JavaCall {
                        method: MethodSig::new("a.W.wrap"),
                    }],
                ),
            ],
            registrations: vec![],
            exports: vec!["Java_a_W_getId".into(), "Java_a_W_fetch".into()],
        };
        let cfg = FoldConfig {
            max_folds: 3,
            direction: Direction::ForwardSource,
        };
        let (list, stubs, trace) = run_folds(&app, &img, &base(), &BTreeMap::new(), &cfg).unwrap();
        assert!(trace.folds[0].added.is_source(&MethodSig::new("a.W.getId")));
        let wrap = list.source_entry(&MethodSig::new("a.W.wrap")).unwrap();
        assert_eq!(wrap.returns, vec![TypeDesc::Str]);
        assert!(list.is_source(&MethodSig::new("a.W.fetch")));
        assert!(stubs.contains_key("a.W.fetch"));
        assert!(trace.reached_fixpoint());

        let capped = FoldConfig {
            max_folds: 1,
            direction: Direction::ForwardSource,
        };
        let (list, _, _) = run_folds(&app, &img, &base(), &BTreeMap::new(), &capped).unwrap();
        assert!(!list.is_source(&MethodSig::new("a.W.wrap")));
    }
}
