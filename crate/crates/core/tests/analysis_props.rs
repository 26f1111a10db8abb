//! Property tests for scanning, stub synthesis, analysis and folds.

use std::collections::{BTreeMap, BTreeSet};

use mudep_core::depgen::{DependencyRelation, Edge, FieldPath};
use mudep_core::executor::FunctionSig;
use mudep_core::fixpoint::{self, FoldConfig};
use mudep_core::nativescan::{
    self, Block, Callsite, MethodSig, NativeFunc, NativeImage, Registration, SourceSinkList, SsEntry, Uses,
};
use mudep_core::stubgen::{self, compatible, resolve_path, StubOp, StubSet};
use mudep_core::taintcore::{analyze, AnalyzeOptions, AppIR};
use mudep_core::typesys::{FieldDef, PrimKind, RecordDef, TypeDesc, TypeRegistry};
use proptest::prelude::*;
use serde_json::json;

const SYMBOLS: [&str; 4] = ["__android_log_print", "send", "getenv", "strlen"];

fn arb_image() -> impl Strategy<Value = NativeImage> {
    (1usize..=50).prop_flat_map(|n| {
        let block = (
            prop::collection::vec(
                prop_oneof![
                    (0..n).prop_map(|i| Callsite::LocalCall {
                        function: format!("f{i}")
                    }),
                    (0..SYMBOLS.len()).prop_map(|i| Callsite::NativeLibCall {
                        symbol: SYMBOLS[i].into()
                    }),
                ],
                0..4,
            ),
            any::<bool>(),
        );
        let func = prop::collection::vec(block, 1..4);
        (prop::collection::vec(func, n), prop::collection::vec(any::<bool>(), n)).prop_map(|(funcs, reg)| {
            let functions: Vec<NativeFunc> = funcs
                .into_iter()
                .enumerate()
                .map(|(i, blocks)| {
                    let last = blocks.len() as u32 - 1;
                    NativeFunc {
                        name: format!("f{i}"),
                        entry: 0,
                        blocks: blocks
                            .into_iter()
                            .enumerate()
                            .map(|(b, (callsites, linked))| Block {
                                id: b as u32,
                                callsites,
                                successors: if linked && (b as u32) < last {
                                    vec![b as u32 + 1]
                                } else {
                                    vec![]
                                },
                            })
                            .collect(),
                    }
                })
                .collect();
            let registrations = reg
                .into_iter()
                .enumerate()
                .filter(|(_, r)| *r)
                .map(|(i, _)| Registration {
                    entry: format!("f{i}"),
                    java_name: format!("a.N.m{i}"),
                    java_sig: "()V".into(),
                })
                .collect();
            NativeImage {
                functions,
                registrations,
                ..Default::default()
            }
        })
    })
}

fn arb_list() -> impl Strategy<Value = SourceSinkList> {
    prop::collection::vec((0..SYMBOLS.len(), any::<bool>()), 0..5).prop_map(|v| {
        SourceSinkList::new(v.into_iter().map(|(i, src)| {
            let m = MethodSig::new(SYMBOLS[i]);
            if src {
                SsEntry::source(m, vec![TypeDesc::Str])
            } else {
                SsEntry::sink(m)
            }
        }))
    })
}

fn brute_force(img: &NativeImage, direct: &BTreeMap<String, Uses>) -> BTreeMap<String, Uses> {
    let callees = |f: &NativeFunc| -> Vec<String> {
        f.reachable_callsites()
            .into_iter()
            .filter_map(|c| match c {
                Callsite::LocalCall { function } => Some(function.clone()),
                _ => None,
            })
            .collect()
    };
    img.functions
        .iter()
        .map(|f| {
            let mut seen = BTreeSet::from([f.name.clone()]);
            let mut stack = vec![f.name.clone()];
            while let Some(g) = stack.pop() {
                for h in callees(img.function(&g).unwrap()) {
                    if seen.insert(h.clone()) {
                        stack.push(h);
                    }
                }
            }
            let mut u = Uses::default();
            for g in &seen {
                if let Some(d) = direct.get(g) {
                    u.sources.extend(d.sources.iter().cloned());
                    u.sinks.extend(d.sinks.iter().cloned());
                }
            }
            (f.name.clone(), u)
        })
        .collect()
}

fn flagged(m: &BTreeMap<String, Uses>) -> BTreeSet<(String, MethodSig, bool)> {
    m.iter()
        .flat_map(|(f, u)| {
            u.sources
                .iter()
                .map(move |s| (f.clone(), s.clone(), true))
                .chain(u.sinks.iter().map(move |s| (f.clone(), s.clone(), false)))
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn reachability_matches_brute_force(img in arb_image(), list in arb_list()) {
        img.validate().unwrap();
        let direct = nativescan::find_ss_callsites(&img, &list);
        prop_assert_eq!(nativescan::propagate_reachability(&img, &direct), brute_force(&img, &direct));
    }

    #[test]
    fn adding_a_sink_never_removes_a_flag(img in arb_image(), list in arb_list(), extra in 0..SYMBOLS.len()) {
        let before = nativescan::propagate_reachability(&img, &nativescan::find_ss_callsites(&img, &list));
        let mut more = list.clone();
        more.add(SsEntry::sink(MethodSig::new(SYMBOLS[extra])));
        let after = nativescan::propagate_reachability(&img, &nativescan::find_ss_callsites(&img, &more));
        prop_assert!(flagged(&before).is_subset(&flagged(&after)));
    }

    #[test]
    fn scan_is_idempotent(img in arb_image(), list in arb_list()) {
        prop_assert_eq!(nativescan::scan(&img, &list), nativescan::scan(&img, &list));
    }

    #[test]
    fn folds_grow_monotonically(img in arb_image(), list in arb_list(), max_folds in 1usize..4) {
        let app = AppIR::default();
        let cfg = FoldConfig { max_folds, ..Default::default() };
        let (out, _, trace) = fixpoint::run_folds(&app, &img, &list, &BTreeMap::new(), &cfg).unwrap();
        prop_assert!(out.contains_entries_of(&list));
        prop_assert!(trace.folds.len() <= max_folds);
        let mut seen = list.clone();
        for f in &trace.folds {
            for e in &f.added.entries {
                prop_assert!(seen.add(e.clone()), "fold {} re-added {:?}", f.fold, e);
            }
        }
        if max_folds == 1 {
            let mut plain = list.clone();
            plain.extend(&nativescan::scan(&img, &list).delta);
            prop_assert_eq!(out, plain);
        }
    }
}

fn registry() -> TypeRegistry {
    TypeRegistry::new()
        .with_record(RecordDef::new("Data", vec![FieldDef::new("s", TypeDesc::Str)]))
        .with_record(RecordDef::new(
            "Eavesdropper",
            vec![
                FieldDef::new("s", TypeDesc::Str),
                FieldDef::new("number", TypeDesc::Str),
            ],
        ))
}

fn params() -> Vec<TypeDesc> {
    vec![
        TypeDesc::record("Data"),
        TypeDesc::Prim(PrimKind::Int32),
        TypeDesc::Str,
        TypeDesc::array_of(TypeDesc::Prim(PrimKind::Int64)),
    ]
}

fn sig(ret_record: bool) -> FunctionSig {
    let ret = if ret_record {
        TypeDesc::record("Eavesdropper")
    } else {
        TypeDesc::Prim(PrimKind::Int64)
    };
    FunctionSig::new_static("p.A.f", params(), Some(ret))
}

fn outs(ret_record: bool) -> Vec<FieldPath> {
    let mut v = vec![
        FieldPath::arg(0, "Data", &["s"]),
        FieldPath::arg(0, "Data", &[]),
        FieldPath::arg(3, "Long[]", &[]),
    ];
    if ret_record {
        v.push(FieldPath::ret("Eavesdropper", &["s"]));
        v.push(FieldPath::ret("Eavesdropper", &[]));
    } else {
        v.push(FieldPath::ret("Long", &[]));
    }
    v
}

fn ins() -> Vec<FieldPath> {
    vec![
        FieldPath::arg(0, "Data", &["s"]),
        FieldPath::arg(0, "Data", &[]),
        FieldPath::arg(1, "Integer", &[]),
        FieldPath::arg(2, "String", &[]),
        FieldPath::arg(3, "Long[]", &[]),
    ]
}

fn arb_relation() -> impl Strategy<Value = (bool, DependencyRelation)> {
    any::<bool>().prop_flat_map(|rr| {
        let n_out = outs(rr).len();
        prop::collection::vec((0..n_out, 0..ins().len()), 0..12).prop_map(move |pairs| {
            let mut d = DependencyRelation::new("p.A.f");
            for (o, i) in pairs {
                let (o, i) = (outs(rr)[o].clone(), ins()[i].clone());
                if o.slot != i.slot {
                    d.insert(Edge::new(o, i));
                }
            }
            (rr, d)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn synthesis_covers_every_edge((rr, d) in arb_relation()) {
        let reg = registry();
        let sig = sig(rr);
        let stub = stubgen::synthesize(&reg, &sig, &d).unwrap();
        for e in d.edge_set() {
            prop_assert!(
                stub.ops.iter().any(|op| op.out() == &e.out && op.inputs().contains(&&e.inp)),
                "edge {:?} dropped", e
            );
        }
        for op in &stub.ops {
            match op {
                StubOp::AssignFlow { out, inp, cast } => {
                    let (a, b) = (resolve_path(&reg, &sig, out).unwrap(), resolve_path(&reg, &sig, inp).unwrap());
                    match cast {
                        None => prop_assert!(compatible(&a, &b), "{:?}", op),
                        Some(k) => prop_assert!(a == TypeDesc::Prim(*k) && b.is_primitive(), "{:?}", op),
                    }
                }
                StubOp::SumAssign { ins, .. } => {
                    for i in ins {
                        prop_assert!(resolve_path(&reg, &sig, i).unwrap().is_primitive());
                    }
                }
                _ => {}
            }
        }
        let set = StubSet::from_map(BTreeMap::from([(sig.name.clone(), stub.clone())]));
        let text = stubgen::emit(&set);
        prop_assert_eq!(stubgen::parse(&text).unwrap(), set.clone());
        prop_assert_eq!(stubgen::emit(&stubgen::parse(&text).unwrap()), text);
    }

    #[test]
    fn empty_stubs_never_add_flows((rr, d) in arb_relation()) {
        let reg = registry();
        let sig = sig(rr);
        let stub = stubgen::synthesize(&reg, &sig, &d).unwrap();
        let ret_ty = if rr { json!({"kind": "record", "type": "Eavesdropper"}) } else { json!({"kind": "int64"}) };
        let app: AppIR = serde_json::from_value(json!({
            "types": mudep_core::codec::registry_to_json(&reg),
            "natives": [serde_json::to_value(&sig).unwrap()],
            "methods": [{
                "name": "a.Main.run",
                "locals": {
                    "d": {"kind": "record", "type": "Data"}, "i": {"kind": "int32"}, "s": {"kind": "string"},
                    "arr": {"kind": "array", "elem": {"kind": "int64"}}, "r": ret_ty, "x": {"kind": "string"}
                },
                "body": [
                    {"op": "call_source", "ret": "s", "method": "src.Api.get"},
                    {"op": "new", "dst": "d", "type": "Data"},
                    {"op": "store", "obj": "d", "field": "s", "src": "s"},
                    {"op": "new_array", "dst": "arr", "elem": {"kind": "int64"}},
                    {"op": "call_native", "ret": "r", "method": "p.A.f", "args": ["d", "i", "s", "arr"]},
                    {"op": "call_sink", "method": "snk.Api.put", "args": ["r"]},
                    {"op": "call_sink", "method": "snk.Api.arr", "args": ["arr"]},
                    {"op": "load", "dst": "x", "obj": "d", "field": "s"},
                    {"op": "call_sink", "method": "snk.Api.field", "args": ["x"]}
                ]
            }],
            "entries": ["a.Main.run"]
        })).unwrap();
        let ss = SourceSinkList::new([
            SsEntry::source(MethodSig::new("src.Api.get"), vec![TypeDesc::Str]),
            SsEntry::sink(MethodSig::new("snk.Api.put")),
            SsEntry::sink(MethodSig::new("snk.Api.arr")),
            SsEntry::sink(MethodSig::new("snk.Api.field")),
        ]);
        let stubs = BTreeMap::from([(sig.name.clone(), stub)]);
        let with = analyze(&app, &ss, &stubs, AnalyzeOptions::default()).unwrap();
        let without = analyze(&app, &ss, &stubs, AnalyzeOptions { empty_stubs: true, ..Default::default() }).unwrap();
        prop_assert!(without.pairs().is_subset(&with.pairs()));
        // Tainted on entry: the whole Data argument and the string. The
        // array picks up taint only through stub writes, flow-insensitively.
        use mudep_core::depgen::Slot;
        let mut tainted = BTreeSet::from([Slot::Arg(0), Slot::Arg(2)]);
        loop {
            let grown: Vec<Slot> = d.edge_set().iter()
                .filter(|e| tainted.contains(&e.inp.slot))
                .map(|e| e.out.slot)
                .filter(|s| !tainted.contains(s))
                .collect();
            if grown.is_empty() {
                break;
            }
            tainted.extend(grown);
        }
        let feeds_ret = tainted.contains(&Slot::Return);
        let ret_flow = with.flows.iter().any(|f| f.sink == "snk.Api.put");
        prop_assert_eq!(ret_flow, feeds_ret);
    }
}
