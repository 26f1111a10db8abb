use std::fs;
use std::path::Path;

use mudep_core::executor::{ExecutorBackend, ExecutorHandle, LocalTransport, Manifest};
use mudep_core::fixpoint::FoldConfig;
use mudep_core::pipeline::{self, Pipeline, PipelineError, ProjectConfig, Stage};
use mudep_core::typesys::Value;
use serde_json::{json, Value as Json};

fn write(dir: &Path, name: &str, v: Json) {
    fs::write(dir.join(name), serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

fn types() -> Json {
    json!({"records": [
        {"name": "Data", "mutable": true, "fields": [{"name": "s", "type": {"kind": "string"}}]},
        {"name": "Eavesdropper", "mutable": true, "fields": [
            {"name": "s", "type": {"kind": "string"}},
            {"name": "number", "type": {"kind": "string"}}
        ]}
    ], "abstracts": []})
}

fn native() -> Json {
    json!({
        "name": "com.example.Data.propagateData", "static": false, "receiver": "Data",
        "params": [{"kind": "record", "type": "Eavesdropper"}, {"kind": "bool"}]
    })
}

fn project(dir: &Path) -> ProjectConfig {
    write(
        dir,
        "app.json",
        json!({
            "types": types(),
            "natives": [native()],
            "methods": [{
                "name": "com.example.Main.onCreate",
                "locals": {
                    "imei": {"kind": "string"}, "data": {"kind": "record", "type": "Data"},
                    "ev": {"kind": "record", "type": "Eavesdropper"}, "choice": {"kind": "bool"},
                    "tag": {"kind": "string"}, "leaked": {"kind": "string"}, "num": {"kind": "string"}
                },
                "body": [
                    {"op": "call_source", "ret": "imei", "method": "android.telephony.TelephonyManager.getDeviceId"},
                    {"op": "new", "dst": "data", "type": "Data"},
                    {"op": "store", "obj": "data", "field": "s", "src": "imei"},
                    {"op": "new", "dst": "ev", "type": "Eavesdropper"},
                    {"op": "const_prim", "dst": "choice", "value": false},
                    {"op": "call_native", "method": "com.example.Data.propagateData", "args": ["data", "ev", "choice"]},
                    {"op": "const_str", "dst": "tag", "value": "TAG"},
                    {"op": "call_sink", "method": "android.util.Log.v", "args": ["tag", "imei"]},
                    {"op": "load", "dst": "leaked", "obj": "ev", "field": "s"},
                    {"op": "load", "dst": "num", "obj": "ev", "field": "number"},
                    {"op": "call_sink", "method": "android.telephony.SmsManager.sendTextMessage", "args": ["num", "leaked"]}
                ]
            }],
            "entries": ["com.example.Main.onCreate"]
        }),
    );
    write(
        dir,
        "image.json",
        json!({
            "functions": [
                {"name": "propagate", "entry": 0, "blocks": [{"id": 0}]},
                {"name": "log_it", "entry": 0, "blocks": [
                    {"id": 0, "successors": [1]},
                    {"id": 1, "callsites": [{"kind": "native_lib_call", "symbol": "__android_log_print"}]}
                ]}
            ],
            "registrations": [
                {"entry": "propagate", "java_name": "com.example.Data.propagateData", "java_sig": "(Lcom/example/Eavesdropper;Z)V"},
                {"entry": "log_it", "java_name": "com.example.Data.logNative", "java_sig": "(Ljava/lang/String;)V"}
            ]
        }),
    );
    write(dir, "manifest.json", json!({"types": types(), "functions": [native()]}));
    write(
        dir,
        "ss.json",
        json!({"entries": [
            {"method": "android.telephony.TelephonyManager.getDeviceId", "category": "source", "returns": [{"kind": "string"}]},
            {"method": "android.util.Log.v", "category": "sink"},
            {"method": "android.telephony.SmsManager.sendTextMessage", "category": "sink"},
            {"method": "__android_log_print", "category": "sink"}
        ]}),
    );
    write(
        dir,
        "truth.json",
        json!([
            {"source": "android.telephony.TelephonyManager.getDeviceId", "sink": "android.util.Log.v"},
            {"source": "android.telephony.TelephonyManager.getDeviceId", "sink": "android.telephony.SmsManager.sendTextMessage"}
        ]),
    );
    let cfg = json!({
        "app": "app.json",
        "images": ["image.json"],
        "manifest": "manifest.json",
        "backend": {"kind": "subprocess", "command": ["unused"]},
        "ss": "ss.json",
        "truth": "truth.json",
        "out_dir": "out"
    });
    write(dir, "project.json", cfg.clone());
    serde_json::from_value(cfg).unwrap()
}

fn executor(dir: &Path) -> ExecutorHandle {
    let doc: Json = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let manifest = Manifest::from_json(&doc).unwrap();
    let t = LocalTransport::new(["com.example.Data.propagateData"], |_, args| {
        if !matches!(args[2], Value::Bool(true)) {
            let s = args[0].field("s").cloned().unwrap_or(Value::Null);
            if let Some(slot) = args[1].field_mut("s") {
                *slot = s;
            }
        }
        Ok(None)
    });
    ExecutorHandle::new(Box::new(t), &manifest).unwrap()
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    project(dir.path());
    let mut p = Pipeline::load(&dir.path().join("project.json"))
        .unwrap()
        .with_executor(executor(dir.path()));
    let summary = p.run(Stage::Scan).unwrap();
    assert_eq!(summary.stages_run, Stage::ALL);
    assert_eq!(summary.flows.len(), 2);
    let score = summary.score.unwrap();
    assert_eq!((score.tp, score.fp, score.fn_), (2, 0, 0));

    for name in [
        pipeline::SS_DELTA,
        pipeline::DEPS,
        pipeline::STUBS,
        pipeline::SS_FINAL,
        pipeline::TRACE,
        pipeline::STUBS_FINAL,
        pipeline::FLOWS,
        pipeline::METRICS,
    ] {
        let doc: Json = serde_json::from_str(&fs::read_to_string(p.out(name)).unwrap()).unwrap();
        assert_eq!(doc["header"]["tool"], "mudep", "{name}");
        assert!(
            doc["header"]["inputs"].as_object().is_some_and(|m| !m.is_empty()),
            "{name}"
        );
    }

    let delta: Json = pipeline::read_doc(&p.out(pipeline::SS_DELTA)).unwrap();
    assert_eq!(
        delta["delta"]["entries"][0]["method"],
        "com.example.Data.logNative(Ljava/lang/String;)V"
    );
}

#[test]
fn artifacts_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    project(dir.path());
    let run = || {
        let mut p = Pipeline::load(&dir.path().join("project.json"))
            .unwrap()
            .with_executor(executor(dir.path()));
        p.run(Stage::Scan).unwrap();
        [pipeline::DEPS, pipeline::STUBS, pipeline::FLOWS].map(|n| fs::read(p.out(n)).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn resume_reuses_fresh_artifacts_and_refuses_stale_ones() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = project(dir.path());
    let mut p = Pipeline::new(cfg.clone(), dir.path()).with_executor(executor(dir.path()));
    p.run(Stage::Scan).unwrap();

    let again = p.run(Stage::Analyze).unwrap();
    assert_eq!(again.stages_run, [Stage::Analyze, Stage::Score]);
    assert_eq!(again.flows.len(), 2);

    p.config_mut().folds = FoldConfig {
        max_folds: 1,
        ..Default::default()
    };
    assert!(matches!(
        p.run(Stage::Analyze),
        Err(PipelineError::Stale {
            stage: Stage::Folds,
            ..
        })
    ));
    p.run(Stage::Folds).unwrap();

    let ss = fs::read_to_string(dir.path().join("ss.json")).unwrap();
    fs::write(
        dir.path().join("ss.json"),
        ss.replace("__android_log_print", "__android_log_write"),
    )
    .unwrap();
    let err = p.run(Stage::Analyze).unwrap_err();
    assert!(matches!(err, PipelineError::Stale { .. }), "{err}");
    assert!(err.to_string().contains("ss"), "{err}");
}

#[test]
fn subprocess_backend_paths_resolve_against_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = project(dir.path());
    cfg.backend = ExecutorBackend::Subprocess {
        command: vec!["./does-not-exist".into()],
        per_call: false,
    };
    let mut p = Pipeline::new(cfg, dir.path());
    let err = p.run(Stage::Scan).unwrap_err();
    assert!(
        matches!(
            err,
            PipelineError::Stage {
                stage: Stage::Depgen,
                ..
            }
        ),
        "{err}"
    );
}
