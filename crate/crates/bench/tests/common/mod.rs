#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use mudep_bench::fixtures_dir;
use mudep_bench::shim::ShimTransport;
use mudep_core::executor::{ExecutorHandle, Manifest};
use mudep_core::pipeline::{self, Pipeline, RunSummary, Stage};
use mudep_core::taintcore::TruthPair;

pub fn row_dir(name: &str) -> PathBuf {
    fixtures_dir().join("rows").join(name)
}

pub fn rows() -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(fixtures_dir().join("rows"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

pub fn shim_handle(manifest: &Manifest) -> ExecutorHandle {
    ExecutorHandle::new(Box::new(ShimTransport), manifest).unwrap()
}

/// The row's pipeline with its outputs redirected to `out` and the corpus
/// run in-process.
pub fn row_pipeline(name: &str, out: &Path) -> Pipeline {
    let mut p = Pipeline::load(&row_dir(name).join("project.json")).unwrap();
    p.config_mut().out_dir = out.to_path_buf();
    let manifest = pipeline::load_manifest(&row_dir(name).join("manifest.json")).unwrap();
    p.with_executor(shim_handle(&manifest))
}

pub fn run_row(name: &str, out: &Path) -> RunSummary {
    row_pipeline(name, out)
        .run(Stage::Scan)
        .unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn truth(name: &str) -> Vec<TruthPair> {
    pipeline::read_doc(&row_dir(name).join("truth.json")).unwrap()
}
