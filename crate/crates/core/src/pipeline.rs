//! End-to-end orchestration: scan → depgen → stubgen → folds → analyze →
//! score, with every stage writing a JSON artifact.
//!
//! Artifacts carry a header with the tool version, the seed, a hash of the
//! stage's configuration and the SHA-256 of every input they were computed
//! from. Starting from a later stage reuses earlier artifacts only when
//! those hashes still match.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::depgen::{self, DepGenConfig, DependencyRelation};
use crate::executor::{self, ExecutorBackend, ExecutorHandle, Manifest};
use crate::fixpoint::{self, FoldConfig, FoldTrace};
use crate::nativescan::{self, NativeImage, ScanResult, SourceSinkList};
use crate::stubgen::{self, StubSet};
use crate::taintcore::{self, AnalyzeOptions, AppIR, FlowReport, Score, TruthPair};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid project configuration: {0}")]
    Config(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("stage {stage} failed: {detail}")]
    Stage { stage: Stage, detail: String },
    #[error("cached {stage} artifact is stale: {detail}")]
    Stale { stage: Stage, detail: String },
}

fn stage_err<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        detail: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Scan,
    Depgen,
    Stubgen,
    Folds,
    Analyze,
    Score,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Scan,
        Stage::Depgen,
        Stage::Stubgen,
        Stage::Folds,
        Stage::Analyze,
        Stage::Score,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Scan => "scan",
            Stage::Depgen => "depgen",
            Stage::Stubgen => "stubgen",
            Stage::Folds => "folds",
            Stage::Analyze => "analyze",
            Stage::Score => "score",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

pub const SS_DELTA: &str = "ss_delta.json";
pub const DEPS: &str = "deps.json";
pub const STUBS: &str = "stubs.json";
pub const SS_FINAL: &str = "ss_final.json";
pub const TRACE: &str = "trace.json";
pub const STUBS_FINAL: &str = "stubs_final.json";
pub const FLOWS: &str = "flows.json";
pub const METRICS: &str = "metrics.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectConfig {
    pub app: PathBuf,
    pub images: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub backend: ExecutorBackend,
    pub ss: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(default)]
    pub depgen: DepGenConfig,
    #[serde(default)]
    pub folds: FoldConfig,
    #[serde(default)]
    pub analyze: AnalyzeOptions,
    pub out_dir: PathBuf,
}

/// Provenance header of an artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub stage: Stage,
    pub seed: u64,
    pub config_hash: String,
    /// Input name → SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub header: Header,
    pub body: T,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a configuration section as recorded in artifact headers.
pub fn config_hash<T: Serialize>(v: &T) -> String {
    sha256_hex(&serde_json::to_vec(v).expect("configuration serializes"))
}

/// Header for an artifact computed from the named input files.
pub fn make_header(
    stage: Stage,
    seed: u64,
    config_hash: String,
    inputs: &[(String, PathBuf)],
) -> Result<Header, PipelineError> {
    let mut hashes = BTreeMap::new();
    for (name, p) in inputs {
        hashes.insert(name.clone(), sha256_hex(&read_bytes(p)?));
    }
    Ok(Header {
        tool: "mudep".to_string(),
        version: TOOL_VERSION.to_string(),
        stage,
        seed,
        config_hash,
        inputs: hashes,
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, PipelineError> {
    fs::read(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a JSON document, unwrapping an artifact envelope when present.
pub fn read_doc<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let bytes = read_bytes(path)?;
    let parse_err = |e: serde_json::Error| PipelineError::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let mut j: serde_json::Value = serde_json::from_slice(&bytes).map_err(parse_err)?;
    if let Some(obj) = j.as_object_mut() {
        if obj.contains_key("header") && obj.contains_key("body") {
            j = obj.remove("body").expect("checked above");
        }
    }
    serde_json::from_value(j).map_err(parse_err)
}

fn read_artifact<T: DeserializeOwned>(path: &Path) -> Result<Artifact<T>, PipelineError> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

pub fn write_doc<T: Serialize>(path: &Path, v: &T) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let mut text = serde_json::to_string_pretty(v).expect("documents serialize");
    text.push('\n');
    fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_images(paths: &[PathBuf]) -> Result<NativeImage, PipelineError> {
    let mut images = Vec::new();
    for p in paths {
        let doc: serde_json::Value = read_doc(p)?;
        images.push(nativescan::parse_image(&doc).map_err(|e| PipelineError::Parse {
            path: p.clone(),
            detail: e.to_string(),
        })?);
    }
    NativeImage::combine(&images).map_err(stage_err(Stage::Scan))
}

pub fn load_manifest(path: &Path) -> Result<Manifest, PipelineError> {
    let doc: serde_json::Value = read_doc(path)?;
    Manifest::from_json(&doc).map_err(|e| PipelineError::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Per-app metrics plus their micro-average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<(String, Score)>,
    pub total: Option<Score>,
}

impl MetricsTable {
    pub fn render(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.1}", 100.0 * x));
        let width = self.rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
        let mut out = format!(
            "{:<width$}  {:>3} {:>3} {:>3}  {:>6} {:>6} {:>6}\n",
            "app", "TP", "FP", "FN", "P%", "R%", "F1%"
        );
        let line = |name: &str, s: &Score| {
            format!(
                "{:<width$}  {:>3} {:>3} {:>3}  {:>6} {:>6} {:>6.1}\n",
                name,
                s.tp,
                s.fp,
                s.fn_,
                pct(s.precision),
                pct(s.recall),
                100.0 * s.f1
            )
        };
        for (name, s) in &self.rows {
            out.push_str(&line(name, s));
        }
        match &self.total {
            Some(t) => out.push_str(&line("TOTAL", t)),
            None => out.push_str("no data\n"),
        }
        out
    }
}

/// Scores each app and micro-averages the counts.
pub fn report_metrics(batch: &[(String, FlowReport, Vec<TruthPair>)]) -> MetricsTable {
    let rows: Vec<(String, Score)> = batch
        .iter()
        .map(|(name, report, truth)| (name.clone(), taintcore::score(report, truth)))
        .collect();
    let total = (!rows.is_empty()).then(|| {
        let sum = |f: fn(&Score) -> usize| rows.iter().map(|(_, s)| f(s)).sum();
        Score::from_counts(sum(|s| s.tp), sum(|s| s.fp), sum(|s| s.fn_))
    });
    MetricsTable { rows, total }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub stages_run: Vec<Stage>,
    pub flows: FlowReport,
    pub score: Option<Score>,
}

/// A project ready to run. Relative paths resolve against `base_dir`.
pub struct Pipeline {
    cfg: ProjectConfig,
    base_dir: PathBuf,
    executor: Option<ExecutorHandle>,
}

impl Pipeline {
    pub fn new(cfg: ProjectConfig, base_dir: impl Into<PathBuf>) -> Self {
        Pipeline {
            cfg,
            base_dir: base_dir.into(),
            executor: None,
        }
    }

    pub fn load(config: &Path) -> Result<Self, PipelineError> {
        let cfg: ProjectConfig = read_doc(config)?;
        let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Pipeline::new(cfg, base))
    }

    /// Uses `handle` instead of loading the configured backend.
    pub fn with_executor(mut self, handle: ExecutorHandle) -> Self {
        self.executor = Some(handle);
        self
    }

    pub fn config(&self) -> &ProjectConfig {
        &self.cfg
    }

    pub fn config_mut(&mut self) -> &mut ProjectConfig {
        &mut self.cfg
    }

    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.path(&self.cfg.out_dir).join(name)
    }

    fn backend(&self) -> ExecutorBackend {
        let resolve = |s: &String| {
            if s.contains('/') && !Path::new(s).is_absolute() {
                self.base_dir.join(s).to_string_lossy().into_owned()
            } else {
                s.clone()
            }
        };
        match &self.cfg.backend {
            ExecutorBackend::InProcess { library } => ExecutorBackend::InProcess {
                library: self.path(library),
            },
            ExecutorBackend::Subprocess { command, per_call } => ExecutorBackend::Subprocess {
                command: command
                    .iter()
                    .enumerate()
                    .map(|(i, c)| if i == 0 { resolve(c) } else { c.clone() })
                    .collect(),
                per_call: *per_call,
            },
        }
    }

    fn inputs(&self, stage: Stage) -> Vec<(String, PathBuf)> {
        let file = |name: &str, p: &Path| (name.to_string(), self.path(p));
        let art = |name: &str| (name.to_string(), self.out(name));
        let mut v = Vec::new();
        match stage {
            Stage::Scan => {
                for (i, img) in self.cfg.images.iter().enumerate() {
                    v.push(file(&format!("image[{i}]"), img));
                }
                v.push(file("ss", &self.cfg.ss));
            }
            Stage::Depgen => v.push(file("manifest", &self.cfg.manifest)),
            Stage::Stubgen => {
                v.push(file("manifest", &self.cfg.manifest));
                v.push(art(DEPS));
                v.push(art(SS_DELTA));
            }
            Stage::Folds => {
                v.push(file("app", &self.cfg.app));
                for (i, img) in self.cfg.images.iter().enumerate() {
                    v.push(file(&format!("image[{i}]"), img));
                }
                v.push(file("ss", &self.cfg.ss));
                v.push(art(STUBS));
            }
            Stage::Analyze => {
                v.push(file("app", &self.cfg.app));
                v.push(art(SS_FINAL));
                v.push(art(STUBS_FINAL));
            }
            Stage::Score => {
                v.push(art(FLOWS));
                if let Some(t) = &self.cfg.truth {
                    v.push(file("truth", t));
                }
            }
        }
        v
    }

    fn stage_config_hash(&self, stage: Stage) -> String {
        match stage {
            Stage::Depgen => config_hash(&self.cfg.depgen),
            Stage::Folds => config_hash(&self.cfg.folds),
            Stage::Analyze => config_hash(&self.cfg.analyze),
            _ => config_hash(&serde_json::Value::Null),
        }
    }

    fn header(&self, stage: Stage) -> Result<Header, PipelineError> {
        make_header(
            stage,
            self.cfg.depgen.seed,
            self.stage_config_hash(stage),
            &self.inputs(stage),
        )
    }

    fn write<T: Serialize>(&self, stage: Stage, name: &str, body: &T) -> Result<(), PipelineError> {
        let artifact = Artifact {
            header: self.header(stage)?,
            body,
        };
        write_doc(&self.out(name), &artifact)
    }

    /// Loads a cached artifact, refusing it when its recorded inputs or
    /// configuration no longer match.
    fn cached<T: DeserializeOwned>(&self, stage: Stage, name: &str) -> Result<T, PipelineError> {
        let artifact: Artifact<T> = read_artifact(&self.out(name))?;
        let current = self.header(stage)?;
        if artifact.header.config_hash != current.config_hash {
            return Err(PipelineError::Stale {
                stage,
                detail: format!("{name} was produced with a different configuration"),
            });
        }
        if artifact.header.inputs != current.inputs {
            let changed: Vec<&String> = current
                .inputs
                .iter()
                .filter(|(k, v)| artifact.header.inputs.get(*k) != Some(*v))
                .map(|(k, _)| k)
                .collect();
            return Err(PipelineError::Stale {
                stage,
                detail: format!("{name}: inputs changed since it was written: {changed:?}"),
            });
        }
        Ok(artifact.body)
    }

    /// Runs every stage from `from` on, reusing cached artifacts for the
    /// stages before it.
    pub fn run(&mut self, from: Stage) -> Result<RunSummary, PipelineError> {
        let mut summary = RunSummary::default();
        let fresh = |s: Stage| s >= from;

        let manifest = load_manifest(&self.path(&self.cfg.manifest))?;

        let scan: ScanResult = if fresh(Stage::Scan) {
            let img = load_images(&self.images())?;
            let ss: SourceSinkList = read_doc(&self.path(&self.cfg.ss))?;
            let r = nativescan::scan(&img, &ss);
            self.write(Stage::Scan, SS_DELTA, &r)?;
            summary.stages_run.push(Stage::Scan);
            r
        } else {
            self.cached(Stage::Scan, SS_DELTA)?
        };

        let deps: Vec<DependencyRelation> = if fresh(Stage::Depgen) {
            let deps = self.run_depgen(&manifest)?;
            self.write(Stage::Depgen, DEPS, &deps)?;
            summary.stages_run.push(Stage::Depgen);
            deps
        } else {
            self.cached(Stage::Depgen, DEPS)?
        };

        let stubs: StubSet = if fresh(Stage::Stubgen) {
            let set = synthesize_all(&manifest, &deps, Some(&scan.delta))?;
            self.write(Stage::Stubgen, STUBS, &set)?;
            summary.stages_run.push(Stage::Stubgen);
            set
        } else {
            self.cached(Stage::Stubgen, STUBS)?
        };

        let app: AppIR = read_doc(&self.path(&self.cfg.app))?;
        let (final_ss, final_stubs): (SourceSinkList, StubSet) = if fresh(Stage::Folds) {
            let img = load_images(&self.images())?;
            let ss: SourceSinkList = read_doc(&self.path(&self.cfg.ss))?;
            let (list, stubs, trace) = fixpoint::run_folds(&app, &img, &ss, &stubs.to_map(), &self.cfg.folds)
                .map_err(stage_err(Stage::Folds))?;
            let stubs = StubSet::from_map(stubs);
            self.write(Stage::Folds, SS_FINAL, &list)?;
            self.write(Stage::Folds, TRACE, &trace)?;
            self.write(Stage::Folds, STUBS_FINAL, &stubs)?;
            summary.stages_run.push(Stage::Folds);
            (list, stubs)
        } else {
            let _: FoldTrace = self.cached(Stage::Folds, TRACE)?;
            (
                self.cached(Stage::Folds, SS_FINAL)?,
                self.cached(Stage::Folds, STUBS_FINAL)?,
            )
        };

        let flows = if fresh(Stage::Analyze) {
            let r = taintcore::analyze(&app, &final_ss, &final_stubs.to_map(), self.cfg.analyze)
                .map_err(stage_err(Stage::Analyze))?;
            self.write(Stage::Analyze, FLOWS, &r)?;
            summary.stages_run.push(Stage::Analyze);
            r
        } else {
            self.cached(Stage::Analyze, FLOWS)?
        };

        if let Some(t) = &self.cfg.truth {
            let truth: Vec<TruthPair> = read_doc(&self.path(t))?;
            let table = report_metrics(&[(self.app_name(), flows.clone(), truth)]);
            self.write(Stage::Score, METRICS, &table)?;
            summary.stages_run.push(Stage::Score);
            summary.score = table.total;
        }
        summary.flows = flows;
        Ok(summary)
    }

    fn images(&self) -> Vec<PathBuf> {
        self.cfg.images.iter().map(|p| self.path(p)).collect()
    }

    fn app_name(&self) -> String {
        self.cfg
            .app
            .parent()
            .and_then(|p| p.file_name())
            .or_else(|| self.base_dir.file_name())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "app".to_string())
    }

    fn run_depgen(&mut self, manifest: &Manifest) -> Result<Vec<DependencyRelation>, PipelineError> {
        let mut handle = match self.executor.take() {
            Some(h) => h,
            None => executor::load(&self.backend(), manifest).map_err(stage_err(Stage::Depgen))?,
        };
        let out = generate_all(&mut handle, manifest, &self.cfg.depgen).map_err(stage_err(Stage::Depgen));
        self.executor = Some(handle);
        out
    }
}

/// Dependency relations of every manifest function, sorted by name.
pub fn generate_all(
    handle: &mut ExecutorHandle,
    manifest: &Manifest,
    cfg: &DepGenConfig,
) -> Result<Vec<DependencyRelation>, depgen::DepGenError> {
    let mut sigs = manifest.functions.clone();
    sigs.sort_by(|a, b| a.name.cmp(&b.name));
    sigs.iter().map(|s| depgen::generate(handle, s, cfg)).collect()
}

/// Stubs for every relation, plus proxy-source taint for the native
/// source bridges of `delta`.
pub fn synthesize_all(
    manifest: &Manifest,
    deps: &[DependencyRelation],
    delta: Option<&SourceSinkList>,
) -> Result<StubSet, PipelineError> {
    let mut map = BTreeMap::new();
    for d in deps {
        let sig = manifest
            .function(&d.function)
            .ok_or_else(|| stage_err(Stage::Stubgen)(format!("`{}` is not in the manifest", d.function)))?;
        let stub = stubgen::synthesize(&manifest.types, sig, d).map_err(stage_err(Stage::Stubgen))?;
        map.insert(d.function.clone(), stub);
    }
    if let Some(delta) = delta {
        map = fixpoint::apply_proxy_stubs(&manifest.types, &manifest.functions, delta, &map);
    }
    Ok(StubSet::from_map(map))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(tp: usize, fp: usize, fn_: usize) -> Score {
        Score::from_counts(tp, fp, fn_)
    }

    #[test]
    fn micro_average() {
        let flow = |a: &str, b: &str| taintcore::Flow {
            source: a.into(),
            sink: b.into(),
            witness: vec![],
        };
        let pair = |a: &str, b: &str| TruthPair {
            source: a.into(),
            sink: b.into(),
        };
        let batch = vec![
            (
                "one".to_string(),
                FlowReport {
                    flows: vec![flow("a", "b"), flow("a", "c")],
                },
                vec![pair("a", "b")],
            ),
            (
                "two".to_string(),
                FlowReport {
                    flows: vec![flow("x", "y")],
                },
                vec![pair("x", "y"), pair("x", "z"), pair("x", "w")],
            ),
        ];
        let t = report_metrics(&batch);
        // Counts: TP 2, FP 1, FN 2 → P = 2/3, R = 2/4.
        let total = t.total.unwrap();
        assert_eq!((total.tp, total.fp, total.fn_), (2, 1, 2));
        assert!((total.precision.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((total.recall.unwrap() - 0.5).abs() < 1e-12);
        assert!((total.f1 - 4.0 / 7.0).abs() < 1e-12);
        assert!(t.render().contains("TOTAL"));
    }

    #[test]
    fn single_perfect_and_empty_batches() {
        let t = MetricsTable {
            rows: vec![("a".into(), s(2, 0, 0))],
            total: Some(s(2, 0, 0)),
        };
        assert!(t.render().contains("100.0  100.0  100.0"));
        let empty = report_metrics(&[]);
        assert_eq!(empty.total, None);
        assert!(empty.render().contains("no data"));
    }

    #[test]
    fn stage_names_round_trip() {
        for st in Stage::ALL {
            assert_eq!(st.name().parse::<Stage>().unwrap(), st);
        }
        assert!("nope".parse::<Stage>().is_err());
    }

    #[test]
    fn envelope_is_transparent_to_readers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_doc(&p, &serde_json::json!({"header": {"tool": "mudep"}, "body": [1, 2]})).unwrap();
        let v: Vec<u32> = read_doc(&p).unwrap();
        assert_eq!(v, [1, 2]);
        write_doc(&p, &vec![3u32]).unwrap();
        let v: Vec<u32> = read_doc(&p).unwrap();
        assert_eq!(v, [3]);
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
