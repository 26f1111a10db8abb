//! `mudep`: run the dependency-inference and taint pipeline stage by stage
//! or end to end.
//!
//! Exit codes:
//!
//! | code | meaning                                              |
//! |------|------------------------------------------------------|
//! | 0    | success, whether or not any flows were found         |
//! | 1    | infrastructure failure (I/O, parse, executor, stage) |
//! | 2    | invalid command line                                 |
//! | 3    | cached artifacts are stale for `run-all --from`      |

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mudep_core::depgen::{DepGenConfig, DependencyRelation, Isolation};
use mudep_core::executor::{self, ExecutorBackend, Manifest};
use mudep_core::fixpoint::{self, Direction, FoldConfig};
use mudep_core::nativescan::{self, ScanResult, SourceSinkList};
use mudep_core::pipeline::{
    self, config_hash, load_images, load_manifest, make_header, read_doc, Artifact, Pipeline, PipelineError, Stage,
};
use mudep_core::stubgen::StubSet;
use mudep_core::taintcore::{self, AnalyzeOptions, AppIR, FlowReport, MissingStub, TruthPair};

#[derive(Parser)]
#[command(
    name = "mudep",
    version,
    about = "Dependency inference and taint stubs for opaque native functions"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Find native functions that reach sources or sinks and add their Java
    /// bridges to the list.
    Scan {
        #[arg(long = "image", required = true)]
        images: Vec<PathBuf>,
        #[arg(long)]
        ss: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Infer input/output dependencies of every manifest function.
    Depgen(DepgenArgs),
    /// Turn dependency relations into taint stubs.
    Stubgen {
        #[arg(long)]
        deps: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Scan delta whose native sources get proxy-source taint.
        #[arg(long)]
        ss_delta: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grow the source/sink list across folds.
    Folds {
        #[arg(long)]
        app: PathBuf,
        #[arg(long = "image", required = true)]
        images: Vec<PathBuf>,
        #[arg(long)]
        ss: PathBuf,
        #[arg(long)]
        stubs: PathBuf,
        #[arg(long, default_value_t = 2)]
        max_folds: usize,
        #[arg(long, value_enum, default_value_t = DirectionArg::Both)]
        direction: DirectionArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Where to write the stubs with proxy-source taint applied.
        #[arg(long)]
        stubs_out: Option<PathBuf>,
    },
    /// Run the taint analysis over an app.
    Analyze {
        #[arg(long)]
        app: PathBuf,
        #[arg(long)]
        ss: PathBuf,
        #[arg(long)]
        stubs: Option<PathBuf>,
        /// Treat every native call as a no-op.
        #[arg(long)]
        empty_stubs: bool,
        /// Fail on native calls that have no stub.
        #[arg(long)]
        strict_stubs: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score flow reports against ground truth. Repeat `--flows`/`--truth`
    /// pairs for a micro-averaged batch.
    Score {
        #[arg(long = "flows", required = true)]
        flows: Vec<PathBuf>,
        #[arg(long = "truth", required = true)]
        truth: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage from a project file.
    RunAll {
        #[arg(long)]
        config: PathBuf,
        /// Reuse cached artifacts for the stages before this one.
        #[arg(long, value_parser = parse_stage, default_value = "scan")]
        from: Stage,
        #[arg(long)]
        empty_stubs: bool,
    },
}

#[derive(Args)]
struct DepgenArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = BackendArg::Subprocess)]
    backend: BackendArg,
    /// Shared library (inprocess) or executable (subprocess).
    #[arg(long)]
    lib: PathBuf,
    #[arg(long, default_value_t = 15)]
    bound: usize,
    #[arg(long, default_value_t = 5)]
    depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = IsolateArg::Unit)]
    isolate: IsolateArg,
    /// Per-call budget in milliseconds.
    #[arg(long, default_value_t = 2000)]
    budget_ms: u64,
    #[arg(long, default_value_t = 3)]
    max_retries: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Subprocess,
    Inprocess,
}

#[derive(Clone, Copy, ValueEnum)]
enum IsolateArg {
    Unit,
    Session,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Backward,
    Forward,
    Both,
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mudep: {e}");
            match e {
                PipelineError::Stale { .. } => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn fail(stage: Stage, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Stage {
        stage,
        detail: e.to_string(),
    }
}

fn named(prefix: &str, paths: &[PathBuf]) -> Vec<(String, PathBuf)> {
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("{prefix}[{i}]"), p.clone()))
        .collect()
}

fn one(name: &str, p: &Path) -> (String, PathBuf) {
    (name.to_string(), p.to_path_buf())
}

fn emit<T: serde::Serialize>(
    out: &Path,
    stage: Stage,
    seed: u64,
    cfg_hash: String,
    inputs: &[(String, PathBuf)],
    body: &T,
) -> Result<(), PipelineError> {
    let header = make_header(stage, seed, cfg_hash, inputs)?;
    pipeline::write_doc(out, &Artifact { header, body })
}

fn no_config() -> String {
    config_hash(&serde_json::Value::Null)
}

fn run(cmd: Cmd) -> Result<(), PipelineError> {
    match cmd {
        Cmd::Scan { images, ss, out } => {
            let img = load_images(&images)?;
            let list: SourceSinkList = read_doc(&ss)?;
            let r: ScanResult = nativescan::scan(&img, &list);
            for u in &r.unmapped {
                log::warn!("native function `{u}` uses a source or sink but has no Java bridge");
            }
            println!("{} bridge(s), {} new list entr(ies)", r.bridges.len(), r.delta.len());
            let mut inputs = named("image", &images);
            inputs.push(one("ss", &ss));
            emit(&out, Stage::Scan, 0, no_config(), &inputs, &r)
        }
        Cmd::Depgen(a) => depgen(a),
        Cmd::Stubgen {
            deps,
            manifest,
            ss_delta,
            out,
        } => {
            let m = load_manifest(&manifest)?;
            let rels: Vec<DependencyRelation> = read_doc(&deps)?;
            let delta = match &ss_delta {
                Some(p) => Some(read_doc::<ScanResult>(p)?.delta),
                None => None,
            };
            let set = pipeline::synthesize_all(&m, &rels, delta.as_ref())?;
            let mut inputs = vec![one("manifest", &manifest), one("deps", &deps)];
            inputs.extend(ss_delta.as_deref().map(|p| one("ss_delta", p)));
            emit(&out, Stage::Stubgen, 0, no_config(), &inputs, &set)
        }
        Cmd::Folds {
            app,
            images,
            ss,
            stubs,
            max_folds,
            direction,
            out,
            trace,
            stubs_out,
        } => {
            let ir: AppIR = read_doc(&app)?;
            let img = load_images(&images)?;
            let list: SourceSinkList = read_doc(&ss)?;
            let set: StubSet = read_doc(&stubs)?;
            let cfg = FoldConfig {
                max_folds,
                direction: match direction {
                    DirectionArg::Backward => Direction::BackwardSink,
                    DirectionArg::Forward => Direction::ForwardSource,
                    DirectionArg::Both => Direction::Both,
                },
            };
            let (final_list, final_stubs, tr) =
                fixpoint::run_folds(&ir, &img, &list, &set.to_map(), &cfg).map_err(|e| fail(Stage::Folds, e))?;
            for f in &tr.folds {
                println!(
                    "fold {}: +{} entr(ies), {} flow(s)",
                    f.fold,
                    f.added.len(),
                    f.flows.len()
                );
            }
            let mut inputs = vec![one("app", &app)];
            inputs.extend(named("image", &images));
            inputs.push(one("ss", &ss));
            inputs.push(one("stubs", &stubs));
            let h = config_hash(&cfg);
            emit(&out, Stage::Folds, 0, h.clone(), &inputs, &final_list)?;
            emit(&trace, Stage::Folds, 0, h.clone(), &inputs, &tr)?;
            if let Some(p) = stubs_out {
                emit(&p, Stage::Folds, 0, h, &inputs, &StubSet::from_map(final_stubs))?;
            }
            Ok(())
        }
        Cmd::Analyze {
            app,
            ss,
            stubs,
            empty_stubs,
            strict_stubs,
            out,
        } => {
            let ir: AppIR = read_doc(&app)?;
            let list: SourceSinkList = read_doc(&ss)?;
            let set: StubSet = match &stubs {
                Some(p) => read_doc(p)?,
                None => StubSet::default(),
            };
            let opts = AnalyzeOptions {
                empty_stubs,
                missing_stub: if strict_stubs {
                    MissingStub::Error
                } else {
                    MissingStub::Empty
                },
            };
            let report = taintcore::analyze(&ir, &list, &set.to_map(), opts).map_err(|e| fail(Stage::Analyze, e))?;
            for f in &report.flows {
                println!("{} -> {}", f.source, f.sink);
            }
            let mut inputs = vec![one("app", &app), one("ss", &ss)];
            inputs.extend(stubs.as_deref().map(|p| one("stubs", p)));
            emit(&out, Stage::Analyze, 0, config_hash(&opts), &inputs, &report)
        }
        Cmd::Score { flows, truth, out } => {
            if flows.len() != truth.len() {
                return Err(PipelineError::Config(format!(
                    "{} --flows but {} --truth arguments",
                    flows.len(),
                    truth.len()
                )));
            }
            let mut batch = Vec::new();
            for (f, t) in flows.iter().zip(&truth) {
                let name = f
                    .parent()
                    .and_then(|p| p.file_name())
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| f.display().to_string());
                let report: FlowReport = read_doc(f)?;
                let pairs: Vec<TruthPair> = read_doc(t)?;
                batch.push((name, report, pairs));
            }
            let table = pipeline::report_metrics(&batch);
            print!("{}", table.render());
            if let Some(out) = out {
                let mut inputs = named("flows", &flows);
                inputs.extend(named("truth", &truth));
                emit(&out, Stage::Score, 0, no_config(), &inputs, &table)?;
            }
            Ok(())
        }
        Cmd::RunAll {
            config,
            from,
            empty_stubs,
        } => {
            let mut p = Pipeline::load(&config)?;
            if empty_stubs {
                p.config_mut().analyze.empty_stubs = true;
            }
            let summary = p.run(from)?;
            for f in &summary.flows.flows {
                println!("{} -> {}", f.source, f.sink);
            }
            println!("{} flow(s)", summary.flows.len());
            if let Some(s) = summary.score {
                let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.1}", 100.0 * x));
                println!(
                    "TP {} FP {} FN {}  P {}  R {}  F1 {:.1}",
                    s.tp,
                    s.fp,
                    s.fn_,
                    pct(s.precision),
                    pct(s.recall),
                    100.0 * s.f1
                );
            }
            Ok(())
        }
    }
}

fn depgen(a: DepgenArgs) -> Result<(), PipelineError> {
    let manifest: Manifest = load_manifest(&a.manifest)?;
    let backend = match a.backend {
        BackendArg::Inprocess => ExecutorBackend::InProcess { library: a.lib.clone() },
        BackendArg::Subprocess => ExecutorBackend::Subprocess {
            command: vec![a.lib.to_string_lossy().into_owned()],
            per_call: false,
        },
    };
    let cfg = DepGenConfig {
        bound: a.bound,
        depth: a.depth,
        seed: a.seed,
        isolate: match a.isolate {
            IsolateArg::Unit => Isolation::Unit,
            IsolateArg::Session => Isolation::Session,
        },
        budget: Duration::from_millis(a.budget_ms),
        max_retries: a.max_retries,
        ..Default::default()
    };
    let mut handle = executor::load(&backend, &manifest).map_err(|e| fail(Stage::Depgen, e))?;
    let rels = pipeline::generate_all(&mut handle, &manifest, &cfg).map_err(|e| fail(Stage::Depgen, e))?;
    for r in &rels {
        print!("{}", r.to_text());
    }
    emit(
        &a.out,
        Stage::Depgen,
        cfg.seed,
        config_hash(&cfg),
        &[one("manifest", &a.manifest)],
        &rels,
    )
}
