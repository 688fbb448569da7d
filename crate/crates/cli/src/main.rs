//! `echoagent`: build the knowledge index, run studies, evaluate datasets.
//!
//! Exit codes: 0 success, 1 I/O or usage, 2 unresolvable query, 3 tool
//! contract violation.

mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use echoagent_core::eval::{self, dataset::RECORD_FILE, BenchConfig, BenchEnv, RecordFile};
use echoagent_core::fixtures::{self, DatasetSpec, Shape, ShapeSpec};
use echoagent_core::hub::{DiagnosticQuery, Hub, HubError};
use echoagent_core::kb::corpus::{build_knowledge_base, read_corpus};
use echoagent_core::kb::persist::{load_index, save_index};
use echoagent_core::kb::repository::HttpSummarizer;
use echoagent_core::kb::{Encoder, HashedBowEncoder, HttpEncoder, IngestConfig, KnowledgeBase, Summarizer};
use echoagent_core::tools::study::STUDY_SIDECAR;
use echoagent_core::tools::{registry_from_specs, RegistryFile, StudySidecar, ToolError, ToolFabric};
use echoagent_core::{builtin_registry, AnatomyGroup, ToolRegistry, ViewTaxonomy};

use config::CliConfig;

const EXIT_IO: u8 = 1;
const EXIT_RESOLUTION: u8 = 2;
const EXIT_CONTRACT: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "echoagent", version, about = "Guideline-driven echocardiography interpretation")]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true, env = "ECHOAGENT_CONFIG")]
    config: Option<PathBuf>,
    /// Knowledge index file; the bundled corpus is used when neither this nor the config names one.
    #[arg(long, global = true)]
    kb: Option<PathBuf>,
    /// Registry file overriding the builtin tools.
    #[arg(long, global = true)]
    registry: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for randomized fixture generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingest a corpus directory and write the knowledge index.
    BuildKb {
        /// Directory of .md/.txt documents (default: <fixtures>/corpus).
        corpus: Option<PathBuf>,
        /// Output index (default: --kb, then the config, then kb.json).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = echoagent_core::kb::ingest::DEFAULT_MAX_CHUNK_CHARS)]
        max_chunk_chars: usize,
    },
    /// Top-k primitives for a text query.
    QueryKb {
        text: String,
        #[arg(long)]
        anatomy: Option<AnatomyGroup>,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Write synthetic fixtures.
    GenFixtures {
        #[command(subcommand)]
        what: GenCommand,
    },
    /// Answer a question about one study (record directory or study directories).
    RunStudy {
        #[arg(required = true)]
        studies: Vec<PathBuf>,
        #[arg(long, short)]
        question: String,
        /// Multiple-choice options.
        #[arg(long, num_args = 2..)]
        options: Option<Vec<String>>,
        /// Trace file (default: <out>/trace.jsonl).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Verify graph invariants after every mutation.
        #[arg(long)]
        instrument: bool,
    },
    /// Run every record of a dataset and report metrics.
    Evaluate {
        /// Dataset root (default: <fixtures>/dataset).
        dataset: Option<PathBuf>,
        /// Report file; printed to stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Directory for per-record traces.
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Run records one at a time.
        #[arg(long)]
        sequential: bool,
    },
    /// Inspect or call registered tools.
    Tools {
        #[command(subcommand)]
        what: ToolsCommand,
    },
}

#[derive(Subcommand, Debug)]
enum GenCommand {
    /// The bundled guideline corpus.
    Corpus { dir: PathBuf },
    /// A2C/A4C masks of an analytic solid.
    Shape {
        dir: PathBuf,
        #[arg(long, default_value = "spheroid")]
        shape: Shape,
        #[arg(long, default_value_t = 80.0)]
        length: f64,
        #[arg(long, default_value_t = 25.0)]
        radius: f64,
        #[arg(long, default_value_t = 0.5)]
        spacing: f64,
        #[arg(long, default_value_t = 256)]
        size: usize,
    },
    /// The 12-record EF dataset, or the multiple-choice variant with --qa.
    Dataset {
        dir: PathBuf,
        #[arg(long)]
        qa: bool,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0.5)]
        spacing: f64,
    },
}

#[derive(Subcommand, Debug)]
enum ToolsCommand {
    List,
    /// Invoke one tool with a JSON object of inputs.
    Invoke {
        name: String,
        #[arg(long, default_value = "{}")]
        inputs: String,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn io(message: impl std::fmt::Display) -> Self {
        Failure { code: EXIT_IO, message: message.to_string() }
    }
}

impl From<HubError> for Failure {
    fn from(e: HubError) -> Self {
        let code = match e {
            HubError::Unresolvable { .. } | HubError::NoEntry(_) => EXIT_RESOLUTION,
            HubError::Planning(_) => EXIT_CONTRACT,
            _ => EXIT_IO,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<ToolError> for Failure {
    fn from(e: ToolError) -> Self {
        let code = match e {
            ToolError::Contract { .. } | ToolError::UnknownTool(_) | ToolError::Taxonomy { .. } => EXIT_CONTRACT,
            ToolError::Registration { .. } => EXIT_CONTRACT,
            _ => EXIT_IO,
        };
        Failure { code, message: e.to_string() }
    }
}

type CmdResult = Result<(), Failure>;

/// What run-study prints with --json.
#[derive(Debug, Serialize, Deserialize)]
struct RunSummary {
    answer: Option<String>,
    max_posterior: f64,
    hypotheses: Vec<String>,
    posterior: Vec<f64>,
    anatomy: AnatomyGroup,
    similarity: f64,
    ef_percent: Option<f64>,
    steps: usize,
    subgoal_steps: usize,
    flags: Vec<String>,
    warnings: Vec<String>,
    trace: PathBuf,
}

struct Ctx {
    cli_kb: Option<PathBuf>,
    cli_registry: Option<PathBuf>,
    json: bool,
    seed: Option<u64>,
    cfg: CliConfig,
}

impl Ctx {
    fn encoder(&self) -> Box<dyn Encoder> {
        match &self.cfg.backends.encoder_url {
            Some(url) => Box::new(HttpEncoder::new(url, self.cfg.backends.encoder_dim, self.cfg.http())),
            None => Box::new(HashedBowEncoder::default()),
        }
    }

    fn kb_path(&self) -> Option<PathBuf> {
        self.cli_kb.clone().or_else(|| self.cfg.paths.kb.clone())
    }

    fn kb(&self) -> Result<KnowledgeBase, Failure> {
        match self.kb_path() {
            Some(p) => load_index(&p).map_err(|e| Failure::io(format!("cannot load index {}: {e}", p.display()))),
            None => {
                tracing::info!("no index configured; using the bundled corpus");
                fixtures::fixture_kb().map_err(Failure::io)
            }
        }
    }

    fn registry(&self) -> Result<ToolRegistry, Failure> {
        let Some(p) = self.cli_registry.clone().or_else(|| self.cfg.paths.registry.clone()) else {
            return Ok(builtin_registry());
        };
        let text = std::fs::read_to_string(&p).map_err(|e| Failure::io(format!("{}: {e}", p.display())))?;
        let file: RegistryFile = serde_json::from_str(&text)
            .map_err(|e| Failure { code: EXIT_CONTRACT, message: format!("registry {}: {e}", p.display()) })?;
        Ok(registry_from_specs(&file.tools, &self.cfg.http())?)
    }

    fn taxonomy(&self) -> Result<ViewTaxonomy, Failure> {
        match &self.cfg.paths.taxonomy {
            Some(p) => ViewTaxonomy::load(p).map_err(Failure::io),
            None => Ok(ViewTaxonomy::default()),
        }
    }

    fn fixture_dir(&self, sub: &str) -> Result<PathBuf, Failure> {
        self.cfg
            .paths
            .fixtures
            .as_ref()
            .map(|f| f.join(sub))
            .ok_or_else(|| Failure::io(format!("no {sub} directory given and no fixtures path configured")))
    }

    fn out_dir(&self) -> PathBuf {
        self.cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn print_json<T: Serialize>(v: &T) -> CmdResult {
    let s = serde_json::to_string_pretty(v).map_err(Failure::io)?;
    println!("{s}");
    Ok(())
}

fn build_kb(ctx: &Ctx, corpus: Option<PathBuf>, out: Option<PathBuf>, max_chunk_chars: usize) -> CmdResult {
    let corpus = match corpus {
        Some(c) => c,
        None => ctx.fixture_dir("corpus")?,
    };
    let out = out.or_else(|| ctx.kb_path()).unwrap_or_else(|| PathBuf::from("kb.json"));
    let docs = read_corpus(&corpus).map_err(Failure::io)?;
    if docs.is_empty() {
        eprintln!("warning: no .md or .txt documents in {}", corpus.display());
    }
    let encoder = ctx.encoder();
    let remote = ctx.cfg.backends.summarizer_url.as_deref().map(|u| HttpSummarizer::new(u, ctx.cfg.http()));
    let summarizer: Option<&dyn Summarizer> = remote.as_ref().map(|s| s as &dyn Summarizer);
    let kb = build_knowledge_base(
        &docs,
        encoder.as_ref(),
        summarizer,
        &IngestConfig { max_chunk_chars },
        ctx.cfg.thresholds.k,
    )
    .map_err(Failure::io)?;
    save_index(&kb, &out).map_err(|e| Failure::io(format!("cannot write {}: {e}", out.display())))?;
    let counts: BTreeMap<String, usize> = AnatomyGroup::ALL
        .iter()
        .map(|g| (g.canonical_name().to_string(), kb.index().subset(*g).len()))
        .collect();
    if ctx.json {
        print_json(&serde_json::json!({ "out": out, "primitives": kb.len(), "counts": counts }))?;
    } else {
        for g in AnatomyGroup::ALL {
            println!("{}: {}", g.canonical_name(), counts[g.canonical_name()]);
        }
        eprintln!("wrote {} ({} primitives)", out.display(), kb.len());
    }
    Ok(())
}

fn query_kb(ctx: &Ctx, text: &str, anatomy: Option<AnatomyGroup>, k: usize) -> CmdResult {
    let kb = ctx.kb()?;
    let encoder = ctx.encoder();
    let r = kb.retrieve_topk(encoder.as_ref(), text, anatomy, k).map_err(Failure::io)?;
    if ctx.json {
        let hits: Vec<_> = r.hits.iter().map(|(id, s)| serde_json::json!({ "id": id, "score": s })).collect();
        return print_json(&serde_json::json!({ "hits": hits, "no_knowledge_for_anatomy": r.no_knowledge_for_anatomy }));
    }
    if r.no_knowledge_for_anatomy {
        eprintln!("warning: no knowledge for that anatomy");
    }
    for (id, score) in &r.hits {
        let first = kb.primitive(id).and_then(|p| p.text.lines().find(|l| !l.trim().is_empty())).unwrap_or("");
        println!("{score:.4}  {id}  {first}");
    }
    Ok(())
}

fn gen_fixtures(ctx: &Ctx, what: GenCommand) -> CmdResult {
    match what {
        GenCommand::Corpus { dir } => {
            fixtures::write_corpus(&dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
            println!("wrote {} documents to {}", fixtures::CORPUS.len(), dir.display());
        }
        GenCommand::Shape { dir, shape, length, radius, spacing, size } => {
            let spec = ShapeSpec { shape, length_mm: length, radius_mm: radius, spacing_mm: spacing, size };
            fixtures::write_shape_pair(&dir, &spec).map_err(Failure::io)?;
            println!("analytic volume: {:.3} mL", spec.analytic_volume_ml());
        }
        GenCommand::Dataset { dir, qa, size, spacing } => {
            let seed = ctx.seed.unwrap_or(DatasetSpec::default().seed);
            let recs = if qa {
                fixtures::generate_qa_dataset(&dir, seed)
            } else {
                fixtures::generate_dataset(&dir, &DatasetSpec { seed, size, spacing_mm: spacing, ..Default::default() })
            }
            .map_err(Failure::io)?;
            println!("wrote {} records to {}", recs.len(), dir.display());
        }
    }
    Ok(())
}

/// Record directories expand to their two studies; plain directories with
/// study subdirectories expand to those.
fn expand_studies(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for p in paths {
        if !p.is_dir() {
            return Err(Failure::io(format!("study directory {} does not exist", p.display())));
        }
        let record = p.join(RECORD_FILE);
        if record.is_file() {
            let text = std::fs::read_to_string(&record).map_err(|e| Failure::io(format!("{}: {e}", record.display())))?;
            let rec: RecordFile =
                serde_json::from_str(&text).map_err(|e| Failure::io(format!("{}: {e}", record.display())))?;
            out.push(p.join(rec.a2c));
            out.push(p.join(rec.a4c));
        } else if p.join(STUDY_SIDECAR).is_file() {
            out.push(p.clone());
        } else {
            let mut subs: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Failure::io(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|s| s.join(STUDY_SIDECAR).is_file())
                .collect();
            if subs.is_empty() {
                return Err(Failure::io(format!("{} holds no {STUDY_SIDECAR}", p.display())));
            }
            subs.sort();
            out.extend(subs);
        }
    }
    for s in &out {
        StudySidecar::load(s).map_err(Failure::io)?;
    }
    Ok(out)
}

fn run_study(
    ctx: &Ctx,
    studies: &[PathBuf],
    question: &str,
    options: Option<Vec<String>>,
    trace: Option<PathBuf>,
    instrument: bool,
) -> CmdResult {
    let studies = expand_studies(studies)?;
    let kb = ctx.kb()?;
    let encoder = ctx.encoder();
    let fabric = ToolFabric::new(Arc::new(ctx.registry()?), Arc::new(ctx.taxonomy()?));
    let mut query = DiagnosticQuery::new(question, studies);
    if let Some(o) = options {
        query = query.with_options(o);
    }
    let mut hub = Hub::new(&kb, encoder.as_ref(), &fabric, ctx.cfg.thresholds.clone()).instrumented(instrument);
    if let Some(url) = &ctx.cfg.backends.planner_url {
        hub = hub.with_subgoal_planner(url, ctx.cfg.http());
    }
    let c = hub.run(&query)?;
    let trace = trace.unwrap_or_else(|| ctx.out_dir().join("trace.jsonl"));
    if let Some(dir) = trace.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
    }
    c.write_trace(&trace).map_err(|e| Failure::io(format!("cannot write {}: {e}", trace.display())))?;
    let summary = RunSummary {
        answer: c.answer.clone(),
        max_posterior: c.max_posterior,
        hypotheses: c.hypotheses.clone(),
        posterior: c.posterior.clone(),
        anatomy: c.anatomy,
        similarity: c.similarity,
        ef_percent: c.ef_percent,
        steps: c.steps.len(),
        subgoal_steps: c.subgoal_steps,
        flags: c.flags.clone(),
        warnings: c.warnings.clone(),
        trace,
    };
    if ctx.json {
        return print_json(&summary);
    }
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    println!("answer: {}", summary.answer.as_deref().unwrap_or("(none)"));
    println!("max posterior: {:.4}", summary.max_posterior);
    if let Some(ef) = summary.ef_percent {
        println!("ef: {ef:.1}%");
    }
    if !summary.flags.is_empty() {
        println!("flags: {}", summary.flags.join(", "));
    }
    println!("trace: {}", summary.trace.display());
    Ok(())
}

fn fmt_rate(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.2}"))
}

fn evaluate(
    ctx: &Ctx,
    dataset: Option<PathBuf>,
    report: Option<PathBuf>,
    traces: Option<PathBuf>,
    sequential: bool,
) -> CmdResult {
    let root = match dataset {
        Some(d) => d,
        None => ctx.fixture_dir("dataset")?,
    };
    let ds = eval::load_dataset(&root).map_err(Failure::io)?;
    for w in &ds.warnings {
        eprintln!("warning: {w}");
    }
    let kb = ctx.kb()?;
    let encoder = ctx.encoder();
    let registry = Arc::new(ctx.registry()?);
    let taxonomy = Arc::new(ctx.taxonomy()?);
    let env = BenchEnv { kb: &kb, encoder: encoder.as_ref(), registry: &registry, taxonomy: &taxonomy };
    let cfg = BenchConfig { hub: ctx.cfg.thresholds.clone(), auroc_threshold: ctx.cfg.auroc_threshold, parallel: !sequential };
    let run = eval::run_benchmark(&ds, env, &cfg);
    if let Some(dir) = &traces {
        std::fs::create_dir_all(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
        for (id, t) in &run.traces {
            let p = dir.join(format!("{id}.jsonl"));
            std::fs::write(&p, t).map_err(|e| Failure::io(format!("cannot write {}: {e}", p.display())))?;
        }
    }
    let text = serde_json::to_string_pretty(&run.report).map_err(Failure::io)? + "\n";
    let r = &run.report;
    let mut summary = format!(
        "records: {} ({} ok, {} failed)\noverall acc: {}\n",
        r.dataset_size,
        r.successes,
        r.failures,
        fmt_rate(r.overall_acc)
    );
    for g in &r.per_grade {
        summary += &format!("{}: acc {} gmean {} (n={})\n", g.grade, fmt_rate(g.acc), fmt_rate(g.gmean), g.support);
    }
    for a in &r.auroc {
        summary += &format!("auroc@{}: {}\n", a.threshold, a.value.map_or("n/a".into(), |v| format!("{v:.4}")));
    }
    match report {
        Some(p) => {
            std::fs::write(&p, text).map_err(|e| Failure::io(format!("cannot write {}: {e}", p.display())))?;
            print!("{summary}");
            println!("report: {}", p.display());
        }
        None => {
            print!("{text}");
            eprint!("{summary}");
        }
    }
    Ok(())
}

fn tools(ctx: &Ctx, what: ToolsCommand) -> CmdResult {
    let registry = Arc::new(ctx.registry()?);
    match what {
        ToolsCommand::List => {
            let list: Vec<_> = registry.list().collect();
            if ctx.json {
                return print_json(&list);
            }
            for d in list {
                let anatomy = if d.applicable_anatomy.is_empty() {
                    "any".to_string()
                } else {
                    d.applicable_anatomy.iter().map(|a| a.canonical_name()).collect::<Vec<_>>().join(",")
                };
                println!("{:<24} {:<12} {:<18} {:<7} {}", d.name, d.layer, d.capability, format!("{:?}", d.backend).to_lowercase(), anatomy);
            }
        }
        ToolsCommand::Invoke { name, inputs } => {
            let inputs: serde_json::Value = serde_json::from_str(&inputs).map_err(|e| Failure::io(format!("--inputs: {e}")))?;
            let inputs = inputs.as_object().cloned().ok_or_else(|| Failure::io("--inputs must be a JSON object"))?;
            let fabric = ToolFabric::new(registry, Arc::new(ctx.taxonomy()?));
            let result = fabric.invoke(&name, &inputs);
            if ctx.json {
                print_json(&serde_json::json!({ "log": fabric.log() }))?;
            }
            let r = result?;
            print_json(&r)?;
        }
    }
    Ok(())
}

fn init_tracing(verbosity: &str) {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(verbosity));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

fn real_main(cli: Cli) -> CmdResult {
    let cfg = match &cli.config {
        Some(p) => CliConfig::load(p).map_err(Failure::io)?,
        None => CliConfig::default(),
    };
    init_tracing(&cfg.verbosity);
    let ctx = Ctx { cli_kb: cli.kb, cli_registry: cli.registry, json: cli.json, seed: cli.seed, cfg };
    match cli.command {
        Command::BuildKb { corpus, out, max_chunk_chars } => build_kb(&ctx, corpus, out, max_chunk_chars),
        Command::QueryKb { text, anatomy, k } => query_kb(&ctx, &text, anatomy, k),
        Command::GenFixtures { what } => gen_fixtures(&ctx, what),
        Command::RunStudy { studies, question, options, trace, instrument } => {
            run_study(&ctx, &studies, &question, options, trace, instrument)
        }
        Command::Evaluate { dataset, report, traces, sequential } => evaluate(&ctx, dataset, report, traces, sequential),
        Command::Tools { what } => tools(&ctx, what),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_IO } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match real_main(cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
