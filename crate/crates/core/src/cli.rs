//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! validation error, 3 runtime failure.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::corpus::{corpus_stats, load_documents, save_documents, Document};
use crate::encoder::{ContextualStore, Vocab};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::kgraph::{build_graph, load_metadata, trend, CountMode, GraphOptions, KnowledgeGraph};
use crate::labels::RelationType;
use crate::metrics::EvalReport;
use crate::model::Model;
use crate::trainer::{
    check_config, check_document, gradient_check, loss_log_tsv, perturb_parameters, train, Checkpoint, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "sciextract", version, about = "Joint entity, relation and coreference extraction for scientific abstracts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint and a loss log.
    Train(TrainArgs),
    /// Predict entities, relations and clusters for a corpus.
    Predict(PredictArgs),
    /// Score predictions against gold annotations.
    Evaluate(EvaluateArgs),
    /// Build a knowledge graph from predictions.
    BuildKg(BuildKgArgs),
    /// Per-year share of task papers that use a term.
    Trend(TrendArgs),
    /// Corpus statistics.
    Stats(StatsArgs),
    /// Compare analytic and finite-difference gradients.
    GradientCheck(GradientCheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML configuration; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training corpus (JSON lines).
    #[arg(long)]
    pub train: PathBuf,
    /// Development corpus for checkpoint selection.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss log output path (tab-separated).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Precomputed contextual token vectors (JSON lines).
    #[arg(long)]
    pub contextual: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured step budget.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Configuration override `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint written by train.
    #[arg(long)]
    pub model: PathBuf,
    /// Documents to annotate (JSON lines); existing annotations are ignored.
    #[arg(long)]
    pub input: PathBuf,
    /// Predicted documents (JSON lines).
    #[arg(long)]
    pub output: PathBuf,
    /// Precomputed contextual token vectors (JSON lines).
    #[arg(long)]
    pub contextual: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Gold documents (JSON lines).
    #[arg(long)]
    pub gold: PathBuf,
    /// Predicted documents, matched to gold by doc_key.
    #[arg(long)]
    pub pred: PathBuf,
    /// Write the tab-separated report here as well as to standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CountModeArg {
    Mention,
    Document,
}

#[derive(Debug, Args)]
pub struct BuildKgArgs {
    /// Predicted documents (JSON lines).
    #[arg(long)]
    pub pred: PathBuf,
    /// Output directory for nodes.tsv, edges.tsv and graph.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Sidecar of `{"doc_key", "year", "venue"}` JSON lines.
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    /// Nodes need a frequency strictly greater than this.
    #[arg(long, default_value_t = 10)]
    pub min_count: usize,
    /// Count phrase frequency per mention or per document.
    #[arg(long, value_enum, default_value_t = CountModeArg::Mention)]
    pub count_mode: CountModeArg,
    /// Skip coreference-based canonicalization.
    #[arg(long)]
    pub no_coref: bool,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct TrendArgs {
    /// graph.json written by build-kg.
    #[arg(long)]
    pub graph: PathBuf,
    /// Method or other phrase whose usage is tracked.
    #[arg(long)]
    pub term: String,
    /// Task phrase defining the document population per year.
    #[arg(long)]
    pub task: String,
    /// Relation type linking term to task.
    #[arg(long, default_value = "Used-for")]
    pub relation: String,
    /// Metadata sidecar; defaults to the metadata stored in the graph.
    #[arg(long)]
    pub metadata: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Corpus (JSON lines).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GradientCheckArgs {
    /// Check on the first document of this corpus instead of a built-in one.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Seed for initialization and parameter perturbation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Finite-difference step, scaled by `max(1, |theta|)`.
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
    /// Fail when the maximum relative error reaches this value.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Configuration override `key=value` on the built-in tiny model.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Parse { .. } | Error::Validation(_) | Error::Io { .. } => 2,
        Error::Model(_) | Error::Diverged { .. } | Error::Checkpoint { .. } => 3,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Model(format!("cannot start worker pool: {e}")))
}

fn load_contextual(path: Option<&Path>) -> Result<Option<ContextualStore>> {
    path.map(ContextualStore::load).transpose()
}

fn print(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => run_train(a),
        Command::Predict(a) => run_predict(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::BuildKg(a) => run_build_kg(a),
        Command::Trend(a) => run_trend(a),
        Command::Stats(a) => run_stats(a),
        Command::GradientCheck(a) => run_gradient_check(a),
    }
}

fn run_train(a: TrainArgs) -> Result<()> {
    let base = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    let mut config = base.with_overrides(&a.overrides)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(steps) = a.max_steps {
        config.max_steps = steps;
    }
    config.checkpoint = Some(a.out.clone());
    let train_docs = load_documents(&a.train)?;
    let dev_docs = a.dev.as_deref().map(load_documents).transpose()?;
    let contextual = load_contextual(a.contextual.as_deref())?;
    let outcome = train(&train_docs, dev_docs.as_deref(), &config, contextual.as_ref())?;
    if let Some(path) = &a.log {
        write_atomic(path, loss_log_tsv(&outcome.log).as_bytes())?;
    }
    let last = outcome.log.last().map_or(0.0, |r| r.total);
    print(&format!(
        "steps\t{}\nfinal_loss\t{last:.6}\ncheckpoint_step\t{}\n",
        outcome.log.len(),
        outcome.checkpoint.step
    ));
    Ok(())
}

/// Predicts every document in order, using `workers` threads.
pub fn predict_parallel(
    model: &Model,
    docs: &[Document],
    contextual: Option<&ContextualStore>,
    workers: usize,
) -> Result<Vec<Document>> {
    use rayon::prelude::*;
    pool(workers)?.install(|| {
        docs.par_iter().map(|d| Ok(model.predict(d, contextual)?.into_document())).collect()
    })
}

fn run_predict(a: PredictArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.model)?;
    let docs = load_documents(&a.input)?;
    let contextual = load_contextual(a.contextual.as_deref())?;
    let pred = predict_parallel(&ck.model, &docs, contextual.as_ref(), a.workers)?;
    save_documents(&a.output, &pred)
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    let gold = load_documents(&a.gold)?;
    let pred = load_documents(&a.pred)?;
    let report = EvalReport::compute(&gold, &pred)?;
    let tsv = report.to_tsv();
    if let Some(p) = &a.output {
        write_atomic(p, tsv.as_bytes())?;
    }
    if let Some(p) = &a.json {
        write_atomic(p, serde_json::to_string_pretty(&report).expect("report serializes").as_bytes())?;
    }
    print(&tsv);
    Ok(())
}

fn run_build_kg(a: BuildKgArgs) -> Result<()> {
    let docs = load_documents(&a.pred)?;
    let options = GraphOptions {
        min_count: a.min_count,
        count_mode: match a.count_mode {
            CountModeArg::Mention => CountMode::Mention,
            CountModeArg::Document => CountMode::Document,
        },
        use_coref: !a.no_coref,
    };
    let mut graph = pool(a.workers)?.install(|| build_graph(&docs, options));
    if let Some(p) = &a.metadata {
        graph.metadata = load_metadata(p)?;
    }
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    write_atomic(&a.out_dir.join("nodes.tsv"), graph.nodes_tsv().as_bytes())?;
    write_atomic(&a.out_dir.join("edges.tsv"), graph.edges_tsv().as_bytes())?;
    write_atomic(&a.out_dir.join("graph.json"), graph.to_json().as_bytes())?;
    print(&format!(
        "nodes\t{}\nedges\t{}\nmarked_edges\t{}\n",
        graph.nodes.len(),
        graph.edges.len(),
        graph.marked_edges().count()
    ));
    Ok(())
}

fn run_trend(a: TrendArgs) -> Result<()> {
    let text = crate::io::read_to_string(&a.graph)?;
    let graph: KnowledgeGraph =
        serde_json::from_str(&text).map_err(|source| Error::Parse { path: a.graph.clone(), line: 1, source })?;
    let relation: RelationType = a.relation.parse()?;
    let metadata = match &a.metadata {
        Some(p) => load_metadata(p)?,
        None => graph.metadata.clone(),
    };
    let series = trend(&graph, &a.term, relation, &a.task, &metadata);
    let mut out = String::from("year\tratio\n");
    for (year, ratio) in series {
        out.push_str(&format!("{year}\t{ratio:.6}\n"));
    }
    print(&out);
    Ok(())
}

fn run_stats(a: StatsArgs) -> Result<()> {
    let docs = load_documents(&a.corpus)?;
    let s = corpus_stats(&docs);
    if s.empty {
        log::warn!("{}: corpus is empty", a.corpus.display());
    }
    if a.json {
        print(&format!("{}\n", serde_json::to_string_pretty(&s).expect("stats serialize")));
    } else {
        print(&format!(
            "documents\t{}\nentities\t{}\nrelations\t{}\nrelations_per_doc\t{:.1}\ncoref_links\t{}\nclusters\t{}\n",
            s.documents, s.entities, s.relations, s.relations_per_doc, s.coref_links, s.clusters
        ));
    }
    Ok(())
}

fn run_gradient_check(a: GradientCheckArgs) -> Result<()> {
    let config = check_config().with_overrides(&a.overrides)?;
    let doc = match &a.input {
        Some(p) => load_documents(p)?
            .into_iter()
            .next()
            .ok_or_else(|| crate::error::ValidationError::EmptyCorpus(p.display().to_string()))?,
        None => check_document(),
    };
    let mut model = Model::new(config.model_config(), Vocab::build([&doc]), a.seed)?;
    perturb_parameters(&mut model, 0.1, a.seed);
    let report = gradient_check(&model, &doc, &config.weights(), None, a.step)?;
    let worst = report.worst.as_ref().map_or("-".to_string(), |(n, k)| format!("{n}[{k}]"));
    print(&format!(
        "max_relative_error\t{:e}\nworst\t{worst}\nchecked\t{}\nskipped_kinks\t{}\nobjective\t{:.6}\n",
        report.max_relative_error, report.checked, report.skipped_kinks, report.objective
    ));
    if report.max_relative_error >= a.tolerance {
        return Err(Error::Model(format!(
            "gradient check failed: max relative error {:e} >= {:e}",
            report.max_relative_error, a.tolerance
        )));
    }
    Ok(())
}
