//! The `clarify` command line.
//!
//! Exit codes: 0 success, 1 generic failure, 2 configuration or usage error,
//! 3 a backend lacks a capability the command needs.

mod config;

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{load_config, BackendSpec, LoadedConfig, PrefSettings, RetrySettings, Roles, RunConfig};

use crate::dataset::lines::{read_records, read_single, write_records, LineError};
use crate::dataset::{load_queries, load_queries_lenient, split_counts, DatasetError, QueryRecord, QuerySchema};
use crate::engine::{greedy_direct_answer, in_pool, run_episodes, Decision, DirectStrategy, Episode, Mode};
use crate::error::QueryError;
use crate::gateway::GatewayRequest;
use crate::metrics::{
    bootstrap_compare, decision_accuracies, evaluate, random_decision_baseline, render_table, DecisionReport,
    EvalReport, MetricError, DEFAULT_RESAMPLES,
};
use crate::prefs::{label_query, LabelSummary, LabeledQuery, PrefError, PreferenceRecord, Ranker};
use crate::prompts::{parse_procot_decision, render_procot_prompt, template_versions, FewShotPool};
use crate::sft::{
    build_feasible_human, build_feasible_model, derive_rlhf_pool, flatten_and_stats, generate_sft_examples,
    DirectRow, FeasibleAnswerSet, DEFAULT_RLHF_DEV_RATIO, DEFAULT_TRAIN_RATIO,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CAPABILITY: i32 = 3;

pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const DECISION_REPORT_FILE: &str = "decision_report.json";
pub const GREEDY_FILE: &str = "greedy_answers.jsonl";
pub const RUN_META_FILE: &str = "run_meta.json";
pub const PREFERENCES_FILE: &str = "preferences.jsonl";
pub const CANDIDATES_FILE: &str = "candidates.jsonl";
pub const LABEL_SUMMARY_FILE: &str = "label_summary.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn failure(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_FAILURE,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn capability(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CAPABILITY,
            message: message.into(),
        }
    }
}

impl From<QueryError> for CliError {
    fn from(e: QueryError) -> Self {
        if e.is_capability() {
            Self::capability(e.to_string())
        } else {
            Self::failure(e.to_string())
        }
    }
}

impl From<PrefError> for CliError {
    fn from(e: PrefError) -> Self {
        match e {
            PrefError::RankerUnavailable { .. } => Self::capability(e.to_string()),
            PrefError::Query(q) => q.into(),
            other => Self::failure(other.to_string()),
        }
    }
}

impl From<LineError> for CliError {
    fn from(e: LineError) -> Self {
        Self::failure(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        Self::failure(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        Self::failure(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "clarify", version, about = "Simulate, evaluate and label clarifying-question dialogues")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a raw dataset into native query records.
    Prep(PrepArgs),
    /// Run the clarify-or-answer protocol and score it.
    Simulate(SimulateArgs),
    /// Score an existing episode file.
    Evaluate(EvaluateArgs),
    /// Build double-turn preference pairs.
    LabelPrefs(LabelArgs),
    /// Build feasible answer sets from annotations or few-shot sampling.
    GenFeasible(FeasibleArgs),
    /// Generate clarifying-question SFT data from feasible answer sets.
    GenSft(SftArgs),
    /// Paired bootstrap comparison of two runs.
    Compare(CompareArgs),
    /// Tabulate one or more runs.
    Report(ReportArgs),
    /// Remove SFT queries from a pool and split the rest for preference training.
    RlhfPool(RlhfArgs),
    /// Produce a per-query clarify-or-answer decision file.
    Decide(DecideArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config's worker count.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Override the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value = "native")]
    pub schema: QuerySchema,
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub schema: QuerySchema,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep going past malformed lines, reporting them on stderr.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub queries: QueryArgs,
    #[arg(long, default_value = "auto")]
    pub mode: Mode,
    /// Per-query forced decisions, overriding `--mode`.
    #[arg(long)]
    pub decisions: Option<PathBuf>,
    /// Sample this many direct answers and keep the k most frequent.
    #[arg(long)]
    pub direct_samples: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub queries: QueryArgs,
    #[arg(long)]
    pub episodes: PathBuf,
    /// Greedy direct answers; enables the decision report.
    #[arg(long)]
    pub greedy: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub queries: QueryArgs,
    #[arg(long)]
    pub ranker: Ranker,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeasibleSource {
    Human,
    Model,
}

#[derive(Debug, Args)]
pub struct FeasibleArgs {
    #[command(flatten)]
    pub queries: QueryArgs,
    #[arg(long, value_enum)]
    pub source: FeasibleSource,
    /// Required for `--source model`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Few-shot exemplar pool (native records); defaults to the queries.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SftArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub feasible: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TRAIN_RATIO)]
    pub train_ratio: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Run directory or eval report of the first system.
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
    pub bootstrap: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Json,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub runs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct RlhfArgs {
    #[command(flatten)]
    pub pool: QueryArgs,
    /// Native records already used for SFT.
    #[arg(long)]
    pub sft_queries: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RLHF_DEV_RATIO)]
    pub dev_ratio: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecideArgs {
    #[command(flatten)]
    pub queries: QueryArgs,
    /// Decider config; prompts its `decider` role.
    #[arg(long, conflicts_with = "random_pct")]
    pub config: Option<PathBuf>,
    /// Random baseline: this fraction of queries answered directly.
    #[arg(long, required_unless_present = "config")]
    pub random_pct: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// One line of a decision file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub query_id: String,
    pub decision: Decision,
}

/// One line of a greedy-answer file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GreedyAnswer {
    pub query_id: String,
    pub answer: String,
}

/// Provenance written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: String,
    pub version: String,
    pub config_digest: Option<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub template_versions: BTreeMap<String, String>,
    pub settings: serde_json::Value,
}

impl RunMeta {
    fn new(command: &str, loaded: Option<&LoadedConfig>, settings: serde_json::Value) -> Self {
        Self {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            config_digest: loaded.map(|l| l.digest.clone()),
            seed: loaded.map(|l| l.config.seed),
            workers: loaded.map(|l| l.config.workers),
            template_versions: template_versions()
                .into_iter()
                .map(|(k, v)| (k.to_owned(), v))
                .collect(),
            settings,
        }
    }
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .with_ansi(false)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Prep(a) => prep(a),
        Command::Simulate(a) => simulate(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::LabelPrefs(a) => label_prefs(a),
        Command::GenFeasible(a) => gen_feasible(a),
        Command::GenSft(a) => gen_sft(a),
        Command::Compare(a) => compare(a),
        Command::Report(a) => report(a),
        Command::RlhfPool(a) => rlhf_pool(a),
        Command::Decide(a) => decide(a),
    }
}

fn open_config(args: &ConfigArgs) -> Result<LoadedConfig, CliError> {
    open_config_path(&args.config, args.workers, args.seed)
}

fn open_config_path(path: &Path, workers: Option<usize>, seed: Option<u64>) -> Result<LoadedConfig, CliError> {
    let mut loaded = load_config(path)?;
    if let Some(w) = workers {
        loaded.config.workers = w;
    }
    if let Some(s) = seed {
        loaded.config.seed = s;
    }
    if loaded.config.workers == 0 {
        return Err(CliError::config("workers must be at least 1"));
    }
    Ok(loaded)
}

fn load(q: &QueryArgs) -> Result<Vec<QueryRecord>, CliError> {
    Ok(load_queries(&q.queries, q.schema)?)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::failure(format!("{}: {e}", dir.display())))
}

fn write_one<T: Serialize>(path: &Path, record: &T) -> Result<(), CliError> {
    write_records(path, std::slice::from_ref(record))?;
    Ok(())
}

/// Write to stdout; a closed pipe downstream is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json<T: Serialize>(value: &T) {
    emit(&format!("{}\n", serde_json::to_string_pretty(value).expect("serializable")));
}

fn prep(a: PrepArgs) -> Result<(), CliError> {
    let records = if a.lenient {
        let outcome = load_queries_lenient(&a.input, a.schema)?;
        for e in &outcome.errors {
            eprintln!("warning: {}: {e}", a.input.display());
        }
        outcome.records
    } else {
        load_queries(&a.input, a.schema)?
    };
    write_records(&a.out, &records)?;
    print_json(&split_counts(&records));
    Ok(())
}

fn read_decisions(path: &Path, queries: &[QueryRecord]) -> Result<HashMap<String, Decision>, CliError> {
    let records: Vec<DecisionRecord> = read_records(path)?;
    let known: std::collections::HashSet<&str> = queries.iter().map(|q| q.id.as_str()).collect();
    let mut out = HashMap::new();
    for r in records {
        if !known.contains(r.query_id.as_str()) {
            tracing::warn!(query = %r.query_id, "decision for unknown query ignored");
            continue;
        }
        out.insert(r.query_id, r.decision);
    }
    Ok(out)
}

fn greedy_answers(loaded: &LoadedConfig, gw: &crate::gateway::Gateway, engine: &crate::engine::EngineConfig, queries: &[QueryRecord]) -> Result<Vec<GreedyAnswer>, CliError> {
    let r = &loaded.config.roles;
    let backend = loaded.role("greedy", r.greedy.as_ref().or(r.assistant.as_ref()))?;
    let answers = in_pool(loaded.config.workers, || {
        queries
            .par_iter()
            .map(|q| {
                greedy_direct_answer(gw, engine, &backend, &q.question)
                    .map(|answer| GreedyAnswer {
                        query_id: q.id.clone(),
                        answer,
                    })
                    .map_err(|e| QueryError::new(&q.id, e))
            })
            .collect::<Vec<_>>()
    });
    Ok(answers.into_iter().collect::<Result<Vec<_>, _>>()?)
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let loaded = open_config(&a.config)?;
    let queries = load(&a.queries)?;
    let direct = match a.direct_samples {
        Some(0) => return Err(CliError::config("--direct-samples must be positive")),
        Some(n_samples) => DirectStrategy::Sampled { n_samples },
        None => DirectStrategy::Greedy,
    };
    let engine = loaded.engine_config(a.mode, direct)?;
    let gw = loaded.build_gateway()?;
    let decisions = a.decisions.as_deref().map(|p| read_decisions(p, &queries)).transpose()?;

    let episodes = run_episodes(&gw, &engine, &queries, decisions.as_ref(), loaded.config.workers)?;
    let eval = evaluate(&episodes, &queries)?;
    let greedy = greedy_answers(&loaded, &gw, &engine, &queries)?;
    let greedy_map: HashMap<String, String> = greedy.iter().map(|g| (g.query_id.clone(), g.answer.clone())).collect();
    let decision = decision_accuracies(&episodes, &queries, &greedy_map)?;

    create_dir(&a.out)?;
    write_records(&a.out.join(EPISODES_FILE), &episodes)?;
    write_records(&a.out.join(GREEDY_FILE), &greedy)?;
    write_one(&a.out.join(EVAL_REPORT_FILE), &eval)?;
    write_one(&a.out.join(DECISION_REPORT_FILE), &decision)?;
    let settings = serde_json::json!({
        "engine": engine,
        "queries": a.queries.queries,
        "decisions": a.decisions,
    });
    write_one(&a.out.join(RUN_META_FILE), &RunMeta::new("simulate", Some(&loaded), settings))?;
    emit(&render_table(&[(run_name(&a.out), eval, Some(decision))]));
    Ok(())
}

fn run_name(dir: &Path) -> String {
    dir.file_name()
        .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<(), CliError> {
    let queries = load(&a.queries)?;
    let episodes: Vec<Episode> = read_records(&a.episodes)?;
    let eval = evaluate(&episodes, &queries)?;
    let decision = match &a.greedy {
        Some(path) => {
            let greedy: Vec<GreedyAnswer> = read_records(path)?;
            let map = greedy.into_iter().map(|g| (g.query_id, g.answer)).collect();
            Some(decision_accuracies(&episodes, &queries, &map)?)
        }
        None => None,
    };
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_one(&dir.join(EVAL_REPORT_FILE), &eval)?;
        if let Some(d) = &decision {
            write_one(&dir.join(DECISION_REPORT_FILE), d)?;
        }
    }
    emit(&render_table(&[(a.name, eval, decision)]));
    Ok(())
}

fn label_prefs(a: LabelArgs) -> Result<(), CliError> {
    let loaded = open_config(&a.config)?;
    let queries = load(&a.queries)?;
    let cfg = loaded.pref_config()?;
    let gw = loaded.build_gateway()?;
    cfg.check(&gw, a.ranker)?;

    let results = in_pool(loaded.config.workers, || {
        queries
            .par_iter()
            .map(|q| label_query(&gw, &cfg, q, a.ranker))
            .collect::<Vec<_>>()
    })
    .into_iter()
    .collect::<Result<Vec<LabeledQuery>, _>>()?;
    let pairs: Vec<PreferenceRecord> = results.iter().flat_map(|r| r.pairs.iter().cloned()).collect();
    let summary = LabelSummary::from_results(a.ranker, &results);

    create_dir(&a.out)?;
    write_records(&a.out.join(PREFERENCES_FILE), &pairs)?;
    write_records(&a.out.join(CANDIDATES_FILE), &results)?;
    write_one(&a.out.join(LABEL_SUMMARY_FILE), &summary)?;
    let settings = serde_json::json!({"prefs": cfg, "ranker": a.ranker, "queries": a.queries.queries});
    write_one(&a.out.join(RUN_META_FILE), &RunMeta::new("label-prefs", Some(&loaded), settings))?;
    print_json(&summary);
    Ok(())
}

#[derive(Debug, Serialize)]
struct FeasibleSummary {
    sets: usize,
    multi_answer: usize,
    gold_overlap: usize,
}

fn gen_feasible(a: FeasibleArgs) -> Result<(), CliError> {
    let queries = load(&a.queries)?;
    let (sets, loaded) = match a.source {
        FeasibleSource::Human => (queries.iter().map(build_feasible_human).collect::<Vec<_>>(), None),
        FeasibleSource::Model => {
            let path = a
                .config
                .as_deref()
                .ok_or_else(|| CliError::config("--source model requires --config"))?;
            let loaded = open_config_path(path, a.workers, a.seed)?;
            let base = loaded.role("base", loaded.config.roles.base.as_ref())?;
            let gw = loaded.build_gateway()?;
            let pool = match &a.pool {
                Some(p) => FewShotPool::from_queries(&load_queries(p, QuerySchema::Native)?),
                None => FewShotPool::from_queries(&queries),
            };
            let mut fcfg = loaded.config.feasible;
            fcfg.seed = loaded.config.seed;
            let sets = in_pool(loaded.config.workers, || {
                queries
                    .par_iter()
                    .map(|q| build_feasible_model(&gw, q, &base, &pool, &fcfg))
                    .collect::<Vec<_>>()
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
            (sets, Some(loaded))
        }
    };
    write_records(&a.out, &sets)?;
    if let Some(loaded) = &loaded {
        let meta_path = a.out.with_extension("meta.json");
        let settings = serde_json::json!({"feasible": loaded.config.feasible, "queries": a.queries.queries});
        write_one(&meta_path, &RunMeta::new("gen-feasible", Some(loaded), settings))?;
    }
    print_json(&FeasibleSummary {
        sets: sets.len(),
        multi_answer: sets.iter().filter(|s| s.answers.len() > 1).count(),
        gold_overlap: sets.iter().filter(|s| s.gold_overlap).count(),
    });
    Ok(())
}

fn gen_sft(a: SftArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&a.train_ratio) {
        return Err(CliError::config("--train-ratio must lie in [0, 1]"));
    }
    let loaded = open_config(&a.config)?;
    let oracle = loaded.role("oracle", loaded.config.roles.oracle.as_ref())?;
    let gw = loaded.build_gateway()?;
    let sets: Vec<FeasibleAnswerSet> = read_records(&a.feasible)?;
    let run = in_pool(loaded.config.workers, || generate_sft_examples(&gw, &sets, &oracle))?;
    let (rows, stats) = flatten_and_stats(&run.examples, a.train_ratio);
    let direct: Vec<DirectRow> = rows.iter().map(DirectRow::from).collect();

    create_dir(&a.out)?;
    write_records(&a.out.join("sft_nested.jsonl"), &run.examples)?;
    write_records(&a.out.join("sft_flat.jsonl"), &rows)?;
    write_records(&a.out.join("sft_direct.jsonl"), &direct)?;
    write_records(&a.out.join("sft_skipped.jsonl"), &run.skipped)?;
    write_one(&a.out.join("sft_stats.json"), &stats)?;
    let settings = serde_json::json!({"train_ratio": a.train_ratio, "feasible": a.feasible, "oracle": oracle});
    write_one(&a.out.join(RUN_META_FILE), &RunMeta::new("gen-sft", Some(&loaded), settings))?;
    print_json(&stats);
    Ok(())
}

fn report_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(EVAL_REPORT_FILE)
    } else {
        p.to_owned()
    }
}

fn compare(a: CompareArgs) -> Result<(), CliError> {
    if a.bootstrap == 0 {
        return Err(CliError::config("--bootstrap must be positive"));
    }
    let ra: EvalReport = read_single(&report_path(&a.a))?;
    let rb: EvalReport = read_single(&report_path(&a.b))?;
    let result = bootstrap_compare(&ra.per_query_f1, &rb.per_query_f1, a.bootstrap, a.seed)?;
    if let Some(out) = &a.out {
        write_one(out, &result)?;
    }
    print_json(&result);
    Ok(())
}

#[derive(Debug, Serialize)]
struct ReportRow {
    name: String,
    eval: EvalReport,
    decision: Option<DecisionReport>,
}

fn report(a: ReportArgs) -> Result<(), CliError> {
    let mut rows = Vec::with_capacity(a.runs.len());
    for dir in &a.runs {
        let eval: EvalReport = read_single(&dir.join(EVAL_REPORT_FILE))?;
        let dpath = dir.join(DECISION_REPORT_FILE);
        let decision = if dpath.exists() {
            Some(read_single::<DecisionReport>(&dpath)?)
        } else {
            None
        };
        rows.push(ReportRow {
            name: run_name(dir),
            eval,
            decision,
        });
    }
    match a.format {
        ReportFormat::Json => print_json(&rows),
        ReportFormat::Table => {
            let table: Vec<_> = rows.into_iter().map(|r| (r.name, r.eval, r.decision)).collect();
            emit(&render_table(&table));
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct RlhfSummary {
    train: usize,
    dev: usize,
    excluded: usize,
}

fn rlhf_pool(a: RlhfArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&a.dev_ratio) {
        return Err(CliError::config("--dev-ratio must lie in [0, 1]"));
    }
    let pool = load(&a.pool)?;
    let used = load_queries(&a.sft_queries, QuerySchema::Native)?;
    let out = derive_rlhf_pool(&pool, &used, a.dev_ratio);
    create_dir(&a.out)?;
    write_records(&a.out.join("rlhf_train.jsonl"), &out.train)?;
    write_records(&a.out.join("rlhf_dev.jsonl"), &out.dev)?;
    print_json(&RlhfSummary {
        train: out.train.len(),
        dev: out.dev.len(),
        excluded: out.excluded,
    });
    Ok(())
}

fn decide(a: DecideArgs) -> Result<(), CliError> {
    let queries = load(&a.queries)?;
    let records: Vec<DecisionRecord> = match (&a.config, a.random_pct) {
        (None, Some(pct)) => {
            if !(0.0..=1.0).contains(&pct) {
                return Err(CliError::config("--random-pct must lie in [0, 1]"));
            }
            let ids: Vec<&str> = queries.iter().map(|q| q.id.as_str()).collect();
            let chosen = random_decision_baseline(&ids, pct, a.seed);
            queries
                .iter()
                .map(|q| DecisionRecord {
                    query_id: q.id.clone(),
                    decision: chosen[&q.id],
                })
                .collect()
        }
        (Some(path), None) => {
            let loaded = open_config_path(path, a.workers, None)?;
            let decider = loaded.role("decider", loaded.config.roles.decider.as_ref())?;
            let gw = loaded.build_gateway()?;
            let max_tokens = loaded.config.max_tokens;
            let seed = loaded.config.backend_seed;
            let raw = in_pool(loaded.config.workers, || {
                queries
                    .par_iter()
                    .map(|q| {
                        let req = GatewayRequest::new(
                            decider.as_str(),
                            vec![crate::gateway::Message::user(render_procot_prompt(&q.question))],
                        )
                        .max_tokens(max_tokens)
                        .seed(seed);
                        gw.complete(&req).map(|c| c.text).map_err(|e| QueryError::new(&q.id, e))
                    })
                    .collect::<Vec<_>>()
            });
            let mut out = Vec::with_capacity(queries.len());
            for (q, text) in queries.iter().zip(raw) {
                match parse_procot_decision(&text?) {
                    Ok(decision) => out.push(DecisionRecord {
                        query_id: q.id.clone(),
                        decision,
                    }),
                    Err(e) => tracing::warn!(query = %q.id, error = %e, "no decision parsed; query left to the run mode"),
                }
            }
            out
        }
        _ => return Err(CliError::config("pass exactly one of --config or --random-pct")),
    };
    write_records(&a.out, &records)?;
    let direct = records.iter().filter(|r| r.decision == Decision::Direct).count();
    print_json(&serde_json::json!({"decisions": records.len(), "direct": direct}));
    Ok(())
}
