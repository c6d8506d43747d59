use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use evidence_rag::bm25::{Bm25Index, Bm25Params};
use evidence_rag::corpus::ingest_corpus;
use evidence_rag::eval::{evaluate, read_eval_set};
use evidence_rag::feedback::{
    generate_training_data, read_jsonl, train, train_on_features, write_jsonl, Counts, EntitySource, FeatureVector,
    FeedbackNet, GoldRecord, Hyper, LexicalScorer, RelevanceScorer, RemoteScorer, ReplayScorer, ScoreTranscript,
    TrainReport, TrainingExample,
};
use evidence_rag::llm::{ChatModel, LiveClient, ReplayClient, Transcript, TemplateSet};
use evidence_rag::pipeline::{run_question, Deps, Mode, PipelineConfig};

/// Iterative retrieval-augmented QA with gap-driven follow-up queries.
#[derive(Parser)]
#[command(name = "evrag", version)]
struct Cli {
    /// JSON file with per-subcommand defaults, e.g. {"ask": {"mode": "rfm"}}.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index from a JSONL corpus.
    Index(IndexArgs),
    /// Answer one question.
    Ask(AskArgs),
    /// Run modes over an evaluation set and write a report.
    Eval(EvalArgs),
    /// Build feedback-classifier training pairs from gold QA records.
    GenFeedbackData(GenArgs),
    /// Train the feedback classifier.
    TrainFeedback(TrainArgs),
}

/// Reported with exit code 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| usage(format!("--{flag} is required (flag or config file)")))
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, rename_all = "kebab-case")]
struct IndexArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
}

/// How the chat model and the relevance scorer are provided.
#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default, rename_all = "kebab-case")]
struct ModelArgs {
    /// Replay chat completions from a transcript; misses are errors unless --fallthrough.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// On transcript misses, call the live endpoint (LLM_ENDPOINT).
    #[arg(long, num_args = 0, default_missing_value = "true")]
    fallthrough: Option<bool>,
    /// Model name sent to the live endpoint.
    #[arg(long)]
    llm_model: Option<String>,
    /// Replay relevance scores; otherwise SCORER_ENDPOINT, otherwise lexical overlap.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Directory overriding the built-in prompt templates.
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(default, rename_all = "kebab-case")]
struct RunArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    /// Feedback net (required for rfm).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    few_shot: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    models: ModelArgs,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, rename_all = "kebab-case")]
struct AskArgs {
    #[arg(long)]
    question: Option<String>,
    /// none, vanilla, fixed or rfm.
    #[arg(long)]
    mode: Option<Mode>,
    /// Write the run as JSON here.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, rename_all = "kebab-case")]
struct EvalArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Comma-separated modes.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<Mode>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Questions run concurrently.
    #[arg(long)]
    parallel: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    run: RunArgs,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, rename_all = "kebab-case")]
struct GenArgs {
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// sufficient,insufficient,partial (default: one positive and one negative per record).
    #[arg(long)]
    counts: Option<String>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, rename_all = "kebab-case")]
struct TrainArgs {
    /// JSONL of {question, context, label[, entities]} or precomputed {s_f, g_f, label}.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Hidden layer widths, e.g. 16,8.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    tau: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    models: ModelArgs,
}

/// Explicit flags win over the config section for `name`.
fn with_config<T: Serialize + DeserializeOwned + Default>(flags: T, config: &Option<Value>, name: &str) -> Result<T> {
    let Some(section) = config.as_ref().and_then(|c| c.get(name)) else {
        return Ok(flags);
    };
    let mut merged = section.clone();
    let Value::Object(base) = &mut merged else {
        return Err(usage(format!("config section {name:?} must be an object")));
    };
    let Value::Object(known) = serde_json::to_value(T::default())? else {
        unreachable!("argument structs serialize to objects")
    };
    if let Some(k) = base.keys().find(|k| !known.contains_key(*k)) {
        return Err(usage(format!("config section {name:?}: unknown key {k:?}")));
    }
    if let Value::Object(explicit) = serde_json::to_value(&flags)? {
        for (k, v) in explicit {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    serde_json::from_value(merged).map_err(|e| usage(format!("config section {name:?}: {e}")))
}

fn load_config(path: &Option<PathBuf>) -> Result<Option<Value>> {
    let Some(path) = path else { return Ok(None) };
    let raw = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: Value = serde_json::from_str(&raw).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(usage(format!("{}: expected a JSON object", path.display())));
    }
    Ok(Some(value))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_index(a: IndexArgs) -> Result<()> {
    let corpus_path = required(a.corpus, "corpus")?;
    let out = required(a.out, "out")?;
    let defaults = Bm25Params::default();
    let params = Bm25Params {
        k1: a.k1.unwrap_or(defaults.k1),
        b: a.b.unwrap_or(defaults.b),
    };
    let corpus = ingest_corpus(&corpus_path)?;
    let index = Bm25Index::build(&corpus, params)?;
    index.save(&out)?;
    println!(
        "indexed {} documents (avg length {:.2} tokens)",
        index.doc_count(),
        index.avg_doc_length()
    );
    Ok(())
}

fn chat_model(m: &ModelArgs) -> Result<Arc<dyn ChatModel>> {
    let live = || -> Result<Arc<dyn ChatModel>> {
        let model = m.llm_model.clone().unwrap_or_else(|| "gpt-3.5-turbo".into());
        let client = LiveClient::from_env(model).map_err(|_| usage("no --transcript given and LLM_ENDPOINT is not set"))?;
        Ok(Arc::new(client))
    };
    match &m.transcript {
        Some(path) => {
            let transcript = Transcript::load(path).with_context(|| format!("loading transcript {}", path.display()))?;
            if m.fallthrough.unwrap_or(false) {
                Ok(Arc::new(ReplayClient::with_fallthrough(transcript, live()?)))
            } else {
                Ok(Arc::new(ReplayClient::strict(transcript)))
            }
        }
        None => live(),
    }
}

fn scorer(m: &ModelArgs) -> Result<Arc<dyn RelevanceScorer>> {
    if let Some(path) = &m.scores {
        let t = ScoreTranscript::load(path).with_context(|| format!("loading scores {}", path.display()))?;
        return Ok(Arc::new(ReplayScorer::new(t)));
    }
    if let Some(remote) = RemoteScorer::from_env() {
        return Ok(Arc::new(remote));
    }
    log::warn!("no --scores and SCORER_ENDPOINT unset; using lexical overlap as the semantic score");
    Ok(Arc::new(LexicalScorer))
}

fn templates(m: &ModelArgs) -> Result<TemplateSet> {
    match &m.templates {
        Some(dir) => Ok(TemplateSet::load_dir(dir)?),
        None => Ok(TemplateSet::default()),
    }
}

/// Everything a pipeline run borrows.
struct Loaded {
    index: Bm25Index,
    llm: Arc<dyn ChatModel>,
    scorer: Option<Arc<dyn RelevanceScorer>>,
    net: Option<FeedbackNet>,
    templates: TemplateSet,
}

impl Loaded {
    fn deps(&self) -> Deps<'_> {
        Deps {
            index: &self.index,
            curator: self.llm.as_ref(),
            answerer: self.llm.as_ref(),
            scorer: self.scorer.as_deref(),
            net: self.net.as_ref(),
            templates: &self.templates,
        }
    }
}

fn load_run(r: &RunArgs, modes: &[Mode]) -> Result<(Loaded, PipelineConfig)> {
    let rfm = modes.contains(&Mode::Rfm);
    if rfm && r.model.is_none() {
        return Err(usage("mode rfm needs --model"));
    }
    let defaults = PipelineConfig::default();
    let config = PipelineConfig {
        mode: modes.first().copied().unwrap_or(defaults.mode),
        max_iterations: r.max_iterations.unwrap_or(defaults.max_iterations),
        top_k: r.top_k.unwrap_or(defaults.top_k),
        theta: r.theta.unwrap_or(defaults.theta),
        tau: r.tau.or(defaults.tau),
        few_shot: r.few_shot.unwrap_or(defaults.few_shot),
    };
    config.validate().map_err(usage)?;
    let index_path = required(r.index.clone(), "index")?;
    let index = Bm25Index::load(&index_path).with_context(|| format!("loading index {}", index_path.display()))?;
    let net = match &r.model {
        Some(p) if rfm => Some(FeedbackNet::load(p).with_context(|| format!("loading model {}", p.display()))?),
        _ => None,
    };
    let loaded = Loaded {
        index,
        llm: chat_model(&r.models)?,
        scorer: if rfm { Some(scorer(&r.models)?) } else { None },
        net,
        templates: templates(&r.models)?,
    };
    Ok((loaded, config))
}

fn cmd_ask(a: AskArgs) -> Result<()> {
    let question = required(a.question, "question")?;
    let mode = a.mode.unwrap_or(Mode::Rfm);
    let (loaded, config) = load_run(&a.run, &[mode])?;
    match run_question(&question, loaded.deps(), &config) {
        Ok(result) => {
            if let Some(path) = &a.trace {
                write_file(path, &result.to_json())?;
            }
            eprintln!("r_step {}", result.r_step);
            println!("{}", result.extracted_answer);
            Ok(())
        }
        Err(e) => {
            match &a.trace {
                Some(path) => write_file(path, &e.partial_json())?,
                None => eprint!("{}", e.partial_json()),
            }
            Err(e.into())
        }
    }
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let dataset_path = required(a.dataset, "dataset")?;
    let out = required(a.out, "out")?;
    let modes = a.modes.unwrap_or_else(|| vec![Mode::Vanilla, Mode::Rfm]);
    if modes.is_empty() {
        return Err(usage("--modes must name at least one mode"));
    }
    let dataset = read_eval_set(&dataset_path)?;
    let (loaded, base) = load_run(&a.run, &modes)?;
    let configs: Vec<PipelineConfig> = modes
        .iter()
        .map(|&mode| PipelineConfig { mode, ..base.clone() })
        .collect();
    let evaluation = evaluate(&dataset, loaded.deps(), &configs, a.parallel.unwrap_or(1))?;
    write_file(&out.join("report.json"), &evaluation.report.to_json())?;
    write_file(&out.join("report.csv"), &evaluation.report.to_csv())?;
    for t in &evaluation.traces {
        let path = out.join("traces").join(t.mode.as_str()).join(format!("{}.json", file_stem(&t.id)));
        write_file(&path, &t.json)?;
    }
    print!("{}", evaluation.report.summary_table());
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let gold_path = required(a.gold, "gold")?;
    let out = required(a.out, "out")?;
    let counts: Option<Counts> = a.counts.as_deref().map(str::parse).transpose().map_err(usage)?;
    let gold: Vec<GoldRecord> = read_jsonl(&gold_path)?;
    let (examples, report) = generate_training_data(&gold, counts, a.seed.unwrap_or(0))?;
    write_jsonl(&out, &examples)?;
    println!(
        "wrote {} examples ({} sufficient, {} insufficient, {} partial; {:.1}% positive) from {} records",
        examples.len(),
        report.sufficient,
        report.insufficient,
        report.partial,
        100.0 * report.positive_rate,
        report.records_used
    );
    if report.skipped_no_support + report.skipped_no_distractors > 0 {
        eprintln!(
            "skipped {} records without supporting text and {} without distractors",
            report.skipped_no_support, report.skipped_no_distractors
        );
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TrainRow {
    Features { s_f: f64, g_f: f64, label: u8 },
    Example(TrainingExample),
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let data_path = required(a.data, "data")?;
    let out = required(a.out, "out")?;
    let d = Hyper::default();
    let hyper = Hyper {
        lr: a.lr.unwrap_or(d.lr),
        epochs: a.epochs.unwrap_or(d.epochs),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        seed: a.seed.unwrap_or(d.seed),
        val_fraction: a.val_fraction.unwrap_or(d.val_fraction),
    };
    let hidden = match a.hidden.as_deref() {
        None => evidence_rag::feedback::DEFAULT_HIDDEN,
        Some([h1, h2]) if *h1 > 0 && *h2 > 0 => (*h1, *h2),
        Some(_) => return Err(usage("--hidden takes two positive widths, e.g. 16,8")),
    };
    let mut net = FeedbackNet::seeded(hidden, hyper.seed);
    if let Some(tau) = a.tau {
        if !(0.0..=1.0).contains(&tau) {
            return Err(usage("--tau must lie in [0, 1]"));
        }
        net = net.with_tau(tau);
    }

    let rows: Vec<TrainRow> = read_jsonl(&data_path)?;
    if rows.is_empty() {
        bail!("{} has no rows", data_path.display());
    }
    let mut features = Vec::new();
    let mut examples = Vec::new();
    for row in rows {
        match row {
            TrainRow::Features { s_f, g_f, label } => features.push((FeatureVector { s_f, g_f }, label)),
            TrainRow::Example(e) => examples.push(e),
        }
    }
    if !features.is_empty() && !examples.is_empty() {
        bail!("{} mixes feature rows and text rows", data_path.display());
    }
    let (net, report) = if examples.is_empty() {
        let n_val = ((features.len() as f64) * hyper.val_fraction.clamp(0.0, 0.5)).round() as usize;
        let (val, tr) = features.split_at(n_val);
        train_on_features(net, tr, val, &hyper)?
    } else {
        let scorer = scorer(&a.models)?;
        let llm = if examples.iter().any(|e| e.entities.is_none()) {
            Some(chat_model(&a.models)?)
        } else {
            None
        };
        let templates = templates(&a.models)?;
        let source = match &llm {
            Some(llm) => EntitySource::Extract {
                llm: llm.as_ref(),
                templates: &templates,
            },
            None => EntitySource::Stored,
        };
        train(net, &examples, scorer.as_ref(), source, &hyper)?
    };
    net.save(&out)?;
    print_report(&report);
    Ok(())
}

fn print_report(r: &TrainReport) {
    let curve: Vec<String> = [0, r.epoch_losses.len() / 4, r.epoch_losses.len() / 2, 3 * r.epoch_losses.len() / 4]
        .into_iter()
        .filter_map(|i| r.epoch_losses.get(i).map(|l| format!("{l:.4}")))
        .collect();
    println!("trained on {} examples ({} positive), validated on {}", r.n_train, r.positives, r.n_val);
    println!("loss curve {} -> {:.4}", curve.join(" "), r.final_loss);
    println!("train accuracy {:.4}", r.train_accuracy);
    if let Some(v) = r.val_accuracy {
        println!("val accuracy {v:.4}");
    }
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli.config)?;
    match cli.command {
        Command::Index(a) => cmd_index(with_config(a, &config, "index")?),
        Command::Ask(a) => cmd_ask(with_config(a, &config, "ask")?),
        Command::Eval(a) => cmd_eval(with_config(a, &config, "eval")?),
        Command::GenFeedbackData(a) => cmd_gen(with_config(a, &config, "gen-feedback-data")?),
        Command::TrainFeedback(a) => cmd_train(with_config(a, &config, "train-feedback")?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut message = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !message.contains(&c) {
                    message = format!("{message}: {c}");
                }
            }
            eprintln!("error: {message}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
